#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "goalfactor/common.hpp"

namespace goalfactor {

struct CartOptions {
  std::size_t max_depth = 20;
  std::size_t min_samples_leaf = 2;
};

/// Classification tree grown greedily on Gini impurity. Impure nodes split
/// even at zero gain. Thresholds sit at midpoints between consecutive distinct
/// feature values; among equally good splits the lowest feature index, then
/// the lowest threshold, wins. Leaves
/// predict their majority class, ties to the smallest class index.
class CartClassifier {
 public:
  explicit CartClassifier(CartOptions opt = {}) : opt_(opt) {}

  void fit(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y, std::size_t classes) {
    require(!x.empty() && x.size() == y.size(), "cart: need one label per sample");
    require(classes >= 1, "cart: need at least one class");
    classes_ = classes;
    features_ = x[0].size();
    for (const auto& row : x) require(row.size() == features_, "cart: ragged feature rows");
    for (auto label : y) require(label < classes, "cart: label out of range");
    nodes_.clear();
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    grow(x, y, idx, 0);
  }

  std::size_t predict(const std::vector<double>& row) const {
    require(!nodes_.empty(), "cart: predict before fit");
    std::size_t n = 0;
    while (!nodes_[n].leaf) n = row[nodes_[n].feature] <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
    return nodes_[n].label;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    bool leaf = true;
    std::size_t feature = 0;
    double threshold = 0.0;
    std::size_t left = 0, right = 0;
    std::size_t label = 0;
  };

  static double gini(const std::vector<std::size_t>& counts, std::size_t total) {
    if (total == 0) return 0.0;
    double sum = 0.0;
    for (auto c : counts) {
      const double p = static_cast<double>(c) / static_cast<double>(total);
      sum += p * p;
    }
    return 1.0 - sum;
  }

  std::size_t grow(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                   std::vector<std::size_t>& idx, std::size_t depth) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    std::vector<std::size_t> counts(classes_, 0);
    for (auto i : idx) ++counts[y[i]];
    nodes_[id].label = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());

    const std::size_t n = idx.size();
    const bool pure = counts[nodes_[id].label] == n;
    if (pure || depth >= opt_.max_depth || n < 2 * opt_.min_samples_leaf) return id;

    const double parent = gini(counts, n);
    double best_gain = 0.0;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    bool found = false;

    std::vector<std::size_t> order(idx);
    std::vector<std::size_t> left(classes_), right(classes_);
    for (std::size_t f = 0; f < features_; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      std::fill(left.begin(), left.end(), 0);
      right = counts;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        ++left[y[order[k]]];
        --right[y[order[k]]];
        const double v = x[order[k]][f];
        const double next = x[order[k + 1]][f];
        if (v == next) continue;
        const std::size_t nl = k + 1, nr = n - nl;
        if (nl < opt_.min_samples_leaf || nr < opt_.min_samples_leaf) continue;
        const double child = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                             static_cast<double>(n);
        const double gain = parent - child;
        if (!found || gain > best_gain + 1e-12) {
          best_gain = gain;
          best_feature = f;
          best_threshold = v + (next - v) / 2.0;
          found = true;
        }
      }
    }
    if (!found || best_gain < -1e-12) return id;

    std::vector<std::size_t> li, ri;
    for (auto i : idx) (x[i][best_feature] <= best_threshold ? li : ri).push_back(i);
    nodes_[id].leaf = false;
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    const std::size_t l = grow(x, y, li, depth + 1);
    const std::size_t r = grow(x, y, ri, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  CartOptions opt_;
  std::size_t classes_ = 0;
  std::size_t features_ = 0;
  std::vector<Node> nodes_;
};

}  // namespace goalfactor
