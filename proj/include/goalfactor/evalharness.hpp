#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "goalfactor/cart.hpp"
#include "goalfactor/common.hpp"

namespace goalfactor {

struct LabeledRepresentation {
  std::string doc_id;
  std::vector<double> vector;
  std::vector<std::string> gold_items;
  std::map<std::string, std::string> labels;
};

/// Metrics are percentages in [0, 100].
struct EvalResult {
  std::string task;
  std::map<std::string, double> metrics;
  json config = json::object();

  json to_json() const { return json{{"task", task}, {"metrics", metrics}, {"config", config}}; }
};

enum class Similarity { kCosine, kInnerProduct };

inline const char* to_string(Similarity s) { return s == Similarity::kCosine ? "cosine" : "inner_product"; }

namespace detail {

inline void check_representations(const std::vector<LabeledRepresentation>& reps, std::size_t& dim, const char* what) {
  for (const auto& r : reps) {
    if (dim == 0) dim = r.vector.size();
    if (r.vector.size() != dim) fail(ErrorCode::kInvalidArgument, std::string(what) + ": ragged representation sizes");
    for (double v : r.vector) {
      if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, std::string(what) + ": non-finite representation");
    }
  }
}

/// Precomputed similarity against a fixed train set.
class NeighborIndex {
 public:
  NeighborIndex(const std::vector<LabeledRepresentation>& train, Similarity sim) : train_(train), sim_(sim) {
    norms_.reserve(train.size());
    for (const auto& r : train) norms_.push_back(norm(r.vector));
    if (sim_ == Similarity::kCosine &&
        std::any_of(norms_.begin(), norms_.end(), [](double n) { return n == 0.0; })) {
      log_warn("zero train vector under cosine similarity; treated as similarity 0");
    }
  }

  double similarity(const std::vector<double>& q, double q_norm, std::size_t i) const {
    const auto& v = train_[i].vector;
    double dot = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) dot += q[k] * v[k];
    if (sim_ == Similarity::kInnerProduct) return dot;
    if (q_norm == 0.0 || norms_[i] == 0.0) return 0.0;
    return dot / (q_norm * norms_[i]);
  }

  /// Indices of the k most similar train points; ties broken by doc_id.
  std::vector<std::size_t> nearest(const std::vector<double>& q, std::size_t k) const {
    const double qn = norm(q);
    std::vector<std::pair<double, std::size_t>> scored(train_.size());
    for (std::size_t i = 0; i < train_.size(); ++i) scored[i] = {similarity(q, qn, i), i};
    k = std::min(k, scored.size());
    auto before = [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : train_[a.second].doc_id < train_[b.second].doc_id;
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), before);
    std::vector<std::size_t> out(k);
    for (std::size_t t = 0; t < k; ++t) out[t] = scored[t].second;
    return out;
  }

  static double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }

 private:
  const std::vector<LabeledRepresentation>& train_;
  Similarity sim_;
  std::vector<double> norms_;
};

/// Items ranked by frequency, ties by first occurrence in `lists` order.
inline std::vector<std::string> rank_by_frequency(const std::vector<const std::vector<std::string>*>& lists) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first seen
  std::size_t seen = 0;
  for (const auto* list : lists) {
    for (const auto& item : *list) {
      auto [it, inserted] = stats.emplace(item, std::pair{std::size_t{0}, seen});
      ++it->second.first;
      ++seen;
    }
  }
  std::vector<std::string> items;
  items.reserve(stats.size());
  for (const auto& [item, s] : stats) items.push_back(item);
  std::sort(items.begin(), items.end(), [&](const std::string& a, const std::string& b) {
    const auto& sa = stats.at(a);
    const auto& sb = stats.at(b);
    return sa.first != sb.first ? sa.first > sb.first : sa.second < sb.second;
  });
  return items;
}

inline bool any_in_top_k(const std::vector<std::string>& gold, const std::vector<std::string>& ranked, std::size_t k) {
  const std::size_t lim = std::min(k, ranked.size());
  for (std::size_t t = 0; t < lim; ++t) {
    if (std::find(gold.begin(), gold.end(), ranked[t]) != gold.end()) return true;
  }
  return false;
}

inline std::string hit_name(std::size_t k) { return "hit@" + std::to_string(k); }

}  // namespace detail

/// Semantic-neighbourhood recommendation: pool the gold items of the
/// n_neighbors most similar train points, rank them by frequency, and count
/// a hit when any test gold item is in the top k.
inline EvalResult hit_at_k_recommendation(const std::vector<LabeledRepresentation>& train,
                                          const std::vector<LabeledRepresentation>& test, std::size_t n_neighbors = 20,
                                          const std::vector<std::size_t>& ks = {1, 5, 20},
                                          Similarity sim = Similarity::kCosine, std::size_t threads = 1) {
  require(!train.empty(), "hit@k: empty train set");
  require(!test.empty(), "hit@k: empty test set");
  require(n_neighbors >= 1, "hit@k: n_neighbors must be positive");
  require(!ks.empty(), "hit@k: need at least one k");
  std::size_t dim = 0;
  detail::check_representations(train, dim, "hit@k");
  detail::check_representations(test, dim, "hit@k");
  for (const auto& t : test) require(!t.gold_items.empty(), "hit@k: test point '" + t.doc_id + "' has no gold item");

  const detail::NeighborIndex index(train, sim);
  std::vector<std::vector<char>> hits(test.size(), std::vector<char>(ks.size(), 0));
  parallel_for(test.size(), threads, [&](std::size_t i) {
    std::vector<const std::vector<std::string>*> lists;
    for (auto n : index.nearest(test[i].vector, n_neighbors)) lists.push_back(&train[n].gold_items);
    const auto ranked = detail::rank_by_frequency(lists);
    for (std::size_t q = 0; q < ks.size(); ++q) hits[i][q] = detail::any_in_top_k(test[i].gold_items, ranked, ks[q]);
  });

  EvalResult out;
  out.task = "rec";
  for (std::size_t q = 0; q < ks.size(); ++q) {
    std::size_t count = 0;
    for (const auto& h : hits) count += h[q] != 0;
    out.metrics[detail::hit_name(ks[q])] = 100.0 * static_cast<double>(count) / static_cast<double>(test.size());
  }
  out.config = {{"n_neighbors", n_neighbors}, {"ks", ks}, {"similarity", to_string(sim)}};
  return out;
}

/// 1-NN next-action prediction: correct when the nearest train point's
/// action equals the test action exactly.
inline EvalResult next_action_accuracy(const std::vector<LabeledRepresentation>& train,
                                       const std::vector<LabeledRepresentation>& test,
                                       Similarity sim = Similarity::kCosine, std::size_t threads = 1) {
  require(!train.empty(), "next_action: empty train set");
  require(!test.empty(), "next_action: empty test set");
  std::size_t dim = 0;
  detail::check_representations(train, dim, "next_action");
  detail::check_representations(test, dim, "next_action");
  for (const auto* set : {&train, &test}) {
    for (const auto& r : *set) {
      require(r.gold_items.size() == 1, "next_action: point '" + r.doc_id + "' must carry exactly one action");
    }
  }
  const detail::NeighborIndex index(train, sim);
  std::vector<char> correct(test.size(), 0);
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto nn = index.nearest(test[i].vector, 1);
    correct[i] = train[nn[0]].gold_items[0] == test[i].gold_items[0];
  });
  EvalResult out;
  out.task = "action";
  const auto count = static_cast<double>(std::count(correct.begin(), correct.end(), 1));
  out.metrics["accuracy"] = 100.0 * count / static_cast<double>(test.size());
  out.config = {{"similarity", to_string(sim)}};
  return out;
}

/// Mean of per-class recalls over the classes present in `truth`, in percent.
inline double balanced_accuracy(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                                std::size_t classes) {
  require(truth.size() == pred.size() && !truth.empty(), "balanced_accuracy: size mismatch");
  std::vector<std::size_t> total(classes, 0), hit(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++total[truth[i]];
    hit[truth[i]] += truth[i] == pred[i];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!total[c]) continue;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return 100.0 * sum / static_cast<double>(present);
}

/// Stratified k-fold decision-tree probe reporting mean class-balanced
/// accuracy. Points without the label scheme are ignored; classes with fewer
/// than `folds` members are dropped with a warning.
inline EvalResult decision_tree_probe(const std::vector<LabeledRepresentation>& reps, const std::string& label_scheme,
                                      std::size_t folds = 5, std::uint64_t seed = 17, CartOptions cart = {},
                                      std::size_t threads = 1) {
  require(folds >= 2, "probe: need at least 2 folds");
  std::size_t dim = 0;
  detail::check_representations(reps, dim, "probe");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    auto it = reps[i].labels.find(label_scheme);
    if (it != reps[i].labels.end()) by_class[it->second].push_back(i);
  }
  std::vector<std::string> dropped;
  for (auto it = by_class.begin(); it != by_class.end();) {
    if (it->second.size() < folds) {
      dropped.push_back(it->first);
      it = by_class.erase(it);
    } else {
      ++it;
    }
  }
  if (!dropped.empty()) {
    log_warn("probe: dropped classes with fewer instances than folds", {{"classes", dropped}, {"folds", folds}});
  }
  if (by_class.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "probe: label scheme '" + label_scheme + "' needs at least 2 classes with >= " +
                                          std::to_string(folds) + " instances each");
  }

  std::vector<std::size_t> sample, label, fold;
  std::mt19937_64 rng(seed);
  std::size_t offset = 0, cls = 0;
  for (auto& [name, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t t = 0; t < members.size(); ++t) {
      sample.push_back(members[t]);
      label.push_back(cls);
      fold.push_back((offset + t) % folds);
    }
    offset += members.size();
    ++cls;
  }
  const std::size_t classes = by_class.size();

  std::vector<double> fold_scores(folds, 0.0);
  parallel_for(folds, threads, [&](std::size_t f) {
    std::vector<std::vector<double>> x_train;
    std::vector<std::size_t> y_train, y_test, y_pred;
    for (std::size_t s = 0; s < sample.size(); ++s) {
      if (fold[s] == f) continue;
      x_train.push_back(reps[sample[s]].vector);
      y_train.push_back(label[s]);
    }
    CartClassifier tree(cart);
    tree.fit(x_train, y_train, classes);
    for (std::size_t s = 0; s < sample.size(); ++s) {
      if (fold[s] != f) continue;
      y_test.push_back(label[s]);
      y_pred.push_back(tree.predict(reps[sample[s]].vector));
    }
    fold_scores[f] = balanced_accuracy(y_test, y_pred, classes);
  });

  EvalResult out;
  out.task = "probe";
  out.metrics["balanced_accuracy"] =
      std::accumulate(fold_scores.begin(), fold_scores.end(), 0.0) / static_cast<double>(folds);
  out.config = {{"label_scheme", label_scheme}, {"folds", folds},          {"seed", seed},
                {"max_depth", cart.max_depth},  {"min_samples_leaf", cart.min_samples_leaf},
                {"criterion", "gini"},          {"classes", classes},      {"fold_scores", fold_scores}};
  return out;
}

enum class EvalTask { kRecommendation, kNextAction, kProbe };

/// Always predicts the most popular train outcome; for Hit@k the k most
/// popular train items.
inline EvalResult majority_baseline(const std::vector<LabeledRepresentation>& train,
                                    const std::vector<LabeledRepresentation>& test, EvalTask task,
                                    const std::vector<std::size_t>& ks = {1, 5, 20},
                                    const std::string& label_scheme = "") {
  require(!test.empty(), "majority: empty test set");
  EvalResult out;
  if (task == EvalTask::kProbe) {
    std::vector<const std::vector<std::string>*> lists;
    std::vector<std::vector<std::string>> labels;
    labels.reserve(train.size());
    for (const auto& r : train) {
      auto it = r.labels.find(label_scheme);
      if (it != r.labels.end()) labels.push_back({it->second});
    }
    for (const auto& l : labels) lists.push_back(&l);
    const auto ranked = detail::rank_by_frequency(lists);
    require(!ranked.empty(), "majority: no train labels for scheme '" + label_scheme + "'");
    std::map<std::string, std::size_t> ids;
    std::vector<std::size_t> truth, pred;
    for (const auto& r : test) {
      auto it = r.labels.find(label_scheme);
      if (it == r.labels.end()) continue;
      truth.push_back(ids.emplace(it->second, ids.size()).first->second);
      pred.push_back(ids.emplace(ranked[0], ids.size()).first->second);
    }
    require(!truth.empty(), "majority: no test labels for scheme '" + label_scheme + "'");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
    out.task = "probe";
    out.metrics["accuracy"] = 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
    out.metrics["balanced_accuracy"] = balanced_accuracy(truth, pred, ids.size());
    out.config = {{"baseline", "majority"}, {"label_scheme", label_scheme}, {"prediction", ranked[0]}};
    return out;
  }

  std::vector<const std::vector<std::string>*> lists;
  for (const auto& r : train) lists.push_back(&r.gold_items);
  const auto ranked = detail::rank_by_frequency(lists);
  require(!ranked.empty(), "majority: train set has no gold items");
  if (task == EvalTask::kNextAction) {
    std::size_t correct = 0;
    for (const auto& r : test) correct += !r.gold_items.empty() && r.gold_items[0] == ranked[0];
    out.task = "action";
    out.metrics["accuracy"] = 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
    out.config = {{"baseline", "majority"}, {"prediction", ranked[0]}};
    return out;
  }
  out.task = "rec";
  for (auto k : ks) {
    std::size_t count = 0;
    for (const auto& r : test) count += detail::any_in_top_k(r.gold_items, ranked, k);
    out.metrics[detail::hit_name(k)] = 100.0 * static_cast<double>(count) / static_cast<double>(test.size());
  }
  out.config = {{"baseline", "majority"}, {"ks", ks}};
  return out;
}

}  // namespace goalfactor
