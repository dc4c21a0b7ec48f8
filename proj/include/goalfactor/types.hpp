#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "goalfactor/common.hpp"

namespace goalfactor {

enum class Split { kTrain, kTest };

inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

/// One unstructured data point: a dialogue history, a trajectory prefix, a
/// bill summary. `extra` keeps JSON fields this library does not interpret.
struct Document {
  std::string id;
  std::string text;
  std::map<std::string, std::string> labels;
  std::vector<std::string> gold_items;
  Split split = Split::kTrain;
  json extra = json::object();

  bool operator==(const Document&) const = default;
};

struct Corpus {
  std::vector<Document> documents;
  json metadata = json::object();

  std::size_t size() const { return documents.size(); }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
      if (documents[i].split == split) out.push_back(i);
    }
    return out;
  }
};

/// A user goal realised as the two-stage prompt pair. The describe prompt
/// carries the `<document>` placeholder exactly once.
struct Goal {
  static constexpr std::string_view kPlaceholder = "<document>";

  std::string name;
  std::string description_prompt;
  std::string format_prompt;

  static Goal make(std::string name, std::string description_prompt, std::string format_prompt) {
    const auto first = description_prompt.find(kPlaceholder);
    if (first == std::string::npos ||
        description_prompt.find(kPlaceholder, first + 1) != std::string::npos) {
      fail(ErrorCode::kInvalidArgument,
           "goal '" + name + "': description prompt must contain <document> exactly once");
    }
    return Goal{std::move(name), std::move(description_prompt), std::move(format_prompt)};
  }

  std::string render_description(std::string_view text) const {
    std::string out = description_prompt;
    out.replace(out.find(kPlaceholder), kPlaceholder.size(), text);
    return out;
  }
};

struct Property {
  std::uint32_t pid = 0;
  std::string text;
  std::string canonical_key;

  bool operator==(const Property&) const = default;
};

/// Deduplicated properties plus the (doc_id, pid) links observed during
/// proposal.
struct PropertyPool {
  std::vector<Property> properties;
  std::set<std::pair<std::string, std::uint32_t>> positives;

  std::size_t size() const { return properties.size(); }
  bool operator==(const PropertyPool&) const = default;
};

/// Row-major N x P data-property score matrix.
struct CompatibilityMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
  bool binarized = false;

  CompatibilityMatrix() = default;
  CompatibilityMatrix(std::uint32_t r, std::uint32_t c, bool bin = false)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0f), binarized(bin) {}

  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = at(r, c);
    return m;
  }

  bool operator==(const CompatibilityMatrix&) const = default;
};

/// Per-column rank reference for the inverse-normal transform.
struct Gaussianizer {
  std::vector<std::vector<double>> sorted_columns;

  std::size_t cols() const { return sorted_columns.size(); }
  bool operator==(const Gaussianizer&) const = default;
};

/// Linear latent factor model: Z = W c + noise, noise ~ N(0, noise_var I).
struct CorexModel {
  Eigen::MatrixXd weights;  // m x P
  double noise_var = 1.0;
  std::vector<double> loss_trace;
  std::uint64_t seed = 0;
  Gaussianizer gaussianizer;
  std::string config_hash;
  std::string matrix_sha256;

  std::size_t factors() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t properties() const { return static_cast<std::size_t>(weights.cols()); }

  bool operator==(const CorexModel& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           weights == o.weights && noise_var == o.noise_var && loss_trace == o.loss_trace &&
           seed == o.seed && gaussianizer == o.gaussianizer && config_hash == o.config_hash &&
           matrix_sha256 == o.matrix_sha256;
  }
};

}  // namespace goalfactor
