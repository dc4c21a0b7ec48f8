#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "goalfactor/common.hpp"
#include "goalfactor/embedding.hpp"
#include "goalfactor/optim.hpp"
#include "goalfactor/types.hpp"

namespace goalfactor {

/// Trainable map on top of the frozen base embedding: tanh(weight * v + bias).
struct EncoderHead {
  Eigen::MatrixXd weight;  // d_out x dim
  Eigen::VectorXd bias;    // d_out

  static EncoderHead identity(std::size_t dim, std::size_t d_out) {
    require(dim > 0 && d_out > 0, "encoder head dimensions must be positive");
    EncoderHead h;
    h.weight = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(dim));
    h.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_out));
    return h;
  }

  std::size_t dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t d_out() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }

  /// Rows of `base` (n x dim) mapped to rows of the output (n x d_out).
  Eigen::MatrixXd apply(const Eigen::MatrixXd& base) const {
    Eigen::MatrixXd pre = base * weight.transpose();
    pre.rowwise() += bias.transpose();
    return pre.array().tanh().matrix();
  }
};

inline Eigen::MatrixXd to_rows(const std::vector<std::vector<float>>& vectors, std::size_t dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < vectors.size(); ++r) {
    check_embedding(vectors[r], dim, "base embedding");
    for (std::size_t c = 0; c < dim; ++c) m(r, c) = vectors[r][c];
  }
  return m;
}

/// Phi(text) = head(base.embed(text)). Immutable once training is done, so a
/// trained encoder can be shared across threads.
class Encoder {
 public:
  Encoder(std::shared_ptr<const EmbeddingProvider> base, std::size_t d_out = 0)
      : base_(std::move(base)), head_(EncoderHead::identity(base_->dim(), d_out ? d_out : base_->dim())) {}

  Encoder(std::shared_ptr<const EmbeddingProvider> base, EncoderHead head) : base_(std::move(base)), head_(std::move(head)) {
    require(head_.dim() == base_->dim(), "encoder head input size does not match the base embedding");
  }

  const EmbeddingProvider& base() const { return *base_; }
  const EncoderHead& head() const { return head_; }
  EncoderHead& head() { return head_; }
  std::size_t d_out() const { return head_.d_out(); }

  Eigen::VectorXd encode(std::string_view text) const {
    const auto v = base_->embed(text);
    return head_.apply(to_rows({v}, base_->dim())).row(0).transpose();
  }

  Eigen::MatrixXd base_rows(const std::vector<std::string>& texts, std::size_t threads = 1) const {
    std::vector<std::vector<float>> vectors(texts.size());
    parallel_for(texts.size(), threads, [&](std::size_t i) { vectors[i] = base_->embed(texts[i]); });
    return to_rows(vectors, base_->dim());
  }

  Eigen::MatrixXd encode_rows(const std::vector<std::string>& texts, std::size_t threads = 1) const {
    return head_.apply(base_rows(texts, threads));
  }

 private:
  std::shared_ptr<const EmbeddingProvider> base_;
  EncoderHead head_;
};

/// score(c, x) = Phi(c) . Phi(x)
inline double score(std::string_view property, std::string_view document, const Encoder& enc) {
  return enc.encode(property).dot(enc.encode(document));
}

/// exp(pos) / sum_j exp(candidates_j), evaluated with max subtraction.
inline double softmax_link_probability(double pos_score, std::span<const double> candidate_scores) {
  require(candidate_scores.size() >= 2, "softmax_link_probability: need at least 2 candidates");
  if (!std::isfinite(pos_score)) fail(ErrorCode::kNumerical, "softmax_link_probability: non-finite score");
  bool found = false;
  double mx = pos_score;
  for (double s : candidate_scores) {
    if (!std::isfinite(s)) fail(ErrorCode::kNumerical, "softmax_link_probability: non-finite score");
    found = found || s == pos_score;
    mx = std::max(mx, s);
  }
  require(found, "softmax_link_probability: positive score must be one of the candidates");
  double denom = 0.0;
  for (double s : candidate_scores) denom += std::exp(s - mx);
  return std::exp(pos_score - mx) / denom;
}

struct HeadGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Mean in-batch softmax loss. Row k of `doc_base` and `prop_base` is a
/// positive pair; the other rows of `prop_base` are the negatives for doc k.
inline double contrastive_loss(const EncoderHead& head, const Eigen::MatrixXd& doc_base,
                               const Eigen::MatrixXd& prop_base, HeadGradient* grad = nullptr) {
  require(doc_base.rows() == prop_base.rows() && doc_base.rows() >= 2, "contrastive_loss: need >= 2 aligned pairs");
  const auto batch = doc_base.rows();
  const Eigen::MatrixXd x = head.apply(doc_base);
  const Eigen::MatrixXd c = head.apply(prop_base);
  const Eigen::MatrixXd s = x * c.transpose();

  double loss = 0.0;
  Eigen::MatrixXd ds(batch, batch);
  for (Eigen::Index k = 0; k < batch; ++k) {
    const double mx = s.row(k).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(k).array() - mx).exp().matrix();
    const double z = e.sum();
    loss += -(s(k, k) - mx) + std::log(z);
    ds.row(k) = e / z;
    ds(k, k) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  loss *= inv_b;
  if (!grad) return loss;

  ds *= inv_b;
  const Eigen::MatrixXd dx = ds * c;
  const Eigen::MatrixXd dc = ds.transpose() * x;
  const Eigen::MatrixXd dpre_x = (dx.array() * (1.0 - x.array().square())).matrix();
  const Eigen::MatrixXd dpre_c = (dc.array() * (1.0 - c.array().square())).matrix();
  grad->weight = dpre_x.transpose() * doc_base + dpre_c.transpose() * prop_base;
  grad->bias = (dpre_x.colwise().sum() + dpre_c.colwise().sum()).transpose();
  return loss;
}

struct LinkTrainOptions {
  std::size_t batch_size = 64;
  std::size_t epochs = 3;
  double lr = 1e-3;
  std::uint64_t seed = 17;
  std::size_t threads = 1;
};

struct LinkTrainResult {
  Encoder encoder;
  std::vector<double> epoch_loss;
};

/// Fits the encoder head on the pool's positive pairs with in-batch
/// negatives. Pairs are shuffled each epoch with a seeded generator; a final
/// partial batch is kept when it has at least two pairs.
inline LinkTrainResult train_encoder(const PropertyPool& pool, const Corpus& corpus, Encoder enc,
                                     const LinkTrainOptions& opt) {
  require(!pool.positives.empty(), "train_encoder: pool has no positive pairs");
  require(opt.batch_size >= 2, "train_encoder: batch size must be at least 2");
  require(opt.batch_size <= pool.positives.size(),
          "train_encoder: batch size " + std::to_string(opt.batch_size) + " exceeds the " +
              std::to_string(pool.positives.size()) + " positive pairs");

  std::unordered_map<std::string, std::size_t> doc_index;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) doc_index.emplace(corpus.documents[i].id, i);

  // Base embeddings are frozen, so every text is embedded once up front.
  std::vector<std::string> doc_texts;
  std::unordered_map<std::string, std::size_t> doc_row;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (doc row, pid)
  for (const auto& [doc_id, pid] : pool.positives) {
    auto it = doc_index.find(doc_id);
    if (it == doc_index.end()) fail(ErrorCode::kInvalidArgument, "positive references unknown document '" + doc_id + "'");
    require(pid < pool.size(), "positive references unknown pid");
    auto [row, inserted] = doc_row.emplace(doc_id, doc_texts.size());
    if (inserted) doc_texts.push_back(corpus.documents[it->second].text);
    pairs.emplace_back(row->second, pid);
  }
  std::vector<std::string> prop_texts;
  for (const auto& p : pool.properties) prop_texts.push_back(p.text);
  const Eigen::MatrixXd doc_base = enc.base_rows(doc_texts, opt.threads);
  const Eigen::MatrixXd prop_base = enc.base_rows(prop_texts, opt.threads);

  auto& head = enc.head();
  const auto w_size = static_cast<std::size_t>(head.weight.size());
  const auto b_size = static_cast<std::size_t>(head.bias.size());
  Adam adam(w_size + b_size, opt.lr);
  std::vector<double> params(w_size + b_size), grads(w_size + b_size);

  std::mt19937_64 rng(opt.seed);
  LinkTrainResult result{enc, {}};
  const auto dim = static_cast<Eigen::Index>(enc.base().dim());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += opt.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + opt.batch_size);
      if (end - start < 2) break;
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(b, dim), cb(b, dim);
      for (Eigen::Index k = 0; k < b; ++k) {
        xb.row(k) = doc_base.row(static_cast<Eigen::Index>(pairs[start + k].first));
        cb.row(k) = prop_base.row(static_cast<Eigen::Index>(pairs[start + k].second));
      }
      HeadGradient g;
      const double loss = contrastive_loss(head, xb, cb, &g);
      if (!std::isfinite(loss)) fail(ErrorCode::kNumerical, "train_encoder: non-finite loss");
      total += loss;
      ++batches;
      std::copy(head.weight.data(), head.weight.data() + w_size, params.begin());
      std::copy(head.bias.data(), head.bias.data() + b_size, params.begin() + static_cast<std::ptrdiff_t>(w_size));
      std::copy(g.weight.data(), g.weight.data() + w_size, grads.begin());
      std::copy(g.bias.data(), g.bias.data() + b_size, grads.begin() + static_cast<std::ptrdiff_t>(w_size));
      adam.step(params, grads);
      std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(w_size), head.weight.data());
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(w_size), params.end(), head.bias.data());
    }
    result.epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  result.encoder = std::move(enc);
  return result;
}

/// Row i holds W Phi(x_i) with W_j = Phi(c_j): the score of every pooled
/// property against document i.
inline CompatibilityMatrix materialize_matrix(const std::vector<std::string>& doc_texts, const PropertyPool& pool,
                                              const Encoder& enc, std::size_t threads = 1) {
  require(pool.size() > 0, "materialize_matrix: empty property pool");
  std::vector<std::string> prop_texts;
  for (const auto& p : pool.properties) prop_texts.push_back(p.text);
  const Eigen::MatrixXd w = enc.encode_rows(prop_texts, threads);  // P x d_out
  const Eigen::MatrixXd docs = enc.encode_rows(doc_texts, threads);
  CompatibilityMatrix out(static_cast<std::uint32_t>(doc_texts.size()), static_cast<std::uint32_t>(pool.size()));
  parallel_for(doc_texts.size(), threads, [&](std::size_t r) {
    const Eigen::VectorXd row = w * docs.row(static_cast<Eigen::Index>(r)).transpose();
    for (std::size_t c = 0; c < out.cols; ++c) {
      const double v = row(static_cast<Eigen::Index>(c));
      if (!std::isfinite(v)) fail(ErrorCode::kNumerical, "materialize_matrix: non-finite score");
      out.at(r, c) = static_cast<float>(v);
    }
  });
  return out;
}

inline CompatibilityMatrix materialize_matrix(const Corpus& corpus, const PropertyPool& pool, const Encoder& enc,
                                              std::size_t threads = 1) {
  std::vector<std::string> texts;
  for (const auto& d : corpus.documents) texts.push_back(d.text);
  return materialize_matrix(texts, pool, enc, threads);
}

/// Sets the globally top round(top_fraction * N * P) scores to 1 and the rest
/// to 0. Ties at the threshold go to the lexicographically smaller (row, col).
inline CompatibilityMatrix binarize(const CompatibilityMatrix& m, double top_fraction = 0.10) {
  require(!m.binarized, "binarize: matrix is already binarized");
  require(top_fraction > 0.0 && top_fraction < 1.0, "binarize: fraction must lie in (0,1)");
  const std::size_t n = m.values.size();
  const auto k = static_cast<std::size_t>(std::llround(top_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return m.values[a] != m.values[b] ? m.values[a] > m.values[b] : a < b;
  };
  if (k > 0 && k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  CompatibilityMatrix out(m.rows, m.cols, true);
  for (std::size_t t = 0; t < k; ++t) out.values[order[t]] = 1.0f;
  return out;
}

}  // namespace goalfactor
