#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "goalfactor/common.hpp"
#include "goalfactor/optim.hpp"
#include "goalfactor/types.hpp"

namespace goalfactor {

// ---------------------------------------------------------------------------
// Inverse-normal gaussianization

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard normal CDF. Rational approximation (Acklam) followed by
/// one Halley refinement step against erfc.
inline double probit(double p) {
  require(p > 0.0 && p < 1.0, "probit: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double kLow = 0.02425;
  double x;
  if (p < kLow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - kLow) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Maps a raw value onto the fitted column: mid-rank among the reference
/// values (ties averaged), then Probit((rank - 0.5) / n). Values not present
/// in the reference fall between neighbours and are clamped to the extreme
/// reference quantiles.
inline double gaussianize_value(const std::vector<double>& sorted, double v) {
  const std::size_t n = sorted.size();
  if (n == 0 || sorted.front() == sorted.back()) return 0.0;
  const auto lo_it = std::lower_bound(sorted.begin(), sorted.end(), v);
  const auto hi_it = std::upper_bound(lo_it, sorted.end(), v);
  const double lo = static_cast<double>(lo_it - sorted.begin());
  const double eq = static_cast<double>(hi_it - lo_it);
  const double rank = eq > 0 ? lo + (eq + 1.0) / 2.0 : lo + 0.5;
  const double nn = static_cast<double>(n);
  const double p = std::clamp((rank - 0.5) / nn, 0.5 / nn, 1.0 - 0.5 / nn);
  return probit(p);
}

inline Eigen::MatrixXd apply_gaussianizer(const Gaussianizer& g, const Eigen::MatrixXd& raw) {
  if (static_cast<std::size_t>(raw.cols()) != g.cols()) {
    fail(ErrorCode::kInvalidArgument, "column count mismatch: got " + std::to_string(raw.cols()) + ", model has " +
                                          std::to_string(g.cols()));
  }
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c)
    for (Eigen::Index r = 0; r < raw.rows(); ++r) out(r, c) = gaussianize_value(g.sorted_columns[c], raw(r, c));
  return out;
}

struct GaussianizedMatrix {
  Eigen::MatrixXd data;  // N x P
  Gaussianizer gaussianizer;
};

inline GaussianizedMatrix gaussianize(const Eigen::MatrixXd& raw) {
  require(raw.rows() >= 3, "gaussianize: need at least 3 rows");
  require(raw.allFinite(), "gaussianize: non-finite input");
  GaussianizedMatrix out;
  out.gaussianizer.sorted_columns.resize(raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    auto& col = out.gaussianizer.sorted_columns[c];
    col.assign(raw.col(c).data(), raw.col(c).data() + raw.rows());
    std::sort(col.begin(), col.end());
    if (col.front() == col.back()) log_warn("constant column mapped to zeros", {{"column", c}});
  }
  out.data = apply_gaussianizer(out.gaussianizer, raw);
  return out;
}

inline GaussianizedMatrix gaussianize(const CompatibilityMatrix& m) { return gaussianize(m.to_eigen()); }

// ---------------------------------------------------------------------------
// Total correlation under a Gaussian model

inline constexpr double kCovJitter = 1e-6;
inline constexpr double kLogEps = 1e-8;

/// TC = 1/2 (sum_i log S_ii - log det S) for the sample covariance S, in nats.
inline double total_correlation_gaussian(const Eigen::MatrixXd& sample) {
  const auto n = sample.rows();
  const auto p = sample.cols();
  require(p >= 1 && n > p + 1, "total_correlation_gaussian: need n > p + 1");
  const Eigen::RowVectorXd mean = sample.colwise().mean();
  const Eigen::MatrixXd centered = sample.rowwise() - mean;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov.diagonal().array() += kCovJitter;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) fail(ErrorCode::kNumerical, "covariance is singular after jitter");
  const Eigen::MatrixXd& l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const double tc = 0.5 * (cov.diagonal().array().log().sum() - logdet);
  return std::max(0.0, tc);
}

// ---------------------------------------------------------------------------
// Linear CorEx objective
//
// With Z = W C + e, e ~ N(0, noise_var I), every term depends on W only
// through the moments A = E[Z C^T] = W S and G = E[Z Z^T] = W S W^T + noise_var I,
// where S = E[C C^T]. The conditional mean of C_i given Z under the modular
// factorization is linear in Z:
//   nu_i = 1/(1 + r_i) * sum_j sqrt(S_ii) R_ji / ((1 - R_ji^2) sqrt(G_jj)) Z_j,
//   R_ji = A_ji / sqrt(G_jj S_ii),   r_i = sum_j R_ji^2 / (1 - R_ji^2).
// Loss = sum_i 1/2 log E[(C_i - nu_i)^2] + sum_j 1/2 log E[Z_j^2].

/// Returns the loss; writes dLoss/dW into `grad` when non-null.
inline double corex_loss(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& second_moment, double noise_var,
                         Eigen::MatrixXd* grad = nullptr) {
  const auto m = weights.rows();
  const auto p = weights.cols();
  const Eigen::MatrixXd a = weights * second_moment;
  Eigen::MatrixXd g = a * weights.transpose();
  g.diagonal().array() += noise_var;
  const Eigen::VectorXd u = g.diagonal();
  const Eigen::VectorXd sqrt_u = u.array().sqrt();

  const bool want_grad = grad != nullptr;
  Eigen::MatrixXd grad_a, grad_g;
  Eigen::VectorXd grad_u;
  if (want_grad) {
    grad_a.setZero(m, p);
    grad_g.setZero(m, m);
    grad_u.setZero(m);
  }

  double loss = 0.0;
  Eigen::VectorXd rho(m), q(m), c(m), b(m), gb(m), gr(m);
  for (Eigen::Index i = 0; i < p; ++i) {
    const double s = std::max(second_moment(i, i), 1e-12);
    const double sqrt_s = std::sqrt(s);
    double r = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      rho(j) = a(j, i) / (sqrt_u(j) * sqrt_s);
      const double inv = 1.0 / std::max(1.0 - rho(j) * rho(j), 1e-12);
      q(j) = rho(j) * rho(j) * inv;
      c(j) = rho(j) * inv;
      r += q(j);
    }
    const double inv_1r = 1.0 / (1.0 + r);
    for (Eigen::Index j = 0; j < m; ++j) b(j) = sqrt_s * c(j) * inv_1r / sqrt_u(j);

    const Eigen::VectorXd gbv = g * b;
    const double resid = s - 2.0 * b.dot(a.col(i)) + b.dot(gbv);
    const double denom = resid + kLogEps;
    loss += 0.5 * std::log(denom);

    if (!want_grad) continue;
    const double w = 0.5 / denom;
    gb = w * (2.0 * gbv - 2.0 * a.col(i));
    grad_a.col(i) += -2.0 * w * b;
    grad_g.noalias() += w * b * b.transpose();

    double cross = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) cross += gb(j) * c(j) / sqrt_u(j);
    for (Eigen::Index l = 0; l < m; ++l) {
      const double one_minus = std::max(1.0 - rho(l) * rho(l), 1e-12);
      const double dc = (1.0 + rho(l) * rho(l)) / (one_minus * one_minus);
      const double dq = 2.0 * rho(l) / (one_minus * one_minus);
      gr(l) = sqrt_s * inv_1r * gb(l) * dc / sqrt_u(l) - sqrt_s * inv_1r * inv_1r * dq * cross;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      grad_u(j) += -0.5 * gb(j) * b(j) / u(j) - 0.5 * gr(j) * rho(j) / u(j);
      grad_a(j, i) += gr(j) / (sqrt_u(j) * sqrt_s);
    }
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    loss += 0.5 * std::log(u(j) + kLogEps);
    if (want_grad) grad_u(j) += 0.5 / (u(j) + kLogEps);
  }

  if (want_grad) {
    grad_g.diagonal() += grad_u;
    *grad = grad_a * second_moment + (grad_g + grad_g.transpose()) * weights * second_moment;
  }
  return loss;
}

struct CorexOptions {
  std::size_t factors = 50;
  std::size_t iters = 5000;
  double lr = 1e-2;
  std::uint64_t seed = 17;
  double noise_var = 1.0;
  double init_scale = 0.01;
  std::size_t anneal_stages = 6;
  double anneal_base = 0.6;
};

/// Fits W on gaussianized data (N x P) by adaptive first-order descent on the
/// full-data CorEx loss. Returns a model without a gaussianizer attached.
inline CorexModel fit_corex(const Eigen::MatrixXd& c_gauss, const CorexOptions& opt) {
  const auto n = c_gauss.rows();
  const auto p = c_gauss.cols();
  const auto m = static_cast<Eigen::Index>(opt.factors);
  require(m >= 1, "fit: need at least one factor");
  require(m <= p, "fit: factors (" + std::to_string(m) + ") exceed properties (" + std::to_string(p) + ")");
  require(n >= 3, "fit: need at least 3 rows");
  require(opt.noise_var > 0.0, "fit: noise variance must be positive");

  const Eigen::MatrixXd second_moment = (c_gauss.transpose() * c_gauss) / static_cast<double>(n);

  CorexModel model;
  model.seed = opt.seed;
  model.noise_var = opt.noise_var;
  model.weights.resize(m, p);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> init(0.0, opt.init_scale);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < p; ++i) model.weights(j, i) = init(rng);

  // Annealing: the objective is first optimized on moments of the data mixed
  // with independent noise, (1 - e^2) S + e^2 I, for a decreasing schedule of
  // e, then on the exact moments. The trace always records the exact loss.
  std::vector<double> schedule;
  for (std::size_t k = 1; k <= opt.anneal_stages; ++k) schedule.push_back(std::pow(opt.anneal_base, k));
  schedule.push_back(0.0);
  const std::size_t stages = schedule.size();

  Adam adam(static_cast<std::size_t>(m * p), opt.lr);
  Eigen::MatrixXd grad;
  Eigen::MatrixXd noisy = second_moment;
  model.loss_trace.reserve(opt.iters + 1);
  for (std::size_t it = 0; it <= opt.iters; ++it) {
    const double loss = corex_loss(model.weights, second_moment, opt.noise_var);
    model.loss_trace.push_back(loss);
    if (!std::isfinite(loss)) {
      std::string tail;
      const auto start = model.loss_trace.size() > 5 ? model.loss_trace.size() - 5 : 0;
      for (auto k = start; k < model.loss_trace.size(); ++k) tail += " " + std::to_string(model.loss_trace[k]);
      fail(ErrorCode::kNumerical, "fit: non-finite loss at iteration " + std::to_string(it) + "; trace tail:" + tail);
    }
    if (it == opt.iters) break;
    const double eps = schedule[std::min(stages - 1, it * stages / std::max<std::size_t>(opt.iters, 1))];
    noisy = (1.0 - eps * eps) * second_moment;
    noisy.diagonal().array() += eps * eps;
    corex_loss(model.weights, noisy, opt.noise_var, &grad);
    if (!grad.allFinite()) fail(ErrorCode::kNumerical, "fit: non-finite gradient at iteration " + std::to_string(it));
    adam.step(std::span<double>(model.weights.data(), static_cast<std::size_t>(m * p)),
              std::span<const double>(grad.data(), static_cast<std::size_t>(m * p)));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Factor assignment and encoding

/// Z = C W^T on already-gaussianized rows.
inline Eigen::MatrixXd encode_gaussianized(const CorexModel& model, const Eigen::MatrixXd& c_gauss) {
  if (c_gauss.cols() != model.weights.cols()) {
    fail(ErrorCode::kInvalidArgument, "column count mismatch: got " + std::to_string(c_gauss.cols()) +
                                          ", model has " + std::to_string(model.weights.cols()));
  }
  return c_gauss * model.weights.transpose();
}

/// Raw score rows (N x P, pool order) to latent representations (N x m).
inline Eigen::MatrixXd encode(const CorexModel& model, const Eigen::MatrixXd& raw_rows) {
  return encode_gaussianized(model, apply_gaussianizer(model.gaussianizer, raw_rows));
}

struct FactorAssignment {
  std::vector<std::size_t> factor_of;             // per property
  std::vector<double> mi_of;                      // per property, nats
  std::vector<std::vector<std::size_t>> members;  // per factor, MI descending
  Eigen::MatrixXd mi;                             // P x m

  std::size_t factors() const { return members.size(); }
};

/// Gaussian mutual information for a Pearson correlation.
inline double gaussian_mi(double rho) {
  const double r2 = std::min(rho * rho, 1.0 - 1e-15);
  return -0.5 * std::log1p(-r2);
}

inline FactorAssignment assign_factors(const CorexModel& model, const Eigen::MatrixXd& c_gauss) {
  const Eigen::MatrixXd z = encode_gaussianized(model, c_gauss);
  const auto p = c_gauss.cols();
  const auto m = z.rows() > 0 ? z.cols() : 0;
  const Eigen::MatrixXd cc = c_gauss.rowwise() - c_gauss.colwise().mean();
  const Eigen::MatrixXd zc = z.rowwise() - z.colwise().mean();
  const Eigen::VectorXd c_norm = cc.colwise().norm();
  const Eigen::VectorXd z_norm = zc.colwise().norm();

  std::vector<bool> z_live(m, true);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!(z_norm(j) > 1e-12)) {
      z_live[j] = false;
      log_warn("latent factor has zero variance; it receives no properties", {{"factor", j}});
    }
  }

  FactorAssignment out;
  out.mi.setZero(p, m);
  out.factor_of.assign(p, 0);
  out.mi_of.assign(p, 0.0);
  out.members.assign(m, {});
  const Eigen::MatrixXd cross = cc.transpose() * zc;
  for (Eigen::Index i = 0; i < p; ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!z_live[j]) continue;
      const double rho = c_norm(i) > 1e-12 ? cross(i, j) / (c_norm(i) * z_norm(j)) : 0.0;
      out.mi(i, j) = gaussian_mi(rho);
      if (best < 0 || out.mi(i, j) > out.mi(i, best)) best = j;
    }
    if (best < 0) best = 0;
    out.factor_of[i] = static_cast<std::size_t>(best);
    out.mi_of[i] = out.mi(i, best);
    out.members[best].push_back(static_cast<std::size_t>(i));
  }
  for (auto& list : out.members) {
    std::stable_sort(list.begin(), list.end(),
                     [&](std::size_t x, std::size_t y) { return out.mi_of[x] > out.mi_of[y]; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ReportedProperty {
  std::uint32_t pid;
  std::string text;
  double mi;
};

struct ReportedFactor {
  std::size_t id;
  std::string label;
  std::vector<ReportedProperty> properties;
  std::vector<std::string> top_documents;
};

struct LatentFactorReport {
  std::vector<ReportedFactor> factors;

  json to_json() const {
    json fs = json::array();
    for (const auto& f : factors) {
      json props = json::array();
      for (const auto& p : f.properties) props.push_back({{"text", p.text}, {"mi", p.mi}});
      json jf = {{"id", f.id}, {"properties", props}, {"top_documents", f.top_documents}};
      if (!f.label.empty()) jf["label"] = f.label;
      fs.push_back(std::move(jf));
    }
    return json{{"factors", fs}};
  }

  std::string to_markdown() const {
    std::ostringstream os;
    os << "# Latent factors\n";
    for (const auto& f : factors) {
      os << "\n## Factor " << f.id;
      if (!f.label.empty()) os << ": " << f.label;
      os << "\n\n";
      if (f.properties.empty()) os << "_no properties assigned_\n";
      for (const auto& p : f.properties) {
        char mi[32];
        std::snprintf(mi, sizeof mi, "%.4f", p.mi);
        os << "- " << p.text << " (MI " << mi << ")\n";
      }
      if (!f.top_documents.empty()) {
        os << "\nTop documents:";
        for (const auto& d : f.top_documents) os << " `" << d << "`";
        os << "\n";
      }
    }
    return os.str();
  }
};

/// Per factor: the top_k_props properties by MI and the top_k_docs documents
/// by mean raw compatibility with those properties. `doc_ids` maps matrix
/// rows to document ids.
inline LatentFactorReport build_report(const FactorAssignment& assignment, const PropertyPool& pool,
                                       const CompatibilityMatrix& matrix, const std::vector<std::string>& doc_ids,
                                       std::size_t top_k_props, std::size_t top_k_docs) {
  require(assignment.factor_of.size() == pool.size(), "report: assignment and pool disagree on property count");
  require(matrix.cols == pool.size(), "report: matrix and pool disagree on property count");
  require(doc_ids.size() == matrix.rows, "report: need one document id per matrix row");
  LatentFactorReport report;
  for (std::size_t f = 0; f < assignment.factors(); ++f) {
    ReportedFactor rf;
    rf.id = f;
    const auto& members = assignment.members[f];
    const std::size_t k = std::min(top_k_props, members.size());
    for (std::size_t t = 0; t < k; ++t) {
      const auto pid = members[t];
      rf.properties.push_back({static_cast<std::uint32_t>(pid), pool.properties[pid].text, assignment.mi_of[pid]});
    }
    if (k > 0 && top_k_docs > 0) {
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t r = 0; r < matrix.rows; ++r) {
        double sum = 0.0;
        for (const auto& p : rf.properties) sum += matrix.at(r, p.pid);
        scored.emplace_back(sum / static_cast<double>(k), r);
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& x, const auto& y) { return x.first > y.first; });
      for (std::size_t t = 0; t < std::min(top_k_docs, scored.size()); ++t)
        rf.top_documents.push_back(doc_ids[scored[t].second]);
    }
    report.factors.push_back(std::move(rf));
  }
  return report;
}

}  // namespace goalfactor
