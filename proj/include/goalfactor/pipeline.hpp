#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "CLI11.hpp"

#include "goalfactor/common.hpp"
#include "goalfactor/corex.hpp"
#include "goalfactor/corpus_store.hpp"
#include "goalfactor/embedding.hpp"
#include "goalfactor/embedding_http.hpp"
#include "goalfactor/evalharness.hpp"
#include "goalfactor/linker.hpp"
#include "goalfactor/llm_http.hpp"
#include "goalfactor/proposer.hpp"

namespace goalfactor::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kMissingArtifact = 3, kStageFailure = 4 };

struct PipelineConfig {
  struct Paths {
    std::string corpus, pool, matrix, model, report, result;
  } paths;

  std::string goal = "inspired";

  struct Llm {
    std::string backend = "http";  // "http" or "mock:<transcript.jsonl>"
    std::string model = "gpt-4o";
    double temperature = 0.0;
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string cache_dir;
    std::size_t max_parallel = 4;
    std::size_t max_properties = 30;
    double max_failure_fraction = 0.5;
  } llm;

  struct Linker {
    std::string embedder = "local";  // "local" or "http:<url>"
    std::size_t embed_dim = 384;
    std::size_t batch = 64;
    std::size_t epochs = 3;
    double lr = 1e-3;
    std::size_t d_out = 0;  // 0: same as embed_dim
    std::optional<double> binarize;
  } linker;

  struct Corex {
    std::size_t factors = 50;
    std::size_t iters = 5000;
    double lr = 1e-2;
    std::size_t top_k_props = 10;
    std::size_t top_k_docs = 5;
  } corex;

  struct Eval {
    std::string task;  // rec | action | probe
    std::vector<std::size_t> ks = {1, 5, 20};
    std::size_t folds = 5;
    std::size_t n_neighbors = 20;
    std::string label_scheme;
    std::string representation = "z";  // z | c
    std::string similarity = "cosine";
    bool majority = false;
  } eval;

  std::uint64_t seed = 17;
  std::size_t threads = default_thread_count();

  /// Settings that determine artifact contents. Paths, thread counts and
  /// cache locations are excluded so relocated or re-threaded runs agree.
  json artifact_settings() const {
    return json{
        {"goal", goal},
        {"llm", {{"backend", llm.backend.rfind("mock:", 0) == 0 ? "mock" : llm.backend},
                 {"model", llm.model},
                 {"temperature", llm.temperature},
                 {"max_properties", llm.max_properties}}},
        {"linker", {{"embedder", linker.embedder},
                    {"embed_dim", linker.embed_dim},
                    {"batch", linker.batch},
                    {"epochs", linker.epochs},
                    {"lr", linker.lr},
                    {"d_out", linker.d_out},
                    {"binarize", linker.binarize ? json(*linker.binarize) : json()}}},
        {"corex", {{"factors", corex.factors}, {"iters", corex.iters}, {"lr", corex.lr}}},
        {"seed", seed},
    };
  }

  std::string hash() const { return sha256_hex(artifact_settings().dump()); }

  /// Every violated range constraint, one message each.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (llm.temperature < 0.0) v.push_back("llm.temperature must be >= 0");
    if (llm.max_parallel < 1) v.push_back("llm.max_parallel must be positive");
    if (llm.max_properties < 1) v.push_back("llm.max_properties must be positive");
    if (!(llm.max_failure_fraction >= 0.0 && llm.max_failure_fraction <= 1.0))
      v.push_back("llm.max_failure_fraction must lie in [0,1]");
    if (llm.backend != "http" && llm.backend.rfind("mock:", 0) != 0)
      v.push_back("llm backend must be \"http\" or \"mock:<transcript>\"");
    if (linker.embedder != "local" && linker.embedder.rfind("http:", 0) != 0)
      v.push_back("linker.embedder must be \"local\" or \"http:<url>\"");
    if (linker.embed_dim < 1) v.push_back("linker.embed_dim must be positive");
    if (linker.batch < 2) v.push_back("linker.batch must be >= 2");
    if (linker.epochs < 1) v.push_back("linker.epochs must be positive");
    if (!(linker.lr > 0.0)) v.push_back("linker.lr must be positive");
    if (linker.binarize && !(*linker.binarize > 0.0 && *linker.binarize < 1.0))
      v.push_back("binarize: fraction in (0,1)");
    if (corex.factors < 1) v.push_back("corex.factors must be positive");
    if (corex.iters < 1) v.push_back("corex.iters must be positive");
    if (!(corex.lr > 0.0)) v.push_back("corex.lr must be positive");
    if (!eval.task.empty() && eval.task != "rec" && eval.task != "action" && eval.task != "probe")
      v.push_back("eval.task must be one of rec, action, probe");
    if (eval.ks.empty()) v.push_back("eval.ks must not be empty");
    for (auto k : eval.ks)
      if (k < 1) v.push_back("eval.ks entries must be positive");
    if (eval.folds < 2) v.push_back("eval.folds must be >= 2");
    if (eval.n_neighbors < 1) v.push_back("eval.n_neighbors must be positive");
    if (eval.representation != "z" && eval.representation != "c") v.push_back("eval.representation must be z or c");
    if (eval.similarity != "cosine" && eval.similarity != "inner_product")
      v.push_back("eval.similarity must be cosine or inner_product");
    if (threads < 1) v.push_back("threads must be positive");
    return v;
  }
};

namespace detail {

template <typename T>
void read_field(const json& j, const char* key, T& out, std::vector<std::string>& errors, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (j[key].is_number_integer() && !j[key].is_number_unsigned()) {
      errors.push_back(where + key + ": must be a non-negative integer");
      return;
    }
  }
  if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    if (j[key].is_array()) {
      for (const auto& v : j[key]) {
        if (v.is_number_integer() && !v.is_number_unsigned()) {
          errors.push_back(where + key + ": entries must be non-negative integers");
          return;
        }
      }
    }
  }
  try {
    out = j[key].get<T>();
  } catch (const json::exception& e) {
    errors.push_back(where + key + ": " + e.what());
  }
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

/// Reads a JSON config file. Relative paths resolve against the file's
/// directory.
inline PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, "config '" + path.string() + "': " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
  PipelineConfig c;
  std::vector<std::string> errors;
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    for (auto [key, field] : {std::pair{"corpus", &c.paths.corpus}, std::pair{"pool", &c.paths.pool},
                              std::pair{"matrix", &c.paths.matrix}, std::pair{"model", &c.paths.model},
                              std::pair{"report", &c.paths.report}, std::pair{"result", &c.paths.result}}) {
      detail::read_field(p, key, *field, errors, "paths.");
      *field = detail::resolve(base, *field);
    }
  }
  detail::read_field(j, "goal", c.goal, errors, "");
  if (fs::is_directory(base / c.goal)) c.goal = detail::resolve(base, c.goal);
  if (j.contains("llm")) {
    const auto& l = j["llm"];
    detail::read_field(l, "backend", c.llm.backend, errors, "llm.");
    if (c.llm.backend.rfind("mock:", 0) == 0) c.llm.backend = "mock:" + detail::resolve(base, c.llm.backend.substr(5));
    detail::read_field(l, "model", c.llm.model, errors, "llm.");
    detail::read_field(l, "temperature", c.llm.temperature, errors, "llm.");
    detail::read_field(l, "endpoint", c.llm.endpoint, errors, "llm.");
    detail::read_field(l, "cache_dir", c.llm.cache_dir, errors, "llm.");
    c.llm.cache_dir = detail::resolve(base, c.llm.cache_dir);
    detail::read_field(l, "max_parallel", c.llm.max_parallel, errors, "llm.");
    detail::read_field(l, "max_properties", c.llm.max_properties, errors, "llm.");
    detail::read_field(l, "max_failure_fraction", c.llm.max_failure_fraction, errors, "llm.");
  }
  if (j.contains("linker")) {
    const auto& l = j["linker"];
    detail::read_field(l, "embedder", c.linker.embedder, errors, "linker.");
    detail::read_field(l, "embed_dim", c.linker.embed_dim, errors, "linker.");
    detail::read_field(l, "batch", c.linker.batch, errors, "linker.");
    detail::read_field(l, "epochs", c.linker.epochs, errors, "linker.");
    detail::read_field(l, "lr", c.linker.lr, errors, "linker.");
    detail::read_field(l, "d_out", c.linker.d_out, errors, "linker.");
    if (l.contains("binarize") && !l["binarize"].is_null()) {
      double f = 0;
      detail::read_field(l, "binarize", f, errors, "linker.");
      c.linker.binarize = f;
    }
  }
  if (j.contains("corex")) {
    const auto& x = j["corex"];
    detail::read_field(x, "factors", c.corex.factors, errors, "corex.");
    detail::read_field(x, "iters", c.corex.iters, errors, "corex.");
    detail::read_field(x, "lr", c.corex.lr, errors, "corex.");
    detail::read_field(x, "top_k_props", c.corex.top_k_props, errors, "corex.");
    detail::read_field(x, "top_k_docs", c.corex.top_k_docs, errors, "corex.");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::read_field(e, "task", c.eval.task, errors, "eval.");
    detail::read_field(e, "ks", c.eval.ks, errors, "eval.");
    detail::read_field(e, "folds", c.eval.folds, errors, "eval.");
    detail::read_field(e, "n_neighbors", c.eval.n_neighbors, errors, "eval.");
    detail::read_field(e, "label_scheme", c.eval.label_scheme, errors, "eval.");
    detail::read_field(e, "representation", c.eval.representation, errors, "eval.");
    detail::read_field(e, "similarity", c.eval.similarity, errors, "eval.");
    detail::read_field(e, "majority", c.eval.majority, errors, "eval.");
  }
  detail::read_field(j, "seed", c.seed, errors, "");
  detail::read_field(j, "threads", c.threads, errors, "");
  if (!errors.empty()) {
    std::string msg = "invalid config '" + path.string() + "':";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorCode::kConfig, msg);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stages

enum class Stage { kPropose, kLink, kDiscover, kEval, kReport, kAll };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::kPropose: return "propose";
    case Stage::kLink: return "link";
    case Stage::kDiscover: return "discover";
    case Stage::kEval: return "eval";
    case Stage::kReport: return "report";
    case Stage::kAll: return "all";
  }
  return "?";
}

namespace detail {

inline void require_path(const std::string& path, const char* what, std::vector<std::string>& errors) {
  if (path.empty()) errors.push_back(std::string("missing path for ") + what);
}

inline void require_artifact(const std::string& path, const char* what, const char* producer) {
  if (!fs::exists(path)) {
    fail(ErrorCode::kMissingArtifact, std::string("missing ") + what + " file '" + path + "' (produced by stage '" +
                                          producer + "')");
  }
}

inline std::string file_sha(const std::string& path) { return sha256_hex(read_file(path)); }

inline void write_meta(const std::string& artifact, Stage stage, const PipelineConfig& cfg, const json& inputs) {
  json meta = {{"stage", to_string(stage)},
               {"config_hash", cfg.hash()},
               {"inputs", inputs},
               {"artifact_sha256", file_sha(artifact)}};
  write_file_atomic(artifact + ".meta.json", meta.dump(2) + "\n");
}

inline std::string markdown_path(const std::string& report) {
  fs::path p(report);
  p.replace_extension(".md");
  return p.string();
}

inline std::shared_ptr<const LlmClient> make_llm(const PipelineConfig& cfg) {
  std::shared_ptr<const LlmClient> client;
  if (cfg.llm.backend.rfind("mock:", 0) == 0) {
    const std::string transcript = cfg.llm.backend.substr(5);
    if (!fs::exists(transcript)) fail(ErrorCode::kConfig, "mock transcript '" + transcript + "' does not exist");
    client = std::make_shared<MockLlmClient>(MockLlmClient::from_file(transcript));
  } else {
    HttpLlmClient::Options o;
    o.endpoint = cfg.llm.endpoint;
    client = std::make_shared<HttpLlmClient>(o);
  }
  if (!cfg.llm.cache_dir.empty()) client = std::make_shared<CachingLlmClient>(client, cfg.llm.cache_dir);
  return client;
}

inline std::shared_ptr<const EmbeddingProvider> make_embedder(const PipelineConfig& cfg) {
  if (cfg.linker.embedder == "local") return std::make_shared<HashingEmbedder>(cfg.linker.embed_dim);
  return std::make_shared<HttpEmbedder>(cfg.linker.embedder.substr(5), cfg.linker.embed_dim);
}

inline Goal make_goal(const PipelineConfig& cfg) {
  if (fs::is_directory(cfg.goal)) return load_goal(cfg.goal);
  return bundled_goal(cfg.goal);
}

inline std::vector<std::string> doc_ids_for(const std::string& corpus_path, std::size_t rows) {
  std::vector<std::string> ids;
  if (!corpus_path.empty() && fs::exists(corpus_path)) {
    const auto corpus = load_corpus(corpus_path);
    if (corpus.size() == rows) {
      for (const auto& d : corpus.documents) ids.push_back(d.id);
      return ids;
    }
    log_warn("corpus size does not match matrix rows; reporting row numbers", {{"corpus", corpus_path}});
  }
  for (std::size_t r = 0; r < rows; ++r) ids.push_back("#" + std::to_string(r));
  return ids;
}

inline void write_report(const CorexModel& model, const PropertyPool& pool, const CompatibilityMatrix& matrix,
                         const PipelineConfig& cfg) {
  const Eigen::MatrixXd c_gauss = apply_gaussianizer(model.gaussianizer, matrix.to_eigen());
  const auto assignment = assign_factors(model, c_gauss);
  const auto report = build_report(assignment, pool, matrix, doc_ids_for(cfg.paths.corpus, matrix.rows),
                                   cfg.corex.top_k_props, cfg.corex.top_k_docs);
  write_file_atomic(cfg.paths.report, report.to_json().dump(2) + "\n");
  write_file_atomic(markdown_path(cfg.paths.report), report.to_markdown());
}

}  // namespace detail

inline json run_propose(const PipelineConfig& cfg) {
  detail::require_artifact(cfg.paths.corpus, "corpus", "user input");
  const auto corpus = load_corpus(cfg.paths.corpus);
  const auto goal = detail::make_goal(cfg);
  const auto llm = detail::make_llm(cfg);
  BuildPoolOptions opt;
  opt.proposal.model = cfg.llm.model;
  opt.proposal.temperature = cfg.llm.temperature;
  opt.proposal.max_properties = cfg.llm.max_properties;
  opt.max_parallel = cfg.llm.max_parallel;
  opt.max_failure_fraction = cfg.llm.max_failure_fraction;
  const auto result = build_pool(corpus, goal, *llm, opt);
  save_pool(cfg.paths.pool, result.pool);
  detail::write_meta(cfg.paths.pool, Stage::kPropose, cfg, {{"corpus", detail::file_sha(cfg.paths.corpus)}});
  return {{"pool", cfg.paths.pool},
          {"properties", result.pool.size()},
          {"positives", result.pool.positives.size()},
          {"skipped", result.skipped}};
}

inline json run_link(const PipelineConfig& cfg) {
  detail::require_artifact(cfg.paths.corpus, "corpus", "user input");
  detail::require_artifact(cfg.paths.pool, "pool", "propose");
  const auto corpus = load_corpus(cfg.paths.corpus);
  const auto pool = load_pool(cfg.paths.pool);
  validate_pool(pool, corpus);
  Encoder enc(detail::make_embedder(cfg), cfg.linker.d_out);
  LinkTrainOptions opt;
  opt.batch_size = cfg.linker.batch;
  opt.epochs = cfg.linker.epochs;
  opt.lr = cfg.linker.lr;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  auto trained = train_encoder(pool, corpus, std::move(enc), opt);
  auto matrix = materialize_matrix(corpus, pool, trained.encoder, cfg.threads);
  if (cfg.linker.binarize) matrix = binarize(matrix, *cfg.linker.binarize);
  save_matrix(cfg.paths.matrix, matrix);
  detail::write_meta(cfg.paths.matrix, Stage::kLink, cfg,
                     {{"corpus", detail::file_sha(cfg.paths.corpus)}, {"pool", detail::file_sha(cfg.paths.pool)}});
  return {{"matrix", cfg.paths.matrix},
          {"rows", matrix.rows},
          {"cols", matrix.cols},
          {"binarized", matrix.binarized},
          {"epoch_loss", trained.epoch_loss}};
}

inline json run_discover(const PipelineConfig& cfg) {
  detail::require_artifact(cfg.paths.matrix, "matrix", "link");
  detail::require_artifact(cfg.paths.pool, "pool", "propose");
  const auto matrix = load_matrix(cfg.paths.matrix);
  const auto pool = load_pool(cfg.paths.pool);
  if (matrix.cols != pool.size()) {
    fail(ErrorCode::kStageFailed, "matrix has " + std::to_string(matrix.cols) + " columns but the pool has " +
                                      std::to_string(pool.size()) + " properties");
  }
  auto g = gaussianize(matrix);
  CorexOptions opt;
  opt.factors = cfg.corex.factors;
  opt.iters = cfg.corex.iters;
  opt.lr = cfg.corex.lr;
  opt.seed = cfg.seed;
  CorexModel model = fit_corex(g.data, opt);
  model.gaussianizer = std::move(g.gaussianizer);
  model.config_hash = cfg.hash();
  model.matrix_sha256 = detail::file_sha(cfg.paths.matrix);
  save_model(cfg.paths.model, model);
  detail::write_meta(cfg.paths.model, Stage::kDiscover, cfg,
                     {{"matrix", model.matrix_sha256}, {"pool", detail::file_sha(cfg.paths.pool)}});
  json summary = {{"model", cfg.paths.model},
                  {"factors", model.factors()},
                  {"initial_loss", model.loss_trace.front()},
                  {"final_loss", model.loss_trace.back()}};
  if (!cfg.paths.report.empty()) {
    detail::write_report(model, pool, matrix, cfg);
    summary["report"] = cfg.paths.report;
  }
  return summary;
}

inline json run_report(const PipelineConfig& cfg) {
  detail::require_artifact(cfg.paths.model, "model", "discover");
  detail::require_artifact(cfg.paths.matrix, "matrix", "link");
  detail::require_artifact(cfg.paths.pool, "pool", "propose");
  const auto model = load_model(cfg.paths.model);
  const auto matrix = load_matrix(cfg.paths.matrix);
  const auto pool = load_pool(cfg.paths.pool);
  if (model.matrix_sha256 != detail::file_sha(cfg.paths.matrix)) {
    fail(ErrorCode::kStageFailed, "model was not fit on matrix '" + cfg.paths.matrix + "'");
  }
  detail::write_report(model, pool, matrix, cfg);
  return {{"report", cfg.paths.report}, {"markdown", detail::markdown_path(cfg.paths.report)}};
}

inline json run_eval(const PipelineConfig& cfg) {
  detail::require_artifact(cfg.paths.corpus, "corpus", "user input");
  detail::require_artifact(cfg.paths.matrix, "matrix", "link");
  if (cfg.eval.representation == "z") detail::require_artifact(cfg.paths.model, "model", "discover");
  const auto corpus = load_corpus(cfg.paths.corpus);
  const auto matrix = load_matrix(cfg.paths.matrix);
  if (matrix.rows != corpus.size()) {
    fail(ErrorCode::kStageFailed, "matrix has " + std::to_string(matrix.rows) + " rows but the corpus has " +
                                      std::to_string(corpus.size()) + " documents");
  }
  Eigen::MatrixXd reps = matrix.to_eigen();
  if (cfg.eval.representation == "z") {
    const auto model = load_model(cfg.paths.model);
    if (model.matrix_sha256 != detail::file_sha(cfg.paths.matrix)) {
      fail(ErrorCode::kStageFailed, "refusing mismatched model/matrix pair: model '" + cfg.paths.model +
                                        "' was fit on a different matrix than '" + cfg.paths.matrix + "'");
    }
    reps = encode(model, reps);
  }
  std::vector<LabeledRepresentation> train, test;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& d = corpus.documents[i];
    LabeledRepresentation r{d.id, std::vector<double>(reps.cols()), d.gold_items, d.labels};
    for (Eigen::Index c = 0; c < reps.cols(); ++c) r.vector[c] = reps(static_cast<Eigen::Index>(i), c);
    (d.split == Split::kTrain ? train : test).push_back(std::move(r));
  }
  const Similarity sim = cfg.eval.similarity == "cosine" ? Similarity::kCosine : Similarity::kInnerProduct;
  EvalResult result;
  if (cfg.eval.task == "rec") {
    result = cfg.eval.majority ? majority_baseline(train, test, EvalTask::kRecommendation, cfg.eval.ks)
                               : hit_at_k_recommendation(train, test, cfg.eval.n_neighbors, cfg.eval.ks, sim, cfg.threads);
  } else if (cfg.eval.task == "action") {
    result = cfg.eval.majority ? majority_baseline(train, test, EvalTask::kNextAction)
                               : next_action_accuracy(train, test, sim, cfg.threads);
  } else {
    if (cfg.eval.label_scheme.empty()) fail(ErrorCode::kConfig, "probe task needs --label-scheme");
    const auto& probe_set = test.empty() ? train : test;
    result = cfg.eval.majority
                 ? majority_baseline(train, test, EvalTask::kProbe, cfg.eval.ks, cfg.eval.label_scheme)
                 : decision_tree_probe(probe_set, cfg.eval.label_scheme, cfg.eval.folds, cfg.seed, {}, cfg.threads);
  }
  result.config["representation"] = cfg.eval.representation;
  result.config["seed"] = cfg.seed;
  const json out = result.to_json();
  if (!cfg.paths.result.empty()) write_file_atomic(cfg.paths.result, out.dump(2) + "\n");
  return {{"result", cfg.paths.result}, {"metrics", result.metrics}};
}

/// Validates the config for `stage` and runs it. Throws Error; the caller
/// maps error codes to exit codes.
inline json run_stage(Stage stage, const PipelineConfig& cfg) {
  std::vector<std::string> errors = cfg.violations();
  auto need = [&](const std::string& p, const char* what) { detail::require_path(p, what, errors); };
  switch (stage) {
    case Stage::kPropose: need(cfg.paths.corpus, "corpus"); need(cfg.paths.pool, "pool output"); break;
    case Stage::kLink:
      need(cfg.paths.corpus, "corpus"); need(cfg.paths.pool, "pool"); need(cfg.paths.matrix, "matrix output");
      break;
    case Stage::kDiscover: need(cfg.paths.matrix, "matrix"); need(cfg.paths.pool, "pool"); need(cfg.paths.model, "model output"); break;
    case Stage::kReport:
      need(cfg.paths.model, "model"); need(cfg.paths.matrix, "matrix"); need(cfg.paths.pool, "pool");
      need(cfg.paths.report, "report output");
      break;
    case Stage::kEval:
      need(cfg.paths.corpus, "corpus"); need(cfg.paths.matrix, "matrix");
      if (cfg.eval.representation == "z") need(cfg.paths.model, "model");
      if (cfg.eval.task.empty()) errors.push_back("eval needs --task");
      break;
    case Stage::kAll:
      need(cfg.paths.corpus, "corpus"); need(cfg.paths.pool, "pool"); need(cfg.paths.matrix, "matrix");
      need(cfg.paths.model, "model"); need(cfg.paths.report, "report");
      break;
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorCode::kConfig, msg);
  }

  json summary = {{"stage", to_string(stage)}, {"status", "ok"}, {"config_hash", cfg.hash()}};
  switch (stage) {
    case Stage::kPropose: summary["artifacts"] = run_propose(cfg); break;
    case Stage::kLink: summary["artifacts"] = run_link(cfg); break;
    case Stage::kDiscover: summary["artifacts"] = run_discover(cfg); break;
    case Stage::kReport: summary["artifacts"] = run_report(cfg); break;
    case Stage::kEval: summary["artifacts"] = run_eval(cfg); break;
    case Stage::kAll: {
      json arts = json::object();
      arts["propose"] = run_propose(cfg);
      arts["link"] = run_link(cfg);
      arts["discover"] = run_discover(cfg);
      if (!cfg.eval.task.empty()) arts["eval"] = run_eval(cfg);
      summary["artifacts"] = arts;
      break;
    }
  }
  return summary;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return kConfigError;
    case ErrorCode::kMissingArtifact: return kMissingArtifact;
    default: return kStageFailure;
  }
}

/// Command-line entry point. Flags override values from --config.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"goalfactor: goal-oriented latent factor discovery"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, llm, goal, log_level = "info", ks_text;
  std::string corpus, pool, matrix, model, report, result, out_path;
  std::string embedder, task, label_scheme, representation, similarity, model_name, endpoint, cache_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, epochs, batch, factors, iters, folds, n_neighbors, d_out, max_parallel,
      top_props, top_docs;
  std::optional<double> binarize, link_lr, corex_lr, temperature;
  bool majority = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "global seed");
  app.add_option("--llm", llm, "LLM backend: http | mock:<transcript.jsonl>");
  app.add_option("--model-name", model_name, "LLM model name");
  app.add_option("--temperature", temperature, "LLM temperature");
  app.add_option("--endpoint", endpoint, "LLM chat-completions URL");
  app.add_option("--cache-dir", cache_dir, "LLM response cache directory");
  app.add_option("--max-parallel", max_parallel, "concurrent LLM proposals");
  app.add_option("--goal", goal, "bundled goal (inspired|alfworld|bills) or template directory");
  app.add_option("--threads", threads, "worker threads");
  app.add_option("--log-level", log_level, "debug|info|warn|error|off");
  app.add_option("--corpus", corpus, "documents.jsonl");
  app.add_option("--pool", pool, "properties.jsonl");
  app.add_option("--matrix", matrix, "matrix file (ILFM)");
  app.add_option("--model", model, "latent factor model file");
  app.add_option("--report", report, "factors.json (Markdown written alongside)");
  app.add_option("--out", out_path, "primary output of the stage");
  app.add_option("--embedder", embedder, "local | http:<url>");
  app.add_option("--epochs", epochs, "encoder training epochs");
  app.add_option("--batch", batch, "in-batch candidate count K");
  app.add_option("--link-lr", link_lr, "encoder learning rate");
  app.add_option("--d-out", d_out, "encoder output size (0: embedding size)");
  app.add_option("--binarize", binarize, "binarize the top fraction of links");
  app.add_option("--factors", factors, "number of latent factors");
  app.add_option("--iters", iters, "factor model iterations");
  app.add_option("--corex-lr", corex_lr, "factor model learning rate");
  app.add_option("--top-props", top_props, "properties listed per factor");
  app.add_option("--top-docs", top_docs, "documents listed per factor");
  app.add_option("--task", task, "rec | action | probe");
  app.add_option("--ks", ks_text, "comma-separated k values");
  app.add_option("--folds", folds, "probe folds");
  app.add_option("--n-neighbors", n_neighbors, "recommendation neighbourhood size");
  app.add_option("--label-scheme", label_scheme, "probe label scheme");
  app.add_option("--representation", representation, "z (latent factors) | c (raw scores)");
  app.add_option("--similarity", similarity, "cosine | inner_product");
  app.add_flag("--majority", majority, "report the majority baseline instead");

  std::vector<std::pair<Stage, CLI::App*>> subs;
  for (Stage s : {Stage::kPropose, Stage::kLink, Stage::kDiscover, Stage::kEval, Stage::kReport, Stage::kAll}) {
    subs.emplace_back(s, app.add_subcommand(to_string(s)));
  }
  subs[0].second->description("propose properties per train document and build the pool");
  subs[1].second->description("train the dual encoder and materialize the data-property matrix");
  subs[2].second->description("fit the latent factor model and group properties");
  subs[3].second->description("evaluate latent representations on a downstream task");
  subs[4].second->description("write the factor report from a fitted model");
  subs[5].second->description("run propose, link, discover (and eval when a task is set)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : kConfigError;
  }

  Stage stage = Stage::kAll;
  for (auto& [s, sub] : subs)
    if (sub->parsed()) stage = s;

  static const std::map<std::string, LogLevel> kLevels = {{"debug", LogLevel::kDebug}, {"info", LogLevel::kInfo},
                                                          {"warn", LogLevel::kWarn},   {"error", LogLevel::kError},
                                                          {"off", LogLevel::kOff}};
  if (!kLevels.count(log_level)) {
    err << "invalid configuration:\n  --log-level must be debug, info, warn, error or off\n";
    return kConfigError;
  }
  set_log_level(kLevels.at(log_level));

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    auto set_str = [](std::string& dst, const std::string& src) {
      if (!src.empty()) dst = src;
    };
    set(cfg.seed, seed);
    set(cfg.threads, threads);
    set_str(cfg.llm.backend, llm);
    set_str(cfg.llm.model, model_name);
    set(cfg.llm.temperature, temperature);
    set_str(cfg.llm.endpoint, endpoint);
    set_str(cfg.llm.cache_dir, cache_dir);
    set(cfg.llm.max_parallel, max_parallel);
    set_str(cfg.goal, goal);
    set_str(cfg.paths.corpus, corpus);
    set_str(cfg.paths.pool, pool);
    set_str(cfg.paths.matrix, matrix);
    set_str(cfg.paths.model, model);
    set_str(cfg.paths.report, report);
    set_str(cfg.linker.embedder, embedder);
    set(cfg.linker.epochs, epochs);
    set(cfg.linker.batch, batch);
    set(cfg.linker.lr, link_lr);
    set(cfg.linker.d_out, d_out);
    if (binarize) cfg.linker.binarize = *binarize;
    set(cfg.corex.factors, factors);
    set(cfg.corex.iters, iters);
    set(cfg.corex.lr, corex_lr);
    set(cfg.corex.top_k_props, top_props);
    set(cfg.corex.top_k_docs, top_docs);
    set_str(cfg.eval.task, task);
    set(cfg.eval.folds, folds);
    set(cfg.eval.n_neighbors, n_neighbors);
    set_str(cfg.eval.label_scheme, label_scheme);
    set_str(cfg.eval.representation, representation);
    set_str(cfg.eval.similarity, similarity);
    if (majority) cfg.eval.majority = true;
    if (!ks_text.empty()) {
      cfg.eval.ks.clear();
      std::stringstream ss(ks_text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          std::size_t used = 0;
          const long v = std::stol(item, &used);
          if (used != item.size() || v < 1) throw std::invalid_argument(item);
          cfg.eval.ks.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
          fail(ErrorCode::kConfig, "invalid configuration:\n  --ks must be comma-separated positive integers");
        }
      }
    }
    if (!out_path.empty()) {
      switch (stage) {
        case Stage::kPropose: cfg.paths.pool = out_path; break;
        case Stage::kLink: cfg.paths.matrix = out_path; break;
        case Stage::kDiscover: cfg.paths.model = out_path; break;
        case Stage::kReport: cfg.paths.report = out_path; break;
        case Stage::kEval: cfg.paths.result = out_path; break;
        case Stage::kAll:
          fail(ErrorCode::kConfig, "invalid configuration:\n  'all' takes artifact paths from --config or per-artifact flags");
      }
    }
    const json summary = run_stage(stage, cfg);
    out << summary.dump() << std::endl;
    return kOk;
  } catch (const Error& e) {
    const int rc = exit_code_for(e.code());
    err << json{{"level", "error"}, {"msg", e.what()}, {"code", to_string(e.code())}, {"exit", rc}}.dump()
        << std::endl;
    return rc;
  } catch (const std::exception& e) {
    err << json{{"level", "error"}, {"msg", e.what()}, {"exit", int(kStageFailure)}}.dump() << std::endl;
    return kStageFailure;
  }
}

}  // namespace goalfactor::cli
