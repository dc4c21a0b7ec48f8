#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "goalfactor/common.hpp"
#include "goalfactor/text.hpp"
#include "goalfactor/types.hpp"

namespace goalfactor {

// ---------------------------------------------------------------------------
// documents.jsonl

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  fail(ErrorCode::kParse, "split must be \"train\" or \"test\", got \"" + s + "\"");
}

inline Document document_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::kParse, "document must be a JSON object");
  Document d;
  for (const auto& [key, value] : j.items()) {
    if (key == "id") {
      if (!value.is_string()) fail(ErrorCode::kParse, "\"id\" must be a string");
      d.id = value.get<std::string>();
    } else if (key == "text") {
      if (!value.is_string()) fail(ErrorCode::kParse, "\"text\" must be a string");
      d.text = value.get<std::string>();
    } else if (key == "labels") {
      if (value.is_null()) continue;
      if (!value.is_object()) fail(ErrorCode::kParse, "\"labels\" must be an object");
      for (const auto& [scheme, cls] : value.items()) {
        if (!cls.is_string()) fail(ErrorCode::kParse, "label \"" + scheme + "\" must be a string");
        d.labels[scheme] = cls.get<std::string>();
      }
    } else if (key == "gold_items") {
      if (value.is_null()) continue;
      if (!value.is_array()) fail(ErrorCode::kParse, "\"gold_items\" must be an array");
      for (const auto& g : value) {
        if (!g.is_string()) fail(ErrorCode::kParse, "gold items must be strings");
        d.gold_items.push_back(g.get<std::string>());
      }
    } else if (key == "split") {
      if (!value.is_string()) fail(ErrorCode::kParse, "\"split\" must be a string");
      d.split = parse_split(value.get<std::string>());
    } else {
      d.extra[key] = value;
    }
  }
  if (!j.contains("id")) fail(ErrorCode::kParse, "missing \"id\"");
  if (!j.contains("text")) fail(ErrorCode::kParse, "missing \"text\"");
  if (!j.contains("split")) fail(ErrorCode::kParse, "missing \"split\"");
  if (d.id.empty()) fail(ErrorCode::kParse, "\"id\" must be nonempty");
  if (d.text.empty()) fail(ErrorCode::kEmptyText, "document '" + d.id + "' has empty text");
  return d;
}

inline json document_to_json(const Document& d) {
  json j = d.extra;
  j["id"] = d.id;
  j["text"] = d.text;
  if (!d.labels.empty()) j["labels"] = d.labels;
  if (!d.gold_items.empty()) j["gold_items"] = d.gold_items;
  j["split"] = to_string(d.split);
  return j;
}

/// Parses line-delimited documents. Line numbers in errors are 1-based.
/// Trailing blank lines are ignored; blank lines elsewhere are rejected so
/// document index always equals line index.
inline Corpus parse_corpus(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  auto blank = [](std::string_view s) {
    return s.find_first_not_of(" \t") == std::string_view::npos;
  };
  while (!lines.empty() && blank(lines.back())) lines.pop_back();

  Corpus corpus;
  std::unordered_map<std::string, std::size_t> first_line;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = "line " + std::to_string(i + 1);
    if (blank(lines[i])) fail(ErrorCode::kParse, where + ": blank line");
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
    Document d;
    try {
      d = document_from_json(j);
    } catch (const Error& e) {
      fail(e.code(), where + ": " + e.what());
    }
    auto [it, inserted] = first_line.emplace(d.id, i + 1);
    if (!inserted) {
      fail(ErrorCode::kDuplicateId, "duplicate id '" + d.id + "' on lines " +
                                        std::to_string(it->second) + " and " +
                                        std::to_string(i + 1));
    }
    corpus.documents.push_back(std::move(d));
  }
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kIo, "corpus file '" + path.string() + "' does not exist");
  }
  try {
    return parse_corpus(read_file(path));
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents) out += document_to_json(d).dump() + "\n";
  return out;
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file_atomic(path, serialize_corpus(corpus));
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectoryElement {
  enum class Kind { kState, kAction };
  Kind kind;
  std::string text;
};

inline TrajectoryElement state(std::string text) {
  return {TrajectoryElement::Kind::kState, std::move(text)};
}
inline TrajectoryElement action(std::string text) {
  return {TrajectoryElement::Kind::kAction, std::move(text)};
}

struct ContextActionPair {
  Document document;
  std::string gold_action;
};

/// Breaks <s1, a1, ..., sn, an> into n (context, next action) pairs where
/// context i is the prefix <s1, a1, ..., si>, serialized one element per line
/// as "state: ..." / "action: ...".
inline std::vector<ContextActionPair> split_trajectory(const std::vector<TrajectoryElement>& traj,
                                                       const std::string& id_prefix = "traj",
                                                       Split split = Split::kTrain) {
  if (traj.empty()) fail(ErrorCode::kInvalidArgument, "empty trajectory");
  if (traj.size() % 2 != 0) {
    fail(ErrorCode::kInvalidArgument, "trajectory must end with an action");
  }
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto want = i % 2 == 0 ? TrajectoryElement::Kind::kState : TrajectoryElement::Kind::kAction;
    if (traj[i].kind != want) {
      fail(ErrorCode::kInvalidArgument, "malformed alternation at element " + std::to_string(i) +
                                            ": expected " +
                                            (want == TrajectoryElement::Kind::kState ? "state" : "action"));
    }
  }
  std::vector<ContextActionPair> out;
  std::string context;
  for (std::size_t i = 0; i < traj.size(); i += 2) {
    if (i > 0) context += "\naction: " + traj[i - 1].text + "\n";
    context += "state: " + traj[i].text;
    Document d;
    d.id = id_prefix + "#" + std::to_string(i / 2);
    d.text = context;
    d.gold_items = {traj[i + 1].text};
    d.split = split;
    out.push_back({std::move(d), traj[i + 1].text});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string_view bytes(std::size_t n) {
    if (data_.size() - pos_ < n) fail(ErrorCode::kFormat, what_ + ": truncated file");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return std::string(bytes(u32())); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix file: "ILFM", u8 version 1, u32 rows, u32 cols, u8 binarized flag,
// then row-major little-endian f32 values.

inline constexpr std::string_view kMatrixMagic = "ILFM";
inline constexpr std::uint8_t kMatrixVersion = 1;

inline std::string serialize_matrix(const CompatibilityMatrix& m) {
  require(m.values.size() == static_cast<std::size_t>(m.rows) * m.cols, "matrix value count mismatch");
  detail::ByteWriter w;
  w.bytes(kMatrixMagic);
  w.u8(kMatrixVersion);
  w.u32(m.rows);
  w.u32(m.cols);
  w.u8(m.binarized ? 1 : 0);
  for (float v : m.values) w.f32(v);
  return w.take();
}

inline CompatibilityMatrix deserialize_matrix(std::string_view bytes) {
  detail::ByteReader r(bytes, "matrix");
  if (bytes.size() < kMatrixMagic.size() || r.bytes(kMatrixMagic.size()) != kMatrixMagic) {
    fail(ErrorCode::kFormat, "matrix: bad magic (expected ILFM)");
  }
  const auto version = r.u8();
  if (version != kMatrixVersion) {
    fail(ErrorCode::kFormat, "matrix: unsupported version " + std::to_string(version));
  }
  CompatibilityMatrix m;
  m.rows = r.u32();
  m.cols = r.u32();
  const auto flag = r.u8();
  if (flag > 1) fail(ErrorCode::kFormat, "matrix: bad binarized flag");
  m.binarized = flag == 1;
  const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
  if (r.remaining() != n * 4) {
    fail(ErrorCode::kFormat, r.remaining() < n * 4 ? "matrix: truncated file" : "matrix: trailing bytes");
  }
  m.values.resize(n);
  for (auto& v : m.values) v = r.f32();
  return m;
}

inline void save_matrix(const std::filesystem::path& path, const CompatibilityMatrix& m) {
  write_file_atomic(path, serialize_matrix(m));
}

inline CompatibilityMatrix load_matrix(const std::filesystem::path& path) {
  return deserialize_matrix(read_file(path));
}

// ---------------------------------------------------------------------------
// properties.jsonl: {"pid": u32, "text": str, "source_doc_ids": [str]}

inline std::string serialize_pool(const PropertyPool& pool) {
  std::vector<std::vector<std::string>> sources(pool.properties.size());
  for (const auto& [doc, pid] : pool.positives) {
    require(pid < sources.size(), "positive references unknown pid " + std::to_string(pid));
    sources[pid].push_back(doc);
  }
  std::string out;
  for (const auto& p : pool.properties) {
    json j;
    j["pid"] = p.pid;
    j["text"] = p.text;
    j["source_doc_ids"] = sources[p.pid];
    out += j.dump() + "\n";
  }
  return out;
}

inline PropertyPool parse_pool(std::string_view content) {
  PropertyPool pool;
  std::unordered_map<std::string, std::uint32_t> keys;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "properties line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("pid") || !j["pid"].is_number_unsigned() || !j.contains("text") ||
        !j["text"].is_string()) {
      fail(ErrorCode::kParse, where + ": expected {\"pid\": u32, \"text\": str, ...}");
    }
    Property p;
    p.pid = j["pid"].get<std::uint32_t>();
    p.text = j["text"].get<std::string>();
    p.canonical_key = canonicalize(p.text);
    if (p.pid != pool.properties.size()) {
      fail(ErrorCode::kFormat, where + ": pids must be contiguous from 0 in file order");
    }
    if (p.canonical_key.empty()) fail(ErrorCode::kFormat, where + ": property text has empty key");
    if (!keys.emplace(p.canonical_key, p.pid).second) {
      fail(ErrorCode::kFormat, where + ": duplicate property key '" + p.canonical_key + "'");
    }
    if (j.contains("source_doc_ids")) {
      for (const auto& d : j["source_doc_ids"]) {
        if (!d.is_string()) fail(ErrorCode::kParse, where + ": source_doc_ids must be strings");
        pool.positives.emplace(d.get<std::string>(), p.pid);
      }
    }
    pool.properties.push_back(std::move(p));
  }
  return pool;
}

inline void save_pool(const std::filesystem::path& path, const PropertyPool& pool) {
  write_file_atomic(path, serialize_pool(pool));
}

inline PropertyPool load_pool(const std::filesystem::path& path) {
  return parse_pool(read_file(path));
}

/// Checks the pool invariants against the corpus it was proposed from.
inline void validate_pool(const PropertyPool& pool, const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& d : corpus.documents) ids.insert(d.id);
  std::set<std::string> keys;
  for (std::size_t i = 0; i < pool.properties.size(); ++i) {
    const auto& p = pool.properties[i];
    if (p.pid != i) fail(ErrorCode::kFormat, "pool pids are not contiguous");
    if (p.canonical_key.empty()) fail(ErrorCode::kFormat, "property with empty key");
    if (!keys.insert(p.canonical_key).second) fail(ErrorCode::kFormat, "duplicate key " + p.canonical_key);
  }
  for (const auto& [doc, pid] : pool.positives) {
    if (pid >= pool.properties.size()) fail(ErrorCode::kFormat, "positive with unknown pid");
    if (!ids.count(doc)) fail(ErrorCode::kFormat, "positive references unknown document '" + doc + "'");
  }
}

// ---------------------------------------------------------------------------
// Model file: "ILFC", u8 version, then fields in declaration order.

inline constexpr std::string_view kModelMagic = "ILFC";
inline constexpr std::uint8_t kModelVersion = 1;

inline std::string serialize_model(const CorexModel& model) {
  detail::ByteWriter w;
  w.bytes(kModelMagic);
  w.u8(kModelVersion);
  const auto m = static_cast<std::uint32_t>(model.weights.rows());
  const auto p = static_cast<std::uint32_t>(model.weights.cols());
  w.u32(m);
  w.u32(p);
  for (std::uint32_t j = 0; j < m; ++j)
    for (std::uint32_t i = 0; i < p; ++i) w.f64(model.weights(j, i));
  w.f64(model.noise_var);
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.loss_trace.size()));
  for (double v : model.loss_trace) w.f64(v);
  w.u32(static_cast<std::uint32_t>(model.gaussianizer.sorted_columns.size()));
  for (const auto& col : model.gaussianizer.sorted_columns) {
    w.u32(static_cast<std::uint32_t>(col.size()));
    for (double v : col) w.f64(v);
  }
  w.str(model.config_hash);
  w.str(model.matrix_sha256);
  return w.take();
}

inline CorexModel deserialize_model(std::string_view bytes) {
  detail::ByteReader r(bytes, "model");
  if (bytes.size() < kModelMagic.size() || r.bytes(kModelMagic.size()) != kModelMagic) {
    fail(ErrorCode::kFormat, "model: bad magic (expected ILFC)");
  }
  const auto version = r.u8();
  if (version != kModelVersion) fail(ErrorCode::kFormat, "model: unsupported version " + std::to_string(version));
  CorexModel model;
  const auto m = r.u32();
  const auto p = r.u32();
  if (static_cast<std::uint64_t>(m) * p * 8 > r.remaining()) fail(ErrorCode::kFormat, "model: truncated file");
  model.weights.resize(m, p);
  for (std::uint32_t j = 0; j < m; ++j)
    for (std::uint32_t i = 0; i < p; ++i) model.weights(j, i) = r.f64();
  model.noise_var = r.f64();
  model.seed = r.u64();
  const auto trace_len = r.u32();
  if (static_cast<std::uint64_t>(trace_len) * 8 > r.remaining()) fail(ErrorCode::kFormat, "model: truncated file");
  model.loss_trace.resize(trace_len);
  for (auto& v : model.loss_trace) v = r.f64();
  const auto ncols = r.u32();
  if (static_cast<std::uint64_t>(ncols) * 4 > r.remaining()) fail(ErrorCode::kFormat, "model: truncated file");
  model.gaussianizer.sorted_columns.resize(ncols);
  for (auto& col : model.gaussianizer.sorted_columns) {
    const auto n = r.u32();
    if (static_cast<std::uint64_t>(n) * 8 > r.remaining()) fail(ErrorCode::kFormat, "model: truncated file");
    col.resize(n);
    for (auto& v : col) v = r.f64();
  }
  model.config_hash = r.str();
  model.matrix_sha256 = r.str();
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "model: trailing bytes");
  return model;
}

inline void save_model(const std::filesystem::path& path, const CorexModel& model) {
  write_file_atomic(path, serialize_model(model));
}

inline CorexModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

}  // namespace goalfactor
