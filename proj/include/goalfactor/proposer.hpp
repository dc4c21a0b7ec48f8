#pragma once

#include <cctype>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "goalfactor/bundled_goals.hpp"
#include "goalfactor/common.hpp"
#include "goalfactor/text.hpp"
#include "goalfactor/types.hpp"

namespace goalfactor {

// ---------------------------------------------------------------------------
// Chat requests

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;

  /// Wire body. nlohmann objects keep keys sorted, so dump() is canonical.
  json to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    json body = {{"model", model}, {"messages", msgs}, {"temperature", temperature}};
    if (seed) body["seed"] = *seed;
    return body;
  }

  std::string canonical_body() const { return to_json().dump(); }
  std::string cache_key() const { return sha256_hex(canonical_body()); }

  std::size_t user_turns() const {
    std::size_t n = 0;
    for (const auto& m : messages) n += m.role == "user";
    return n;
  }
};

/// Chat-completion backend. Implementations must tolerate concurrent calls.
/// Transport failures surface as Error(kTransport).
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const ChatRequest& request) const = 0;
};

/// Serves requests from a directory holding one file per request, named by
/// the SHA-256 of the canonical request body; misses go to the inner client
/// and are stored with write-temp-then-rename.
class CachingLlmClient final : public LlmClient {
 public:
  CachingLlmClient(std::shared_ptr<const LlmClient> inner, std::filesystem::path dir)
      : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::filesystem::path path_for(const ChatRequest& request) const { return dir_ / (request.cache_key() + ".json"); }

  std::string complete(const ChatRequest& request) const override {
    const auto path = path_for(request);
    const json body = request.to_json();
    if (std::filesystem::exists(path)) {
      json entry;
      try {
        entry = json::parse(read_file(path));
      } catch (const json::parse_error& e) {
        fail(ErrorCode::kCacheCorruption, "cache entry '" + path.string() + "' is not valid JSON");
      }
      if (!entry.is_object() || entry.value("request", json()) != body || !entry.contains("response") ||
          !entry["response"].is_string()) {
        fail(ErrorCode::kCacheCorruption, "cache entry '" + path.string() + "' does not match its request");
      }
      return entry["response"].get<std::string>();
    }
    std::string response = inner_->complete(request);
    json entry = {{"request", body}, {"response", response}};
    write_file_atomic(path, entry.dump(2) + "\n");
    return response;
  }

 private:
  std::shared_ptr<const LlmClient> inner_;
  std::filesystem::path dir_;
};

/// Offline replay backend. The transcript is JSONL; each entry is
///   {"turn": 1|2, "contains": str, "response": str}
/// and matches a request with that many user messages whose concatenated
/// message text contains `contains`. Entries may instead carry
/// {"key": sha256-of-request, "response": str}. First match in file order
/// wins; no match is a transport error.
class MockLlmClient final : public LlmClient {
 public:
  struct Entry {
    std::optional<std::size_t> turn;
    std::string contains;
    std::string key;
    std::string response;
  };

  explicit MockLlmClient(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  static MockLlmClient from_file(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    std::vector<Entry> entries;
    std::size_t line_no = 0, pos = 0;
    while (pos < content.size()) {
      std::size_t nl = content.find('\n', pos);
      if (nl == std::string::npos) nl = content.size();
      const std::string line = content.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        fail(ErrorCode::kParse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
      }
      if (!j.is_object() || !j.contains("response") || !j["response"].is_string()) {
        fail(ErrorCode::kParse, path.string() + " line " + std::to_string(line_no) + ": missing \"response\"");
      }
      Entry e;
      if (j.contains("turn")) e.turn = j["turn"].get<std::size_t>();
      e.contains = j.value("contains", "");
      e.key = j.value("key", "");
      e.response = j["response"].get<std::string>();
      entries.push_back(std::move(e));
    }
    return MockLlmClient(std::move(entries));
  }

  std::string complete(const ChatRequest& request) const override {
    std::string text;
    for (const auto& m : request.messages) text += m.content + "\n";
    const std::size_t turn = request.user_turns();
    std::string key;
    for (const auto& e : entries_) {
      if (!e.key.empty()) {
        if (key.empty()) key = request.cache_key();
        if (e.key == key) return e.response;
        continue;
      }
      if (e.turn && *e.turn != turn) continue;
      if (text.find(e.contains) != std::string::npos) return e.response;
    }
    fail(ErrorCode::kTransport, "mock transcript has no response for this request (turn " + std::to_string(turn) + ")");
  }

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Parsing

/// Items of a numbered or bulleted list: lines starting with "N.", "N)" or
/// "-", with the marker, surrounding whitespace and quotes stripped.
inline std::vector<std::string> parse_numbered_list(std::string_view text) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; };
  auto strip = [&](std::string_view s) {
    static constexpr std::string_view kQuotes[] = {"\"", "'", "`", "\xE2\x80\x9C", "\xE2\x80\x9D",
                                                   "\xE2\x80\x98", "\xE2\x80\x99"};
    bool changed = true;
    while (changed && !s.empty()) {
      changed = false;
      while (!s.empty() && is_space(s.front())) { s.remove_prefix(1); changed = true; }
      while (!s.empty() && is_space(s.back())) { s.remove_suffix(1); changed = true; }
      for (auto q : kQuotes) {
        if (s.starts_with(q)) { s.remove_prefix(q.size()); changed = true; }
        if (s.ends_with(q)) { s.remove_suffix(q.size()); changed = true; }
      }
    }
    return s;
  };

  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;

    std::size_t i = 0;
    while (i < line.size() && is_space(line[i])) ++i;
    std::optional<std::string_view> body;
    if (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
      std::size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      if (j < line.size() && (line[j] == '.' || line[j] == ')')) body = line.substr(j + 1);
    } else if (i < line.size() && line[i] == '-') {
      if (i + 1 == line.size() || is_space(line[i + 1])) body = line.substr(i + 1);
    }
    if (!body) continue;
    const auto item = strip(*body);
    if (!item.empty()) items.emplace_back(item);
  }
  return items;
}

// ---------------------------------------------------------------------------
// Proposal

struct ProposalOptions {
  std::string model = "gpt-4o";
  double temperature = 0.0;
  std::size_t max_properties = 30;
};

/// Two calls: the describe prompt with the document substituted, then the
/// format prompt appended to that exchange. Returns the parsed list, capped
/// at max_properties. Transport failures become Error(kProposalFailed);
/// cache corruption propagates unchanged.
inline std::vector<std::string> propose_for_document(const Document& doc, const Goal& goal, const LlmClient& llm,
                                                     const ProposalOptions& opt = {}) {
  if (doc.text.empty()) fail(ErrorCode::kEmptyText, "document '" + doc.id + "' has empty text");
  ChatRequest req;
  req.model = opt.model;
  req.temperature = opt.temperature;
  req.messages.push_back({"user", goal.render_description(doc.text)});
  try {
    const std::string description = llm.complete(req);
    req.messages.push_back({"assistant", description});
    req.messages.push_back({"user", goal.format_prompt});
    auto items = parse_numbered_list(llm.complete(req));
    if (items.size() > opt.max_properties) items.resize(opt.max_properties);
    return items;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kTransport) {
      fail(ErrorCode::kProposalFailed, "proposal failed for document '" + doc.id + "': " + e.what());
    }
    throw;
  }
}

struct BuildPoolOptions {
  ProposalOptions proposal;
  std::size_t max_parallel = 4;
  double max_failure_fraction = 0.5;
};

struct BuildPoolResult {
  PropertyPool pool;
  std::vector<std::string> skipped;  // ids of documents whose proposal failed
};

/// Runs the proposal over the train split with bounded parallelism and merges
/// results in corpus order: properties are keyed by canonical form, the first
/// surface text seen wins, and pids follow first appearance.
inline BuildPoolResult build_pool(const Corpus& corpus, const Goal& goal, const LlmClient& llm,
                                  const BuildPoolOptions& opt = {}) {
  require(opt.max_parallel >= 1, "build_pool: max_parallel must be at least 1");
  const auto train = corpus.indices(Split::kTrain);
  std::vector<std::optional<std::vector<std::string>>> proposals(train.size());
  parallel_for(train.size(), opt.max_parallel, [&](std::size_t t) {
    const auto& doc = corpus.documents[train[t]];
    try {
      proposals[t] = propose_for_document(doc, goal, llm, opt.proposal);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kProposalFailed) throw;
      log_warn("document skipped", {{"doc_id", doc.id}, {"reason", e.what()}});
    }
  });

  BuildPoolResult out;
  std::unordered_map<std::string, std::uint32_t> by_key;
  for (std::size_t t = 0; t < train.size(); ++t) {
    const auto& doc = corpus.documents[train[t]];
    if (!proposals[t]) {
      out.skipped.push_back(doc.id);
      continue;
    }
    for (const auto& text : *proposals[t]) {
      std::string key = canonicalize(text);
      if (key.empty()) continue;
      auto [it, inserted] = by_key.emplace(key, static_cast<std::uint32_t>(out.pool.properties.size()));
      if (inserted) out.pool.properties.push_back({it->second, text, std::move(key)});
      out.pool.positives.emplace(doc.id, it->second);
    }
  }
  if (!train.empty() &&
      static_cast<double>(out.skipped.size()) > opt.max_failure_fraction * static_cast<double>(train.size())) {
    fail(ErrorCode::kStageFailed, std::to_string(out.skipped.size()) + " of " + std::to_string(train.size()) +
                                      " documents failed proposal");
  }
  if (!out.skipped.empty()) {
    log_warn("proposal skipped documents", {{"count", out.skipped.size()}, {"doc_ids", out.skipped}});
  }
  return out;
}

/// Loads a goal from a directory holding describe.txt and format.txt.
inline Goal load_goal(const std::filesystem::path& dir) {
  return Goal::make(dir.filename().string(), read_file(dir / "describe.txt"), read_file(dir / "format.txt"));
}

}  // namespace goalfactor
