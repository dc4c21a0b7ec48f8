#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unistd.h>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

namespace goalfactor {

using json = nlohmann::json;

enum class ErrorCode {
  kInvalidArgument,
  kParse,
  kDuplicateId,
  kEmptyText,
  kIo,
  kFormat,
  kTransport,
  kCacheCorruption,
  kProposalFailed,
  kNumerical,
  kConfig,
  kMissingArtifact,
  kStageFailed,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kEmptyText: return "empty_text";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kCacheCorruption: return "cache_corruption";
    case ErrorCode::kProposalFailed: return "proposal_failed";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMissingArtifact: return "missing_artifact";
    case ErrorCode::kStageFailed: return "stage_failed";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::kInvalidArgument, what);
}

// ---------------------------------------------------------------------------
// Logging: one JSON object per line on stderr.

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

namespace detail {
inline std::atomic<int>& log_threshold() {
  static std::atomic<int> level{static_cast<int>(LogLevel::kInfo)};
  return level;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_threshold() = static_cast<int>(level); }

inline void log(LogLevel level, std::string_view msg, json fields = json::object()) {
  if (static_cast<int>(level) < detail::log_threshold()) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  json line = json::object();
  line["level"] = kNames[static_cast<int>(level)];
  line["msg"] = msg;
  for (auto& [k, v] : fields.items()) line[k] = v;
  std::lock_guard lock(detail::log_mutex());
  std::cerr << line.dump() << '\n';
}

inline void log_warn(std::string_view msg, json fields = json::object()) {
  log(LogLevel::kWarn, msg, std::move(fields));
}
inline void log_info(std::string_view msg, json fields = json::object()) {
  log(LogLevel::kInfo, msg, std::move(fields));
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::kIo, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::atomic<std::uint64_t> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIo, "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorCode::kIo, "cannot rename into '" + path.string() + "': " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// Parallelism

inline std::size_t default_thread_count() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; if several indices throw, the lowest one is
// rethrown so failures do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (n == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();
  if (err) std::rethrow_exception(err);
}

}  // namespace goalfactor
