#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "goalfactor/common.hpp"

namespace goalfactor {

/// Frozen text embedder. embed() must be deterministic and return exactly
/// dim() finite values.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
  virtual std::vector<float> embed(std::string_view text) const = 0;

  virtual std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) const {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }
};

inline void check_embedding(const std::vector<float>& v, std::size_t dim, std::string_view provider) {
  if (v.size() != dim) {
    fail(ErrorCode::kFormat, std::string(provider) + ": expected " + std::to_string(dim) + " values, got " +
                                 std::to_string(v.size()));
  }
  for (float x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::kNumerical, std::string(provider) + ": non-finite embedding value");
  }
}

/// Offline embedder: signed feature hashing of lowercase word unigrams,
/// word bigrams and character trigrams, L2-normalized.
class HashingEmbedder final : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dim = 384) : dim_(dim) { require(dim > 0, "embedding dim must be positive"); }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "hashing-" + std::to_string(dim_); }

  std::vector<float> embed(std::string_view text) const override {
    std::vector<double> acc(dim_, 0.0);
    const auto words = tokenize(text);
    auto add = [&](std::string_view feature, double weight) {
      const std::uint64_t h = fnv1a(feature);
      const double sign = (h >> 63) ? -1.0 : 1.0;
      acc[h % dim_] += sign * weight;
    };
    for (std::size_t i = 0; i < words.size(); ++i) {
      add("w:" + words[i], 1.0);
      if (i + 1 < words.size()) add("b:" + words[i] + " " + words[i + 1], 0.5);
      const std::string padded = "<" + words[i] + ">";
      for (std::size_t k = 0; k + 3 <= padded.size(); ++k) add("c:" + padded.substr(k, 3), 0.25);
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = norm > 0 ? static_cast<float>(acc[i] / norm) : 0.0f;
    return out;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  static std::vector<std::string> tokenize(std::string_view text) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    u.foldCase();
    std::vector<std::string> words;
    icu::UnicodeString current;
    auto flush = [&] {
      if (current.isEmpty()) return;
      std::string w;
      current.toUTF8String(w);
      words.push_back(std::move(w));
      current.remove();
    };
    for (int32_t i = 0; i < u.length(); i = u.moveIndex32(i, 1)) {
      const UChar32 c = u.char32At(i);
      if (u_isalnum(c)) {
        current.append(c);
      } else {
        flush();
      }
    }
    flush();
    return words;
  }

  std::size_t dim_;
};

/// Fixed text -> vector table. Unknown texts are an error.
class LookupEmbedder final : public EmbeddingProvider {
 public:
  LookupEmbedder(std::size_t dim, std::map<std::string, std::vector<float>> table)
      : dim_(dim), table_(std::move(table)) {
    for (const auto& [text, v] : table_) check_embedding(v, dim_, "lookup embedder");
  }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "lookup-" + std::to_string(dim_); }

  std::vector<float> embed(std::string_view text) const override {
    auto it = table_.find(std::string(text));
    if (it == table_.end()) fail(ErrorCode::kInvalidArgument, "lookup embedder: unknown text '" + std::string(text) + "'");
    return it->second;
  }

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<float>> table_;
};

}  // namespace goalfactor
