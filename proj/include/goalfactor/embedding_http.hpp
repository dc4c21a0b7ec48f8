#pragma once

#include <string>
#include <vector>

#include "goalfactor/embedding.hpp"
#include "goalfactor/http_util.hpp"

namespace goalfactor {

/// Remote embedder: POST {"texts": [...]} -> {"vectors": [[...], ...]}.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(std::string url, std::size_t dim = 384, int timeout_seconds = 60)
      : url_(std::move(url)), endpoint_(HttpEndpoint::parse(url_)), dim_(dim), timeout_(timeout_seconds) {}

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "http:" + url_; }

  std::vector<float> embed(std::string_view text) const override {
    const std::string t(text);
    return embed_batch(std::span<const std::string>(&t, 1)).front();
  }

  std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) const override {
    json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    auto client = endpoint_.client(timeout_);
    auto res = client->Post(endpoint_.path, body.dump(), "application/json");
    if (!res) fail(ErrorCode::kTransport, "embedding endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) fail(ErrorCode::kTransport, "embedding endpoint returned HTTP " + std::to_string(res->status));
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kFormat, std::string("embedding response is not JSON: ") + e.what());
    }
    if (!reply.contains("vectors") || !reply["vectors"].is_array() || reply["vectors"].size() != texts.size()) {
      fail(ErrorCode::kFormat, "embedding response must carry one vector per text");
    }
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& v : reply["vectors"]) {
      out.push_back(v.get<std::vector<float>>());
      check_embedding(out.back(), dim_, name());
    }
    return out;
  }

 private:
  std::string url_;
  HttpEndpoint endpoint_;
  std::size_t dim_;
  int timeout_;
};

}  // namespace goalfactor
