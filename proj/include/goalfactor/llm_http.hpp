#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include "goalfactor/http_util.hpp"
#include "goalfactor/proposer.hpp"

namespace goalfactor {

inline constexpr const char* kLlmTokenEnv = "GOALFACTOR_LLM_TOKEN";

/// Chat-completion client: POSTs the request body as JSON and returns
/// choices[0].message.content. Retries transport failures and 429/5xx
/// responses with exponential backoff.
class HttpLlmClient final : public LlmClient {
 public:
  struct Options {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string token;  // empty: read GOALFACTOR_LLM_TOKEN
    int max_attempts = 3;
    int timeout_seconds = 120;
    std::chrono::milliseconds backoff{500};
  };

  explicit HttpLlmClient(Options opt) : opt_(std::move(opt)), endpoint_(HttpEndpoint::parse(opt_.endpoint)) {
    if (opt_.token.empty()) {
      if (const char* env = std::getenv(kLlmTokenEnv)) opt_.token = env;
    }
  }

  std::string complete(const ChatRequest& request) const override {
    const std::string body = request.canonical_body();
    std::string last_error;
    auto delay = opt_.backoff;
    for (int attempt = 1; attempt <= opt_.max_attempts; ++attempt) {
      auto client = endpoint_.client(opt_.timeout_seconds);
      httplib::Headers headers;
      if (!opt_.token.empty()) headers.emplace("Authorization", "Bearer " + opt_.token);
      auto res = client->Post(endpoint_.path, headers, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status == 200) {
        return extract_content(res->body);
      } else {
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status != 429 && res->status < 500) break;
      }
      if (attempt < opt_.max_attempts) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    fail(ErrorCode::kTransport, "LLM request failed: " + last_error);
  }

  static std::string extract_content(const std::string& body) {
    json reply;
    try {
      reply = json::parse(body);
    } catch (const json::parse_error&) {
      fail(ErrorCode::kTransport, "LLM response is not JSON");
    }
    const auto* content = reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()
                              ? &reply["choices"][0]
                              : nullptr;
    if (content && content->contains("message") && (*content)["message"].contains("content") &&
        (*content)["message"]["content"].is_string()) {
      return (*content)["message"]["content"].get<std::string>();
    }
    fail(ErrorCode::kTransport, "LLM response lacks choices[0].message.content");
  }

 private:
  Options opt_;
  HttpEndpoint endpoint_;
};

}  // namespace goalfactor
