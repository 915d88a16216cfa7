#pragma once

// Live backends over HTTP.
//
//   Segmenter:  POST /segment  {"image": data-URI, "phrase": text}
//               -> {"candidates": [{"score": f, "rle": {"size":[h,w],"counts":[...]}}]}
//   VLM:        OpenAI-compatible chat completions, images as data-URI parts.
//
// Transport failures (connection errors, 5xx, 429) are retried with
// exponential backoff; malformed bodies are not retried here.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vasa/clients.hpp"
#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"

namespace vasa {

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Raised by transports for connection-level failures.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                 const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

/// cpp-httplib client. base_url is "http(s)://host[:port]"; a new client per
/// request keeps the object safe to share across sessions.
class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(300))
      : base_url_(std::move(base_url)), timeout_(timeout) {}

  HttpResponse post_json(const std::string& path, const std::string& body,
                         const std::vector<std::pair<std::string, std::string>>& headers) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) throw TransportError("POST " + base_url_ + path + " failed: " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
  }

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int retries = 2;  // total attempts = retries + 1
  std::chrono::milliseconds base_delay{500};
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

inline bool is_retryable_status(int status) { return status == 429 || status >= 500; }

/// Posts with retries; returns the first non-retryable response.
inline HttpResponse post_with_retries(HttpTransport& transport, const RetryPolicy& policy, const std::string& path,
                                      const std::string& body,
                                      const std::vector<std::pair<std::string, std::string>>& headers = {}) {
  std::string last_error;
  for (int attempt = 0; attempt <= policy.retries; ++attempt) {
    if (attempt > 0 && policy.sleep) policy.sleep(policy.base_delay * (1 << (attempt - 1)));
    try {
      HttpResponse res = transport.post_json(path, body, headers);
      if (!is_retryable_status(res.status)) return res;
      last_error = "HTTP " + std::to_string(res.status);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw Error(Errc::BackendUnavailable,
              path + " unavailable after " + std::to_string(policy.retries + 1) + " attempts: " + last_error);
}

class HttpSegmenter final : public SegmenterBackend {
 public:
  HttpSegmenter(std::shared_ptr<HttpTransport> transport, RetryPolicy policy = {})
      : transport_(std::move(transport)), policy_(std::move(policy)) {}

  std::vector<CandidateMask> segment(const Image& image, std::string_view phrase) override {
    const nlohmann::json request{{"image", png_data_uri(image)}, {"phrase", std::string(phrase)}};
    const HttpResponse res = post_with_retries(*transport_, policy_, "/segment", dump_json(request));
    if (res.status != 200) {
      throw Error(Errc::MalformedBackendReply, "segmenter returned HTTP " + std::to_string(res.status));
    }
    return parse_segment_reply(res.body, image, phrase);
  }

  static std::vector<CandidateMask> parse_segment_reply(std::string_view body, const Image& image,
                                                        std::string_view phrase) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("candidates") || !j.at("candidates").is_array()) {
      throw Error(Errc::MalformedBackendReply, "segmenter reply lacks a \"candidates\" array");
    }
    std::vector<CandidateMask> out;
    for (const auto& c : j.at("candidates")) {
      try {
        const double score = c.at("score").get<double>();
        // Per-instance boxes, if the service sends them, are ignored.
        RasterMask mask = rle_decode(rle_from_json(c.at("rle")), image.width(), image.height());
        out.push_back(CandidateMask{0, std::string(phrase), score, std::move(mask)});
      } catch (const Error& e) {
        throw Error(Errc::MalformedBackendReply, std::string("bad candidate: ") + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedBackendReply, std::string("bad candidate: ") + e.what());
      }
    }
    return out;
  }

 private:
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
};

struct ChatCompletionsConfig {
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  std::string path = "/v1/chat/completions";
  double temperature = 0.0;
  int max_tokens = 4096;
  int image_max_side = 1024;
};

/// OpenAI-compatible chat-completions client.
class ChatCompletionsVlm final : public VlmBackend {
 public:
  ChatCompletionsVlm(std::shared_ptr<HttpTransport> transport, ChatCompletionsConfig config, RetryPolicy policy = {})
      : transport_(std::move(transport)), config_(std::move(config)), policy_(std::move(policy)) {}

  std::string chat(const MessageBundle& messages) override {
    std::vector<std::pair<std::string, std::string>> headers;
    if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);
    const HttpResponse res =
        post_with_retries(*transport_, policy_, config_.path, dump_json(build_request(messages)), headers);
    if (res.status != 200) throw Error(Errc::MalformedBackendReply, "VLM returned HTTP " + std::to_string(res.status));
    return parse_reply(res.body);
  }

  nlohmann::json build_request(const MessageBundle& messages) const {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
      nlohmann::json content = nlohmann::json::array();
      for (const auto& part : m.parts) {
        if (part.is_image()) {
          const Image scaled = downscale_to_fit(*part.image, config_.image_max_side);
          content.push_back({{"type", "image_url"}, {"image_url", {{"url", png_data_uri(scaled)}}}});
        } else {
          content.push_back({{"type", "text"}, {"text", part.text}});
        }
      }
      // Plain-string content for single-text messages keeps strict servers happy.
      if (m.parts.size() == 1 && !m.parts.front().is_image()) {
        msgs.push_back({{"role", to_string(m.role)}, {"content", m.parts.front().text}});
      } else {
        msgs.push_back({{"role", to_string(m.role)}, {"content", std::move(content)}});
      }
    }
    return {{"model", config_.model},
            {"messages", std::move(msgs)},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_tokens}};
  }

  static std::string parse_reply(std::string_view body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    try {
      if (j.is_discarded()) throw Error(Errc::MalformedBackendReply, "VLM reply is not JSON");
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (content.is_string()) return content.get<std::string>();
      if (content.is_array()) {
        std::string text;
        for (const auto& part : content) {
          if (part.value("type", "") == "text") text += part.value("text", "");
        }
        return text;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedBackendReply, std::string("VLM reply: ") + e.what());
    }
    throw Error(Errc::MalformedBackendReply, "VLM reply has no message content");
  }

 private:
  std::shared_ptr<HttpTransport> transport_;
  ChatCompletionsConfig config_;
  RetryPolicy policy_;
};

}  // namespace vasa
