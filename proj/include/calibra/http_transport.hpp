#pragma once

// cpp-httplib backed transport for OpenAI-compatible endpoints.
// HTTPS needs CPPHTTPLIB_OPENSSL_SUPPORT defined before this header.

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>

#include "calibra/harness.hpp"

namespace calibra::harness {

struct EndpointUrl {
  std::string scheme_host_port;
  std::string base_path;
};

/// Splits "https://host:port/v1" into "https://host:port" and "/v1".
inline EndpointUrl split_endpoint(std::string url) {
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpTransport : public ChatTransport {
 public:
  HttpTransport(const std::string& endpoint, std::string api_key,
                std::chrono::seconds timeout = std::chrono::seconds(60))
      : endpoint_(split_endpoint(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {}

  std::string post(const std::string& body) override {
    // httplib clients are not thread-safe; one per request keeps workers independent.
    httplib::Client client(endpoint_.scheme_host_port);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(endpoint_.base_path + "/chat/completions", headers, body, "application/json");
    if (!res) throw RetryableFailure("request failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500) {
      throw RetryableFailure("HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::TransportError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return res->body;
  }

 private:
  EndpointUrl endpoint_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

}  // namespace calibra::harness
