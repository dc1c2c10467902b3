#pragma once

// Optional HTTP chat-completion backend. Kept out of backends.hpp so the
// (large) HTTP client header is only compiled into binaries that opt in.
// Configuration comes from the environment:
//   FLOWGOV_BACKEND_URL   e.g. https://host:port  (path fixed below)
//   FLOWGOV_BACKEND_KEY   bearer token
//   FLOWGOV_BACKEND_MODEL model identifier
// Never used by tests; the engine's validators and retries treat it as
// untrusted text either way.

#include <cstdlib>
#include <stdexcept>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "backends.hpp"

namespace flowgov {

class HttpChatBackend : public RoleBackend {
 public:
  HttpChatBackend() {
    const char* url = std::getenv("FLOWGOV_BACKEND_URL");
    const char* key = std::getenv("FLOWGOV_BACKEND_KEY");
    const char* model = std::getenv("FLOWGOV_BACKEND_MODEL");
    if (!url || !key) {
      throw std::runtime_error(
          "http backend requested but FLOWGOV_BACKEND_URL/FLOWGOV_BACKEND_KEY are unset");
    }
    base_url_ = url;
    api_key_ = key;
    model_ = model ? model : "default";
  }

  std::string name() const override { return "http:" + model_; }

  std::string invoke(const std::string& role, const nlohmann::json& input) override {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(60);
    nlohmann::json body = {
        {"model", model_},
        {"messages",
         {{{"role", "system"},
           {"content",
            "You are the '" + role +
                "' role of a network policy governance engine. Reply with a single JSON "
                "object matching the role's schema and nothing else."}},
          {{"role", "user"}, {"content", input.dump()}}}}};
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw std::runtime_error("http backend: transport failure");
    if (res->status != 200)
      throw std::runtime_error("http backend: status " + std::to_string(res->status));
    const nlohmann::json rj = nlohmann::json::parse(res->body);
    return rj.at("choices").at(0).at("message").at("content").get<std::string>();
  }

 private:
  std::string base_url_;
  std::string api_key_;
  std::string model_;
};

}  // namespace flowgov
