#pragma once

// OpenAI-compatible chat-completions client for the external generator.
// Kept out of ragsys.hpp so only the binaries that talk to the network pay
// for cpp-httplib.

#include <chrono>
#include <cstdlib>
#include <memory>
#include <regex>
#include <semaphore>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "error.hpp"
#include "ragsys.hpp"

namespace rpl {

struct Endpoint {
    std::string origin;    // scheme://host[:port]
    std::string base_path; // no trailing slash
};

inline Endpoint parse_endpoint(const std::string& url) {
    static const std::regex re(R"(^(https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?)(/[^\s?#]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("invalid endpoint URL: " + url);
    Endpoint e{m[1].str(), m[3].str()};
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
    return e;
}

class HttpCompletionClient final : public CompletionClient {
public:
    HttpCompletionClient(std::string endpoint, std::string model, std::chrono::milliseconds timeout,
                         std::string api_key, std::ptrdiff_t max_in_flight = 4)
        : endpoint_(parse_endpoint(endpoint)), model_(std::move(model)), timeout_(timeout),
          api_key_(std::move(api_key)), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

    /// Reads the bearer token from RPL_API_KEY.
    static std::unique_ptr<HttpCompletionClient> from_config(const ExternalSettings& s) {
        const char* key = std::getenv("RPL_API_KEY");
        return std::make_unique<HttpCompletionClient>(s.endpoint, s.model, std::chrono::milliseconds(s.timeout_ms),
                                                      key ? key : "", s.max_in_flight);
    }

    std::string complete(const std::string& prompt) override {
        nlohmann::json body = {
            {"model", model_},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", 0},
        };
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};

        httplib::Client cli(endpoint_.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = cli.Post(endpoint_.base_path + "/chat/completions", headers, body.dump(), "application/json");
        if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
        if (res->status >= 400) throw TransportError("HTTP " + std::to_string(res->status));
        try {
            const auto j = nlohmann::json::parse(res->body);
            const auto& content = j.at("choices").at(0).at("message").at("content");
            return content.is_null() ? std::string() : content.get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed completion response: ") + e.what());
        }
    }

private:
    Endpoint endpoint_;
    std::string model_;
    std::chrono::milliseconds timeout_;
    std::string api_key_;
    std::counting_semaphore<> slots_;
};

} // namespace rpl
