#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "opeforge/errors.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// Chat-completion client
// ============================================================================
// Minimal client for an OpenAI-style chat endpoint. Transport failures and
// timeouts throw TransportError (classified as infrastructure); the caller
// decides what an empty completion means.

struct ChatEndpoint {
    std::string url;      // full endpoint URL, e.g. http://host:8080/v1/chat/completions
    std::string api_key;  // sent as a bearer token when non-empty
    std::string model;    // passed through when non-empty
    double timeout_secs = 600.0;
    int max_retries = 2;  // retries on transport errors and 5xx, exponential backoff
    double backoff_base_secs = 1.0;
};

inline ChatEndpoint endpoint_from_env() {
    ChatEndpoint ep;
    if (const char* url = std::getenv("OPEFORGE_LLM_URL")) ep.url = url;
    if (const char* key = std::getenv("OPEFORGE_LLM_KEY")) ep.api_key = key;
    if (const char* t = std::getenv("OPEFORGE_LLM_TIMEOUT_SECS")) {
        double secs;
        if (!try_parse_double(t, secs) || !(secs > 0.0))
            throw SpecError("OPEFORGE_LLM_TIMEOUT_SECS must be a positive number");
        ep.timeout_secs = secs;
    }
    return ep;
}

namespace detail {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // /path, "/" when absent
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw SpecError("endpoint URL must start with http:// or https://: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

inline std::string chat_completion(const ChatEndpoint& endpoint, const std::string& system_text,
                                   const std::string& user_text) {
    if (endpoint.url.empty())
        throw TransportError("no LLM endpoint configured (set OPEFORGE_LLM_URL)");
    const auto url = detail::split_url(endpoint.url);

    nlohmann::json body;
    if (!endpoint.model.empty()) body["model"] = endpoint.model;
    body["messages"] = nlohmann::json::array();
    if (!system_text.empty())
        body["messages"].push_back({{"role", "system"}, {"content", system_text}});
    body["messages"].push_back({{"role", "user"}, {"content", user_text}});
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!endpoint.api_key.empty())
        headers.emplace("Authorization", "Bearer " + endpoint.api_key);

    std::string last_error;
    for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        if (attempt > 0) {
            const double backoff =
                endpoint.backoff_base_secs * static_cast<double>(1 << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        }

        httplib::Client client(url.base);
        const auto timeout = std::chrono::duration<double>(endpoint.timeout_secs);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error()) + " (timeout " +
                         format_double(endpoint.timeout_secs) + "s)";
            continue;
        }
        if (res->status >= 500 || res->status == 429) {
            last_error = "HTTP " + format_int(res->status);
            continue;
        }
        if (res->status != 200)
            throw TransportError("endpoint rejected request: HTTP " + format_int(res->status));

        const auto parsed = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (parsed.is_discarded())
            throw TransportError("malformed response body: not valid JSON");
        if (parsed.contains("choices") && parsed["choices"].is_array() &&
            !parsed["choices"].empty()) {
            const auto& choice = parsed["choices"][0];
            if (choice.is_object() && choice.contains("message") &&
                choice["message"].is_object() && choice["message"].contains("content") &&
                choice["message"]["content"].is_string())
                return choice["message"]["content"].get<std::string>();
        }
        throw TransportError("malformed response body: missing choices[0].message.content");
    }
    throw TransportError("request failed after " + format_int(endpoint.max_retries + 1) +
                         " attempts: " + last_error);
}

}  // namespace opeforge
