#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "atlas/backend.hpp"
#include "atlas/error.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace atlas {

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

ParsedUrl split_base_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("remote.base_url: missing scheme in '" + url + "'");
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    return out;
}

// Releases an in-flight slot on scope exit.
class SlotGuard {
public:
    explicit SlotGuard(std::counting_semaphore<64>& s) : s_(s) { s_.acquire(); }
    ~SlotGuard() { s_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::counting_semaphore<64>& s_;
};

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 64)) {
    if (config_.max_retries < 0) throw ValidationError("remote.max_retries: must be >= 0");
    if (config_.max_reasks < 0) throw ValidationError("remote.max_reasks: must be >= 0");
    auto parsed = split_base_url(config_.base_url);
    scheme_host_port_ = parsed.scheme_host_port;
    path_prefix_ = parsed.path;
}

std::pair<std::string, Usage> RemoteBackend::complete(const GenerationRequest& request) {
    SlotGuard slot(in_flight_);

    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.speaker == Speaker::system ? "system" : "user"}, {"content", m.text}});
    }
    const json payload{{"model", config_.model},
                       {"messages", messages},
                       {"temperature", request.temperature},
                       {"max_tokens", request.max_tokens},
                       {"response_format", {{"type", "json_object"}}}};

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1LL << (attempt - 1)));
        ++attempts_;

        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());

        auto res = client.Post(path_prefix_ + "/chat/completions", headers, payload.dump(), "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw BackendUnavailable("remote backend returned HTTP " + std::to_string(res->status) + ": " +
                                     text::truncate(res->body, 200));
        }

        // A body that is not a chat completion is handed back verbatim so the
        // schema check rejects it and the caller can re-ask.
        auto body = json::parse(res->body, nullptr, false);
        Usage usage;
        if (body.is_discarded() || !body.contains("choices") || !body["choices"].is_array() ||
            body["choices"].empty()) {
            return {res->body, usage};
        }
        if (body.contains("usage") && body["usage"].is_object()) {
            usage.prompt_tokens = body["usage"].value("prompt_tokens", std::size_t{0});
            usage.completion_tokens = body["usage"].value("completion_tokens", std::size_t{0});
        }
        const auto& msg = body["choices"][0].value("message", json::object());
        return {msg.value("content", std::string{}), usage};
    }
    throw BackendUnavailable("remote backend " + config_.base_url + " unavailable after " +
                             std::to_string(config_.max_retries + 1) + " attempts (" + last_error + ")");
}

GenerationResponse RemoteBackend::do_generate(const GenerationRequest& original) {
    GenerationRequest request = original;
    request.messages.front().text += "\nRespond with a single JSON object of the form " +
                                     schema::describe(request.response_schema_id) + ".";
    Usage total;
    std::string last_error;
    for (int ask = 0; ask <= config_.max_reasks; ++ask) {
        auto [content, usage] = complete(request);
        total.prompt_tokens += usage.prompt_tokens;
        total.completion_tokens += usage.completion_tokens;

        auto parsed = parse_model_json(content);
        std::optional<std::string> err;
        if (!parsed) {
            err = "output is not valid JSON";
        } else {
            err = schema::validate(request.response_schema_id, *parsed);
        }
        if (!err) {
            GenerationResponse r;
            r.text = content;
            r.parsed = std::move(*parsed);
            r.backend_id = id();
            r.usage = total;
            return r;
        }
        last_error = *err;
        request.messages.push_back({Speaker::user, "Your previous output was rejected (" + last_error +
                                                       "). Reply again with only valid JSON of the form " +
                                                       schema::describe(request.response_schema_id) + "."});
    }
    throw SchemaViolation(request.response_schema_id + ": output rejected after " +
                          std::to_string(config_.max_reasks) + " re-asks (" + last_error + ")");
}

}  // namespace atlas
