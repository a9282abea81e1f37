#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <regex>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace atlas {

using json = nlohmann::json;

enum class Role { planner, actor, critic, summarizer, explorer, digest };
enum class Speaker { system, user };

std::string to_string(Role r);
Role role_from_string(const std::string& s);

/// Sampling temperature used when a caller does not override it.
double default_temperature(Role r);

/// Schema each role answers with unless a request says otherwise.
std::string default_schema(Role r);

struct Message {
    Speaker speaker = Speaker::user;
    std::string text;
};

struct GenerationRequest {
    Role role = Role::actor;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::string response_schema_id;

    /// Throws ValidationError if any invariant is broken.
    void validate() const;

    /// All messages flattened as `[system]\n...\n[user]\n...`; scripted rules
    /// match against this string.
    std::string rendered() const;

    json to_json() const;
    static GenerationRequest from_json(const json& j);
};

/// A request with the role's default temperature and schema.
GenerationRequest make_request(Role role, std::string system_text, std::string user_text,
                               std::optional<std::string> schema_id = std::nullopt);

struct Usage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;

    std::size_t total() const { return prompt_tokens + completion_tokens; }
};

struct GenerationResponse {
    std::string text;
    json parsed;
    std::string backend_id;
    Usage usage;

    json to_json() const;
    static GenerationResponse from_json(const json& j);
};

/// Uniform structured-generation interface. Public `generate` validates the
/// request and checks the parsed output against the requested schema on every
/// call; implementations provide `do_generate`.
class PolicyBackend {
public:
    virtual ~PolicyBackend() = default;

    GenerationResponse generate(const GenerationRequest& request);

    virtual std::string id() const = 0;

private:
    virtual GenerationResponse do_generate(const GenerationRequest& request) = 0;
};

using BackendPtr = std::shared_ptr<PolicyBackend>;

// ---------------------------------------------------------------------------
// Scripted

struct ScriptedRule {
    Role role = Role::actor;
    std::optional<std::string> schema_id;  // defaults to the role's schema
    std::vector<std::string> contains;     // all must occur in the rendered prompt
    std::optional<std::string> pattern;    // ECMAScript regex, searched
    json response;
    bool fallback = false;
};

/// Ordered rule table. First matching rule wins; fallbacks are consulted per
/// (role, schema) only when no rule matches.
class ScriptedRuleSet {
public:
    /// Throws ValidationError if the response template does not conform.
    void add(ScriptedRule rule);

    const ScriptedRule* match(const GenerationRequest& request) const;
    std::size_t size() const { return rules_.size() + fallbacks_.size(); }

    static ScriptedRuleSet from_jsonl(std::istream& in, const std::string& origin = "<stream>");
    static ScriptedRuleSet from_file(const std::string& path);

    void append(const ScriptedRuleSet& other);

private:
    struct Compiled {
        ScriptedRule rule;
        std::optional<std::regex> re;
    };
    std::vector<Compiled> rules_;
    std::vector<Compiled> fallbacks_;
};

class ScriptedBackend final : public PolicyBackend {
public:
    explicit ScriptedBackend(ScriptedRuleSet rules, std::string id = "scripted");

    std::string id() const override { return id_; }

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;

    ScriptedRuleSet rules_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Recording and replay

struct RecordedError {
    std::string kind;
    std::string message;
};

struct RecordedCall {
    std::size_t seq = 0;
    GenerationRequest request;
    GenerationResponse response;
    std::optional<RecordedError> error;  // the call failed; replay raises it again
};

/// Decorator that forwards to an inner backend and appends every
/// (request, response) pair to a JSON Lines sink, in call order. Failed calls
/// are recorded with the error kind and message instead of a response.
class RecordingBackend final : public PolicyBackend {
public:
    RecordingBackend(BackendPtr inner, std::ostream& sink);

    std::string id() const override { return inner_->id(); }
    std::size_t entries() const;

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;

    BackendPtr inner_;
    std::ostream& sink_;
    mutable std::mutex mu_;
    std::size_t seq_ = 0;
};

/// Starts recording: every call through the returned handle lands in `sink`.
std::shared_ptr<RecordingBackend> record_session(BackendPtr backend, std::ostream& sink);

/// Replays a recording. Requests must arrive in the recorded order and be
/// identical to the recorded ones; the first divergence raises ReplayMismatch
/// carrying its index.
class ReplayBackend final : public PolicyBackend {
public:
    explicit ReplayBackend(std::vector<RecordedCall> calls, std::string id = "replay");

    static std::vector<RecordedCall> read_recording(std::istream& in);
    static std::shared_ptr<ReplayBackend> from_file(const std::string& path);

    std::string id() const override { return id_; }
    std::size_t position() const;
    void rewind();

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;

    std::vector<RecordedCall> calls_;
    std::string id_;
    mutable std::mutex mu_;
    std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Remote (OpenAI-compatible chat completions)

struct RemoteConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o";
    std::string api_key_env = "ATLAS_API_KEY";
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::chrono::milliseconds backoff{500};
    int max_reasks = 2;
    int max_in_flight = 4;
};

class RemoteBackend final : public PolicyBackend {
public:
    explicit RemoteBackend(RemoteConfig config);

    std::string id() const override { return "remote:" + config_.model; }

    /// HTTP attempts made so far, including retries.
    std::size_t attempts() const { return attempts_.load(); }

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;

    /// One chat-completion round trip with retry/backoff; returns message
    /// content and usage. Throws BackendUnavailable after max_retries.
    std::pair<std::string, Usage> complete(const GenerationRequest& request);

    RemoteConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
    std::counting_semaphore<64> in_flight_;
    std::atomic<std::size_t> attempts_{0};
};

// ---------------------------------------------------------------------------
// Helpers

/// Counts calls and token usage flowing through a backend.
class MeteredBackend final : public PolicyBackend {
public:
    explicit MeteredBackend(BackendPtr inner) : inner_(std::move(inner)) {}

    std::string id() const override { return inner_->id(); }
    std::size_t calls() const { return calls_.load(); }
    std::size_t tokens() const { return tokens_.load(); }

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;

    BackendPtr inner_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> tokens_{0};
};

/// Role -> backend routing with an optional default.
class BackendSet {
public:
    BackendSet() = default;
    explicit BackendSet(BackendPtr all) : default_(std::move(all)) {}

    void set(Role role, BackendPtr backend) { by_role_[role] = std::move(backend); }
    void set_default(BackendPtr backend) { default_ = std::move(backend); }

    /// Throws ValidationError if no backend serves `role`.
    PolicyBackend& at(Role role) const;
    BackendPtr get(Role role) const;

private:
    std::map<Role, BackendPtr> by_role_;
    BackendPtr default_;
};

/// Parses the model's text as JSON, tolerating a surrounding ``` fence.
std::optional<json> parse_model_json(const std::string& text);

}  // namespace atlas
