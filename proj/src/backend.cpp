#include "atlas/backend.hpp"

#include <fstream>
#include <sstream>

#include "atlas/error.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace atlas {

std::string to_string(Role r) {
    switch (r) {
        case Role::planner: return "planner";
        case Role::actor: return "actor";
        case Role::critic: return "critic";
        case Role::summarizer: return "summarizer";
        case Role::explorer: return "explorer";
        case Role::digest: return "digest";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    for (Role r : {Role::planner, Role::actor, Role::critic, Role::summarizer, Role::explorer, Role::digest}) {
        if (to_string(r) == s) return r;
    }
    throw ParseError("unknown role '" + s + "'");
}

double default_temperature(Role r) {
    switch (r) {
        case Role::planner: return 0.2;
        case Role::actor: return 0.7;
        case Role::critic: return 0.0;
        case Role::summarizer: return 0.2;
        case Role::explorer: return 0.7;
        case Role::digest: return 0.2;
    }
    return 0.0;
}

std::string default_schema(Role r) {
    switch (r) {
        case Role::planner: return std::string(schema::kPlan);
        case Role::actor: return std::string(schema::kCandidates);
        case Role::critic: return std::string(schema::kAssessment);
        case Role::summarizer: return std::string(schema::kSummary);
        case Role::explorer: return std::string(schema::kExploreStep);
        case Role::digest: return std::string(schema::kDigest);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Request / response

void GenerationRequest::validate() const {
    if (messages.empty()) throw ValidationError("request.messages: must be non-empty");
    if (messages.front().speaker != Speaker::system) {
        throw ValidationError("request.messages[0]: first message must come from system");
    }
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw ValidationError("request.temperature: must be in [0, 2]");
    }
    if (max_tokens <= 0) throw ValidationError("request.max_tokens: must be positive");
    if (!schema::is_registered(response_schema_id)) {
        throw ValidationError("request.response_schema_id: unregistered schema '" + response_schema_id + "'");
    }
}

std::string GenerationRequest::rendered() const {
    std::string out;
    for (const auto& m : messages) {
        out += m.speaker == Speaker::system ? "[system]\n" : "[user]\n";
        out += m.text;
        out += '\n';
    }
    return out;
}

json GenerationRequest::to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"speaker", m.speaker == Speaker::system ? "system" : "user"}, {"text", m.text}});
    }
    return {{"role", to_string(role)},
            {"messages", msgs},
            {"temperature", temperature},
            {"max_tokens", max_tokens},
            {"schema", response_schema_id}};
}

GenerationRequest GenerationRequest::from_json(const json& j) {
    GenerationRequest r;
    r.role = role_from_string(j.at("role").get<std::string>());
    for (const auto& m : j.at("messages")) {
        r.messages.push_back(
            {m.at("speaker").get<std::string>() == "system" ? Speaker::system : Speaker::user,
             m.at("text").get<std::string>()});
    }
    r.temperature = j.at("temperature").get<double>();
    r.max_tokens = j.at("max_tokens").get<int>();
    r.response_schema_id = j.at("schema").get<std::string>();
    return r;
}

GenerationRequest make_request(Role role, std::string system_text, std::string user_text,
                               std::optional<std::string> schema_id) {
    GenerationRequest r;
    r.role = role;
    r.temperature = default_temperature(role);
    r.response_schema_id = schema_id.value_or(default_schema(role));
    r.messages.push_back({Speaker::system, std::move(system_text)});
    r.messages.push_back({Speaker::user, std::move(user_text)});
    return r;
}

json GenerationResponse::to_json() const {
    return {{"text", text},
            {"parsed", parsed},
            {"backend", backend_id},
            {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}}};
}

GenerationResponse GenerationResponse::from_json(const json& j) {
    GenerationResponse r;
    r.text = j.at("text").get<std::string>();
    r.parsed = j.at("parsed");
    r.backend_id = j.value("backend", std::string{});
    if (j.contains("usage")) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
        r.usage.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
    }
    return r;
}

GenerationResponse PolicyBackend::generate(const GenerationRequest& request) {
    request.validate();
    auto response = do_generate(request);
    schema::require_valid(request.response_schema_id, response.parsed);
    return response;
}

std::optional<json> parse_model_json(const std::string& text) {
    std::string_view body = text;
    auto fence = body.find("```");
    if (fence != std::string_view::npos) {
        auto start = body.find('\n', fence);
        auto end = body.rfind("```");
        if (start != std::string_view::npos && end > start) body = body.substr(start + 1, end - start - 1);
    }
    auto parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded()) return std::nullopt;
    return parsed;
}

// ---------------------------------------------------------------------------
// Scripted

void ScriptedRuleSet::add(ScriptedRule rule) {
    const auto schema_id = rule.schema_id.value_or(default_schema(rule.role));
    if (auto err = schema::validate(schema_id, rule.response)) {
        throw ValidationError("scripted rule for role " + to_string(rule.role) + ": response violates " +
                              schema_id + ": " + *err);
    }
    Compiled c{std::move(rule), std::nullopt};
    if (c.rule.pattern) {
        try {
            c.re.emplace(*c.rule.pattern);
        } catch (const std::regex_error&) {
            throw ValidationError("scripted rule: invalid pattern '" + *c.rule.pattern + "'");
        }
    }
    (c.rule.fallback ? fallbacks_ : rules_).push_back(std::move(c));
}

const ScriptedRule* ScriptedRuleSet::match(const GenerationRequest& request) const {
    const auto prompt = request.rendered();
    auto serves = [&](const ScriptedRule& r) {
        return r.role == request.role && r.schema_id.value_or(default_schema(r.role)) == request.response_schema_id;
    };
    for (const auto& c : rules_) {
        if (!serves(c.rule)) continue;
        bool ok = true;
        for (const auto& needle : c.rule.contains) {
            if (prompt.find(needle) == std::string::npos) {
                ok = false;
                break;
            }
        }
        if (ok && c.re && !std::regex_search(prompt, *c.re)) ok = false;
        if (ok) return &c.rule;
    }
    for (const auto& c : fallbacks_) {
        if (serves(c.rule)) return &c.rule;
    }
    return nullptr;
}

ScriptedRuleSet ScriptedRuleSet::from_jsonl(std::istream& in, const std::string& origin) {
    ScriptedRuleSet set;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = origin + ":" + std::to_string(lineno);
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError(where + ": malformed JSON line");
        if (j.contains("comment") && j.size() == 1) continue;
        ScriptedRule rule;
        try {
            rule.role = role_from_string(j.at("role").get<std::string>());
            if (j.contains("schema")) rule.schema_id = j["schema"].get<std::string>();
            if (j.contains("match")) {
                if (j["match"].is_string()) {
                    rule.contains.push_back(j["match"].get<std::string>());
                } else {
                    rule.contains = j["match"].get<std::vector<std::string>>();
                }
            }
            if (j.contains("regex")) rule.pattern = j["regex"].get<std::string>();
            rule.fallback = j.value("fallback", false);
            rule.response = j.at("response");
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        try {
            set.add(std::move(rule));
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    return set;
}

ScriptedRuleSet ScriptedRuleSet::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    return from_jsonl(in, path);
}

void ScriptedRuleSet::append(const ScriptedRuleSet& other) {
    rules_.insert(rules_.end(), other.rules_.begin(), other.rules_.end());
    fallbacks_.insert(fallbacks_.end(), other.fallbacks_.begin(), other.fallbacks_.end());
}

ScriptedBackend::ScriptedBackend(ScriptedRuleSet rules, std::string id)
    : rules_(std::move(rules)), id_(std::move(id)) {}

GenerationResponse ScriptedBackend::do_generate(const GenerationRequest& request) {
    const ScriptedRule* rule = rules_.match(request);
    if (!rule) {
        throw NoMatchingRule("no scripted rule or fallback for role " + to_string(request.role) + " (" +
                             request.response_schema_id + ")");
    }
    GenerationResponse r;
    r.parsed = rule->response;
    r.text = rule->response.dump();
    r.backend_id = id_;
    r.usage.prompt_tokens = text::word_count(request.rendered());
    r.usage.completion_tokens = text::word_count(r.text);
    return r;
}

// ---------------------------------------------------------------------------
// Recording and replay

RecordingBackend::RecordingBackend(BackendPtr inner, std::ostream& sink)
    : inner_(std::move(inner)), sink_(sink) {
    if (!sink_) throw SinkWriteFailure("recording sink is not writable");
}

std::size_t RecordingBackend::entries() const {
    std::lock_guard lock(mu_);
    return seq_;
}

GenerationResponse RecordingBackend::do_generate(const GenerationRequest& request) {
    std::lock_guard lock(mu_);
    auto write = [&](const json& line) {
        sink_ << line.dump() << '\n';
        sink_.flush();
        if (!sink_) throw SinkWriteFailure("failed writing recording entry " + std::to_string(seq_));
        ++seq_;
    };
    GenerationResponse response;
    try {
        response = inner_->generate(request);
    } catch (const Error& e) {
        write({{"seq", seq_}, {"request", request.to_json()}, {"error", {{"kind", e.kind()}, {"message", e.what()}}}});
        throw;
    }
    write({{"seq", seq_}, {"request", request.to_json()}, {"response", response.to_json()}});
    return response;
}

std::shared_ptr<RecordingBackend> record_session(BackendPtr backend, std::ostream& sink) {
    return std::make_shared<RecordingBackend>(std::move(backend), sink);
}

namespace {

[[noreturn]] void raise_recorded(const RecordedError& e) {
    if (e.kind == "SchemaViolation") throw SchemaViolation(e.message);
    if (e.kind == "BackendUnavailable") throw BackendUnavailable(e.message);
    if (e.kind == "NoMatchingRule") throw NoMatchingRule(e.message);
    throw Error(e.kind, e.message);
}

}  // namespace

ReplayBackend::ReplayBackend(std::vector<RecordedCall> calls, std::string id)
    : calls_(std::move(calls)), id_(std::move(id)) {}

std::vector<RecordedCall> ReplayBackend::read_recording(std::istream& in) {
    std::vector<RecordedCall> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("recording line " + std::to_string(lineno) + ": malformed JSON");
        try {
            RecordedCall c;
            c.seq = j.at("seq").get<std::size_t>();
            c.request = GenerationRequest::from_json(j.at("request"));
            if (j.contains("error")) {
                const auto& e = j.at("error");
                c.error = RecordedError{e.at("kind").get<std::string>(), e.at("message").get<std::string>()};
            } else {
                c.response = GenerationResponse::from_json(j.at("response"));
            }
            out.push_back(std::move(c));
        } catch (const std::exception& e) {
            throw ParseError("recording line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::shared_ptr<ReplayBackend> ReplayBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open recording");
    return std::make_shared<ReplayBackend>(read_recording(in), "replay");
}

std::size_t ReplayBackend::position() const {
    std::lock_guard lock(mu_);
    return cursor_;
}

void ReplayBackend::rewind() {
    std::lock_guard lock(mu_);
    cursor_ = 0;
}

GenerationResponse ReplayBackend::do_generate(const GenerationRequest& request) {
    std::lock_guard lock(mu_);
    const auto index = cursor_;
    if (index >= calls_.size()) {
        throw ReplayMismatch(index, "replay: recording exhausted at call " + std::to_string(index));
    }
    const auto& expected = calls_[index];
    if (expected.request.to_json() != request.to_json()) {
        throw ReplayMismatch(index, "replay: request " + std::to_string(index) + " diverges from recording");
    }
    ++cursor_;
    if (expected.error) raise_recorded(*expected.error);
    return expected.response;
}

// ---------------------------------------------------------------------------
// Helpers

GenerationResponse MeteredBackend::do_generate(const GenerationRequest& request) {
    auto r = inner_->generate(request);
    ++calls_;
    tokens_ += r.usage.total();
    return r;
}

PolicyBackend& BackendSet::at(Role role) const {
    auto b = get(role);
    if (!b) throw ValidationError("no backend configured for role " + to_string(role));
    return *b;
}

BackendPtr BackendSet::get(Role role) const {
    auto it = by_role_.find(role);
    if (it != by_role_.end()) return it->second;
    return default_;
}

}  // namespace atlas
