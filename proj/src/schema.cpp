#include "atlas/schema.hpp"

#include <algorithm>
#include <array>

#include "atlas/environment.hpp"
#include "atlas/error.hpp"

namespace atlas::schema {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 5> kScoreKeys = {"goal_alignment", "state_viability", "action_coherence",
                                                   "plan_consistency", "outcome_safety"};
constexpr std::array<const char*, 4> kFactKinds = {"format_rule", "hazard", "capability_limit",
                                                   "navigation_hint"};

using Check = std::optional<std::string>;

Check string_array(const json& obj, const char* key, bool required) {
    if (!obj.contains(key)) {
        return required ? Check(std::string(key) + ": missing") : std::nullopt;
    }
    const auto& v = obj.at(key);
    if (!v.is_array()) return std::string(key) + ": expected array";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) return std::string(key) + "[" + std::to_string(i) + "]: expected string";
    }
    return std::nullopt;
}

Check nonempty_string(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key) || !obj.at(key).is_string()) return path + key + ": expected string";
    if (obj.at(key).get_ref<const std::string&>().empty()) return path + key + ": must be non-empty";
    return std::nullopt;
}

Check check_plan(const json& v) {
    if (!v.contains("subgoals") || !v["subgoals"].is_array()) return "subgoals: expected array";
    if (v["subgoals"].empty()) return "subgoals: at least one subgoal required";
    for (std::size_t i = 0; i < v["subgoals"].size(); ++i) {
        const auto& s = v["subgoals"][i];
        const auto path = "subgoals[" + std::to_string(i) + "].";
        if (!s.is_object()) return path + ": expected object";
        if (auto e = nonempty_string(s, "text", path)) return e;
        if (s.contains("success_predicate") && !s["success_predicate"].is_string()) {
            return path + "success_predicate: expected string";
        }
    }
    if (v.contains("rationale") && !v["rationale"].is_string()) return "rationale: expected string";
    return std::nullopt;
}

Check check_candidates(const json& v) {
    if (!v.contains("candidates") || !v["candidates"].is_array()) return "candidates: expected array";
    for (std::size_t i = 0; i < v["candidates"].size(); ++i) {
        const auto& c = v["candidates"][i];
        const auto path = "candidates[" + std::to_string(i) + "]";
        if (!c.is_object() || !c.contains("action")) return path + ".action: missing";
        try {
            (void)Action::from_json(c["action"]);
        } catch (const Error& e) {
            return path + "." + e.what();
        }
        if (c.contains("reasoning") && !c["reasoning"].is_string()) return path + ".reasoning: expected string";
    }
    return std::nullopt;
}

Check check_assessment(const json& v) {
    const bool has_scores = v.contains("scores");
    const bool has_flag = v.contains("satisfied");
    if (!has_scores && !has_flag) return "one of scores, satisfied required";
    if (has_scores) {
        const auto& s = v["scores"];
        if (!s.is_object()) return "scores: expected object";
        for (const char* key : kScoreKeys) {
            if (!s.contains(key) || !s[key].is_number_integer()) {
                return std::string("scores.") + key + ": expected integer";
            }
            const auto x = s[key].get<long long>();
            if (x < 0 || x > 10) return std::string("scores.") + key + ": must be in 0..10";
        }
    }
    if (has_flag && !v["satisfied"].is_boolean()) return "satisfied: expected boolean";
    if (v.contains("justification") && !v["justification"].is_string()) return "justification: expected string";
    return string_array(v, "blockers", false);
}

Check check_summary(const json& v) {
    if (auto e = nonempty_string(v, "delta", "")) return e;
    if (auto e = string_array(v, "new_affordances", false)) return e;
    if (v.contains("hazard_flag") && !v["hazard_flag"].is_boolean()) return "hazard_flag: expected boolean";
    if (v.contains("notes") && !v["notes"].is_string()) return "notes: expected string";
    return std::nullopt;
}

Check check_facts(const json& v) {
    if (!v.contains("facts") || !v["facts"].is_array()) return "facts: expected array";
    for (std::size_t i = 0; i < v["facts"].size(); ++i) {
        const auto& f = v["facts"][i];
        const auto path = "facts[" + std::to_string(i) + "].";
        if (!f.is_object()) return path + ": expected object";
        if (auto e = nonempty_string(f, "statement", path)) return e;
        if (!f.contains("kind") || !f["kind"].is_string()) return path + "kind: expected string";
        const auto kind = f["kind"].get<std::string>();
        if (std::find(kFactKinds.begin(), kFactKinds.end(), kind) == kFactKinds.end()) {
            return path + "kind: unknown fact kind '" + kind + "'";
        }
    }
    return std::nullopt;
}

Check check_explore_step(const json& v) {
    if (!v.contains("choice")) return "choice: missing";
    const auto& c = v["choice"];
    if (c.is_null()) return std::nullopt;
    if (!c.is_number_integer() || c.get<long long>() < 0) return "choice: expected non-negative integer or null";
    return std::nullopt;
}

Check check_digest(const json& v) {
    for (const char* key : {"worked", "failed", "new_affordances", "prerequisites"}) {
        if (auto e = string_array(v, key, true)) return e;
    }
    return std::nullopt;
}

}  // namespace

const std::vector<std::string>& registered() {
    static const std::vector<std::string> ids = {std::string(kPlan),    std::string(kCandidates),
                                                 std::string(kAssessment), std::string(kSummary),
                                                 std::string(kFacts),   std::string(kExploreStep),
                                                 std::string(kDigest)};
    return ids;
}

bool is_registered(std::string_view id) {
    const auto& ids = registered();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

std::optional<std::string> validate(std::string_view id, const json& value) {
    if (!value.is_object()) return std::string("expected a JSON object");
    if (id == kPlan) return check_plan(value);
    if (id == kCandidates) return check_candidates(value);
    if (id == kAssessment) return check_assessment(value);
    if (id == kSummary) return check_summary(value);
    if (id == kFacts) return check_facts(value);
    if (id == kExploreStep) return check_explore_step(value);
    if (id == kDigest) return check_digest(value);
    return "unregistered schema '" + std::string(id) + "'";
}

void require_valid(std::string_view id, const json& value) {
    if (auto err = validate(id, value)) {
        throw SchemaViolation(std::string(id) + ": " + *err);
    }
}

std::string describe(std::string_view id) {
    if (id == kPlan) {
        return R"({"subgoals":[{"text":str,"success_predicate":str}],"rationale":str})";
    }
    if (id == kCandidates) {
        return R"({"candidates":[{"action":{"type":"click|type|goto|back|stop","element"?:str,"text"?:str,"url"?:str,"answer"?:str},"reasoning":str}]})";
    }
    if (id == kAssessment) {
        return R"({"scores":{"goal_alignment":0-10,"state_viability":0-10,"action_coherence":0-10,"plan_consistency":0-10,"outcome_safety":0-10},"justification":str,"blockers":[str]} or {"satisfied":bool})";
    }
    if (id == kSummary) return R"({"delta":str,"new_affordances":[str],"hazard_flag":bool,"notes":str})";
    if (id == kFacts) {
        return R"({"facts":[{"statement":str,"kind":"format_rule|hazard|capability_limit|navigation_hint"}]})";
    }
    if (id == kExploreStep) return R"({"choice":int|null})";
    if (id == kDigest) return R"({"worked":[str],"failed":[str],"new_affordances":[str],"prerequisites":[str]})";
    return "{}";
}

}  // namespace atlas::schema
