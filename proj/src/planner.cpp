#include "atlas/planner.hpp"

#include <sstream>

#include "atlas/error.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace atlas {

std::string to_string(SubgoalStatus s) {
    switch (s) {
        case SubgoalStatus::pending: return "pending";
        case SubgoalStatus::active: return "active";
        case SubgoalStatus::done: return "done";
    }
    return "?";
}

const Subgoal* Plan::active() const {
    for (const auto& s : subgoals) {
        if (s.status == SubgoalStatus::active) return &s;
    }
    return nullptr;
}

std::string Plan::render() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < subgoals.size(); ++i) {
        out << i + 1 << ". [" << to_string(subgoals[i].status) << "] " << subgoals[i].text;
        if (!subgoals[i].success_predicate.empty()) out << " (done when: " << subgoals[i].success_predicate << ")";
        out << '\n';
    }
    return out.str();
}

json Plan::to_json() const {
    json subs = json::array();
    for (const auto& s : subgoals) {
        subs.push_back({{"text", s.text}, {"success_predicate", s.success_predicate}, {"status", to_string(s.status)}});
    }
    return {{"plan_id", plan_id}, {"revision", revision}, {"rationale", rationale}, {"subgoals", subs}};
}

bool ExplorationDigest::empty() const {
    return worked.empty() && failed.empty() && new_affordances.empty() && prerequisites.empty();
}

std::string ExplorationDigest::render() const {
    auto line = [](const char* name, const std::vector<std::string>& v) {
        return std::string(name) + ": " + (v.empty() ? std::string("(none)") : text::join(v, "; ")) + "\n";
    };
    return line("worked", worked) + line("failed", failed) + line("new affordances", new_affordances) +
           line("prerequisites", prerequisites);
}

json ExplorationDigest::to_json() const {
    return {{"worked", worked}, {"failed", failed}, {"new_affordances", new_affordances}, {"prerequisites", prerequisites}};
}

ExplorationDigest ExplorationDigest::from_json(const json& j) {
    schema::require_valid(schema::kDigest, j);
    ExplorationDigest d;
    d.worked = j["worked"].get<std::vector<std::string>>();
    d.failed = j["failed"].get<std::vector<std::string>>();
    d.new_affordances = j["new_affordances"].get<std::vector<std::string>>();
    d.prerequisites = j["prerequisites"].get<std::vector<std::string>>();
    return d;
}

void ReplanConfig::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("replan epsilon must be in [0, 1]");
}

namespace {

std::vector<Subgoal> subgoals_from(const json& parsed) {
    std::vector<Subgoal> out;
    for (const auto& s : parsed["subgoals"]) {
        out.push_back({s["text"].get<std::string>(), s.value("success_predicate", std::string{}),
                       SubgoalStatus::pending});
    }
    return out;
}

}  // namespace

Plan make_plan(const std::string& goal, const Observation& first, PolicyBackend& planner) {
    std::ostringstream user;
    user << "GOAL: " << goal << '\n'
         << "CURRENT URL: " << first.url << '\n'
         << "OBSERVATION:\n"
         << first.rendered_text;
    auto resp = planner.generate(make_request(
        Role::planner,
        "You plan web tasks. Decompose the goal into a short ordered list of subgoals, each with a success "
        "predicate that can be checked against a page.",
        user.str()));
    Plan plan;
    plan.plan_id = "plan-" + text::hex64(text::fnv1a64(goal)).substr(0, 8);
    plan.subgoals = subgoals_from(resp.parsed);
    plan.subgoals.front().status = SubgoalStatus::active;
    plan.rationale = resp.parsed.value("rationale", std::string{});
    return plan;
}

double divergence(const Observation& observed, const PredictedOutcome& expected) {
    if (expected.is_placeholder()) return 0.0;
    auto tokens_of = [](const Observation& o) {
        auto set = text::token_set(o.rendered_text);
        for (const auto& e : o.element_index) {
            for (auto& t : text::tokens(e.element_id)) set.insert(std::move(t));
        }
        return set;
    };
    return 1.0 - text::jaccard(tokens_of(observed), tokens_of(expected.observation));
}

bool should_replan(const Observation& observed, const PredictedOutcome& expected, const ReplanConfig& config) {
    return config.enabled && divergence(observed, expected) > config.epsilon;
}

Plan replan(const std::string& goal, const Observation& current, const AgentState& state,
            const std::vector<SemanticFact>& facts, const ExplorationDigest& digest, const Plan& old,
            PolicyBackend& planner) {
    std::ostringstream user;
    user << "GOAL: " << goal << '\n'
         << "CURRENT URL: " << current.url << '\n'
         << "OBSERVATION:\n"
         << current.rendered_text << "CURRENT PLAN (revision " << old.revision << "):\n"
         << old.render() << "EXPLORATION DIGEST:\n"
         << digest.render() << "KNOWN FACTS:\n";
    if (facts.empty()) user << "(none)\n";
    for (const auto& f : facts) user << "- " << f.statement << '\n';
    user << state.render();

    auto resp = planner.generate(make_request(
        Role::planner,
        "You revise a web-task plan after observations diverged from expectations. Keep completed subgoals, "
        "use the digest of simulated outcomes, and return the full list of remaining subgoals.",
        user.str()));

    Plan next;
    next.plan_id = old.plan_id;
    next.revision = old.revision + 1;
    next.rationale = resp.parsed.value("rationale", old.rationale);
    for (const auto& s : old.subgoals) {
        if (s.status == SubgoalStatus::done) next.subgoals.push_back(s);
    }
    const std::size_t carried = next.subgoals.size();
    for (auto& s : subgoals_from(resp.parsed)) {
        bool already_done = false;
        for (std::size_t i = 0; i < carried; ++i) already_done |= next.subgoals[i].text == s.text;
        if (!already_done) next.subgoals.push_back(std::move(s));
    }
    if (next.subgoals.size() > carried) next.subgoals[carried].status = SubgoalStatus::active;
    return next;
}

Plan advance_progress(const Plan& plan, const Observation& current, PolicyBackend& critic) {
    const Subgoal* active = plan.active();
    if (!active) return plan;
    std::ostringstream user;
    user << "SUBGOAL CHECK\n"
         << "SUBGOAL: " << active->text << '\n'
         << "PREDICATE: " << active->success_predicate << '\n'
         << "CURRENT URL: " << current.url << '\n'
         << "OBSERVATION:\n"
         << current.rendered_text;
    auto resp = critic.generate(make_request(
        Role::critic, "You verify whether a subgoal's success predicate holds on the current page.", user.str()));
    if (!resp.parsed.contains("satisfied")) {
        throw SchemaViolation("assessment.v1: subgoal check requires the 'satisfied' field");
    }
    if (!resp.parsed["satisfied"].get<bool>()) return plan;

    Plan next = plan;
    for (std::size_t i = 0; i < next.subgoals.size(); ++i) {
        if (next.subgoals[i].status != SubgoalStatus::active) continue;
        next.subgoals[i].status = SubgoalStatus::done;
        if (i + 1 < next.subgoals.size()) next.subgoals[i + 1].status = SubgoalStatus::active;
        break;
    }
    return next;
}

}  // namespace atlas
