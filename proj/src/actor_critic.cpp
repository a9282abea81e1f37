#include "atlas/actor_critic.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "atlas/error.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace atlas {

namespace {

// Values closer than this are ties for selection purposes.
constexpr double kTieTolerance = 1e-12;

std::string fixed2(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

bool is_affordance(const Observation& obs, const Action& action) {
    switch (action.kind) {
        case ActionKind::back:
        case ActionKind::stop: return true;
        case ActionKind::go_to: return false;
        case ActionKind::click:
        case ActionKind::type:
            for (const auto& e : obs.element_index) {
                if (e.element_id != action.target) continue;
                const bool input = e.kind == ElementKind::textbox || e.kind == ElementKind::select;
                return input == (action.kind == ActionKind::type);
            }
            return false;
    }
    return false;
}

/// Stop ends the episode on the current page: its outcome is certain and
/// never stored in the map.
PredictedOutcome predict(const CognitiveMap& map, const Observation& from, const Action& action) {
    if (action.kind == ActionKind::stop) {
        PredictedOutcome out;
        out.kind = PredictedOutcome::Kind::known;
        out.observation = from;
        out.observation.flash.clear();
        out.summary = TransitionSummary{"episode ends with answer " + json(action.text).dump(), {}, false, {}};
        out.to_key = observation_key(from);
        out.uncertainty = 0.0;
        return out;
    }
    return map.retrieve(from, action);
}

std::string url_or_unexplored(const Observation& o) { return o.url.empty() ? "(unexplored)" : o.url; }

std::string render_outcome(const PredictedOutcome& p, bool with_raw) {
    std::ostringstream out;
    if (p.is_placeholder()) {
        out << "  kind: placeholder\n  uncertainty: 1.00\n  " << kPlaceholderText << '\n';
        return out.str();
    }
    out << "  kind: known\n  url: " << p.observation.url << "\n  uncertainty: " << fixed2(p.uncertainty) << '\n';
    if (p.summary) {
        out << "  summary: " << p.summary->delta << '\n'
            << "  new affordances: " << text::join(p.summary->new_affordances, ", ") << '\n'
            << "  hazard_flag: " << (p.summary->hazard_flag ? "true" : "false") << '\n';
    } else {
        out << "  summary: (none)\n";
    }
    if (with_raw) out << "  raw:\n" << p.observation.rendered_text;
    return out.str();
}

void render_header(std::ostringstream& out, const DecisionContext& ctx) {
    out << "GOAL: " << ctx.goal << '\n';
    if (ctx.plan) {
        const Subgoal* active = ctx.plan->active();
        out << "ACTIVE SUBGOAL: " << (active ? active->text : std::string("(plan complete)")) << '\n'
            << "PLAN:\n"
            << ctx.plan->render();
    } else {
        out << "ACTIVE SUBGOAL: (no plan)\n";
    }
}

void render_page(std::ostringstream& out, const DecisionContext& ctx) {
    out << "CURRENT URL: " << url_or_unexplored(ctx.observation) << '\n'
        << "OBSERVATION:\n"
        << (ctx.observation_text.empty() ? ctx.observation.rendered_text : ctx.observation_text);
    if (!out.str().empty() && out.str().back() != '\n') out << '\n';
}

std::string actor_prompt(const DecisionContext& ctx, std::size_t n, const std::string& simulated_so_far) {
    std::ostringstream out;
    render_header(out, ctx);
    out << "MODE: " << (simulated_so_far.empty() ? "live" : "simulation") << '\n';
    if (!simulated_so_far.empty()) out << "SIMULATED SO FAR:\n" << simulated_so_far;
    render_page(out, ctx);
    if (ctx.state) out << ctx.state->render();
    out << "KNOWN FACTS:\n";
    if (ctx.facts.empty()) out << "(none)\n";
    for (const auto& f : ctx.facts) out << "- " << f.statement << '\n';
    if (ctx.map) {
        out << "ACTION OUTCOMES:\n";
        for (const auto& a : available_actions(ctx.observation)) {
            if (a.kind == ActionKind::stop) continue;
            auto p = ctx.map->retrieve(ctx.observation, a);
            out << "- " << a.signature() << " -> ";
            if (p.is_placeholder()) {
                out << "unexplored\n";
            } else {
                out << p.observation.url << ": " << (p.summary ? p.summary->delta : std::string("(raw only)"))
                    << " (U=" << fixed2(p.uncertainty) << ")\n";
            }
        }
    }
    out << "Propose up to " << n << " candidate actions with reasoning.\n";
    return out.str();
}

CandidateSet parse_candidates(const json& parsed, const Observation& obs, std::size_t n) {
    CandidateSet set;
    set.step_index = obs.step_index;
    std::set<std::string> seen;
    for (const auto& cj : parsed["candidates"]) {
        if (set.candidates.size() >= n) break;
        Candidate c;
        c.action = Action::from_json(cj["action"]);
        if (!seen.insert(c.action.signature()).second) continue;
        c.reasoning = cj.value("reasoning", std::string{});
        c.speculative = !is_affordance(obs, c.action);
        c.index = set.candidates.size();
        set.candidates.push_back(std::move(c));
    }
    return set;
}

const char* kActorSystem =
    "You are the actor of a web agent. Propose distinct, executable next actions for the current page with "
    "brief reasoning, most promising first.";
const char* kCriticSystem =
    "You are the critic of a web agent. Score the option from 0 to 10 on goal alignment, state viability "
    "(recoverability), action coherence, plan consistency and outcome safety.";

ValueAssessment assessment_from(const json& parsed) {
    if (!parsed.contains("scores")) {
        throw SchemaViolation("assessment.v1: value assessment requires the 'scores' field");
    }
    std::map<std::string, int> scores;
    for (const char* key : kCriticCriteria) scores[key] = parsed["scores"][key].get<int>();
    auto a = ValueAssessment::from_scores(std::move(scores), parsed.value("justification", std::string{}));
    a.blockers = parsed.value("blockers", std::vector<std::string>{});
    return a;
}

}  // namespace

// ---------------------------------------------------------------------------

ValueAssessment ValueAssessment::from_scores(std::map<std::string, int> scores, std::string justification) {
    ValueAssessment a;
    int sum = 0;
    for (const char* key : kCriticCriteria) {
        auto it = scores.find(key);
        if (it == scores.end()) throw SchemaViolation(std::string("assessment: missing score ") + key);
        sum += it->second;
    }
    a.scores = std::move(scores);
    a.value = static_cast<double>(sum) / (10.0 * static_cast<double>(kCriticCriteria.size()));
    a.justification = std::move(justification);
    return a;
}

json ValueAssessment::to_json() const {
    return {{"scores", scores}, {"value", value}, {"justification", justification}, {"blockers", blockers}};
}

bool SimTrajectory::hazard() const {
    for (const auto& s : steps) {
        if (s.predicted.hazard()) return true;
    }
    return false;
}

json SimTrajectory::to_json() const {
    json steps_j = json::array();
    for (const auto& s : steps) {
        steps_j.push_back({{"action", s.action.signature()},
                           {"kind", s.predicted.is_placeholder() ? "placeholder" : "known"},
                           {"to", s.predicted.observation.url},
                           {"uncertainty", s.predicted.uncertainty},
                           {"hazard", s.predicted.hazard()},
                           {"summary", s.predicted.summary ? s.predicted.summary->delta : std::string{}}});
    }
    return {{"root", root.index},
            {"root_action", root.action.signature()},
            {"steps", steps_j},
            {"raw_value", raw_value},
            {"confidence", confidence},
            {"weighted_value", weighted_value},
            {"placeholder_count", placeholder_count},
            {"assessment", assessment.to_json()}};
}

json SelectionResult::to_json() const {
    json cands = json::array();
    for (const auto& c : candidates.candidates) {
        cands.push_back({{"index", c.index},
                         {"action", c.action.signature()},
                         {"reasoning", c.reasoning},
                         {"speculative", c.speculative}});
    }
    json trajs = json::array();
    for (const auto& t : trajectories) trajs.push_back(t.to_json());
    json assessed = json::array();
    for (const auto& a : assessments) assessed.push_back(a.to_json());
    return {{"chosen", chosen.index},
            {"chosen_action", chosen.action.signature()},
            {"candidates", cands},
            {"trajectories", trajs},
            {"assessments", assessed},
            {"digest", digest.to_json()}};
}

CandidateSet propose_candidates(const DecisionContext& ctx, std::size_t n, PolicyBackend& actor) {
    if (n == 0) throw ValidationError("propose_candidates: n must be positive");
    auto resp = actor.generate(make_request(Role::actor, kActorSystem, actor_prompt(ctx, n, {})));
    auto set = parse_candidates(resp.parsed, ctx.observation, n);
    if (set.candidates.empty()) throw EmptyProposal("actor proposed no actions");
    if (ctx.map) {
        for (auto& c : set.candidates) c.outcome = predict(*ctx.map, ctx.observation, c.action);
    }
    return set;
}

ValueAssessment assess(const Candidate& candidate, const DecisionContext& ctx, PolicyBackend& critic) {
    std::ostringstream out;
    out << "CANDIDATE ASSESSMENT\n";
    render_header(out, ctx);
    render_page(out, ctx);
    out << "CANDIDATE: " << candidate.action.signature() << '\n'
        << "REASONING: " << candidate.reasoning << '\n'
        << "PREDICTED OUTCOME:\n";
    if (candidate.outcome) {
        out << render_outcome(*candidate.outcome, ctx.critic_sees_raw);
    } else {
        out << "  (not available)\n";
    }
    auto resp = critic.generate(make_request(Role::critic, kCriticSystem, out.str()));
    return assessment_from(resp.parsed);
}

ValueAssessment assess(const SimTrajectory& trajectory, const DecisionContext& ctx, PolicyBackend& critic) {
    std::ostringstream out;
    out << "TRAJECTORY ASSESSMENT\n";
    render_header(out, ctx);
    render_page(out, ctx);
    out << "ROOT CANDIDATE: " << trajectory.root.action.signature() << '\n'
        << "REASONING: " << trajectory.root.reasoning << '\n';
    for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
        const auto& s = trajectory.steps[i];
        out << "STEP " << i + 1 << ": " << s.action.signature() << '\n' << render_outcome(s.predicted, false);
    }
    const auto& end = trajectory.steps.back().predicted;
    out << "END STATE URL: " << url_or_unexplored(end.observation) << '\n';
    if (ctx.critic_sees_raw) out << "END STATE:\n" << end.observation.rendered_text;
    auto resp = critic.generate(make_request(Role::critic, kCriticSystem, out.str()));
    return assessment_from(resp.parsed);
}

SimTrajectory simulate_rollout(const Candidate& root, const DecisionContext& ctx, const CognitiveMap& map,
                               std::size_t depth, PolicyBackend& actor, PolicyBackend& critic) {
    if (depth < 1) throw ValidationError("simulate_rollout: depth must be >= 1");
    SimTrajectory traj;
    traj.root = root;

    Observation current = ctx.observation;
    Action action = root.action;
    std::string so_far;
    for (std::size_t d = 0; d < depth; ++d) {
        if (d > 0) {
            DecisionContext sim = ctx;
            sim.observation = current;
            sim.observation_text = current.rendered_text;
            auto resp = actor.generate(make_request(Role::actor, kActorSystem, actor_prompt(sim, 1, so_far)));
            auto next = parse_candidates(resp.parsed, current, 1);
            if (next.candidates.empty()) break;
            action = next.candidates.front().action;
        }
        auto predicted = predict(map, current, action);
        so_far += "- " + action.signature() + " -> " + url_or_unexplored(predicted.observation) + "\n";
        current = predicted.observation;
        const bool stop_here = action.kind == ActionKind::stop || predicted.hazard();
        traj.steps.push_back({action, std::move(predicted)});
        if (stop_here) break;
    }

    traj.confidence = 1.0;
    for (const auto& s : traj.steps) {
        traj.confidence *= 1.0 - s.predicted.uncertainty;
        if (s.predicted.is_placeholder()) ++traj.placeholder_count;
    }
    traj.assessment = assess(traj, ctx, critic);
    traj.raw_value = traj.assessment.value;
    traj.weighted_value = traj.raw_value * traj.confidence;
    return traj;
}

bool trajectory_precedes(const SimTrajectory& a, const SimTrajectory& b) {
    if (std::abs(a.weighted_value - b.weighted_value) > kTieTolerance) return a.weighted_value > b.weighted_value;
    if (a.placeholder_count != b.placeholder_count) return a.placeholder_count < b.placeholder_count;
    return a.root.index < b.root.index;
}

ExplorationDigest build_digest(const std::vector<SimTrajectory>& trajectories) {
    ExplorationDigest d;
    std::set<std::string> affordances;
    std::set<std::string> blockers;
    for (const auto& t : trajectories) {
        const auto label = t.root.action.signature();
        if (t.hazard()) {
            d.failed.push_back(label + ": irreversible outcome predicted");
        } else if (t.raw_value < 0.5) {
            d.failed.push_back(label + ": low value " + fixed2(t.raw_value));
        } else {
            std::string line = label + ": value " + fixed2(t.raw_value);
            for (const auto& s : t.steps) {
                if (s.predicted.summary) {
                    line += " (" + s.predicted.summary->delta + ")";
                    break;
                }
            }
            d.worked.push_back(std::move(line));
        }
        for (const auto& s : t.steps) {
            if (!s.predicted.summary) continue;
            for (const auto& a : s.predicted.summary->new_affordances) {
                if (affordances.insert(a).second) d.new_affordances.push_back(a);
            }
        }
        for (const auto& b : t.assessment.blockers) {
            if (blockers.insert(b).second) d.prerequisites.push_back(b);
        }
    }
    schema::require_valid(schema::kDigest, d.to_json());
    return d;
}

SelectionResult select_action(const DecisionContext& ctx, const CandidateSet& candidates, const CognitiveMap& map,
                              const LookaheadConfig& config, PolicyBackend& actor, PolicyBackend& critic) {
    if (candidates.candidates.empty()) throw EmptyProposal("select_action: empty candidate set");
    SelectionResult result;
    result.candidates = candidates;
    for (const auto& c : candidates.candidates) {
        result.trajectories.push_back(simulate_rollout(c, ctx, map, config.depth, actor, critic));
        result.assessments.push_back(result.trajectories.back().assessment);
    }
    const SimTrajectory* best = &result.trajectories.front();
    for (const auto& t : result.trajectories) {
        if (trajectory_precedes(t, *best)) best = &t;
    }
    result.chosen = best->root;
    result.digest = build_digest(result.trajectories);
    return result;
}

SelectionResult select_action(const DecisionContext& ctx, const CognitiveMap& map, const LookaheadConfig& config,
                              PolicyBackend& actor, PolicyBackend& critic) {
    DecisionContext with_map = ctx;
    with_map.map = &map;
    auto candidates = propose_candidates(with_map, config.candidates, actor);
    return select_action(with_map, candidates, map, config, actor, critic);
}

SelectionResult las_disabled_select(const DecisionContext& ctx, const CandidateSet& candidates,
                                    PolicyBackend& critic) {
    if (candidates.candidates.empty()) throw EmptyProposal("las_disabled_select: empty candidate set");
    SelectionResult result;
    result.candidates = candidates;
    std::size_t best = 0;
    for (std::size_t i = 0; i < candidates.candidates.size(); ++i) {
        result.assessments.push_back(assess(candidates.candidates[i], ctx, critic));
        if (i > 0 && result.assessments[i].value > result.assessments[best].value + kTieTolerance) best = i;
    }
    result.chosen = candidates.candidates[best];
    return result;
}

}  // namespace atlas
