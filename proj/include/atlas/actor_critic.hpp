#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "atlas/agent_state.hpp"
#include "atlas/backend.hpp"
#include "atlas/environment.hpp"
#include "atlas/memory.hpp"
#include "atlas/planner.hpp"

namespace atlas {

/// Everything the actor and critic condition on at one step.
struct DecisionContext {
    std::string goal;
    const Plan* plan = nullptr;  // null without a high-level planner
    Observation observation;
    /// Text shown for the current page; the rendered observation when empty.
    std::string observation_text;
    const AgentState* state = nullptr;
    std::vector<SemanticFact> facts;
    const CognitiveMap* map = nullptr;  // null when the cognitive map is off
    bool critic_sees_raw = true;
};

struct Candidate {
    std::size_t index = 0;
    Action action;
    std::string reasoning;
    bool speculative = false;  // not among the page's affordances
    /// One-step outcome looked up while proposing (cognitive map on only).
    std::optional<PredictedOutcome> outcome;
};

struct CandidateSet {
    std::vector<Candidate> candidates;
    std::size_t step_index = 0;
};

inline constexpr std::array<const char*, 5> kCriticCriteria = {
    "goal_alignment", "state_viability", "action_coherence", "plan_consistency", "outcome_safety"};

struct ValueAssessment {
    std::map<std::string, int> scores;
    double value = 0.0;  // mean(scores) / 10, recomputed locally
    std::string justification;
    std::vector<std::string> blockers;

    static ValueAssessment from_scores(std::map<std::string, int> scores, std::string justification = {});
    json to_json() const;
};

struct SimStep {
    Action action;
    PredictedOutcome predicted;
};

struct SimTrajectory {
    Candidate root;
    std::vector<SimStep> steps;
    double raw_value = 0.0;
    double confidence = 0.0;
    double weighted_value = 0.0;
    std::size_t placeholder_count = 0;
    ValueAssessment assessment;

    bool hazard() const;
    json to_json() const;
};

struct LookaheadConfig {
    std::size_t candidates = 3;  // N
    std::size_t depth = 2;       // D
};

/// Asks the actor for up to `n` candidates (schema candidates.v1). Duplicate
/// action signatures are merged keeping the lowest index; the set is cut to
/// `n`. With a map in the context, each available action's retrieved outcome
/// goes into the prompt and each candidate carries its one-step outcome.
/// Throws EmptyProposal when nothing usable comes back.
CandidateSet propose_candidates(const DecisionContext& ctx, std::size_t n, PolicyBackend& actor);

/// Critic assessment of a single candidate, using its attached outcome if any.
ValueAssessment assess(const Candidate& candidate, const DecisionContext& ctx, PolicyBackend& critic);

/// Critic assessment of a simulated trajectory's end state against the plan.
ValueAssessment assess(const SimTrajectory& trajectory, const DecisionContext& ctx, PolicyBackend& critic);

/// Depth-D rollout in cognitive space: outcomes come only from `map`, never
/// from the environment. Continuations use the actor with n = 1. Stops early
/// on a stop action or a hazard-flagged prediction.
SimTrajectory simulate_rollout(const Candidate& root, const DecisionContext& ctx, const CognitiveMap& map,
                               std::size_t depth, PolicyBackend& actor, PolicyBackend& critic);

struct SelectionResult {
    Candidate chosen;
    CandidateSet candidates;
    std::vector<SimTrajectory> trajectories;   // look-ahead only
    std::vector<ValueAssessment> assessments;  // one per candidate
    ExplorationDigest digest;

    json to_json() const;
};

/// Total order used to pick the best trajectory: higher weighted value, then
/// fewer placeholders, then lower candidate index. True if `a` beats `b`.
bool trajectory_precedes(const SimTrajectory& a, const SimTrajectory& b);

/// Look-ahead action simulation over an existing candidate set: one rollout
/// and one critic assessment per candidate, confidence weighting, argmax.
SelectionResult select_action(const DecisionContext& ctx, const CandidateSet& candidates, const CognitiveMap& map,
                              const LookaheadConfig& config, PolicyBackend& actor, PolicyBackend& critic);

/// Proposes then selects with look-ahead.
SelectionResult select_action(const DecisionContext& ctx, const CognitiveMap& map, const LookaheadConfig& config,
                              PolicyBackend& actor, PolicyBackend& critic);

/// Plain actor-critic: assess each candidate once, argmax value, ties to the
/// lower index. Makes no map reads of its own.
SelectionResult las_disabled_select(const DecisionContext& ctx, const CandidateSet& candidates,
                                    PolicyBackend& critic);

/// Digest of a look-ahead pass for the replanner.
ExplorationDigest build_digest(const std::vector<SimTrajectory>& trajectories);

}  // namespace atlas
