#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "atlas/agent_state.hpp"
#include "atlas/backend.hpp"
#include "atlas/environment.hpp"
#include "atlas/memory.hpp"

namespace atlas {

enum class SubgoalStatus { pending, active, done };

std::string to_string(SubgoalStatus s);

struct Subgoal {
    std::string text;
    std::string success_predicate;
    SubgoalStatus status = SubgoalStatus::pending;

    friend bool operator==(const Subgoal&, const Subgoal&) = default;
};

struct Plan {
    std::string plan_id;
    std::vector<Subgoal> subgoals;
    std::size_t revision = 0;
    std::string rationale;

    /// Null once every subgoal is done.
    const Subgoal* active() const;
    bool complete() const { return active() == nullptr; }

    std::string render() const;
    json to_json() const;
};

/// What look-ahead simulation learned at one step, handed to the replanner.
struct ExplorationDigest {
    std::vector<std::string> worked;
    std::vector<std::string> failed;
    std::vector<std::string> new_affordances;
    std::vector<std::string> prerequisites;

    bool empty() const;
    std::string render() const;
    json to_json() const;
    static ExplorationDigest from_json(const json& j);
};

struct ReplanConfig {
    double epsilon = 0.5;
    bool enabled = true;
    std::size_t max_replans = 3;

    void validate() const;
};

/// Initial plan from the goal and first observation (schema plan.v1).
Plan make_plan(const std::string& goal, const Observation& first, PolicyBackend& planner);

/// 1 - Jaccard over lowercased alphanumeric tokens of rendered text and
/// element ids. A placeholder expectation diverges by 0.
double divergence(const Observation& observed, const PredictedOutcome& expected);

/// enabled and divergence strictly above epsilon.
bool should_replan(const Observation& observed, const PredictedOutcome& expected, const ReplanConfig& config);

/// Next revision. Done subgoals of `old` are kept verbatim and first; the
/// planner's subgoals follow, with the first of them active.
Plan replan(const std::string& goal, const Observation& current, const AgentState& state,
            const std::vector<SemanticFact>& facts, const ExplorationDigest& digest, const Plan& old,
            PolicyBackend& planner);

/// Asks the critic whether the active subgoal's predicate holds; if so it
/// becomes done and the next pending subgoal becomes active.
Plan advance_progress(const Plan& plan, const Observation& current, PolicyBackend& critic);

}  // namespace atlas
