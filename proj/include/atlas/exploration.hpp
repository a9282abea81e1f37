#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "atlas/backend.hpp"
#include "atlas/environment.hpp"
#include "atlas/memory.hpp"

namespace atlas {

enum class ExplorationStrategy { breadth_first_affordance, depth_first_random, entropy_greedy };

std::string to_string(ExplorationStrategy s);
ExplorationStrategy strategy_from_string(const std::string& s);

struct ExplorationPolicyConfig {
    std::string policy_id;
    ExplorationStrategy strategy = ExplorationStrategy::entropy_greedy;
    double temperature = 0.7;
    std::size_t max_steps = 25;  // episode length before the explorer resets
};

struct ExplorationBudget {
    std::size_t total_env_steps = 60;
    std::size_t per_policy_steps = 20;
    std::size_t max_map_records = 500;

    /// Throws ValidationError on a zero field or per_policy > total.
    void validate() const;
};

/// One of each strategy at temperatures 0.3, 0.7 and 1.0.
std::vector<ExplorationPolicyConfig> default_policies();

struct ExplorationStep {
    Observation from;
    Action action;
    Observation to;
    bool latched = false;  // the step fired an irreversible element
};

struct ExplorationTrajectory {
    std::string policy_id;
    std::vector<ExplorationStep> steps;
};

struct ExplorationReport {
    std::string site_id;
    std::vector<ExplorationTrajectory> trajectories;
    std::size_t distinct_keys_visited = 0;
    std::size_t steps_used = 0;
    std::size_t records_written = 0;

    json to_json() const;
};

/// Curiosity-driven exploration. Policies run in order, each from fresh
/// resets, until its step share or the total budget is used; every executed
/// transition is written to `map` (summarized by the summarizer role) until
/// `max_map_records` new records exist. Takes no task: there is no reward.
///
/// The explorer role serves depth_first_random; a null choice from it falls
/// back to a uniform draw from the seeded generator.
ExplorationReport run_exploration(std::shared_ptr<const SiteSpec> spec,
                                  const std::vector<ExplorationPolicyConfig>& policies,
                                  const ExplorationBudget& budget, const BackendSet& backends, CognitiveMap& map,
                                  std::uint64_t seed = 0);

/// Converts trajectories into semantic facts (schema facts.v1, summarizer
/// role), deduplicates, and adds the new ones to `facts`. Returns the facts
/// that were added.
std::vector<SemanticFact> mine_trajectories(const ExplorationReport& report, PolicyBackend& miner,
                                            SemanticMemory& facts, std::size_t batch_lines = 24);

double coverage(const ExplorationReport& report, const SiteSpec& spec);

}  // namespace atlas
