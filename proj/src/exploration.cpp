#include "atlas/exploration.hpp"

#include <deque>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "atlas/error.hpp"
#include "atlas/schema.hpp"

namespace atlas {

std::string to_string(ExplorationStrategy s) {
    switch (s) {
        case ExplorationStrategy::breadth_first_affordance: return "breadth_first_affordance";
        case ExplorationStrategy::depth_first_random: return "depth_first_random";
        case ExplorationStrategy::entropy_greedy: return "entropy_greedy";
    }
    return "?";
}

ExplorationStrategy strategy_from_string(const std::string& s) {
    for (auto v : {ExplorationStrategy::breadth_first_affordance, ExplorationStrategy::depth_first_random,
                   ExplorationStrategy::entropy_greedy}) {
        if (to_string(v) == s) return v;
    }
    throw ParseError("unknown exploration strategy '" + s + "'");
}

void ExplorationBudget::validate() const {
    if (total_env_steps == 0 || per_policy_steps == 0 || max_map_records == 0) {
        throw ValidationError("exploration budget fields must be positive");
    }
    if (per_policy_steps > total_env_steps) {
        throw ValidationError("exploration budget: per_policy_steps exceeds total_env_steps");
    }
}

std::vector<ExplorationPolicyConfig> default_policies() {
    return {
        {"bfa-0.3", ExplorationStrategy::breadth_first_affordance, 0.3, 25},
        {"eg-0.7", ExplorationStrategy::entropy_greedy, 0.7, 25},
        {"dfr-1.0", ExplorationStrategy::depth_first_random, 1.0, 25},
    };
}

json ExplorationReport::to_json() const {
    json trajs = json::array();
    for (const auto& t : trajectories) {
        json steps = json::array();
        for (const auto& s : t.steps) {
            steps.push_back({{"from", s.from.url},
                             {"action", s.action.signature()},
                             {"to", s.to.url},
                             {"flash", s.to.flash},
                             {"latched", s.latched}});
        }
        trajs.push_back({{"policy", t.policy_id}, {"steps", steps}});
    }
    return {{"site_id", site_id},
            {"distinct_keys_visited", distinct_keys_visited},
            {"steps_used", steps_used},
            {"records_written", records_written},
            {"trajectories", trajs}};
}

namespace {

std::vector<Action> exploration_actions(const Observation& obs) {
    auto actions = available_actions(obs);
    std::erase_if(actions, [](const Action& a) { return a.kind == ActionKind::stop; });
    return actions;
}

/// What an explorer has learned so far, plus navigation over the map.
class Explorer {
public:
    Explorer(const CognitiveMap& map, std::mt19937_64& rng) : map_(map), rng_(rng) {}

    void saw(const Observation& obs) { seen_.emplace(observation_key(obs).value, obs); }
    std::size_t distinct() const { return seen_.size(); }

    bool has_untried(const Observation& obs) const {
        for (const auto& a : exploration_actions(obs)) {
            if (map_.uncertainty(obs, a) >= 1.0) return true;
        }
        return false;
    }

    std::optional<Action> first_untried(const Observation& obs) const {
        for (const auto& a : exploration_actions(obs)) {
            if (map_.uncertainty(obs, a) >= 1.0) return a;
        }
        return std::nullopt;
    }

    /// First action on a shortest modal-edge path from `obs` to some other
    /// page that still has untried actions.
    std::optional<Action> toward_frontier(const Observation& obs) const {
        std::map<std::string, std::vector<std::pair<Action, std::string>>> graph;
        for (const auto& [key, o] : seen_) {
            for (const auto& a : exploration_actions(o)) {
                auto p = map_.retrieve(o, a);
                if (!p.is_placeholder() && !p.hazard()) graph[key].emplace_back(a, p.to_key.value);
            }
        }
        const auto start = observation_key(obs).value;
        std::map<std::string, Action> first_step;
        std::deque<std::string> queue{start};
        std::set<std::string> visited{start};
        while (!queue.empty()) {
            auto cur = queue.front();
            queue.pop_front();
            if (cur != start) {
                auto it = seen_.find(cur);
                if (it != seen_.end() && has_untried(it->second)) return first_step.at(cur);
            }
            for (const auto& [a, next] : graph[cur]) {
                if (!visited.insert(next).second) continue;
                first_step.emplace(next, cur == start ? a : first_step.at(cur));
                queue.push_back(next);
            }
        }
        return std::nullopt;
    }

    Action random_action(const Observation& obs) {
        auto actions = exploration_actions(obs);
        std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
        return actions[pick(rng_)];
    }

private:
    const CognitiveMap& map_;
    std::mt19937_64& rng_;
    std::map<std::string, Observation> seen_;
};

Action choose_with_backend(PolicyBackend* backend, const ExplorationPolicyConfig& policy, const Observation& obs,
                           std::size_t distinct_seen, Explorer& explorer) {
    auto actions = exploration_actions(obs);
    if (backend) {
        std::ostringstream user;
        user << "Visited " << distinct_seen
             << " distinct pages so far. Prefer actions that reveal pages you have not seen.\n"
             << "CURRENT URL: " << obs.url << '\n'
             << obs.rendered_text << "CHOICES:\n";
        for (std::size_t i = 0; i < actions.size(); ++i) user << i << ": " << actions[i].signature() << '\n';
        auto req = make_request(Role::explorer,
                                "You explore a website to map how actions change pages. There is no task; "
                                "maximize coverage of distinct pages and behaviors.",
                                user.str(), std::string(schema::kExploreStep));
        req.temperature = std::clamp(policy.temperature, 0.0, 2.0);
        auto resp = backend->generate(req);
        const auto& choice = resp.parsed["choice"];
        if (choice.is_number_integer()) {
            auto idx = choice.get<std::size_t>();
            if (idx < actions.size()) return actions[idx];
        }
    }
    return explorer.random_action(obs);
}

}  // namespace

ExplorationReport run_exploration(std::shared_ptr<const SiteSpec> spec,
                                  const std::vector<ExplorationPolicyConfig>& policies,
                                  const ExplorationBudget& budget, const BackendSet& backends, CognitiveMap& map,
                                  std::uint64_t seed) {
    if (policies.empty()) throw ValidationError("run_exploration: at least one policy required");
    budget.validate();
    for (const auto& p : policies) {
        if (p.max_steps < 1) throw ValidationError("policy " + p.policy_id + ": max_steps must be >= 1");
    }

    ExplorationReport report;
    report.site_id = spec->site_id;
    std::mt19937_64 rng(seed);
    Explorer explorer(map, rng);
    PolicyBackend* summarizer = backends.get(Role::summarizer).get();
    PolicyBackend* chooser = backends.get(Role::explorer).get();

    for (const auto& policy : policies) {
        const std::size_t share = std::min(budget.per_policy_steps, budget.total_env_steps - report.steps_used);
        std::size_t used = 0;
        while (used < share) {
            Environment env(spec, policy.max_steps);
            Observation obs = env.current_observation();
            explorer.saw(obs);
            ExplorationTrajectory traj{policy.policy_id, {}};
            std::optional<Observation> anchor;
            bool returned = false;

            while (used < share && !env.latched() && env.step_index() < env.max_steps()) {
                Action action = Action::back();
                switch (policy.strategy) {
                    case ExplorationStrategy::entropy_greedy: {
                        if (auto a = explorer.first_untried(obs)) {
                            action = *a;
                        } else if (auto nav = explorer.toward_frontier(obs)) {
                            action = *nav;
                        } else {
                            action = explorer.random_action(obs);
                        }
                        break;
                    }
                    case ExplorationStrategy::breadth_first_affordance: {
                        // return to the page being swept while it has untried affordances
                        const bool descended = anchor && observation_key(*anchor) != observation_key(obs);
                        if (descended && !returned && explorer.has_untried(*anchor)) {
                            returned = true;
                            action = Action::back();
                        } else if (auto a = explorer.first_untried(obs)) {
                            anchor = obs;
                            returned = false;
                            action = *a;
                        } else if (auto nav = explorer.toward_frontier(obs)) {
                            anchor.reset();
                            action = *nav;
                        } else {
                            anchor.reset();
                            action = explorer.random_action(obs);
                        }
                        break;
                    }
                    case ExplorationStrategy::depth_first_random:
                        action = choose_with_backend(chooser, policy, obs, explorer.distinct(), explorer);
                        break;
                }

                const bool was_latched = env.latched();
                Observation next = env.step(action);
                ++used;
                ++report.steps_used;
                if (report.records_written < budget.max_map_records) {
                    if (map.record_transition(obs, action, next, summarizer).created) ++report.records_written;
                }
                traj.steps.push_back({obs, action, next, env.latched() && !was_latched});
                explorer.saw(next);
                obs = std::move(next);
            }
            if (!traj.steps.empty()) report.trajectories.push_back(std::move(traj));
        }
        if (report.steps_used >= budget.total_env_steps) break;
    }
    report.distinct_keys_visited = explorer.distinct();
    return report;
}

std::vector<SemanticFact> mine_trajectories(const ExplorationReport& report, PolicyBackend& miner,
                                            SemanticMemory& facts, std::size_t batch_lines) {
    if (report.trajectories.empty()) throw ValidationError("mine_trajectories: report has no trajectories");
    if (batch_lines == 0) batch_lines = 1;

    std::vector<std::string> lines;
    std::set<std::string> unique;
    for (const auto& t : report.trajectories) {
        for (const auto& s : t.steps) {
            std::string line = s.from.url + " | " + s.action.signature() + " -> " + s.to.url;
            if (!s.to.flash.empty()) line += " | flash: " + s.to.flash;
            if (s.latched) line += " | IRREVERSIBLE";
            if (unique.insert(line).second) lines.push_back(std::move(line));
        }
    }

    std::vector<SemanticFact> added;
    for (std::size_t start = 0; start < lines.size(); start += batch_lines) {
        std::ostringstream user;
        user << "SITE: " << report.site_id << "\nTRAJECTORY DIGEST:\n";
        for (std::size_t i = start; i < std::min(lines.size(), start + batch_lines); ++i) user << lines[i] << '\n';
        auto resp = miner.generate(make_request(
            Role::summarizer,
            "You mine exploration trajectories of a website for reusable knowledge: input format rules, "
            "irreversible hazards, capability limits and navigation hints. Report only what the digest shows.",
            user.str(), std::string(schema::kFacts)));
        for (const auto& fj : resp.parsed["facts"]) {
            SemanticFact f;
            f.site_id = report.site_id;
            f.statement = fj["statement"].get<std::string>();
            f.kind = fact_kind_from_string(fj["kind"].get<std::string>());
            f.source = FactSource::exploration;
            if (facts.add_fact(f)) added.push_back(facts.facts().back());
        }
    }
    return added;
}

double coverage(const ExplorationReport& report, const SiteSpec& spec) {
    if (spec.pages.empty()) return 0.0;
    return std::min(1.0, static_cast<double>(report.distinct_keys_visited) / static_cast<double>(spec.pages.size()));
}

}  // namespace atlas
