#pragma once

// Random look-ahead instances over a synthetic site, plus a brute-force
// oracle that recomputes the selection from the generator's own ground truth
// (never from CognitiveMap::retrieve).

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "atlas/actor_critic.hpp"
#include "atlas/backend.hpp"
#include "atlas/memory.hpp"

namespace atlas::testing {

inline Observation synthetic_page(std::size_t i, std::size_t links) {
    Observation o;
    o.page_id = "p" + std::to_string(i);
    o.url = "/p" + std::to_string(i);
    o.rendered_text = "synthetic page " + std::to_string(i) + "\n";
    for (std::size_t k = 0; k < links; ++k) {
        const auto id = "l" + std::to_string(k);
        o.element_index.push_back({id, ElementKind::link, "link " + id, ""});
        o.rendered_text += "[" + id + "] link \"link " + id + "\"\n";
    }
    return o;
}

struct TruthEdge {
    std::size_t count = 0;
    std::size_t last_write = 0;
    bool hazard = false;
};

struct SimInstance {
    std::vector<Observation> pages;
    std::map<std::string, std::size_t> page_by_url;
    /// (from url, action signature) -> (to url -> edge)
    std::map<std::pair<std::string, std::string>, std::map<std::string, TruthEdge>> truth;
    std::map<std::string, std::vector<Action>> actor_table;  // url -> proposals
    std::map<std::pair<std::string, std::string>, std::array<int, 5>> critic_table;  // (root sig, end url)
    std::unique_ptr<CognitiveMap> map;
    BackendPtr actor;
    BackendPtr critic;
    std::size_t root = 0;
    LookaheadConfig config;
    /// Multiplies every critic score by this factor before clamping to 10.
    int score_scale = 1;
};

inline json candidates_json(const std::vector<Action>& actions) {
    json c = json::array();
    for (const auto& a : actions) c.push_back({{"action", a.to_json()}, {"reasoning", "r"}});
    return {{"candidates", c}};
}

inline json scores_json(const std::array<int, 5>& s) {
    json j = json::object();
    for (std::size_t i = 0; i < kCriticCriteria.size(); ++i) j[kCriticCriteria[i]] = s[i];
    return {{"scores", j}, {"justification", "table"}};
}

struct InstanceOptions {
    double mapped_probability = 0.85;
    double hazard_probability = 0.1;
    bool allow_unmapped_candidates = true;
};

inline SimInstance make_instance(std::mt19937_64& rng, const InstanceOptions& opt = {}) {
    auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

    SimInstance inst;
    const std::size_t n_pages = uni(3, 6);
    for (std::size_t i = 0; i < n_pages; ++i) {
        inst.pages.push_back(synthetic_page(i, uni(2, 4)));
        inst.page_by_url[inst.pages.back().url] = i;
    }

    // ground-truth transitions, written in a shuffled order
    std::vector<std::tuple<std::size_t, Action, std::size_t>> writes;
    std::set<std::tuple<std::string, std::string, std::string>> hazards;
    for (std::size_t i = 0; i < n_pages; ++i) {
        std::vector<Action> actions;
        for (const auto& e : inst.pages[i].element_index) actions.push_back(Action::click(e.element_id));
        actions.push_back(Action::back());
        for (const auto& a : actions) {
            if (!coin(opt.mapped_probability)) continue;
            const std::size_t succ = uni(1, 3);
            std::set<std::size_t> targets;
            while (targets.size() < std::min(succ, n_pages)) targets.insert(uni(0, n_pages - 1));
            for (auto t : targets) {
                const std::size_t count = uni(1, 4);
                for (std::size_t c = 0; c < count; ++c) writes.emplace_back(i, a, t);
                if (coin(opt.hazard_probability)) {
                    hazards.emplace(inst.pages[i].url, a.signature(), inst.pages[t].url);
                }
            }
        }
    }
    std::shuffle(writes.begin(), writes.end(), rng);

    std::vector<std::string> summarizer_rules;
    for (const auto& [from, sig, to] : hazards) {
        json rule = {{"role", "summarizer"},
                     {"match", json::array({"FROM URL: " + from + "\n", "ACTION: " + sig + "\n", "TO URL: " + to + "\n"})},
                     {"response", {{"delta", "irreversible"}, {"new_affordances", json::array()}, {"hazard_flag", true}}}};
        summarizer_rules.push_back(rule.dump());
    }
    summarizer_rules.push_back(
        json({{"role", "summarizer"},
              {"match", ""},
              {"fallback", true},
              {"response", {{"delta", "moved"}, {"new_affordances", json::array()}, {"hazard_flag", false}}}})
            .dump());
    std::stringstream srules;
    for (const auto& l : summarizer_rules) srules << l << '\n';
    ScriptedBackend summarizer(ScriptedRuleSet::from_jsonl(srules));

    inst.map = std::make_unique<CognitiveMap>("synthetic", MapMode::summarized);
    std::size_t seq = 0;
    for (const auto& [from, action, to] : writes) {
        inst.map->record_transition(inst.pages[from], action, inst.pages[to], &summarizer);
        ++seq;
        auto& edge = inst.truth[{inst.pages[from].url, action.signature()}][inst.pages[to].url];
        edge.count += 1;
        edge.last_write = seq;
        edge.hazard = hazards.count({inst.pages[from].url, action.signature(), inst.pages[to].url}) > 0;
    }

    // actor proposals per page
    std::vector<std::string> actor_rules;
    for (std::size_t i = 0; i < n_pages; ++i) {
        std::vector<Action> pool;
        for (const auto& e : inst.pages[i].element_index) pool.push_back(Action::click(e.element_id));
        pool.push_back(Action::back());
        pool.push_back(Action::stop("answer " + std::to_string(i)));
        if (opt.allow_unmapped_candidates) pool.push_back(Action::click("ghost"));
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::min<std::size_t>(pool.size(), uni(1, 4)));
        inst.actor_table[inst.pages[i].url] = pool;
        json rule = {{"role", "actor"}, {"match", "CURRENT URL: " + inst.pages[i].url + "\n"}, {"response", candidates_json(pool)}};
        actor_rules.push_back(rule.dump());
    }
    actor_rules.push_back(json({{"role", "actor"},
                                {"match", ""},
                                {"fallback", true},
                                {"response", candidates_json({Action::back()})}})
                              .dump());
    std::stringstream arules;
    for (const auto& l : actor_rules) arules << l << '\n';
    inst.actor = std::make_shared<ScriptedBackend>(ScriptedRuleSet::from_jsonl(arules));

    inst.root = uni(0, n_pages - 1);
    inst.config.candidates = uni(1, 4);
    inst.config.depth = uni(1, 3);

    // critic scores for every (root candidate, end state) pair
    std::vector<std::string> end_urls;
    for (const auto& p : inst.pages) end_urls.push_back(p.url);
    end_urls.push_back("(unexplored)");
    std::vector<std::string> critic_rules;
    for (const auto& a : inst.actor_table[inst.pages[inst.root].url]) {
        for (const auto& url : end_urls) {
            std::array<int, 5> s{};
            for (auto& v : s) v = static_cast<int>(uni(0, 10));
            inst.critic_table[{a.signature(), url}] = s;
        }
    }
    inst.critic = nullptr;  // built by rebuild_critic
    return inst;
}

/// (Re)builds the critic from the score table, applying `score_scale`.
inline void rebuild_critic(SimInstance& inst) {
    std::stringstream rules;
    for (const auto& [key, s] : inst.critic_table) {
        std::array<int, 5> scaled{};
        for (std::size_t i = 0; i < 5; ++i) scaled[i] = std::min(10, s[i] * inst.score_scale);
        json rule = {{"role", "critic"},
                     {"match", json::array({"ROOT CANDIDATE: " + key.first + "\n", "END STATE URL: " + key.second + "\n"})},
                     {"response", scores_json(scaled)}};
        rules << rule.dump() << '\n';
    }
    inst.critic = std::make_shared<ScriptedBackend>(ScriptedRuleSet::from_jsonl(rules));
}

struct OracleTrajectory {
    double raw = 0.0;
    double confidence = 1.0;
    double weighted = 0.0;
    std::size_t placeholders = 0;
};

struct OracleResult {
    std::size_t chosen = 0;
    std::vector<OracleTrajectory> trajectories;
};

inline OracleResult brute_force(const SimInstance& inst) {
    const auto& root_url = inst.pages[inst.root].url;
    auto proposals = inst.actor_table.at(root_url);
    if (proposals.size() > inst.config.candidates) proposals.resize(inst.config.candidates);

    OracleResult out;
    for (const auto& cand : proposals) {
        OracleTrajectory t;
        std::string url = root_url;  // "" stands for the placeholder observation
        Action a = cand;
        for (std::size_t d = 0; d < inst.config.depth; ++d) {
            if (d > 0) {
                auto it = inst.actor_table.find(url);
                a = it == inst.actor_table.end() ? Action::back() : it->second.front();
            }
            if (a.kind == ActionKind::stop) break;  // terminal, certain: factor 1
            auto eit = url.empty() ? inst.truth.end() : inst.truth.find({url, a.signature()});
            if (eit == inst.truth.end()) {
                t.confidence *= 0.0;
                ++t.placeholders;
                url.clear();
                continue;
            }
            std::size_t total = 0;
            const std::pair<const std::string, TruthEdge>* best = nullptr;
            for (const auto& e : eit->second) {
                total += e.second.count;
                if (!best || e.second.count > best->second.count ||
                    (e.second.count == best->second.count && e.second.last_write > best->second.last_write)) {
                    best = &e;
                }
            }
            const double u = 1.0 - static_cast<double>(best->second.count) / static_cast<double>(total + 1);
            t.confidence *= 1.0 - u;
            url = best->first;
            if (best->second.hazard) break;
        }
        const auto& s = inst.critic_table.at({cand.signature(), url.empty() ? "(unexplored)" : url});
        int sum = 0;
        for (int v : s) sum += std::min(10, v * inst.score_scale);
        t.raw = sum / 50.0;
        t.weighted = t.raw * t.confidence;
        out.trajectories.push_back(t);
    }
    for (std::size_t i = 1; i < out.trajectories.size(); ++i) {
        const auto& a = out.trajectories[i];
        const auto& b = out.trajectories[out.chosen];
        bool better;
        if (std::abs(a.weighted - b.weighted) > 1e-12) {
            better = a.weighted > b.weighted;
        } else {
            better = a.placeholders < b.placeholders;
        }
        if (better) out.chosen = i;
    }
    return out;
}

inline DecisionContext context_for(const SimInstance& inst) {
    DecisionContext ctx;
    ctx.goal = "synthetic goal";
    ctx.observation = inst.pages[inst.root];
    ctx.map = inst.map.get();
    return ctx;
}

}  // namespace atlas::testing
