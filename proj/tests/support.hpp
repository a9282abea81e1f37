#pragma once

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "atlas/backend.hpp"
#include "atlas/environment.hpp"
#include "atlas/exploration.hpp"
#include "atlas/harness.hpp"
#include "atlas/memory.hpp"

namespace atlas::testing {

inline std::string fixture(const std::string& rel) { return std::string(ATLAS_FIXTURE_DIR) + "/" + rel; }

inline const std::vector<std::string>& site_names() {
    static const std::vector<std::string> names = {"shop-admin", "code-host", "forum"};
    return names;
}

inline std::shared_ptr<const SiteSpec> site(const std::string& name) {
    return std::make_shared<const SiteSpec>(load_site_spec_file(fixture("sites/" + name + ".site.json")));
}

inline std::map<std::string, std::shared_ptr<const SiteSpec>> all_sites() {
    std::map<std::string, std::shared_ptr<const SiteSpec>> out;
    for (const auto& n : site_names()) out[n] = site(n);
    return out;
}

inline std::vector<TaskSpec> suite_tasks() { return load_tasks_file(fixture("tasks/suite.tasks.json")); }

inline TaskSpec task(const std::string& id) {
    for (auto& t : suite_tasks()) {
        if (t.task_id == id) return t;
    }
    throw ValidationError("no fixture task " + id);
}

inline std::vector<std::string> rule_files() {
    return {fixture("rules/shop-admin.rules.jsonl"), fixture("rules/code-host.rules.jsonl"),
            fixture("rules/forum.rules.jsonl"), fixture("rules/common.rules.jsonl")};
}

inline ScriptedRuleSet fixture_rules() {
    ScriptedRuleSet rules;
    for (const auto& f : rule_files()) rules.append(ScriptedRuleSet::from_file(f));
    return rules;
}

inline BackendPtr fixture_backend() { return std::make_shared<ScriptedBackend>(fixture_rules()); }

/// Rules from JSON lines given inline.
inline ScriptedRuleSet rules_from(const std::vector<std::string>& lines) {
    std::stringstream in;
    for (const auto& l : lines) in << l << '\n';
    return ScriptedRuleSet::from_jsonl(in, "<inline>");
}

/// A preset wired to the bundled scripted rules with a logical clock.
inline RunConfig fixture_config(const std::string& preset_name) {
    RunConfig c = preset(preset_name);
    c.clock = "logical";
    c.backends["default"] = BackendSpec{"scripted", rule_files(), {}, {}};
    return c;
}

/// Explores one site with the default policies and mines facts.
inline SiteMemory explored(const std::string& name, std::uint64_t seed = 0,
                           ExplorationBudget budget = {150, 50, 500}) {
    auto spec = site(name);
    auto backend = fixture_backend();
    BackendSet backends(backend);
    SiteMemory mem{CognitiveMap(name, MapMode::summarized), SemanticMemory()};
    auto report = run_exploration(spec, default_policies(), budget, backends, mem.map, seed);
    mine_trajectories(report, *backend, mem.facts);
    mem.map.reset_counters();
    return mem;
}

inline std::map<std::string, SiteMemory> explored_all(std::uint64_t seed = 0) {
    std::map<std::string, SiteMemory> out;
    for (const auto& n : site_names()) out.emplace(n, explored(n, seed));
    return out;
}

}  // namespace atlas::testing
