#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atlas/error.hpp"
#include "atlas/exploration.hpp"
#include "atlas/harness.hpp"

namespace fs = std::filesystem;
using namespace atlas;

namespace {

std::map<std::string, std::shared_ptr<const SiteSpec>> load_sites(const std::vector<std::string>& paths) {
    std::map<std::string, std::shared_ptr<const SiteSpec>> sites;
    for (const auto& p : paths) {
        auto spec = std::make_shared<const SiteSpec>(load_site_spec_file(p));
        sites[spec->site_id] = spec;
    }
    return sites;
}

std::map<std::string, SiteMemory> load_maps(const std::vector<std::string>& paths) {
    std::map<std::string, SiteMemory> out;
    for (const auto& p : paths) {
        if (!fs::exists(p)) throw ValidationError("map file not found: " + p);
        auto [map, facts] = load_memory(p);
        const auto site = map.site_id();
        out.insert_or_assign(site, SiteMemory{std::move(map), std::move(facts)});
    }
    return out;
}

BackendPtr backend_for(const RunConfig& config, std::unique_ptr<std::ofstream>& sink) {
    if (!config.record_path.empty()) {
        sink = std::make_unique<std::ofstream>(config.record_path, std::ios::binary);
        if (!*sink) throw SinkWriteFailure("cannot open recording sink: " + config.record_path);
    }
    return make_backend(config, sink.get());
}

std::vector<TaskSpec> load_all_tasks(const std::vector<std::string>& paths) {
    std::vector<TaskSpec> tasks;
    for (const auto& p : paths) {
        auto more = load_tasks_file(p);
        tasks.insert(tasks.end(), more.begin(), more.end());
    }
    return tasks;
}

void print_metrics(const SuiteMetrics& m) { std::cout << m.to_json().dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"atlas: memory-augmented web agent harness"};
    app.require_subcommand(1);

    // explore
    auto* explore = app.add_subcommand("explore", "Build a cognitive map of a site by curiosity-driven exploration");
    std::string ex_site, ex_out, ex_config;
    std::vector<std::string> ex_policies;
    std::size_t ex_total = 60, ex_per_policy = 20, ex_records = 500;
    std::uint64_t ex_seed = 0;
    std::string ex_mode = "summarized";
    explore->add_option("--site", ex_site, "Site fixture (*.site.json)")->required()->check(CLI::ExistingFile);
    explore->add_option("--config", ex_config, "Run config supplying the backends")->required()->check(CLI::ExistingFile);
    explore->add_option("--out", ex_out, "Map file to write (facts go to <map>.facts.json)")->required();
    explore->add_option("--policy", ex_policies, "Strategy names; default one of each");
    explore->add_option("--budget", ex_total, "Total environment steps");
    explore->add_option("--per-policy", ex_per_policy, "Environment steps per policy");
    explore->add_option("--max-records", ex_records, "Cap on new map records");
    explore->add_option("--seed", ex_seed, "RNG seed");
    explore->add_option("--mode", ex_mode, "Map mode: raw or summarized")->check(CLI::IsMember({"raw", "summarized"}));

    // run
    auto* run = app.add_subcommand("run", "Run a task suite");
    std::vector<std::string> run_tasks, run_sites, run_maps;
    std::string run_config, run_out;
    run->add_option("--tasks", run_tasks, "Task files")->required()->check(CLI::ExistingFile);
    run->add_option("--site", run_sites, "Site fixtures")->required()->check(CLI::ExistingFile);
    run->add_option("--config", run_config, "Run config")->required()->check(CLI::ExistingFile);
    run->add_option("--map", run_maps, "Map files (one per site)");
    run->add_option("--out", run_out, "Output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Recompute metrics from episode logs");
    std::string eval_dir;
    eval->add_option("out_dir", eval_dir, "Directory written by run")->required();

    // inspect-map
    auto* inspect = app.add_subcommand("inspect-map", "Print a cognitive map");
    std::string in_map, in_from;
    inspect->add_option("--map", in_map, "Map file")->required()->check(CLI::ExistingFile);
    inspect->add_option("--from", in_from, "Only edges leaving this observation key");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run a grid of configs and compare");
    std::vector<std::string> ab_grid, ab_tasks, ab_sites, ab_maps;
    std::string ab_out;
    ablate->add_option("--grid", ab_grid, "Config files, one row each")->required()->check(CLI::ExistingFile);
    ablate->add_option("--tasks", ab_tasks, "Task files")->required()->check(CLI::ExistingFile);
    ablate->add_option("--site", ab_sites, "Site fixtures")->required()->check(CLI::ExistingFile);
    ablate->add_option("--map", ab_maps, "Map files (one per site)");
    ablate->add_option("--out", ab_out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*explore) {
            auto config = RunConfig::from_file(ex_config);
            std::unique_ptr<std::ofstream> sink;
            BackendSet backends(backend_for(config, sink));
            auto spec = std::make_shared<const SiteSpec>(load_site_spec_file(ex_site));
            std::vector<ExplorationPolicyConfig> policies;
            if (ex_policies.empty()) {
                policies = default_policies();
            } else {
                for (const auto& name : ex_policies) {
                    ExplorationPolicyConfig p;
                    p.strategy = strategy_from_string(name);
                    p.policy_id = name;
                    policies.push_back(p);
                }
            }
            ExplorationBudget budget{ex_total, ex_per_policy, ex_records};
            CognitiveMap map(spec->site_id, ex_mode == "raw" ? MapMode::raw : MapMode::summarized);
            auto report = run_exploration(spec, policies, budget, backends, map, ex_seed);
            SemanticMemory facts;
            auto added = mine_trajectories(report, backends.at(Role::summarizer), facts);
            save_memory(map, facts, ex_out);
            std::cout << "site " << spec->site_id << ": " << report.steps_used << " steps, "
                      << report.distinct_keys_visited << " observations, coverage " << coverage(report, *spec)
                      << ", " << map.size() << " records, " << added.size() << " facts -> " << ex_out << '\n';
        } else if (*run) {
            auto config = RunConfig::from_file(run_config);
            auto sites = load_sites(run_sites);
            auto memory = load_maps(run_maps);
            if (config.components.cognitive_map != CognitiveMapSetting::off && run_maps.empty()) {
                throw ValidationError(run_config + ": cognitive_map is on but no --map was given");
            }
            std::unique_ptr<std::ofstream> sink;
            auto backend = backend_for(config, sink);
            auto out = run_suite(load_all_tasks(run_tasks), sites, config, memory, backend, run_out);
            print_metrics(out.metrics);
        } else if (*eval) {
            print_metrics(eval_logs(eval_dir).metrics);
        } else if (*inspect) {
            auto [map, facts] = load_memory(in_map);
            std::cout << inspect_map(map, in_from);
            if (in_from.empty() && facts.size() > 0) {
                std::cout << "facts: " << facts.size() << '\n';
                for (const auto& f : facts.facts()) std::cout << "  [" << to_string(f.kind) << "] " << f.statement << '\n';
            }
        } else if (*ablate) {
            auto sites = load_sites(ab_sites);
            auto tasks = load_all_tasks(ab_tasks);
            std::vector<AblationRow> rows;
            for (const auto& path : ab_grid) {
                auto config = RunConfig::from_file(path);
                if (config.components.cognitive_map != CognitiveMapSetting::off && ab_maps.empty()) {
                    throw ValidationError(path + ": cognitive_map is on but no --map was given");
                }
                auto memory = load_maps(ab_maps);  // fresh per row
                std::unique_ptr<std::ofstream> sink;
                auto backend = backend_for(config, sink);
                const auto dir = ab_out.empty() ? std::string{} : (fs::path(ab_out) / config.name).string();
                auto out = run_suite(tasks, sites, config, memory, backend, dir);
                AblationRow row{config.name, config.components, out.metrics, 0, 0};
                for (const auto& r : out.results) {
                    row.map_reads += r.map_reads;
                    row.selection_reads += r.selection_reads;
                }
                rows.push_back(std::move(row));
            }
            const auto table = render_ablation_table(rows);
            std::cout << table;
            if (!ab_out.empty()) {
                std::ofstream(fs::path(ab_out) / "ablation.txt") << table;
            }
        }
    } catch (const Error& e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
