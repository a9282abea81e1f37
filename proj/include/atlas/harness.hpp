#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "atlas/actor_critic.hpp"
#include "atlas/backend.hpp"
#include "atlas/environment.hpp"
#include "atlas/memory.hpp"
#include "atlas/planner.hpp"

namespace atlas {

enum class CognitiveMapSetting { off, raw, summarized };

std::string to_string(CognitiveMapSetting s);
CognitiveMapSetting cognitive_map_setting_from_string(const std::string& s);

struct ComponentFlags {
    CognitiveMapSetting cognitive_map = CognitiveMapSetting::off;
    bool high_level_plan = false;
    bool lookahead = false;
    bool replanning = false;
    bool online_memory_update = false;
    bool critic = true;  // false: execute the actor's first candidate
};

/// Where one role's generations come from.
struct BackendSpec {
    std::string kind = "scripted";     // scripted | replay | remote
    std::vector<std::string> rules;    // scripted: JSONL rule files
    std::string recording;             // replay: JSONL recording
    RemoteConfig remote;               // remote
};

struct RunConfig {
    std::string name = "custom";
    ComponentFlags components;
    std::size_t candidates = 3;  // N
    std::size_t depth = 2;       // D
    double epsilon = 0.5;
    std::size_t max_replans = 3;
    std::vector<std::uint64_t> seeds{0};
    std::size_t history_cap = 20;
    std::size_t working_capacity = 50;
    std::size_t facts_k = 5;
    std::size_t summary_cap = 400;
    bool critic_sees_raw = true;
    bool memory_from_simulation = false;
    std::string clock = "wall";  // wall | logical
    std::size_t workers = 1;
    /// Role name or "default" -> backend.
    std::map<std::string, BackendSpec> backends;
    std::string record_path;  // when set, every call is recorded here

    /// Throws ValidationError naming the offending field.
    void validate() const;
    json to_json() const;
    /// Relative backend paths resolve against `base_dir`.
    static RunConfig from_json(const json& j, const std::string& base_dir = {});
    static RunConfig from_file(const std::string& path);
};

/// The ablation rows: Base, Base+CM-Raw, Base+CM, Base+HL and the full agent.
std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

/// Builds one backend that routes every role according to `config.backends`
/// (wrapped in a recorder when `record_path` is set; the sink must outlive
/// the returned backend).
BackendPtr make_backend(const RunConfig& config, std::ostream* record_sink = nullptr);

/// Dispatches each request to the backend serving its role.
class RoutingBackend final : public PolicyBackend {
public:
    explicit RoutingBackend(BackendSet routes) : routes_(std::move(routes)) {}
    std::string id() const override { return "router"; }

private:
    GenerationResponse do_generate(const GenerationRequest& request) override;
    BackendSet routes_;
};

/// Observation text for prompts: url, page text (a model summary or the
/// static text cut to `cap` bytes) and every element. Falls back to the
/// deterministic form when the summarizer fails; `warning` receives why.
std::string summarize_observation(const Observation& obs, PolicyBackend* summarizer, std::size_t cap,
                                  std::string* warning = nullptr);

struct EpisodeResult {
    std::string task_id;
    std::string category;
    std::uint64_t seed = 0;
    bool success = false;
    std::size_t steps_taken = 0;
    std::size_t replans = 0;
    std::size_t las_calls = 0;
    std::size_t backend_tokens = 0;
    std::size_t wall_ms = 0;
    std::size_t map_reads = 0;        // every cognitive-map read in the episode
    std::size_t selection_reads = 0;  // reads made inside action selection
    std::string error;

    json to_json() const;
    static EpisodeResult from_json(const json& j);
};

/// Memory an episode works against. With `map` null the agent has no map.
struct EpisodeMemory {
    CognitiveMap* map = nullptr;
    SemanticMemory* facts = nullptr;
};

/// One full agent episode. Component errors end the episode as a failure;
/// nothing escapes except invalid configuration. `log` receives episode.v1
/// JSON lines.
EpisodeResult run_episode(const TaskSpec& task, std::shared_ptr<const SiteSpec> spec, const RunConfig& config,
                          EpisodeMemory memory, BackendPtr backend, std::ostream* log = nullptr,
                          std::uint64_t seed = 0);

struct CategoryStats {
    std::size_t successes = 0;
    std::size_t total = 0;
    double rate = 0.0;
};

struct SuiteMetrics {
    std::map<std::string, CategoryStats> per_category;
    std::size_t successes = 0;
    std::size_t total = 0;
    double overall_rate = 0.0;

    static SuiteMetrics from_results(const std::vector<EpisodeResult>& results);
    json to_json() const;
};

/// Per-site memory shared by a suite.
struct SiteMemory {
    CognitiveMap map;
    SemanticMemory facts;
};

struct SuiteOutput {
    SuiteMetrics metrics;
    std::vector<EpisodeResult> results;
};

/// Runs every task once per configured seed. Episodes get private copies of
/// the site memory unless online updates are on, in which case they run in
/// order and write to `memory`. With `out_dir` set, writes
/// `episodes/<task>-s<seed>.jsonl` and `metrics.json` there.
SuiteOutput run_suite(const std::vector<TaskSpec>& tasks,
                      const std::map<std::string, std::shared_ptr<const SiteSpec>>& sites, const RunConfig& config,
                      std::map<std::string, SiteMemory>& memory, BackendPtr backend,
                      const std::string& out_dir = {});

/// Recomputes metrics from the `end` events of `<out_dir>/episodes/*.jsonl`.
SuiteOutput eval_logs(const std::string& out_dir);

struct AblationRow {
    std::string name;
    ComponentFlags components;
    SuiteMetrics metrics;
    std::size_t map_reads = 0;
    std::size_t selection_reads = 0;
};

/// Fixed-width comparison table, one row per preset.
std::string render_ablation_table(const std::vector<AblationRow>& rows);

/// Textual dump of a map: nodes, then edges with counts, U and summaries.
std::string inspect_map(const CognitiveMap& map, const std::string& from_key = {});

}  // namespace atlas
