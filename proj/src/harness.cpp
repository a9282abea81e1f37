#include "atlas/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "atlas/agent_state.hpp"
#include "atlas/error.hpp"
#include "atlas/exploration.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace fs = std::filesystem;

namespace atlas {

std::string to_string(CognitiveMapSetting s) {
    switch (s) {
        case CognitiveMapSetting::off: return "off";
        case CognitiveMapSetting::raw: return "raw";
        case CognitiveMapSetting::summarized: return "summarized";
    }
    return "?";
}

CognitiveMapSetting cognitive_map_setting_from_string(const std::string& s) {
    if (s == "off") return CognitiveMapSetting::off;
    if (s == "raw") return CognitiveMapSetting::raw;
    if (s == "summarized") return CognitiveMapSetting::summarized;
    throw ValidationError("components.cognitive_map: expected off, raw or summarized, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
    const auto& c = components;
    if (c.lookahead && c.cognitive_map == CognitiveMapSetting::off) {
        throw ValidationError("config '" + name + "': lookahead requires cognitive_map != off");
    }
    if (c.replanning && !c.high_level_plan) {
        throw ValidationError("config '" + name + "': replanning requires high_level_plan");
    }
    if (c.online_memory_update && c.cognitive_map == CognitiveMapSetting::off) {
        throw ValidationError("config '" + name + "': online_memory_update requires cognitive_map != off");
    }
    if (candidates == 0) throw ValidationError("config '" + name + "': N must be positive");
    if (depth == 0) throw ValidationError("config '" + name + "': D must be positive");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("config '" + name + "': epsilon must be in (0, 1]");
    if (max_replans == 0) throw ValidationError("config '" + name + "': max_replans must be positive");
    if (seeds.empty()) throw ValidationError("config '" + name + "': seeds must not be empty");
    if (history_cap == 0 || working_capacity == 0 || facts_k == 0 || summary_cap == 0 || workers == 0) {
        throw ValidationError("config '" + name + "': budgets must be positive");
    }
    if (clock != "wall" && clock != "logical") {
        throw ValidationError("config '" + name + "': clock must be wall or logical");
    }
    for (const auto& [role, spec] : backends) {
        if (role != "default") role_from_string(role);
        if (spec.kind == "scripted" && spec.rules.empty()) {
            throw ValidationError("config '" + name + "': scripted backend for " + role + " has no rule files");
        }
        if (spec.kind == "replay" && spec.recording.empty()) {
            throw ValidationError("config '" + name + "': replay backend for " + role + " has no recording");
        }
        if (spec.kind != "scripted" && spec.kind != "replay" && spec.kind != "remote") {
            throw ValidationError("config '" + name + "': unknown backend kind '" + spec.kind + "'");
        }
    }
}

namespace {

json backend_spec_to_json(const BackendSpec& b) {
    json j = {{"kind", b.kind}};
    if (b.kind == "scripted") j["rules"] = b.rules;
    if (b.kind == "replay") j["recording"] = b.recording;
    if (b.kind == "remote") {
        j["base_url"] = b.remote.base_url;
        j["model"] = b.remote.model;
        j["api_key_env"] = b.remote.api_key_env;
        j["timeout_ms"] = b.remote.timeout.count();
        j["max_retries"] = b.remote.max_retries;
        j["max_reasks"] = b.remote.max_reasks;
        j["max_in_flight"] = b.remote.max_in_flight;
    }
    return j;
}

std::string resolve(const std::string& base_dir, const std::string& p) {
    if (base_dir.empty() || p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

BackendSpec backend_spec_from_json(const json& j, const std::string& base_dir) {
    BackendSpec b;
    b.kind = j.value("kind", std::string("scripted"));
    if (j.contains("rules")) {
        const auto& r = j["rules"];
        if (r.is_string()) {
            b.rules.push_back(resolve(base_dir, r.get<std::string>()));
        } else {
            for (const auto& p : r) b.rules.push_back(resolve(base_dir, p.get<std::string>()));
        }
    }
    b.recording = resolve(base_dir, j.value("recording", std::string{}));
    b.remote.base_url = j.value("base_url", b.remote.base_url);
    b.remote.model = j.value("model", b.remote.model);
    b.remote.api_key_env = j.value("api_key_env", b.remote.api_key_env);
    b.remote.timeout = std::chrono::milliseconds(j.value("timeout_ms", b.remote.timeout.count()));
    b.remote.max_retries = j.value("max_retries", b.remote.max_retries);
    b.remote.max_reasks = j.value("max_reasks", b.remote.max_reasks);
    b.remote.max_in_flight = j.value("max_in_flight", b.remote.max_in_flight);
    return b;
}

}  // namespace

json RunConfig::to_json() const {
    json backs = json::object();
    for (const auto& [role, spec] : backends) backs[role] = backend_spec_to_json(spec);
    return {{"name", name},
            {"components",
             {{"cognitive_map", to_string(components.cognitive_map)},
              {"high_level_plan", components.high_level_plan},
              {"lookahead", components.lookahead},
              {"replanning", components.replanning},
              {"online_memory_update", components.online_memory_update},
              {"critic", components.critic}}},
            {"N", candidates},
            {"D", depth},
            {"epsilon", epsilon},
            {"max_replans", max_replans},
            {"seeds", seeds},
            {"history_cap", history_cap},
            {"working_capacity", working_capacity},
            {"facts_k", facts_k},
            {"summary_cap", summary_cap},
            {"critic_sees_raw", critic_sees_raw},
            {"memory_from_simulation", memory_from_simulation},
            {"clock", clock},
            {"workers", workers},
            {"backends", backs},
            {"record", record_path}};
}

RunConfig RunConfig::from_json(const json& j, const std::string& base_dir) {
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    RunConfig c;
    try {
        if (j.contains("preset")) c = preset(j["preset"].get<std::string>());
        c.name = j.value("name", c.name);
        if (j.contains("components")) {
            const auto& f = j["components"];
            auto& comp = c.components;
            if (f.contains("cognitive_map")) {
                comp.cognitive_map = cognitive_map_setting_from_string(f["cognitive_map"].get<std::string>());
            }
            comp.high_level_plan = f.value("high_level_plan", comp.high_level_plan);
            comp.lookahead = f.value("lookahead", comp.lookahead);
            comp.replanning = f.value("replanning", comp.replanning);
            comp.online_memory_update = f.value("online_memory_update", comp.online_memory_update);
            comp.critic = f.value("critic", comp.critic);
        }
        c.candidates = j.value("N", c.candidates);
        c.depth = j.value("D", c.depth);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.max_replans = j.value("max_replans", c.max_replans);
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        c.history_cap = j.value("history_cap", c.history_cap);
        c.working_capacity = j.value("working_capacity", c.working_capacity);
        c.facts_k = j.value("facts_k", c.facts_k);
        c.summary_cap = j.value("summary_cap", c.summary_cap);
        c.critic_sees_raw = j.value("critic_sees_raw", c.critic_sees_raw);
        c.memory_from_simulation = j.value("memory_from_simulation", c.memory_from_simulation);
        c.clock = j.value("clock", c.clock);
        c.workers = j.value("workers", c.workers);
        if (j.contains("backends")) {
            for (const auto& [role, spec] : j["backends"].items()) {
                c.backends[role] = backend_spec_from_json(spec, base_dir);
            }
        }
        c.record_path = resolve(base_dir, j.value("record", std::string{}));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    try {
        return from_json(j, fs::path(path).parent_path().string());
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::vector<std::string> preset_names() { return {"Base", "Base+CM-Raw", "Base+CM", "Base+HL", "Full"}; }

RunConfig preset(const std::string& name) {
    RunConfig c;
    c.name = name;
    auto& f = c.components;
    if (name == "Base") return c;
    if (name == "Base+CM-Raw") {
        f.cognitive_map = CognitiveMapSetting::raw;
    } else if (name == "Base+CM") {
        f.cognitive_map = CognitiveMapSetting::summarized;
    } else if (name == "Base+HL") {
        f.high_level_plan = true;
    } else if (name == "Full") {
        f.cognitive_map = CognitiveMapSetting::summarized;
        f.high_level_plan = true;
        f.lookahead = true;
        f.replanning = true;
        f.online_memory_update = true;
    } else {
        throw ValidationError("unknown preset '" + name + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Backends

GenerationResponse RoutingBackend::do_generate(const GenerationRequest& request) {
    return routes_.at(request.role).generate(request);
}

BackendPtr make_backend(const RunConfig& config, std::ostream* record_sink) {
    std::map<std::string, BackendPtr> cache;  // one instance per distinct source
    auto build = [&](const BackendSpec& spec) -> BackendPtr {
        std::string key = spec.kind + "|" + spec.recording + "|" + text::join(spec.rules, ",") + "|" +
                          spec.remote.base_url + "|" + spec.remote.model;
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        BackendPtr b;
        if (spec.kind == "scripted") {
            ScriptedRuleSet rules;
            for (const auto& path : spec.rules) rules.append(ScriptedRuleSet::from_file(path));
            b = std::make_shared<ScriptedBackend>(std::move(rules));
        } else if (spec.kind == "replay") {
            b = ReplayBackend::from_file(spec.recording);
        } else {
            b = std::make_shared<RemoteBackend>(spec.remote);
        }
        cache.emplace(key, b);
        return b;
    };

    if (config.backends.empty()) throw ValidationError("config '" + config.name + "': no backends configured");
    BackendSet routes;
    for (const auto& [role, spec] : config.backends) {
        if (role == "default") {
            routes.set_default(build(spec));
        } else {
            routes.set(role_from_string(role), build(spec));
        }
    }
    BackendPtr out = std::make_shared<RoutingBackend>(std::move(routes));
    if (record_sink) out = record_session(out, *record_sink);
    return out;
}

// ---------------------------------------------------------------------------
// Observation summaries

std::string summarize_observation(const Observation& obs, PolicyBackend* summarizer, std::size_t cap,
                                  std::string* warning) {
    std::string body;
    if (summarizer) {
        std::ostringstream user;
        user << "OBSERVATION SUMMARY\nURL: " << obs.url << '\n' << obs.rendered_text;
        try {
            auto resp = summarizer->generate(make_request(
                Role::summarizer,
                "Summarize this web page for an agent: what it shows and what can be done here. Keep it short.",
                user.str(), std::string(schema::kSummary)));
            body = resp.parsed["delta"].get<std::string>();
        } catch (const Error& e) {
            if (warning) *warning = std::string(e.kind()) + ": " + e.what();
        }
    }
    if (body.empty()) {
        // page text: the rendered lines before the element and flash lines
        std::istringstream lines(obs.rendered_text);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.rfind('[', 0) == 0 || line.rfind("! ", 0) == 0) break;
            if (!body.empty()) body += '\n';
            body += line;
        }
    }
    body = text::truncate(body, cap);

    std::ostringstream out;
    out << obs.url << '\n';
    if (!body.empty()) out << body << '\n';
    std::istringstream lines(obs.rendered_text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind('[', 0) == 0) out << line << '\n';
    }
    if (!obs.flash.empty()) out << "! " << obs.flash << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Episodes

json EpisodeResult::to_json() const {
    return {{"task_id", task_id},
            {"category", category},
            {"seed", seed},
            {"success", success},
            {"steps_taken", steps_taken},
            {"replans", replans},
            {"las_calls", las_calls},
            {"backend_tokens", backend_tokens},
            {"wall_ms", wall_ms},
            {"map_reads", map_reads},
            {"selection_reads", selection_reads},
            {"error", error}};
}

EpisodeResult EpisodeResult::from_json(const json& j) {
    EpisodeResult r;
    r.task_id = j.at("task_id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.seed = j.value("seed", std::uint64_t{0});
    r.success = j.at("success").get<bool>();
    r.steps_taken = j.value("steps_taken", std::size_t{0});
    r.replans = j.value("replans", std::size_t{0});
    r.las_calls = j.value("las_calls", std::size_t{0});
    r.backend_tokens = j.value("backend_tokens", std::size_t{0});
    r.wall_ms = j.value("wall_ms", std::size_t{0});
    r.map_reads = j.value("map_reads", std::size_t{0});
    r.selection_reads = j.value("selection_reads", std::size_t{0});
    r.error = j.value("error", std::string{});
    return r;
}

namespace {

void emit(std::ostream* log, const json& event) {
    if (!log) return;
    *log << event.dump() << '\n';
    if (!*log) throw SinkWriteFailure("episode log write failed");
}

/// Lets the memory agent turn one surprising real step into facts.
void learn_online(const Observation& from, const Action& action, const Observation& to, bool latched,
                  const std::string& site_id, PolicyBackend& miner, SemanticMemory& facts, json& event) {
    ExplorationReport report;
    report.site_id = site_id;
    report.trajectories.push_back({"online", {{from, action, to, latched}}});
    SemanticMemory scratch;
    json added = json::array();
    for (auto f : mine_trajectories(report, miner, scratch)) {
        f.source = FactSource::online_update;
        f.fact_id.clear();
        if (facts.add_fact(f)) added.push_back(f.statement);
    }
    event["facts_added"] = added;
}

}  // namespace

EpisodeResult run_episode(const TaskSpec& task, std::shared_ptr<const SiteSpec> spec, const RunConfig& config,
                          EpisodeMemory memory, BackendPtr backend, std::ostream* log, std::uint64_t seed) {
    config.validate();
    const auto& flags = config.components;
    const bool use_map = flags.cognitive_map != CognitiveMapSetting::off;
    if (use_map && !memory.map) {
        throw ValidationError("config '" + config.name + "': cognitive_map is on but no map was provided for site " +
                              task.site_id);
    }
    CognitiveMap* map = use_map ? memory.map : nullptr;
    SemanticMemory no_facts;
    SemanticMemory& facts = memory.facts ? *memory.facts : no_facts;

    auto metered = std::make_shared<MeteredBackend>(std::move(backend));
    PolicyBackend& llm = *metered;
    const auto started = std::chrono::steady_clock::now();
    const std::size_t reads_at_start = map ? map->reads() : 0;

    EpisodeResult result;
    result.task_id = task.task_id;
    result.category = task.category_tag;
    result.seed = seed;

    emit(log, {{"schema", "episode.v1"},
               {"event", "start"},
               {"task_id", task.task_id},
               {"site_id", task.site_id},
               {"goal", task.goal_text},
               {"config", config.name},
               {"components", config.to_json()["components"]},
               {"seed", seed}});

    auto elapsed_ms = [&]() -> std::size_t {
        if (config.clock != "wall") return 0;
        return static_cast<std::size_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count());
    };
    std::size_t logged_tokens = 0;
    std::optional<std::string> answer;
    try {
        auto [env, obs] = Environment::reset(spec, task);
        AgentState state(config.history_cap, config.working_capacity);
        std::optional<Plan> plan;
        std::optional<PredictedOutcome> expected;
        ExplorationDigest digest;
        const LookaheadConfig la{config.candidates, config.depth};
        const ReplanConfig rc{config.epsilon, flags.replanning, config.max_replans};

        while (!env.terminated() && env.step_index() < task.max_steps) {
            const std::size_t tokens_before = metered->tokens();
            json event = {{"schema", "episode.v1"},
                          {"event", "step"},
                          {"step", env.step_index()},
                          {"url", obs.url},
                          {"observation_digest", observation_digest(obs)}};

            std::string warning;
            const auto summary = summarize_observation(obs, &llm, config.summary_cap, &warning);
            event["summary"] = summary;
            if (!warning.empty()) event["summary_warning"] = warning;

            if (flags.high_level_plan) {
                if (!plan) {
                    plan = make_plan(task.goal_text, obs, llm);
                } else {
                    plan = advance_progress(*plan, obs, llm);
                }
            }
            if (flags.replanning && plan && expected) {
                const double d = divergence(obs, *expected);
                event["divergence"] = d;
                if (result.replans < config.max_replans && should_replan(obs, *expected, rc)) {
                    std::vector<SemanticFact> known;
                    if (use_map) known = facts.query_facts(task.site_id, task.goal_text + " " + summary, config.facts_k);
                    plan = replan(task.goal_text, obs, state, known, digest, *plan, llm);
                    ++result.replans;
                    event["replanned"] = true;
                }
            }
            if (plan) event["plan"] = plan->to_json();

            DecisionContext ctx;
            ctx.goal = task.goal_text;
            ctx.plan = plan ? &*plan : nullptr;
            ctx.observation = obs;
            ctx.observation_text = summary;
            ctx.state = &state;
            if (use_map) ctx.facts = facts.query_facts(task.site_id, task.goal_text + " " + summary, config.facts_k);
            ctx.map = map;
            ctx.critic_sees_raw = config.critic_sees_raw;

            Action action = Action::stop("");
            std::optional<CandidateSet> cands;
            try {
                cands = propose_candidates(ctx, config.candidates, llm);
            } catch (const EmptyProposal& e) {
                state.note("actor proposed no usable action; stopping");
                event["empty_proposal"] = e.what();
            }

            if (cands) {
                const std::size_t reads_before = map ? map->reads() : 0;
                SelectionResult sel;
                if (flags.lookahead) {
                    sel = select_action(ctx, *cands, *map, la, llm, llm);
                    ++result.las_calls;
                    expected.reset();
                    for (const auto& t : sel.trajectories) {
                        if (t.root.index == sel.chosen.index) expected = t.steps.front().predicted;
                    }
                    digest = sel.digest;
                } else if (flags.critic) {
                    sel = las_disabled_select(ctx, *cands, llm);
                    expected = sel.chosen.outcome;
                } else {
                    sel.candidates = *cands;
                    sel.chosen = cands->candidates.front();
                    expected = sel.chosen.outcome;
                }
                const std::size_t sel_reads = map ? map->reads() - reads_before : 0;
                result.selection_reads += sel_reads;
                event["selection"] = sel.to_json();
                event["selection_reads"] = sel_reads;
                action = sel.chosen.action;
            }

            const bool was_latched = env.latched();
            Observation next = env.step(action);
            event["action"] = action.signature();
            event["next_url"] = next.url;
            if (!next.flash.empty()) event["flash"] = next.flash;

            state.record_step({action.signature(), next.url, observation_digest(next), next.flash});
            if (!next.flash.empty()) state.note(action.signature() + ": " + next.flash);

            if (flags.online_memory_update && map && action.kind != ActionKind::stop) {
                PolicyBackend* summarizer = flags.cognitive_map == CognitiveMapSetting::summarized ? &llm : nullptr;
                auto w = map->record_transition(obs, action, next, summarizer);
                event["map_write"] = {{"created", w.created}, {"summarized", w.summarized}};
                const bool surprising = !next.flash.empty() || (env.latched() && !was_latched);
                if (surprising && memory.facts) {
                    try {
                        learn_online(obs, action, next, env.latched() && !was_latched, task.site_id, llm, facts,
                                     event);
                    } catch (const Error& e) {
                        event["facts_warning"] = std::string(e.kind()) + ": " + e.what();
                    }
                }
            }

            event["wall_ms"] = elapsed_ms();
            event["tokens"] = metered->tokens() - tokens_before;
            logged_tokens += metered->tokens() - tokens_before;
            emit(log, event);
            obs = std::move(next);
        }
        result.steps_taken = env.step_index();
        answer = env.outcome().answer;
        result.success = evaluate(task, env.outcome());
    } catch (const Error& e) {
        result.success = false;
        result.error = std::string(e.kind()) + ": " + e.what();
        // calls made by the failing step still count
        const std::size_t rest = metered->tokens() - logged_tokens;
        emit(log, {{"schema", "episode.v1"}, {"event", "error"}, {"error", result.error}, {"tokens", rest}});
    }

    result.backend_tokens = metered->tokens();
    result.map_reads = map ? map->reads() - reads_at_start : 0;
    result.wall_ms = elapsed_ms();
    emit(log, {{"schema", "episode.v1"},
               {"event", "end"},
               {"success", result.success},
               {"answer", answer ? json(*answer) : json(nullptr)},
               {"result", result.to_json()}});
    return result;
}

// ---------------------------------------------------------------------------
// Suites

SuiteMetrics SuiteMetrics::from_results(const std::vector<EpisodeResult>& results) {
    SuiteMetrics m;
    for (const auto& r : results) {
        auto& c = m.per_category[r.category];
        ++c.total;
        if (r.success) ++c.successes;
        ++m.total;
        if (r.success) ++m.successes;
    }
    for (auto& [_, c] : m.per_category) c.rate = static_cast<double>(c.successes) / static_cast<double>(c.total);
    m.overall_rate = m.total ? static_cast<double>(m.successes) / static_cast<double>(m.total) : 0.0;
    return m;
}

json SuiteMetrics::to_json() const {
    json cats = json::object();
    for (const auto& [name, c] : per_category) {
        cats[name] = {{"successes", c.successes}, {"total", c.total}, {"rate", c.rate}};
    }
    return {{"schema", "metrics.v1"},
            {"per_category", cats},
            {"successes", successes},
            {"total", total},
            {"overall_rate", overall_rate}};
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw SinkWriteFailure("cannot write " + path.string());
}

}  // namespace

SuiteOutput run_suite(const std::vector<TaskSpec>& tasks,
                      const std::map<std::string, std::shared_ptr<const SiteSpec>>& sites, const RunConfig& config,
                      std::map<std::string, SiteMemory>& memory, BackendPtr backend, const std::string& out_dir) {
    config.validate();
    if (tasks.empty()) throw ValidationError("run_suite: no tasks");
    const bool use_map = config.components.cognitive_map != CognitiveMapSetting::off;
    for (const auto& t : tasks) {
        if (!sites.count(t.site_id)) throw ValidationError("task " + t.task_id + ": unknown site " + t.site_id);
        if (use_map && !memory.count(t.site_id)) {
            throw ValidationError("config '" + config.name + "' needs a cognitive map for site " + t.site_id);
        }
    }
    if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "episodes");

    // the raw setting sees transitions without their summaries
    std::map<std::string, SiteMemory> raw_memory;
    std::map<std::string, SiteMemory>* store = &memory;
    if (config.components.cognitive_map == CognitiveMapSetting::raw) {
        for (const auto& [site, m] : memory) {
            SiteMemory copy{CognitiveMap(m.map.site_id(), MapMode::raw), m.facts};
            for (const auto& r : m.map.records()) {
                TransitionRecord stripped = r;
                stripped.summary = std::nullopt;
                copy.map.insert_loaded(std::move(stripped));
            }
            raw_memory.emplace(site, std::move(copy));
        }
        store = &raw_memory;
    }

    struct Job {
        const TaskSpec* task;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto seed : config.seeds) {
        for (const auto& t : tasks) jobs.push_back({&t, seed});
    }
    std::vector<EpisodeResult> results(jobs.size());
    std::vector<std::string> logs(jobs.size());

    auto run_job = [&](std::size_t i, SiteMemory* shared) {
        const auto& job = jobs[i];
        std::optional<SiteMemory> local;
        SiteMemory* mem = shared;
        if (!mem) {
            auto it = store->find(job.task->site_id);
            local.emplace(it != store->end() ? it->second : SiteMemory{CognitiveMap(job.task->site_id), SemanticMemory()});
            local->map.reset_counters();
            mem = &*local;
        }
        std::ostringstream log;
        results[i] = run_episode(*job.task, sites.at(job.task->site_id), config, {&mem->map, &mem->facts}, backend,
                                 &log, job.seed);
        logs[i] = log.str();
    };

    if (config.components.online_memory_update) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            auto it = store->find(jobs[i].task->site_id);
            run_job(i, it == store->end() ? nullptr : &it->second);
        }
    } else {
        const std::size_t workers = std::min(config.workers, jobs.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i, nullptr);
        };
        if (workers <= 1) {
            worker();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        }
    }

    SuiteOutput out{SuiteMetrics::from_results(results), results};
    if (!out_dir.empty()) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            auto name = jobs[i].task->task_id + "-s" + std::to_string(jobs[i].seed) + ".jsonl";
            write_file(fs::path(out_dir) / "episodes" / name, logs[i]);
        }
        write_file(fs::path(out_dir) / "metrics.json", out.metrics.to_json().dump(2) + "\n");
    }
    return out;
}

SuiteOutput eval_logs(const std::string& out_dir) {
    const fs::path dir = fs::path(out_dir) / "episodes";
    if (!fs::is_directory(dir)) throw ValidationError("no episodes directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    SuiteOutput out;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string line;
        std::optional<EpisodeResult> end;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(f.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
            if (j.value("event", std::string{}) == "end") end = EpisodeResult::from_json(j.at("result"));
        }
        if (!end) throw ParseError(f.string() + ": no end event");
        out.results.push_back(*end);
    }
    out.metrics = SuiteMetrics::from_results(out.results);
    return out;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
    std::set<std::string> categories;
    for (const auto& r : rows) {
        for (const auto& [c, _] : r.metrics.per_category) categories.insert(c);
    }
    std::ostringstream out;
    out << std::left << std::setw(14) << "config" << std::setw(12) << "map" << std::setw(5) << "HL" << std::setw(5)
        << "LA";
    for (const auto& c : categories) out << std::setw(10) << c;
    out << std::setw(10) << "overall" << "success\n";
    for (const auto& r : rows) {
        out << std::setw(14) << r.name << std::setw(12) << to_string(r.components.cognitive_map) << std::setw(5)
            << (r.components.high_level_plan ? "yes" : "no") << std::setw(5) << (r.components.lookahead ? "yes" : "no");
        for (const auto& c : categories) {
            auto it = r.metrics.per_category.find(c);
            std::ostringstream cell;
            if (it != r.metrics.per_category.end()) cell << std::fixed << std::setprecision(3) << it->second.rate;
            out << std::setw(10) << cell.str();
        }
        std::ostringstream overall;
        overall << std::fixed << std::setprecision(3) << r.metrics.overall_rate;
        out << std::setw(10) << overall.str() << r.metrics.successes << "/" << r.metrics.total << '\n';
    }
    return out.str();
}

std::string inspect_map(const CognitiveMap& map, const std::string& from_key) {
    const auto records = map.records();
    std::map<std::string, std::string> nodes;  // key -> url
    for (const auto& r : records) {
        nodes.emplace(r.from_key.value, r.from_url);
        nodes.emplace(r.to_key.value, r.raw_to_observation.url);
    }
    // per-edge uncertainty from all successors of (from, action)
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> counts;
    for (const auto& r : records) counts[{r.from_key.value, r.action_signature}].push_back(r.count);

    std::ostringstream out;
    out << "site: " << map.site_id() << " (" << to_string(map.mode()) << ")\n";
    out << "nodes: " << nodes.size() << '\n';
    for (const auto& [key, url] : nodes) out << "  " << key << "  " << url << '\n';
    out << "edges: " << records.size() << '\n';
    for (const auto& r : records) {
        if (!from_key.empty() && r.from_key.value != from_key) continue;
        const double u = uncertainty_from_counts(counts[{r.from_key.value, r.action_signature}]);
        out << "  " << r.from_key.value << " --" << r.action_signature << "--> " << r.to_key.value
            << "  count=" << r.count << " U=" << std::fixed << std::setprecision(3) << u;
        if (r.summary) {
            out << "  \"" << r.summary->delta << "\"";
            if (r.summary->hazard_flag) out << " [hazard]";
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace atlas
