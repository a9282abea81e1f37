#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace atlas {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Actions

enum class ActionKind { click, type, go_to, back, stop };

/// One element of the action set. `target` holds the element id (click/type)
/// or url (goto); `text` holds the typed text (type) or the answer (stop).
struct Action {
    ActionKind kind = ActionKind::back;
    std::string target;
    std::string text;

    static Action click(std::string element_id);
    static Action type(std::string element_id, std::string value);
    static Action go_to(std::string url);
    static Action back();
    static Action stop(std::string answer);

    /// Canonical string, e.g. `click(reports_link)` or `type(q,"shoes")`.
    /// Two actions are the same action iff their signatures are equal.
    std::string signature() const;

    json to_json() const;
    /// Throws ParseError on malformed input.
    static Action from_json(const json& j);

    friend bool operator==(const Action&, const Action&) = default;
};

std::string to_string(ActionKind k);

// ---------------------------------------------------------------------------
// Site fixtures

enum class ElementKind { link, button, textbox, select };

std::string to_string(ElementKind k);

struct TransitionRule {
    std::string on;
    /// element id -> regex that the current value of that element must fully
    /// match. Unset values never match.
    std::map<std::string, std::string> when;
    std::string to;
    /// field -> template; `${element_id}` expands to that element's value.
    std::map<std::string, std::string> effects;
};

struct Element {
    std::string element_id;
    ElementKind kind = ElementKind::link;
    std::string label;
    std::optional<std::string> input_format;
    std::vector<std::string> options;  // select only
    std::optional<std::string> placeholder;
};

struct Page {
    std::string page_id;
    std::string url;
    std::string static_text;
    std::vector<Element> elements;
    std::vector<TransitionRule> transitions;
    std::optional<std::string> flash;

    const Element* find_element(const std::string& id) const;
};

struct SiteSpec {
    std::string site_id;
    std::map<std::string, Page> pages;
    std::string start_page;
    std::set<std::pair<std::string, std::string>> hazards;
    std::map<std::string, std::string> initial_fields;

    const Page& page(const std::string& id) const;
    bool is_hazard(const std::string& page_id, const std::string& element_id) const;
};

/// Parses and validates a `*.site.json` document. Throws ParseError or
/// ValidationError (message carries the offending path).
SiteSpec load_site_spec(const json& document);
SiteSpec load_site_spec_file(const std::string& path);

// ---------------------------------------------------------------------------
// Observations

struct ElementRef {
    std::string element_id;
    ElementKind kind = ElementKind::link;
    std::string label;
    std::string placeholder;

    friend bool operator==(const ElementRef&, const ElementRef&) = default;
};

struct Observation {
    std::string page_id;
    std::string url;
    std::string rendered_text;
    std::vector<ElementRef> element_index;
    std::size_t step_index = 0;
    std::string flash;

    json to_json() const;
    static Observation from_json(const json& j);

    friend bool operator==(const Observation&, const Observation&) = default;
};

/// Short stable digest of what the agent saw; used in episode logs.
std::string observation_digest(const Observation& obs);

/// One click per link/button, one type per textbox/select (text = the
/// element's placeholder, or "test"), then back and stop. Order follows the
/// element index.
std::vector<Action> available_actions(const Observation& obs);

// ---------------------------------------------------------------------------
// Tasks and evaluation

enum class MatchMode { exact, fuzzy_token };

struct AnswerMatch {
    std::string expected;
    MatchMode mode = MatchMode::exact;
};

struct StatePredicate {
    std::optional<std::string> page_id;
    std::map<std::string, std::string> fields;
};

struct TaskSpec {
    std::string task_id;
    std::string site_id;
    std::string goal_text;
    std::string category_tag;
    std::optional<AnswerMatch> answer_match;
    std::optional<StatePredicate> state_predicate;
    std::size_t max_steps = 1;
};

TaskSpec task_from_json(const json& j);
std::vector<TaskSpec> load_tasks(const json& document);
std::vector<TaskSpec> load_tasks_file(const std::string& path);

/// Terminal summary of an episode, sufficient for evaluation.
struct EpisodeOutcome {
    bool stopped = false;
    std::optional<std::string> answer;
    std::string final_page_id;
    std::map<std::string, std::string> fields;
};

bool evaluate(const TaskSpec& task, const EpisodeOutcome& outcome);

// ---------------------------------------------------------------------------
// Environment

inline constexpr const char* kFlashNothingHappened = "nothing happened";
inline constexpr const char* kFlashInvalidFormat = "invalid format";
inline constexpr const char* kFlashInvalidOption = "invalid option";
inline constexpr const char* kFlashBlocked = "action blocked: an irreversible change already happened";

/// A single episode over an immutable SiteSpec. Deterministic: the same
/// action sequence from a fresh handle yields the same observations.
class Environment {
public:
    Environment(std::shared_ptr<const SiteSpec> spec, std::size_t max_steps);

    /// Throws SiteMismatch if the task targets another site.
    static std::pair<Environment, Observation> reset(std::shared_ptr<const SiteSpec> spec,
                                                     const TaskSpec& task);

    /// Throws EpisodeTerminated after stop, StepBudgetExhausted at max_steps.
    Observation step(const Action& action);

    Observation current_observation() const;

    bool terminated() const { return terminated_; }
    bool latched() const { return latched_; }
    std::size_t step_index() const { return step_index_; }
    std::size_t max_steps() const { return max_steps_; }
    const std::string& current_page() const { return current_; }
    const std::map<std::string, std::string>& fields() const { return fields_; }
    const SiteSpec& spec() const { return *spec_; }

    EpisodeOutcome outcome() const;

private:
    Observation render(std::string flash) const;
    Observation stay(std::string flash);
    Observation move_to(const std::string& page_id, bool hazard);
    bool blocked(const std::string& page_id) const;
    std::optional<std::string> value_of(const std::string& page_id,
                                        const std::string& element_id) const;

    std::shared_ptr<const SiteSpec> spec_;
    std::size_t max_steps_;
    std::size_t step_index_ = 0;
    std::string current_;
    std::vector<std::string> history_;
    std::set<std::string> visited_;
    std::set<std::string> pre_hazard_;
    std::map<std::string, std::map<std::string, std::string>> form_;
    std::map<std::string, std::string> fields_;
    bool latched_ = false;
    bool terminated_ = false;
    std::optional<std::string> answer_;
};

}  // namespace atlas
