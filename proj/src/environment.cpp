#include "atlas/environment.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "atlas/error.hpp"
#include "atlas/text.hpp"

namespace atlas {

// ---------------------------------------------------------------------------
// Action

Action Action::click(std::string element_id) {
    return {ActionKind::click, std::move(element_id), {}};
}
Action Action::type(std::string element_id, std::string value) {
    return {ActionKind::type, std::move(element_id), std::move(value)};
}
Action Action::go_to(std::string url) { return {ActionKind::go_to, std::move(url), {}}; }
Action Action::back() { return {ActionKind::back, {}, {}}; }
Action Action::stop(std::string answer) { return {ActionKind::stop, {}, std::move(answer)}; }

std::string to_string(ActionKind k) {
    switch (k) {
        case ActionKind::click: return "click";
        case ActionKind::type: return "type";
        case ActionKind::go_to: return "goto";
        case ActionKind::back: return "back";
        case ActionKind::stop: return "stop";
    }
    return "?";
}

std::string Action::signature() const {
    switch (kind) {
        case ActionKind::click: return "click(" + target + ")";
        case ActionKind::type: return "type(" + target + "," + json(text).dump() + ")";
        case ActionKind::go_to: return "goto(" + target + ")";
        case ActionKind::back: return "back";
        case ActionKind::stop: return "stop(" + json(text).dump() + ")";
    }
    return "?";
}

json Action::to_json() const {
    json j{{"type", to_string(kind)}};
    switch (kind) {
        case ActionKind::click: j["element"] = target; break;
        case ActionKind::type:
            j["element"] = target;
            j["text"] = text;
            break;
        case ActionKind::go_to: j["url"] = target; break;
        case ActionKind::back: break;
        case ActionKind::stop: j["answer"] = text; break;
    }
    return j;
}

namespace {

std::string require_string(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) {
        throw ParseError(path + "." + key + ": expected string");
    }
    return j.at(key).get<std::string>();
}

}  // namespace

Action Action::from_json(const json& j) {
    if (!j.is_object()) throw ParseError("action: expected object");
    const auto type = require_string(j, "type", "action");
    if (type == "click") return click(require_string(j, "element", "action"));
    if (type == "type") {
        return Action::type(require_string(j, "element", "action"), require_string(j, "text", "action"));
    }
    if (type == "goto") return go_to(require_string(j, "url", "action"));
    if (type == "back") return back();
    if (type == "stop") {
        return stop(j.contains("answer") && j["answer"].is_string() ? j["answer"].get<std::string>()
                                                                    : std::string{});
    }
    throw ParseError("action.type: unknown action type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Site fixtures

std::string to_string(ElementKind k) {
    switch (k) {
        case ElementKind::link: return "link";
        case ElementKind::button: return "button";
        case ElementKind::textbox: return "textbox";
        case ElementKind::select: return "select";
    }
    return "?";
}

namespace {

ElementKind element_kind_from(const std::string& s, const std::string& path) {
    if (s == "link") return ElementKind::link;
    if (s == "button") return ElementKind::button;
    if (s == "textbox") return ElementKind::textbox;
    if (s == "select") return ElementKind::select;
    throw ParseError(path + ": unknown element kind '" + s + "'");
}

bool takes_input(ElementKind k) { return k == ElementKind::textbox || k == ElementKind::select; }

std::map<std::string, std::string> string_map(const json& j, const std::string& path) {
    std::map<std::string, std::string> out;
    if (!j.is_object()) throw ParseError(path + ": expected object");
    for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) throw ParseError(path + "." + k + ": expected string");
        out[k] = v.get<std::string>();
    }
    return out;
}

void check_regex(const std::string& pattern, const std::string& path) {
    try {
        std::regex re(pattern);
    } catch (const std::regex_error& e) {
        throw ValidationError(path + ": invalid pattern '" + pattern + "'");
    }
}

}  // namespace

const Element* Page::find_element(const std::string& id) const {
    for (const auto& e : elements) {
        if (e.element_id == id) return &e;
    }
    return nullptr;
}

const Page& SiteSpec::page(const std::string& id) const {
    auto it = pages.find(id);
    if (it == pages.end()) throw ValidationError("unknown page '" + id + "'");
    return it->second;
}

bool SiteSpec::is_hazard(const std::string& page_id, const std::string& element_id) const {
    return hazards.count({page_id, element_id}) != 0;
}

SiteSpec load_site_spec(const json& doc) {
    if (!doc.is_object()) throw ParseError("site: expected object");
    SiteSpec spec;
    spec.site_id = require_string(doc, "site_id", "site");
    if (doc.contains("start_page")) spec.start_page = require_string(doc, "start_page", "site");
    if (doc.contains("fields")) spec.initial_fields = string_map(doc["fields"], "site.fields");

    const json pages = doc.value("pages", json::object());
    if (!pages.is_object()) throw ParseError("site.pages: expected object");
    for (const auto& [page_id, pj] : pages.items()) {
        const std::string path = "site.pages." + page_id;
        if (!pj.is_object()) throw ParseError(path + ": expected object");
        Page page;
        page.page_id = page_id;
        page.url = pj.value("url", std::string{});
        if (page.url.empty()) throw ValidationError(path + ".url: must be non-empty");
        page.static_text = pj.value("text", std::string{});
        if (pj.contains("flash")) page.flash = require_string(pj, "flash", path);

        const json elements = pj.value("elements", json::array());
        if (!elements.is_array()) throw ParseError(path + ".elements: expected array");
        std::set<std::string> ids;
        for (std::size_t i = 0; i < elements.size(); ++i) {
            const auto epath = path + ".elements[" + std::to_string(i) + "]";
            const auto& ej = elements[i];
            Element e;
            e.element_id = require_string(ej, "id", epath);
            e.kind = element_kind_from(require_string(ej, "kind", epath), epath + ".kind");
            e.label = ej.value("label", e.element_id);
            if (ej.contains("input_format")) {
                e.input_format = require_string(ej, "input_format", epath);
                check_regex(*e.input_format, epath + ".input_format");
            }
            if (ej.contains("placeholder")) e.placeholder = require_string(ej, "placeholder", epath);
            if (ej.contains("options")) e.options = ej["options"].get<std::vector<std::string>>();
            if (!ids.insert(e.element_id).second) {
                throw ValidationError(epath + ".id: duplicate element id '" + e.element_id + "'");
            }
            page.elements.push_back(std::move(e));
        }

        const json transitions = pj.value("transitions", json::array());
        if (!transitions.is_array()) throw ParseError(path + ".transitions: expected array");
        for (std::size_t i = 0; i < transitions.size(); ++i) {
            const auto tpath = path + ".transitions[" + std::to_string(i) + "]";
            const auto& tj = transitions[i];
            TransitionRule rule;
            rule.on = require_string(tj, "on", tpath);
            rule.to = require_string(tj, "to", tpath);
            if (tj.contains("when")) {
                if (tj["when"].is_string()) {
                    rule.when[rule.on] = tj["when"].get<std::string>();
                } else {
                    rule.when = string_map(tj["when"], tpath + ".when");
                }
            }
            if (tj.contains("effects")) rule.effects = string_map(tj["effects"], tpath + ".effects");
            page.transitions.push_back(std::move(rule));
        }
        spec.pages.emplace(page_id, std::move(page));
    }

    if (doc.contains("hazards")) {
        for (std::size_t i = 0; i < doc["hazards"].size(); ++i) {
            const auto& hj = doc["hazards"][i];
            const auto hpath = "site.hazards[" + std::to_string(i) + "]";
            spec.hazards.emplace(require_string(hj, "page", hpath), require_string(hj, "element", hpath));
        }
    }

    // referential integrity
    if (spec.start_page.empty() || !spec.pages.count(spec.start_page)) {
        throw ValidationError("site.start_page: '" + spec.start_page + "' is not a declared page");
    }
    for (const auto& [page_id, page] : spec.pages) {
        for (std::size_t i = 0; i < page.transitions.size(); ++i) {
            const auto& rule = page.transitions[i];
            const auto tpath = "site.pages." + page_id + ".transitions[" + std::to_string(i) + "]";
            if (!spec.pages.count(rule.to)) {
                throw ValidationError(tpath + ".to: undeclared page '" + rule.to + "'");
            }
            if (!page.find_element(rule.on)) {
                throw ValidationError(tpath + ".on: undeclared element '" + rule.on + "'");
            }
            for (const auto& [elem, pattern] : rule.when) {
                const Element* e = page.find_element(elem);
                if (!e) throw ValidationError(tpath + ".when: undeclared element '" + elem + "'");
                if (!takes_input(e->kind)) {
                    throw ValidationError(tpath + ".when: element '" + elem + "' takes no input");
                }
                check_regex(pattern, tpath + ".when." + elem);
            }
        }
    }
    for (const auto& [page_id, elem] : spec.hazards) {
        auto it = spec.pages.find(page_id);
        if (it == spec.pages.end()) {
            throw ValidationError("site.hazards: undeclared page '" + page_id + "'");
        }
        if (!it->second.find_element(elem)) {
            throw ValidationError("site.hazards: undeclared element '" + elem + "' on page '" + page_id + "'");
        }
    }
    return spec;
}

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace

SiteSpec load_site_spec_file(const std::string& path) {
    try {
        return load_site_spec(read_json_file(path));
    } catch (const ParseError& e) {
        throw ParseError(std::string(e.what()).rfind(path, 0) == 0 ? e.what() : path + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Observations

json Observation::to_json() const {
    json elems = json::array();
    for (const auto& e : element_index) {
        json ej{{"id", e.element_id}, {"kind", to_string(e.kind)}, {"label", e.label}};
        if (!e.placeholder.empty()) ej["placeholder"] = e.placeholder;
        elems.push_back(std::move(ej));
    }
    return {{"page_id", page_id}, {"url", url},           {"text", rendered_text},
            {"elements", elems},  {"step", step_index}, {"flash", flash}};
}

Observation Observation::from_json(const json& j) {
    Observation o;
    o.page_id = j.value("page_id", std::string{});
    o.url = j.value("url", std::string{});
    o.rendered_text = j.value("text", std::string{});
    o.step_index = j.value("step", std::size_t{0});
    o.flash = j.value("flash", std::string{});
    for (const auto& ej : j.value("elements", json::array())) {
        ElementRef e;
        e.element_id = require_string(ej, "id", "observation.elements");
        e.kind = element_kind_from(ej.value("kind", std::string("link")), "observation.elements");
        e.label = ej.value("label", std::string{});
        e.placeholder = ej.value("placeholder", std::string{});
        o.element_index.push_back(std::move(e));
    }
    return o;
}

std::string observation_digest(const Observation& obs) {
    std::string material = obs.page_id + '\n' + obs.url + '\n' + obs.rendered_text;
    return text::hex64(text::fnv1a64(material));
}

std::vector<Action> available_actions(const Observation& obs) {
    std::vector<Action> out;
    for (const auto& e : obs.element_index) {
        if (takes_input(e.kind)) {
            out.push_back(Action::type(e.element_id, e.placeholder.empty() ? "test" : e.placeholder));
        } else {
            out.push_back(Action::click(e.element_id));
        }
    }
    out.push_back(Action::back());
    out.push_back(Action::stop(""));
    return out;
}

// ---------------------------------------------------------------------------
// Tasks

TaskSpec task_from_json(const json& j) {
    TaskSpec t;
    t.task_id = require_string(j, "task_id", "task");
    const auto path = "task[" + t.task_id + "]";
    t.site_id = require_string(j, "site_id", path);
    t.goal_text = j.value("goal", std::string{});
    t.category_tag = j.value("category", t.site_id);
    t.max_steps = j.value("max_steps", std::size_t{0});
    if (t.max_steps < 1) throw ValidationError(path + ".max_steps: must be >= 1");
    if (!j.contains("success") || !j["success"].is_object()) {
        throw ParseError(path + ".success: expected object");
    }
    const auto& s = j["success"];
    if (s.contains("answer_match")) {
        const auto& am = s["answer_match"];
        AnswerMatch m;
        m.expected = require_string(am, "expected", path + ".success.answer_match");
        const auto mode = am.value("mode", std::string("exact"));
        if (mode == "exact") {
            m.mode = MatchMode::exact;
        } else if (mode == "fuzzy-token") {
            m.mode = MatchMode::fuzzy_token;
        } else {
            throw ValidationError(path + ".success.answer_match.mode: unknown mode '" + mode + "'");
        }
        t.answer_match = m;
    }
    if (s.contains("state_predicate")) {
        const auto& sp = s["state_predicate"];
        StatePredicate p;
        if (sp.contains("page_id")) p.page_id = require_string(sp, "page_id", path + ".success.state_predicate");
        if (sp.contains("fields")) p.fields = string_map(sp["fields"], path + ".success.state_predicate.fields");
        t.state_predicate = p;
    }
    if (t.answer_match.has_value() == t.state_predicate.has_value()) {
        throw ValidationError(path + ".success: exactly one of answer_match, state_predicate required");
    }
    return t;
}

std::vector<TaskSpec> load_tasks(const json& doc) {
    if (!doc.is_array()) throw ParseError("tasks: expected array");
    std::vector<TaskSpec> out;
    for (const auto& j : doc) out.push_back(task_from_json(j));
    return out;
}

std::vector<TaskSpec> load_tasks_file(const std::string& path) {
    try {
        return load_tasks(read_json_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

bool evaluate(const TaskSpec& task, const EpisodeOutcome& outcome) {
    if (task.answer_match) {
        if (!outcome.stopped || !outcome.answer) return false;
        const auto& m = *task.answer_match;
        if (m.mode == MatchMode::exact) return *outcome.answer == m.expected;
        return text::token_set(*outcome.answer) == text::token_set(m.expected);
    }
    const auto& p = *task.state_predicate;
    if (p.page_id && outcome.final_page_id != *p.page_id) return false;
    for (const auto& [field, expected] : p.fields) {
        auto it = outcome.fields.find(field);
        if (it == outcome.fields.end() || it->second != expected) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Environment

Environment::Environment(std::shared_ptr<const SiteSpec> spec, std::size_t max_steps)
    : spec_(std::move(spec)), max_steps_(max_steps) {
    current_ = spec_->start_page;
    visited_.insert(current_);
    fields_ = spec_->initial_fields;
}

std::pair<Environment, Observation> Environment::reset(std::shared_ptr<const SiteSpec> spec,
                                                       const TaskSpec& task) {
    if (task.site_id != spec->site_id) {
        throw SiteMismatch("task '" + task.task_id + "' targets site '" + task.site_id +
                           "' but the loaded site is '" + spec->site_id + "'");
    }
    Environment env(std::move(spec), task.max_steps);
    auto obs = env.current_observation();
    return {std::move(env), std::move(obs)};
}

Observation Environment::current_observation() const {
    const auto& start = spec_->page(current_);
    return render(step_index_ == 0 && start.flash ? *start.flash : std::string{});
}

std::optional<std::string> Environment::value_of(const std::string& page_id,
                                                 const std::string& element_id) const {
    auto pit = form_.find(page_id);
    if (pit == form_.end()) return std::nullopt;
    auto eit = pit->second.find(element_id);
    if (eit == pit->second.end()) return std::nullopt;
    return eit->second;
}

namespace {

std::string expand(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl.compare(i, 2, "${") == 0) {
            auto close = tmpl.find('}', i + 2);
            if (close != std::string::npos) {
                auto name = tmpl.substr(i + 2, close - i - 2);
                auto it = vars.find(name);
                if (it != vars.end()) out += it->second;
                i = close + 1;
                continue;
            }
        }
        out += tmpl[i++];
    }
    return out;
}

}  // namespace

Observation Environment::render(std::string flash) const {
    const Page& page = spec_->page(current_);
    Observation o;
    o.page_id = page.page_id;
    o.url = page.url;
    o.step_index = step_index_;
    o.flash = flash;

    std::ostringstream text;
    const auto body = expand(page.static_text, fields_);
    if (!body.empty()) text << body << '\n';
    for (const auto& e : page.elements) {
        o.element_index.push_back({e.element_id, e.kind, e.label, e.placeholder.value_or("")});
        text << '[' << e.element_id << "] " << to_string(e.kind) << " \"" << e.label << '"';
        if (takes_input(e.kind)) {
            if (auto v = value_of(page.page_id, e.element_id)) text << " = \"" << *v << '"';
        }
        text << '\n';
    }
    if (!flash.empty()) text << "! " << flash << '\n';
    o.rendered_text = text.str();
    return o;
}

Observation Environment::stay(std::string flash) { return render(std::move(flash)); }

bool Environment::blocked(const std::string& page_id) const {
    return latched_ && pre_hazard_.count(page_id) != 0;
}

Observation Environment::move_to(const std::string& page_id, bool hazard) {
    if (hazard && !latched_) {
        latched_ = true;
        pre_hazard_ = visited_;
    }
    history_.push_back(current_);
    current_ = page_id;
    visited_.insert(page_id);
    const auto& page = spec_->page(page_id);
    return render(page.flash.value_or(""));
}

Observation Environment::step(const Action& action) {
    if (terminated_) throw EpisodeTerminated("episode already terminated by stop");
    if (step_index_ >= max_steps_) {
        throw StepBudgetExhausted("step budget of " + std::to_string(max_steps_) + " exhausted");
    }
    ++step_index_;
    const Page& page = spec_->page(current_);

    switch (action.kind) {
        case ActionKind::stop:
            terminated_ = true;
            answer_ = action.text;
            return stay({});

        case ActionKind::back: {
            if (latched_) return stay(kFlashBlocked);
            if (history_.empty()) return stay(kFlashNothingHappened);
            auto prev = history_.back();
            history_.pop_back();
            current_ = prev;
            return render(spec_->page(prev).flash.value_or(""));
        }

        case ActionKind::go_to: {
            for (const auto& [id, p] : spec_->pages) {
                if (p.url == action.target) {
                    if (blocked(id)) return stay(kFlashBlocked);
                    return move_to(id, false);
                }
            }
            return stay(kFlashNothingHappened);
        }

        case ActionKind::type: {
            const Element* e = page.find_element(action.target);
            if (!e || !takes_input(e->kind)) return stay(kFlashNothingHappened);
            if (e->kind == ElementKind::select && !e->options.empty() &&
                std::find(e->options.begin(), e->options.end(), action.text) == e->options.end()) {
                return stay(kFlashInvalidOption);
            }
            if (e->input_format && !std::regex_match(action.text, std::regex(*e->input_format))) {
                return stay(kFlashInvalidFormat);
            }
            form_[page.page_id][e->element_id] = action.text;
            break;
        }

        case ActionKind::click: {
            const Element* e = page.find_element(action.target);
            if (!e || takes_input(e->kind)) return stay(kFlashNothingHappened);
            break;
        }
    }

    // click, or a successful type: fire the first rule on this element whose
    // input conditions hold.
    for (const auto& rule : page.transitions) {
        if (rule.on != action.target) continue;
        bool ok = true;
        for (const auto& [elem, pattern] : rule.when) {
            auto v = value_of(page.page_id, elem);
            if (!v || !std::regex_match(*v, std::regex(pattern))) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        if (blocked(rule.to)) return stay(kFlashBlocked);
        if (!rule.effects.empty()) {
            std::map<std::string, std::string> vars;
            if (auto pit = form_.find(page.page_id); pit != form_.end()) vars = pit->second;
            for (const auto& [field, tmpl] : rule.effects) fields_[field] = expand(tmpl, vars);
        }
        return move_to(rule.to, spec_->is_hazard(page.page_id, action.target));
    }
    if (action.kind == ActionKind::type) return stay({});
    return stay(kFlashNothingHappened);
}

EpisodeOutcome Environment::outcome() const {
    EpisodeOutcome out;
    out.stopped = terminated_;
    out.answer = answer_;
    out.final_page_id = current_;
    out.fields = fields_;
    return out;
}

}  // namespace atlas
