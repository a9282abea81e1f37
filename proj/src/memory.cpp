#include "atlas/memory.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "atlas/error.hpp"
#include "atlas/schema.hpp"
#include "atlas/text.hpp"

namespace atlas {

// ---------------------------------------------------------------------------
// Observation identity

std::string normalize_url_path(std::string_view url) {
    std::string_view rest = url;
    if (auto scheme = rest.find("://"); scheme != std::string_view::npos) {
        rest = rest.substr(scheme + 3);
        auto slash = rest.find('/');
        rest = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash);
    }
    if (auto cut = rest.find_first_of("?#"); cut != std::string_view::npos) rest = rest.substr(0, cut);
    std::string path = text::to_lower(rest);
    while (path.size() > 1 && path.back() == '/') path.pop_back();
    if (path.empty()) path = "/";
    return path;
}

ObservationKey observation_key(const Observation& obs) {
    std::vector<std::string> ids;
    ids.reserve(obs.element_index.size());
    for (const auto& e : obs.element_index) ids.push_back(e.element_id);
    std::sort(ids.begin(), ids.end());
    const auto path = normalize_url_path(obs.url);
    const auto material = path + '\n' + text::join(ids, ",");
    return {path + "@" + text::hex64(text::fnv1a64(material)).substr(0, 12)};
}

// ---------------------------------------------------------------------------
// Records

json TransitionSummary::to_json() const {
    return {{"delta", delta}, {"new_affordances", new_affordances}, {"hazard_flag", hazard_flag}, {"notes", notes}};
}

TransitionSummary TransitionSummary::from_json(const json& j) {
    TransitionSummary s;
    s.delta = j.at("delta").get<std::string>();
    s.new_affordances = j.value("new_affordances", std::vector<std::string>{});
    s.hazard_flag = j.value("hazard_flag", false);
    s.notes = j.value("notes", std::string{});
    return s;
}

json TransitionRecord::to_json() const {
    return {{"from", from_key.value},
            {"from_url", from_url},
            {"action", action.to_json()},
            {"signature", action_signature},
            {"to", to_key.value},
            {"to_observation", raw_to_observation.to_json()},
            {"summary", summary ? summary->to_json() : json(nullptr)},
            {"count", count},
            {"last_seen", last_seen}};
}

TransitionRecord TransitionRecord::from_json(const json& j) {
    TransitionRecord r;
    r.from_key = {j.at("from").get<std::string>()};
    r.from_url = j.value("from_url", std::string{});
    r.action = Action::from_json(j.at("action"));
    r.action_signature = j.at("signature").get<std::string>();
    if (r.action_signature != r.action.signature()) {
        throw ParseError("record signature '" + r.action_signature + "' does not match its action");
    }
    r.to_key = {j.at("to").get<std::string>()};
    r.raw_to_observation = Observation::from_json(j.at("to_observation"));
    if (!j.at("summary").is_null()) r.summary = TransitionSummary::from_json(j["summary"]);
    r.count = j.at("count").get<std::size_t>();
    if (r.count < 1) throw ParseError("record count must be >= 1");
    r.last_seen = j.value("last_seen", std::size_t{0});
    return r;
}

std::string to_string(MapMode m) { return m == MapMode::raw ? "raw" : "summarized"; }

Observation placeholder_observation() {
    Observation o;
    o.rendered_text = kPlaceholderText;
    return o;
}

PredictedOutcome PredictedOutcome::placeholder() { return PredictedOutcome{}; }

double uncertainty_from_counts(const std::vector<std::size_t>& counts) {
    if (counts.empty()) return 1.0;
    std::size_t total = 0;
    std::size_t best = 0;
    for (auto c : counts) {
        total += c;
        best = std::max(best, c);
    }
    return 1.0 - static_cast<double>(best) / static_cast<double>(total + 1);
}

// ---------------------------------------------------------------------------
// CognitiveMap

CognitiveMap::CognitiveMap(std::string site_id, MapMode mode) : site_id_(std::move(site_id)), mode_(mode) {}

CognitiveMap::CognitiveMap(const CognitiveMap& other) {
    std::shared_lock lock(other.mu_);
    site_id_ = other.site_id_;
    mode_ = other.mode_;
    records_ = other.records_;
    index_ = other.index_;
    write_seq_ = other.write_seq_;
    reads_ = other.reads_.load();
}

CognitiveMap& CognitiveMap::operator=(const CognitiveMap& other) {
    if (this == &other) return *this;
    CognitiveMap copy(other);
    std::unique_lock lock(mu_);
    site_id_ = std::move(copy.site_id_);
    mode_ = copy.mode_;
    records_ = std::move(copy.records_);
    index_ = std::move(copy.index_);
    write_seq_ = copy.write_seq_;
    reads_ = copy.reads_.load();
    return *this;
}

GenerationRequest summary_request(const Observation& from, const Action& action, const Observation& to) {
    std::ostringstream user;
    user << "FROM URL: " << from.url << '\n'
         << "ACTION: " << action.signature() << '\n'
         << "TO URL: " << to.url << '\n';
    if (!to.flash.empty()) user << "TO FLASH: " << to.flash << '\n';
    user << "--- before ---\n" << from.rendered_text << "--- after ---\n" << to.rendered_text;
    return make_request(Role::summarizer,
                        "You curate a cognitive map of a website. Describe what changed between the two "
                        "observations, list the newly available actions, and flag irreversible outcomes.",
                        user.str(), std::string(schema::kSummary));
}

CognitiveMap::WriteResult CognitiveMap::record_transition(const Observation& from, const Action& action,
                                                          const Observation& to, PolicyBackend* summarizer) {
    const auto from_key = observation_key(from);
    const auto to_key = observation_key(to);
    const auto sig = action.signature();
    {
        std::unique_lock lock(mu_);
        auto it = index_.find({from_key.value, sig});
        if (it != index_.end()) {
            for (auto idx : it->second) {
                if (records_[idx].to_key == to_key) {
                    records_[idx].count += 1;
                    records_[idx].last_seen = ++write_seq_;
                    return {false, records_[idx].summary.has_value()};
                }
            }
        }
    }

    // Summarize outside the lock; backends may be slow.
    std::optional<TransitionSummary> summary;
    if (mode_ == MapMode::summarized && summarizer) {
        try {
            auto resp = summarizer->generate(summary_request(from, action, to));
            summary = TransitionSummary::from_json(resp.parsed);
        } catch (const Error&) {
            summary.reset();
        }
    }

    std::unique_lock lock(mu_);
    // another writer may have inserted the same edge meanwhile
    auto& slots = index_[{from_key.value, sig}];
    for (auto idx : slots) {
        if (records_[idx].to_key == to_key) {
            records_[idx].count += 1;
            records_[idx].last_seen = ++write_seq_;
            return {false, records_[idx].summary.has_value()};
        }
    }
    TransitionRecord rec;
    rec.from_key = from_key;
    rec.from_url = from.url;
    rec.action = action;
    rec.action_signature = sig;
    rec.to_key = to_key;
    rec.raw_to_observation = to;
    rec.raw_to_observation.step_index = 0;
    rec.summary = std::move(summary);
    rec.count = 1;
    rec.last_seen = ++write_seq_;
    slots.push_back(records_.size());
    records_.push_back(std::move(rec));
    return {true, records_.back().summary.has_value()};
}

void CognitiveMap::insert_loaded(TransitionRecord record) {
    std::unique_lock lock(mu_);
    write_seq_ = std::max(write_seq_, record.last_seen);
    index_[{record.from_key.value, record.action_signature}].push_back(records_.size());
    records_.push_back(std::move(record));
}

PredictedOutcome CognitiveMap::retrieve_locked(const EdgeKey& key) const {
    auto it = index_.find(key);
    if (it == index_.end() || it->second.empty()) return PredictedOutcome::placeholder();
    std::vector<std::size_t> counts;
    const TransitionRecord* best = nullptr;
    for (auto idx : it->second) {
        const auto& r = records_[idx];
        counts.push_back(r.count);
        if (!best || r.count > best->count || (r.count == best->count && r.last_seen > best->last_seen)) {
            best = &r;
        }
    }
    PredictedOutcome out;
    out.kind = PredictedOutcome::Kind::known;
    out.observation = best->raw_to_observation;
    out.summary = best->summary;
    out.to_key = best->to_key;
    out.uncertainty = uncertainty_from_counts(counts);
    return out;
}

PredictedOutcome CognitiveMap::retrieve(const Observation& from, const Action& action) const {
    ++reads_;
    const EdgeKey key{observation_key(from).value, action.signature()};
    std::shared_lock lock(mu_);
    return retrieve_locked(key);
}

double CognitiveMap::uncertainty(const Observation& from, const Action& action) const {
    return retrieve(from, action).uncertainty;
}

std::vector<TransitionRecord> CognitiveMap::successors(const Observation& from, const Action& action) const {
    ++reads_;
    std::shared_lock lock(mu_);
    std::vector<TransitionRecord> out;
    auto it = index_.find({observation_key(from).value, action.signature()});
    if (it == index_.end()) return out;
    for (auto idx : it->second) out.push_back(records_[idx]);
    return out;
}

std::vector<TransitionRecord> CognitiveMap::records() const {
    std::shared_lock lock(mu_);
    return records_;
}

std::size_t CognitiveMap::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

// ---------------------------------------------------------------------------
// Semantic memory

std::string to_string(FactKind k) {
    switch (k) {
        case FactKind::format_rule: return "format_rule";
        case FactKind::hazard: return "hazard";
        case FactKind::capability_limit: return "capability_limit";
        case FactKind::navigation_hint: return "navigation_hint";
    }
    return "?";
}

FactKind fact_kind_from_string(const std::string& s) {
    for (auto k : {FactKind::format_rule, FactKind::hazard, FactKind::capability_limit, FactKind::navigation_hint}) {
        if (to_string(k) == s) return k;
    }
    throw ParseError("unknown fact kind '" + s + "'");
}

std::string to_string(FactSource s) { return s == FactSource::exploration ? "exploration" : "online_update"; }

json SemanticFact::to_json() const {
    return {{"fact_id", fact_id},
            {"site_id", site_id},
            {"statement", statement},
            {"kind", to_string(kind)},
            {"source", to_string(source)}};
}

SemanticFact SemanticFact::from_json(const json& j) {
    SemanticFact f;
    f.fact_id = j.at("fact_id").get<std::string>();
    f.site_id = j.at("site_id").get<std::string>();
    f.statement = j.at("statement").get<std::string>();
    if (f.statement.empty()) throw ParseError("fact statement must be non-empty");
    f.kind = fact_kind_from_string(j.at("kind").get<std::string>());
    const auto src = j.value("source", std::string("exploration"));
    if (src == "exploration") {
        f.source = FactSource::exploration;
    } else if (src == "online_update") {
        f.source = FactSource::online_update;
    } else {
        throw ParseError("unknown fact source '" + src + "'");
    }
    return f;
}

namespace {

std::string normalized_statement(const std::string& s) { return text::join(text::tokens(s), " "); }

}  // namespace

bool SemanticMemory::add_fact(SemanticFact fact) {
    if (fact.statement.empty()) return false;
    const auto norm = normalized_statement(fact.statement);
    for (const auto& f : facts_) {
        if (f.site_id == fact.site_id && normalized_statement(f.statement) == norm) return false;
    }
    if (fact.fact_id.empty()) fact.fact_id = "fact-" + text::hex64(text::fnv1a64(fact.site_id + '\n' + norm)).substr(0, 12);
    facts_.push_back(std::move(fact));
    return true;
}

std::vector<SemanticFact> SemanticMemory::query_facts(const std::string& site_id, const std::string& query_terms,
                                                      std::size_t k) const {
    if (k == 0) k = default_k_;
    const auto terms = text::token_set(query_terms);
    std::vector<std::pair<std::size_t, std::size_t>> scored;  // (overlap, position)
    for (std::size_t i = 0; i < facts_.size(); ++i) {
        if (facts_[i].site_id != site_id) continue;
        std::size_t overlap = 0;
        for (const auto& t : text::token_set(facts_[i].statement)) overlap += terms.count(t);
        if (overlap > 0) scored.emplace_back(overlap, i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<SemanticFact> out;
    for (std::size_t i = 0; i < scored.size() && out.size() < k; ++i) out.push_back(facts_[scored[i].second]);
    return out;
}

// ---------------------------------------------------------------------------
// Working memory

WorkingMemory::WorkingMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ValidationError("working memory capacity must be positive");
}

void WorkingMemory::add(std::size_t step_index, std::string note) {
    entries_.push_back({step_index, std::move(note)});
    while (entries_.size() > capacity_) entries_.pop_front();
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void check_header(const json& header, const char* format) {
    if (!header.is_object() || header.value("format", std::string{}) != format) {
        throw ParseError(std::string("missing '") + format + "' header");
    }
    if (!header.contains("version") || !header["version"].is_number_integer()) {
        throw ParseError("header has no integer version");
    }
    const int version = header["version"].get<int>();
    if (version != kMemoryFormatVersion) {
        throw VersionMismatch(std::string(format) + " file version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kMemoryFormatVersion) + ")");
    }
}

}  // namespace

void save_map(const CognitiveMap& map, std::ostream& out) {
    json header{{"format", "cogmap"}, {"version", kMemoryFormatVersion}, {"site_id", map.site_id()},
                {"mode", to_string(map.mode())}};
    out << header.dump() << '\n';
    for (const auto& r : map.records()) out << r.to_json().dump() << '\n';
    if (!out) throw SinkWriteFailure("failed writing cognitive map");
}

CognitiveMap load_map(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("cognitive map: empty input");
    auto header = json::parse(line, nullptr, false);
    if (header.is_discarded()) throw ParseError("cognitive map: malformed header line");
    check_header(header, "cogmap");
    const auto mode = header.value("mode", std::string("summarized")) == "raw" ? MapMode::raw : MapMode::summarized;
    CognitiveMap map(header.value("site_id", std::string{}), mode);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("cognitive map line " + std::to_string(lineno) + ": malformed JSON");
        try {
            map.insert_loaded(TransitionRecord::from_json(j));
        } catch (const json::exception& e) {
            throw ParseError("cognitive map line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError("cognitive map line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return map;
}

void save_facts(const SemanticMemory& facts, const std::string& site_id, std::ostream& out) {
    json doc = json::array();
    doc.push_back({{"format", "facts"}, {"version", kMemoryFormatVersion}, {"site_id", site_id}});
    for (const auto& f : facts.facts()) doc.push_back(f.to_json());
    out << doc.dump(1) << '\n';
    if (!out) throw SinkWriteFailure("failed writing semantic facts");
}

SemanticMemory load_facts(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("semantic facts: ") + e.what());
    }
    if (!doc.is_array() || doc.empty()) throw ParseError("semantic facts: expected non-empty array");
    check_header(doc[0], "facts");
    SemanticMemory mem;
    for (std::size_t i = 1; i < doc.size(); ++i) {
        try {
            mem.add_fact(SemanticFact::from_json(doc[i]));
        } catch (const json::exception& e) {
            throw ParseError("semantic facts[" + std::to_string(i) + "]: " + e.what());
        }
    }
    return mem;
}

std::string facts_path_for(const std::string& map_path) { return map_path + ".facts.json"; }

void save_memory(const CognitiveMap& map, const SemanticMemory& facts, const std::string& map_path) {
    {
        std::ofstream out(map_path, std::ios::binary | std::ios::trunc);
        if (!out) throw SinkWriteFailure(map_path + ": cannot open for writing");
        save_map(map, out);
    }
    const auto fpath = facts_path_for(map_path);
    std::ofstream out(fpath, std::ios::binary | std::ios::trunc);
    if (!out) throw SinkWriteFailure(fpath + ": cannot open for writing");
    save_facts(facts, map.site_id(), out);
}

std::pair<CognitiveMap, SemanticMemory> load_memory(const std::string& map_path) {
    std::ifstream in(map_path, std::ios::binary);
    if (!in) throw ParseError(map_path + ": cannot open cognitive map");
    CognitiveMap map = [&] {
        try {
            return load_map(in);
        } catch (const VersionMismatch& e) {
            throw VersionMismatch(map_path + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(map_path + ": " + e.what());
        }
    }();
    SemanticMemory facts;
    const auto fpath = facts_path_for(map_path);
    if (std::ifstream fin(fpath, std::ios::binary); fin) {
        try {
            facts = load_facts(fin);
        } catch (const VersionMismatch& e) {
            throw VersionMismatch(fpath + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(fpath + ": " + e.what());
        }
    }
    return {std::move(map), std::move(facts)};
}

}  // namespace atlas
