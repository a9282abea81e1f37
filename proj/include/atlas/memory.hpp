#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <vector>

#include "atlas/backend.hpp"
#include "atlas/environment.hpp"

namespace atlas {

// ---------------------------------------------------------------------------
// Observation identity

/// Digest of (normalized url path, sorted interactive element ids). Free text,
/// flash messages and step index do not participate.
struct ObservationKey {
    std::string value;

    friend auto operator<=>(const ObservationKey&, const ObservationKey&) = default;
};

/// Lowercased path without scheme, host, query, fragment or trailing slash.
std::string normalize_url_path(std::string_view url);

ObservationKey observation_key(const Observation& obs);

// ---------------------------------------------------------------------------
// Cognitive map

struct TransitionSummary {
    std::string delta;
    std::vector<std::string> new_affordances;
    bool hazard_flag = false;
    std::string notes;

    json to_json() const;
    static TransitionSummary from_json(const json& j);

    friend bool operator==(const TransitionSummary&, const TransitionSummary&) = default;
};

struct TransitionRecord {
    ObservationKey from_key;
    std::string from_url;
    Action action;
    std::string action_signature;
    ObservationKey to_key;
    Observation raw_to_observation;
    std::optional<TransitionSummary> summary;
    std::size_t count = 1;
    std::size_t last_seen = 0;  // write sequence number of the latest observation

    json to_json() const;
    static TransitionRecord from_json(const json& j);

    friend bool operator==(const TransitionRecord&, const TransitionRecord&) = default;
};

enum class MapMode { raw, summarized };

std::string to_string(MapMode m);

inline constexpr const char* kPlaceholderText = "UNEXPLORED STATE — outcome unknown";

/// The sentinel observation returned for unexplored (o, a) pairs.
Observation placeholder_observation();

struct PredictedOutcome {
    enum class Kind { known, placeholder };

    Kind kind = Kind::placeholder;
    Observation observation = placeholder_observation();
    std::optional<TransitionSummary> summary;
    ObservationKey to_key;
    double uncertainty = 1.0;

    bool is_placeholder() const { return kind == Kind::placeholder; }
    bool hazard() const { return summary && summary->hazard_flag; }

    static PredictedOutcome placeholder();
};

/// U = 1 - max_count / (total_count + 1); 1 when there are no successors.
double uncertainty_from_counts(const std::vector<std::size_t>& successor_counts);

/// Transition graph M = {(o, a, o')} keyed by ObservationKey. Many concurrent
/// readers, one writer at a time.
class CognitiveMap {
public:
    explicit CognitiveMap(std::string site_id = {}, MapMode mode = MapMode::summarized);

    CognitiveMap(const CognitiveMap& other);
    CognitiveMap& operator=(const CognitiveMap& other);

    struct WriteResult {
        bool created = false;
        bool summarized = false;
    };

    /// Increments an identical edge or appends a new one. A new edge is
    /// summarized through `summarizer` (schema summary.v1) unless the map is in
    /// raw mode or `summarizer` is null; a failing summarizer leaves the edge
    /// unsummarized instead of failing the write.
    WriteResult record_transition(const Observation& from, const Action& action, const Observation& to,
                                  PolicyBackend* summarizer);

    /// Modal successor (highest count, ties to the most recently seen) or a
    /// placeholder. Never throws.
    PredictedOutcome retrieve(const Observation& from, const Action& action) const;
    double uncertainty(const Observation& from, const Action& action) const;

    /// All recorded successors of (from, action).
    std::vector<TransitionRecord> successors(const Observation& from, const Action& action) const;

    std::vector<TransitionRecord> records() const;
    std::size_t size() const;
    bool empty() const { return size() == 0; }

    const std::string& site_id() const { return site_id_; }
    MapMode mode() const { return mode_; }

    /// Read-side instrumentation: every retrieve/uncertainty/successors call.
    std::size_t reads() const { return reads_.load(); }
    void reset_counters() { reads_ = 0; }

    /// Loaded records are appended verbatim (used by persistence).
    void insert_loaded(TransitionRecord record);

private:
    using EdgeKey = std::pair<std::string, std::string>;  // (from_key, action_signature)

    PredictedOutcome retrieve_locked(const EdgeKey& key) const;

    std::string site_id_;
    MapMode mode_;
    std::vector<TransitionRecord> records_;
    std::map<EdgeKey, std::vector<std::size_t>> index_;
    std::size_t write_seq_ = 0;
    mutable std::shared_mutex mu_;
    mutable std::atomic<std::size_t> reads_{0};
};

/// Builds the summarizer request for one transition.
GenerationRequest summary_request(const Observation& from, const Action& action, const Observation& to);

// ---------------------------------------------------------------------------
// Semantic memory

enum class FactKind { format_rule, hazard, capability_limit, navigation_hint };
enum class FactSource { exploration, online_update };

std::string to_string(FactKind k);
FactKind fact_kind_from_string(const std::string& s);
std::string to_string(FactSource s);

struct SemanticFact {
    std::string fact_id;
    std::string site_id;
    std::string statement;
    FactKind kind = FactKind::navigation_hint;
    FactSource source = FactSource::exploration;

    json to_json() const;
    static SemanticFact from_json(const json& j);

    friend bool operator==(const SemanticFact&, const SemanticFact&) = default;
};

class SemanticMemory {
public:
    explicit SemanticMemory(std::size_t default_k = 5) : default_k_(default_k) {}

    /// Deduplicates on (site_id, normalized statement). Returns false for a
    /// duplicate. Assigns fact_id when empty.
    bool add_fact(SemanticFact fact);

    /// Facts of `site_id` with at least one query term in common, ranked by
    /// overlap (ties by insertion order), at most k (default_k when 0).
    std::vector<SemanticFact> query_facts(const std::string& site_id, const std::string& query_terms,
                                          std::size_t k = 0) const;

    const std::vector<SemanticFact>& facts() const { return facts_; }
    std::size_t size() const { return facts_.size(); }

private:
    std::vector<SemanticFact> facts_;
    std::size_t default_k_;
};

// ---------------------------------------------------------------------------
// Working memory

class WorkingMemory {
public:
    struct Entry {
        std::size_t step_index;
        std::string note;
    };

    explicit WorkingMemory(std::size_t capacity = 50);

    void add(std::size_t step_index, std::string note);
    const std::deque<Entry>& entries() const { return entries_; }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::deque<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kMemoryFormatVersion = 1;

void save_map(const CognitiveMap& map, std::ostream& out);
CognitiveMap load_map(std::istream& in);

void save_facts(const SemanticMemory& facts, const std::string& site_id, std::ostream& out);
SemanticMemory load_facts(std::istream& in);

/// Facts live next to the map file: `<map>.facts.json`.
std::string facts_path_for(const std::string& map_path);

void save_memory(const CognitiveMap& map, const SemanticMemory& facts, const std::string& map_path);
std::pair<CognitiveMap, SemanticMemory> load_memory(const std::string& map_path);

}  // namespace atlas
