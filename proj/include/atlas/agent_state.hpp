#pragma once

#include <cstddef>
#include <deque>
#include <string>

#include "atlas/memory.hpp"

namespace atlas {

struct HistoryEntry {
    std::string action_signature;
    std::string url;
    std::string observation_digest;
    std::string flash;
};

/// The agent's running state: the last `history_cap` steps plus working
/// memory notes.
class AgentState {
public:
    explicit AgentState(std::size_t history_cap = 20, std::size_t working_capacity = 50);

    void record_step(HistoryEntry entry);
    void note(std::string text) { working_.add(step_index_, std::move(text)); }

    const std::deque<HistoryEntry>& history() const { return history_; }
    const WorkingMemory& working() const { return working_; }
    std::size_t step_index() const { return step_index_; }
    std::size_t history_cap() const { return history_cap_; }

    /// Prompt block: recent history followed by working-memory notes.
    std::string render() const;

private:
    std::size_t history_cap_;
    std::deque<HistoryEntry> history_;
    WorkingMemory working_;
    std::size_t step_index_ = 0;
};

}  // namespace atlas
