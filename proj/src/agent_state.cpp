#include "atlas/agent_state.hpp"

#include <sstream>

#include "atlas/error.hpp"

namespace atlas {

AgentState::AgentState(std::size_t history_cap, std::size_t working_capacity)
    : history_cap_(history_cap), working_(working_capacity) {
    if (history_cap_ == 0) throw ValidationError("history cap must be positive");
}

void AgentState::record_step(HistoryEntry entry) {
    history_.push_back(std::move(entry));
    while (history_.size() > history_cap_) history_.pop_front();
    ++step_index_;
}

std::string AgentState::render() const {
    std::ostringstream out;
    out << "RECENT HISTORY:\n";
    if (history_.empty()) out << "(none)\n";
    for (const auto& h : history_) {
        out << "- " << h.action_signature << " -> " << h.url;
        if (!h.flash.empty()) out << " [" << h.flash << "]";
        out << '\n';
    }
    out << "WORKING MEMORY:\n";
    if (working_.entries().empty()) out << "(none)\n";
    for (const auto& e : working_.entries()) out << "- (step " << e.step_index << ") " << e.note << '\n';
    return out.str();
}

}  // namespace atlas
