#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "atlas/agent_state.hpp"
#include "atlas/error.hpp"
#include "atlas/memory.hpp"
#include "sim_instance.hpp"
#include "support.hpp"

using namespace atlas;
using namespace atlas::testing;

namespace {

ScriptedBackend summarizer() {
    return ScriptedBackend(rules_from({
        R"j({"role": "summarizer", "match": "TO URL: /p2", "response": {"delta": "went to two", "new_affordances": ["click(l0)"], "hazard_flag": true}})j",
        R"({"role": "summarizer", "fallback": true, "response": {"delta": "moved", "new_affordances": [], "hazard_flag": false}})",
    }));
}

/// Always fails with a schema violation.
class Broken final : public PolicyBackend {
public:
    std::string id() const override { return "broken"; }

private:
    GenerationResponse do_generate(const GenerationRequest&) override { throw SchemaViolation("nope"); }
};

}  // namespace

TEST(ObservationKey, IgnoresTextFlashAndStepButNotElements) {
    auto a = synthetic_page(1, 2);
    auto b = a;
    b.rendered_text = "totally different";
    b.flash = "hello";
    b.step_index = 9;
    EXPECT_EQ(observation_key(a), observation_key(b));
    b.url = "https://host.example/P1/?q=1#frag";
    EXPECT_EQ(observation_key(a), observation_key(b));
    b.element_index.pop_back();
    EXPECT_NE(observation_key(a), observation_key(b));
    auto c = a;
    std::reverse(c.element_index.begin(), c.element_index.end());
    EXPECT_EQ(observation_key(a), observation_key(c));
}

TEST(ObservationKey, UrlNormalization) {
    EXPECT_EQ(normalize_url_path("HTTP://x.y/Admin/Orders/"), "/admin/orders");
    EXPECT_EQ(normalize_url_path(""), "/");
    EXPECT_EQ(normalize_url_path("/a?b=c"), "/a");
}

TEST(CognitiveMap, UnexploredPairsAreCertainPlaceholders) {
    CognitiveMap map("s");
    auto p = map.retrieve(synthetic_page(0, 1), Action::click("l0"));
    EXPECT_TRUE(p.is_placeholder());
    EXPECT_EQ(p.uncertainty, 1.0);
    EXPECT_EQ(p.observation.rendered_text, kPlaceholderText);
    EXPECT_TRUE(p.observation.element_index.empty());
    EXPECT_EQ(map.uncertainty(synthetic_page(0, 1), Action::click("l0")), 1.0);
}

TEST(CognitiveMap, UncertaintyLawWorkedExamples) {
    EXPECT_DOUBLE_EQ(uncertainty_from_counts({1}), 0.5);
    EXPECT_DOUBLE_EQ(uncertainty_from_counts({3}), 0.25);
    EXPECT_DOUBLE_EQ(uncertainty_from_counts({3, 1}), 0.4);
    EXPECT_DOUBLE_EQ(uncertainty_from_counts({2, 2}), 0.6);
    EXPECT_EQ(uncertainty_from_counts({}), 1.0);
}

TEST(CognitiveMap, ModalSuccessorWithRecencyTieBreak) {
    CognitiveMap map("s", MapMode::raw);
    const auto from = synthetic_page(0, 1);
    const auto a = Action::click("l0");
    map.record_transition(from, a, synthetic_page(1, 1), nullptr);
    map.record_transition(from, a, synthetic_page(2, 1), nullptr);
    EXPECT_EQ(map.retrieve(from, a).observation.url, "/p2");  // tie, most recent
    map.record_transition(from, a, synthetic_page(1, 1), nullptr);
    auto p = map.retrieve(from, a);
    EXPECT_EQ(p.observation.url, "/p1");
    EXPECT_DOUBLE_EQ(p.uncertainty, 1.0 - 2.0 / 4.0);
    EXPECT_EQ(map.successors(from, a).size(), 2u);
    EXPECT_EQ(map.size(), 2u);
    EXPECT_FALSE(p.summary.has_value());
}

TEST(CognitiveMap, SummariesOnlyOnNewEdgesAndOnlyInSummarizedMode) {
    auto s = summarizer();
    MeteredBackend metered(std::shared_ptr<PolicyBackend>(&s, [](PolicyBackend*) {}));
    CognitiveMap map("s", MapMode::summarized);
    const auto from = synthetic_page(0, 1);
    auto w = map.record_transition(from, Action::click("l0"), synthetic_page(2, 1), &metered);
    EXPECT_TRUE(w.created);
    EXPECT_TRUE(w.summarized);
    w = map.record_transition(from, Action::click("l0"), synthetic_page(2, 1), &metered);
    EXPECT_FALSE(w.created);
    EXPECT_EQ(metered.calls(), 1u);
    auto p = map.retrieve(from, Action::click("l0"));
    ASSERT_TRUE(p.summary);
    EXPECT_TRUE(p.hazard());
    EXPECT_EQ(p.summary->new_affordances, std::vector<std::string>{"click(l0)"});

    CognitiveMap raw("s", MapMode::raw);
    EXPECT_FALSE(raw.record_transition(from, Action::click("l0"), synthetic_page(2, 1), &metered).summarized);
    EXPECT_EQ(metered.calls(), 1u);
}

TEST(CognitiveMap, FailingSummarizerStillWritesTheEdge) {
    Broken broken;
    CognitiveMap map("s");
    auto w = map.record_transition(synthetic_page(0, 1), Action::back(), synthetic_page(1, 1), &broken);
    EXPECT_TRUE(w.created);
    EXPECT_FALSE(w.summarized);
    EXPECT_EQ(map.size(), 1u);
}

TEST(CognitiveMap, ReadsAreCounted) {
    CognitiveMap map("s");
    map.retrieve(synthetic_page(0, 1), Action::back());
    map.uncertainty(synthetic_page(0, 1), Action::back());
    map.successors(synthetic_page(0, 1), Action::back());
    EXPECT_EQ(map.reads(), 3u);
    CognitiveMap copy = map;
    EXPECT_EQ(copy.reads(), 3u);
    map.reset_counters();
    EXPECT_EQ(map.reads(), 0u);
}

TEST(CognitiveMap, ConcurrentWritersAndReaders) {
    CognitiveMap map("s", MapMode::raw);
    const auto from = synthetic_page(0, 1);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 250; ++i) {
                map.record_transition(from, Action::click("l0"), synthetic_page(1 + (i + t) % 3, 1), nullptr);
                map.retrieve(from, Action::click("l0"));
            }
        });
    }
    for (auto& th : threads) th.join();
    std::size_t total = 0;
    for (const auto& r : map.successors(from, Action::click("l0"))) total += r.count;
    EXPECT_EQ(total, 2000u);
    EXPECT_EQ(map.size(), 3u);
    EXPECT_DOUBLE_EQ(map.uncertainty(from, Action::click("l0")),
                     uncertainty_from_counts({map.successors(from, Action::click("l0"))[0].count,
                                              map.successors(from, Action::click("l0"))[1].count,
                                              map.successors(from, Action::click("l0"))[2].count}));
}

TEST(Persistence, RoundTripIsLosslessAndByteStable) {
    auto s = summarizer();
    CognitiveMap map("site", MapMode::summarized);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        auto from = synthetic_page(rng() % 6, 1 + rng() % 3);
        auto to = synthetic_page(rng() % 6, 1 + rng() % 3);
        to.flash = (i % 7 == 0) ? "ünïcode \"flash\"\n" : "";
        Action a = (i % 3 == 0) ? Action::type("l0", "v" + std::to_string(i % 4)) : Action::click("l" + std::to_string(i % 3));
        map.record_transition(from, a, to, i % 2 ? &s : nullptr);
    }
    std::stringstream first;
    save_map(map, first);
    auto loaded = load_map(first);
    EXPECT_EQ(loaded.records(), map.records());
    EXPECT_EQ(loaded.site_id(), "site");
    std::stringstream again;
    save_map(loaded, again);
    std::stringstream original;
    save_map(map, original);
    EXPECT_EQ(again.str(), original.str());

    // writes after loading continue the recency sequence
    const auto r0 = map.records().front();
    auto probe = r0.raw_to_observation;
    EXPECT_EQ(loaded.retrieve(synthetic_page(0, 1), Action::click("l0")).to_key,
              map.retrieve(synthetic_page(0, 1), Action::click("l0")).to_key);
}

TEST(Persistence, VersionAndFormatErrors) {
    std::stringstream future(R"({"format": "cogmap", "version": 99, "site_id": "s", "mode": "raw"})" "\n");
    EXPECT_THROW(load_map(future), VersionMismatch);
    std::stringstream wrong(R"({"format": "facts", "version": 1})" "\n");
    EXPECT_THROW(load_map(wrong), ParseError);
    std::stringstream empty;
    EXPECT_THROW(load_map(empty), ParseError);
    std::stringstream garbage(R"({"format": "cogmap", "version": 1, "site_id": "s"})" "\n{oops\n");
    EXPECT_THROW(load_map(garbage), ParseError);
    EXPECT_THROW(load_memory("/nonexistent/map.jsonl"), ParseError);
}

TEST(Persistence, FactsRoundTrip) {
    SemanticMemory facts;
    facts.add_fact({"", "s", "Dates must be MM/DD/YYYY", FactKind::format_rule, FactSource::exploration});
    facts.add_fact({"", "s", "Delete all is irreversible", FactKind::hazard, FactSource::online_update});
    std::stringstream buf;
    save_facts(facts, "s", buf);
    auto back = load_facts(buf);
    EXPECT_EQ(back.facts(), facts.facts());
    EXPECT_EQ(facts_path_for("m.cogmap.jsonl"), "m.cogmap.jsonl.facts.json");
}

TEST(SemanticMemory, DedupAndRankedQuery) {
    SemanticMemory m(2);
    EXPECT_TRUE(m.add_fact({"", "s", "Dates must be MM/DD/YYYY", FactKind::format_rule, FactSource::exploration}));
    EXPECT_FALSE(m.add_fact({"", "s", "dates MUST be mm/dd/yyyy!", FactKind::format_rule, FactSource::exploration}));
    EXPECT_TRUE(m.add_fact({"", "t", "Dates must be MM/DD/YYYY", FactKind::format_rule, FactSource::exploration}));
    EXPECT_TRUE(m.add_fact({"", "s", "Orders page lists orders", FactKind::navigation_hint, FactSource::exploration}));
    EXPECT_TRUE(m.add_fact({"", "s", "Sales report needs dates and orders", FactKind::navigation_hint,
                            FactSource::exploration}));
    EXPECT_FALSE(m.add_fact({"", "s", "", FactKind::hazard, FactSource::exploration}));

    auto hits = m.query_facts("s", "sales dates orders");
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].statement, "Sales report needs dates and orders");
    EXPECT_EQ(hits[1].statement, "Dates must be MM/DD/YYYY");  // overlap tie, insertion order
    EXPECT_TRUE(m.query_facts("s", "unrelated").empty());
    EXPECT_EQ(m.query_facts("t", "dates", 5).size(), 1u);
    EXPECT_FALSE(m.facts()[0].fact_id.empty());
}

TEST(WorkingMemory, BoundedFifo) {
    WorkingMemory w(2);
    w.add(0, "a");
    w.add(1, "b");
    w.add(2, "c");
    ASSERT_EQ(w.entries().size(), 2u);
    EXPECT_EQ(w.entries().front().note, "b");
    EXPECT_THROW(WorkingMemory(0), ValidationError);
}

TEST(AgentState, HistoryIsCappedAndRendered) {
    AgentState s(2, 5);
    s.record_step({"click(a)", "/a", "d1", ""});
    s.record_step({"click(b)", "/b", "d2", "invalid format"});
    s.record_step({"click(c)", "/c", "d3", ""});
    s.note("remember me");
    EXPECT_EQ(s.history().size(), 2u);
    EXPECT_EQ(s.step_index(), 3u);
    const auto text = s.render();
    EXPECT_EQ(text.find("click(a)"), std::string::npos);
    EXPECT_NE(text.find("click(b)"), std::string::npos);
    EXPECT_NE(text.find("remember me"), std::string::npos);
}
