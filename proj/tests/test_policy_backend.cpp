#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "atlas/backend.hpp"
#include "atlas/error.hpp"
#include "atlas/text.hpp"
#include "support.hpp"

using namespace atlas;
using namespace atlas::testing;

namespace {

GenerationRequest actor_request(const std::string& user) { return make_request(Role::actor, "sys", user); }

ScriptedRuleSet two_rules() {
    return rules_from({
        R"({"role": "actor", "match": ["GOAL: a", "URL: /x"], "response": {"candidates": [{"action": {"type": "click", "element": "one"}}]}})",
        R"({"role": "actor", "regex": "GOAL: [b-c]", "response": {"candidates": [{"action": {"type": "back"}}]}})",
        R"({"role": "actor", "fallback": true, "response": {"candidates": []}})",
        R"({"role": "critic", "match": "", "response": {"satisfied": true}})",
    });
}

/// Answers with whatever the test put in `reply`.
class Canned final : public PolicyBackend {
public:
    json reply;
    std::string id() const override { return "canned"; }

private:
    GenerationResponse do_generate(const GenerationRequest&) override {
        GenerationResponse r;
        r.parsed = reply;
        r.text = reply.dump();
        r.usage = {3, 4};
        return r;
    }
};

}  // namespace

TEST(Request, ValidateRejectsBrokenRequests) {
    auto r = actor_request("x");
    EXPECT_NO_THROW(r.validate());
    auto bad = r;
    bad.messages.clear();
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = r;
    bad.temperature = 2.5;
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = r;
    bad.response_schema_id = "nope.v1";
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = r;
    bad.messages.front().speaker = Speaker::user;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Request, DefaultsFollowTheRole) {
    auto r = make_request(Role::critic, "s", "u");
    EXPECT_EQ(r.response_schema_id, "assessment.v1");
    EXPECT_EQ(r.temperature, 0.0);
    EXPECT_EQ(r.rendered(), "[system]\ns\n[user]\nu\n");
    EXPECT_EQ(GenerationRequest::from_json(r.to_json()).to_json(), r.to_json());
}

TEST(Scripted, FirstMatchingRuleWins) {
    ScriptedBackend b(two_rules());
    auto r = b.generate(actor_request("GOAL: a\nURL: /x"));
    EXPECT_EQ(r.parsed["candidates"][0]["action"]["element"], "one");
    EXPECT_EQ(b.generate(actor_request("GOAL: c")).parsed["candidates"][0]["action"]["type"], "back");
    EXPECT_TRUE(b.generate(actor_request("GOAL: a only")).parsed["candidates"].empty());
    EXPECT_EQ(r.usage.prompt_tokens, text::word_count(actor_request("GOAL: a\nURL: /x").rendered()));
}

TEST(Scripted, NoRuleForRoleRaises) {
    ScriptedBackend b(two_rules());
    try {
        b.generate(make_request(Role::planner, "s", "u"));
        FAIL();
    } catch (const NoMatchingRule& e) {
        EXPECT_EQ(e.kind(), "NoMatchingRule");
    }
}

TEST(Scripted, NonConformingTemplateIsRejectedAtLoad) {
    EXPECT_THROW(rules_from({R"({"role": "critic", "match": "", "response": {"scores": {"goal_alignment": 12}}})"}),
                 ValidationError);
    EXPECT_THROW(rules_from({R"({"role": "critic", "response": )"}), ParseError);
    EXPECT_THROW(rules_from({R"({"role": "wizard", "response": {}})"}), ParseError);
}

TEST(Scripted, SchemaCheckedOnEveryCall) {
    Canned c;
    c.reply = {{"candidates", "not an array"}};
    EXPECT_THROW(c.generate(actor_request("x")), SchemaViolation);
    c.reply = {{"candidates", json::array()}};
    EXPECT_NO_THROW(c.generate(actor_request("x")));
}

TEST(Scripted, DeterministicForIdenticalRequests) {
    auto backend = fixture_backend();
    std::mt19937_64 rng(3);
    const std::vector<std::string> fragments = {"GOAL: ", "CURRENT URL: /admin\n", "SUBGOAL CHECK", "hazard_flag: true",
                                                "Find the best seller", "x"};
    for (int i = 0; i < 200; ++i) {
        std::string user;
        for (int k = 0; k < 3; ++k) user += fragments[rng() % fragments.size()];
        const Role role = (i % 2) ? Role::critic : Role::actor;
        auto req = make_request(role, "s", user);
        auto a = backend->generate(req);
        auto b = backend->generate(req);
        EXPECT_EQ(a.text, b.text);
        EXPECT_EQ(a.parsed, b.parsed);
    }
}

TEST(Record, ReplayReturnsTheRecordedResponsesAndReRecordsIdentically) {
    std::stringstream first;
    auto rec = record_session(std::make_shared<ScriptedBackend>(two_rules()), first);
    std::vector<GenerationRequest> calls = {actor_request("GOAL: a\nURL: /x"), actor_request("GOAL: b"),
                                            make_request(Role::critic, "s", "anything"), actor_request("GOAL: z")};
    std::vector<GenerationResponse> live;
    for (const auto& c : calls) live.push_back(rec->generate(c));
    EXPECT_EQ(rec->entries(), calls.size());

    std::stringstream in(first.str());
    auto replay = std::make_shared<ReplayBackend>(ReplayBackend::read_recording(in));
    std::stringstream second;
    auto rerec = record_session(replay, second);
    for (std::size_t i = 0; i < calls.size(); ++i) {
        auto r = rerec->generate(calls[i]);
        EXPECT_EQ(r.parsed, live[i].parsed);
        EXPECT_EQ(r.text, live[i].text);
    }
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(replay->position(), calls.size());
}

TEST(Record, ReplayMismatchCarriesTheIndex) {
    std::stringstream log;
    auto rec = record_session(std::make_shared<ScriptedBackend>(two_rules()), log);
    rec->generate(actor_request("GOAL: a\nURL: /x"));
    rec->generate(actor_request("GOAL: b"));
    rec->generate(actor_request("GOAL: c"));

    std::stringstream in(log.str());
    ReplayBackend replay(ReplayBackend::read_recording(in));
    replay.generate(actor_request("GOAL: a\nURL: /x"));
    replay.generate(actor_request("GOAL: b"));
    try {
        replay.generate(actor_request("GOAL: something else"));
        FAIL();
    } catch (const ReplayMismatch& e) {
        EXPECT_EQ(e.index(), 2u);
    }
    replay.rewind();
    EXPECT_EQ(replay.position(), 0u);
    try {
        replay.generate(actor_request("GOAL: b"));
        FAIL();
    } catch (const ReplayMismatch& e) {
        EXPECT_EQ(e.index(), 0u);
    }
}

TEST(Record, FailedCallsReplayAsTheSameError) {
    std::stringstream log;
    auto rec = record_session(std::make_shared<ScriptedBackend>(two_rules()), log);
    const auto failing = make_request(Role::summarizer, "s", "nothing matches");
    std::string message;
    try {
        rec->generate(failing);
        FAIL();
    } catch (const NoMatchingRule& e) {
        message = e.what();
    }
    rec->generate(actor_request("GOAL: b"));
    EXPECT_EQ(rec->entries(), 2u);

    std::stringstream in(log.str());
    ReplayBackend replay(ReplayBackend::read_recording(in));
    try {
        replay.generate(failing);
        FAIL();
    } catch (const NoMatchingRule& e) {
        EXPECT_EQ(e.what(), message);
    }
    EXPECT_NO_THROW(replay.generate(actor_request("GOAL: b")));
    EXPECT_EQ(replay.position(), 2u);
}

TEST(Record, ExhaustedRecordingRaises) {
    ReplayBackend replay({});
    try {
        replay.generate(actor_request("x"));
        FAIL();
    } catch (const ReplayMismatch& e) {
        EXPECT_EQ(e.index(), 0u);
    }
}

TEST(Record, MalformedRecordingIsAParseError) {
    std::stringstream in("{\"seq\": 0}\n");
    EXPECT_THROW(ReplayBackend::read_recording(in), ParseError);
}

TEST(Record, BrokenSinkFailsLoudly) {
    std::stringstream sink;
    sink.setstate(std::ios::badbit);
    EXPECT_THROW(record_session(std::make_shared<ScriptedBackend>(two_rules()), sink), SinkWriteFailure);
}

TEST(Helpers, ParseModelJsonToleratesFences) {
    EXPECT_EQ(parse_model_json("```json\n{\"a\": 1}\n```").value()["a"], 1);
    EXPECT_EQ(parse_model_json(" {\"a\": 2} ").value()["a"], 2);
    EXPECT_FALSE(parse_model_json("{nope"));
}

TEST(Helpers, MeteredBackendCountsCallsAndTokens) {
    auto c = std::make_shared<Canned>();
    c->reply = {{"candidates", json::array()}};
    MeteredBackend m(c);
    m.generate(actor_request("x"));
    m.generate(actor_request("y"));
    EXPECT_EQ(m.calls(), 2u);
    EXPECT_EQ(m.tokens(), 14u);
}

TEST(Helpers, BackendSetRoutesByRole) {
    BackendSet set;
    EXPECT_THROW(set.at(Role::actor), ValidationError);
    auto a = std::make_shared<Canned>();
    set.set(Role::actor, a);
    EXPECT_EQ(&set.at(Role::actor), a.get());
    EXPECT_THROW(set.at(Role::critic), ValidationError);
    set.set_default(a);
    EXPECT_NO_THROW(set.at(Role::critic));
}

// ---------------------------------------------------------------------------
// Remote client against a local stub server

namespace {

class StubServer {
public:
    explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&, int)> handler) {
        server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
            const int n = hits_++;
            bodies_.push_back(req.body);
            handler(req, res, n);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    RemoteConfig config() const {
        RemoteConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        c.model = "stub";
        c.api_key_env = "ATLAS_TEST_NO_SUCH_KEY";
        c.timeout = std::chrono::milliseconds(2000);
        c.backoff = std::chrono::milliseconds(1);
        return c;
    }
    int hits() const { return hits_.load(); }
    const std::vector<std::string>& bodies() const { return bodies_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    std::vector<std::string> bodies_;
};

std::string completion(const std::string& content, int prompt = 10, int completion_tokens = 5) {
    return json({{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})},
                 {"usage", {{"prompt_tokens", prompt}, {"completion_tokens", completion_tokens}}}})
        .dump();
}

const std::string kValidSummary = R"({"delta": "moved", "new_affordances": [], "hazard_flag": false})";

GenerationRequest summary_call() { return make_request(Role::summarizer, "sys", "FROM URL: /a"); }

}  // namespace

TEST(Remote, ValidReplyIsParsedWithUsage) {
    StubServer s([](const auto&, auto& res, int) { res.set_content(completion(kValidSummary), "application/json"); });
    RemoteBackend b(s.config());
    auto r = b.generate(summary_call());
    EXPECT_EQ(r.parsed["delta"], "moved");
    EXPECT_EQ(r.usage.total(), 15u);
    EXPECT_EQ(s.hits(), 1);
    auto sent = json::parse(s.bodies().front());
    EXPECT_EQ(sent["model"], "stub");
    EXPECT_EQ(sent["messages"][0]["role"], "system");
}

TEST(Remote, MalformedOutputFailsAfterThreeRequests) {
    StubServer s([](const auto&, auto& res, int) { res.set_content(completion("{not json"), "application/json"); });
    RemoteBackend b(s.config());
    EXPECT_THROW(b.generate(summary_call()), SchemaViolation);
    EXPECT_EQ(s.hits(), 3);
}

TEST(Remote, ReAskRecoversAndCarriesTheRejection) {
    StubServer s([](const auto&, auto& res, int n) {
        res.set_content(completion(n == 0 ? R"({"delta": 5})" : kValidSummary), "application/json");
    });
    RemoteBackend b(s.config());
    auto r = b.generate(summary_call());
    EXPECT_EQ(r.parsed["delta"], "moved");
    EXPECT_EQ(r.usage.total(), 30u);
    ASSERT_EQ(s.hits(), 2);
    auto second = json::parse(s.bodies()[1]);
    EXPECT_EQ(second["messages"].size(), 3u);
    EXPECT_NE(second["messages"][2]["content"].get<std::string>().find("rejected"), std::string::npos);
}

TEST(Remote, ServerErrorsRetryThenGiveUp) {
    StubServer s([](const auto&, auto& res, int) { res.status = 503; });
    auto cfg = s.config();
    cfg.max_retries = 2;
    RemoteBackend b(cfg);
    EXPECT_THROW(b.generate(summary_call()), BackendUnavailable);
    EXPECT_EQ(b.attempts(), 3u);
    EXPECT_EQ(s.hits(), 3);
}

TEST(Remote, TransientErrorThenSuccess) {
    StubServer s([](const auto&, auto& res, int n) {
        if (n == 0) {
            res.status = 429;
            return;
        }
        res.set_content(completion(kValidSummary), "application/json");
    });
    RemoteBackend b(s.config());
    EXPECT_EQ(b.generate(summary_call()).parsed["delta"], "moved");
    EXPECT_EQ(b.attempts(), 2u);
}

TEST(Remote, ClientErrorIsNotRetried) {
    StubServer s([](const auto&, auto& res, int) { res.status = 401; });
    RemoteBackend b(s.config());
    EXPECT_THROW(b.generate(summary_call()), BackendUnavailable);
    EXPECT_EQ(s.hits(), 1);
}

TEST(Remote, UnreachableHostIsUnavailable) {
    RemoteConfig c;
    c.base_url = "http://127.0.0.1:1/v1";
    c.max_retries = 1;
    c.backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(500);
    RemoteBackend b(c);
    EXPECT_THROW(b.generate(summary_call()), BackendUnavailable);
    EXPECT_EQ(b.attempts(), 2u);
}

TEST(Remote, BadConfigRejected) {
    RemoteConfig c;
    c.base_url = "no-scheme";
    EXPECT_THROW(RemoteBackend{c}, ValidationError);
}
