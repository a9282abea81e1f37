#include <gtest/gtest.h>

#include "atlas/schema.hpp"
#include "atlas/text.hpp"

#include <nlohmann/json.hpp>

using namespace atlas;
using nlohmann::json;

TEST(Text, TokensAreLowercasedAlnumRuns) {
    EXPECT_EQ(text::tokens("Sales for 01/01/2024: $145.20!"),
              (std::vector<std::string>{"sales", "for", "01", "01", "2024", "145", "20"}));
    EXPECT_TRUE(text::tokens(" -- ").empty());
}

TEST(Text, JaccardOfEmptySetsIsOne) {
    EXPECT_DOUBLE_EQ(text::jaccard({}, {}), 1.0);
    EXPECT_DOUBLE_EQ(text::jaccard({"a", "b"}, {"b", "c"}), 1.0 / 3.0);
}

TEST(Text, Fnv1aKnownVectors) {
    EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(text::hex64(0xabcULL), "0000000000000abc");
}

TEST(Text, TruncateNeverSplitsUtf8) {
    const std::string s = "ab\xc3\xa9";  // "abé"
    EXPECT_EQ(text::truncate(s, 3), "ab");
    EXPECT_EQ(text::truncate(s, 4), s);
    EXPECT_EQ(text::truncate(s, 0), "");
}

TEST(Text, WordCountAndJoin) {
    EXPECT_EQ(text::word_count("  one two\nthree "), 3u);
    EXPECT_EQ(text::join({"a", "b"}, ", "), "a, b");
}

TEST(Schema, RegistryAndValidation) {
    EXPECT_TRUE(schema::is_registered("plan.v1"));
    EXPECT_FALSE(schema::is_registered("plan.v2"));
    EXPECT_FALSE(schema::validate("summary.v1", {{"delta", "x"}, {"new_affordances", json::array()}, {"hazard_flag", false}}));
    EXPECT_TRUE(schema::validate("summary.v1", {{"delta", 3}}));
    EXPECT_TRUE(schema::validate("assessment.v1", {{"scores", {{"goal_alignment", 11}}}}));
}
