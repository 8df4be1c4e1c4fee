#include <sstream>

#include <gtest/gtest.h>

#include "routescope/datasets.hpp"

using namespace routescope;

TEST(ImportWic, MapsRowToSameSenseRecord) {
  std::istringstream rows("bed\tN\t1-3\tThe bed was soft .\tI made my bed today .\n");
  std::istringstream labels("T\n");
  const auto res = import_wic(rows, labels);
  ASSERT_EQ(res.records.size(), 1u);
  const auto& r = res.records[0];
  EXPECT_EQ(r.target_word, "bed");
  EXPECT_EQ(r.wic().label, SenseLabel::same_sense);
  EXPECT_EQ(r.wic().context_a.substr(r.wic().span_a.begin, r.wic().span_a.size()), "bed");
  EXPECT_EQ(r.wic().context_b.substr(r.wic().span_b.begin, r.wic().span_b.size()), "bed");
}

TEST(ImportWic, AcceptsInflectedSurfaceAtExplicitOffsets) {
  std::istringstream rows("run\tV\t1-0\tShe runs fast .\tRunning is fun .\n");
  std::istringstream labels("F\n");
  const auto res = import_wic(rows, labels);
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].wic().label, SenseLabel::different_sense);
}

TEST(ImportWic, OffsetPastEndIsSkippedWithDiagnostic) {
  std::istringstream rows(
      "bed\tN\t9-1\tThe bed .\tMy bed .\n"
      "bed\tN\t1-1\tThe bed .\tMy bed .\n"
      "bed\tN\t0-1\tThe bed .\tMy bed .\n");
  std::istringstream labels("T\nF\nT\n");
  const auto res = import_wic(rows, labels);
  EXPECT_EQ(res.n_input, 3u);
  ASSERT_EQ(res.skipped.size(), 2u);
  EXPECT_EQ(res.skipped[0].row, 1u);
  EXPECT_NE(res.skipped[0].reason.find("past sentence end"), std::string::npos);
  EXPECT_NE(res.skipped[1].reason.find("does not cover"), std::string::npos);
  EXPECT_EQ(res.records.size(), res.n_input - res.skipped.size());
}

TEST(ImportWic, CharRangeModeAndCustomColumns) {
  std::istringstream rows("The bed .\tMy bed .\tbed\t4:7-3:6\n");
  std::istringstream labels("same_sense\n");
  WicColumns cols{2, 3, 0, 1, WicOffsetMode::char_range};
  const auto res = import_wic(rows, labels, cols);
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].wic().span_b, (CharSpan{3, 6}));
}

TEST(ImportWic, ConservationOnLargerFile) {
  std::ostringstream rows, labels;
  std::size_t bad = 0;
  for (int i = 0; i < 500; ++i) {
    const bool broken = i % 7 == 3;
    bad += broken;
    rows << "word\tN\t" << (broken ? "12-0" : "2-0") << "\tthe a word b\tword c d\n";
    labels << (i % 2 ? "T" : "F") << "\n";
  }
  std::istringstream r(rows.str()), l(labels.str());
  const auto res = import_wic(r, l);
  EXPECT_EQ(res.n_input, 500u);
  EXPECT_EQ(res.skipped.size(), bad);
  EXPECT_EQ(res.records.size(), res.n_input - res.skipped.size());
}

TEST(ImportSwords, BuildsTripleFromGloriousExample) {
  const std::string ctx = "\"My last show was glorious!\" Tasha said.";
  SwordsEntry e{"t1", ctx, "glorious", ctx.find("glorious"),
                {{"splendid", 0.9}, {"notable", 0.05}, {"grand", 0.3}}};
  const auto res = import_swords_triples({e});
  ASSERT_EQ(res.records.size(), 1u);
  const auto& t = res.records[0].swords();
  EXPECT_EQ(t.context_original, "\"My last show was glorious!\" Tasha said.");
  EXPECT_EQ(t.context_equivalent, "\"My last show was splendid!\" Tasha said.");
  EXPECT_EQ(t.context_different, "\"My last show was notable!\" Tasha said.");
}

TEST(ImportSwords, SkipReasons) {
  const std::string ctx = "It was glorious.";
  const auto off = ctx.find("glorious");
  const std::vector<SwordsEntry> entries{
      {"degenerate", ctx, "glorious", off, {{"glorious", 0.9}, {"dull", 0.0}}},
      {"only-equiv", ctx, "glorious", off, {{"splendid", 0.9}, {"grand", 0.7}}},
      {"only-diff", ctx, "glorious", off, {{"dull", 0.0}}},
      {"bad-offset", ctx, "glorious", 0, {{"splendid", 0.9}, {"dull", 0.0}}},
  };
  const auto res = import_swords_triples(entries);
  EXPECT_TRUE(res.records.empty());
  ASSERT_EQ(res.skipped.size(), 4u);
  EXPECT_EQ(res.skipped[0].reason, skip_reason::degenerate);
  EXPECT_EQ(res.skipped[1].reason, skip_reason::no_different);
  EXPECT_EQ(res.skipped[2].reason, skip_reason::no_equivalent);
  EXPECT_EQ(res.skipped[3].reason, skip_reason::bad_offset);
}

TEST(ImportSwords, ThresholdsAreConfigurable) {
  const std::string ctx = "It was glorious.";
  SwordsEntry e{"t", ctx, "glorious", ctx.find("glorious"), {{"grand", 0.4}, {"odd", 0.2}}};
  EXPECT_TRUE(import_swords_triples({e}).records.empty());
  const auto res = import_swords_triples({e}, {0.4, 0.2});
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].swords().equivalent_word, "grand");
  EXPECT_EQ(res.records[0].swords().different_word, "odd");
}

TEST(ImportSwords, KeepsSentenceInitialCapitalization) {
  const std::string ctx = "Glorious was the show.";
  SwordsEntry e{"t", ctx, "Glorious", 0, {{"splendid", 1.0}, {"notable", 0.0}}};
  const auto res = import_swords_triples({e});
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].target_word, "glorious");
  EXPECT_EQ(res.records[0].swords().context_equivalent, "Splendid was the show.");
}

TEST(ImportSwords, NativeLayoutScoresByTrueFraction) {
  const auto doc = nlohmann::json::parse(R"({
    "contexts": {"c1": {"context": "My last show was glorious!"}},
    "targets": {"t1": {"context_id": "c1", "target": "glorious", "offset": 17}},
    "substitutes": {"s1": {"target_id": "t1", "substitute": "splendid"},
                    "s2": {"target_id": "t1", "substitute": "notable"}},
    "substitute_labels": {"s1": ["TRUE", "TRUE", "FALSE"], "s2": ["FALSE", "FALSE", "FALSE"]}
  })");
  const auto entries = swords_entries_from_native(doc);
  ASSERT_EQ(entries.size(), 1u);
  ASSERT_EQ(entries[0].substitutes.size(), 2u);
  EXPECT_DOUBLE_EQ(entries[0].substitutes[0].score, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(entries[0].substitutes[1].score, 0.0);
  EXPECT_EQ(import_swords_triples(entries).records.size(), 1u);
}

TEST(RenderPrompt, StandardTemplate) {
  const auto p = render_prompt("The bed was soft .", "bed", PromptMode::standard);
  EXPECT_EQ(p.text,
            "The bed was soft . <user> Please define bed in this context <assistant> Sure! Here "
            "is the definition of the word bed");
  EXPECT_EQ(p.target.end, p.text.size());
  EXPECT_EQ(p.text.substr(p.target.begin, p.target.size()), "bed");
}

TEST(RenderPrompt, ReasoningTemplate) {
  const auto p = render_prompt("The bed was soft .", "bed", PromptMode::reasoning);
  const std::string suffix =
      "<user> Please define bed in this context <assistant> <think> Okay, so I need to figure out "
      "the meaning of the word bed";
  ASSERT_GE(p.text.size(), suffix.size());
  EXPECT_EQ(p.text.substr(p.text.size() - suffix.size()), suffix);
}

TEST(RenderPrompt, InstructionMentionsWordTwiceAndSpanIsTheSecond) {
  for (const char* w : {"bed", "glorious", "bank", "x"}) {
    const auto p = render_prompt("", w, PromptMode::standard);
    std::size_t count = 0, pos = 0, last = 0;
    const std::string word = std::string(" ") + w;
    while ((pos = p.text.find(word, pos)) != std::string::npos) {
      last = pos + 1;
      ++count;
      pos += word.size();
    }
    EXPECT_EQ(count, 2u) << w;
    EXPECT_EQ(p.target.begin, last) << w;
  }
}

TEST(Records, EmptyTargetRejectedAtConstruction) {
  EXPECT_THROW(make_wic_record("r", "", WicPair{"a", "b", {0, 1}, {0, 1}, SenseLabel::same_sense}),
               ValidationError);
}

TEST(Records, JsonlRoundTrip) {
  const std::string ctx = "It was glorious.";
  SwordsEntry e{"t", ctx, "glorious", ctx.find("glorious"), {{"splendid", 1.0}, {"dull", 0.0}}};
  auto records = import_swords_triples({e}).records;
  std::istringstream rows("bed\tN\t1-1\tThe bed .\tMy bed .\n");
  std::istringstream labels("T\n");
  records.push_back(import_wic(rows, labels).records.at(0));
  records.back().target_senses[Side::A] = 4;
  records.back().target_senses[Side::B] = 9;
  std::stringstream ss;
  write_records(ss, records);
  EXPECT_EQ(read_records(ss), records);
}

TEST(Records, MalformedLineReportsLine) {
  std::istringstream in("\n{\"record_id\": \"x\", \"kind\": \"wic\"\n");
  try {
    read_records(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}
