#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "p2net/errors.hpp"
#include "p2net/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace p2net;
using namespace p2net::metrics;
using nlohmann::json;

TEST(Bleu, MatchesFrozenSacrebleuScores) {
  std::ifstream in(fixtures::data_dir() / "bleu_oracle.json");
  ASSERT_TRUE(in);
  json oracle = json::parse(in);
  const double smoothing = oracle["smoothing"].get<double>();
  std::size_t n = 0;
  for (const auto& c : oracle["cases"]) {
    auto hyps = c["hypotheses"].get<std::vector<Sentence>>();
    auto refs = c["references"].get<std::vector<std::vector<Sentence>>>();
    EXPECT_NEAR(corpus_bleu(hyps, refs, smoothing), c["sacrebleu"].get<double>(), 1e-9) << "case " << n;
    ++n;
  }
  EXPECT_GE(n, 40u);
}

TEST(Bleu, Invariants) {
  Sentence a{"the", "<name_0>", "is", "in", "the", "<area_0>", "."};
  Sentence b{"<name_0>", "serves", "food", "in", "the", "<area_0>", "part", "."};
  EXPECT_NEAR(corpus_bleu({a}, {{a}}), 100.0, 1e-9);
  const double s = corpus_bleu({a, b}, {{b}, {a}});
  EXPECT_GE(s, 0.0);
  EXPECT_LE(s, 100.0);
  // Corpus BLEU pools counts, so instance order does not matter.
  EXPECT_NEAR(corpus_bleu({b, a}, {{a}, {b}}), s, 1e-12);
  auto st = corpus_bleu_stats({a}, {{b}});
  EXPECT_EQ(st.hyp_len, a.size());
  EXPECT_EQ(st.ref_len, b.size());
  EXPECT_THROW(corpus_bleu({a}, {}), std::invalid_argument);
}

TEST(Symbols, SlotValuesAreInvisible) {
  const auto& r = fixtures::set_with_slots(1).members[0].response;
  auto other = r;
  for (auto& s : other.slots) s.value = {"x", "y", "z"};
  EXPECT_EQ(symbols(r), symbols(other));
  auto sym = symbols(r);
  EXPECT_EQ(std::count(sym.begin(), sym.end(), "<eos>"), 0);
  bool found = false;
  for (const auto& w : sym) found = found || (w.front() == '<' && w.find('_') != std::string::npos);
  EXPECT_TRUE(found);
}


TEST(Distinct, MatchesBruteForceCounting) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 9), word(0, 5), count(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Sentence> batch(static_cast<std::size_t>(count(rng)));
    for (auto& s : batch) {
      const int l = len(rng);
      for (int i = 0; i < l; ++i) s.push_back("w" + std::to_string(word(rng)));
    }
    for (int n : {1, 2}) {
      const double d = distinct_n(batch, n);
      EXPECT_DOUBLE_EQ(d, fixtures::brute_distinct(batch, n));
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 1.0);
    }
  }
}

TEST(Distinct, MacroAndPooled) {
  std::vector<std::vector<Sentence>> inst{{{"a", "b"}, {"a", "b"}}, {{"a", "c"}}};
  EXPECT_DOUBLE_EQ(distinct_macro(inst, 1), (0.5 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(distinct_pooled(inst, 1), 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(distinct_n({{"a", "a"}, {"a"}}, 2), 1.0);
  EXPECT_DOUBLE_EQ(distinct_n({{"a"}}, 2), 0.0);
  // Permuting samples leaves the score unchanged.
  EXPECT_DOUBLE_EQ(distinct_n({{"x", "y"}, {"y", "y", "z"}}, 2), distinct_n({{"y", "y", "z"}, {"x", "y"}}, 2));
}

TEST(Evaluation, UntrainedModelGivesFiniteMetrics) {
  auto insts = inference::evaluation_instances({fixtures::set_with_slots(1)});
  auto model = fixtures::tiny_model();
  EvaluationConfig cfg;
  cfg.decoding.n = 3;
  cfg.decoding.beam = 3;
  cfg.decoding.max_length = 10;
  cfg.max_instances = 3;
  auto rep = evaluate_model(*model, insts, cfg);
  EXPECT_EQ(rep.n_instances, 3u);
  for (auto v : {rep.bleu_zeroed, rep.bleu_guided, rep.distinct1, rep.distinct2, rep.baseline_distinct1}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_TRUE(std::isfinite(*v));
  }
  EXPECT_GE(rep.semantic_failure_rate, 0.0);
  EXPECT_LE(rep.semantic_failure_rate, 1.0);
  auto j = to_json(rep);
  EXPECT_EQ(j["variant"], "gt_ctxproto_slots_tmpl");
  EXPECT_NE(format_table({rep}).find("BLEU(GT)"), std::string::npos);
  // A variant without the noise encoder reports no diversity.
  auto plain = evaluate_model(*fixtures::tiny_model(Variant::kCtxSlots), insts, cfg);
  EXPECT_FALSE(plain.distinct1.has_value());
  EXPECT_TRUE(plain.bleu_zeroed.has_value());
}

TEST(Evaluation, GenerationFiles) {
  auto insts = inference::evaluation_instances({fixtures::set_with_slots(1)});
  EXPECT_THROW(evaluate_generations({}, insts), DataError);
  std::vector<json> lines;
  for (int i = 0; i < 2; ++i) {
    json tokens = json::array();
    for (const auto& t : insts[0].ground_truth.tokens) {
      if (t.is_slot()) tokens.push_back({{"slot", t.slot}});
      else tokens.push_back(t.word);
    }
    lines.push_back({{"instance_id", inference::instance_id(insts[0])}, {"sample_index", i},
                     {"tokens", tokens}});
  }
  auto rep = evaluate_generations(lines, insts);
  ASSERT_TRUE(rep.bleu_first_sample.has_value());
  EXPECT_NEAR(*rep.bleu_first_sample, 100.0, 1e-9);
  lines[0]["instance_id"] = "nowhere/0/0";
  EXPECT_THROW(evaluate_generations(lines, insts), DataError);
}
