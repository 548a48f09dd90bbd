#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "p2net/errors.hpp"
#include "p2net/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace p2net;
using namespace p2net::training;
using decoder::DecodedToken;

using fixtures::LossCase;
using fixtures::hand_gen;
using fixtures::hand_word;
using fixtures::as_exprs;

TEST(Losses, MatchHandComputationOnRandomCases) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    auto c = fixtures::random_loss_case(rng);
    EXPECT_NEAR(compute_gen_loss(c.steps, c.gt), hand_gen(c), 1e-10);
    EXPECT_NEAR(compute_word_loss(c.steps, c.gt), hand_word(c), 1e-10);
    ad::Graph g;
    auto steps = as_exprs(g, c);
    ad::Expr gen = gen_loss(g, steps, c.gt);
    ad::Expr word = word_loss(g, steps, c.gt);
    ad::Expr final = gen + word;
    EXPECT_NEAR(gen.scalar(), hand_gen(c), 1e-10);
    EXPECT_NEAR(word.scalar(), hand_word(c), 1e-10);
    EXPECT_EQ(final.scalar(), gen.scalar() + word.scalar());
  }
}

TEST(Losses, PaddingPositionsContributeNothing) {
  std::mt19937_64 rng(5);
  auto c = fixtures::random_loss_case(rng);
  std::vector<bool> valid(c.gt.size(), true);
  valid.back() = false;
  LossCase trimmed = c;
  trimmed.steps.pop_back();
  trimmed.gt.pop_back();
  EXPECT_NEAR(compute_gen_loss(c.steps, c.gt, &valid), hand_gen(trimmed), 1e-12);
  EXPECT_NEAR(compute_word_loss(c.steps, c.gt, &valid), hand_word(trimmed), 1e-12);
}

TEST(Losses, LogsAreClamped) {
  decoder::DecodeStepOutput o;
  o.p_gen = 1.0;
  o.p_word = ad::Vector::Unit(3, 0);
  o.p_slot = ad::Vector::Unit(2, 1);
  std::vector<decoder::DecodeStepOutput> steps{o};
  std::vector<DecodedToken> gt{DecodedToken::Slot(0)};
  EXPECT_NEAR(compute_gen_loss(steps, gt), -std::log(kLogClamp), 1e-6);
  EXPECT_NEAR(compute_word_loss(steps, gt), -std::log(kLogClamp), 1e-6);
  EXPECT_TRUE(std::isfinite(compute_word_loss(steps, {DecodedToken::Word(2)})));
}

TEST(Losses, LengthMismatchIsRejected) {
  std::mt19937_64 rng(5);
  auto c = fixtures::random_loss_case(rng);
  c.gt.push_back(DecodedToken::Word(0));
  EXPECT_ANY_THROW(compute_gen_loss(c.steps, c.gt));
}

TEST(TeacherForcing, GeometricDecayBetweenEndpoints) {
  TrainingConfig cfg;
  EXPECT_DOUBLE_EQ(teacher_forcing_ratio(0, cfg), 0.95);
  EXPECT_NEAR(teacher_forcing_ratio(50000, cfg), 0.8, 1e-15);
  EXPECT_NEAR(teacher_forcing_ratio(90000, cfg), 0.8, 1e-15);
  EXPECT_NEAR(teacher_forcing_ratio(25000, cfg), std::sqrt(0.95 * 0.8), 1e-12);
  for (int it = 0; it < 50000; it += 999) EXPECT_GE(teacher_forcing_ratio(it, cfg), teacher_forcing_ratio(it + 1, cfg));
  EXPECT_THROW(teacher_forcing_ratio(-1, cfg), std::invalid_argument);
}

TEST(NoiseDropout, CaseFrequenciesMatchConfig) {
  TrainingConfig cfg;
  std::mt19937_64 rng(23);
  const int n = 100000;
  int full = 0, k0 = 0, k1 = 0, k2 = 0;
  for (int i = 0; i < n; ++i) {
    auto d = draw_noise_dropout(rng, cfg);
    if (d.full_zero) {
      ++full;
      continue;
    }
    k0 += d.k == 0;
    k1 += d.k == 1;
    k2 += d.k == 2;
  }
  const double p = cfg.noise_geometric_p;
  const double kept = n * (1 - cfg.noise_full_zero_prob);
  EXPECT_NEAR(full / double(n), cfg.noise_full_zero_prob, 0.005);
  EXPECT_NEAR(k0 / double(n), kept / n * p, 0.005);
  EXPECT_NEAR(k1 / double(n), kept / n * p * (1 - p), 0.005);
  EXPECT_NEAR(k2 / double(n), kept / n * p * (1 - p) * (1 - p), 0.005);
}

TEST(NoiseDropout, ZeroesLeadingSteps) {
  ad::Graph g;
  ad::Expr noise = g.input(ad::Vector(ad::Vector::Ones(3)));
  NoiseDropoutDraw d{false, 2};
  EXPECT_EQ(apply_noise_dropout(g, noise, d, 0).value().norm(), 0.0);
  EXPECT_EQ(apply_noise_dropout(g, noise, d, 1).value().norm(), 0.0);
  EXPECT_EQ(apply_noise_dropout(g, noise, d, 2).value(), noise.value());
  NoiseDropoutDraw full{true, 0};
  for (int t = 0; t < 5; ++t) EXPECT_TRUE(full.zeroed_at(t));
}

TEST(Adam, MatchesReferenceUpdate) {
  ad::ParameterCollection pc;
  auto& p = pc.add("w", ad::Matrix::Constant(1, 1, 1.0));
  Adam adam(0.1);
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double gr = 2.0 * w;  // d/dw w^2
    p.grad()(0, 0) = 2.0 * p.value()(0, 0);
    adam.step(pc);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value()(0, 0), w, 1e-14);
  }
  EXPECT_EQ(adam.steps(), 5);
}

TEST(Config, ValidationAndJsonRoundTrip) {
  TrainingConfig c;
  c.batch_size = 3;
  c.seed = 9;
  auto back = training_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = to_json(c);
  j["batch_size"] = 0;
  EXPECT_THROW(training_config_from_json(j), ConfigError);
  j = to_json(c);
  j["noise_geometric_p"] = 0.0;
  EXPECT_THROW(training_config_from_json(j), ConfigError);
}

namespace {

TrainingConfig small_training(std::uint64_t seed = 3) {
  TrainingConfig c;
  c.batch_size = 4;
  c.max_iterations = 6;
  c.learning_rate = 1e-2;
  c.seed = seed;
  c.log_every = 1;
  c.checkpoint_every = 3;
  c.validate_every = 1000;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Trainer, DeterministicForASeed) {
  auto run = [] {
    auto m = fixtures::tiny_model();
    Trainer t(*m, small_training());
    std::vector<double> losses;
    for (const auto& e : t.run(fixtures::fixture().sets, {})) losses.push_back(e.loss.final);
    return losses;
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
}

TEST(Trainer, RepeatedBatchLossDecreases) {
  auto m = fixtures::tiny_model(Variant::kGtCtxProtoSlotsTmpl, 2, 12, 8);
  auto cfg = small_training();
  cfg.dropout = 0.0;
  Trainer t(*m, cfg);
  corpus::SamplingSchedule sched(fixtures::fixture().sets);
  std::mt19937_64 rng(1);
  std::vector<corpus::TrainingInstance> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(corpus::sample_training_instance(fixtures::fixture().sets, sched, rng));
  const double first = t.train_batch(batch).final;
  double last = first;
  for (int i = 0; i < 60; ++i) last = t.train_batch(batch).final;
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(t.iteration(), 61);
}

TEST(Trainer, NonFiniteLossRaisesNumericErrorAndDumpsBatch) {
  auto m = fixtures::tiny_model();
  m->params().find("decoder/output/b")->value()(5, 0) = std::numeric_limits<double>::quiet_NaN();
  Trainer t(*m, small_training());
  auto dir = temp_dir("p2net_nonfinite");
  EXPECT_THROW(t.run(fixtures::fixture().sets, dir), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nonfinite_batch.json"));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, WritesLogAndCheckpointsAndSelectsBestByValidation) {
  auto m = fixtures::tiny_model();
  auto cfg = small_training();
  cfg.validate_every = 2;
  Trainer t(*m, cfg);
  auto dir = temp_dir("p2net_run");
  int calls = 0;
  t.run(fixtures::fixture().sets, dir, [&](P2NetModel&) {
    ++calls;
    return nlohmann::json{{"bleu_zeroed", calls == 2 ? 50.0 : 10.0}};
  });
  EXPECT_EQ(calls, 3);
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* k : {"iteration", "L_gen", "L_word", "L_final", "L_word_per_token", "tf_ratio"})
      EXPECT_TRUE(j.contains(k)) << k;
    ++lines;
  }
  EXPECT_EQ(lines, 6);
  CheckpointMeta best;
  load_checkpoint(dir / "best.ckpt", &best);
  EXPECT_EQ(best.iteration, 4);
  EXPECT_EQ(best.extra.at("validation").at("bleu_zeroed"), 50.0);
  CheckpointMeta last;
  load_checkpoint(dir / "last.ckpt", &last);
  EXPECT_EQ(last.iteration, 6);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripRestoresParametersMetaAndOptimizer) {
  auto m = fixtures::tiny_model(Variant::kGtCtxSlotsTmpl, 4);
  Trainer t(*m, small_training());
  t.run(fixtures::fixture().sets, {});
  auto dir = temp_dir("p2net_ckpt");
  CheckpointMeta meta;
  meta.model = m->config();
  meta.training = t.config();
  meta.iteration = t.iteration();
  meta.rng_state = "state";
  meta.extra = {{"note", "x"}};
  save_checkpoint(dir / "m.ckpt", *m, meta, &t.optimizer());

  CheckpointMeta back;
  Adam adam(1e-3);
  auto loaded = load_checkpoint(dir / "m.ckpt", &back, &adam);
  EXPECT_EQ(to_json(loaded->config()), to_json(m->config()));
  EXPECT_EQ(back.iteration, meta.iteration);
  EXPECT_EQ(back.rng_state, "state");
  EXPECT_EQ(back.extra, meta.extra);
  EXPECT_EQ(to_json(back.training), to_json(meta.training));
  EXPECT_EQ(loaded->vocab().body(), m->vocab().body());
  EXPECT_EQ(loaded->slot_types().types(), m->slot_types().types());
  auto a = m->params().all();
  auto b = loaded->params().all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name(), b[i]->name());
    EXPECT_EQ(a[i]->value(), b[i]->value()) << a[i]->name();
    EXPECT_EQ(adam.moments().at(a[i]->name()).v, t.optimizer().moments().at(a[i]->name()).v);
  }
  EXPECT_EQ(adam.steps(), t.optimizer().steps());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  auto dir = temp_dir("p2net_bad_ckpt");
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT....";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), DataError);
  auto m = fixtures::tiny_model();
  CheckpointMeta meta;
  meta.model = m->config();
  save_checkpoint(dir / "ok.ckpt", *m, meta);
  const auto size = std::filesystem::file_size(dir / "ok.ckpt");
  std::filesystem::resize_file(dir / "ok.ckpt", size - 16);
  EXPECT_THROW(load_checkpoint(dir / "ok.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  std::filesystem::remove_all(dir);
}
