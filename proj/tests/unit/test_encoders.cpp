#include <gtest/gtest.h>

#include <cmath>

#include "p2net/encoders.hpp"
#include "test_util.hpp"

using namespace p2net;
using namespace p2net::encoders;

namespace {

struct AttnSetup {
  ad::ParameterCollection params;
  std::mt19937_64 rng{21};
  AttentionParams attn{params, "attn", 3, 4, 5, rng};
  ad::Parameter& keys = params.add("keys", 3, 6, ad::Init::kNormal, rng, 1.0);
  ad::Parameter& query = params.add("query", 4, 1, ad::Init::kNormal, rng, 1.0);
};

}  // namespace

TEST(Attention, MatchesDirectComputation) {
  AttnSetup s;
  s.attn.b().value().setRandom();
  ad::Graph g;
  auto a = attend(g, g.param(s.keys), g.param(s.query), s.attn);
  const ad::Matrix& K = s.keys.value();
  ad::Vector scores(K.cols());
  for (Eigen::Index t = 0; t < K.cols(); ++t) {
    ad::Vector pre = s.attn.w_h().value() * K.col(t) + s.attn.w_c().value() * s.query.value() + s.attn.b().value();
    scores(t) = s.attn.v().value().col(0).dot(pre.array().tanh().matrix());
  }
  ad::Vector w = (scores.array() - scores.maxCoeff()).exp();
  w /= w.sum();
  EXPECT_LT((a.weights.value().col(0) - w).norm(), 1e-14);
  EXPECT_LT((a.pooled.value().col(0) - K * w).norm(), 1e-14);
}

TEST(Attention, MaskedKeysGetZeroWeight) {
  AttnSetup s;
  ad::Graph g;
  std::vector<bool> mask{true, false, true, false, false, true};
  auto a = attend(g, g.param(s.keys), g.param(s.query), s.attn, &mask);
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (!mask[t]) EXPECT_EQ(a.weights.value()(static_cast<Eigen::Index>(t), 0), 0.0);
  EXPECT_NEAR(a.weights.value().sum(), 1.0, 1e-15);
}

TEST(Attention, GradientThroughKeysQueryAndParameters) {
  AttnSetup s;
  std::vector<bool> mask{true, true, false, true, true, true};
  auto r = fixtures::grad_check(s.params, {""}, [&](ad::Graph& g) {
    auto a = attend(g, g.param(s.keys), g.param(s.query), s.attn, &mask);
    return ad::sum_elems(ad::tanh(a.pooled)) + ad::pick(a.weights, 3);
  }, 64);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel, 1e-6) << r.worst;
}

TEST(PrototypeBank, MixIsConvexCombination) {
  ad::ParameterCollection params;
  std::mt19937_64 rng(2);
  PrototypeBank bank(params, "bank", PrototypeBank::Kind::kResponse, 4, 3, rng);
  ad::Graph g;
  ad::Vector w(4);
  w << 0.1, 0.2, 0.3, 0.4;
  ad::Vector expect = bank.parameter().value() * w;
  EXPECT_LT((bank.mix(g, g.input(w)).value().col(0) - expect).norm(), 1e-15);
  EXPECT_EQ(bank.count(), 4);
  EXPECT_EQ(bank.width(), 3);
}

namespace {

std::vector<ad::Expr> random_sequence(ad::Graph& g, int len, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<ad::Expr> out;
  for (int t = 0; t < len; ++t) {
    ad::Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = n(rng);
    out.push_back(g.input(v));
  }
  return out;
}

}  // namespace

TEST(Encoders, OutputsHaveConfiguredWidthsAndSimplexWeights) {
  ad::ParameterCollection params;
  std::mt19937_64 rng(3);
  EncoderConfig cfg;
  cfg.hidden = 6;
  cfg.attention = 5;
  cfg.context_style = 4;
  cfg.response_noise = 2;
  cfg.prototypes = 4;
  SemanticEncoder sem(params, 3, cfg, rng);
  ContextStyleEncoder ctx(params, 3, cfg, true, rng);
  ad::ParameterCollection plain_params;
  ContextStyleEncoder plain(plain_params, 3, cfg, false, rng);
  NoiseEncoder noise(params, 3, cfg, rng);
  ad::Graph g;
  auto s = sem.encode(g, random_sequence(g, 5, 3, 1));
  EXPECT_EQ(s.semantics.rows(), 6);
  EXPECT_NEAR(s.weights.value().sum(), 1.0, 1e-14);
  auto c = ctx.encode(g, {random_sequence(g, 3, 3, 2), random_sequence(g, 4, 3, 3)});
  EXPECT_EQ(c.style.rows(), 4);
  EXPECT_EQ(c.weights.rows(), 4);
  EXPECT_NEAR(c.weights.value().sum(), 1.0, 1e-14);
  auto p = plain.encode(g, {random_sequence(g, 3, 3, 2)});
  EXPECT_EQ(p.style.rows(), 4);
  EXPECT_FALSE(p.weights.valid());
  auto n = noise.encode(g, random_sequence(g, 4, 3, 4));
  EXPECT_EQ(n.noise.rows(), 2);
  EXPECT_NEAR(n.weights.value().sum(), 1.0, 1e-14);
  // The noise lies in the convex hull of the response prototypes.
  ad::Vector back = noise.bank().parameter().value() * n.weights.value().col(0);
  EXPECT_LT((back - n.noise.value().col(0)).norm(), 1e-14);
  // No context turns still yields a style vector.
  EXPECT_EQ(ctx.encode(g, {}).style.rows(), 4);
}

TEST(Encoders, PrototypeAttentionGradients) {
  ad::ParameterCollection params;
  std::mt19937_64 rng(4);
  EncoderConfig cfg;
  cfg.hidden = 4;
  cfg.attention = 4;
  cfg.context_style = 3;
  cfg.response_noise = 2;
  ContextStyleEncoder ctx(params, 3, cfg, true, rng);
  NoiseEncoder noise(params, 3, cfg, rng);
  auto r = fixtures::grad_check(params, {"encoders/context/attention", "encoders/context/prototypes",
                                        "encoders/noise/attention", "encoders/noise/prototypes",
                                        "encoders/noise/bilstm", "encoders/context/dialogue_rnn"},
                               [&](ad::Graph& g) {
                                 auto c = ctx.encode(g, {random_sequence(g, 3, 3, 7)});
                                 auto n = noise.encode(g, random_sequence(g, 3, 3, 8));
                                 return ad::sum_elems(ad::tanh(c.style)) + ad::sum_elems(ad::cmul(n.noise, n.noise));
                               }, 24);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel, 1e-6) << r.worst;
}
