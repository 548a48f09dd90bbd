#include "p2net/encoders.hpp"

#include <stdexcept>

namespace p2net::encoders {

AttentionParams::AttentionParams(ad::ParameterCollection& params, const std::string& prefix,
                                 int key_dim, int query_dim, int attn_dim, std::mt19937_64& rng) {
  w_h_ = &params.add(prefix + "/W_h", attn_dim, key_dim, ad::Init::kGlorot, rng);
  w_c_ = &params.add(prefix + "/W_c", attn_dim, query_dim, ad::Init::kGlorot, rng);
  b_ = &params.add(prefix + "/b", attn_dim, 1, ad::Init::kZero, rng);
  v_ = &params.add(prefix + "/v", attn_dim, 1, ad::Init::kGlorot, rng);
}

ad::Expr attention_scores(ad::Graph& g, ad::Expr keys, ad::Expr query, const AttentionParams& p) {
  ad::Expr q = ad::affine(g.param(p.b()), {{g.param(p.w_c()), query}});
  ad::Expr hidden = ad::tanh(ad::add_colwise(g.param(p.w_h()) * keys, q));
  return ad::transpose(ad::transpose(g.param(p.v())) * hidden);
}

Attention attend(ad::Graph& g, ad::Expr keys, ad::Expr query, const AttentionParams& p,
                 const std::vector<bool>* mask) {
  if (keys.cols() < 1) throw std::invalid_argument("attention over an empty key set");
  ad::Expr scores = attention_scores(g, keys, query, p);
  ad::Expr weights = mask != nullptr ? ad::masked_softmax(scores, *mask) : ad::softmax(scores);
  return Attention{weights, keys * weights};
}

Attention attend(ad::Graph& g, const std::vector<ad::Expr>& keys, ad::Expr query,
                 const AttentionParams& p) {
  return attend(g, ad::concat_cols(keys), query, p);
}

SequenceEncoder::SequenceEncoder(ad::ParameterCollection& params, const std::string& prefix,
                                 int input_dim, int hidden_dim, std::mt19937_64& rng)
    : lstm_(params, prefix + "/bilstm", input_dim, hidden_dim, rng) {
  proj_w_ = &params.add(prefix + "/end_proj/W", hidden_dim, hidden_dim, ad::Init::kGlorot, rng);
  proj_b_ = &params.add(prefix + "/end_proj/b", hidden_dim, 1, ad::Init::kZero, rng);
}

EncoderOutput SequenceEncoder::encode(ad::Graph& g, const std::vector<ad::Expr>& inputs) const {
  auto out = lstm_.run(g, inputs);
  ad::Expr end = ad::affine(g.param(*proj_b_),
                            {{g.param(*proj_w_), ad::concat({out.final_forward, out.final_backward})}});
  return EncoderOutput{std::move(out.states), end};
}

PrototypeBank::PrototypeBank(ad::ParameterCollection& params, const std::string& prefix,
                             Kind kind, int count, int width, std::mt19937_64& rng)
    : kind_(kind) {
  vectors_ = &params.add(prefix, width, count, ad::Init::kUniform, rng, 0.5);
}

namespace {

std::vector<ad::Expr> with_dropout(const std::vector<ad::Expr>& xs, double rate) {
  std::vector<ad::Expr> out;
  out.reserve(xs.size());
  for (auto x : xs) out.push_back(ad::dropout(x, rate));
  return out;
}

}  // namespace

SemanticEncoder::SemanticEncoder(ad::ParameterCollection& params, int input_dim,
                                 const EncoderConfig& cfg, std::mt19937_64& rng)
    : encoder_(params, "encoders/semantic", input_dim, cfg.hidden, rng),
      attn_(params, "encoders/semantic/attention", cfg.hidden, cfg.hidden, cfg.attention, rng),
      dropout_(cfg.dropout) {}

SemanticEncoder::Result SemanticEncoder::encode(ad::Graph& g,
                                                const std::vector<ad::Expr>& embedded) const {
  if (embedded.empty()) throw std::invalid_argument("semantic encoder needs a non-empty template");
  auto enc = encoder_.encode(g, with_dropout(embedded, dropout_));
  auto a = attend(g, enc.hidden_states, enc.h_end, attn_);
  return Result{a.pooled, a.weights};
}

ContextStyleEncoder::ContextStyleEncoder(ad::ParameterCollection& params, int input_dim,
                                         const EncoderConfig& cfg, bool use_prototypes,
                                         std::mt19937_64& rng)
    : turn_encoder_(params, "encoders/context/turn", input_dim, cfg.hidden, rng),
      turn_rnn_(params, "encoders/context/dialogue_rnn", cfg.hidden, cfg.hidden, rng),
      dropout_(cfg.dropout) {
  if (use_prototypes) {
    bank_.emplace(params, "encoders/context/prototypes", PrototypeBank::Kind::kContext,
                  cfg.prototypes, cfg.context_style, rng);
    attn_.emplace(params, "encoders/context/attention", cfg.context_style, cfg.hidden,
                  cfg.attention, rng);
  } else {
    proj_w_ = &params.add("encoders/context/style_proj/W", cfg.context_style, cfg.hidden,
                          ad::Init::kGlorot, rng);
    proj_b_ = &params.add("encoders/context/style_proj/b", cfg.context_style, 1, ad::Init::kZero, rng);
  }
}

ContextStyleEncoder::Result ContextStyleEncoder::from_context_vector(ad::Graph& g,
                                                                     ad::Expr s_context) const {
  if (bank_) {
    auto a = attend(g, bank_->matrix(g), s_context, *attn_);
    return Result{a.pooled, a.weights, s_context};
  }
  ad::Expr style = ad::tanh(ad::affine(g.param(*proj_b_), {{g.param(*proj_w_), s_context}}));
  return Result{style, {}, s_context};
}

ContextStyleEncoder::Result ContextStyleEncoder::encode(
    ad::Graph& g, const std::vector<std::vector<ad::Expr>>& turns) const {
  auto state = turn_rnn_.initial(g);
  for (const auto& turn : turns) {
    if (turn.empty()) continue;
    auto enc = turn_encoder_.encode(g, with_dropout(turn, dropout_));
    state = turn_rnn_.step(g, state, enc.h_end);
  }
  return from_context_vector(g, state.h);
}

NoiseEncoder::NoiseEncoder(ad::ParameterCollection& params, int input_dim,
                           const EncoderConfig& cfg, std::mt19937_64& rng)
    : encoder_(params, "encoders/noise", input_dim, cfg.hidden, rng),
      bank_(params, "encoders/noise/prototypes", PrototypeBank::Kind::kResponse, cfg.prototypes,
            cfg.response_noise, rng),
      attn_(params, "encoders/noise/attention", cfg.response_noise, cfg.hidden, cfg.attention, rng),
      dropout_(cfg.dropout) {}

NoiseEncoder::Result NoiseEncoder::from_response_vector(ad::Graph& g, ad::Expr s_response) const {
  auto a = attend(g, bank_.matrix(g), s_response, attn_);
  return Result{a.pooled, a.weights};
}

NoiseEncoder::Result NoiseEncoder::encode(ad::Graph& g,
                                          const std::vector<ad::Expr>& ground_truth) const {
  if (ground_truth.empty()) throw std::invalid_argument("noise encoder needs a ground truth");
  auto enc = encoder_.encode(g, with_dropout(ground_truth, dropout_));
  return from_response_vector(g, enc.h_end);
}

ad::Expr NoiseEncoder::from_weights(ad::Graph& g, const ad::Vector& weights) const {
  if (weights.size() != bank_.count()) throw std::invalid_argument("prototype weight count mismatch");
  return bank_.mix(g, g.input(weights));
}

}  // namespace p2net::encoders
