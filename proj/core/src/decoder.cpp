#include "p2net/decoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "p2net/errors.hpp"

namespace p2net::decoder {

bool SlotMask::any_available() const {
  return std::any_of(available_.begin(), available_.end(), [](bool b) { return b; });
}

std::size_t SlotMask::num_available() const {
  return static_cast<std::size_t>(std::count(available_.begin(), available_.end(), true));
}

void SlotMask::consume(std::size_t i) {
  if (!available_.at(i)) throw std::logic_error("slot " + std::to_string(i) + " already consumed");
  available_[i] = false;
}

DecodeStepOutput values(const StepExprs& step, std::size_t num_slots) {
  DecodeStepOutput out;
  out.p_gen = step.p_gen.scalar();
  out.p_word = step.p_word.value().col(0);
  out.p_slot = step.p_slot.valid() ? ad::Vector(step.p_slot.value().col(0))
                                   : ad::Vector::Zero(static_cast<Eigen::Index>(num_slots));
  return out;
}

DecodedToken select_token(const DecodeStepOutput& out, const SlotMask& mask, double delta,
                          SelectMode mode, std::mt19937_64* rng) {
  if (mode == SelectMode::kSample && rng == nullptr) {
    throw std::invalid_argument("sampling selection needs an rng");
  }
  auto draw = [&](const ad::Vector& p, const std::vector<bool>* allowed) {
    if (mode == SelectMode::kGreedy) {
      Eigen::Index best = -1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (allowed != nullptr && !(*allowed)[i]) continue;
        if (best < 0 || p(i) > p(best)) best = i;
      }
      return static_cast<int>(best);
    }
    std::vector<double> w(p.data(), p.data() + p.size());
    if (allowed != nullptr) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(*allowed)[i]) w[i] = 0.0;
      }
    }
    std::discrete_distribution<int> d(w.begin(), w.end());
    return d(*rng);
  };
  if (out.p_gen > delta || !mask.any_available()) {
    return DecodedToken::Word(draw(out.p_word, nullptr));
  }
  return DecodedToken::Slot(draw(out.p_slot, &mask.bits()));
}

SlotInputs make_slot_inputs(const std::vector<ad::Expr>& embeddings) {
  SlotInputs s;
  s.embeddings = embeddings;
  if (!embeddings.empty()) s.matrix = ad::concat_cols(embeddings);
  return s;
}

Decoder::Decoder(ad::ParameterCollection& params, int input_dim, int vocab_size,
                 int semantics_dim, int context_style_dim, int noise_dim,
                 const DecoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      input_dim_(input_dim),
      noise_dim_(noise_dim),
      lstm_(params, "decoder/lstm", input_dim + noise_dim, cfg.hidden, rng),
      slot_attn_(params, "decoder/slot_attention", input_dim, cfg.hidden, cfg.attention, rng) {
  if (cfg.delta <= 0.0 || cfg.delta >= 1.0) throw ConfigError("gate threshold must lie in (0,1)");
  init_w_ = &params.add("decoder/init/W", cfg.hidden, context_style_dim + semantics_dim,
                        ad::Init::kGlorot, rng);
  init_b_ = &params.add("decoder/init/b", cfg.hidden, 1, ad::Init::kZero, rng);
  out_w_ = &params.add("decoder/output/W", vocab_size, cfg.hidden + input_dim + semantics_dim,
                       ad::Init::kGlorot, rng);
  out_b_ = &params.add("decoder/output/b", vocab_size, 1, ad::Init::kZero, rng);
  gate_.w_h = &params.add("decoder/gate/w_h", 1, cfg.hidden, ad::Init::kGlorot, rng);
  gate_.w_s = &params.add("decoder/gate/w_s", 1, semantics_dim, ad::Init::kGlorot, rng);
  gate_.w_c = &params.add("decoder/gate/w_c", 1, context_style_dim, ad::Init::kGlorot, rng);
  gate_.w_gt = &params.add("decoder/gate/w_gt", 1, noise_dim, ad::Init::kGlorot, rng);
  gate_.b = &params.add("decoder/gate/b", 1, 1, ad::Init::kZero, rng);
}

DecoderState Decoder::init_state(ad::Graph& g, const encoders::StyleBundle& bundle,
                                 std::size_t num_slots) const {
  ad::Expr h0 = ad::tanh(ad::affine(
      g.param(*init_b_),
      {{g.param(*init_w_), ad::concat({bundle.context_style, bundle.semantics})}}));
  DecoderState s;
  s.lstm = lstm_.initial(g, h0);
  s.mask = SlotMask(num_slots);
  return s;
}

StepExprs Decoder::step(ad::Graph& g, DecoderState& state, ad::Expr prev_input,
                        const encoders::StyleBundle& bundle, ad::Expr noise,
                        const SlotInputs& slots) const {
  if (slots.size() != state.mask.size()) throw std::invalid_argument("slot/mask size mismatch");
  ad::Expr x = ad::dropout(ad::concat({prev_input, noise}), cfg_.dropout);
  state.lstm = lstm_.step(g, state.lstm, x);
  ++state.step;
  ad::Expr h = state.lstm.h;

  StepExprs out;
  ad::Expr slot_context;
  if (state.mask.any_available()) {
    auto a = encoders::attend(g, slots.matrix, h, slot_attn_, &state.mask.bits());
    out.p_slot = a.weights;
    slot_context = a.pooled;
  } else {
    slot_context = g.zeros(input_dim_);
  }
  ad::Expr features = ad::dropout(ad::concat({h, slot_context, bundle.semantics}), cfg_.dropout);
  out.p_word = ad::softmax(ad::affine(g.param(*out_b_), {{g.param(*out_w_), features}}));
  out.p_gen = ad::logistic(ad::affine(g.param(*gate_.b),
                                      {{g.param(*gate_.w_h), h},
                                       {g.param(*gate_.w_s), bundle.semantics},
                                       {g.param(*gate_.w_c), bundle.context_style},
                                       {g.param(*gate_.w_gt), noise}}));
  return out;
}

GenerationResult Decoder::generate(ad::Graph& g, const encoders::StyleBundle& bundle,
                                   const SlotInputs& slots, const TokenEmbedFn& embed,
                                   double delta, int max_length, SelectMode mode,
                                   std::mt19937_64* rng) const {
  GenerationResult result;
  DecoderState state = init_state(g, bundle, slots.size());
  DecodedToken prev = DecodedToken::Word(sos_id_);
  for (int t = 0; t < max_length; ++t) {
    TraceStep trace;
    trace.mask_before = state.mask.bits();
    StepExprs step_exprs = step(g, state, embed(prev), bundle, bundle.response_noise, slots);
    DecodeStepOutput out = values(step_exprs, slots.size());
    DecodedToken tok = select_token(out, state.mask, delta, mode, rng);
    if (tok.is_slot) state.mask.consume(static_cast<std::size_t>(tok.index));
    trace.p_gen = out.p_gen;
    trace.slot_branch = tok.is_slot;
    trace.token = tok;
    result.trace.push_back(std::move(trace));
    result.tokens.push_back(tok);
    state.emitted.push_back(tok);
    if (!tok.is_slot && tok.index == eos_id_) {
      result.ended = true;
      break;
    }
    prev = tok;
  }
  result.semantic_failure = !result.ended || state.mask.any_available();
  return result;
}

std::vector<StepExprs> Decoder::teacher_forced_pass(
    ad::Graph& g, const encoders::StyleBundle& bundle, const SlotInputs& slots,
    const std::vector<DecodedToken>& ground_truth, const TokenEmbedFn& embed,
    const NoiseAtFn& noise_at, const std::vector<bool>& use_ground_truth_input,
    std::vector<std::vector<bool>>* mask_trace) const {
  DecoderState state = init_state(g, bundle, slots.size());
  std::vector<StepExprs> out;
  out.reserve(ground_truth.size());
  DecodedToken prev = DecodedToken::Word(sos_id_);
  for (std::size_t t = 0; t < ground_truth.size(); ++t) {
    if (mask_trace != nullptr) mask_trace->push_back(state.mask.bits());
    StepExprs s = step(g, state, embed(prev), bundle, noise_at(static_cast<int>(t)), slots);
    out.push_back(s);
    const DecodedToken& gt = ground_truth[t];
    const bool forced = t >= use_ground_truth_input.size() || use_ground_truth_input[t];
    DecodedToken next = gt;
    if (!forced) {
      next = select_token(values(s, slots.size()), state.mask, cfg_.delta, SelectMode::kGreedy, nullptr);
    }
    if (gt.is_slot) {
      if (gt.index < 0 || static_cast<std::size_t>(gt.index) >= slots.size() ||
          !state.mask.available(static_cast<std::size_t>(gt.index))) {
        throw DataError("ground truth references an unavailable slot");
      }
      state.mask.consume(static_cast<std::size_t>(gt.index));
    }
    prev = next;
  }
  return out;
}

}  // namespace p2net::decoder
