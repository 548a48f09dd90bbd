// Pointer-style decoder: one LSTM layer, a generate-vs-slot gate p_gen, slot
// attention p_slot over the still-available slots, and a word distribution
// p_word conditioned on the attended slot summary.
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "p2net/autodiff.hpp"
#include "p2net/encoders.hpp"
#include "p2net/rnn.hpp"

namespace p2net::decoder {

struct DecoderConfig {
  int hidden = 512;
  int attention = 512;
  double delta = 0.5;
  int max_length = 60;
  double dropout = 0.2;
};

// Available/consumed per input slot. Consumption is permanent.
class SlotMask {
 public:
  SlotMask() = default;
  explicit SlotMask(std::size_t n) : available_(n, true) {}

  std::size_t size() const { return available_.size(); }
  bool available(std::size_t i) const { return available_.at(i); }
  bool any_available() const;
  std::size_t num_available() const;
  void consume(std::size_t i);
  const std::vector<bool>& bits() const { return available_; }

 private:
  std::vector<bool> available_;
};

struct DecodedToken {
  bool is_slot = false;
  int index = 0;  // vocabulary id for words, slot index for slots

  static DecodedToken Word(int id) { return {false, id}; }
  static DecodedToken Slot(int i) { return {true, i}; }
  bool operator==(const DecodedToken&) const = default;
};

struct DecoderState {
  rnn::LstmCell::State lstm;
  int step = 0;
  SlotMask mask;
  std::vector<DecodedToken> emitted;
};

struct StepExprs {
  ad::Expr p_gen;   // 1x1
  ad::Expr p_slot;  // num_slots x 1, invalid when no slot is available
  ad::Expr p_word;  // vocab x 1
};

struct DecodeStepOutput {
  double p_gen = 0.0;
  ad::Vector p_slot;  // full length; consumed slots hold exactly 0
  ad::Vector p_word;
};

DecodeStepOutput values(const StepExprs& step, std::size_t num_slots);

struct GenGateParams {
  ad::Parameter* w_h;
  ad::Parameter* w_s;
  ad::Parameter* w_c;
  ad::Parameter* w_gt;
  ad::Parameter* b;
};

enum class SelectMode { kGreedy, kSample };

// Word branch when p_gen > delta or nothing is left to copy; otherwise the
// argmax (or a draw) from p_slot. Does not mutate the mask.
DecodedToken select_token(const DecodeStepOutput& out, const SlotMask& mask, double delta,
                          SelectMode mode, std::mt19937_64* rng);

struct TraceStep {
  double p_gen = 0.0;
  bool slot_branch = false;
  DecodedToken token;
  std::vector<bool> mask_before;
};

struct GenerationResult {
  std::vector<DecodedToken> tokens;  // includes the end marker when emitted
  bool ended = false;
  bool semantic_failure = false;  // unconsumed slots or no end marker
  std::vector<TraceStep> trace;
};

struct SlotInputs {
  std::vector<ad::Expr> embeddings;  // model width each
  ad::Expr matrix;                   // d_model x n, invalid when n == 0
  std::size_t size() const { return embeddings.size(); }
};

SlotInputs make_slot_inputs(const std::vector<ad::Expr>& embeddings);

using TokenEmbedFn = std::function<ad::Expr(const DecodedToken&)>;
using NoiseAtFn = std::function<ad::Expr(int step)>;

class Decoder {
 public:
  Decoder(ad::ParameterCollection& params, int input_dim, int vocab_size, int semantics_dim,
          int context_style_dim, int noise_dim, const DecoderConfig& cfg, std::mt19937_64& rng);

  DecoderState init_state(ad::Graph& g, const encoders::StyleBundle& bundle,
                          std::size_t num_slots) const;

  // Advances state on prev_input and produces the step distributions. `noise`
  // is the paraphrasing-noise vector in effect at this step.
  StepExprs step(ad::Graph& g, DecoderState& state, ad::Expr prev_input,
                 const encoders::StyleBundle& bundle, ad::Expr noise,
                 const SlotInputs& slots) const;

  GenerationResult generate(ad::Graph& g, const encoders::StyleBundle& bundle,
                            const SlotInputs& slots, const TokenEmbedFn& embed, double delta,
                            int max_length, SelectMode mode, std::mt19937_64* rng) const;

  // One StepExprs per ground-truth position. use_ground_truth_input[t] decides
  // whether input t+1 is the ground-truth token t or the model's own choice.
  // The mask always follows the ground truth.
  std::vector<StepExprs> teacher_forced_pass(ad::Graph& g, const encoders::StyleBundle& bundle,
                                             const SlotInputs& slots,
                                             const std::vector<DecodedToken>& ground_truth,
                                             const TokenEmbedFn& embed, const NoiseAtFn& noise_at,
                                             const std::vector<bool>& use_ground_truth_input,
                                             std::vector<std::vector<bool>>* mask_trace = nullptr) const;

  const GenGateParams& gate() const { return gate_; }
  const encoders::AttentionParams& slot_attention() const { return slot_attn_; }
  int eos_id() const { return eos_id_; }
  int sos_id() const { return sos_id_; }
  void set_markers(int sos_id, int eos_id) {
    sos_id_ = sos_id;
    eos_id_ = eos_id;
  }
  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  int input_dim_;
  int noise_dim_;
  int sos_id_ = 2;
  int eos_id_ = 3;
  rnn::LstmCell lstm_;
  ad::Parameter* init_w_;
  ad::Parameter* init_b_;
  encoders::AttentionParams slot_attn_;
  ad::Parameter* out_w_;
  ad::Parameter* out_b_;
  GenGateParams gate_;
};

}  // namespace p2net::decoder
