// The three encoders producing the StyleBundle: template semantics, context
// style (hierarchical, through context prototypes) and paraphrasing noise
// (ground truth through response prototypes).
#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "p2net/autodiff.hpp"
#include "p2net/rnn.hpp"

namespace p2net::encoders {

// score_t = v . tanh(W_h key_t + W_c query + b)
class AttentionParams {
 public:
  AttentionParams(ad::ParameterCollection& params, const std::string& prefix, int key_dim,
                  int query_dim, int attn_dim, std::mt19937_64& rng);

  ad::Parameter& w_h() const { return *w_h_; }
  ad::Parameter& w_c() const { return *w_c_; }
  ad::Parameter& b() const { return *b_; }
  ad::Parameter& v() const { return *v_; }
  std::vector<const ad::Parameter*> parameters() const { return {w_h_, w_c_, b_, v_}; }

 private:
  ad::Parameter* w_h_;
  ad::Parameter* w_c_;
  ad::Parameter* b_;
  ad::Parameter* v_;
};

struct Attention {
  ad::Expr weights;  // T x 1 simplex
  ad::Expr pooled;   // key_dim x 1
};

ad::Expr attention_scores(ad::Graph& g, ad::Expr keys, ad::Expr query, const AttentionParams& p);
// keys is key_dim x T. With a mask, masked keys get exactly zero weight.
Attention attend(ad::Graph& g, ad::Expr keys, ad::Expr query, const AttentionParams& p,
                 const std::vector<bool>* mask = nullptr);
Attention attend(ad::Graph& g, const std::vector<ad::Expr>& keys, ad::Expr query,
                 const AttentionParams& p);

struct EncoderOutput {
  std::vector<ad::Expr> hidden_states;
  ad::Expr h_end;  // projection of both directions' final states
};

class SequenceEncoder {
 public:
  SequenceEncoder(ad::ParameterCollection& params, const std::string& prefix, int input_dim,
                  int hidden_dim, std::mt19937_64& rng);
  EncoderOutput encode(ad::Graph& g, const std::vector<ad::Expr>& inputs) const;
  int hidden_dim() const { return lstm_.output_dim(); }

 private:
  rnn::BiLstm lstm_;
  ad::Parameter* proj_w_;
  ad::Parameter* proj_b_;
};

class PrototypeBank {
 public:
  enum class Kind { kContext, kResponse };
  PrototypeBank(ad::ParameterCollection& params, const std::string& prefix, Kind kind, int count,
                int width, std::mt19937_64& rng);

  ad::Expr matrix(ad::Graph& g) const { return g.param(*vectors_); }  // width x K
  ad::Expr mix(ad::Graph& g, ad::Expr weights) const { return matrix(g) * weights; }
  int count() const { return static_cast<int>(vectors_->cols()); }
  int width() const { return static_cast<int>(vectors_->rows()); }
  Kind kind() const { return kind_; }
  ad::Parameter& parameter() const { return *vectors_; }

 private:
  Kind kind_;
  ad::Parameter* vectors_;
};

struct EncoderConfig {
  int hidden = 512;
  int attention = 512;
  int context_style = 256;
  int response_noise = 64;
  int prototypes = 4;
  double dropout = 0.2;
};

class SemanticEncoder {
 public:
  struct Result {
    ad::Expr semantics;
    ad::Expr weights;
  };
  SemanticEncoder(ad::ParameterCollection& params, int input_dim, const EncoderConfig& cfg,
                  std::mt19937_64& rng);
  Result encode(ad::Graph& g, const std::vector<ad::Expr>& embedded) const;
  const AttentionParams& attention() const { return attn_; }

 private:
  SequenceEncoder encoder_;
  AttentionParams attn_;
  double dropout_;
};

class ContextStyleEncoder {
 public:
  struct Result {
    ad::Expr style;       // context_style width
    ad::Expr weights;     // prototype weights (absent without prototypes)
    ad::Expr s_context;   // turn-level RNN final state
  };
  ContextStyleEncoder(ad::ParameterCollection& params, int input_dim, const EncoderConfig& cfg,
                      bool use_prototypes, std::mt19937_64& rng);
  // turns: embedded utterances, oldest first; may be empty.
  Result encode(ad::Graph& g, const std::vector<std::vector<ad::Expr>>& turns) const;
  // Prototype attention alone, for a given s_context.
  Result from_context_vector(ad::Graph& g, ad::Expr s_context) const;
  bool uses_prototypes() const { return bank_.has_value(); }
  const AttentionParams* attention() const { return attn_ ? &*attn_ : nullptr; }
  const PrototypeBank* bank() const { return bank_ ? &*bank_ : nullptr; }

 private:
  SequenceEncoder turn_encoder_;
  rnn::LstmCell turn_rnn_;
  std::optional<PrototypeBank> bank_;
  std::optional<AttentionParams> attn_;
  ad::Parameter* proj_w_ = nullptr;  // used without prototypes
  ad::Parameter* proj_b_ = nullptr;
  double dropout_;
};

class NoiseEncoder {
 public:
  struct Result {
    ad::Expr noise;
    ad::Expr weights;
  };
  NoiseEncoder(ad::ParameterCollection& params, int input_dim, const EncoderConfig& cfg,
               std::mt19937_64& rng);
  Result encode(ad::Graph& g, const std::vector<ad::Expr>& ground_truth) const;
  Result from_response_vector(ad::Graph& g, ad::Expr s_response) const;
  // Inference: externally chosen prototype weights.
  ad::Expr from_weights(ad::Graph& g, const ad::Vector& weights) const;
  const AttentionParams& attention() const { return attn_; }
  const PrototypeBank& bank() const { return bank_; }

 private:
  SequenceEncoder encoder_;
  PrototypeBank bank_;
  AttentionParams attn_;
  double dropout_;
};

struct StyleBundle {
  ad::Expr semantics;
  ad::Expr context_style;
  ad::Expr response_noise;
  ad::Vector noise_weights;
  // Exported for analysis; empty when the producing encoder is disabled.
  ad::Vector semantic_attention;
  ad::Vector context_prototype_weights;
};

}  // namespace p2net::encoders
