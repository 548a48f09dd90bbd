#pragma once

#include <random>
#include <string>
#include <vector>

#include "p2net/autodiff.hpp"

namespace p2net::rnn {

// Single-layer LSTM cell; gates stacked as [input; forget; output; candidate].
class LstmCell {
 public:
  struct State {
    ad::Expr h;
    ad::Expr c;
  };

  LstmCell(ad::ParameterCollection& params, const std::string& prefix, int input_dim,
           int hidden_dim, std::mt19937_64& rng);

  State initial(ad::Graph& g) const;
  State initial(ad::Graph& g, ad::Expr h0) const;  // c0 = 0
  State step(ad::Graph& g, const State& prev, ad::Expr x) const;

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

 private:
  int input_dim_;
  int hidden_dim_;
  ad::Parameter* w_x_;
  ad::Parameter* w_h_;
  ad::Parameter* b_;
};

// Bidirectional LSTM; per-step outputs are [forward_t; backward_t].
class BiLstm {
 public:
  struct Output {
    std::vector<ad::Expr> states;
    ad::Expr final_forward;
    ad::Expr final_backward;
  };

  BiLstm(ad::ParameterCollection& params, const std::string& prefix, int input_dim,
         int output_dim, std::mt19937_64& rng);

  Output run(ad::Graph& g, const std::vector<ad::Expr>& inputs) const;
  int output_dim() const { return 2 * forward_.hidden_dim(); }

 private:
  LstmCell forward_;
  LstmCell backward_;
};

}  // namespace p2net::rnn
