#include "p2net/rnn.hpp"

#include <stdexcept>

#include "p2net/errors.hpp"

namespace p2net::rnn {

LstmCell::LstmCell(ad::ParameterCollection& params, const std::string& prefix, int input_dim,
                   int hidden_dim, std::mt19937_64& rng)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  w_x_ = &params.add(prefix + "/Wx", 4 * hidden_dim, input_dim, ad::Init::kGlorot, rng);
  w_h_ = &params.add(prefix + "/Wh", 4 * hidden_dim, hidden_dim, ad::Init::kGlorot, rng);
  b_ = &params.add(prefix + "/b", 4 * hidden_dim, 1, ad::Init::kZero, rng);
  b_->value().middleRows(hidden_dim, hidden_dim).setOnes();  // forget-gate bias
}

LstmCell::State LstmCell::initial(ad::Graph& g) const {
  return State{g.zeros(hidden_dim_), g.zeros(hidden_dim_)};
}

LstmCell::State LstmCell::initial(ad::Graph& g, ad::Expr h0) const {
  return State{h0, g.zeros(hidden_dim_)};
}

LstmCell::State LstmCell::step(ad::Graph& g, const State& prev, ad::Expr x) const {
  if (x.rows() != input_dim_) throw std::invalid_argument("LSTM input width mismatch");
  const int h = hidden_dim_;
  ad::Expr gates =
      ad::affine(g.param(*b_), {{g.param(*w_x_), x}, {g.param(*w_h_), prev.h}});
  ad::Expr i = ad::logistic(ad::slice_rows(gates, 0, h));
  ad::Expr f = ad::logistic(ad::slice_rows(gates, h, h));
  ad::Expr o = ad::logistic(ad::slice_rows(gates, 2 * h, h));
  ad::Expr cand = ad::tanh(ad::slice_rows(gates, 3 * h, h));
  ad::Expr c = ad::cmul(f, prev.c) + ad::cmul(i, cand);
  return State{ad::cmul(o, ad::tanh(c)), c};
}

BiLstm::BiLstm(ad::ParameterCollection& params, const std::string& prefix, int input_dim,
               int output_dim, std::mt19937_64& rng)
    : forward_(params, prefix + "/fwd", input_dim, output_dim / 2, rng),
      backward_(params, prefix + "/bwd", input_dim, output_dim / 2, rng) {
  if (output_dim % 2 != 0) throw ConfigError("Bi-LSTM output width must be even");
}

BiLstm::Output BiLstm::run(ad::Graph& g, const std::vector<ad::Expr>& inputs) const {
  if (inputs.empty()) throw std::invalid_argument("Bi-LSTM over an empty sequence");
  const std::size_t n = inputs.size();
  std::vector<ad::Expr> fwd(n), bwd(n);
  auto s = forward_.initial(g);
  for (std::size_t t = 0; t < n; ++t) {
    s = forward_.step(g, s, inputs[t]);
    fwd[t] = s.h;
  }
  auto r = backward_.initial(g);
  for (std::size_t t = n; t-- > 0;) {
    r = backward_.step(g, r, inputs[t]);
    bwd[t] = r.h;
  }
  Output out;
  out.states.reserve(n);
  for (std::size_t t = 0; t < n; ++t) out.states.push_back(ad::concat({fwd[t], bwd[t]}));
  out.final_forward = fwd[n - 1];
  out.final_backward = bwd[0];
  return out;
}

}  // namespace p2net::rnn
