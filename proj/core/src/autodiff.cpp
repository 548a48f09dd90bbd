#include "p2net/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace p2net::ad {

Parameter::Parameter(std::string name, Matrix value)
    : name_(std::move(name)), value_(std::move(value)) {
  grad_ = Matrix::Zero(value_.rows(), value_.cols());
}

Parameter& ParameterCollection::add(const std::string& name, Eigen::Index rows,
                                    Eigen::Index cols, Init init,
                                    std::mt19937_64& rng, double scale) {
  Matrix m(rows, cols);
  switch (init) {
    case Init::kZero:
      m.setZero();
      break;
    case Init::kUniform: {
      std::uniform_real_distribution<double> u(-scale, scale);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
      break;
    }
    case Init::kGlorot: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
      break;
    }
    case Init::kNormal: {
      std::normal_distribution<double> n(0.0, scale);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
      break;
    }
  }
  return add(name, std::move(m));
}

Parameter& ParameterCollection::add(const std::string& name, Matrix value) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter* ParameterCollection::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterCollection::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParameterCollection::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterCollection::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterCollection::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value().size());
  return n;
}

void ParameterCollection::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double ParameterCollection::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p->grad().squaredNorm();
  return std::sqrt(sq);
}

void ParameterCollection::scale_grad(double factor) {
  for (auto& p : params_) p->grad() *= factor;
}

// ---------------------------------------------------------------------------

const Matrix& Expr::value() const { return graph->value(id); }

double Expr::scalar() const {
  const Matrix& v = value();
  assert(v.size() == 1);
  return v(0, 0);
}

Eigen::Index Expr::rows() const { return value().rows(); }
Eigen::Index Expr::cols() const { return value().cols(); }

Expr Graph::add_node(Matrix value, std::vector<int> args, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.args = std::move(args);
  n.backward = std::move(backward);
  for (int a : n.args) n.needs_grad = n.needs_grad || nodes_[a].needs_grad;
  nodes_.push_back(std::move(n));
  return Expr{this, static_cast<int>(nodes_.size()) - 1};
}

Expr Graph::input(Matrix value) { return add_node(std::move(value), {}, nullptr); }

Expr Graph::scalar_input(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return input(std::move(m));
}

Expr Graph::zeros(Eigen::Index rows, Eigen::Index cols) {
  return input(Matrix(Matrix::Zero(rows, cols)));
}

Expr Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Expr{this, it->second};
  Expr e = add_node(Matrix(), {}, [&p](Graph& g, int self) { p.grad() += g.grad(self); });
  nodes_[e.id].external = &p.value();
  nodes_[e.id].needs_grad = true;
  param_nodes_[&p] = e.id;
  return e;
}

Expr Graph::lookup(Parameter& table, int column) {
  if (column < 0 || column >= table.cols()) {
    throw std::out_of_range("embedding lookup out of range: " + table.name());
  }
  Expr e = add_node(table.value().col(column), {}, [&table, column](Graph& g, int self) {
    if (column == table.frozen_column()) return;
    table.grad().col(column) += g.grad(self);
  });
  nodes_[e.id].needs_grad = true;
  return e;
}

Matrix& Graph::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Expr loss) {
  if (loss.graph != this) throw std::invalid_argument("expression from another graph");
  if (value(loss.id).size() != 1) {
    throw std::invalid_argument("backward() needs a scalar expression");
  }
  for (auto& n : nodes_) n.has_grad = false;
  grad(loss.id)(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// ops

namespace {

Graph& graph_of(Expr a) {
  assert(a.valid());
  return *a.graph;
}

void check_same(Expr a, Expr b, const char* op) {
  if (a.graph != b.graph) throw std::invalid_argument(std::string(op) + ": graph mismatch");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Expr operator+(Expr a, Expr b) {
  check_same(a, b, "add");
  Graph& g = graph_of(a);
  return g.add_node(a.value() + b.value(), {a.id, b.id}, [](Graph& g, int self) {
    const auto& args = g.args(self);
    Matrix d = g.grad(self);
    if (g.needs_grad(args[0])) g.grad(args[0]) += d;
    if (g.needs_grad(args[1])) g.grad(args[1]) += d;
  });
}

Expr operator-(Expr a, Expr b) {
  check_same(a, b, "sub");
  Graph& g = graph_of(a);
  return g.add_node(a.value() - b.value(), {a.id, b.id}, [](Graph& g, int self) {
    const auto& args = g.args(self);
    Matrix d = g.grad(self);
    if (g.needs_grad(args[0])) g.grad(args[0]) += d;
    if (g.needs_grad(args[1])) g.grad(args[1]) -= d;
  });
}

Expr operator-(Expr a) { return -1.0 * a; }

Expr operator*(Expr a, Expr b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Graph& g = graph_of(a);
  return g.add_node(a.value() * b.value(), {a.id, b.id}, [](Graph& g, int self) {
    const auto& args = g.args(self);
    Matrix d = g.grad(self);
    if (g.needs_grad(args[0])) g.grad(args[0]).noalias() += d * g.value(args[1]).transpose();
    if (g.needs_grad(args[1])) g.grad(args[1]).noalias() += g.value(args[0]).transpose() * d;
  });
}

Expr operator*(double s, Expr a) {
  Graph& g = graph_of(a);
  return g.add_node(s * a.value(), {a.id}, [s](Graph& g, int self) {
    int a = g.args(self)[0];
    g.grad(a) += s * g.grad(self);
  });
}

Expr cmul(Expr a, Expr b) {
  check_same(a, b, "cmul");
  Graph& g = graph_of(a);
  return g.add_node(a.value().cwiseProduct(b.value()), {a.id, b.id},
                    [](Graph& g, int self) {
                      const auto& args = g.args(self);
                      Matrix d = g.grad(self);
                      if (g.needs_grad(args[0])) {
                        g.grad(args[0]) += d.cwiseProduct(g.value(args[1]));
                      }
                      if (g.needs_grad(args[1])) {
                        g.grad(args[1]) += d.cwiseProduct(g.value(args[0]));
                      }
                    });
}

Expr add_colwise(Expr m, Expr v) {
  if (v.cols() != 1 || v.rows() != m.rows()) {
    throw std::invalid_argument("add_colwise: shape mismatch");
  }
  Graph& g = graph_of(m);
  Matrix out = m.value().colwise() + v.value().col(0);
  return g.add_node(std::move(out), {m.id, v.id}, [](Graph& g, int self) {
    const auto& args = g.args(self);
    Matrix d = g.grad(self);
    if (g.needs_grad(args[0])) g.grad(args[0]) += d;
    if (g.needs_grad(args[1])) g.grad(args[1]) += d.rowwise().sum();
  });
}

Expr transpose(Expr a) {
  Graph& g = graph_of(a);
  return g.add_node(a.value().transpose(), {a.id}, [](Graph& g, int self) {
    int a = g.args(self)[0];
    g.grad(a) += g.grad(self).transpose();
  });
}

Expr dot(Expr a, Expr b) {
  check_same(a, b, "dot");
  Graph& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return g.add_node(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
    const auto& args = g.args(self);
    double d = g.grad(self)(0, 0);
    if (g.needs_grad(args[0])) g.grad(args[0]) += d * g.value(args[1]);
    if (g.needs_grad(args[1])) g.grad(args[1]) += d * g.value(args[0]);
  });
}

Expr affine(Expr bias, const std::vector<std::pair<Expr, Expr>>& terms) {
  Graph& g = graph_of(bias);
  Matrix out = bias.value();
  std::vector<int> args{bias.id};
  for (const auto& [w, x] : terms) {
    if (w.cols() != x.rows() || w.rows() != out.rows() || x.cols() != out.cols()) {
      throw std::invalid_argument("affine: shape mismatch");
    }
    out.noalias() += w.value() * x.value();
    args.push_back(w.id);
    args.push_back(x.id);
  }
  return g.add_node(std::move(out), std::move(args), [](Graph& g, int self) {
    const auto& args = g.args(self);
    Matrix d = g.grad(self);
    if (g.needs_grad(args[0])) g.grad(args[0]) += d;
    for (std::size_t i = 1; i + 1 < args.size(); i += 2) {
      int w = args[i];
      int x = args[i + 1];
      if (g.needs_grad(w)) g.grad(w).noalias() += d * g.value(x).transpose();
      if (g.needs_grad(x)) g.grad(x).noalias() += g.value(w).transpose() * d;
    }
  });
}

Expr sum(const std::vector<Expr>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum of empty list");
  Graph& g = graph_of(xs[0]);
  Matrix out = xs[0].value();
  std::vector<int> args{xs[0].id};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    check_same(xs[0], xs[i], "sum");
    out += xs[i].value();
    args.push_back(xs[i].id);
  }
  return g.add_node(std::move(out), std::move(args), [](Graph& g, int self) {
    Matrix d = g.grad(self);
    for (int a : g.args(self)) {
      if (g.needs_grad(a)) g.grad(a) += d;
    }
  });
}

Expr mean(const std::vector<Expr>& xs) {
  return (1.0 / static_cast<double>(xs.size())) * sum(xs);
}

Expr sum_elems(Expr a) {
  Graph& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.add_node(std::move(out), {a.id}, [](Graph& g, int self) {
    int a = g.args(self)[0];
    g.grad(a).array() += g.grad(self)(0, 0);
  });
}

Expr tanh(Expr a) {
  Graph& g = graph_of(a);
  return g.add_node(a.value().array().tanh().matrix(), {a.id}, [](Graph& g, int self) {
    int a = g.args(self)[0];
    const Matrix& y = g.value(self);
    g.grad(a).array() += g.grad(self).array() * (1.0 - y.array().square());
  });
}

Expr logistic(Expr a) {
  Graph& g = graph_of(a);
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return g.add_node(std::move(y), {a.id}, [](Graph& g, int self) {
    int a = g.args(self)[0];
    const Matrix& y = g.value(self);
    g.grad(a).array() += g.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

namespace {

void softmax_backward(Graph& g, int self) {
  int a = g.args(self)[0];
  const Matrix& y = g.value(self);
  const Matrix& d = g.grad(self);
  double inner = y.cwiseProduct(d).sum();
  g.grad(a).array() += y.array() * (d.array() - inner);
}

}  // namespace

Expr softmax(Expr a) {
  if (a.cols() != 1) throw std::invalid_argument("softmax expects a column vector");
  Graph& g = graph_of(a);
  const Matrix& x = a.value();
  double m = x.maxCoeff();
  Matrix y = (x.array() - m).exp().matrix();
  y /= y.sum();
  return g.add_node(std::move(y), {a.id}, softmax_backward);
}

Expr masked_softmax(Expr a, const std::vector<bool>& mask) {
  if (a.cols() != 1 || static_cast<Eigen::Index>(mask.size()) != a.rows()) {
    throw std::invalid_argument("masked_softmax: shape mismatch");
  }
  Graph& g = graph_of(a);
  const Matrix& x = a.value();
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (mask[i]) m = std::max(m, x(i, 0));
  }
  Matrix y = Matrix::Zero(x.rows(), 1);
  if (std::isfinite(m)) {
    double z = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (mask[i]) {
        y(i, 0) = std::exp(x(i, 0) - m);
        z += y(i, 0);
      }
    }
    y /= z;
  }
  // Masked entries have y = 0, so the shared softmax Jacobian leaves them untouched.
  return g.add_node(std::move(y), {a.id}, softmax_backward);
}

Expr log_clamped(Expr a, double eps) {
  Graph& g = graph_of(a);
  Matrix y = a.value().array().max(eps).log().matrix();
  return g.add_node(std::move(y), {a.id}, [eps](Graph& g, int self) {
    int a = g.args(self)[0];
    const Matrix& x = g.value(a);
    const Matrix& d = g.grad(self);
    Matrix& ga = g.grad(a);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x.data()[i] > eps) ga.data()[i] += d.data()[i] / x.data()[i];
    }
  });
}

Expr concat(const std::vector<Expr>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat of empty list");
  Graph& g = graph_of(xs[0]);
  Eigen::Index rows = 0;
  std::vector<int> args;
  for (const auto& x : xs) {
    if (x.cols() != 1) throw std::invalid_argument("concat expects column vectors");
    rows += x.rows();
    args.push_back(x.id);
  }
  Matrix out(rows, 1);
  Eigen::Index off = 0;
  for (const auto& x : xs) {
    out.block(off, 0, x.rows(), 1) = x.value();
    off += x.rows();
  }
  return g.add_node(std::move(out), std::move(args), [](Graph& g, int self) {
    Eigen::Index off = 0;
    Matrix d = g.grad(self);
    for (int a : g.args(self)) {
      Eigen::Index r = g.value(a).rows();
      if (g.needs_grad(a)) g.grad(a) += d.block(off, 0, r, 1);
      off += r;
    }
  });
}

Expr concat_cols(const std::vector<Expr>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols of empty list");
  Graph& g = graph_of(xs[0]);
  const Eigen::Index rows = xs[0].rows();
  std::vector<int> args;
  for (const auto& x : xs) {
    if (x.cols() != 1 || x.rows() != rows) {
      throw std::invalid_argument("concat_cols expects equal-height columns");
    }
    args.push_back(x.id);
  }
  Matrix out(rows, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) out.col(i) = xs[i].value().col(0);
  return g.add_node(std::move(out), std::move(args), [](Graph& g, int self) {
    Matrix d = g.grad(self);
    const auto& args = g.args(self);
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (g.needs_grad(args[i])) g.grad(args[i]) += d.col(i);
    }
  });
}

Expr slice_rows(Expr a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows");
  Graph& g = graph_of(a);
  return g.add_node(a.value().middleRows(start, count), {a.id},
                    [start, count](Graph& g, int self) {
                      int a = g.args(self)[0];
                      g.grad(a).middleRows(start, count) += g.grad(self);
                    });
}

Expr column(Expr m, Eigen::Index c) {
  if (c < 0 || c >= m.cols()) throw std::out_of_range("column");
  Graph& g = graph_of(m);
  return g.add_node(m.value().col(c), {m.id}, [c](Graph& g, int self) {
    int a = g.args(self)[0];
    g.grad(a).col(c) += g.grad(self);
  });
}

Expr pick(Expr a, Eigen::Index row) {
  if (row < 0 || row >= a.rows()) throw std::out_of_range("pick");
  Graph& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value()(row, 0);
  return g.add_node(std::move(out), {a.id}, [row](Graph& g, int self) {
    int a = g.args(self)[0];
    g.grad(a)(row, 0) += g.grad(self)(0, 0);
  });
}

Expr dropout(Expr a, double rate) {
  Graph& g = graph_of(a);
  if (!g.training() || rate <= 0.0) return a;
  if (g.rng() == nullptr) throw std::logic_error("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(*g.rng()) ? scale : 0.0;
  }
  return cmul(a, g.input(std::move(mask)));
}

}  // namespace p2net::ad
