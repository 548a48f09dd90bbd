// Small dynamic-graph reverse-mode automatic differentiation over Eigen.
//
// A Graph records every operation applied to Expr handles; backward() walks
// the tape in reverse and accumulates gradients into the Parameters that were
// read through param()/lookup(). Everything is double precision so that the
// finite-difference checks in the test suite are meaningful.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace p2net::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Init { kZero, kUniform, kGlorot, kNormal };

class Parameter {
 public:
  Parameter(std::string name, Matrix value);

  const std::string& name() const { return name_; }
  Matrix& value() { return value_; }
  const Matrix& value() const { return value_; }
  Matrix& grad() { return grad_; }
  const Matrix& grad() const { return grad_; }
  Eigen::Index rows() const { return value_.rows(); }
  Eigen::Index cols() const { return value_.cols(); }

  // Column that never receives gradient (padding row of an embedding table).
  void freeze_column(int column) { frozen_column_ = column; }
  int frozen_column() const { return frozen_column_; }

  void zero_grad() { grad_.setZero(); }

 private:
  std::string name_;
  Matrix value_;
  Matrix grad_;
  int frozen_column_ = -1;
};

// Owns parameters with stable addresses, keyed by module path ("decoder/lstm/W").
class ParameterCollection {
 public:
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 Init init, std::mt19937_64& rng, double scale = 0.1);
  Parameter& add(const std::string& name, Matrix value);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

struct Expr {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Dropout and other stochastic ops are only active in training mode.
  void set_training(bool training, std::mt19937_64* rng = nullptr) {
    training_ = training;
    rng_ = rng;
  }
  bool training() const { return training_; }
  std::mt19937_64* rng() { return rng_; }

  Expr input(Matrix value);
  Expr input(const Vector& value) { return input(Matrix(value)); }
  Expr scalar_input(double value);
  Expr zeros(Eigen::Index rows, Eigen::Index cols = 1);
  Expr param(Parameter& p);
  Expr lookup(Parameter& table, int column);

  // Appends an op node. Backward receives the graph and the node id.
  Expr add_node(Matrix value, std::vector<int> args, Backward backward);

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  Matrix& grad(int id);
  const std::vector<int>& args(int id) const { return nodes_[id].args; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  void backward(Expr loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;  // parameter nodes alias the parameter value
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<int> args;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool training_ = false;
  std::mt19937_64* rng_ = nullptr;
};

// Elementwise / linear algebra.
Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator-(Expr a);
Expr operator*(Expr a, Expr b);  // matrix product
Expr operator*(double s, Expr a);
Expr cmul(Expr a, Expr b);
Expr add_colwise(Expr m, Expr v);  // adds column vector v to every column of m
Expr transpose(Expr a);
Expr dot(Expr a, Expr b);
Expr affine(Expr bias, const std::vector<std::pair<Expr, Expr>>& terms);
Expr sum(const std::vector<Expr>& xs);
Expr mean(const std::vector<Expr>& xs);
Expr sum_elems(Expr a);

// Nonlinearities.
Expr tanh(Expr a);
Expr logistic(Expr a);
Expr softmax(Expr a);  // over a column vector
// Softmax restricted to entries where mask is true; masked entries are exactly 0.
Expr masked_softmax(Expr a, const std::vector<bool>& mask);
Expr log_clamped(Expr a, double eps);

// Structure.
Expr concat(const std::vector<Expr>& xs);       // stacks column vectors
Expr concat_cols(const std::vector<Expr>& xs);  // [x_1 x_2 ... x_T]
Expr slice_rows(Expr a, Eigen::Index start, Eigen::Index count);
Expr column(Expr m, Eigen::Index c);
Expr pick(Expr a, Eigen::Index row);  // scalar at a(row, 0)

Expr dropout(Expr a, double rate);

}  // namespace p2net::ad
