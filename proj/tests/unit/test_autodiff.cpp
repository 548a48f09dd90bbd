#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "p2net/autodiff.hpp"
#include "test_util.hpp"

using namespace p2net;
using ad::Expr;
using ad::Graph;

namespace {

struct Params {
  ad::ParameterCollection pc;
  std::mt19937_64 rng{5};
  ad::Parameter& add(const std::string& n, int r, int c) {
    return pc.add(n, r, c, ad::Init::kNormal, rng, 0.7);
  }
};

// Reduces any expression to a scalar with non-uniform weights so that every
// output entry matters differently.
Expr reduce(Graph& g, Expr e) {
  ad::Matrix w(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
  return ad::sum_elems(ad::cmul(e, g.input(w)));
}

void expect_grad(Params& p, const std::function<Expr(Graph&)>& f) {
  auto r = fixtures::grad_check(p.pc, {""}, f, 64);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel, 1e-6) << "worst " << r.worst;
}

}  // namespace

TEST(Autodiff, ArithmeticGradients) {
  Params p;
  auto& a = p.add("a", 3, 2);
  auto& b = p.add("b", 3, 2);
  auto& m = p.add("m", 4, 3);
  auto& v = p.add("v", 3, 1);
  expect_grad(p, [&](Graph& g) {
    Expr x = g.param(a) + g.param(b);
    Expr y = g.param(a) - 2.0 * g.param(b);
    Expr z = -ad::cmul(x, y);
    Expr w = g.param(m) * z;  // 4x2
    Expr t = ad::transpose(w) * g.param(m);  // 2x3
    return reduce(g, t) + reduce(g, ad::add_colwise(g.param(a), g.param(v)));
  });
}

TEST(Autodiff, ReductionAndStructureGradients) {
  Params p;
  auto& a = p.add("a", 4, 1);
  auto& b = p.add("b", 4, 1);
  auto& c = p.add("c", 2, 1);
  auto& m = p.add("m", 3, 4);
  expect_grad(p, [&](Graph& g) {
    Expr d = ad::dot(g.param(a), g.param(b));
    Expr s = ad::sum({g.param(a), g.param(b), g.param(a)});
    Expr mu = ad::mean({g.param(a), g.param(b)});
    Expr cat = ad::concat({g.param(a), g.param(c)});
    Expr cols = ad::concat_cols({g.param(a), g.param(b), mu});
    Expr sl = ad::slice_rows(cat, 2, 3);
    Expr col = ad::column(cols, 1);
    Expr af = ad::affine(g.param(c), {{ad::slice_rows(g.param(m), 0, 2), g.param(a)}});
    return d + reduce(g, s) + reduce(g, sl) + reduce(g, col) + ad::pick(af, 1) +
           ad::sum_elems(cols);
  });
}

TEST(Autodiff, NonlinearityGradients) {
  Params p;
  auto& a = p.add("a", 5, 1);
  auto& b = p.add("b", 5, 1);
  std::vector<bool> mask{true, false, true, true, false};
  expect_grad(p, [&](Graph& g) {
    Expr sm = ad::softmax(g.param(a));
    Expr msm = ad::masked_softmax(g.param(b), mask);
    Expr lg = ad::log_clamped(ad::logistic(g.param(a)), 1e-7);
    return reduce(g, ad::tanh(g.param(b))) + reduce(g, sm) + reduce(g, msm) + reduce(g, lg);
  });
}

TEST(Autodiff, LookupGradientSkipsFrozenColumn) {
  Params p;
  auto& table = p.add("table", 3, 4);
  table.freeze_column(0);
  expect_grad(p, [&](Graph& g) {
    return reduce(g, ad::cmul(g.lookup(table, 2), g.lookup(table, 3))) + reduce(g, g.lookup(table, 1));
  });
  p.pc.zero_grad();
  Graph g;
  g.backward(reduce(g, g.lookup(table, 0)) + reduce(g, g.lookup(table, 2)));
  EXPECT_EQ(table.grad().col(0).norm(), 0.0);
  EXPECT_GT(table.grad().col(2).norm(), 0.0);
}

TEST(Autodiff, DropoutGradientWithFixedMask) {
  Params p;
  auto& a = p.add("a", 6, 1);
  expect_grad(p, [&](Graph& g) {
    std::mt19937_64 rng(3);
    g.set_training(true, &rng);
    return reduce(g, ad::dropout(ad::tanh(g.param(a)), 0.5));
  });
}

TEST(Autodiff, DropoutIsIdentityOutsideTraining) {
  Graph g;
  ad::Matrix v = ad::Matrix::Random(4, 1);
  Expr x = g.input(v);
  EXPECT_EQ(ad::dropout(x, 0.5).value(), v);
}

TEST(Autodiff, MaskedSoftmaxZeroesMaskedEntriesExactly) {
  Graph g;
  Expr x = g.input(ad::Vector(ad::Vector::LinSpaced(4, -1.0, 2.0)));
  Expr s = ad::masked_softmax(x, {false, true, false, true});
  EXPECT_EQ(s.value()(0, 0), 0.0);
  EXPECT_EQ(s.value()(2, 0), 0.0);
  EXPECT_NEAR(s.value().sum(), 1.0, 1e-15);
}

TEST(Autodiff, ParameterNodeIsSharedWithinAGraph) {
  Params p;
  auto& a = p.add("a", 2, 1);
  Graph g;
  Expr x = g.param(a);
  Expr y = g.param(a);
  EXPECT_EQ(x.id, y.id);
  p.pc.zero_grad();
  g.backward(ad::sum_elems(x + y));
  EXPECT_NEAR(a.grad()(0, 0), 2.0, 1e-15);
}

TEST(Autodiff, GradNormAndScaling) {
  Params p;
  auto& a = p.add("a", 2, 1);
  auto& b = p.add("b", 1, 1);
  a.grad() << 3.0, 0.0;
  b.grad() << 4.0;
  EXPECT_DOUBLE_EQ(p.pc.grad_norm(), 5.0);
  p.pc.scale_grad(0.5);
  EXPECT_DOUBLE_EQ(p.pc.grad_norm(), 2.5);
  p.pc.zero_grad();
  EXPECT_EQ(p.pc.grad_norm(), 0.0);
}
