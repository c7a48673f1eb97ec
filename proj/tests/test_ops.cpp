#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "pseudosr/ops.hpp"
#include "test_util.hpp"

using namespace pseudosr;
using V = Var<double>;

namespace {

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor<double> out(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[o];
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

V leaf(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return V::leaf(testutil::random_tensor<double>(s, rng, lo, hi));
}

/// Σ w_i y_i / N with fixed, distinct weights so every output entry matters.
V readout(const V& y) {
  Tensor<double> w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  Tensor<double> v = y.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= w[i];
  auto weighted = make_result<double>(std::move(v), {y}, [w](Node<double>& self) {
    accumulate_into(self, 0, [&](Tensor<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * w[i];
    });
  });
  return ops::mean(weighted);
}

void expect_grad_ok(const std::function<V()>& f, const std::vector<V>& leaves, double tol = 1e-6) {
  std::vector<NodePtr<double>> nodes;
  for (const auto& l : leaves) nodes.push_back(l.node());
  const auto r = gradcheck::check(f, nodes);
  EXPECT_LT(r.rel_error, tol) << "analytic " << r.analytic_norm << " numeric " << r.numeric_norm;
  EXPECT_GT(r.analytic_norm, 0.0);
}

}  // namespace

TEST(Conv2d, MatchesNaiveConvolution) {
  Rng rng(1);
  for (auto [k, stride] : {std::pair{3, 1}, {3, 2}, {5, 1}, {1, 1}, {1, 2}}) {
    const auto x = testutil::random_tensor<double>(Shape{2, 3, 7, 6}, rng);
    const auto w = testutil::random_tensor<double>(Shape{4, 3, k, k}, rng);
    const auto b = testutil::random_tensor<double>(Shape{1, 4, 1, 1}, rng);
    const auto out = ops::conv2d(V::constant(x), V::constant(w), V::constant(b), stride, k / 2).value();
    const auto ref = naive_conv(x, w, b, stride, k / 2);
    ASSERT_EQ(out.shape(), ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, Gradients) {
  Rng rng(2);
  for (auto [k, stride] : {std::pair{3, 1}, {3, 2}, {1, 1}}) {
    V x = leaf(Shape{2, 2, 5, 6}, rng), w = leaf(Shape{3, 2, k, k}, rng), b = leaf(Shape{1, 3, 1, 1}, rng);
    expect_grad_ok([&] { return readout(ops::conv2d(x, w, b, stride, k / 2)); }, {x, w, b});
  }
}

TEST(Elementwise, Gradients) {
  Rng rng(3);
  const Shape s{2, 3, 4, 4};
  V a = leaf(s, rng), b = leaf(s, rng), c = leaf(s, rng);
  expect_grad_ok([&] { return readout(ops::add(a, b)); }, {a, b});
  expect_grad_ok([&] { return readout(ops::sub(a, b)); }, {a, b});
  expect_grad_ok([&] { return readout(ops::scale(a, -1.7)); }, {a});
  expect_grad_ok([&] { return readout(ops::average<double>({a, b, c})); }, {a, b, c});
  expect_grad_ok([&] { return readout(ops::weighted_sum<double>({a, b, c}, {0.5, -2.0, 3.0})); }, {a, b, c});
  expect_grad_ok([&] { return readout(ops::leaky_relu(a, 0.2)); }, {a});
  expect_grad_ok([&] { return readout(ops::relu(a)); }, {a});
  expect_grad_ok([&] { return readout(ops::sigmoid(a)); }, {a});
}

TEST(ChannelOps, Gradients) {
  Rng rng(4);
  V x = leaf(Shape{2, 4, 3, 5}, rng), s = leaf(Shape{2, 4, 1, 1}, rng), y = leaf(Shape{2, 2, 3, 5}, rng);
  expect_grad_ok([&] { return readout(ops::global_avg_pool(x)); }, {x});
  expect_grad_ok([&] { return readout(ops::scale_channels(x, s)); }, {x, s});
  expect_grad_ok([&] { return readout(ops::concat_channels(x, y)); }, {x, y});
  V p = leaf(Shape{1, 12, 3, 2}, rng);
  expect_grad_ok([&] { return readout(ops::pixel_shuffle(p, 2)); }, {p});
}

TEST(ChannelOps, PixelShuffleLayout) {
  Tensor<double> t(Shape{1, 8, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const auto out = ops::pixel_shuffle(V::constant(t), 2).value();
  ASSERT_EQ(out.shape(), (Shape{1, 2, 4, 6}));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) EXPECT_EQ(out.at(0, c, y, x), t.at(0, c * 4 + (y % 2) * 2 + (x % 2), y / 2, x / 2));
}

TEST(Dihedral, TensorOpMatchesIndexMapAndGradients) {
  Rng rng(5);
  V x = leaf(Shape{2, 3, 4, 5}, rng);
  for (DihedralIndex op : DihedralIndex::all()) {
    const auto out = ops::dihedral(x, op).value();
    const auto idx = op.source_indices(4, 5);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(out.plane(n, c)[i], x.value().plane(n, c)[idx[i]]);
    const auto back = ops::dihedral(ops::dihedral(x, op), op.inverse()).value();
    EXPECT_EQ(back, x.value());
    expect_grad_ok([&] { return readout(ops::dihedral(x, op)); }, {x});
  }
}

TEST(BatchNorm, TrainModeGradientsAndStatistics) {
  Rng rng(6);
  V x = leaf(Shape{3, 2, 4, 4}, rng), g = leaf(Shape{1, 2, 1, 1}, rng, 0.5, 1.5), b = leaf(Shape{1, 2, 1, 1}, rng);
  expect_grad_ok([&] { return readout(ops::batch_norm_train<double>(x, g, b, nullptr, nullptr, 0.1, 1e-5)); },
                 {x, g, b});
  const auto y = ops::batch_norm_train<double>(x, V::constant(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)),
                                               V::constant(Tensor<double>(Shape{1, 2, 1, 1}, 0.0)), nullptr, nullptr,
                                               0.1, 0.0)
                     .value();
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 16; ++i) m += y.plane(n, c)[i] / 48;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 16; ++i) v += (y.plane(n, c)[i] - m) * (y.plane(n, c)[i] - m) / 48;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-9);
  }
}

TEST(BatchNorm, EvalModeGradients) {
  Rng rng(7);
  V x = leaf(Shape{2, 2, 3, 3}, rng), g = leaf(Shape{1, 2, 1, 1}, rng), b = leaf(Shape{1, 2, 1, 1}, rng);
  Tensor<double> rm(Shape{1, 2, 1, 1}, 0.3), rv(Shape{1, 2, 1, 1}, 2.0);
  expect_grad_ok([&] { return readout(ops::batch_norm_eval<double>(x, g, b, rm, rv, 1e-5)); }, {x, g, b});
}

TEST(Reductions, Gradients) {
  Rng rng(8);
  V a = leaf(Shape{2, 3, 3, 3}, rng), b = leaf(Shape{2, 3, 3, 3}, rng);
  expect_grad_ok([&] { return ops::mean(a); }, {a});
  expect_grad_ok([&] { return ops::l1_mean(a, b); }, {a, b});
  expect_grad_ok([&] { return ops::squared_error_mean(a, 1.0); }, {a});
  expect_grad_ok([&] { return ops::softplus_mean(a, -1.0); }, {a});
  expect_grad_ok([&] { return ops::softplus_mean(a, 1.0); }, {a});
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Rng rng(9);
  V a = leaf(Shape{1, 1, 2, 2}, rng);
  const V s = ops::add(a, a);
  backward(ops::mean(ops::add(s, a)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.grad()[i], 3.0 / 4.0, 1e-15);
  // Leaves accumulate across passes until zero_grad.
  backward(ops::mean(a));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.grad()[i], 1.0, 1e-15);
  a.node()->zero_grad();
  EXPECT_FALSE(a.node()->has_grad());
}

TEST(Autograd, DetachAndConstantsStopGradients) {
  Rng rng(10);
  V a = leaf(Shape{1, 1, 2, 2}, rng);
  backward(ops::mean(ops::add(a.detach(), V::constant(a.value()))));
  EXPECT_FALSE(a.node()->has_grad());
  EXPECT_THROW(backward(ops::add(a, a)), ShapeError);
  EXPECT_THROW((void)a.item(), ShapeError);
}

TEST(Autograd, FloatAndDoubleAgree) {
  Rng rng(11);
  const auto x = testutil::random_tensor<double>(Shape{1, 2, 5, 5}, rng);
  const auto w = testutil::random_tensor<double>(Shape{3, 2, 3, 3}, rng);
  const auto b = testutil::random_tensor<double>(Shape{1, 3, 1, 1}, rng);
  const auto d = ops::conv2d(V::constant(x), V::constant(w), V::constant(b), 1, 1).value();
  const auto f = ops::conv2d(Var<float>::constant(x.cast<float>()), Var<float>::constant(w.cast<float>()),
                             Var<float>::constant(b.cast<float>()), 1, 1)
                     .value();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(f[i], d[i], 1e-5);
}
