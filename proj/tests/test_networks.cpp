#include <gtest/gtest.h>

#include <set>

#include "gradcheck.hpp"
#include "pseudosr/nn/networks.hpp"
#include "pseudosr/nn/serialization.hpp"
#include "test_util.hpp"

using namespace pseudosr;
using namespace pseudosr::nn;

namespace {

// Layer-by-layer counting oracle.
std::size_t conv(std::size_t i, std::size_t o, std::size_t k) { return o * i * k * k + o; }
std::size_t conv_bn(std::size_t i, std::size_t o, std::size_t k) { return conv(i, o, k) + 2 * o; }

std::size_t rcan_count(const NetworkConfig& c, int up) {
  const std::size_t w = c.base_channels, h = std::max(1, c.base_channels / c.reduction);
  std::size_t n = conv(3, w, 3) + conv(w, w, 3) + conv(w, 3, 3);
  n += c.n_residual_groups * (c.rcabs_per_group * (2 * conv(w, w, 3) + conv(w, h, 1) + conv(h, w, 1)) + conv(w, w, 3));
  for (int s = up; s > 1; s /= 2) n += conv(w, 4 * w, 3);
  return n;
}

std::size_t degradation_count(const DegradationConfig& c) {
  const std::size_t w = c.channels, k = c.kernel;
  const std::size_t block = 2 * conv_bn(w, w, k);
  return conv_bn(3, w, k) + block + conv_bn(1, w, k) + block + conv_bn(2 * w, w, 1) + c.main_blocks * block +
         conv_bn(w, w, 1) + conv(w, 3, 1);
}

std::size_t discriminator_count(const DiscriminatorConfig& c) {
  const std::size_t b = c.base_channels, k = c.kernel;
  return conv(3, b, k) + conv(b, 2 * b, k) + conv(2 * b, 4 * b, k) + conv(4 * b, 8 * b, k) + conv(8 * b, 1, k);
}

template <class Net>
Var<float> run(const Net& net, const Shape& s, std::uint64_t seed = 1) {
  Rng rng(seed);
  return net(Var<float>::constant(testutil::random_tensor<float>(s, rng, 0, 1)), Mode::training());
}

/// Extent of input pixels whose perturbation reaches the central score.
template <class T>
int empirical_receptive_field(const PatchDiscriminator<T>& d, int size) {
  Rng rng(3);
  Var<T> x = Var<T>::leaf(testutil::random_tensor<T>(Shape{1, 3, size, size}, rng, 0, 1));
  const Var<T> out = d(x, Mode::training().freeze());
  const Shape os = out.shape();
  Tensor<T> pick(os);
  pick.at(0, 0, os.h / 2, os.w / 2) = T(1);
  auto picked = make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, out.value().at(0, 0, os.h / 2, os.w / 2)), {out},
                               [pick](Node<T>& self) {
                                 accumulate_into(self, 0, [&](Tensor<T>& g) {
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * pick[i];
                                 });
                               });
  backward(picked);
  int lo = size, hi = -1;
  for (int y = 0; y < size; ++y)
    for (int c = 0; c < 3; ++c)
      for (int xx = 0; xx < size; ++xx)
        if (x.grad().at(0, c, y, xx) != T(0)) {
          lo = std::min(lo, xx);
          hi = std::max(hi, xx);
        }
  return hi - lo + 1;
}

}  // namespace

TEST(Networks, DefaultParameterCountsPinned) {
  Rng rng(1);
  const BundleConfig p = BundleConfig::published(4);
  EXPECT_EQ(build_correction_generator<float>(p.correction, rng).params().parameter_count(), 3946891u);
  EXPECT_EQ(build_sr_network<float>(p.sr, 4, rng).params().parameter_count(), 7964115u);
  EXPECT_EQ(build_degradation_generator<float>(p.degradation, rng).params().parameter_count(), 1661123u);
  EXPECT_EQ(build_lr_discriminator<float>(p.discriminator, rng).params().parameter_count(), 1555585u);
  EXPECT_EQ(rcan_count(p.correction, 1), 3946891u);
  EXPECT_EQ(rcan_count(p.sr, 4), 7964115u);
  EXPECT_EQ(degradation_count(p.degradation), 1661123u);
  EXPECT_EQ(discriminator_count(p.discriminator), 1555585u);
}

TEST(Networks, CountsMatchOracleAcrossConfigs) {
  Rng rng(2);
  for (const NetworkConfig c : {NetworkConfig{1, 1, 4, 2, false}, NetworkConfig{2, 3, 8, 16, true}}) {
    for (int up : {1, 2, 4}) EXPECT_EQ(RcanNetwork<float>(c, up, rng).params().parameter_count(), rcan_count(c, up));
  }
  const DegradationConfig d{8, 3, 3, 0.2};
  EXPECT_EQ(build_degradation_generator<float>(d, rng).params().parameter_count(), degradation_count(d));
  const DiscriminatorConfig dc{4, 3, 0.2};
  EXPECT_EQ(build_hr_discriminator<float>(dc, 4, rng).params().parameter_count(), discriminator_count(dc));
}

TEST(Networks, GeneratorShapes) {
  Rng rng(3);
  const BundleConfig c = BundleConfig::desk(2);
  const auto g = build_correction_generator<float>(c.correction, rng);
  EXPECT_EQ(run(g, Shape{2, 3, 32, 32}).shape(), (Shape{2, 3, 32, 32}));
  const auto u4 = build_sr_network<float>(c.sr, 4, rng);
  EXPECT_EQ(run(u4, Shape{1, 3, 32, 32}).shape(), (Shape{1, 3, 128, 128}));
  const auto u2 = build_sr_network<float>(c.sr, 2, rng);
  EXPECT_EQ(run(u2, Shape{1, 3, 7, 9}).shape(), (Shape{1, 3, 14, 18}));
  for (auto [h, w] : {std::pair{8, 8}, {9, 13}, {16, 11}}) {
    EXPECT_EQ(run(g, Shape{1, 3, h, w}).shape(), (Shape{1, 3, h, w}));
    EXPECT_EQ(run(u2, Shape{1, 3, h, w}).shape(), (Shape{1, 3, 2 * h, 2 * w}));
  }
  const auto gd = build_degradation_generator<float>(c.degradation, rng);
  Rng r(4);
  const auto img = Var<float>::constant(testutil::random_tensor<float>(Shape{4, 3, 32, 32}, r, 0, 1));
  const auto noise = Var<float>::constant(testutil::random_tensor<float>(Shape{4, 1, 32, 32}, r));
  EXPECT_EQ(gd(img, noise, Mode::training()).shape(), (Shape{4, 3, 32, 32}));
  const auto bad = Var<float>::constant(Tensor<float>(Shape{4, 1, 16, 16}));
  EXPECT_THROW(gd(img, bad, Mode::training()), ShapeError);
}

TEST(Networks, ZeroTailStartsAsIdentity) {
  Rng rng(5);
  const auto g = build_correction_generator<float>(NetworkConfig{1, 2, 8, 4, true}, rng);
  Rng r(6);
  const auto x = testutil::random_tensor<float>(Shape{1, 3, 10, 12}, r, 0, 1);
  EXPECT_EQ(g(Var<float>::constant(x), Mode::inference()).value(), x);
}

TEST(Networks, DegradationOutputDependsOnNoise) {
  Rng rng(7);
  const auto gd = build_degradation_generator<float>(DegradationConfig{8, 2, 5, 0.2}, rng);
  Rng r(8);
  const auto img = Var<float>::constant(testutil::random_tensor<float>(Shape{2, 3, 16, 16}, r, 0, 1));
  const auto n1 = Var<float>::constant(testutil::random_tensor<float>(Shape{2, 1, 16, 16}, r));
  const auto n2 = Var<float>::constant(testutil::random_tensor<float>(Shape{2, 1, 16, 16}, r));
  const auto a = gd(img, n1, Mode::training()).value();
  const auto b = gd(img, n2, Mode::training()).value();
  double gap = 0;
  for (std::size_t i = 0; i < a.size(); ++i) gap += std::abs(a[i] - b[i]);
  EXPECT_GT(gap / a.size(), 1e-4);
}

TEST(Discriminators, ScoreMapSizes) {
  Rng rng(9);
  const DiscriminatorConfig c{4, 3, 0.2};
  const auto dl = build_lr_discriminator<float>(c, rng);
  const auto d2 = build_hr_discriminator<float>(c, 2, rng);
  const auto d4 = build_hr_discriminator<float>(c, 4, rng);
  EXPECT_EQ(run(dl, Shape{2, 3, 32, 32}).shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(run(d2, Shape{2, 3, 64, 64}).shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(run(d4, Shape{2, 3, 128, 128}).shape(), (Shape{2, 1, 32, 32}));
  EXPECT_THROW(build_hr_discriminator<float>(c, 3, rng), UnsupportedScaleError);
  // Raw logits: values outside (0, 1) occur.
  const auto s = run(dl, Shape{1, 3, 16, 16}).value();
  bool outside = false;
  for (float v : s.storage()) outside = outside || v < 0 || v > 1;
  EXPECT_TRUE(outside);
}

TEST(Discriminators, ReceptiveFieldArithmetic) {
  Rng rng(10);
  const DiscriminatorConfig c{2, 3, 0.2};
  const auto dl = build_lr_discriminator<double>(c, rng);
  const auto d2 = build_hr_discriminator<double>(c, 2, rng);
  const auto d4 = build_hr_discriminator<double>(c, 4, rng);
  // rf = 1 + Σ (k - 1) · Π previous strides
  EXPECT_EQ(dl.receptive_field(), 11);
  EXPECT_EQ(d2.receptive_field(), 1 + 2 + 2 * 2 * 4);
  EXPECT_EQ(d4.receptive_field(), 1 + 2 + 4 + 3 * 8);
  EXPECT_EQ(empirical_receptive_field(dl, 32), 11);
  EXPECT_EQ(empirical_receptive_field(d2, 64), 19);
  EXPECT_EQ(empirical_receptive_field(d4, 96), 31);
}

TEST(Bundle, DisjointParametersAndFiniteOutputs) {
  auto b = NetworkBundle<float>::build(BundleConfig::desk(2), 11);
  std::set<const void*> seen;
  std::size_t total = 0;
  for (const auto& [name, store] : b.stores())
    for (const auto& p : store->parameters()) {
      seen.insert(p.node.get());
      ++total;
    }
  EXPECT_EQ(seen.size(), total);
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto x = Var<float>::constant(testutil::random_tensor<float>(Shape{1, 3, 8, 8}, rng, 0, 1));
    const auto n = Var<float>::constant(testutil::random_tensor<float>(Shape{1, 1, 8, 8}, rng));
    const Var<float> outs[] = {b.g_correct(x, Mode::inference()), b.sr(x, Mode::inference()),
                               b.g_degrade(x, n, Mode::training())};
    for (const auto& o : outs)
      for (float v : o.value().storage()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Bundle, SeedDeterminesInitialization) {
  auto a = NetworkBundle<float>::build(BundleConfig::desk(2), 5);
  auto b = NetworkBundle<float>::build(BundleConfig::desk(2), 5);
  auto c = NetworkBundle<float>::build(BundleConfig::desk(2), 6);
  Container ca, cb, cc;
  for (const auto& [name, s] : a.stores()) put_store<float>(ca, name, *s);
  for (const auto& [name, s] : b.stores()) put_store<float>(cb, name, *s);
  for (const auto& [name, s] : c.stores()) put_store<float>(cc, name, *s);
  EXPECT_EQ(ca, cb);
  EXPECT_NE(ca, cc);
}

TEST(Networks, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(13);
  const NetworkConfig tiny{1, 1, 4, 2, false};
  const auto g = build_correction_generator<double>(tiny, rng);
  const auto u = build_sr_network<double>(tiny, 2, rng);
  const auto gd = build_degradation_generator<double>(DegradationConfig{3, 1, 3, 0.2}, rng);
  const auto d = build_hr_discriminator<double>(DiscriminatorConfig{2, 3, 0.2}, 2, rng);
  Rng r(14);
  const auto x = Var<double>::constant(testutil::random_tensor<double>(Shape{2, 3, 6, 6}, r, 0, 1));
  const auto n = Var<double>::constant(testutil::random_tensor<double>(Shape{2, 1, 6, 6}, r));
  const auto hx = Var<double>::constant(testutil::random_tensor<double>(Shape{2, 3, 12, 12}, r, 0, 1));
  auto nodes = [](const ParameterStore<double>& s) {
    std::vector<NodePtr<double>> v;
    for (const auto& p : s.parameters()) v.push_back(p.node);
    return v;
  };
  const Mode m{true, false, false};
  auto readout = [](const Var<double>& y) { return ops::mean(ops::sigmoid(y)); };
  EXPECT_LT(gradcheck::check([&] { return readout(g(x, m)); }, nodes(g.params())).rel_error, 1e-3);
  EXPECT_LT(gradcheck::check([&] { return readout(u(x, m)); }, nodes(u.params())).rel_error, 1e-3);
  EXPECT_LT(gradcheck::check([&] { return readout(gd(x, n, m)); }, nodes(gd.params())).rel_error, 1e-3);
  EXPECT_LT(gradcheck::check([&] { return readout(d(hx, m)); }, nodes(d.params())).rel_error, 1e-3);
}

TEST(Serialization, StoreRoundTripIsExact) {
  auto a = NetworkBundle<float>::build(BundleConfig::desk(2), 21);
  auto b = NetworkBundle<float>::build(BundleConfig::desk(2), 22);
  Container c;
  for (const auto& [name, s] : a.stores()) put_store<float>(c, name, *s);
  const auto bytes = c.serialize();
  const Container back = Container::deserialize(bytes);
  EXPECT_EQ(back, c);
  for (auto& [name, s] : b.stores()) get_store<float>(back, name, *s);
  const auto sa = a.stores(), sb = b.stores();
  for (std::size_t k = 0; k < sa.size(); ++k)
    for (std::size_t i = 0; i < sa[k].second->parameters().size(); ++i)
      EXPECT_EQ(sa[k].second->parameters()[i].node->value, sb[k].second->parameters()[i].node->value);
}

TEST(Serialization, CorruptionDetected) {
  Container c;
  c.put_i64("a", 7);
  c.put_bytes("b", "hello");
  auto bytes = c.serialize();
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(Container::deserialize(truncated), CorruptCheckpointError);
  auto flipped = bytes;
  flipped[20] ^= 0x40;
  EXPECT_THROW(Container::deserialize(flipped), CorruptCheckpointError);
  auto version = bytes;
  version[8] = 9;
  EXPECT_THROW(Container::deserialize(version), CheckpointVersionError);
}

TEST(Serialization, ShapeMismatchRejected) {
  Rng rng(23);
  const auto small = build_lr_discriminator<float>(DiscriminatorConfig{2, 3, 0.2}, rng);
  auto large = build_lr_discriminator<float>(DiscriminatorConfig{4, 3, 0.2}, rng);
  Container c;
  put_store<float>(c, "d", small.params());
  EXPECT_THROW(get_store<float>(c, "d", large.params()), CheckpointError);
}
