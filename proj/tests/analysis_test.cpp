#include "dlf/analysis.hpp"
#include "dlf/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>

using namespace dlf;
using dlf::testing::random_architecture;
using dlf::testing::random_tensor;

namespace {

BaseNetConfig single_conv() {
  BaseNetConfig c;
  c.depth = 1;
  c.channels = 3;
  c.input_channels = 4;
  c.output_channels = 3;
  c.downsample_layer = 0;
  c.upsample_layer = 0;
  c.residual_first = 0;
  c.norm_after = {};
  return c;
}

// Pixel-level dependency sets, propagated tap by tap from the output back to
// the input. Norm statistics make every pixel of that layer's map depend on
// every other.
using Mask = std::vector<std::vector<bool>>;

Mask backprop_mask(const BaseNetConfig& cfg, Index h, Index w, PixelPoint p, bool through_norm) {
  std::vector<std::pair<Index, Index>> sizes{{h, w}};
  for (int i = 1; i <= cfg.depth; ++i) {
    const LayerSpec s = layer_spec(cfg, i);
    auto [ih, iw] = sizes.back();
    if (s.kind == LayerKind::deconv) {
      sizes.push_back({(ih - 1) * s.stride - 2 * s.padding + s.kernel, (iw - 1) * s.stride - 2 * s.padding + s.kernel});
    } else {
      const Index e = s.dilation * (s.kernel - 1);
      sizes.push_back({(ih + 2 * s.padding - e - 1) / s.stride + 1, (iw + 2 * s.padding - e - 1) / s.stride + 1});
    }
  }
  auto [oh, ow] = sizes.back();
  Mask cur(static_cast<std::size_t>(oh), std::vector<bool>(static_cast<std::size_t>(ow), false));
  cur[static_cast<std::size_t>(p.y)][static_cast<std::size_t>(p.x)] = true;
  Mask skip;
  for (int i = cfg.depth; i >= 1; --i) {
    const LayerSpec s = layer_spec(cfg, i);
    if (s.residual == ResidualRole::block_second) skip = cur;
    if (s.norm && through_norm) {
      bool any = false;
      for (auto& row : cur)
        for (bool b : row) any = any || b;
      for (auto& row : cur) std::fill(row.begin(), row.end(), any);
    }
    auto [ih, iw] = sizes[static_cast<std::size_t>(i - 1)];
    Mask in(static_cast<std::size_t>(ih), std::vector<bool>(static_cast<std::size_t>(iw), false));
    for (Index y = 0; y < static_cast<Index>(cur.size()); ++y)
      for (Index x = 0; x < static_cast<Index>(cur[0].size()); ++x) {
        if (!cur[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)]) continue;
        if (s.kind == LayerKind::deconv) {
          for (Index iy = 0; iy < ih; ++iy)
            for (Index ix = 0; ix < iw; ++ix) {
              const Index ky = y - (iy * s.stride - s.padding), kx = x - (ix * s.stride - s.padding);
              if (ky >= 0 && ky < s.kernel && kx >= 0 && kx < s.kernel)
                in[static_cast<std::size_t>(iy)][static_cast<std::size_t>(ix)] = true;
            }
        } else {
          for (Index a = 0; a < s.kernel; ++a)
            for (Index b = 0; b < s.kernel; ++b) {
              const Index iy = y * s.stride - s.padding + a * s.dilation, ix = x * s.stride - s.padding + b * s.dilation;
              if (iy >= 0 && iy < ih && ix >= 0 && ix < iw) in[static_cast<std::size_t>(iy)][static_cast<std::size_t>(ix)] = true;
            }
        }
      }
    if (s.residual == ResidualRole::block_first && !skip.empty()) {
      for (std::size_t y = 0; y < in.size(); ++y)
        for (std::size_t x = 0; x < in[0].size(); ++x) in[y][x] = in[y][x] || skip[y][x];
      skip.clear();
    }
    cur = std::move(in);
  }
  if (cfg.input_skip) cur[static_cast<std::size_t>(p.y)][static_cast<std::size_t>(p.x)] = true;
  return cur;
}

PixelRect bounding_box(const Mask& m) {
  PixelRect r{1 << 30, 1 << 30, -1, -1};
  for (Index y = 0; y < static_cast<Index>(m.size()); ++y)
    for (Index x = 0; x < static_cast<Index>(m[0].size()); ++x)
      if (m[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)]) {
        r.top = std::min(r.top, y);
        r.left = std::min(r.left, x);
        r.bottom = std::max(r.bottom, y);
        r.right = std::max(r.right, x);
      }
  return r;
}

Image random_image(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return Image::from_function(h, w, [&](int, Index, Index) { return u(rng); });
}

}  // namespace

TEST(ReceptiveField, SingleConvIsTheThreeByThreeNeighbourhood) {
  const auto r = theoretical_receptive_field(single_conv(), 10, 12, {4, 7});
  EXPECT_EQ(r.top, 3);
  EXPECT_EQ(r.bottom, 5);
  EXPECT_EQ(r.left, 6);
  EXPECT_EQ(r.right, 8);
  const auto corner = theoretical_receptive_field(single_conv(), 10, 12, {0, 11});
  EXPECT_EQ(corner.top, 0);
  EXPECT_EQ(corner.bottom, 1);
  EXPECT_EQ(corner.left, 10);
  EXPECT_EQ(corner.right, 11);
}

TEST(ReceptiveField, MatchesTapByTapDependencyPropagation) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 12; ++t) {
    BaseNetConfig c = random_architecture(rng, t % 2 == 0);
    c.input_skip = t % 3 == 0;
    const Index h = 16 + 2 * static_cast<Index>(rng() % 12), w = 16 + 2 * static_cast<Index>(rng() % 12);
    const PixelPoint p{static_cast<Index>(rng() % h), static_cast<Index>(rng() % w)};
    for (bool through : {false, true}) {
      const PixelRect got = theoretical_receptive_field(c, h, w, p, through);
      const PixelRect want = bounding_box(backprop_mask(c, h, w, p, through));
      EXPECT_EQ(got.top, want.top) << "trial " << t;
      EXPECT_EQ(got.left, want.left) << "trial " << t;
      EXPECT_EQ(got.bottom, want.bottom) << "trial " << t;
      EXPECT_EQ(got.right, want.right) << "trial " << t;
    }
  }
}

TEST(ReceptiveField, NormStatisticsMakeItGlobal) {
  const BaseNetConfig c = BaseNetConfig::scaled(8, 4);
  const auto r = theoretical_receptive_field(c, 40, 40, {20, 20});
  EXPECT_EQ(r.height(), 40);
  EXPECT_EQ(r.width(), 40);
  const auto g = theoretical_receptive_field(c, 40, 40, {20, 20}, false);
  EXPECT_LT(g.height(), 40);
  EXPECT_THROW(theoretical_receptive_field(c, 40, 40, {40, 0}), ContractViolation);
}

TEST(Erf, SingleConvStaysInsideTheKernelFootprint) {
  std::mt19937_64 rng(4);
  const auto net = WeightLearningNet<double>::initialize(single_conv(), HyperConfig{}, rng);
  const Image img = random_image(12, 12, 5);
  const auto erf = effective_receptive_field(net, find_operator("gaussian"), {1.0}, img, {6, 5});
  EXPECT_FALSE(erf.degenerate);
  EXPECT_GE(erf.count(), 1);
  EXPECT_DOUBLE_EQ(erf.threshold, 0.025 * erf.grad_max);
  for (Index y = 0; y < 12; ++y)
    for (Index x = 0; x < 12; ++x)
      if (erf.mask(y, x)) {
        EXPECT_LE(std::abs(y - 6), 1);
        EXPECT_LE(std::abs(x - 5), 1);
      }
  EXPECT_TRUE(erf.mask(erf.argmax.y, erf.argmax.x));
}

TEST(Erf, GradientMatchesFiniteDifferencesOfTheProbedOutput) {
  std::mt19937_64 rng(6);
  BaseNetConfig c = BaseNetConfig::scaled(8, 3);
  const auto net = WeightLearningNet<double>::initialize(c, HyperConfig{}, rng);
  const Image img = random_image(8, 8, 7);
  const PixelPoint p{3, 4};
  const auto erf = effective_receptive_field(net, find_operator("gaussian"), {1.0}, img, p);
  auto [input, edge] = network_tensors<double>(img);
  const auto w = net.predict_weights(normalize_gamma(find_operator("gaussian"), {1.0}));
  auto probe = [&] {
    const auto out = forward_base(c, w, input, edge);
    double s = 0.0;
    for (Index ch = 0; ch < 3; ++ch) s += out.values()[(ch * 8 + p.y) * 8 + p.x];
    return s;
  };
  const double h = 1e-6;
  for (Index y = 0; y < 8; y += 3)
    for (Index x = 0; x < 8; x += 2) {
      double m = 0.0;
      for (Tensor<double>* t : {&input, &edge}) {
        for (Index ch = 0; ch < t->dim(1); ++ch) {
          const Index k = (ch * 8 + y) * 8 + x;
          const double v = t->values()[k];
          t->mutable_values()[k] = v + h;
          const double up = probe();
          t->mutable_values()[k] = v - h;
          const double down = probe();
          t->mutable_values()[k] = v;
          m = std::max(m, std::abs((up - down) / (2 * h)));
        }
      }
      EXPECT_NEAR(erf.magnitude(y, x), m, 1e-5 * std::max(1.0, m)) << y << "," << x;
    }
}

TEST(Erf, ContainedInTheoreticalFieldOnRandomNets) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 6; ++t) {
    const bool with_norm = t % 2 == 1;
    const BaseNetConfig c = random_architecture(rng, with_norm);
    const auto net = WeightLearningNet<double>::initialize(c, HyperConfig{}, rng);
    const Index size = 24 + 8 * static_cast<Index>(rng() % 2);
    const Image img = random_image(size, size, rng());
    const PixelPoint p{static_cast<Index>(rng() % size), static_cast<Index>(rng() % size)};
    const auto erf = effective_receptive_field(net, find_operator("gaussian"), {1.0}, img, p);
    const PixelRect rf = theoretical_receptive_field(c, size, size, p);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x)
        if (erf.mask(y, x)) EXPECT_TRUE(rf.contains(y, x)) << "trial " << t << " at " << y << "," << x;
    if (!erf.degenerate) EXPECT_TRUE(erf.mask(erf.argmax.y, erf.argmax.x));
  }
}

TEST(Erf, ZeroNetIsDegenerate) {
  std::mt19937_64 rng(9);
  auto net = WeightLearningNet<double>::initialize(single_conv(), HyperConfig{}, rng);
  for (auto& p : net.predictors())
    for (auto& s : p.stages) {
      s.weight.mutable_values().setZero();
      s.bias.mutable_values().setZero();
    }
  const auto erf = effective_receptive_field(net, find_operator("gaussian"), {1.0}, random_image(6, 6, 1), {2, 2});
  EXPECT_TRUE(erf.degenerate);
  EXPECT_EQ(erf.count(), 0);
}

TEST(Erf, OverlayPaintsMaskRed) {
  ErfMask erf;
  erf.mask = BoolPlane::Constant(4, 4, false);
  erf.mask(1, 2) = true;
  const Image img(4, 4, 0.5);
  const Image out = erf_overlay(img, erf);
  EXPECT_EQ(out(0, 1, 2), 1.0);
  EXPECT_EQ(out(1, 1, 2), 0.0);
  EXPECT_EQ(out(2, 1, 2), 0.0);
  EXPECT_EQ(out(0, 0, 0), 0.5);
}

TEST(WeightStatistics, IdenticalSetsCorrelatePerfectly) {
  std::mt19937_64 rng(10);
  const auto w = WeightSet<double>::initialize(BaseNetConfig::scaled(8, 8), rng);
  const WeightStats s = weight_statistics(w, w);
  ASSERT_EQ(s.layers.size(), 8u);
  for (const auto& l : s.layers) {
    ASSERT_TRUE(l.correlation.has_value());
    EXPECT_EQ(*l.correlation, 1.0);
    EXPECT_EQ(l.var_a, l.var_b);
    EXPECT_EQ(l.mean_a, l.mean_b);
  }
}

TEST(WeightStatistics, HandExample) {
  BaseNetConfig c = single_conv();
  c.input_channels = 1;
  c.output_channels = 1;
  c.channels = 1;
  auto a = WeightSet<double>::zeros(c), b = WeightSet<double>::zeros(c), r = WeightSet<double>::zeros(c);
  for (Index i = 0; i < 9; ++i) {
    a.layer(1).kernel.mutable_values()[i] = static_cast<double>(i + 1);
    b.layer(1).kernel.mutable_values()[i] = 2.0 * (i + 1) + 1.0;
    r.layer(1).kernel.mutable_values()[i] = static_cast<double>(9 - i);
  }
  const auto s = weight_statistics(a, b).layers[0];
  EXPECT_NEAR(*s.correlation, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.mean_a, 5.0);
  EXPECT_DOUBLE_EQ(s.mean_b, 11.0);
  EXPECT_DOUBLE_EQ(s.var_a, 60.0 / 9.0);
  EXPECT_DOUBLE_EQ(s.var_b, 240.0 / 9.0);
  EXPECT_NEAR(*weight_statistics(a, r).layers[0].correlation, -1.0, 1e-15);
  EXPECT_FALSE(weight_statistics(a, WeightSet<double>::zeros(c)).layers[0].correlation.has_value());
}

TEST(WeightStatistics, IndependentKernelsAreNearlyUncorrelated) {
  std::mt19937_64 r1(11), r2(12);
  const auto a = WeightSet<float>::initialize(BaseNetConfig{}, r1);
  const auto b = WeightSet<float>::initialize(BaseNetConfig{}, r2);
  const WeightStats s = weight_statistics(a, b);
  int checked = 0;
  for (const auto& l : s.layers) {
    if (a.layer(l.layer).kernel.numel() < 10000) continue;
    EXPECT_LT(std::abs(*l.correlation), 0.05) << "layer " << l.layer;
    ++checked;
  }
  EXPECT_GE(checked, 15);
  const auto j = nlohmann::json::parse(s.to_json());
  EXPECT_EQ(j.at("layers").size(), 20u);
  EXPECT_TRUE(j.at("layers")[0].contains("var_b"));
}

TEST(WeightStatistics, DifferentArchitecturesAreRejected) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(weight_statistics(WeightSet<double>::initialize(BaseNetConfig::scaled(8, 4), rng),
                                 WeightSet<double>::initialize(BaseNetConfig::scaled(10, 4), rng)),
               DimensionError);
}

TEST(Multipath, AffineFormOfHandSetPredictor) {
  BaseNetConfig c = single_conv();
  c.input_channels = 1;
  c.output_channels = 1;
  c.channels = 1;
  HyperConfig hyper;
  hyper.input_dim = 1;
  std::mt19937_64 rng(1);
  auto net = WeightLearningNet<double>::initialize(c, hyper, rng);
  auto& st = net.predictors()[0].stages[0];
  for (Index i = 0; i < 9; ++i) {
    st.weight.mutable_values()[i] = 0.5 * static_cast<double>(i);
    st.bias.mutable_values()[i] = 1.0;
  }
  const auto [a, b] = affine_form(net, 0);
  EXPECT_EQ(a.shape(), (Shape{9, 1}));
  EXPECT_EQ(a.values()[4], 2.0);
  EXPECT_EQ(b.values()[4], 1.0);
  // gamma 2 on a unit impulse picks the centre tap: 2 * 2 + 1.
  const Tensor<double> x = Tensor<double>::from_list({1, 1, 1, 1}, {1.0});
  const auto out = multipath_expand(a, b, Tensor<double>::from_list({1}, {2.0}), x, layer_spec(c, 1));
  EXPECT_NEAR(out.item(), 5.0, 1e-12);
  std::mt19937_64 vr(2);
  EXPECT_TRUE(verify_multipath(net, 10, 1e-12, vr).passed());
}

TEST(Multipath, SingleStageNetsPass) {
  std::mt19937_64 rng(13);
  HyperConfig hyper;
  hyper.input_dim = 2;
  const BaseNetConfig c = BaseNetConfig::scaled(8, 4);
  const auto netd = WeightLearningNet<double>::initialize(c, hyper, rng);
  const auto rd = verify_multipath(netd, 30, 1e-10, rng);
  EXPECT_TRUE(rd.passed()) << rd.to_json();
  const auto rf = verify_multipath(netd.cast<float>(), 30, 1e-5, rng);
  EXPECT_TRUE(rf.passed()) << rf.to_json();
  EXPECT_EQ(rf.trials, 30);
}

TEST(Multipath, PartialSlotsPass) {
  std::mt19937_64 rng(14);
  HyperConfig hyper;
  hyper.slots = LearnedSlotSpec::conv_channel1_at(5);
  const auto net = WeightLearningNet<double>::initialize(BaseNetConfig::scaled(8, 4), hyper, rng);
  EXPECT_TRUE(verify_multipath(net, 10, 1e-10, rng).passed());
}

TEST(Multipath, HiddenReluIsReportedAsViolation) {
  std::mt19937_64 rng(15);
  HyperConfig hyper;
  hyper.input_dim = 2;
  hyper.depth = 2;
  hyper.hidden_relu = true;
  hyper.slots = LearnedSlotSpec::conv_at(5);
  const auto net = WeightLearningNet<double>::initialize(BaseNetConfig::scaled(8, 4), hyper, rng);
  const auto r = verify_multipath(net, 20, 1e-10, rng);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.worst_error, 1e-6);
  EXPECT_EQ(r.worst_slot, "layer05.kernel");

  hyper.hidden_relu = false;
  const auto linear = WeightLearningNet<double>::initialize(BaseNetConfig::scaled(8, 4), hyper, rng);
  EXPECT_TRUE(verify_multipath(linear, 20, 1e-10, rng).passed());
}

TEST(Multipath, NormOnlyNetIsRejected) {
  std::mt19937_64 rng(16);
  HyperConfig hyper;
  hyper.slots = LearnedSlotSpec::norm_at(7);
  const auto net = WeightLearningNet<double>::initialize(BaseNetConfig::scaled(8, 4), hyper, rng);
  EXPECT_THROW(verify_multipath(net, 5, 1e-10, rng), ContractViolation);
}

TEST(Interpolation, SeenGammaHasZeroGapAndRangeIsEnforced) {
  std::mt19937_64 rng(17);
  const auto net = WeightLearningNet<float>::initialize(BaseNetConfig::scaled(8, 4), HyperConfig{}, rng);
  const auto images = synthetic_corpus(2, 16, 3);
  const OperatorSpec noise = find_operator("noise");
  const auto r = interpolation_eval(net, noise, {15.0, 50.0, 30.0}, {30.0, 40.0}, images);
  ASSERT_EQ(r.gaps.size(), 2u);
  EXPECT_EQ(r.gaps[0].gap, 0.0);
  EXPECT_EQ(r.gaps[1].lower_gamma, 30.0);
  EXPECT_EQ(r.gaps[1].upper_gamma, 50.0);
  const double lo = r.seen.find("noise", {30.0}).psnr, hi = r.seen.find("noise", {50.0}).psnr;
  EXPECT_NEAR(r.gaps[1].interpolated_psnr, 0.5 * lo + 0.5 * hi, 1e-12);
  EXPECT_NEAR(r.gaps[1].gap, r.gaps[1].psnr - r.gaps[1].interpolated_psnr, 1e-12);
  EXPECT_EQ(r.seen.entries.size(), 3u);
  EXPECT_THROW(interpolation_eval(net, noise, {15.0, 30.0}, {40.0}, images), ContractViolation);
  EXPECT_THROW(interpolation_eval(net, noise, {20.0, 30.0}, {15.0}, images), ContractViolation);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("gaps").size(), 2u);
}

TEST(CountReport, DefaultNetMatchesPublishedSizes) {
  HyperConfig hyper;
  hyper.input_dim = 2;
  const CountReport r = count_report(BaseNetConfig{}, hyper);
  EXPECT_EQ(r.conv, 696256);
  EXPECT_EQ(r.norm, 2432);
  EXPECT_EQ(r.fc, 2088768);
  EXPECT_EQ(r.total(), 2091200);
  hyper.slots = LearnedSlotSpec::norm_at(19);
  EXPECT_EQ(count_report(BaseNetConfig{}, hyper).fc, 384);
  hyper.input_dim = 0;
  EXPECT_THROW(count_report(BaseNetConfig{}, hyper), ContractViolation);
}

TEST(CountReport, MatchesEnumerationOnRandomConfigs) {
  std::mt19937_64 rng(18);
  const LearnedSlotSpec specs[] = {LearnedSlotSpec::all_conv(), LearnedSlotSpec::all_norm(),
                                   LearnedSlotSpec::conv_at(5), LearnedSlotSpec::norm_at(2),
                                   LearnedSlotSpec::conv_channel2_at(4)};
  for (int t = 0; t < 20; ++t) {
    const BaseNetConfig c = BaseNetConfig::scaled(8 + 2 * static_cast<int>(rng() % 3), 2 + static_cast<int>(rng() % 6));
    HyperConfig hyper;
    hyper.slots = specs[t % 5];
    hyper.input_dim = 1 + static_cast<int>(rng() % 3);
    const auto net = WeightLearningNet<float>::initialize(c, hyper, rng);
    Index conv = 0, norm = 0;
    for (const SlotRef& s : net.shared().slots()) {
      const Index n = net.shared().slot(s).numel();
      (s.kind == SlotKind::kernel || s.kind == SlotKind::bias ? conv : norm) += n;
    }
    const CountReport r = count_report(c, hyper);
    EXPECT_EQ(r.conv, conv);
    EXPECT_EQ(r.norm, norm);
    EXPECT_EQ(r.fc, net.hyper_scalar_count());
    EXPECT_EQ(r.predicted, net.predicted_scalar_count());
    EXPECT_EQ(r.shared + r.predicted, conv + norm);
  }
}
