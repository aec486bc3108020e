// Acceptance suite A1-A10. Prints one PASS/FAIL line per criterion, with
// indented detail lines below it.
//
//   acceptance [--only A1,A5] [--expect-fail A6]
//
// The exit status is 0 when the failing criteria are exactly the ones named
// with --expect-fail. A criterion listed there that passes is an error too.

#include "dlf/analysis.hpp"
#include "dlf/checkpoint.hpp"
#include "dlf/errors.hpp"
#include "operator_oracles.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace dlf;
using dlf::testing::max_relative_error;
using dlf::testing::numeric_gradient;
using dlf::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome a1_parameter_counts() {
  const Stopwatch clock;
  const ParameterCount base = count_parameters(BaseNetConfig{});
  HyperConfig hyper;
  hyper.slots = LearnedSlotSpec::all_conv();
  hyper.input_dim = 2;
  const CountReport r = count_report(BaseNetConfig{}, hyper);
  const double t = clock.seconds();
  const bool ok = base.conv == 696256 && base.norm == 2432 && r.fc == 2088768 && r.total() == 2091200 && t < 1.0;
  return {ok,
          "conv " + std::to_string(base.conv) + ", norm " + std::to_string(base.norm) + ", fc " +
              std::to_string(r.fc) + ", total " + std::to_string(r.total()) + " (time bound 1 s)",
          {}};
}

// ---------------------------------------------------------------------------

// Worst relative error between the tape gradient and central differences of
// sum(weights * f()) over every input.
double gradient_error(const std::vector<Tensor<double>*>& inputs, const std::function<Tensor<double>()>& f,
                      std::mt19937_64& rng, double step = 1e-5) {
  const Tensor<double> weights = random_tensor(f().shape(), rng);
  for (auto* in : inputs) {
    in->zero_grad();
    in->set_requires_grad(true);
  }
  {
    Tape<double> tape;
    tape.backward(sum(mul(f(), weights)));
  }
  std::vector<Eigen::ArrayXd> analytic;
  for (auto* in : inputs) {
    analytic.push_back(in->grad());
    in->set_requires_grad(false);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Eigen::ArrayXd numeric =
        numeric_gradient(*inputs[i], [&] { return (f().values() * weights.values()).sum(); }, step);
    worst = std::max(worst, max_relative_error(analytic[i], numeric));
  }
  return worst;
}

double composite_gradient_error(std::uint64_t seed) {
  BaseNetConfig base;
  base.depth = 2;
  base.channels = 3;
  base.downsample_layer = 0;
  base.upsample_layer = 0;
  base.residual_first = 0;
  base.norm_after = {1};
  HyperConfig hyper;
  hyper.slots = LearnedSlotSpec::conv_at(2);
  std::mt19937_64 rng(seed);
  auto net = WeightLearningNet<double>::initialize(base, hyper, rng);
  auto& stage = net.predictors().at(0).stages.at(0);
  stage.weight.mutable_values() = random_tensor<double>(stage.weight.shape(), rng, -0.3, 0.3).values();

  std::uniform_real_distribution<double> sigma(0.5, 2.0);
  const double s = sigma(rng);
  const Image clean = dlf::testing::random_image(8, 8, rng);
  const TrainingPair pair = make_pair(find_operator("gaussian"), {s}, clean);
  const auto [input, edge] = network_tensors<double>(pair.input);
  const Tensor<double> target = image_tensor<double>(pair.target);
  const ParameterVector gamma = normalize_gamma(find_operator("gaussian"), {s});
  return gradient_error(
      {&stage.weight, &stage.bias},
      [&] { return l2_loss(forward_base(base, net.predict_weights(gamma), input, edge), target); }, rng, 1e-6);
}

Outcome a2_gradients() {
  const Stopwatch clock;
  std::mt19937_64 rng(2);
  constexpr int kInstances = 20;
  std::vector<std::pair<std::string, double>> worst;
  auto run = [&](const std::string& name, const std::function<double(int)>& instance) {
    double w = 0.0;
    for (int i = 0; i < kInstances; ++i) w = std::max(w, instance(i));
    worst.emplace_back(name, w);
  };

  run("conv2d", [&](int i) {
    auto x = random_tensor({2, 2, 5, 6}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    const Conv2dOptions opt{1 + i % 2, 1 + (i / 2) % 2, i % 3};
    return gradient_error({&x, &k}, [&] { return conv2d(x, k, opt); }, rng);
  });
  run("conv_transpose2d", [&](int i) {
    auto x = random_tensor({1, 2, 3, 4}, rng);
    auto k = random_tensor({2, 3, 4, 4}, rng);
    return gradient_error({&x, &k}, [&] { return conv_transpose2d(x, k, 1 + i % 2, i % 2); }, rng);
  });
  run("affine", [&](int) {
    auto x = random_tensor({4}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto b = random_tensor({3}, rng);
    return gradient_error({&x, &w, &b}, [&] { return affine(x, w, b); }, rng);
  });
  run("instance_norm", [&](int) {
    auto x = random_tensor({2, 2, 3, 4}, rng);
    auto sc = random_tensor({2}, rng, 0.5, 1.5);
    auto sh = random_tensor({2}, rng);
    return gradient_error({&x, &sc, &sh}, [&] { return instance_norm(x, sc, sh); }, rng);
  });
  run("relu", [&](int) {
    auto x = random_tensor({3, 7}, rng);
    return gradient_error({&x}, [&] { return relu(x); }, rng);
  });
  run("l2_loss", [&](int) {
    auto p = random_tensor({1, 3, 4, 4}, rng);
    auto q = random_tensor({1, 3, 4, 4}, rng);
    return gradient_error({&p, &q}, [&] { return l2_loss(p, q); }, rng);
  });
  double composite = 0.0;
  for (int i = 0; i < kInstances; ++i) composite = std::max(composite, composite_gradient_error(100 + i));

  const double t = clock.seconds();
  bool ok = composite <= 1e-3 && t < 60.0;
  Outcome out;
  for (const auto& [name, w] : worst) {
    ok = ok && w <= 1e-4;
    out.details.push_back(name + ": worst relative error " + fmt(w, 3) + " (bound 1e-4)");
  }
  out.details.push_back("hypernet + base composite: worst relative error " + fmt(composite, 3) + " (bound 1e-3)");
  out.pass = ok;
  out.summary = std::to_string(worst.size() + 1) + " gradient families x " + std::to_string(kInstances) +
                " instances (time bound 60 s)";
  return out;
}

// ---------------------------------------------------------------------------

HyperConfig hyper_of(LearnedSlotSpec slots, int m, int depth = 1, bool relu = false) {
  HyperConfig h;
  h.slots = slots;
  h.input_dim = m;
  h.depth = depth;
  h.hidden_relu = relu;
  return h;
}

Outcome a3_multipath() {
  const Stopwatch clock;
  std::mt19937_64 rng(3);
  Outcome out;
  bool ok = true;
  const std::vector<std::pair<BaseNetConfig, HyperConfig>> nets{
      {BaseNetConfig{}, hyper_of(LearnedSlotSpec::all_conv(), 2)},
      {BaseNetConfig::scaled(8, 4), hyper_of(LearnedSlotSpec::conv_channel1_at(5), 1)},
  };
  for (const auto& [base, hyper] : nets) {
    const auto net = WeightLearningNet<float>::initialize(base, hyper, rng);
    const MultipathReport f32 = verify_multipath(net, 100, 1e-5, rng);
    const MultipathReport f64 = verify_multipath(net.cast<double>(), 100, 1e-10, rng);
    ok = ok && f32.passed() && f64.passed();
    out.details.push_back("depth " + std::to_string(base.depth) + " " + hyper.slots.to_string() + ": 32-bit worst " +
                          fmt(f32.worst_error, 3) + (f32.passed() ? " pass" : " FAIL") + ", 64-bit worst " +
                          fmt(f64.worst_error, 3) + (f64.passed() ? " pass" : " FAIL"));
  }
  const auto relu_net =
      WeightLearningNet<float>::initialize(BaseNetConfig::scaled(8, 4), hyper_of(LearnedSlotSpec::all_conv(), 2, 2, true), rng);
  const MultipathReport nonlinear = verify_multipath(relu_net, 100, 1e-5, rng);
  ok = ok && !nonlinear.passed();
  out.details.push_back("two-stage relu weight net: " + std::to_string(nonlinear.failures) + "/" +
                        std::to_string(nonlinear.trials) + " trials violate the identity, worst " +
                        fmt(nonlinear.worst_error, 3) + " at " + nonlinear.worst_slot);
  const double t = clock.seconds();
  ok = ok && t < 30.0;
  out.pass = ok;
  out.summary = "multi-path identity on 2 single-stage nets, violation on the relu variant (time bound 30 s)";
  return out;
}

// ---------------------------------------------------------------------------

Eigen::ArrayXd flatten(const WeightSet<double>& w) {
  std::vector<double> v;
  for (const SlotRef& s : w.slots()) {
    const auto& t = w.slot(s);
    v.insert(v.end(), t.data(), t.data() + t.numel());
  }
  return Eigen::Map<Eigen::ArrayXd>(v.data(), static_cast<Index>(v.size()));
}

Outcome a4_affinity() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 2.0), t(0.0, 1.0);
  const auto net = WeightLearningNet<double>::initialize(BaseNetConfig{}, hyper_of(LearnedSlotSpec::all_conv(), 2), rng);
  double worst = 0.0;
  constexpr int kTrials = 50;
  for (int i = 0; i < kTrials; ++i) {
    const Tensor<double> ga = Tensor<double>::from_list({2}, {u(rng), u(rng)});
    const Tensor<double> gb = Tensor<double>::from_list({2}, {u(rng), u(rng)});
    const double a = t(rng);
    const Tensor<double> mix({2}, a * ga.values() + (1 - a) * gb.values());
    const Eigen::ArrayXd lhs = flatten(net.predict_weights(mix));
    const Eigen::ArrayXd rhs = a * flatten(net.predict_weights(ga)) + (1 - a) * flatten(net.predict_weights(gb));
    worst = std::max(worst, max_relative_error(lhs, rhs));
  }
  return {worst <= 1e-6,
          std::to_string(kTrials) + " convex combinations on the default all-conv net, worst relative error " +
              fmt(worst, 3) + " (bound 1e-6)",
          {}};
}

// ---------------------------------------------------------------------------

Outcome a5_cheap_tuning() {
  std::mt19937_64 rng(5);
  auto net = WeightLearningNet<float>::initialize(BaseNetConfig{}, hyper_of(LearnedSlotSpec::norm_at(19), 1), rng);
  for (auto& p : net.predictors()) {
    p.stages[0].weight = random_tensor<float>(p.stages[0].weight.shape(), rng, -0.5, 0.5);
  }
  const auto [image, edge] = network_tensors<float>(synthetic_corpus(4, 256, 5)[2]);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto gamma = [&] { return Tensor<float>::full({1}, u(rng)); };

  const ActivationCache<float> probe = build_cache(net, image, edge);
  int identical = 0, recomputed = 0;
  for (int i = 0; i < 10; ++i) {
    const Tensor<float> g = gamma();
    const auto [cached, n] = cached_forward(net, probe, g);
    const Tensor<float> full = forward_base(net.base_config(), net.predict_weights(g), image, edge);
    identical += cached.shape() == full.shape() && (cached.values() == full.values()).all();
    recomputed = n;
  }

  constexpr int kSweep = 50;
  std::vector<Tensor<float>> sweep;
  for (int i = 0; i < kSweep; ++i) sweep.push_back(Tensor<float>::full({1}, static_cast<float>(i) / (kSweep - 1)));
  double checksum = 0.0;
  const Stopwatch uncached_clock;
  for (const auto& g : sweep) {
    checksum += forward_base(net.base_config(), net.predict_weights(g), image, edge).values()[0];
  }
  const double uncached = uncached_clock.seconds();
  const Stopwatch cached_clock;
  const ActivationCache<float> cache = build_cache(net, image, edge);
  for (const auto& g : sweep) checksum -= cached_forward(net, cache, g).first.values()[0];
  const double cached = cached_clock.seconds();

  const double ratio = cached / uncached;
  return {identical == 10 && recomputed == 2 && ratio <= 1.0 / 3.0 && checksum == 0.0,
          std::to_string(identical) + "/10 cached outputs bit-identical, " + std::to_string(recomputed) +
              " layers recomputed; 50-gamma sweep at 256x256: cached " + fmt(cached, 3) + " s vs full " +
              fmt(uncached, 3) + " s (ratio " + fmt(ratio, 3) + ", bound 0.333)",
          {}};
}

// ---------------------------------------------------------------------------

Outcome a6_oracles() {
  using namespace dlf::testing;
  Outcome out;
  std::mt19937_64 rng(6);

  // L0: objective after every outer iteration, starting from S = I.
  int runs = 0, increasing_runs = 0, steps = 0, increases = 0;
  double worst_rise = 0.0;
  for (int n = 0; n < 5; ++n) {
    const Image img = n % 2 == 0 ? random_image(32, 32, rng) : blocky_image(32, 32, rng);
    for (double lambda : {0.002, 0.02, 0.2}) {
      double previous = l0_objective(img.planes(), img, lambda);
      bool rose = false;
      l0_smooth(img, lambda, [&](int, double, const Planes& s) {
        const double now = l0_objective(s, img, lambda);
        ++steps;
        if (now > previous * (1 + 1e-12)) {
          ++increases;
          rose = true;
          worst_rise = std::max(worst_rise, (now - previous) / previous);
        }
        previous = now;
      });
      ++runs;
      increasing_runs += rose;
    }
  }
  const bool l0_ok = increases == 0;
  out.details.push_back(std::string(l0_ok ? "pass" : "FAIL") + " L0 objective non-increasing: rose in " +
                        std::to_string(increases) + " of " + std::to_string(steps) + " iterations, " +
                        std::to_string(increasing_runs) + " of " + std::to_string(runs) +
                        " runs, worst relative rise " + fmt(worst_rise, 3));

  double wls_worst = 0.0;
  for (int n = 0; n < 2; ++n) {
    const Image img = n == 0 ? random_image(32, 32, rng) : blocky_image(32, 32, rng);
    for (double lambda : {0.1, 1.0, 10.0}) {
      wls_worst = std::max(wls_worst, wls_relative_residual(img, wls_smooth(img, lambda), lambda));
    }
  }
  const Image probe = random_image(16, 16, rng);
  const bool wls_identity = wls_smooth(probe, 0.0) == probe;
  const bool wls_ok = wls_worst <= 1e-6 && wls_identity;
  out.details.push_back(std::string(wls_ok ? "pass" : "FAIL") + " WLS relative residual " + fmt(wls_worst, 3) +
                        " (bound 1e-6), lambda 0 identity " + (wls_identity ? "exact" : "broken"));

  double rgf_worst = 0.0;
  const Image small = random_image(8, 8, rng);
  for (double sigma_s : {1.0, 2.5}) {
    const Image expected = brute_joint_bilateral(small, direct_gaussian(small.planes(), sigma_s), sigma_s, 0.1);
    rgf_worst = std::max(rgf_worst, max_abs_diff(rgf_smooth(small, sigma_s, 0.1, 1), expected));
  }
  const bool rgf_ok = rgf_worst <= 1e-6;
  out.details.push_back(std::string(rgf_ok ? "pass" : "FAIL") + " RGF first iteration vs joint bilateral on 8x8: " +
                        fmt(rgf_worst, 3) + " (bound 1e-6)");

  const Image spike = Image::from_function(1, 3, [](int, Index, Index x) { return x == 1 ? 1.0 : 0.0; });
  const double centre = edge_map(spike).values()[1];
  const bool edge_ok = centre == 1.5;
  out.details.push_back(std::string(edge_ok ? "pass" : "FAIL") + " edge map centre value " + fmt(centre, 17) +
                        " (expected 1.5)");

  double noise_worst = 0.0;
  for (double sigma : {15.0, 25.0, 50.0}) {
    const Planes noise = gaussian_noise_field(192, 192, sigma, static_cast<std::uint64_t>(sigma));
    double s = 0, s2 = 0;
    Index count = 0;
    for (const auto& p : noise) {
      s += p.sum();
      s2 += p.square().sum();
      count += p.size();
    }
    const double mean = s / static_cast<double>(count);
    const double sd = std::sqrt(s2 / static_cast<double>(count) - mean * mean);
    noise_worst = std::max(noise_worst, std::abs(sd / (sigma / 255.0) - 1.0));
  }
  const bool noise_ok = noise_worst <= 0.05;
  out.details.push_back(std::string(noise_ok ? "pass" : "FAIL") + " noise empirical sigma off by " +
                        fmt(100 * noise_worst, 3) + "% at most (bound 5%)");

  const int failed = !l0_ok + !wls_ok + !rgf_ok + !edge_ok + !noise_ok;
  out.pass = failed == 0;
  out.summary = "operator oracles: " + std::to_string(5 - failed) + "/5 checks pass";
  return out;
}

// ---------------------------------------------------------------------------

struct GaussianSetup {
  std::vector<Image> corpus = synthetic_corpus(32, 96, 7);
  std::vector<Image> eval_images;

  GaussianSetup() {
    // Held-out images without the linear ramps, which Gaussian blur leaves
    // almost unchanged.
    const auto all = synthetic_corpus(16, 64, 99);
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (i % 4 != 0) eval_images.push_back(all[i]);
    }
  }

  TrainConfig config(std::vector<std::vector<double>> fixed) const {
    TrainConfig cfg;
    cfg.operators = {{find_operator("gaussian"), std::move(fixed)}};
    cfg.base = BaseNetConfig::scaled(8, 16);
    cfg.base.input_skip = true;
    cfg.hyper.input_dim = 1;
    cfg.patch_size = 64;
    cfg.steps = 3000;
    return cfg;
  }

  std::vector<EvalItem> eval_set(const std::vector<std::vector<double>>& gammas) const {
    return make_eval_set(eval_images, find_operator("gaussian"), gammas, static_cast<int>(eval_images.size()), 64);
  }
};

Outcome a7_training() {
  const Stopwatch clock;
  const GaussianSetup setup;
  const auto items = setup.eval_set({{1.0}});
  const auto joint = train<float>(setup.config({}), setup.corpus);
  const auto single = train<float>(setup.config({{1.0}}), setup.corpus);
  const EvalEntry a = evaluate(joint.net, items, false).entries.at(0);
  const EvalEntry b = evaluate(single.net, items, false).entries.at(0);
  const double t = clock.seconds();
  const bool ok = std::abs(a.psnr - b.psnr) <= 2.0 && a.psnr >= a.input_psnr + 2.0 && b.psnr >= b.input_psnr + 2.0 &&
                  t < 1800.0;
  return {ok,
          "PSNR at sigma 1.0: random-sigma model " + fmt(a.psnr) + " dB, sigma-1.0 model " + fmt(b.psnr) +
              " dB, input " + fmt(a.input_psnr) + " dB (gap " + fmt(std::abs(a.psnr - b.psnr), 3) +
              " dB, bound 2.0; margin bound 2.0 dB)",
          {}};
}

Outcome a8_interpolation() {
  const GaussianSetup setup;
  const auto net = train<float>(setup.config({{0.5}, {1.0}, {2.0}}), setup.corpus).net;
  const InterpolationReport r =
      interpolation_eval(net, find_operator("gaussian"), {0.5, 1.0, 2.0}, {1.5}, setup.eval_images);
  const GapEntry& g = r.gaps.at(0);
  const double diff = g.psnr - g.neighbour_mean;
  Outcome out{std::abs(diff) <= 1.5,
              "unseen sigma 1.5: " + fmt(g.psnr) + " dB vs neighbour mean " + fmt(g.neighbour_mean) +
                  " dB (difference " + fmt(diff, 3) + ", bound 1.5)",
              {}};
  for (const auto& e : r.seen.entries) out.details.push_back("seen sigma " + fmt(e.gamma.at(0)) + ": " + fmt(e.psnr) + " dB");
  return out;
}

// ---------------------------------------------------------------------------

Outcome a9_erf_containment() {
  std::mt19937_64 rng(9);
  Outcome out;
  int contained = 0, argmax_in = 0;
  double leak_worst = 0.0;
  constexpr int kNets = 10;
  for (int t = 0; t < kNets; ++t) {
    const bool with_norm = t % 2 == 1;
    const BaseNetConfig c = dlf::testing::random_architecture(rng, with_norm);
    const auto net = WeightLearningNet<double>::initialize(c, HyperConfig{}, rng);
    const Index size = 24 + 8 * static_cast<Index>(rng() % 2);
    const Image img = dlf::testing::random_image(size, size, rng);
    const PixelPoint p{static_cast<Index>(rng() % size), static_cast<Index>(rng() % size)};
    const ErfMask erf = effective_receptive_field(net, find_operator("gaussian"), {1.0}, img, p);
    const PixelRect rf = theoretical_receptive_field(c, size, size, p);
    const PixelRect footprint = theoretical_receptive_field(c, size, size, p, false);

    bool inside = true;
    double leak = 0.0;
    for (Index y = 0; y < size; ++y) {
      for (Index x = 0; x < size; ++x) {
        if (erf.mask(y, x) && !rf.contains(y, x)) inside = false;
        if (!footprint.contains(y, x)) leak = std::max(leak, erf.magnitude(y, x));
      }
    }
    const bool peak = !erf.degenerate && erf.mask(erf.argmax.y, erf.argmax.x);
    contained += inside;
    argmax_in += peak;
    if (with_norm) leak_worst = std::max(leak_worst, leak / erf.grad_max);
    out.details.push_back("depth " + std::to_string(c.depth) + ", " + std::to_string(c.channels) + " ch, dilation " +
                          std::to_string(c.dilation) + (with_norm ? ", norm" : ", no norm") + ": " +
                          std::to_string(erf.count()) + " px, field " + std::to_string(rf.height()) + "x" +
                          std::to_string(rf.width()) + (inside ? " contained" : " ESCAPES") +
                          (peak ? "" : ", peak outside mask"));
  }
  out.details.push_back("normed nets: gradient outside the conv footprint reaches " + fmt(100 * leak_worst, 3) +
                        "% of grad_max");
  out.pass = contained == kNets && argmax_in == kNets;
  out.summary = std::to_string(contained) + "/" + std::to_string(kNets) + " masks inside the theoretical field, " +
                std::to_string(argmax_in) + "/" + std::to_string(kNets) + " peaks inside their mask";
  return out;
}

// ---------------------------------------------------------------------------

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome a10_checkpoint() {
  TrainConfig cfg;
  cfg.operators = {{find_operator("gaussian"), {}}};
  cfg.base = BaseNetConfig::scaled(8, 8);
  cfg.base.input_skip = true;
  cfg.patch_size = 32;
  cfg.steps = 100;
  const auto items =
      make_eval_set(synthetic_corpus(4, 32, 10), find_operator("gaussian"), {{0.5}, {1.0}, {2.0}}, 4, 32);
  const TrainResult<float> trained = train<float>(cfg, synthetic_corpus(8, 48, 11), items);
  const EvalReport& before = trained.reports.back();

  const auto dir = std::filesystem::temp_directory_path();
  const std::string first = (dir / "dlf_acceptance_a.dlf").string();
  const std::string second = (dir / "dlf_acceptance_b.dlf").string();
  save_checkpoint(first, trained.net, {find_operator("gaussian")});
  const Checkpoint loaded = load_checkpoint(first);
  save_checkpoint(second, loaded.net, loaded.operators);
  const auto bytes_a = read_bytes(first), bytes_b = read_bytes(second);
  std::filesystem::remove(first);
  std::filesystem::remove(second);

  const bool same_bytes = !bytes_a.empty() && bytes_a == bytes_b;
  const bool same_report = evaluate(loaded.net, items, loaded.joint(), before.step) == before;
  return {same_bytes && same_report,
          std::string("save-load-save ") + (same_bytes ? "byte-identical" : "DIFFERS") + " (" +
              std::to_string(bytes_a.size()) + " bytes), evaluation report " +
              (same_report ? "reproduced exactly" : "DIFFERS"),
          {}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria A1-A10"};
  std::vector<std::string> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1_parameter_counts}, {"A2", a2_gradients},       {"A3", a3_multipath},
      {"A4", a4_affinity},         {"A5", a5_cheap_tuning},    {"A6", a6_oracles},
      {"A7", a7_training},         {"A8", a8_interpolation},   {"A9", a9_erf_containment},
      {"A10", a10_checkpoint},
  };
  const std::set<std::string> selected(only.begin(), only.end());
  const std::set<std::string> expected(expect_fail.begin(), expect_fail.end());

  int unexpected = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const Stopwatch clock;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), {}};
    }
    const bool known = expected.count(id) > 0;
    if (o.pass == known) ++unexpected;
    std::cout << std::left << std::setw(4) << id << (o.pass ? "PASS " : "FAIL ") << o.summary
              << (known ? (o.pass ? " [expected to fail]" : " [known failure]") : "") << " (" << fmt(clock.seconds(), 3)
              << " s)" << std::endl;
    for (const auto& d : o.details) std::cout << "      " << d << "\n";
  }
  std::cout << (unexpected == 0 ? "acceptance: results as expected" : "acceptance: unexpected results") << std::endl;
  return unexpected == 0 ? 0 : 1;
}
