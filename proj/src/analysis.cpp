#include "dlf/analysis.hpp"

#include "dlf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace dlf {

namespace {

using json = nlohmann::json;

Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

struct Span {
  Index lo, hi;
};

Span hull(Span a, Span b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

Span clip(Span s, Index size) { return {std::max<Index>(s.lo, 0), std::min(s.hi, size - 1)}; }

Index layer_output_size(const LayerSpec& s, Index in) {
  if (s.kind == LayerKind::deconv) return (in - 1) * s.stride - 2 * s.padding + s.kernel;
  return (in + 2 * s.padding - s.dilation * (s.kernel - 1) - 1) / s.stride + 1;
}

// Input positions read by output positions [a, b] of one layer.
Span layer_input_span(const LayerSpec& s, Span out, Index in_size) {
  Span in;
  if (s.kind == LayerKind::deconv) {
    in = {ceil_div(out.lo + s.padding - (s.kernel - 1), s.stride), floor_div(out.hi + s.padding, s.stride)};
  } else {
    in = {out.lo * s.stride - s.padding, out.hi * s.stride - s.padding + (s.kernel - 1) * s.dilation};
  }
  return clip(in, in_size);
}

Span axis_field(const BaseNetConfig& config, Index size, Index p, bool through_norm) {
  std::vector<Index> sizes{size};  // sizes[i]: spatial size entering layer i + 1
  for (int i = 1; i <= config.depth; ++i) sizes.push_back(layer_output_size(layer_spec(config, i), sizes.back()));
  Span span{p, p};
  std::optional<Span> skip;
  for (int i = config.depth; i >= 1; --i) {
    const LayerSpec s = layer_spec(config, i);
    if (s.residual == ResidualRole::block_second) skip = span;
    if (s.norm && through_norm) span = {0, sizes[static_cast<std::size_t>(i)] - 1};
    span = layer_input_span(s, span, sizes[static_cast<std::size_t>(i - 1)]);
    if (s.residual == ResidualRole::block_first && skip) {
      span = hull(span, *skip);
      skip.reset();
    }
  }
  if (config.input_skip) span = hull(span, {p, p});
  return span;
}

json gamma_json(const std::vector<double>& g) { return json(g); }

}  // namespace

PixelRect theoretical_receptive_field(const BaseNetConfig& config, Index height, Index width, PixelPoint p,
                                      bool through_norm_statistics) {
  config.validate();
  if (p.y < 0 || p.y >= height || p.x < 0 || p.x >= width) {
    throw ContractViolation("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside the image");
  }
  const Span ys = axis_field(config, height, p.y, through_norm_statistics);
  const Span xs = axis_field(config, width, p.x, through_norm_statistics);
  return {ys.lo, xs.lo, ys.hi, xs.hi};
}

template <typename Scalar>
ErfMask effective_receptive_field(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec,
                                  const std::vector<double>& gamma_raw, const Image& image, PixelPoint p, bool joint) {
  const Index h = image.height(), w = image.width();
  if (p.y < 0 || p.y >= h || p.x < 0 || p.x >= w) {
    throw ContractViolation("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside the image");
  }
  auto [input, edge] = network_tensors<Scalar>(image);
  input.set_requires_grad(true);
  edge.set_requires_grad(true);
  const ParameterVector gamma = network_gamma(spec, gamma_raw, joint);
  {
    Tape<Scalar> tape;
    const Tensor<Scalar> out = forward_base(net.base_config(), net.predict_weights(gamma), input, edge);
    typename Tensor<Scalar>::Array seed = Tensor<Scalar>::Array::Zero(out.numel());
    for (Index c = 0; c < out.dim(1); ++c) seed[(c * h + p.y) * w + p.x] = Scalar(1);
    tape.backward(out, seed);
  }

  ErfMask erf;
  erf.point = p;
  erf.gamma = gamma_raw;
  erf.magnitude = Plane::Zero(h, w);
  const Eigen::ArrayXd gi = input.grad().template cast<double>(), ge = edge.grad().template cast<double>();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double m = std::abs(ge[y * w + x]);
      for (Index c = 0; c < 3; ++c) m = std::max(m, std::abs(gi[(c * h + y) * w + x]));
      erf.magnitude(y, x) = m;
    }
  Index ay = 0, ax = 0;
  erf.grad_max = erf.magnitude.maxCoeff(&ay, &ax);
  erf.argmax = {ay, ax};
  erf.threshold = kErfThreshold * erf.grad_max;
  if (erf.grad_max == 0.0) {
    erf.degenerate = true;
    erf.mask = BoolPlane::Constant(h, w, false);
  } else {
    erf.mask = erf.magnitude > erf.threshold;
  }
  return erf;
}

Image erf_overlay(const Image& image, const ErfMask& erf) {
  if (erf.mask.rows() != image.height() || erf.mask.cols() != image.width()) {
    throw DimensionError("mask does not match the image");
  }
  Planes p = image.planes();
  const double colour[3] = {1.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] = erf.mask.select(colour[c], p[static_cast<std::size_t>(c)]);
  return Image(std::move(p));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
WeightStats weight_statistics(const WeightSet<Scalar>& a, const WeightSet<Scalar>& b) {
  if (a.depth() != b.depth()) {
    throw DimensionError("weight sets have " + std::to_string(a.depth()) + " and " + std::to_string(b.depth()) +
                         " layers");
  }
  WeightStats stats;
  for (int i = 1; i <= a.depth(); ++i) {
    const Tensor<Scalar>&ka = a.layer(i).kernel, &kb = b.layer(i).kernel;
    if (ka.shape() != kb.shape()) throw DimensionError("layer " + std::to_string(i) + " kernels differ in shape");
    const Eigen::ArrayXd x = ka.values().template cast<double>(), y = kb.values().template cast<double>();
    LayerStats s;
    s.layer = i;
    s.mean_a = x.mean();
    s.mean_b = y.mean();
    const Eigen::ArrayXd dx = x - s.mean_a, dy = y - s.mean_b;
    s.var_a = dx.square().mean();
    s.var_b = dy.square().mean();
    if (s.var_a > 0.0 && s.var_b > 0.0) {
      const double r = (dx * dy).mean() / std::sqrt(s.var_a * s.var_b);
      s.correlation = std::clamp(r, -1.0, 1.0);
    }
    stats.layers.push_back(s);
  }
  return stats;
}

std::string WeightStats::to_json() const {
  json rows = json::array();
  for (const auto& s : layers) {
    rows.push_back({{"layer", s.layer},
                    {"correlation", s.correlation ? json(*s.correlation) : json(nullptr)},
                    {"mean_a", s.mean_a},
                    {"mean_b", s.mean_b},
                    {"var_a", s.var_a},
                    {"var_b", s.var_b}});
  }
  return json{{"layers", rows}}.dump(2);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> affine_form(const WeightLearningNet<Scalar>& net, std::size_t predictor) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const SlotPredictor<Scalar>& pred = net.predictors().at(predictor);
  const Index m = net.hyper_config().input_dim;
  Matrix wa = Matrix::Identity(m, m);
  Vector ba = Vector::Zero(m);
  for (const auto& stage : pred.stages) {
    const Eigen::Map<const Matrix> w(stage.weight.data(), stage.weight.dim(0), stage.weight.dim(1));
    const Eigen::Map<const Vector> b(stage.bias.data(), stage.bias.dim(0));
    wa = w * wa;
    ba = w * ba + b;
  }

  const Tensor<Scalar>& shared = net.shared().slot(pred.region.slot);
  const Index n = shared.numel();
  typename Tensor<Scalar>::Array a = Tensor<Scalar>::Array::Zero(n * m);
  typename Tensor<Scalar>::Array b = shared.values();
  for (Index r = 0; r < pred.region.count; ++r) {
    const Index k = pred.region.whole() ? r : pred.region.indices[static_cast<std::size_t>(r)];
    for (Index j = 0; j < m; ++j) a[k * m + j] = wa(r, j);
    b[k] = ba[r];
  }
  return {Tensor<Scalar>({n, m}, std::move(a)), Tensor<Scalar>({n}, std::move(b))};
}

template <typename Scalar>
MultipathReport verify_multipath(const WeightLearningNet<Scalar>& net, int trials, double tolerance,
                                 std::mt19937_64& rng, Index size) {
  std::vector<std::size_t> conv_slots;
  for (std::size_t i = 0; i < net.predictors().size(); ++i)
    if (net.predictors()[i].region.slot.kind == SlotKind::kernel) conv_slots.push_back(i);
  if (conv_slots.empty()) throw ContractViolation("the net predicts no convolution kernels");
  if (trials < 1) throw ContractViolation("verify_multipath needs at least one trial");

  MultipathReport report;
  report.tolerance = tolerance;
  const Index m = net.hyper_config().input_dim;
  std::uniform_real_distribution<double> unit(0.0, 1.0), signed_unit(-1.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    const std::size_t pi = conv_slots[std::uniform_int_distribution<std::size_t>(0, conv_slots.size() - 1)(rng)];
    const SlotRef slot = net.predictors()[pi].region.slot;
    const LayerSpec layer = layer_spec(net.base_config(), slot.layer);

    typename Tensor<Scalar>::Array g(m);
    for (Index j = 0; j < m; ++j) g[j] = static_cast<Scalar>(unit(rng));
    const Tensor<Scalar> gamma({m}, g);
    typename Tensor<Scalar>::Array xv(layer.in_channels * size * size);
    for (Index j = 0; j < xv.size(); ++j) xv[j] = static_cast<Scalar>(signed_unit(rng));
    const Tensor<Scalar> x({1, layer.in_channels, size, size}, std::move(xv));

    const auto [a, b] = affine_form(net, pi);
    const Tensor<Scalar> paths = multipath_expand(a, b, gamma, x, layer);
    const Tensor<Scalar> direct = apply_layer_conv(x, net.predict_weights(gamma).slot(slot), layer);
    const double err = (paths.values() - direct.values()).abs().maxCoeff();

    ++report.trials;
    if (!(err <= tolerance)) ++report.failures;
    if (err > report.worst_error || std::isnan(err)) {
      report.worst_error = err;
      report.worst_slot = slot_name(slot);
    }
  }
  return report;
}

std::string MultipathReport::to_json() const {
  return json{{"trials", trials},         {"failures", failures},     {"tolerance", tolerance},
              {"worst_error", worst_error}, {"worst_slot", worst_slot}, {"passed", passed()}}
      .dump(2);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
InterpolationReport interpolation_eval(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec,
                                       std::vector<double> train_gammas, const std::vector<double>& test_gammas,
                                       const std::vector<Image>& clean, bool joint) {
  if (spec.arity() != 1) throw ContractViolation("interpolation study needs a single-parameter operator");
  if (train_gammas.empty() || test_gammas.empty() || clean.empty()) {
    throw ContractViolation("interpolation study needs train gammas, test gammas and images");
  }
  std::sort(train_gammas.begin(), train_gammas.end());
  train_gammas.erase(std::unique(train_gammas.begin(), train_gammas.end()), train_gammas.end());
  for (double g : test_gammas) {
    if (g < train_gammas.front() || g > train_gammas.back()) {
      throw ContractViolation("gamma " + std::to_string(g) + " lies outside the trained range [" +
                              std::to_string(train_gammas.front()) + ", " + std::to_string(train_gammas.back()) +
                              "]");
    }
  }
  auto items_for = [&](const std::vector<double>& gammas) {
    std::vector<EvalItem> items;
    for (double g : gammas) {
      check_gamma(spec, {g});
      for (std::size_t i = 0; i < clean.size(); ++i) items.push_back({spec, {g}, clean[i], eval_seed(i)});
    }
    return items;
  };

  InterpolationReport report;
  report.seen = evaluate(net, items_for(train_gammas), joint);
  report.unseen = evaluate(net, items_for(test_gammas), joint);
  for (double g : test_gammas) {
    GapEntry e;
    e.gamma = g;
    e.psnr = report.unseen.find(spec.name, {g}).psnr;
    const auto hi = std::lower_bound(train_gammas.begin(), train_gammas.end(), g);
    if (*hi == g) {
      e.lower_gamma = e.upper_gamma = g;
      e.interpolated_psnr = e.neighbour_mean = report.seen.find(spec.name, {g}).psnr;
    } else {
      e.lower_gamma = *(hi - 1);
      e.upper_gamma = *hi;
      const double lo_psnr = report.seen.find(spec.name, {e.lower_gamma}).psnr;
      const double hi_psnr = report.seen.find(spec.name, {e.upper_gamma}).psnr;
      const double t = (g - e.lower_gamma) / (e.upper_gamma - e.lower_gamma);
      e.interpolated_psnr = (1 - t) * lo_psnr + t * hi_psnr;
      e.neighbour_mean = 0.5 * (lo_psnr + hi_psnr);
    }
    e.gap = e.psnr - e.interpolated_psnr;
    report.gaps.push_back(e);
  }
  return report;
}

std::string InterpolationReport::to_json() const {
  auto entries = [](const EvalReport& r) {
    json out = json::array();
    for (const auto& e : r.entries) {
      out.push_back({{"operator", e.op}, {"gamma", gamma_json(e.gamma)}, {"psnr", e.psnr}, {"ssim", e.ssim}});
    }
    return out;
  };
  json g = json::array();
  for (const auto& e : gaps) {
    g.push_back({{"gamma", e.gamma},
                 {"psnr", e.psnr},
                 {"neighbours", {e.lower_gamma, e.upper_gamma}},
                 {"interpolated_psnr", e.interpolated_psnr},
                 {"neighbour_mean", e.neighbour_mean},
                 {"gap", e.gap}});
  }
  return json{{"seen", entries(seen)}, {"unseen", entries(unseen)}, {"gaps", g}}.dump(2);
}

// ---------------------------------------------------------------------------

CountReport count_report(const BaseNetConfig& config, const HyperConfig& hyper) {
  if (hyper.input_dim < 1) throw ContractViolation("count report needs m >= 1");
  if (hyper.depth != 1) throw ContractViolation("count report covers single-stage weight nets only");
  const ParameterCount base = count_parameters(config);
  CountReport r;
  r.conv = base.conv;
  r.norm = base.norm;
  r.predicted = predicted_count(hyper.slots, config);
  r.fc = r.predicted * (hyper.input_dim + 1);
  r.shared = base.total() - r.predicted;
  return r;
}

std::string CountReport::to_json() const {
  return json{{"conv", conv},     {"norm", norm},     {"predicted", predicted},
              {"fc", fc},         {"shared", shared}, {"total", total()}}
      .dump(2);
}

#define DLF_INSTANTIATE_ANALYSIS(S)                                                                              \
  template ErfMask effective_receptive_field(const WeightLearningNet<S>&, const OperatorSpec&,                   \
                                             const std::vector<double>&, const Image&, PixelPoint, bool);       \
  template WeightStats weight_statistics(const WeightSet<S>&, const WeightSet<S>&);                             \
  template std::pair<Tensor<S>, Tensor<S>> affine_form(const WeightLearningNet<S>&, std::size_t);               \
  template MultipathReport verify_multipath(const WeightLearningNet<S>&, int, double, std::mt19937_64&, Index); \
  template InterpolationReport interpolation_eval(const WeightLearningNet<S>&, const OperatorSpec&,             \
                                                  std::vector<double>, const std::vector<double>&,             \
                                                  const std::vector<Image>&, bool);

DLF_INSTANTIATE_ANALYSIS(float)
DLF_INSTANTIATE_ANALYSIS(double)

}  // namespace dlf
