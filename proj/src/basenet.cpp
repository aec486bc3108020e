#include "dlf/basenet.hpp"

#include "dlf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

namespace dlf {

std::vector<int> BaseNetConfig::default_norm_layers(int depth) {
  std::vector<int> layers;
  for (int i = 1; i < depth; ++i) layers.push_back(i);
  return layers;
}

BaseNetConfig BaseNetConfig::scaled(int depth, int channels) {
  if (depth < 8 || depth % 2 != 0) {
    throw ContractViolation("scaled config needs an even depth >= 8, got " + std::to_string(depth));
  }
  BaseNetConfig c;
  c.depth = depth;
  c.channels = channels;
  c.downsample_layer = 3;
  c.upsample_layer = depth - 2;
  c.residual_first = 4;
  c.residual_last = depth - 3;
  c.norm_after = default_norm_layers(depth);
  return c;
}

bool BaseNetConfig::has_norm(int layer) const {
  return std::binary_search(norm_after.begin(), norm_after.end(), layer);
}

void BaseNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractViolation("BaseNetConfig: " + msg); };
  if (depth < 1) fail("depth must be positive");
  if (channels < 1 || input_channels < 1 || output_channels < 1) fail("channel counts must be positive");
  if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd and positive");
  if (dilation < 1) fail("dilation must be positive");
  if (!std::is_sorted(norm_after.begin(), norm_after.end()) ||
      std::adjacent_find(norm_after.begin(), norm_after.end()) != norm_after.end()) {
    fail("norm_after must be strictly increasing");
  }
  for (int l : norm_after) {
    if (l < 1 || l >= depth) fail("norm_after entry " + std::to_string(l) + " outside 1..depth-1");
  }
  if ((downsample_layer == 0) != (upsample_layer == 0)) fail("downsample and upsample come in pairs");
  if (downsample_layer != 0) {
    if (downsample_layer < 1 || upsample_layer > depth || downsample_layer >= upsample_layer) {
      fail("need 1 <= downsample_layer < upsample_layer <= depth");
    }
  }
  if (residual_first != 0) {
    if (residual_first > residual_last) fail("residual range is empty");
    if ((residual_last - residual_first + 1) % 2 != 0) fail("residual range length must be even");
    if (residual_first < 1 || residual_last > depth) fail("residual range outside the network");
    if (downsample_layer != 0 &&
        !(downsample_layer < residual_first && residual_last < upsample_layer)) {
      fail("residual range must lie strictly between downsample and upsample layers");
    }
  }
}

// ---------------------------------------------------------------------------

Shape LayerSpec::kernel_shape() const {
  if (kind == LayerKind::deconv) return {in_channels, out_channels, kernel, kernel};
  return {out_channels, in_channels, kernel, kernel};
}

Index LayerSpec::fan_in() const {
  if (kind == LayerKind::deconv) return out_channels * kernel * kernel;
  return in_channels * kernel * kernel;
}

LayerSpec layer_spec(const BaseNetConfig& config, int layer) {
  if (layer < 1 || layer > config.depth) {
    throw ContractViolation("layer " + std::to_string(layer) + " outside 1.." +
                            std::to_string(config.depth));
  }
  LayerSpec s;
  s.index = layer;
  s.in_channels = layer == 1 ? config.input_channels : config.channels;
  s.out_channels = layer == config.depth ? config.output_channels : config.channels;
  s.norm = config.has_norm(layer);
  if (config.upsample_layer != 0 && layer == config.upsample_layer) {
    s.kind = LayerKind::deconv;
    s.kernel = 4;
    s.stride = 2;
    s.padding = 1;
    return s;
  }
  s.kernel = config.kernel;
  if (config.downsample_layer != 0 && layer == config.downsample_layer) s.stride = 2;
  if (config.residual_first != 0 && layer >= config.residual_first && layer <= config.residual_last) {
    s.dilation = config.dilation;
    s.residual = (layer - config.residual_first) % 2 == 0 ? ResidualRole::block_first
                                                          : ResidualRole::block_second;
  }
  s.padding = s.dilation * (s.kernel - 1) / 2;
  return s;
}

ParameterCount count_parameters(const BaseNetConfig& config) {
  config.validate();
  ParameterCount count;
  for (int i = 1; i <= config.depth; ++i) {
    const LayerSpec s = layer_spec(config, i);
    count.conv += s.in_channels * s.out_channels * s.kernel * s.kernel;
    if (config.conv_bias) count.conv += s.out_channels;
    if (s.norm) count.norm += 2 * s.out_channels;
  }
  return count;
}

std::string slot_name(const SlotRef& slot) {
  static const char* kinds[] = {"kernel", "bias", "scale", "shift"};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "layer%02d.", slot.layer);
  return buf + std::string(kinds[static_cast<int>(slot.kind)]);
}

// ---------------------------------------------------------------------------
// WeightSet

template <typename Scalar>
WeightSet<Scalar> WeightSet<Scalar>::initialize(const BaseNetConfig& config, std::mt19937_64& rng) {
  config.validate();
  using Array = typename Tensor<Scalar>::Array;
  std::vector<LayerWeights<Scalar>> layers(config.depth);
  for (int i = 1; i <= config.depth; ++i) {
    const LayerSpec s = layer_spec(config, i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto draw = [&](const Shape& shape) {
      Array a(shape_numel(shape));
      for (Index j = 0; j < a.size(); ++j) a[j] = static_cast<Scalar>(dist(rng));
      return Tensor<Scalar>(shape, std::move(a));
    };
    auto& lw = layers[i - 1];
    lw.kernel = draw(s.kernel_shape());
    if (config.conv_bias) lw.bias = draw({s.out_channels});
    if (s.norm) {
      lw.scale = Tensor<Scalar>::full({s.out_channels}, Scalar(1));
      lw.shift = Tensor<Scalar>::zeros({s.out_channels});
    }
  }
  if (config.input_skip) {
    // The net starts as the identity map and learns a correction.
    auto& last = layers.back();
    last.kernel.mutable_values().setZero();
    if (last.bias.defined()) last.bias.mutable_values().setZero();
  }
  return WeightSet(std::move(layers));
}

template <typename Scalar>
WeightSet<Scalar> WeightSet<Scalar>::zeros(const BaseNetConfig& config) {
  config.validate();
  std::vector<LayerWeights<Scalar>> layers(config.depth);
  for (int i = 1; i <= config.depth; ++i) {
    const LayerSpec s = layer_spec(config, i);
    auto& lw = layers[i - 1];
    lw.kernel = Tensor<Scalar>::zeros(s.kernel_shape());
    if (config.conv_bias) lw.bias = Tensor<Scalar>::zeros({s.out_channels});
    if (s.norm) {
      lw.scale = Tensor<Scalar>::zeros({s.out_channels});
      lw.shift = Tensor<Scalar>::zeros({s.out_channels});
    }
  }
  return WeightSet(std::move(layers));
}

template <typename Scalar>
const Tensor<Scalar>& WeightSet<Scalar>::slot(const SlotRef& ref) const {
  const auto& lw = layers_.at(ref.layer - 1);
  switch (ref.kind) {
    case SlotKind::kernel: return lw.kernel;
    case SlotKind::bias: return lw.bias;
    case SlotKind::scale: return lw.scale;
    case SlotKind::shift: return lw.shift;
  }
  throw ContractViolation("unknown slot kind");
}

template <typename Scalar>
Tensor<Scalar>& WeightSet<Scalar>::slot(const SlotRef& ref) {
  return const_cast<Tensor<Scalar>&>(std::as_const(*this).slot(ref));
}

template <typename Scalar>
std::vector<SlotRef> WeightSet<Scalar>::slots() const {
  std::vector<SlotRef> out;
  for (int i = 1; i <= depth(); ++i) {
    for (SlotKind kind : {SlotKind::kernel, SlotKind::bias, SlotKind::scale, SlotKind::shift}) {
      if (slot({i, kind}).defined()) out.push_back({i, kind});
    }
  }
  return out;
}

template <typename Scalar>
Index WeightSet<Scalar>::scalar_count() const {
  Index n = 0;
  for (const SlotRef& s : slots()) n += slot(s).numel();
  return n;
}

template <typename Scalar>
void WeightSet<Scalar>::validate(const BaseNetConfig& config) const {
  if (depth() != config.depth) {
    throw DimensionError("weight set has " + std::to_string(depth()) + " layers, config has " +
                         std::to_string(config.depth));
  }
  auto expect = [](const Tensor<Scalar>& t, bool present, const Shape& shape, const SlotRef& ref) {
    if (t.defined() != present) {
      throw DimensionError(slot_name(ref) + (present ? " missing" : " not expected by config"));
    }
    if (present && t.shape() != shape) {
      throw DimensionError(slot_name(ref) + " has shape " + shape_string(t.shape()) + ", expected " +
                           shape_string(shape));
    }
  };
  for (int i = 1; i <= config.depth; ++i) {
    const LayerSpec s = layer_spec(config, i);
    const auto& lw = layer(i);
    expect(lw.kernel, true, s.kernel_shape(), {i, SlotKind::kernel});
    expect(lw.bias, config.conv_bias, {s.out_channels}, {i, SlotKind::bias});
    expect(lw.scale, s.norm, {s.out_channels}, {i, SlotKind::scale});
    expect(lw.shift, s.norm, {s.out_channels}, {i, SlotKind::shift});
  }
}

template <typename Scalar>
WeightSet<Scalar> WeightSet<Scalar>::clone() const {
  std::vector<LayerWeights<Scalar>> out(layers_.size());
  auto copy = [](const Tensor<Scalar>& t) { return t.defined() ? t.detach() : Tensor<Scalar>(); };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& src = layers_[i];
    out[i] = {copy(src.kernel), copy(src.bias), copy(src.scale), copy(src.shift)};
  }
  return WeightSet(std::move(out));
}

template <typename Scalar>
void WeightSet<Scalar>::set_requires_grad(bool flag) {
  for (const SlotRef& s : slots()) slot(s).set_requires_grad(flag);
}

// ---------------------------------------------------------------------------
// Learned slots

LearnedSlotSpec LearnedSlotSpec::parse(const std::string& text) {
  if (text == "all_conv") return all_conv();
  if (text == "all_norm") return all_norm();
  static const std::regex pattern(R"((norm_at|conv_at|conv_channel1_at|conv_channel2_at)\((\d+)\))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw ParameterError("unrecognized learned-slot spec '" + text + "'");
  }
  const int k = std::stoi(m[2].str());
  const std::string mode = m[1].str();
  if (mode == "norm_at") return norm_at(k);
  if (mode == "conv_at") return conv_at(k);
  if (mode == "conv_channel1_at") return conv_channel1_at(k);
  return conv_channel2_at(k);
}

std::string LearnedSlotSpec::to_string() const {
  switch (mode) {
    case Mode::all_conv: return "all_conv";
    case Mode::all_norm: return "all_norm";
    case Mode::norm_at: return "norm_at(" + std::to_string(layer) + ")";
    case Mode::conv_at: return "conv_at(" + std::to_string(layer) + ")";
    case Mode::conv_channel1_at: return "conv_channel1_at(" + std::to_string(layer) + ")";
    case Mode::conv_channel2_at: return "conv_channel2_at(" + std::to_string(layer) + ")";
  }
  return "?";
}

std::vector<PredictedRegion> resolve_slots(const LearnedSlotSpec& spec, const BaseNetConfig& config) {
  config.validate();
  using Mode = LearnedSlotSpec::Mode;
  std::vector<PredictedRegion> out;
  auto whole = [&](int layer, SlotKind kind) {
    const LayerSpec s = layer_spec(config, layer);
    PredictedRegion r;
    r.slot = {layer, kind};
    r.slot_shape = kind == SlotKind::kernel ? s.kernel_shape() : Shape{s.out_channels};
    r.count = shape_numel(r.slot_shape);
    r.fan_in = s.fan_in();
    return r;
  };
  auto check_layer = [&](int k) {
    if (k < 1 || k > config.depth) {
      throw ContractViolation("learned slot layer " + std::to_string(k) + " outside the network");
    }
  };
  switch (spec.mode) {
    case Mode::all_conv:
      for (int i = 1; i <= config.depth; ++i) out.push_back(whole(i, SlotKind::kernel));
      break;
    case Mode::all_norm:
      for (int i : config.norm_after) {
        out.push_back(whole(i, SlotKind::scale));
        out.push_back(whole(i, SlotKind::shift));
      }
      break;
    case Mode::norm_at:
      check_layer(spec.layer);
      if (!config.has_norm(spec.layer)) {
        throw ContractViolation("layer " + std::to_string(spec.layer) + " has no instance norm");
      }
      out.push_back(whole(spec.layer, SlotKind::scale));
      out.push_back(whole(spec.layer, SlotKind::shift));
      break;
    case Mode::conv_at:
      check_layer(spec.layer);
      out.push_back(whole(spec.layer, SlotKind::kernel));
      break;
    case Mode::conv_channel1_at:
    case Mode::conv_channel2_at: {
      check_layer(spec.layer);
      PredictedRegion r = whole(spec.layer, SlotKind::kernel);
      const Index d0 = r.slot_shape[0], d1 = r.slot_shape[1];
      const Index kk = r.slot_shape[2] * r.slot_shape[3];
      if (spec.mode == Mode::conv_channel1_at) {
        // [:, 0, :, :]
        for (Index a = 0; a < d0; ++a)
          for (Index t = 0; t < kk; ++t) r.indices.push_back(a * d1 * kk + t);
      } else {
        // [0, :, :, :]
        for (Index b = 0; b < d1 * kk; ++b) r.indices.push_back(b);
      }
      r.count = static_cast<Index>(r.indices.size());
      out.push_back(std::move(r));
      break;
    }
  }
  return out;
}

Index predicted_count(const LearnedSlotSpec& spec, const BaseNetConfig& config) {
  Index n = 0;
  for (const auto& r : resolve_slots(spec, config)) n += r.count;
  return n;
}

// ---------------------------------------------------------------------------
// Layers

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& scale,
                             const Tensor<Scalar>& shift, Scalar eps) {
  using Array = typename Tensor<Scalar>::Array;
  if (x.rank() != 4) throw DimensionError("instance_norm expects NCHW, got " + shape_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw DimensionError("instance_norm over an empty plane " + shape_string(x.shape()));
  if (scale.shape() != Shape{c} || shift.shape() != Shape{c}) {
    throw DimensionError("instance_norm: scale " + shape_string(scale.shape()) + " / shift " +
                         shape_string(shift.shape()) + " for input " + shape_string(x.shape()));
  }
  if (!(eps > Scalar(0))) throw ContractViolation("instance_norm eps must be positive");

  Array xhat(x.numel()), out(x.numel()), inv_std(n * c);
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * plane;
      const auto seg = x.values().segment(off, plane);
      const Scalar mu = seg.sum() / static_cast<Scalar>(plane);
      const Scalar var = (seg - mu).square().sum() / static_cast<Scalar>(plane);
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_std[b * c + ch] = is;
      xhat.segment(off, plane) = (seg - mu) * is;
      out.segment(off, plane) = xhat.segment(off, plane) * scale.values()[ch] + shift.values()[ch];
    }
  }

  Tensor<Scalar> in = x, sc = scale, sh = shift;
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {&x, &scale, &shift},
      [in, sc, sh, xhat, inv_std, n, c, plane](const Array& g) {
        Array dscale = Array::Zero(c), dshift = Array::Zero(c);
        Array dx = in.requires_grad() ? Array(in.numel()) : Array();
        for (Index b = 0; b < n; ++b) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * plane;
            const auto go = g.segment(off, plane);
            const auto xh = xhat.segment(off, plane);
            dshift[ch] += go.sum();
            dscale[ch] += (go * xh).sum();
            if (in.requires_grad()) {
              const Scalar gamma = sc.values()[ch];
              const Scalar sum_g = go.sum() * gamma;
              const Scalar sum_gx = (go * xh).sum() * gamma;
              const Scalar m = static_cast<Scalar>(plane);
              dx.segment(off, plane) =
                  (go * gamma * m - sum_g - xh * sum_gx) * (inv_std[b * c + ch] / m);
            }
          }
        }
        sc.accumulate_grad(dscale);
        sh.accumulate_grad(dshift);
        if (in.requires_grad()) in.accumulate_grad(dx);
      });
}

template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  using Array = typename Tensor<Scalar>::Array;
  if (x.rank() != 4 || bias.shape() != Shape{x.dim(1)}) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) + " for input " +
                         shape_string(x.shape()));
  }
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Array out = x.values();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) out.segment((b * c + ch) * plane, plane) += bias.values()[ch];
  Tensor<Scalar> in = x, bs = bias;
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x, &bias},
                                     [in, bs, n, c, plane](const Array& g) {
                                       in.accumulate_grad(g);
                                       if (!bs.requires_grad()) return;
                                       Array db = Array::Zero(c);
                                       for (Index b = 0; b < n; ++b)
                                         for (Index ch = 0; ch < c; ++ch)
                                           db[ch] += g.segment((b * c + ch) * plane, plane).sum();
                                       bs.accumulate_grad(db);
                                     });
}

template <typename Scalar>
Activation<Scalar> network_input(const BaseNetConfig& config, const Tensor<Scalar>& image,
                                 const Tensor<Scalar>& edge) {
  if (image.rank() != 4 || edge.rank() != 4) {
    throw DimensionError("forward_base expects NCHW image and edge, got " +
                         shape_string(image.shape()) + " and " + shape_string(edge.shape()));
  }
  if (image.dim(1) + edge.dim(1) != config.input_channels) {
    throw DimensionError("image " + shape_string(image.shape()) + " + edge " +
                         shape_string(edge.shape()) + " do not give " +
                         std::to_string(config.input_channels) + " input channels");
  }
  if (image.dim(2) % 2 != 0 || image.dim(3) % 2 != 0) {
    throw ContractViolation("forward_base needs even height and width, got " +
                            shape_string(image.shape()));
  }
  if (config.input_skip && image.dim(1) != config.output_channels) {
    throw DimensionError("input_skip needs as many image channels as output channels");
  }
  Activation<Scalar> a;
  a.x = concat_channels(image, edge);
  if (config.input_skip) a.image = image;
  return a;
}

template <typename Scalar>
Tensor<Scalar> run_layers(const BaseNetConfig& config, const WeightSet<Scalar>& weights,
                          Activation<Scalar> state, ResumePoint from, RunStats* stats,
                          std::optional<ResumePoint> capture, Activation<Scalar>* captured,
                          bool stop_at_capture) {
  RunStats local;
  RunStats& st = stats ? *stats : local;
  auto maybe_capture = [&](ResumePoint here) {
    if (!capture || !(*capture == here) || !captured) return false;
    *captured = state;
    return stop_at_capture;
  };
  for (int i = from.layer; i <= config.depth; ++i) {
    const LayerSpec s = layer_spec(config, i);
    const auto& lw = weights.layer(i);
    if (!(i == from.layer && from.at_norm)) {
      if (maybe_capture({i, false})) return Tensor<Scalar>();
      if (s.residual == ResidualRole::block_first) state.skip = state.x;
      state.x = s.kind == LayerKind::deconv
                    ? conv_transpose2d(state.x, lw.kernel, s.stride, s.padding)
                    : conv2d(state.x, lw.kernel, Conv2dOptions{s.stride, s.dilation, s.padding});
      if (config.conv_bias) state.x = add_channel_bias(state.x, lw.bias);
      ++st.layers_run;
    }
    if (s.norm) {
      if (maybe_capture({i, true})) return Tensor<Scalar>();
      state.x = instance_norm(state.x, lw.scale, lw.shift);
      ++st.layers_run;
    }
    if (s.residual == ResidualRole::block_second) {
      state.x = add(state.x, state.skip);
      state.skip = Tensor<Scalar>();
    }
    if (s.norm) state.x = relu(state.x);
  }
  if (config.input_skip) state.x = add(state.x, state.image);
  return state.x;
}

template <typename Scalar>
Tensor<Scalar> forward_base(const BaseNetConfig& config, const WeightSet<Scalar>& weights,
                            const Tensor<Scalar>& image, const Tensor<Scalar>& edge) {
  config.validate();
  weights.validate(config);
  return run_layers(config, weights, network_input(config, image, edge), ResumePoint{1, false});
}

#define DLF_INSTANTIATE_BASENET(S)                                                             \
  template class WeightSet<S>;                                                                 \
  template Tensor<S> instance_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);   \
  template Tensor<S> add_channel_bias(const Tensor<S>&, const Tensor<S>&);                     \
  template Activation<S> network_input(const BaseNetConfig&, const Tensor<S>&,                 \
                                       const Tensor<S>&);                                      \
  template Tensor<S> run_layers(const BaseNetConfig&, const WeightSet<S>&, Activation<S>,      \
                                ResumePoint, RunStats*, std::optional<ResumePoint>,            \
                                Activation<S>*, bool);                                            \
  template Tensor<S> forward_base(const BaseNetConfig&, const WeightSet<S>&, const Tensor<S>&, \
                                  const Tensor<S>&);

DLF_INSTANTIATE_BASENET(float)
DLF_INSTANTIATE_BASENET(double)

}  // namespace dlf
