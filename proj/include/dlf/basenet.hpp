#pragma once

#include "dlf/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dlf {

/// Architecture of the task network. Layers are numbered from 1.
///
/// The default-constructed value is the standard 20-layer network: 64
/// channels, 3x3 kernels, stride-2 conv at layer 3, 4x4 stride-2 deconv at
/// layer 18, seven dilated residual blocks over layers 4..17 and instance
/// norm + relu after every layer but the last.
struct BaseNetConfig {
  int depth = 20;
  int channels = 64;
  int kernel = 3;
  int input_channels = 4;   // RGB + edge map
  int output_channels = 3;
  int downsample_layer = 3;  // 0: none
  int upsample_layer = 18;   // 0: none; deconv 4x4, stride 2, padding 1
  int residual_first = 4;    // 0: no residual blocks
  int residual_last = 17;
  int dilation = 2;          // applied to residual-block convs
  std::vector<int> norm_after = default_norm_layers(20);
  bool conv_bias = false;
  bool input_skip = false;   // output += image

  static std::vector<int> default_norm_layers(int depth);
  /// Same layout as the default, scaled to an even `depth` >= 8.
  static BaseNetConfig scaled(int depth, int channels);

  /// Throws ContractViolation when the layout is inconsistent.
  void validate() const;
  bool has_norm(int layer) const;
  bool operator==(const BaseNetConfig&) const = default;
};

enum class LayerKind { conv, deconv };
enum class ResidualRole { none, block_first, block_second };

struct LayerSpec {
  int index = 0;
  LayerKind kind = LayerKind::conv;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;
  bool norm = false;  // instance norm + relu follow the conv
  ResidualRole residual = ResidualRole::none;

  Shape kernel_shape() const;
  Index fan_in() const;
};

LayerSpec layer_spec(const BaseNetConfig& config, int layer);

struct ParameterCount {
  Index conv = 0;
  Index norm = 0;
  Index total() const { return conv + norm; }
};

/// Conv weights (kernels, plus biases when enabled) and instance-norm
/// scale/shift scalars.
ParameterCount count_parameters(const BaseNetConfig& config);

enum class SlotKind { kernel, bias, scale, shift };

struct SlotRef {
  int layer = 0;
  SlotKind kind = SlotKind::kernel;
  bool operator==(const SlotRef&) const = default;
};

std::string slot_name(const SlotRef& slot);

template <typename Scalar>
struct LayerWeights {
  Tensor<Scalar> kernel;
  Tensor<Scalar> bias;   // only with conv_bias
  Tensor<Scalar> scale;  // only for norm layers
  Tensor<Scalar> shift;
};

/// Every weight tensor consumed by forward_base.
template <typename Scalar>
class WeightSet {
 public:
  WeightSet() = default;
  explicit WeightSet(std::vector<LayerWeights<Scalar>> layers) : layers_(std::move(layers)) {}

  /// Conv tensors uniform in +-1/sqrt(fan_in); norm scale 1, shift 0.
  static WeightSet initialize(const BaseNetConfig& config, std::mt19937_64& rng);
  static WeightSet zeros(const BaseNetConfig& config);

  const LayerWeights<Scalar>& layer(int index) const { return layers_.at(index - 1); }
  LayerWeights<Scalar>& layer(int index) { return layers_.at(index - 1); }
  int depth() const { return static_cast<int>(layers_.size()); }

  const Tensor<Scalar>& slot(const SlotRef& ref) const;
  Tensor<Scalar>& slot(const SlotRef& ref);
  /// All present slots in canonical order (layer ascending; kernel, bias, scale, shift).
  std::vector<SlotRef> slots() const;

  Index scalar_count() const;
  /// Throws DimensionError when any tensor disagrees with the config.
  void validate(const BaseNetConfig& config) const;

  /// Deep copy with fresh, gradient-free storage.
  WeightSet clone() const;
  void set_requires_grad(bool flag);

  template <typename Other>
  WeightSet<Other> cast() const {
    std::vector<LayerWeights<Other>> out(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& src = layers_[i];
      auto conv = [](const Tensor<Scalar>& t) {
        return t.defined() ? t.template cast<Other>() : Tensor<Other>();
      };
      out[i] = {conv(src.kernel), conv(src.bias), conv(src.scale), conv(src.shift)};
    }
    return WeightSet<Other>(std::move(out));
  }

 private:
  std::vector<LayerWeights<Scalar>> layers_;
};

/// Which WeightSet scalars the weight-learning network predicts.
struct LearnedSlotSpec {
  enum class Mode { all_conv, all_norm, norm_at, conv_at, conv_channel1_at, conv_channel2_at };
  Mode mode = Mode::all_conv;
  int layer = 0;  // for the *_at modes

  static LearnedSlotSpec all_conv() { return {Mode::all_conv, 0}; }
  static LearnedSlotSpec all_norm() { return {Mode::all_norm, 0}; }
  static LearnedSlotSpec norm_at(int k) { return {Mode::norm_at, k}; }
  static LearnedSlotSpec conv_at(int k) { return {Mode::conv_at, k}; }
  static LearnedSlotSpec conv_channel1_at(int k) { return {Mode::conv_channel1_at, k}; }
  static LearnedSlotSpec conv_channel2_at(int k) { return {Mode::conv_channel2_at, k}; }

  /// "all_conv", "all_norm", "norm_at(19)", "conv_channel1_at(19)", ...
  static LearnedSlotSpec parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const LearnedSlotSpec&) const = default;
};

/// One predicted region of a WeightSet tensor.
struct PredictedRegion {
  SlotRef slot;
  Shape slot_shape;
  std::vector<Index> indices;  // flat indices into the slot; empty means the whole tensor
  Index count = 0;
  Index fan_in = 1;            // of the conv layer the slot belongs to

  bool whole() const { return indices.empty(); }
};

std::vector<PredictedRegion> resolve_slots(const LearnedSlotSpec& spec, const BaseNetConfig& config);
Index predicted_count(const LearnedSlotSpec& spec, const BaseNetConfig& config);

/// Per (sample, channel) normalization over H*W with population variance.
template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& scale,
                             const Tensor<Scalar>& shift, Scalar eps = Scalar(1e-5));

/// Adds a per-channel bias [C] to an NCHW tensor.
template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias);

/// A position inside the layer sequence: the activation entering either the
/// conv or the norm of `layer`.
struct ResumePoint {
  int layer = 1;
  bool at_norm = false;
  bool operator==(const ResumePoint&) const = default;
};

template <typename Scalar>
struct Activation {
  Tensor<Scalar> x;
  Tensor<Scalar> skip;   // pending residual input, when inside a block
  Tensor<Scalar> image;  // only with input_skip
};

struct RunStats {
  int layers_run = 0;  // conv/deconv and norm ops executed
};

/// Runs the layers from `from` to the end of the network.
///
/// When `capture` is reached, the activation at that point is copied to
/// `captured`; with `stop_at_capture` the run ends there and returns an
/// undefined tensor.
template <typename Scalar>
Tensor<Scalar> run_layers(const BaseNetConfig& config, const WeightSet<Scalar>& weights,
                          Activation<Scalar> state, ResumePoint from, RunStats* stats = nullptr,
                          std::optional<ResumePoint> capture = std::nullopt,
                          Activation<Scalar>* captured = nullptr, bool stop_at_capture = false);

/// Builds the network input concat(image, edge) and checks its contract.
template <typename Scalar>
Activation<Scalar> network_input(const BaseNetConfig& config, const Tensor<Scalar>& image,
                                 const Tensor<Scalar>& edge);

/// Full forward pass: image [N,3,H,W], edge [N,1,H,W] -> [N,out,H,W].
template <typename Scalar>
Tensor<Scalar> forward_base(const BaseNetConfig& config, const WeightSet<Scalar>& weights,
                            const Tensor<Scalar>& image, const Tensor<Scalar>& edge);

}  // namespace dlf
