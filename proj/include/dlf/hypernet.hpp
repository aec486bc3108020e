#pragma once

#include "dlf/basenet.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dlf {

/// Operator-parameter input of the weight-learning network, in normalized
/// coordinates.
struct ParameterVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  template <typename Scalar>
  Tensor<Scalar> tensor() const {
    typename Tensor<Scalar>::Array a(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) a[static_cast<Index>(i)] = static_cast<Scalar>(values[i]);
    return Tensor<Scalar>({static_cast<Index>(values.size())}, std::move(a));
  }
};

struct HyperConfig {
  LearnedSlotSpec slots = LearnedSlotSpec::all_conv();
  int input_dim = 1;         // m
  int depth = 1;             // 1: affine; >=2: stacked affine maps
  bool hidden_relu = false;  // relu between stages (the fc2R variant)
  Index hidden_width = 0;    // 0: same as the slot's output count

  void validate() const;
  bool operator==(const HyperConfig&) const = default;
};

/// Affine stage weight [out, in] and bias [out].
template <typename Scalar>
struct AffineStage {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

/// The stack of affine maps predicting one region of the weight set.
template <typename Scalar>
struct SlotPredictor {
  PredictedRegion region;
  std::vector<AffineStage<Scalar>> stages;
};

/// Maps a parameter vector to the predicted part of a WeightSet; everything
/// else comes from the directly trained shared weights.
template <typename Scalar>
class WeightLearningNet {
 public:
  WeightLearningNet() = default;
  WeightLearningNet(BaseNetConfig base, HyperConfig hyper, std::vector<SlotPredictor<Scalar>> predictors,
                    WeightSet<Scalar> shared);

  /// With depth 1: A uniform in +-1/sqrt(fan_in) of the target conv and B
  /// initialized like that conv's kernel. Norm slots start at A = 0 with B
  /// equal to the identity scale/shift.
  static WeightLearningNet initialize(const BaseNetConfig& base, const HyperConfig& hyper,
                                      std::mt19937_64& rng);

  const BaseNetConfig& base_config() const { return base_; }
  const HyperConfig& hyper_config() const { return hyper_; }
  const std::vector<SlotPredictor<Scalar>>& predictors() const { return predictors_; }
  std::vector<SlotPredictor<Scalar>>& predictors() { return predictors_; }
  const WeightSet<Scalar>& shared() const { return shared_; }
  WeightSet<Scalar>& shared() { return shared_; }

  /// Predicted slots from gamma, all others from the shared weights.
  /// Differentiable when a tape is active.
  WeightSet<Scalar> predict_weights(const Tensor<Scalar>& gamma) const;
  WeightSet<Scalar> predict_weights(const ParameterVector& gamma) const {
    return predict_weights(gamma.template tensor<Scalar>());
  }
  /// Raw output of one slot predictor (length region.count).
  Tensor<Scalar> predict_region(std::size_t predictor, const Tensor<Scalar>& gamma) const;

  /// Cheap mode: the scale and shift of the single adjustable norm layer.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> predict_cheap(const Tensor<Scalar>& gamma) const;

  /// Where re-evaluation must start when only gamma changes.
  ResumePoint first_dependent_point() const;
  /// True when the shared tensor of `slot` is entirely replaced by predictions.
  bool fully_predicted(const SlotRef& slot) const;

  /// Every trainable tensor: predictor stages then shared (non fully-predicted) slots.
  std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters() const;
  Index predicted_scalar_count() const;
  Index hyper_scalar_count() const;

  /// Hash of config and shared weights; identifies activation caches.
  std::uint64_t shared_fingerprint() const;

  template <typename Other>
  WeightLearningNet<Other> cast() const {
    std::vector<SlotPredictor<Other>> preds;
    for (const auto& p : predictors_) {
      SlotPredictor<Other> q{p.region, {}};
      for (const auto& s : p.stages) {
        q.stages.push_back({s.weight.template cast<Other>(), s.bias.template cast<Other>()});
      }
      preds.push_back(std::move(q));
    }
    return WeightLearningNet<Other>(base_, hyper_, std::move(preds), shared_.template cast<Other>());
  }

 private:
  BaseNetConfig base_;
  HyperConfig hyper_;
  std::vector<SlotPredictor<Scalar>> predictors_;
  WeightSet<Scalar> shared_;
};

std::uint64_t fingerprint_bytes(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Feature map entering the first gamma-dependent layer, for re-use across
/// gamma values on the same input.
template <typename Scalar>
struct ActivationCache {
  std::uint64_t input_hash = 0;
  std::uint64_t weights_hash = 0;
  ResumePoint resume;
  Activation<Scalar> activation;

  bool valid() const { return activation.x.defined(); }
  bool matches_input(const Tensor<Scalar>& image, const Tensor<Scalar>& edge) const;
};

template <typename Scalar>
std::uint64_t input_fingerprint(const Tensor<Scalar>& image, const Tensor<Scalar>& edge);

/// Runs the gamma-independent prefix of the network once.
template <typename Scalar>
ActivationCache<Scalar> build_cache(const WeightLearningNet<Scalar>& net, const Tensor<Scalar>& image,
                                    const Tensor<Scalar>& edge);

/// Re-evaluates only the layers from the cache point on. Throws
/// CacheInvalidError when the shared weights changed since the cache was built.
template <typename Scalar>
std::pair<Tensor<Scalar>, int> cached_forward(const WeightLearningNet<Scalar>& net,
                                              const ActivationCache<Scalar>& cache,
                                              const Tensor<Scalar>& gamma);

/// sum_k gamma_k * (A[:,k] conv x) + (B conv x), evaluated as m+1 separate
/// convolutions. A is [n, m] and B is [n] with n the kernel size of `layer`.
template <typename Scalar>
Tensor<Scalar> multipath_expand(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                const Tensor<Scalar>& gamma, const Tensor<Scalar>& x,
                                const LayerSpec& layer);

/// Applies the conv or deconv of `layer` with the given kernel.
template <typename Scalar>
Tensor<Scalar> apply_layer_conv(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const LayerSpec& layer);

}  // namespace dlf
