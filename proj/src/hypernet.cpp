#include "dlf/hypernet.hpp"

#include "dlf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dlf {

void HyperConfig::validate() const {
  if (input_dim < 1) throw ContractViolation("weight-learning net needs input_dim >= 1");
  if (depth < 1) throw ContractViolation("weight-learning net depth must be >= 1");
  if (hidden_width < 0) throw ContractViolation("hidden_width must be non-negative");
}

std::uint64_t fingerprint_bytes(const void* data, std::size_t size, std::uint64_t seed) {
  // FNV-1a
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
WeightLearningNet<Scalar>::WeightLearningNet(BaseNetConfig base, HyperConfig hyper,
                                             std::vector<SlotPredictor<Scalar>> predictors,
                                             WeightSet<Scalar> shared)
    : base_(std::move(base)), hyper_(hyper), predictors_(std::move(predictors)), shared_(std::move(shared)) {
  base_.validate();
  hyper_.validate();
  shared_.validate(base_);
  const auto regions = resolve_slots(hyper_.slots, base_);
  if (regions.size() != predictors_.size()) {
    throw DimensionError("weight-learning net has " + std::to_string(predictors_.size()) +
                         " predictors for " + std::to_string(regions.size()) + " slots");
  }
  for (const auto& p : predictors_) {
    if (p.stages.empty()) throw DimensionError("slot predictor without stages");
    Index in = hyper_.input_dim;
    for (const auto& st : p.stages) {
      if (st.weight.rank() != 2 || st.weight.dim(1) != in || st.bias.shape() != Shape{st.weight.dim(0)}) {
        throw DimensionError("predictor stage " + shape_string(st.weight.shape()) + " does not accept " +
                             std::to_string(in) + " inputs");
      }
      in = st.weight.dim(0);
    }
    if (in != p.region.count) {
      throw DimensionError("predictor for " + slot_name(p.region.slot) + " outputs " + std::to_string(in) +
                           " values, slot needs " + std::to_string(p.region.count));
    }
  }
}

template <typename Scalar>
WeightLearningNet<Scalar> WeightLearningNet<Scalar>::initialize(const BaseNetConfig& base,
                                                                const HyperConfig& hyper,
                                                                std::mt19937_64& rng) {
  base.validate();
  hyper.validate();
  using Array = typename Tensor<Scalar>::Array;
  auto uniform = [&](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array a(shape_numel(shape));
    for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(a));
  };

  WeightSet<Scalar> shared = WeightSet<Scalar>::initialize(base, rng);
  std::vector<SlotPredictor<Scalar>> predictors;
  const Index m = hyper.input_dim;
  for (const PredictedRegion& region : resolve_slots(hyper.slots, base)) {
    const bool is_norm = region.slot.kind == SlotKind::scale || region.slot.kind == SlotKind::shift;
    const double bound = 1.0 / std::sqrt(static_cast<double>(region.fan_in));
    const Index n = region.count;

    Tensor<Scalar> out_bias;
    if (is_norm) {
      out_bias = Tensor<Scalar>::full({n}, region.slot.kind == SlotKind::scale ? Scalar(1) : Scalar(0));
    } else {
      out_bias = uniform({n}, bound);
    }
    SlotPredictor<Scalar> p{region, {}};
    Index in = m;
    for (int d = 1; d < hyper.depth; ++d) {
      const Index h = hyper.hidden_width > 0 ? hyper.hidden_width : n;
      const double hb = 1.0 / std::sqrt(static_cast<double>(in));
      p.stages.push_back({uniform({h, in}, hb), uniform({h}, hb)});
      in = h;
    }
    Tensor<Scalar> out_weight =
        is_norm ? Tensor<Scalar>::zeros({n, in}) : uniform({n, in}, bound / std::sqrt(static_cast<double>(in) / m));
    if (base.input_skip && region.slot.layer == base.depth && region.slot.kind == SlotKind::kernel) {
      out_weight.mutable_values().setZero();
      out_bias.mutable_values().setZero();
    }
    p.stages.push_back({out_weight, out_bias});
    predictors.push_back(std::move(p));
  }
  return WeightLearningNet(base, hyper, std::move(predictors), std::move(shared));
}

template <typename Scalar>
Tensor<Scalar> WeightLearningNet<Scalar>::predict_region(std::size_t predictor, const Tensor<Scalar>& gamma) const {
  if (gamma.rank() != 1 || gamma.dim(0) != hyper_.input_dim) {
    throw DimensionError("gamma of shape " + shape_string(gamma.shape()) + " for a net expecting " +
                         std::to_string(hyper_.input_dim) + " parameters");
  }
  const auto& p = predictors_.at(predictor);
  Tensor<Scalar> h = gamma;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    h = affine(h, p.stages[s].weight, p.stages[s].bias);
    if (hyper_.hidden_relu && s + 1 < p.stages.size()) h = relu(h);
  }
  return h;
}

template <typename Scalar>
WeightSet<Scalar> WeightLearningNet<Scalar>::predict_weights(const Tensor<Scalar>& gamma) const {
  WeightSet<Scalar> out = shared_;
  for (std::size_t i = 0; i < predictors_.size(); ++i) {
    const PredictedRegion& region = predictors_[i].region;
    Tensor<Scalar> values = predict_region(i, gamma);
    Tensor<Scalar>& target = out.slot(region.slot);
    target = region.whole() ? reshape(values, region.slot_shape) : overwrite(target, values, region.indices);
  }
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> WeightLearningNet<Scalar>::predict_cheap(const Tensor<Scalar>& gamma) const {
  if (hyper_.slots.mode != LearnedSlotSpec::Mode::norm_at) {
    throw ContractViolation("cheap prediction needs a norm_at(k) slot spec, net has " + hyper_.slots.to_string());
  }
  return {predict_region(0, gamma), predict_region(1, gamma)};
}

template <typename Scalar>
ResumePoint WeightLearningNet<Scalar>::first_dependent_point() const {
  ResumePoint best{base_.depth + 1, false};
  for (const auto& p : predictors_) {
    const bool at_norm = p.region.slot.kind == SlotKind::scale || p.region.slot.kind == SlotKind::shift;
    const ResumePoint here{p.region.slot.layer, at_norm};
    if (here.layer < best.layer || (here.layer == best.layer && !here.at_norm)) best = here;
  }
  return best;
}

template <typename Scalar>
bool WeightLearningNet<Scalar>::fully_predicted(const SlotRef& slot) const {
  return std::any_of(predictors_.begin(), predictors_.end(),
                     [&](const auto& p) { return p.region.slot == slot && p.region.whole(); });
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> WeightLearningNet<Scalar>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<Scalar>>> out;
  for (const auto& p : predictors_) {
    for (std::size_t s = 0; s < p.stages.size(); ++s) {
      const std::string prefix = "hyper." + slot_name(p.region.slot) + ".fc" + std::to_string(s + 1);
      out.emplace_back(prefix + ".weight", p.stages[s].weight);
      out.emplace_back(prefix + ".bias", p.stages[s].bias);
    }
  }
  for (const SlotRef& ref : shared_.slots()) {
    if (!fully_predicted(ref)) out.emplace_back("shared." + slot_name(ref), shared_.slot(ref));
  }
  return out;
}

template <typename Scalar>
Index WeightLearningNet<Scalar>::predicted_scalar_count() const {
  Index n = 0;
  for (const auto& p : predictors_) n += p.region.count;
  return n;
}

template <typename Scalar>
Index WeightLearningNet<Scalar>::hyper_scalar_count() const {
  Index n = 0;
  for (const auto& p : predictors_)
    for (const auto& s : p.stages) n += s.weight.numel() + s.bias.numel();
  return n;
}

template <typename Scalar>
std::uint64_t WeightLearningNet<Scalar>::shared_fingerprint() const {
  std::uint64_t h = fingerprint_bytes(&base_.depth, sizeof(int));
  const std::string slots = hyper_.slots.to_string();
  h = fingerprint_bytes(slots.data(), slots.size(), h);
  for (const SlotRef& ref : shared_.slots()) {
    if (fully_predicted(ref)) continue;
    const auto& t = shared_.slot(ref);
    h = fingerprint_bytes(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(Scalar), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Activation cache

template <typename Scalar>
std::uint64_t input_fingerprint(const Tensor<Scalar>& image, const Tensor<Scalar>& edge) {
  std::uint64_t h = fingerprint_bytes(image.shape().data(), image.shape().size() * sizeof(Index));
  h = fingerprint_bytes(image.data(), static_cast<std::size_t>(image.numel()) * sizeof(Scalar), h);
  return fingerprint_bytes(edge.data(), static_cast<std::size_t>(edge.numel()) * sizeof(Scalar), h);
}

template <typename Scalar>
bool ActivationCache<Scalar>::matches_input(const Tensor<Scalar>& image, const Tensor<Scalar>& edge) const {
  return valid() && dlf::input_fingerprint(image, edge) == input_hash;
}

template <typename Scalar>
ActivationCache<Scalar> build_cache(const WeightLearningNet<Scalar>& net, const Tensor<Scalar>& image,
                                    const Tensor<Scalar>& edge) {
  const BaseNetConfig& config = net.base_config();
  ActivationCache<Scalar> cache;
  cache.resume = net.first_dependent_point();
  if (cache.resume.layer > config.depth) {
    throw ContractViolation("weight-learning net predicts no slots; nothing to cache");
  }
  cache.input_hash = input_fingerprint(image, edge);
  cache.weights_hash = net.shared_fingerprint();
  Activation<Scalar> start = network_input(config, image, edge);
  if (cache.resume == ResumePoint{1, false}) {
    cache.activation = std::move(start);
  } else {
    run_layers(config, net.shared(), std::move(start), ResumePoint{1, false}, nullptr, cache.resume,
               &cache.activation, true);
  }
  return cache;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, int> cached_forward(const WeightLearningNet<Scalar>& net,
                                              const ActivationCache<Scalar>& cache,
                                              const Tensor<Scalar>& gamma) {
  if (!cache.valid()) throw CacheInvalidError("activation cache is empty");
  if (cache.weights_hash != net.shared_fingerprint()) {
    throw CacheInvalidError("activation cache was built for different shared weights");
  }
  RunStats stats;
  const WeightSet<Scalar> weights = net.predict_weights(gamma);
  Tensor<Scalar> out = run_layers(net.base_config(), weights, cache.activation, cache.resume, &stats);
  return {out, stats.layers_run};
}

// ---------------------------------------------------------------------------
// Multi-path expansion

template <typename Scalar>
Tensor<Scalar> apply_layer_conv(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const LayerSpec& layer) {
  if (layer.kind == LayerKind::deconv) return conv_transpose2d(x, kernel, layer.stride, layer.padding);
  return conv2d(x, kernel, Conv2dOptions{layer.stride, layer.dilation, layer.padding});
}

template <typename Scalar>
Tensor<Scalar> multipath_expand(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>& gamma,
                                const Tensor<Scalar>& x, const LayerSpec& layer) {
  const Shape kshape = layer.kernel_shape();
  const Index n = shape_numel(kshape);
  if (a.rank() != 2 || a.dim(0) != n || b.shape() != Shape{n} || gamma.rank() != 1 || a.dim(1) != gamma.dim(0)) {
    throw DimensionError("multipath_expand: A " + shape_string(a.shape()) + ", B " + shape_string(b.shape()) +
                         ", gamma " + shape_string(gamma.shape()) + " for kernel " + shape_string(kshape));
  }
  const Index m = a.dim(1);
  using Array = typename Tensor<Scalar>::Array;
  Tensor<Scalar> total = apply_layer_conv(x, Tensor<Scalar>(kshape, b.values()), layer);
  const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> amat(a.data(), n, m);
  for (Index k = 0; k < m; ++k) {
    Array column = amat.col(k).array();
    Tensor<Scalar> path = apply_layer_conv(x, Tensor<Scalar>(kshape, std::move(column)), layer);
    total = add(total, scale(path, gamma.values()[k]));
  }
  return total;
}

#define DLF_INSTANTIATE_HYPERNET(S)                                                                   \
  template class WeightLearningNet<S>;                                                                \
  template struct ActivationCache<S>;                                                                 \
  template std::uint64_t input_fingerprint(const Tensor<S>&, const Tensor<S>&);                       \
  template ActivationCache<S> build_cache(const WeightLearningNet<S>&, const Tensor<S>&,              \
                                          const Tensor<S>&);                                          \
  template std::pair<Tensor<S>, int> cached_forward(const WeightLearningNet<S>&,                      \
                                                    const ActivationCache<S>&, const Tensor<S>&);     \
  template Tensor<S> apply_layer_conv(const Tensor<S>&, const Tensor<S>&, const LayerSpec&);          \
  template Tensor<S> multipath_expand(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,           \
                                      const Tensor<S>&, const LayerSpec&);

DLF_INSTANTIATE_HYPERNET(float)
DLF_INSTANTIATE_HYPERNET(double)

}  // namespace dlf
