#pragma once

#include "dlf/hypernet.hpp"
#include "dlf/operators.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dlf {

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at kPsnrCap (identical images).
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
/// L = 1, valid window positions only, averaged over channels.
double ssim(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Data

struct TrainingPair {
  Image input;
  Image target;
};

/// Filters: (clean, op(clean)). Restorations: (op(clean), clean).
TrainingPair make_pair(const OperatorSpec& op, const std::vector<double>& gamma_raw, const Image& clean,
                       std::uint64_t seed = 0);

/// Mean squared error; differentiable.
template <typename Scalar>
Tensor<Scalar> l2_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

/// Network inputs for one image: [1,3,H,W] and its edge map [1,1,H,W].
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> network_tensors(const Image& input);

/// Deterministic procedural images: gradients, checkerboards, filtered noise
/// and blobs.
std::vector<Image> synthetic_corpus(int count, Index size, std::uint64_t seed);
/// All PNG files of a directory, sorted by name.
std::vector<Image> load_corpus(const std::string& directory);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> decay_at = {0.6, 0.8};  // fractions of the total steps
  double decay_factor = 0.5;
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Tensor<Scalar>> params, AdamOptions options, int total_steps);

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  double learning_rate() const;
  int steps_taken() const { return t_; }

 private:
  std::vector<Tensor<Scalar>> params_;
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
  AdamOptions options_;
  int total_steps_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

/// An operator to train on. With `fixed_gammas` empty, gamma is sampled over
/// the operator's range; otherwise uniformly from the given values.
struct TrainOperator {
  OperatorSpec spec;
  std::vector<std::vector<double>> fixed_gammas;
};

struct TrainConfig {
  std::vector<TrainOperator> operators;
  BaseNetConfig base;
  HyperConfig hyper;
  int patch_size = 64;
  int batch_size = 1;
  int steps = 1000;
  AdamOptions optimizer;
  std::uint64_t seed = 1;
  int eval_every = 0;  // 0: evaluate only before and after training

  bool joint() const { return operators.size() > 1; }
  /// Length of the network's gamma input for this operator set.
  int gamma_dim() const;
  void validate() const;
};

/// Network input coordinates for a raw gamma: normalized parameters, with
/// the operator id first when several operators are trained jointly.
ParameterVector network_gamma(const OperatorSpec& spec, const std::vector<double>& raw, bool joint);

struct EvalItem {
  OperatorSpec op;
  std::vector<double> gamma;
  Image clean;
  std::uint64_t seed = 0;  // for stochastic operators
};

/// Seed used for the i-th image of an eval set.
std::uint64_t eval_seed(std::size_t image_index);

struct EvalEntry {
  std::string op;
  std::vector<double> gamma;
  double psnr = 0.0;
  double ssim = 0.0;
  double loss = 0.0;
  double input_psnr = 0.0;  // degraded input (or unfiltered image) vs target
  int images = 0;
};

struct EvalReport {
  int step = 0;
  std::vector<EvalEntry> entries;

  double mean_loss() const;
  const EvalEntry& find(const std::string& op, const std::vector<double>& gamma) const;
  /// One JSON object per entry.
  std::string to_jsonl() const;
  bool operator==(const EvalReport&) const;
};

/// Centre crops of the first `images` corpus images for every gamma.
std::vector<EvalItem> make_eval_set(const std::vector<Image>& corpus, const OperatorSpec& op,
                                    const std::vector<std::vector<double>>& gammas, int images, Index patch);

/// Runs the model on every item and averages per (operator, gamma).
template <typename Scalar>
EvalReport evaluate(const WeightLearningNet<Scalar>& net, const std::vector<EvalItem>& items, bool joint,
                    int step = 0);

/// Model output for one image.
template <typename Scalar>
Image run_model(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec, const std::vector<double>& gamma_raw,
                const Image& input, bool joint);

struct TrainCallbacks {
  std::function<void(const EvalReport&)> on_eval;
  std::function<void(int step, double loss)> on_step;
};

template <typename Scalar>
struct TrainResult {
  WeightLearningNet<Scalar> net;
  std::vector<EvalReport> reports;
};

/// Joint training of the weight-learning net and the shared base weights.
/// Throws NumericError naming the step when the loss becomes NaN or Inf.
template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& config, const std::vector<Image>& corpus,
                          const std::vector<EvalItem>& eval_set = {}, const TrainCallbacks& callbacks = {});

}  // namespace dlf
