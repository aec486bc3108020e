#pragma once

#include "dlf/training.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dlf {

// ---------------------------------------------------------------------------
// Receptive fields

struct PixelPoint {
  Index y = 0;
  Index x = 0;
};

/// Inclusive pixel rectangle.
struct PixelRect {
  Index top = 0, left = 0, bottom = -1, right = -1;

  bool contains(Index y, Index x) const { return y >= top && y <= bottom && x >= left && x <= right; }
  Index height() const { return bottom - top + 1; }
  Index width() const { return right - left + 1; }
};

/// Input pixels that can reach output pixel `p`, clipped to the image. With
/// `through_norm_statistics` the per-channel mean and variance of every
/// instance norm count as a path, which makes the field global behind the
/// first norm seen from the output. Without it only the conv, deconv and skip
/// geometry is used.
PixelRect theoretical_receptive_field(const BaseNetConfig& config, Index height, Index width, PixelPoint p,
                                      bool through_norm_statistics = true);

using BoolPlane = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ErfMask {
  BoolPlane mask;
  Plane magnitude;  // max over the four input channels of |d out(p) / d in|
  PixelPoint point;
  PixelPoint argmax;
  double grad_max = 0.0;
  double threshold = 0.0;
  std::vector<double> gamma;  // raw
  bool degenerate = false;    // input gradient identically zero

  Index count() const { return mask.count(); }
};

inline constexpr double kErfThreshold = 0.025;

/// Backpropagates a unit seed on all output channels at `p` to the network
/// input and marks pixels above kErfThreshold times the largest magnitude.
template <typename Scalar>
ErfMask effective_receptive_field(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec,
                                  const std::vector<double>& gamma_raw, const Image& image, PixelPoint p,
                                  bool joint = false);

/// The input with mask pixels painted red.
Image erf_overlay(const Image& image, const ErfMask& erf);

// ---------------------------------------------------------------------------
// Weight statistics

struct LayerStats {
  int layer = 0;
  std::optional<double> correlation;  // empty when either kernel has zero variance
  double mean_a = 0.0, mean_b = 0.0;
  double var_a = 0.0, var_b = 0.0;  // population variances
};

struct WeightStats {
  std::vector<LayerStats> layers;
  std::string to_json() const;
};

/// Per-layer Pearson correlation of the flattened kernels, with the mean and
/// variance of each.
template <typename Scalar>
WeightStats weight_statistics(const WeightSet<Scalar>& a, const WeightSet<Scalar>& b);

// ---------------------------------------------------------------------------
// Multi-path equivalence

struct MultipathReport {
  int trials = 0;
  int failures = 0;
  double tolerance = 0.0;
  double worst_error = 0.0;
  std::string worst_slot;

  bool passed() const { return failures == 0; }
  std::string to_json() const;
};

/// Composes the predictor stages of one slot into a single affine map,
/// ignoring any hidden relu: A [n, m] and B [n] over the whole kernel, with
/// unpredicted entries taken from the shared weights.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> affine_form(const WeightLearningNet<Scalar>& net, std::size_t predictor);

/// Compares the multi-path expansion of each predicted conv slot with the
/// convolution by its predicted kernel on random gamma and input. A net with
/// relu between stages is reported as failing, not rejected.
template <typename Scalar>
MultipathReport verify_multipath(const WeightLearningNet<Scalar>& net, int trials, double tolerance,
                                 std::mt19937_64& rng, Index size = 8);

// ---------------------------------------------------------------------------
// Interpolation on unseen parameters

struct GapEntry {
  double gamma = 0.0;
  double psnr = 0.0;
  double lower_gamma = 0.0, upper_gamma = 0.0;
  double interpolated_psnr = 0.0;  // neighbours' scores interpolated linearly in gamma
  double neighbour_mean = 0.0;
  double gap = 0.0;                // psnr - interpolated_psnr
};

struct InterpolationReport {
  EvalReport seen;
  EvalReport unseen;
  std::vector<GapEntry> gaps;
  std::string to_json() const;
};

/// Scores a single-parameter model at its training gammas and at unseen ones
/// inside their range.
template <typename Scalar>
InterpolationReport interpolation_eval(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec,
                                       std::vector<double> train_gammas, const std::vector<double>& test_gammas,
                                       const std::vector<Image>& clean, bool joint = false);

// ---------------------------------------------------------------------------
// Sizes

struct CountReport {
  Index conv = 0;
  Index norm = 0;
  Index predicted = 0;
  Index fc = 0;      // predicted * (m + 1)
  Index shared = 0;  // base scalars not predicted
  Index total() const { return fc + shared; }
  std::string to_json() const;
};

CountReport count_report(const BaseNetConfig& config, const HyperConfig& hyper);

}  // namespace dlf
