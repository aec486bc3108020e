#pragma once

#include "dlf/hypernet.hpp"
#include "dlf/image.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dlf {

/// Edge strength: mean absolute difference to the 4 neighbours summed over
/// channels, replicate borders. Shape [1, H, W].
Tensor<double> edge_map(const Image& image);

/// Separable Gaussian, radius ceil(3 sigma), replicate borders.
Image gaussian_blur(const Image& image, double sigma);
Planes gaussian_blur(const Planes& planes, double sigma);

/// Called after every outer iteration with the unclamped current estimate.
using L0Observer = std::function<void(int iteration, double beta, const Planes& estimate)>;

struct L0Options {
  double kappa = 2.0;
  double beta_max = 1e5;
};

/// L0 gradient minimization by half-quadratic splitting with an FFT solve
/// (periodic boundary).
Image l0_smooth(const Image& image, double lambda, const L0Observer& observer = {}, L0Options options = {});

/// ||S - I||^2 + lambda * #{p : sum_c (dx S)^2 + (dy S)^2 > 1e-8} with
/// forward differences on the periodic domain.
double l0_objective(const Planes& estimate, const Image& image, double lambda);

struct WlsOptions {
  double alpha = 1.2;
  double epsilon = 1e-4;
  double tolerance = 1e-7;
  int max_iterations = 20000;
};

/// Weighted least squares smoothing: per channel (Id + lambda L) u = g where
/// L is the 4-neighbour Laplacian with weights from log-luminance gradients.
Image wls_smooth(const Image& image, double lambda, WlsOptions options = {});

/// Rolling guidance filter: J0 = Gaussian(I), then `iterations` joint
/// bilateral passes of I guided by the previous result.
Image rgf_smooth(const Image& image, double sigma_s, double sigma_r = 0.1, int iterations = 4);

/// Bicubic (Catmull-Rom) downsample by `scale`, then bicubic upsample back.
Image degrade_sr(const Image& image, int scale);
/// Bicubic resampling to an arbitrary size, pixel-centre aligned.
Image resize_bicubic(const Image& image, Index height, Index width);

/// Zero-mean i.i.d. noise with standard deviation sigma / 255.
Planes gaussian_noise_field(Index height, Index width, double sigma, std::uint64_t seed);
Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Operator registry

enum class SamplingSpace { linear, log };
enum class OperatorKind {
  filter,       // target = op(clean)
  restoration,  // input = op(clean), target = clean
};

struct ParamRange {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  SamplingSpace space = SamplingSpace::linear;
};

struct OperatorSpec {
  std::string name;
  std::vector<ParamRange> params;
  double operator_id = 1.0;
  OperatorKind kind = OperatorKind::filter;

  void validate() const;
  std::size_t arity() const { return params.size(); }
};

const std::vector<OperatorSpec>& operator_registry();
const OperatorSpec& find_operator(const std::string& name);

/// Parameters mapped into [0, 1]; with `include_operator_id` the operator id
/// is prepended.
ParameterVector normalize_gamma(const OperatorSpec& spec, const std::vector<double>& raw,
                                bool include_operator_id = false);
/// Throws ParameterError naming the first out-of-range value.
void check_gamma(const OperatorSpec& spec, const std::vector<double>& raw);
std::vector<double> sample_parameter(const OperatorSpec& spec, std::mt19937_64& rng);

/// Runs the reference operator. `seed` drives stochastic degradations.
Image apply_operator(const OperatorSpec& spec, const Image& image, const std::vector<double>& raw,
                     std::uint64_t seed = 0);

}  // namespace dlf
