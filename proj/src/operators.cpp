#include "dlf/operators.hpp"

#include "dlf/errors.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>

namespace dlf {

namespace {

Index clamp_index(Index i, Index n) { return std::clamp<Index>(i, 0, n - 1); }

void require_image(const Image& image, const char* op) {
  if (image.empty()) throw DimensionError(std::string(op) + ": empty image");
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

Plane blur_rows(const Plane& in, const std::vector<double>& k) {
  const Index r = static_cast<Index>(k.size() / 2);
  Plane out = Plane::Zero(in.rows(), in.cols());
  for (Index y = 0; y < in.rows(); ++y)
    for (Index x = 0; x < in.cols(); ++x) {
      double acc = 0.0;
      for (Index i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * in(y, clamp_index(x + i, in.cols()));
      out(y, x) = acc;
    }
  return out;
}

Plane blur_cols(const Plane& in, const std::vector<double>& k) {
  const Index r = static_cast<Index>(k.size() / 2);
  Plane out = Plane::Zero(in.rows(), in.cols());
  for (Index y = 0; y < in.rows(); ++y)
    for (Index i = -r; i <= r; ++i) out.row(y) += k[static_cast<std::size_t>(i + r)] * in.row(clamp_index(y + i, in.rows()));
  return out;
}

}  // namespace

Tensor<double> edge_map(const Image& image) {
  require_image(image, "edge_map");
  const Index h = image.height(), w = image.width();
  Tensor<double>::Array e = Tensor<double>::Array::Zero(h * w);
  for (int c = 0; c < 3; ++c) {
    const Plane& p = image.channel(c);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double v = p(y, x);
        e[y * w + x] += std::abs(v - p(y, clamp_index(x - 1, w))) + std::abs(v - p(y, clamp_index(x + 1, w))) +
                        std::abs(v - p(clamp_index(y - 1, h), x)) + std::abs(v - p(clamp_index(y + 1, h), x));
      }
  }
  return Tensor<double>({1, h, w}, e / 4.0);
}

Planes gaussian_blur(const Planes& planes, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian_blur: sigma must be positive, got " + std::to_string(sigma));
  const std::vector<double> k = gaussian_kernel(sigma);
  Planes out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = blur_cols(blur_rows(planes[c], k), k);
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  require_image(image, "gaussian_blur");
  return Image(gaussian_blur(image.planes(), sigma));
}

// ---------------------------------------------------------------------------
// L0 smoothing

namespace {

using Spectrum = Eigen::Array<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Fft2 {
 public:
  Spectrum forward(const Plane& p) {
    Spectrum s(p.rows(), p.cols());
    std::vector<std::complex<double>> in, out;
    for (Index y = 0; y < p.rows(); ++y) {
      in.assign(p.row(y).data(), p.row(y).data() + p.cols());
      fft_.fwd(out, in);
      for (Index x = 0; x < p.cols(); ++x) s(y, x) = out[static_cast<std::size_t>(x)];
    }
    columns(s, false);
    return s;
  }

  Plane inverse_real(Spectrum s) {
    columns(s, true);
    Plane p(s.rows(), s.cols());
    std::vector<std::complex<double>> in, out;
    for (Index y = 0; y < s.rows(); ++y) {
      in.assign(s.row(y).data(), s.row(y).data() + s.cols());
      fft_.inv(out, in);
      for (Index x = 0; x < s.cols(); ++x) p(y, x) = out[static_cast<std::size_t>(x)].real();
    }
    return p;
  }

 private:
  void columns(Spectrum& s, bool inverse) {
    std::vector<std::complex<double>> in(static_cast<std::size_t>(s.rows())), out;
    for (Index x = 0; x < s.cols(); ++x) {
      for (Index y = 0; y < s.rows(); ++y) in[static_cast<std::size_t>(y)] = s(y, x);
      if (inverse) fft_.inv(out, in);
      else fft_.fwd(out, in);
      for (Index y = 0; y < s.rows(); ++y) s(y, x) = out[static_cast<std::size_t>(y)];
    }
  }

  Eigen::FFT<double> fft_;
};

// Forward differences on the periodic domain.
Plane diff_x(const Plane& p) {
  Plane d(p.rows(), p.cols());
  const Index w = p.cols();
  for (Index x = 0; x < w; ++x) d.col(x) = p.col((x + 1) % w) - p.col(x);
  return d;
}

Plane diff_y(const Plane& p) {
  Plane d(p.rows(), p.cols());
  const Index h = p.rows();
  for (Index y = 0; y < h; ++y) d.row(y) = p.row((y + 1) % h) - p.row(y);
  return d;
}

// Adjoints of diff_x / diff_y.
Plane diff_x_adjoint(const Plane& g) {
  Plane d(g.rows(), g.cols());
  const Index w = g.cols();
  for (Index x = 0; x < w; ++x) d.col(x) = g.col((x + w - 1) % w) - g.col(x);
  return d;
}

Plane diff_y_adjoint(const Plane& g) {
  Plane d(g.rows(), g.cols());
  const Index h = g.rows();
  for (Index y = 0; y < h; ++y) d.row(y) = g.row((y + h - 1) % h) - g.row(y);
  return d;
}

}  // namespace

double l0_objective(const Planes& estimate, const Image& image, double lambda) {
  double fidelity = 0.0;
  Plane magnitude = Plane::Zero(image.height(), image.width());
  for (std::size_t c = 0; c < 3; ++c) {
    fidelity += (estimate[c] - image.planes()[c]).square().sum();
    magnitude += diff_x(estimate[c]).square() + diff_y(estimate[c]).square();
  }
  return fidelity + lambda * static_cast<double>((magnitude > 1e-8).count());
}

Image l0_smooth(const Image& image, double lambda, const L0Observer& observer, L0Options options) {
  require_image(image, "l0_smooth");
  if (!(lambda > 0.0)) throw ParameterError("l0_smooth: lambda must be positive, got " + std::to_string(lambda));
  if (!(options.kappa > 1.0)) throw ParameterError("l0_smooth: kappa must exceed 1");
  const Index h = image.height(), w = image.width();
  constexpr double two_pi = 6.283185307179586;

  Plane denominator(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      denominator(y, x) = (2.0 - 2.0 * std::cos(two_pi * x / w)) + (2.0 - 2.0 * std::cos(two_pi * y / h));

  Fft2 fft;
  std::array<Spectrum, 3> image_spectrum;
  for (std::size_t c = 0; c < 3; ++c) image_spectrum[c] = fft.forward(image.planes()[c]);

  Planes s = image.planes();
  int iteration = 0;
  for (double beta = 2.0 * lambda; beta < options.beta_max; beta *= options.kappa) {
    Planes gx, gy;
    Plane magnitude = Plane::Zero(h, w);
    for (std::size_t c = 0; c < 3; ++c) {
      gx[c] = diff_x(s[c]);
      gy[c] = diff_y(s[c]);
      magnitude += gx[c].square() + gy[c].square();
    }
    const Plane keep = (magnitude > lambda / beta).cast<double>();
    for (std::size_t c = 0; c < 3; ++c) {
      const Plane target = diff_x_adjoint(gx[c] * keep) + diff_y_adjoint(gy[c] * keep);
      Spectrum numerator = image_spectrum[c] + beta * fft.forward(target);
      numerator /= (1.0 + beta * denominator).cast<std::complex<double>>();
      s[c] = fft.inverse_real(std::move(numerator));
    }
    if (observer) observer(iteration, beta, s);
    ++iteration;
  }
  return Image(std::move(s));
}

// ---------------------------------------------------------------------------
// WLS

Image wls_smooth(const Image& image, double lambda, WlsOptions options) {
  require_image(image, "wls_smooth");
  if (!(lambda >= 0.0)) throw ParameterError("wls_smooth: lambda must be non-negative, got " + std::to_string(lambda));
  if (lambda == 0.0) return image;
  const Index h = image.height(), w = image.width(), n = h * w;
  const Plane luminance =
      (0.2126 * image.channel(0) + 0.7152 * image.channel(1) + 0.0722 * image.channel(2) + 1e-4).log();
  auto weight = [&](double a, double b) { return 1.0 / (std::pow(std::abs(a - b), options.alpha) + options.epsilon); };

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(5 * n));
  Eigen::VectorXd diagonal = Eigen::VectorXd::Ones(n);
  auto link = [&](Index i, Index j, double a) {
    const double v = lambda * a;
    triplets.emplace_back(i, j, -v);
    triplets.emplace_back(j, i, -v);
    diagonal[i] += v;
    diagonal[j] += v;
  };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Index i = y * w + x;
      if (x + 1 < w) link(i, i + 1, weight(luminance(y, x), luminance(y, x + 1)));
      if (y + 1 < h) link(i, i + w, weight(luminance(y, x), luminance(y + 1, x)));
    }
  for (Index i = 0; i < n; ++i) triplets.emplace_back(i, i, diagonal[i]);
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper, Eigen::IncompleteCholesky<double>>
      solver;
  solver.setTolerance(options.tolerance);
  solver.setMaxIterations(options.max_iterations);
  solver.compute(a);
  if (solver.info() != Eigen::Success) throw NumericError("wls_smooth: preconditioner factorization failed");

  Planes out;
  for (std::size_t c = 0; c < 3; ++c) {
    const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(image.planes()[c].data(), n);
    const Eigen::VectorXd u = solver.solve(g);
    if (solver.info() != Eigen::Success) {
      throw NumericError("wls_smooth: conjugate gradients stopped after " + std::to_string(solver.iterations()) +
                         " iterations at relative residual " + std::to_string(solver.error()));
    }
    out[c].resize(h, w);
    Eigen::Map<Eigen::VectorXd>(out[c].data(), n) = u;
  }
  return Image(std::move(out));
}

// ---------------------------------------------------------------------------
// Rolling guidance

namespace {

Planes joint_bilateral(const Planes& input, const Planes& guide, double sigma_s, double sigma_r) {
  const Index h = input[0].rows(), w = input[0].cols();
  const Index r = static_cast<Index>(std::ceil(3.0 * sigma_s));
  const Index side = 2 * r + 1;
  std::vector<double> spatial(static_cast<std::size_t>(side * side));
  for (Index dy = -r; dy <= r; ++dy)
    for (Index dx = -r; dx <= r; ++dx)
      spatial[static_cast<std::size_t>((dy + r) * side + dx + r)] =
          std::exp(-static_cast<double>(dy * dy + dx * dx) / (2.0 * sigma_s * sigma_s));
  const double range_scale = 1.0 / (2.0 * sigma_r * sigma_r);

  Planes out;
  for (auto& p : out) p.resize(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double g0 = guide[0](y, x), g1 = guide[1](y, x), g2 = guide[2](y, x);
      double total = 0.0, a0 = 0.0, a1 = 0.0, a2 = 0.0;
      for (Index dy = -r; dy <= r; ++dy) {
        const Index qy = clamp_index(y + dy, h);
        for (Index dx = -r; dx <= r; ++dx) {
          const Index qx = clamp_index(x + dx, w);
          const double d0 = guide[0](qy, qx) - g0, d1 = guide[1](qy, qx) - g1, d2 = guide[2](qy, qx) - g2;
          const double wt = spatial[static_cast<std::size_t>((dy + r) * side + dx + r)] *
                            std::exp(-(d0 * d0 + d1 * d1 + d2 * d2) * range_scale);
          total += wt;
          a0 += wt * input[0](qy, qx);
          a1 += wt * input[1](qy, qx);
          a2 += wt * input[2](qy, qx);
        }
      }
      out[0](y, x) = a0 / total;
      out[1](y, x) = a1 / total;
      out[2](y, x) = a2 / total;
    }
  return out;
}

}  // namespace

Image rgf_smooth(const Image& image, double sigma_s, double sigma_r, int iterations) {
  require_image(image, "rgf_smooth");
  if (!(sigma_s > 0.0) || !(sigma_r > 0.0)) {
    throw ParameterError("rgf_smooth: sigmas must be positive, got sigma_s=" + std::to_string(sigma_s) +
                         " sigma_r=" + std::to_string(sigma_r));
  }
  if (iterations < 0) throw ParameterError("rgf_smooth: negative iteration count");
  Planes j = gaussian_blur(image.planes(), sigma_s);
  for (int t = 0; t < iterations; ++t) j = joint_bilateral(image.planes(), j, sigma_s, sigma_r);
  return Image(std::move(j));
}

// ---------------------------------------------------------------------------
// Bicubic resampling

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

// Resamples along rows (axis 1) or columns (axis 0).
Plane resample(const Plane& in, Index out_len, int axis) {
  const Index in_len = axis == 1 ? in.cols() : in.rows();
  const double ratio = static_cast<double>(in_len) / static_cast<double>(out_len);
  Plane out = axis == 1 ? Plane::Zero(in.rows(), out_len) : Plane::Zero(out_len, in.cols());
  for (Index i = 0; i < out_len; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    const Index base = static_cast<Index>(std::floor(src));
    for (Index k = base - 1; k <= base + 2; ++k) {
      const double wt = cubic_weight(src - static_cast<double>(k));
      if (wt == 0.0) continue;
      const Index j = clamp_index(k, in_len);
      if (axis == 1) out.col(i) += wt * in.col(j);
      else out.row(i) += wt * in.row(j);
    }
  }
  return out;
}

}  // namespace

Image resize_bicubic(const Image& image, Index height, Index width) {
  require_image(image, "resize_bicubic");
  if (height <= 0 || width <= 0) throw DimensionError("resize_bicubic: target size must be positive");
  Planes out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = resample(resample(image.planes()[c], width, 1), height, 0);
  return Image(std::move(out));
}

Image degrade_sr(const Image& image, int scale) {
  require_image(image, "degrade_sr");
  if (scale < 1) throw ParameterError("degrade_sr: scale must be a positive integer, got " + std::to_string(scale));
  if (image.height() % scale != 0 || image.width() % scale != 0) {
    throw ContractViolation("degrade_sr: " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                            " image is not divisible by scale " + std::to_string(scale));
  }
  const Image small = resize_bicubic(image, image.height() / scale, image.width() / scale);
  return resize_bicubic(small, image.height(), image.width());
}

// ---------------------------------------------------------------------------
// Noise

Planes gaussian_noise_field(Index height, Index width, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative, got " + std::to_string(sigma));
  std::mt19937_64 rng(seed);
  Planes out;
  if (sigma == 0.0) {
    for (auto& p : out) p = Plane::Zero(height, width);
    return out;
  }
  std::normal_distribution<double> dist(0.0, sigma / 255.0);
  for (auto& p : out) {
    p.resize(height, width);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = dist(rng);
  }
  return out;
}

Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed) {
  Planes noise = gaussian_noise_field(image.height(), image.width(), sigma, seed);
  for (std::size_t c = 0; c < 3; ++c) noise[c] += image.planes()[c];
  return Image(std::move(noise));
}

// ---------------------------------------------------------------------------
// Registry

void OperatorSpec::validate() const {
  if (name.empty()) throw RegistryError("operator without a name");
  if (!(operator_id > 0.0 && operator_id <= 1.0)) {
    throw RegistryError("operator id of " + name + " must lie in (0, 1]");
  }
  for (const ParamRange& p : params) {
    if (!(p.lo < p.hi)) throw RegistryError(name + "." + p.name + ": empty range");
    if (p.space == SamplingSpace::log && !(p.lo > 0.0)) {
      throw RegistryError(name + "." + p.name + ": log sampling needs a positive lower bound");
    }
  }
}

const std::vector<OperatorSpec>& operator_registry() {
  static const std::vector<OperatorSpec> registry = [] {
    std::vector<OperatorSpec> r = {
        {"l0", {{"lambda", 0.002, 0.2, SamplingSpace::log}}, 0.1, OperatorKind::filter},
        {"wls", {{"lambda", 0.1, 10.0, SamplingSpace::log}}, 0.2, OperatorKind::filter},
        {"rgf", {{"sigma_s", 1.0, 10.0, SamplingSpace::linear}}, 0.3, OperatorKind::filter},
        {"gaussian", {{"sigma", 0.5, 2.0, SamplingSpace::linear}}, 0.4, OperatorKind::filter},
        {"sr", {{"scale", 2.0, 4.0, SamplingSpace::linear}}, 0.5, OperatorKind::restoration},
        {"noise", {{"sigma", 15.0, 50.0, SamplingSpace::linear}}, 0.6, OperatorKind::restoration},
        {"identity", {{"unused", 0.0, 1.0, SamplingSpace::linear}}, 1.0, OperatorKind::filter},
    };
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        if (r[i].operator_id == r[j].operator_id) throw RegistryError("duplicate operator id");
    }
    return r;
  }();
  return registry;
}

const OperatorSpec& find_operator(const std::string& name) {
  for (const OperatorSpec& s : operator_registry())
    if (s.name == name) return s;
  throw RegistryError("unknown operator '" + name + "'");
}

void check_gamma(const OperatorSpec& spec, const std::vector<double>& raw) {
  if (raw.size() != spec.arity()) {
    throw ParameterError(spec.name + " takes " + std::to_string(spec.arity()) + " parameter(s), got " +
                         std::to_string(raw.size()));
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const ParamRange& p = spec.params[i];
    if (!std::isfinite(raw[i]) || raw[i] < p.lo || raw[i] > p.hi) {
      throw ParameterError(spec.name + "." + p.name + " = " + std::to_string(raw[i]) + " outside [" +
                           std::to_string(p.lo) + ", " + std::to_string(p.hi) + "]");
    }
  }
}

ParameterVector normalize_gamma(const OperatorSpec& spec, const std::vector<double>& raw, bool include_operator_id) {
  check_gamma(spec, raw);
  ParameterVector out;
  if (include_operator_id) out.values.push_back(spec.operator_id);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const ParamRange& p = spec.params[i];
    const double t = p.space == SamplingSpace::log ? (std::log(raw[i]) - std::log(p.lo)) / (std::log(p.hi) - std::log(p.lo))
                                                   : (raw[i] - p.lo) / (p.hi - p.lo);
    out.values.push_back(std::clamp(t, 0.0, 1.0));
  }
  return out;
}

std::vector<double> sample_parameter(const OperatorSpec& spec, std::mt19937_64& rng) {
  std::vector<double> out;
  for (const ParamRange& p : spec.params) {
    if (p.space == SamplingSpace::log) {
      std::uniform_real_distribution<double> u(std::log(p.lo), std::log(p.hi));
      out.push_back(std::clamp(std::exp(u(rng)), p.lo, p.hi));
    } else {
      std::uniform_real_distribution<double> u(p.lo, p.hi);
      out.push_back(u(rng));
    }
  }
  return out;
}

Image apply_operator(const OperatorSpec& spec, const Image& image, const std::vector<double>& raw, std::uint64_t seed) {
  check_gamma(spec, raw);
  const double v = raw.at(0);
  if (spec.name == "l0") return l0_smooth(image, v);
  if (spec.name == "wls") return wls_smooth(image, v);
  if (spec.name == "rgf") return rgf_smooth(image, v);
  if (spec.name == "gaussian") return gaussian_blur(image, v);
  if (spec.name == "sr") return degrade_sr(image, static_cast<int>(std::lround(v)));
  if (spec.name == "noise") return add_gaussian_noise(image, v, seed);
  if (spec.name == "identity") return image;
  throw RegistryError("no reference implementation for operator '" + spec.name + "'");
}

}  // namespace dlf
