#include "dlf/training.hpp"

#include "dlf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

namespace dlf {

// ---------------------------------------------------------------------------
// Metrics

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                         " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

// Correlation with a separable kernel over valid positions only.
Plane filter_valid(const Plane& p, const std::vector<double>& k) {
  const Index n = static_cast<Index>(k.size());
  const Index oh = p.rows() - n + 1, ow = p.cols() - n + 1;
  Plane rows = Plane::Zero(p.rows(), ow);
  for (Index i = 0; i < n; ++i) rows += k[static_cast<std::size_t>(i)] * p.middleCols(i, ow);
  Plane out = Plane::Zero(oh, ow);
  for (Index i = 0; i < n; ++i) out += k[static_cast<std::size_t>(i)] * rows.middleRows(i, oh);
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_size(a, b, "psnr");
  double se = 0.0;
  for (int c = 0; c < 3; ++c) se += (a.channel(c) - b.channel(c)).square().sum();
  const double mse = se / (3.0 * static_cast<double>(a.height() * a.width()));
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  constexpr int window = 11;
  if (a.height() < window || a.width() < window) {
    throw ContractViolation("ssim needs at least 11x11 pixels, got " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()));
  }
  std::vector<double> k(window);
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - window / 2;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= total;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    const Plane& x = a.channel(c);
    const Plane& y = b.channel(c);
    const Plane mx = filter_valid(x, k), my = filter_valid(y, k);
    const Plane sxx = filter_valid(x * x, k) - mx * mx;
    const Plane syy = filter_valid(y * y, k) - my * my;
    const Plane sxy = filter_valid(x * y, k) - mx * my;
    // Products are materialized so contraction into fused multiply-adds
    // cannot make the result depend on argument order.
    const Plane mxx = mx * mx, myy = my * my, mxy = mx * my;
    const Plane map = ((2.0 * mxy + c1) * (2.0 * sxy + c2)) / ((mxx + myy + c1) * (sxx + syy + c2));
    acc += map.mean();
  }
  return acc / 3.0;
}

// ---------------------------------------------------------------------------
// Data

TrainingPair make_pair(const OperatorSpec& op, const std::vector<double>& gamma_raw, const Image& clean,
                       std::uint64_t seed) {
  Image processed = apply_operator(op, clean, gamma_raw, seed);
  if (op.kind == OperatorKind::restoration) return {std::move(processed), clean};
  return {clean, std::move(processed)};
}

template <typename Scalar>
Tensor<Scalar> l2_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  return mse(pred, target);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> network_tensors(const Image& input) {
  const Tensor<double> e = edge_map(input);
  return {image_tensor<Scalar>(input), Tensor<Scalar>({1, 1, input.height(), input.width()}, e.values().cast<Scalar>())};
}

std::vector<Image> synthetic_corpus(int count, Index size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto colour = [&] { return std::array<double, 3>{u(rng), u(rng), u(rng)}; };
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) {
    switch (i % 4) {
      case 0: {
        const auto c0 = colour(), c1 = colour();
        const double angle = u(rng) * 6.283185307179586;
        const double dx = std::cos(angle), dy = std::sin(angle);
        out.push_back(Image::from_function(size, size, [&](int c, Index y, Index x) {
          const double t = 0.5 + ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / static_cast<double>(size);
          return c0[static_cast<std::size_t>(c)] * (1 - t) + c1[static_cast<std::size_t>(c)] * t;
        }));
        break;
      }
      case 1: {
        const auto c0 = colour(), c1 = colour();
        const Index cell = 4 + static_cast<Index>(u(rng) * 12);
        out.push_back(Image::from_function(size, size, [&](int c, Index y, Index x) {
          return ((y / cell + x / cell) % 2 == 0 ? c0 : c1)[static_cast<std::size_t>(c)];
        }));
        break;
      }
      case 2: {
        const Image noise = Image::from_function(size, size, [&](int, Index, Index) { return u(rng); });
        Planes p = gaussian_blur(noise.planes(), 1.0 + 2.0 * u(rng));
        for (auto& plane : p) {
          const double lo = plane.minCoeff(), hi = plane.maxCoeff();
          plane = (plane - lo) / std::max(hi - lo, 1e-12);
        }
        out.push_back(Image(std::move(p)));
        break;
      }
      default: {
        const auto bg = colour();
        struct Blob {
          double cy, cx, r;
          std::array<double, 3> c;
        };
        std::vector<Blob> blobs;
        const int n = 3 + static_cast<int>(u(rng) * 5);
        for (int b = 0; b < n; ++b) {
          blobs.push_back({u(rng) * size, u(rng) * size, (0.08 + 0.2 * u(rng)) * size, colour()});
        }
        out.push_back(Image::from_function(size, size, [&](int c, Index y, Index x) {
          double v = bg[static_cast<std::size_t>(c)];
          for (const Blob& b : blobs)
            if ((y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx) < b.r * b.r) v = b.c[static_cast<std::size_t>(c)];
          return v;
        }));
        break;
      }
    }
  }
  return out;
}

std::vector<Image> load_corpus(const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) throw IoError("corpus directory not found: " + directory);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) out.push_back(read_png(f.string()));
  if (out.empty()) throw IoError("no PNG files in " + directory);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<Tensor<Scalar>> params, AdamOptions options, int total_steps)
    : params_(std::move(params)), options_(std::move(options)), total_steps_(total_steps) {
  for (const auto& p : params_) {
    m_.push_back(Eigen::ArrayXd::Zero(p.numel()));
    v_.push_back(Eigen::ArrayXd::Zero(p.numel()));
  }
}

template <typename Scalar>
double Adam<Scalar>::learning_rate() const {
  double lr = options_.learning_rate;
  for (double at : options_.decay_at)
    if (static_cast<double>(t_) >= at * total_steps_) lr *= options_.decay_factor;
  return lr;
}

template <typename Scalar>
void Adam<Scalar>::step() {
  const double lr = learning_rate();
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, t_);
  const double c2 = 1.0 - std::pow(options_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar>& p = params_[i];
    const Eigen::ArrayXd g = p.grad().template cast<double>();
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.square();
    if (lr != 0.0) {
      const Eigen::ArrayXd update = lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + options_.epsilon);
      p.mutable_values() -= update.cast<Scalar>();
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Training

int TrainConfig::gamma_dim() const {
  if (operators.empty()) return 0;
  return static_cast<int>(operators.front().spec.arity()) + (joint() ? 1 : 0);
}

void TrainConfig::validate() const {
  if (operators.empty()) throw ContractViolation("training needs at least one operator");
  for (const TrainOperator& op : operators) {
    op.spec.validate();
    if (op.spec.arity() != operators.front().spec.arity()) {
      throw ContractViolation("jointly trained operators must take the same number of parameters");
    }
    for (const auto& g : op.fixed_gammas) check_gamma(op.spec, g);
  }
  if (patch_size <= 0 || patch_size % 2 != 0) throw ContractViolation("patch_size must be positive and even");
  if (steps <= 0) throw ContractViolation("steps must be positive");
  if (batch_size <= 0) throw ContractViolation("batch_size must be positive");
  if (eval_every < 0) throw ContractViolation("eval_every must be non-negative");
  base.validate();
  hyper.validate();
  if (hyper.input_dim != gamma_dim()) {
    throw ContractViolation("weight-learning net takes " + std::to_string(hyper.input_dim) +
                            " inputs but the operator set needs " + std::to_string(gamma_dim()));
  }
}

ParameterVector network_gamma(const OperatorSpec& spec, const std::vector<double>& raw, bool joint) {
  return normalize_gamma(spec, raw, joint);
}

double EvalReport::mean_loss() const {
  if (entries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : entries) s += e.loss;
  return s / static_cast<double>(entries.size());
}

const EvalEntry& EvalReport::find(const std::string& op, const std::vector<double>& gamma) const {
  for (const auto& e : entries)
    if (e.op == op && e.gamma == gamma) return e;
  throw ContractViolation("no evaluation entry for operator " + op);
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::json j = {{"step", step},   {"operator", e.op}, {"gamma", e.gamma},
                        {"psnr", e.psnr}, {"ssim", e.ssim},   {"loss", e.loss},
                        {"input_psnr", e.input_psnr}};
    out += j.dump() + "\n";
  }
  return out;
}

bool EvalReport::operator==(const EvalReport& o) const {
  if (step != o.step || entries.size() != o.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const EvalEntry &a = entries[i], &b = o.entries[i];
    if (a.op != b.op || a.gamma != b.gamma || a.psnr != b.psnr || a.ssim != b.ssim || a.loss != b.loss ||
        a.input_psnr != b.input_psnr || a.images != b.images) {
      return false;
    }
  }
  return true;
}

std::uint64_t eval_seed(std::size_t image_index) { return 1000003ULL * (image_index + 1); }

std::vector<EvalItem> make_eval_set(const std::vector<Image>& corpus, const OperatorSpec& op,
                                    const std::vector<std::vector<double>>& gammas, int images, Index patch) {
  if (images <= 0 || static_cast<std::size_t>(images) > corpus.size()) {
    throw ContractViolation("eval set asks for " + std::to_string(images) + " of " + std::to_string(corpus.size()) +
                            " corpus images");
  }
  std::vector<EvalItem> out;
  for (const auto& g : gammas) {
    check_gamma(op, g);
    for (int i = 0; i < images; ++i) {
      const Image& img = corpus[static_cast<std::size_t>(i)];
      if (img.height() < patch || img.width() < patch) throw ContractViolation("corpus image smaller than patch");
      out.push_back({op, g, img.crop((img.height() - patch) / 2, (img.width() - patch) / 2, patch, patch),
                     eval_seed(static_cast<std::size_t>(i))});
    }
  }
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> model_output(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec,
                            const std::vector<double>& gamma_raw, const Image& input, bool joint) {
  const auto [image, edge] = network_tensors<Scalar>(input);
  const WeightSet<Scalar> w = net.predict_weights(network_gamma(spec, gamma_raw, joint));
  return forward_base(net.base_config(), w, image, edge);
}

}  // namespace

template <typename Scalar>
Image run_model(const WeightLearningNet<Scalar>& net, const OperatorSpec& spec, const std::vector<double>& gamma_raw,
                const Image& input, bool joint) {
  const Tensor<Scalar> out = model_output(net, spec, gamma_raw, input, joint);
  if (!out.values().isFinite().all()) throw NumericError("model output contains non-finite values");
  return image_from_tensor(out);
}

template <typename Scalar>
EvalReport evaluate(const WeightLearningNet<Scalar>& net, const std::vector<EvalItem>& items, bool joint, int step) {
  EvalReport report;
  report.step = step;
  std::map<std::pair<std::string, std::vector<double>>, std::size_t> index;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const EvalItem& item = items[i];
    const TrainingPair pair = make_pair(item.op, item.gamma, item.clean, item.seed);
    const Tensor<Scalar> out = model_output(net, item.op, item.gamma, pair.input, joint);
    if (!out.values().isFinite().all()) throw NumericError("model output contains non-finite values");
    const Image result = image_from_tensor(out);
    const double loss = static_cast<double>(l2_loss(out, image_tensor<Scalar>(pair.target)).item());

    const auto key = std::make_pair(item.op.name, item.gamma);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, report.entries.size()).first;
      report.entries.push_back({item.op.name, item.gamma});
    }
    EvalEntry& e = report.entries[it->second];
    e.psnr += psnr(result, pair.target);
    e.ssim += ssim(result, pair.target);
    e.loss += loss;
    e.input_psnr += psnr(pair.input, pair.target);
    e.images += 1;
  }
  for (EvalEntry& e : report.entries) {
    e.psnr /= e.images;
    e.ssim /= e.images;
    e.loss /= e.images;
    e.input_psnr /= e.images;
  }
  return report;
}

template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& config, const std::vector<Image>& corpus,
                          const std::vector<EvalItem>& eval_set, const TrainCallbacks& callbacks) {
  config.validate();
  if (corpus.empty()) throw ContractViolation("training corpus is empty");
  for (const Image& img : corpus) {
    if (img.height() < config.patch_size || img.width() < config.patch_size) {
      throw ContractViolation("corpus image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                              " is smaller than the " + std::to_string(config.patch_size) + " patch");
    }
  }

  std::mt19937_64 rng(config.seed);
  TrainResult<Scalar> result{WeightLearningNet<Scalar>::initialize(config.base, config.hyper, rng), {}};
  WeightLearningNet<Scalar>& net = result.net;
  std::vector<Tensor<Scalar>> params;
  for (auto& [name, t] : net.named_parameters()) {
    t.set_requires_grad(true);
    params.push_back(t);
  }
  Adam<Scalar> adam(params, config.optimizer, config.steps);

  auto run_eval = [&](int step) {
    if (eval_set.empty()) return;
    result.reports.push_back(evaluate(net, eval_set, config.joint(), step));
    if (callbacks.on_eval) callbacks.on_eval(result.reports.back());
  };

  const Index patch = config.patch_size;
  run_eval(0);
  for (int step = 0; step < config.steps; ++step) {
    double loss_value = 0.0;
    {
      Tape<Scalar> tape;
      Tensor<Scalar> total;
      for (int b = 0; b < config.batch_size; ++b) {
        const TrainOperator& op =
            config.operators[std::uniform_int_distribution<std::size_t>(0, config.operators.size() - 1)(rng)];
        const std::vector<double> gamma =
            op.fixed_gammas.empty()
                ? sample_parameter(op.spec, rng)
                : op.fixed_gammas[std::uniform_int_distribution<std::size_t>(0, op.fixed_gammas.size() - 1)(rng)];
        const Image& img = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
        const Index y = std::uniform_int_distribution<Index>(0, img.height() - patch)(rng);
        const Index x = std::uniform_int_distribution<Index>(0, img.width() - patch)(rng);
        const TrainingPair pair = make_pair(op.spec, gamma, img.crop(y, x, patch, patch), rng());

        const auto [input, edge] = network_tensors<Scalar>(pair.input);
        const WeightSet<Scalar> w = net.predict_weights(network_gamma(op.spec, gamma, config.joint()));
        Tensor<Scalar> loss = l2_loss(forward_base(config.base, w, input, edge), image_tensor<Scalar>(pair.target));
        total = b == 0 ? loss : add(total, loss);
      }
      if (config.batch_size > 1) total = scale(total, Scalar(1) / static_cast<Scalar>(config.batch_size));
      loss_value = static_cast<double>(total.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged: loss is " + std::to_string(loss_value) + " at step " +
                           std::to_string(step + 1));
      }
      tape.backward(total);
    }
    adam.step();
    if (callbacks.on_step) callbacks.on_step(step + 1, loss_value);
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 != config.steps) run_eval(step + 1);
  }
  run_eval(config.steps);
  for (auto& t : params) t.set_requires_grad(false);
  return result;
}

#define DLF_INSTANTIATE_TRAINING(S)                                                                             \
  template Tensor<S> l2_loss(const Tensor<S>&, const Tensor<S>&);                                              \
  template std::pair<Tensor<S>, Tensor<S>> network_tensors(const Image&);                                     \
  template class Adam<S>;                                                                                      \
  template Image run_model(const WeightLearningNet<S>&, const OperatorSpec&, const std::vector<double>&,       \
                           const Image&, bool);                                                                \
  template EvalReport evaluate(const WeightLearningNet<S>&, const std::vector<EvalItem>&, bool, int);          \
  template TrainResult<S> train(const TrainConfig&, const std::vector<Image>&, const std::vector<EvalItem>&, \
                                const TrainCallbacks&);

DLF_INSTANTIATE_TRAINING(float)
DLF_INSTANTIATE_TRAINING(double)

}  // namespace dlf
