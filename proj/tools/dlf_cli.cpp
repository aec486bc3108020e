// Command-line entry points: train, apply, oracle, analyze, serve.
//
// Exit codes: 0 success, 1 usage or precondition error, 2 I/O error,
// 3 numeric error.

#include "dlf/analysis.hpp"
#include "dlf/checkpoint.hpp"
#include "dlf/errors.hpp"
#include "dlf/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace dlf;
using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out || !(out << text << "\n")) throw IoError("cannot write " + path);
}

/// lo, middle and hi of every parameter; the middle is geometric for log ranges.
std::vector<std::vector<double>> range_probes(const OperatorSpec& op) {
  std::vector<std::vector<double>> out(3);
  for (const ParamRange& p : op.params) {
    const double mid = p.space == SamplingSpace::log ? std::sqrt(p.lo * p.hi) : 0.5 * (p.lo + p.hi);
    out[0].push_back(p.lo);
    out[1].push_back(mid);
    out[2].push_back(p.hi);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string corpus;
  std::string out;
  std::string report;
  int eval_images = 4;
  int log_every = 100;
};

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = parse_train_config(read_text(a.config));
  std::vector<Image> train_images;
  std::vector<Image> eval_images;
  if (a.corpus.empty()) {
    const Index size = cfg.patch_size + cfg.patch_size / 2;
    train_images = synthetic_corpus(64, size, cfg.seed);
    eval_images = synthetic_corpus(a.eval_images, cfg.patch_size, cfg.seed + 1);
  } else {
    std::vector<Image> all = load_corpus(a.corpus);
    const std::size_t held = std::min<std::size_t>(static_cast<std::size_t>(a.eval_images), all.size() / 5);
    eval_images.assign(all.end() - static_cast<std::ptrdiff_t>(held), all.end());
    all.resize(all.size() - held);
    train_images = std::move(all);
  }

  std::vector<EvalItem> eval_set;
  for (const TrainOperator& op : cfg.operators) {
    const auto gammas = op.fixed_gammas.empty() ? range_probes(op.spec) : op.fixed_gammas;
    const auto items = make_eval_set(eval_images, op.spec, gammas, static_cast<int>(eval_images.size()),
                                     cfg.patch_size);
    eval_set.insert(eval_set.end(), items.begin(), items.end());
  }

  std::ofstream report;
  if (!a.report.empty()) {
    report.open(a.report);
    if (!report) throw IoError("cannot write " + a.report);
  }
  TrainCallbacks callbacks;
  callbacks.on_eval = [&](const EvalReport& r) {
    std::cout << r.to_jsonl();
    if (report) report << r.to_jsonl();
  };
  callbacks.on_step = [&](int step, double loss) {
    if (a.log_every > 0 && step % a.log_every == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  };

  const TrainResult<float> result = train<float>(cfg, train_images, eval_set, callbacks);
  std::vector<OperatorSpec> ops;
  for (const TrainOperator& op : cfg.operators) ops.push_back(op.spec);
  save_checkpoint(a.out, result.net, ops);
  std::cerr << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string model;
  std::string op;
  std::vector<double> gamma;
  std::string input;
  std::string output;
  bool cheap = false;
  bool score = false;
};

int run_apply(const ApplyArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const OperatorSpec& spec = ck.find(a.op);
  check_gamma(spec, a.gamma);
  const Image input = read_png(a.input);

  const auto start = std::chrono::steady_clock::now();
  Image result;
  int recomputed = 0;
  if (a.cheap) {
    const auto [image, edge] = network_tensors<float>(input);
    const ActivationCache<float> cache = build_cache(ck.net, image, edge);
    const auto [out, n] = cached_forward(ck.net, cache, network_gamma(spec, a.gamma, ck.joint()).tensor<float>());
    if (!out.values().isFinite().all()) throw NumericError("model output contains non-finite values");
    result = image_from_tensor(out);
    recomputed = n;
  } else {
    result = run_model(ck.net, spec, a.gamma, input, ck.joint());
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  write_png(result, a.output);

  std::cout << "latency_ms=" << ms;
  if (a.cheap) std::cout << " layers_recomputed=" << recomputed;
  if (a.score) {
    if (spec.kind != OperatorKind::filter) throw ContractViolation("--score needs a filter operator");
    const Image target = apply_operator(spec, input, a.gamma);
    std::cout << " psnr=" << std::setprecision(10) << psnr(result, target) << " ssim=" << ssim(result, target);
  }
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct OracleArgs {
  std::string op;
  std::vector<double> gamma;
  std::string input;
  std::string output;
  std::uint64_t seed = 0;
};

int run_oracle(const OracleArgs& a) {
  const OperatorSpec& spec = find_operator(a.op);
  check_gamma(spec, a.gamma);
  write_png(apply_operator(spec, read_png(a.input), a.gamma, a.seed), a.output);
  return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string model;
  std::string model_b;
  std::string op;
  std::vector<double> gamma;
  std::vector<double> gamma_b;
  std::string input;
  std::vector<Index> point;
  std::string overlay;
  std::string out;
  int trials = 100;
  double tol = 1e-5;
  bool double_precision = false;
  std::uint64_t seed = 1;
  int depth = 20;
  int channels = 64;
  std::string slots = "all_conv";
  int m = 2;
  std::vector<double> train_gammas;
  std::vector<double> test_gammas;
  std::string corpus;
  int images = 8;
  int patch = 64;
};

json rect_json(const PixelRect& r) {
  return {{"top", r.top}, {"left", r.left}, {"bottom", r.bottom}, {"right", r.right}};
}

int run_erf(const AnalyzeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const OperatorSpec& spec = ck.find(a.op);
  check_gamma(spec, a.gamma);
  const Image image = read_png(a.input);
  const PixelPoint p{a.point[0], a.point[1]};
  const ErfMask erf = effective_receptive_field(ck.net, spec, a.gamma, image, p, ck.joint());
  const PixelRect rf = theoretical_receptive_field(ck.net.base_config(), image.height(), image.width(), p);

  PixelRect box{image.height(), image.width(), -1, -1};
  bool inside = true;
  for (Index y = 0; y < image.height(); ++y) {
    for (Index x = 0; x < image.width(); ++x) {
      if (!erf.mask(y, x)) continue;
      box = {std::min(box.top, y), std::min(box.left, x), std::max(box.bottom, y), std::max(box.right, x)};
      inside = inside && rf.contains(y, x);
    }
  }
  const json report{{"point", {p.y, p.x}},
                    {"operator", spec.name},
                    {"gamma", a.gamma},
                    {"grad_max", erf.grad_max},
                    {"threshold", erf.threshold},
                    {"argmax", {erf.argmax.y, erf.argmax.x}},
                    {"pixels", erf.count()},
                    {"degenerate", erf.degenerate},
                    {"mask_bounds", erf.count() > 0 ? rect_json(box) : json(nullptr)},
                    {"theoretical_field", rect_json(rf)},
                    {"contained", inside}};
  write_text(a.out, report.dump(2));
  if (!a.overlay.empty()) write_png(erf_overlay(image, erf), a.overlay);
  return 0;
}

int run_weights(const AnalyzeArgs& a) {
  const Checkpoint ck_a = load_checkpoint(a.model);
  const Checkpoint ck_b = a.model_b.empty() ? ck_a : load_checkpoint(a.model_b);
  const std::vector<double>& gamma_b = a.gamma_b.empty() ? a.gamma : a.gamma_b;
  const OperatorSpec& spec_a = ck_a.find(a.op);
  const OperatorSpec& spec_b = ck_b.find(a.op);
  check_gamma(spec_a, a.gamma);
  check_gamma(spec_b, gamma_b);
  const auto wa = ck_a.net.predict_weights(network_gamma(spec_a, a.gamma, ck_a.joint()));
  const auto wb = ck_b.net.predict_weights(network_gamma(spec_b, gamma_b, ck_b.joint()));
  write_text(a.out, weight_statistics(wa, wb).to_json());
  return 0;
}

int run_equiv(const AnalyzeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  std::mt19937_64 rng(a.seed);
  const MultipathReport r = a.double_precision ? verify_multipath(ck.net.cast<double>(), a.trials, a.tol, rng)
                                               : verify_multipath(ck.net, a.trials, a.tol, rng);
  write_text(a.out, r.to_json());
  std::cerr << (r.passed() ? "passed" : "failed") << ": worst error " << r.worst_error << "\n";
  return 0;
}

int run_counts(const AnalyzeArgs& a) {
  BaseNetConfig base;
  HyperConfig hyper;
  if (!a.model.empty()) {
    const Checkpoint ck = load_checkpoint(a.model);
    base = ck.net.base_config();
    hyper = ck.net.hyper_config();
  } else {
    if (a.depth != 20 || a.channels != 64) base = BaseNetConfig::scaled(a.depth, a.channels);
    hyper.slots = LearnedSlotSpec::parse(a.slots);
    hyper.input_dim = a.m;
  }
  const CountReport r = count_report(base, hyper);
  std::cout << "conv=" << r.conv << " norm=" << r.norm << " predicted=" << r.predicted << " fc=" << r.fc
            << " shared=" << r.shared << " total=" << r.total() << "\n";
  if (!a.out.empty()) write_text(a.out, r.to_json());
  return 0;
}

int run_interp(const AnalyzeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const OperatorSpec& spec = ck.find(a.op);
  std::vector<Image> clean;
  if (a.corpus.empty()) {
    clean = synthetic_corpus(a.images, a.patch, a.seed);
  } else {
    for (const Image& im : load_corpus(a.corpus)) {
      if (static_cast<int>(clean.size()) == a.images) break;
      if (im.height() < a.patch || im.width() < a.patch) continue;
      clean.push_back(im.crop((im.height() - a.patch) / 2, (im.width() - a.patch) / 2, a.patch, a.patch));
    }
    if (clean.empty()) throw ContractViolation("no corpus image is at least " + std::to_string(a.patch) + " pixels");
  }
  write_text(a.out, interpolation_eval(ck.net, spec, a.train_gammas, a.test_gammas, clean, ck.joint()).to_json());
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string model;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
};

int run_serve(const ServeArgs& a) {
  std::optional<Checkpoint> model;
  if (!a.model.empty()) model = load_checkpoint(a.model);
  else std::cerr << "no model given; /api answers 503\n";
  Service service(std::move(model));
  HttpServer server(service, a.static_dir);
  const int port = server.bind(a.host, a.port);
  std::cerr << "listening on http://" << a.host << ":" << port << "\n";
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameterized image operators with a weight-learning network"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", train_args.config, "Training configuration (JSON)")->required();
  train_cmd->add_option("--corpus", train_args.corpus, "Directory of PNG images; synthetic images if omitted");
  train_cmd->add_option("--out", train_args.out, "Checkpoint to write")->required();
  train_cmd->add_option("--report", train_args.report, "Also write evaluation reports (JSON lines)");
  train_cmd->add_option("--eval-images", train_args.eval_images, "Held-out evaluation images")->check(CLI::PositiveNumber);
  train_cmd->add_option("--log-every", train_args.log_every, "Print the loss every N steps (0: never)");
  train_cmd->callback([&] { action = [&] { return run_train(train_args); }; });

  ApplyArgs apply_args;
  auto* apply_cmd = app.add_subcommand("apply", "Run a trained model on an image");
  apply_cmd->add_option("--model", apply_args.model, "Checkpoint")->required();
  apply_cmd->add_option("--operator", apply_args.op, "Operator name")->required();
  apply_cmd->add_option("--gamma", apply_args.gamma, "Raw parameter values")->required()->delimiter(',');
  apply_cmd->add_option("--input", apply_args.input, "Input PNG")->required();
  apply_cmd->add_option("--output", apply_args.output, "Output PNG")->required();
  apply_cmd->add_flag("--cheap", apply_args.cheap, "Re-use the gamma-independent layers");
  apply_cmd->add_flag("--score", apply_args.score, "Print PSNR and SSIM against the reference operator");
  apply_cmd->callback([&] { action = [&] { return run_apply(apply_args); }; });

  OracleArgs oracle_args;
  auto* oracle_cmd = app.add_subcommand("oracle", "Run the reference operator on an image");
  oracle_cmd->add_option("--operator", oracle_args.op, "Operator name")->required();
  oracle_cmd->add_option("--gamma", oracle_args.gamma, "Raw parameter values")->required()->delimiter(',');
  oracle_cmd->add_option("--input", oracle_args.input, "Input PNG")->required();
  oracle_cmd->add_option("--output", oracle_args.output, "Output PNG")->required();
  oracle_cmd->add_option("--seed", oracle_args.seed, "Seed for stochastic operators");
  oracle_cmd->callback([&] { action = [&] { return run_oracle(oracle_args); }; });

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Analysis reports");
  analyze_cmd->require_subcommand(1);

  auto* erf_cmd = analyze_cmd->add_subcommand("erf", "Effective receptive field at one output pixel");
  erf_cmd->add_option("--model", an.model)->required();
  erf_cmd->add_option("--operator", an.op)->required();
  erf_cmd->add_option("--gamma", an.gamma)->required()->delimiter(',');
  erf_cmd->add_option("--input", an.input)->required();
  erf_cmd->add_option("--point", an.point, "Y,X")->required()->delimiter(',')->expected(2);
  erf_cmd->add_option("--overlay", an.overlay, "Write the mask over the input as PNG");
  erf_cmd->add_option("--out", an.out, "Report (JSON); standard output if omitted");
  erf_cmd->callback([&] { action = [&] { return run_erf(an); }; });

  auto* weights_cmd = analyze_cmd->add_subcommand("weights", "Per-layer statistics of two predicted weight sets");
  weights_cmd->add_option("--model", an.model)->required();
  weights_cmd->add_option("--model-b", an.model_b, "Second checkpoint; the first if omitted");
  weights_cmd->add_option("--operator", an.op)->required();
  weights_cmd->add_option("--gamma", an.gamma)->required()->delimiter(',');
  weights_cmd->add_option("--gamma-b", an.gamma_b, "Gamma for the second set; --gamma if omitted")->delimiter(',');
  weights_cmd->add_option("--out", an.out);
  weights_cmd->callback([&] { action = [&] { return run_weights(an); }; });

  auto* equiv_cmd = analyze_cmd->add_subcommand("equiv", "Check predicted convs against their multi-path form");
  equiv_cmd->add_option("--model", an.model)->required();
  equiv_cmd->add_option("--trials", an.trials)->check(CLI::PositiveNumber);
  equiv_cmd->add_option("--tol", an.tol);
  equiv_cmd->add_flag("--double", an.double_precision, "Evaluate in double precision");
  equiv_cmd->add_option("--seed", an.seed);
  equiv_cmd->add_option("--out", an.out);
  equiv_cmd->callback([&] { action = [&] { return run_equiv(an); }; });

  auto* counts_cmd = analyze_cmd->add_subcommand("counts", "Parameter counts");
  counts_cmd->add_option("--model", an.model, "Read the architecture from a checkpoint");
  counts_cmd->add_option("--depth", an.depth);
  counts_cmd->add_option("--channels", an.channels);
  counts_cmd->add_option("--slots", an.slots, "all_conv, norm_at(19), ...");
  counts_cmd->add_option("--m", an.m, "Length of gamma");
  counts_cmd->add_option("--out", an.out);
  counts_cmd->callback([&] { action = [&] { return run_counts(an); }; });

  auto* interp_cmd = analyze_cmd->add_subcommand("interp", "Scores at unseen parameter values");
  interp_cmd->add_option("--model", an.model)->required();
  interp_cmd->add_option("--operator", an.op)->required();
  interp_cmd->add_option("--train-gammas", an.train_gammas)->required()->delimiter(',');
  interp_cmd->add_option("--test-gammas", an.test_gammas)->required()->delimiter(',');
  interp_cmd->add_option("--corpus", an.corpus, "Directory of PNG images; synthetic images if omitted");
  interp_cmd->add_option("--images", an.images)->check(CLI::PositiveNumber);
  interp_cmd->add_option("--patch", an.patch)->check(CLI::PositiveNumber);
  interp_cmd->add_option("--seed", an.seed);
  interp_cmd->add_option("--out", an.out);
  interp_cmd->callback([&] { action = [&] { return run_interp(an); }; });

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for interactive tuning");
  serve_cmd->add_option("--model", serve_args.model, "Checkpoint; /api answers 503 without one");
  serve_cmd->add_option("--port", serve_args.port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--static", serve_args.static_dir, "Directory served at /");
  serve_cmd->callback([&] { action = [&] { return run_serve(serve_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return action();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
