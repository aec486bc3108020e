#include "dlf/checkpoint.hpp"

#include "dlf/errors.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

namespace dlf {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'D', 'L', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string string() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint is truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------

json to_json(const BaseNetConfig& c) {
  return {{"depth", c.depth},
          {"channels", c.channels},
          {"kernel", c.kernel},
          {"input_channels", c.input_channels},
          {"output_channels", c.output_channels},
          {"downsample_layer", c.downsample_layer},
          {"upsample_layer", c.upsample_layer},
          {"residual_first", c.residual_first},
          {"residual_last", c.residual_last},
          {"dilation", c.dilation},
          {"norm_after", c.norm_after},
          {"conv_bias", c.conv_bias},
          {"input_skip", c.input_skip}};
}

void require_known_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ContractViolation(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ContractViolation("unknown key '" + key + "' in " + where);
  }
}

BaseNetConfig base_from_json(const json& j) {
  require_known_keys(j,
                     {"depth", "channels", "kernel", "input_channels", "output_channels", "downsample_layer",
                      "upsample_layer", "residual_first", "residual_last", "dilation", "norm_after", "conv_bias",
                      "input_skip"},
                     "base config");
  BaseNetConfig c;
  const int depth = j.value("depth", c.depth);
  const int channels = j.value("channels", c.channels);
  if (depth != c.depth) c = BaseNetConfig::scaled(depth, channels);
  c.channels = channels;
  c.kernel = j.value("kernel", c.kernel);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.output_channels = j.value("output_channels", c.output_channels);
  c.downsample_layer = j.value("downsample_layer", c.downsample_layer);
  c.upsample_layer = j.value("upsample_layer", c.upsample_layer);
  c.residual_first = j.value("residual_first", c.residual_first);
  c.residual_last = j.value("residual_last", c.residual_last);
  c.dilation = j.value("dilation", c.dilation);
  if (j.contains("norm_after")) c.norm_after = j.at("norm_after").get<std::vector<int>>();
  c.conv_bias = j.value("conv_bias", c.conv_bias);
  c.input_skip = j.value("input_skip", c.input_skip);
  c.validate();
  return c;
}

json to_json(const HyperConfig& h) {
  return {{"slots", h.slots.to_string()},
          {"input_dim", h.input_dim},
          {"depth", h.depth},
          {"hidden_relu", h.hidden_relu},
          {"hidden_width", h.hidden_width}};
}

HyperConfig hyper_from_json(const json& j) {
  require_known_keys(j, {"slots", "input_dim", "depth", "hidden_relu", "hidden_width"}, "hyper config");
  HyperConfig h;
  if (j.contains("slots")) h.slots = LearnedSlotSpec::parse(j.at("slots").get<std::string>());
  h.input_dim = j.value("input_dim", h.input_dim);
  h.depth = j.value("depth", h.depth);
  h.hidden_relu = j.value("hidden_relu", h.hidden_relu);
  h.hidden_width = j.value("hidden_width", h.hidden_width);
  h.validate();
  return h;
}

json to_json(const OperatorSpec& op) {
  json params = json::array();
  for (const auto& p : op.params) {
    params.push_back({{"name", p.name},
                      {"lo", p.lo},
                      {"hi", p.hi},
                      {"space", p.space == SamplingSpace::log ? "log" : "linear"}});
  }
  return {{"name", op.name},
          {"params", params},
          {"operator_id", op.operator_id},
          {"kind", op.kind == OperatorKind::restoration ? "restoration" : "filter"}};
}

OperatorSpec operator_from_json(const json& j) {
  OperatorSpec op;
  op.name = j.at("name").get<std::string>();
  for (const auto& p : j.at("params")) {
    const std::string space = p.at("space").get<std::string>();
    if (space != "log" && space != "linear") throw FormatError("unknown sampling space '" + space + "'");
    op.params.push_back({p.at("name").get<std::string>(), p.at("lo").get<double>(), p.at("hi").get<double>(),
                         space == "log" ? SamplingSpace::log : SamplingSpace::linear});
  }
  op.operator_id = j.at("operator_id").get<double>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "filter" && kind != "restoration") throw FormatError("unknown operator kind '" + kind + "'");
  op.kind = kind == "restoration" ? OperatorKind::restoration : OperatorKind::filter;
  op.validate();
  return op;
}

template <typename F>
auto wrap_json_errors(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ContractViolation(what + ": " + e.what());
  }
}

}  // namespace

const OperatorSpec& Checkpoint::find(const std::string& name) const {
  for (const auto& op : operators)
    if (op.name == name) return op;
  std::string known;
  for (const auto& op : operators) known += (known.empty() ? "" : ", ") + op.name;
  throw RegistryError("model was not trained on operator '" + name + "' (trained on: " + known + ")");
}

std::vector<std::uint8_t> encode_checkpoint(const WeightLearningNet<float>& net,
                                            const std::vector<OperatorSpec>& operators) {
  if (operators.empty()) throw ContractViolation("a checkpoint needs at least one operator");
  json ops = json::array();
  for (const auto& op : operators) ops.push_back(to_json(op));
  const json config = {{"base", to_json(net.base_config())}, {"hyper", to_json(net.hyper_config())}, {"operators", ops}};

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_string(out, config.dump());
  const auto params = net.named_parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.numel(); ++i) {
      std::uint32_t bits;
      const float f = t.values()[i];
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a DLF1 checkpoint");
  std::vector<std::uint8_t> rest(bytes.begin() + 4, bytes.end());
  Reader in(rest);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  json config;
  BaseNetConfig base;
  HyperConfig hyper;
  Checkpoint ck;
  try {
    config = json::parse(in.string());
    base = base_from_json(config.at("base"));
    hyper = hyper_from_json(config.at("hyper"));
    for (const auto& op : config.at("operators")) ck.operators.push_back(operator_from_json(op));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }
  if (ck.operators.empty()) throw FormatError("checkpoint lists no operators");

  std::mt19937_64 rng(0);
  ck.net = WeightLearningNet<float>::initialize(base, hyper, rng);
  std::map<std::string, Tensor<float>> slots;
  for (auto& [name, t] : ck.net.named_parameters()) slots.emplace(name, t);

  const std::uint32_t count = in.u32();
  if (count != slots.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, the config needs " +
                      std::to_string(slots.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.string();
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("unexpected tensor '" + name + "'");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    Tensor<float>& t = it->second;
    if (shape != t.shape()) throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) +
                                              ", expected " + shape_string(t.shape()));
    auto& values = t.mutable_values();
    for (Index i = 0; i < values.size(); ++i) values[i] = in.f32();
  }
  if (!in.done()) throw FormatError("trailing bytes after the tensor table");
  return ck;
}

void save_checkpoint(const std::string& path, const WeightLearningNet<float>& net,
                     const std::vector<OperatorSpec>& operators) {
  const auto bytes = encode_checkpoint(net, operators);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------

std::string base_config_json(const BaseNetConfig& config) { return to_json(config).dump(); }

BaseNetConfig parse_base_config(const std::string& text) {
  return wrap_json_errors("base config", [&] { return base_from_json(json::parse(text)); });
}

std::string hyper_config_json(const HyperConfig& config) { return to_json(config).dump(); }

HyperConfig parse_hyper_config(const std::string& text) {
  return wrap_json_errors("hyper config", [&] { return hyper_from_json(json::parse(text)); });
}

TrainConfig parse_train_config(const std::string& text) {
  return wrap_json_errors("training config", [&] {
    const json j = json::parse(text);
    require_known_keys(j,
                       {"operators", "base", "hyper", "patch_size", "batch_size", "steps", "learning_rate",
                        "decay_at", "seed", "eval_every"},
                       "training config");
    TrainConfig cfg;
    if (!j.contains("operators") || !j.at("operators").is_array() || j.at("operators").empty()) {
      throw ContractViolation("training config needs a non-empty \"operators\" list");
    }
    for (const auto& op : j.at("operators")) {
      if (op.is_string()) {
        cfg.operators.push_back({find_operator(op.get<std::string>()), {}});
      } else {
        require_known_keys(op, {"name", "gammas"}, "operator entry");
        TrainOperator t{find_operator(op.at("name").get<std::string>()), {}};
        if (op.contains("gammas")) t.fixed_gammas = op.at("gammas").get<std::vector<std::vector<double>>>();
        cfg.operators.push_back(std::move(t));
      }
    }
    if (j.contains("base")) cfg.base = base_from_json(j.at("base"));
    cfg.base.input_skip = !j.contains("base") || j.at("base").value("input_skip", true);
    if (j.contains("hyper")) {
      json h = j.at("hyper");
      if (h.contains("input_dim")) throw ContractViolation("hyper.input_dim follows from the operators; remove it");
      cfg.hyper = hyper_from_json(h);
    }
    cfg.hyper.input_dim = cfg.gamma_dim();
    cfg.patch_size = j.value("patch_size", cfg.patch_size);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.optimizer.learning_rate = j.value("learning_rate", cfg.optimizer.learning_rate);
    if (j.contains("decay_at")) cfg.optimizer.decay_at = j.at("decay_at").get<std::vector<double>>();
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.validate();
    return cfg;
  });
}

}  // namespace dlf
