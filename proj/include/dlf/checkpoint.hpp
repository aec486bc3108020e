#pragma once

#include "dlf/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dlf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A trained model and the operators it was trained on. Weights are stored
/// as 32-bit floats, so the model is held in single precision.
struct Checkpoint {
  WeightLearningNet<float> net;
  std::vector<OperatorSpec> operators;

  bool joint() const { return operators.size() > 1; }
  /// Throws RegistryError for operators the model was not trained on.
  const OperatorSpec& find(const std::string& name) const;
};

/// Layout, all integers little-endian:
///   "DLF1", u32 version, u32 length + UTF-8 JSON config,
///   u32 tensor count, then per tensor: u32 length + UTF-8 name,
///   u32 rank, u32 dims..., f32 data.
std::vector<std::uint8_t> encode_checkpoint(const WeightLearningNet<float>& net,
                                            const std::vector<OperatorSpec>& operators);
/// Throws FormatError on bad magic, unknown version, truncation or a tensor
/// table that does not match the stored config.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const WeightLearningNet<float>& net,
                     const std::vector<OperatorSpec>& operators);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// JSON configuration

std::string base_config_json(const BaseNetConfig& config);
BaseNetConfig parse_base_config(const std::string& json_text);
std::string hyper_config_json(const HyperConfig& config);
HyperConfig parse_hyper_config(const std::string& json_text);

/// Training configuration file. Keys (all optional except "operators"):
///   operators: ["name", ...] or [{"name": ..., "gammas": [[v, ...], ...]}, ...]
///   base: {"depth", "channels", ...}; a depth other than 20 starts from
///         the scaled layout of that depth, and input_skip defaults to true
///   hyper: {"slots", "depth", "hidden_relu", "hidden_width"}
///   patch_size, batch_size, steps, learning_rate, decay_at, seed, eval_every
/// The weight-learning net's input size follows from the operators. Unknown
/// keys are rejected.
TrainConfig parse_train_config(const std::string& json_text);

}  // namespace dlf
