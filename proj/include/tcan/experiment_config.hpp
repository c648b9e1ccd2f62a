#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "tcan/config.hpp"
#include "tcan/data.hpp"

namespace tcan {

struct TrainOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip = 0.35;  // max global grad norm; 0 disables clipping
  std::size_t batch_size = 16;
  std::size_t seq_len = 320;
  std::size_t eval_batch_size = 10;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: run whole epochs only

  bool operator==(const TrainOptions&) const = default;
};

struct CorpusConfig {
  TokenLevel level = TokenLevel::character;
  std::string train_path;
  std::string valid_path;
  std::string test_path;  // optional
  bool strict_unknown = true;

  bool operator==(const CorpusConfig&) const = default;
};

// Everything needed to reproduce one run. Serialized as a flat JSON object;
// see docs/config.md for the key list.
struct ExperimentConfig {
  TCANConfig model;  // model.vocab_size == 0 means "take it from the corpus"
  TrainOptions train;
  CorpusConfig corpus;
  std::string out_dir = "runs/default";

  // Throws ConfigError naming the offending key. The vocabulary size may
  // still be zero here.
  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Rejects unknown keys and wrongly typed values with ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Relative corpus paths are taken relative to `base_dir`.
ExperimentConfig resolve_paths(ExperimentConfig config, const std::filesystem::path& base_dir);

}  // namespace tcan
