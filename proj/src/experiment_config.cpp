#include "tcan/experiment_config.hpp"

#include <fstream>
#include <set>

#include "tcan/errors.hpp"

namespace tcan {

using nlohmann::json;

void ExperimentConfig::validate() const {
  TCANConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;  // inferred later
  m.validate();
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(field, "must be a positive integer");
  };
  positive(train.batch_size, "batch_size");
  positive(train.seq_len, "seq_len");
  positive(train.eval_batch_size, "eval_batch_size");
  if (!(train.lr > 0.0)) throw ConfigError("lr", "must be > 0");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(train.beta2 >= 0.0 && train.beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(train.adam_eps > 0.0)) throw ConfigError("adam_eps", "must be > 0");
  if (!(train.clip >= 0.0)) throw ConfigError("clip", "must be >= 0 (0 disables clipping)");
  if (train.epochs == 0 && train.max_steps == 0) {
    throw ConfigError("max_steps", "either epochs or max_steps must be positive");
  }
  if (corpus.train_path.empty()) throw ConfigError("train_path", "is required");
  if (corpus.valid_path.empty()) throw ConfigError("valid_path", "is required");
}

json to_json(const ExperimentConfig& c) {
  return json{
      {"vocab_size", c.model.vocab_size},
      {"d_embed", c.model.d_embed},
      {"d_attn", c.model.d_attn},
      {"kernel_size", c.model.kernel_size},
      {"num_levels", c.model.num_levels},
      {"blocks_per_level", c.model.blocks_per_level},
      {"softmax_direction", std::string(to_string(c.model.softmax_direction))},
      {"mask_mode", std::string(to_string(c.model.mask_mode))},
      {"use_enhanced_residual", c.model.use_enhanced_residual},
      {"use_values_for_output", c.model.use_values_for_output},
      {"use_temporal_attention", c.model.use_temporal_attention},
      {"activation", std::string(to_string(c.model.activation))},
      {"dropout", c.model.dropout},
      {"tie_decoder", c.model.tie_decoder},
      {"seed", c.model.seed},
      {"lr", c.train.lr},
      {"beta1", c.train.beta1},
      {"beta2", c.train.beta2},
      {"adam_eps", c.train.adam_eps},
      {"clip", c.train.clip},
      {"batch_size", c.train.batch_size},
      {"seq_len", c.train.seq_len},
      {"eval_batch_size", c.train.eval_batch_size},
      {"epochs", c.train.epochs},
      {"max_steps", c.train.max_steps},
      {"level", std::string(to_string(c.corpus.level))},
      {"train_path", c.corpus.train_path},
      {"valid_path", c.corpus.valid_path},
      {"test_path", c.corpus.test_path},
      {"strict_unknown", c.corpus.strict_unknown},
      {"out_dir", c.out_dir},
  };
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_unsigned()) throw ConfigError(key, "must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(key, "must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(key, "must be true or false");
    } else {
      if (!it->is_string()) throw ConfigError(key, "must be a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  const json defaults = to_json(ExperimentConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError(it.key(), "unknown config key");
  }
  ExperimentConfig c;
  read_field(j, "vocab_size", c.model.vocab_size);
  read_field(j, "d_embed", c.model.d_embed);
  read_field(j, "d_attn", c.model.d_attn);
  read_field(j, "kernel_size", c.model.kernel_size);
  read_field(j, "num_levels", c.model.num_levels);
  read_field(j, "blocks_per_level", c.model.blocks_per_level);
  std::string text;
  if (j.contains("softmax_direction")) {
    read_field(j, "softmax_direction", text);
    c.model.softmax_direction = parse_softmax_direction(text);
  }
  if (j.contains("mask_mode")) {
    read_field(j, "mask_mode", text);
    c.model.mask_mode = parse_mask_mode(text);
  }
  read_field(j, "use_enhanced_residual", c.model.use_enhanced_residual);
  read_field(j, "use_values_for_output", c.model.use_values_for_output);
  read_field(j, "use_temporal_attention", c.model.use_temporal_attention);
  if (j.contains("activation")) {
    read_field(j, "activation", text);
    c.model.activation = parse_activation(text);
  }
  read_field(j, "dropout", c.model.dropout);
  read_field(j, "tie_decoder", c.model.tie_decoder);
  read_field(j, "seed", c.model.seed);
  read_field(j, "lr", c.train.lr);
  read_field(j, "beta1", c.train.beta1);
  read_field(j, "beta2", c.train.beta2);
  read_field(j, "adam_eps", c.train.adam_eps);
  read_field(j, "clip", c.train.clip);
  read_field(j, "batch_size", c.train.batch_size);
  read_field(j, "seq_len", c.train.seq_len);
  read_field(j, "eval_batch_size", c.train.eval_batch_size);
  read_field(j, "epochs", c.train.epochs);
  read_field(j, "max_steps", c.train.max_steps);
  if (j.contains("level")) {
    read_field(j, "level", text);
    c.corpus.level = parse_token_level(text);
  }
  read_field(j, "train_path", c.corpus.train_path);
  read_field(j, "valid_path", c.corpus.valid_path);
  read_field(j, "test_path", c.corpus.test_path);
  read_field(j, "strict_unknown", c.corpus.strict_unknown);
  read_field(j, "out_dir", c.out_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("malformed JSON: ") + e.what());
  }
  return experiment_config_from_json(j);
}

ExperimentConfig resolve_paths(ExperimentConfig config, const std::filesystem::path& base_dir) {
  auto fix = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
  };
  fix(config.corpus.train_path);
  fix(config.corpus.valid_path);
  fix(config.corpus.test_path);
  return config;
}

}  // namespace tcan
