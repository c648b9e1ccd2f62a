#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tcan/experiment_config.hpp"
#include "tcan/model.hpp"
#include "tcan/train.hpp"

namespace tcan {

struct RunArtifacts {
  std::filesystem::path report_json;
  std::filesystem::path metrics_csv;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  TrainReport report;
};

// Loads the corpus, trains, and writes report.json, metrics.csv, best.tcan
// and last.tcan (+ .bin blobs) into out_dir. On a numeric abort the partial
// report is still written before NumericError propagates.
RunArtifacts run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                            const std::optional<std::filesystem::path>& resume_from = std::nullopt);

enum class AblationKind { softmax_direction, ta_vs_conv, er_on_off };
std::string_view to_string(AblationKind kind);
AblationKind parse_ablation_kind(std::string_view s);  // throws ConfigError

struct AblationVariant {
  std::string label;
  ExperimentConfig config;
};

// Variants differ from each other in exactly one config key. ta_vs_conv
// turns the enhanced residual off for both arms first.
std::vector<AblationVariant> ablation_variants(AblationKind kind, const ExperimentConfig& base);

// Flat config keys whose values differ between a and b.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t param_count = 0;
  double final_metric = 0.0;  // validation metric after the last step
  double best_metric = 0.0;
  std::string run_dir;
};

struct AblationTable {
  AblationKind kind = AblationKind::softmax_direction;
  std::string metric;
  std::vector<std::string> varied_fields;  // from config_diff across variants
  std::vector<AblationRow> rows;
  nlohmann::json reference;  // published reference values for the same comparison

  std::vector<std::string> variants() const;  // in run order
  double mean_final_metric(std::string_view variant) const;
  std::size_t param_count(std::string_view variant) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// One run per (variant, seed), each written under out_dir/<variant>_seed<n>/.
// Also writes ablation.csv and ablation.json to out_dir.
AblationTable run_ablation(AblationKind kind, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                           const std::filesystem::path& out_dir);

// Attention weights with every cell above the diagonal zeroed: the weights
// that actually enter the output sum.
Tensor kept_weights(const Tensor& weights);

std::string matrix_csv(const Tensor& matrix);
// Binary (P5) grayscale image, linearly scaled so the maximum maps to 255.
std::string matrix_pgm(const Tensor& matrix);

// For rows t in [first, last), the most frequent (t - argmax_i kept[t][i]).
// Ties resolve to the smaller offset.
std::size_t modal_diagonal_offset(const Tensor& weights, std::size_t first, std::size_t last);

struct HeatmapExport {
  std::size_t layer = 0;
  std::filesystem::path csv;      // kept-weight view
  std::filesystem::path raw_csv;  // Wa as normalized, before the output sum
  std::filesystem::path pgm;
  AttentionRecord record;
};

// Writes attn_L{n}.csv, attn_L{n}_raw.csv and attn_L{n}.pgm for the chosen
// 1-indexed level (default: last). Out-of-range level raises ConfigError.
HeatmapExport export_attention_heatmap(const std::filesystem::path& checkpoint, std::string_view sample,
                                       std::optional<std::size_t> layer, const std::filesystem::path& out_dir);

}  // namespace tcan
