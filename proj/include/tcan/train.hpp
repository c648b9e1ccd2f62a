#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcan/checkpoint.hpp"
#include "tcan/data.hpp"
#include "tcan/experiment_config.hpp"
#include "tcan/model.hpp"

namespace tcan {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers mirroring each parameter tensor.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<const Tensor> params, AdamOptions opts);
};

// Bias-corrected Adam update using each parameter's grad. A parameter
// without a grad buffer raises ContractError.
void adam_step(std::span<Tensor> params, AdamState& state);

double global_grad_norm(std::span<const Tensor> params);
// Rescales all grads by max_norm / norm when norm > max_norm. Returns the
// applied scale (1.0 when untouched).
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// ppl = exp(nll) for word level, bpc = nll / ln 2 for character level.
double metric_from_nll(double mean_nll, TokenLevel level);
std::string_view metric_name(TokenLevel level);

struct Evaluation {
  double mean_nll = 0.0;
  std::size_t positions = 0;
  double metric = 0.0;
};

// Mean NLL over every supervised position. Never touches the parameters.
Evaluation evaluate(const ModelParams& params, const TCANConfig& config, std::span<const Batch> batches,
                    TokenLevel level);

struct Corpus {
  Vocab vocab;
  TokenStream train;
  TokenStream valid;
  std::optional<TokenStream> test;
};

// Vocabulary spans train, valid and test in that order.
Corpus load_corpus(const CorpusConfig& config);
Corpus make_corpus(std::string_view train, std::string_view valid, std::string_view test, TokenLevel level,
                   bool strict_unknown = true);

struct EpochStats {
  std::size_t epoch = 0;  // 1-indexed
  std::size_t step = 0;   // global steps completed when evaluated
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_metric = 0.0;
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  ExperimentConfig config;
  std::string metric;  // "bpc" or "ppl"
  std::size_t param_count = 0;
  std::vector<EpochStats> epochs;
  std::vector<double> step_losses;
  double initial_loss = 0.0;  // ln V reference for the untrained model
  double best_valid_metric = 0.0;
  std::size_t best_step = 0;
  std::optional<double> test_loss;
  std::optional<double> test_metric;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;

  nlohmann::json to_json() const;
  // (epoch, step, train_loss, valid_loss, valid_metric); no timings.
  std::string metrics_csv() const;
};

// Single-writer training loop: forward, loss, backward, clip, Adam.
class Trainer {
 public:
  // config.model.vocab_size is taken from the corpus when zero.
  Trainer(ExperimentConfig config, Corpus corpus);

  // One optimizer step on the next training batch; returns its mean loss.
  double train_step();

  // Trains until the configured step/epoch budget is spent. Evaluates on
  // the validation split at each epoch end and at the final step. With a
  // non-empty checkpoint_dir, writes best.tcan (best validation) and
  // last.tcan (resumable state). Throws NumericError on a non-finite loss;
  // report() then holds the partial record.
  const TrainReport& run(const std::filesystem::path& checkpoint_dir = {});

  std::size_t total_steps() const;
  std::size_t steps_per_epoch() const { return train_batches_.size(); }
  std::size_t global_step() const { return step_; }

  void save_state(const std::filesystem::path& manifest_path) const;
  void load_state(const std::filesystem::path& manifest_path);

  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const ExperimentConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }
  const TrainReport& report() const { return report_; }
  const std::vector<Batch>& valid_batches() const { return valid_batches_; }

 private:
  void finish_epoch(std::size_t epoch, const std::filesystem::path& checkpoint_dir);
  Checkpoint make_checkpoint(bool with_optimizer) const;

  ExperimentConfig config_;
  Corpus corpus_;
  ModelParams params_;
  std::vector<Tensor> param_list_;
  AdamState adam_;
  std::vector<Batch> train_batches_;
  std::vector<Batch> valid_batches_;
  std::vector<Batch> test_batches_;
  std::size_t step_ = 0;
  // Running sums for the epoch in progress.
  double epoch_loss_sum_ = 0.0;
  double epoch_grad_sum_ = 0.0;
  double epoch_grad_max_ = 0.0;
  std::size_t epoch_steps_ = 0;
  double epoch_seconds_ = 0.0;
  std::vector<NamedTensor> best_snapshot_;
  TrainReport report_;
};

// Model + vocabulary stored in a checkpoint written by Trainer.
struct LoadedModel {
  ExperimentConfig config;
  Vocab vocab;
  ModelParams params;
};
LoadedModel load_model(const std::filesystem::path& manifest_path);

nlohmann::json vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const nlohmann::json& j);

}  // namespace tcan
