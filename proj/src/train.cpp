#include "tcan/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "tcan/errors.hpp"
#include "tcan/ops.hpp"
#include "tcan/random.hpp"

namespace tcan {

using nlohmann::json;

AdamState::AdamState(std::span<const Tensor> params, AdamOptions opts) : options(opts) {
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  for (const Tensor& p : params) {
    if (!p.has_grad()) throw ContractError("adam_step: parameter without gradient");
  }
  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != data.size()) throw ContractError("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      data[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be > 0");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.grad_accumulator()) g *= factor;
  }
  return factor;
}

double metric_from_nll(double mean_nll, TokenLevel level) {
  return level == TokenLevel::word ? std::exp(mean_nll) : mean_nll / std::numbers::ln2;
}

std::string_view metric_name(TokenLevel level) { return level == TokenLevel::word ? "ppl" : "bpc"; }

Evaluation evaluate(const ModelParams& params, const TCANConfig& config, std::span<const Batch> batches,
                    TokenLevel level) {
  if (batches.empty()) throw ContractError("evaluate: no batches");
  NoGradGuard no_grad;
  ForwardOptions options;
  options.capture_attention = false;
  double total = 0.0;
  std::size_t positions = 0;
  for (const Batch& batch : batches) {
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      ForwardResult fwd = model_forward(batch.input_row(b), params, config, options);
      total += cross_entropy_logits(fwd.logits, batch.target_row(b)).item() *
               static_cast<double>(batch.seq_len);
      positions += batch.seq_len;
    }
  }
  Evaluation e;
  e.positions = positions;
  e.mean_nll = total / static_cast<double>(positions);
  e.metric = metric_from_nll(e.mean_nll, level);
  return e;
}

Corpus make_corpus(std::string_view train, std::string_view valid, std::string_view test, TokenLevel level,
                   bool strict_unknown) {
  Corpus c;
  if (strict_unknown) {
    const std::string_view texts[] = {train, valid, test};
    c.vocab = Vocab::build(texts, level);
  } else {
    c.vocab = Vocab::build(train, level, /*reserve_unk=*/true);
  }
  c.train = c.vocab.encode(train, Split::train, strict_unknown);
  c.valid = c.vocab.encode(valid, Split::valid, strict_unknown);
  if (!test.empty()) c.test = c.vocab.encode(test, Split::test, strict_unknown);
  return c;
}

Corpus load_corpus(const CorpusConfig& config) {
  const std::string train = read_text_file(config.train_path);
  const std::string valid = read_text_file(config.valid_path);
  const std::string test = config.test_path.empty() ? std::string() : read_text_file(config.test_path);
  return make_corpus(train, valid, test, config.level, config.strict_unknown);
}

json vocab_to_json(const Vocab& vocab) {
  return json{{"level", std::string(to_string(vocab.level()))}, {"symbols", vocab.symbols()}};
}

Vocab vocab_from_json(const json& j) {
  return Vocab::from_symbols(j.at("symbols").get<std::vector<std::string>>(),
                             parse_token_level(j.at("level").get<std::string>()));
}

json TrainReport::to_json() const {
  json epochs_json = json::array();
  for (const EpochStats& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"step", e.step},
                           {"train_loss", e.train_loss},
                           {"valid_loss", e.valid_loss},
                           {"valid_metric", e.valid_metric},
                           {"grad_norm_mean", e.grad_norm_mean},
                           {"grad_norm_max", e.grad_norm_max},
                           {"seconds", e.seconds}});
  }
  json j = {{"config", tcan::to_json(config)},
            {"seed", config.model.seed},
            {"metric", metric},
            {"param_count", param_count},
            {"initial_loss", initial_loss},
            {"epochs", epochs_json},
            {"step_losses", step_losses},
            {"best_valid_metric", best_valid_metric},
            {"best_step", best_step},
            {"wall_seconds", wall_seconds},
            {"aborted", aborted}};
  j["test_loss"] = test_loss ? json(*test_loss) : json(nullptr);
  j["test_metric"] = test_metric ? json(*test_metric) : json(nullptr);
  if (aborted) j["abort_reason"] = abort_reason;
  return j;
}

std::string TrainReport::metrics_csv() const {
  std::ostringstream os;
  os << "epoch,step,train_loss,valid_loss,valid_" << metric << '\n';
  char line[256];
  for (const EpochStats& e : epochs) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g\n", e.epoch, e.step, e.train_loss,
                  e.valid_loss, e.valid_metric);
    os << line;
  }
  return os.str();
}

Trainer::Trainer(ExperimentConfig config, Corpus corpus)
    : config_(std::move(config)), corpus_(std::move(corpus)) {
  config_.validate();
  report_.config = config_;
  if (config_.model.vocab_size == 0) {
    config_.model.vocab_size = corpus_.vocab.size();
  } else if (config_.model.vocab_size != corpus_.vocab.size()) {
    throw ConfigError("vocab_size", "config says " + std::to_string(config_.model.vocab_size) +
                                        " but the corpus has " + std::to_string(corpus_.vocab.size()) +
                                        " symbols");
  }
  params_ = init_params(config_.model);
  param_list_ = params_.tensors();
  const TrainOptions& t = config_.train;
  adam_ = AdamState(param_list_, AdamOptions{t.lr, t.beta1, t.beta2, t.adam_eps});
  train_batches_ = batchify(corpus_.train, t.batch_size, t.seq_len);
  valid_batches_ = batchify(corpus_.valid, t.eval_batch_size, t.seq_len);
  if (corpus_.test) test_batches_ = batchify(*corpus_.test, t.eval_batch_size, t.seq_len);

  report_.metric = std::string(metric_name(config_.corpus.level));
  report_.param_count = count_parameters(params_);
  report_.initial_loss = std::log(static_cast<double>(config_.model.vocab_size));
}

std::size_t Trainer::total_steps() const {
  const std::size_t by_epochs = config_.train.epochs * train_batches_.size();
  if (config_.train.max_steps == 0) return by_epochs;
  if (config_.train.epochs == 0) return config_.train.max_steps;
  return std::min(by_epochs, config_.train.max_steps);
}

double Trainer::train_step() {
  const Batch& batch = train_batches_[step_ % train_batches_.size()];
  params_.zero_grad();
  const double inv_lanes = 1.0 / static_cast<double>(batch.batch_size);
  double loss_sum = 0.0;
  try {
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      ForwardOptions options;
      options.capture_attention = false;
      options.training = true;
      options.dropout_seed = mix_seed(mix_seed(config_.model.seed, step_), b);
      ForwardResult fwd = model_forward(batch.input_row(b), params_, config_.model, options);
      Tensor loss = cross_entropy_logits(fwd.logits, batch.target_row(b));
      if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
      loss_sum += loss.item();
      backward(scale(loss, inv_lanes));
    }
  } catch (const NumericError& e) {
    GradTape::current().clear();
    throw NumericError("step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  const double loss = loss_sum * inv_lanes;
  // Parameters outside the loss graph (value_map when the output sums s) get zeros.
  for (Tensor& p : param_list_) p.grad_accumulator();
  const double norm = global_grad_norm(param_list_);
  if (!std::isfinite(norm)) {
    throw NumericError("step " + std::to_string(step_ + 1) + ": non-finite gradient norm");
  }
  if (config_.train.clip > 0.0) clip_grad_norm(param_list_, config_.train.clip);
  adam_step(param_list_, adam_);
  ++step_;
  epoch_loss_sum_ += loss;
  epoch_grad_sum_ += norm;
  epoch_grad_max_ = std::max(epoch_grad_max_, norm);
  ++epoch_steps_;
  return loss;
}

const TrainReport& Trainer::run(const std::filesystem::path& checkpoint_dir) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const std::size_t total = total_steps();
  const std::size_t per_epoch = train_batches_.size();
  try {
    while (step_ < total) {
      const auto step_start = clock::now();
      report_.step_losses.push_back(train_step());
      epoch_seconds_ += std::chrono::duration<double>(clock::now() - step_start).count();
      if (step_ % per_epoch == 0 || step_ == total) finish_epoch((step_ - 1) / per_epoch + 1, checkpoint_dir);
    }
  } catch (const NumericError& e) {
    report_.aborted = true;
    report_.abort_reason = e.what();
    report_.wall_seconds += std::chrono::duration<double>(clock::now() - start).count();
    throw;
  }
  if (!test_batches_.empty()) {
    ModelParams best_params = params_.clone();
    for (auto& [name, t] : best_params.named_tensors()) {
      for (const NamedTensor& nt : best_snapshot_) {
        if (nt.name == name) std::copy(nt.tensor.data().begin(), nt.tensor.data().end(), t.mutable_data().begin());
      }
    }
    const Evaluation test = evaluate(best_params, config_.model, test_batches_, config_.corpus.level);
    report_.test_loss = test.mean_nll;
    report_.test_metric = test.metric;
  }
  if (!checkpoint_dir.empty()) save_state(checkpoint_dir / "last.tcan");
  report_.wall_seconds += std::chrono::duration<double>(clock::now() - start).count();
  return report_;
}

void Trainer::finish_epoch(std::size_t epoch, const std::filesystem::path& checkpoint_dir) {
  const Evaluation valid = evaluate(params_, config_.model, valid_batches_, config_.corpus.level);
  EpochStats stats;
  stats.epoch = epoch;
  stats.step = step_;
  stats.train_loss = epoch_loss_sum_ / static_cast<double>(epoch_steps_);
  stats.valid_loss = valid.mean_nll;
  stats.valid_metric = valid.metric;
  stats.grad_norm_mean = epoch_grad_sum_ / static_cast<double>(epoch_steps_);
  stats.grad_norm_max = epoch_grad_max_;
  stats.seconds = epoch_seconds_;
  report_.epochs.push_back(stats);
  // A run that stops mid-epoch keeps its accumulators so a resume can finish the epoch.
  if (step_ % train_batches_.size() == 0) {
    epoch_loss_sum_ = epoch_grad_sum_ = epoch_grad_max_ = epoch_seconds_ = 0.0;
    epoch_steps_ = 0;
  }

  if (report_.best_step == 0 || valid.metric < report_.best_valid_metric) {
    report_.best_valid_metric = valid.metric;
    report_.best_step = step_;
    best_snapshot_.clear();
    for (const auto& [name, t] : params_.named_tensors()) best_snapshot_.push_back({name, t.clone()});
    if (!checkpoint_dir.empty()) {
      Checkpoint ckpt = make_checkpoint(false);
      save_checkpoint(checkpoint_dir / "best.tcan", ckpt);
    }
  }
}

Checkpoint Trainer::make_checkpoint(bool with_optimizer) const {
  Checkpoint ckpt;
  ckpt.meta = {{"config", to_json(config_)},
               {"vocab", vocab_to_json(corpus_.vocab)},
               {"step", step_},
               {"param_count", report_.param_count}};
  const auto named = params_.named_tensors();
  for (const auto& [name, t] : named) ckpt.tensors.push_back({name, t});
  if (with_optimizer) {
    ckpt.meta["adam_step"] = adam_.step;
    ckpt.meta["epoch_loss_sum"] = epoch_loss_sum_;
    ckpt.meta["epoch_grad_sum"] = epoch_grad_sum_;
    ckpt.meta["epoch_grad_max"] = epoch_grad_max_;
    ckpt.meta["epoch_steps"] = epoch_steps_;
    ckpt.meta["best_valid_metric"] = report_.best_valid_metric;
    ckpt.meta["best_step"] = report_.best_step;
    ckpt.meta["history"] = {{"epochs", report_.to_json().at("epochs")}, {"step_losses", report_.step_losses}};
    for (std::size_t k = 0; k < named.size(); ++k) {
      const Shape& shape = named[k].second.shape();
      ckpt.tensors.push_back({"adam.m/" + named[k].first, Tensor::from_data(shape, adam_.m[k])});
      ckpt.tensors.push_back({"adam.v/" + named[k].first, Tensor::from_data(shape, adam_.v[k])});
    }
    for (const NamedTensor& nt : best_snapshot_) ckpt.tensors.push_back({"best/" + nt.name, nt.tensor});
  }
  return ckpt;
}

void Trainer::save_state(const std::filesystem::path& manifest_path) const {
  save_checkpoint(manifest_path, make_checkpoint(true));
}

namespace {

void copy_into(const Checkpoint& ckpt, const std::string& name, Tensor& dst) {
  const Tensor& src = ckpt.get(name);
  if (src.shape() != dst.shape()) {
    throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                    ", model expects " + shape_str(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

}  // namespace

void Trainer::load_state(const std::filesystem::path& manifest_path) {
  const Checkpoint ckpt = load_checkpoint(manifest_path);
  if (experiment_config_from_json(ckpt.meta.at("config")).model != config_.model) {
    throw ConfigError("resume", "checkpoint was written for a different model configuration");
  }
  auto named = params_.named_tensors();
  for (auto& [name, t] : named) copy_into(ckpt, name, t);
  if (!ckpt.meta.contains("adam_step")) throw DataError("checkpoint has no optimizer state");
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto m = ckpt.get("adam.m/" + named[k].first).data();
    const auto v = ckpt.get("adam.v/" + named[k].first).data();
    adam_.m[k].assign(m.begin(), m.end());
    adam_.v[k].assign(v.begin(), v.end());
  }
  adam_.step = ckpt.meta.at("adam_step").get<std::uint64_t>();
  step_ = ckpt.meta.at("step").get<std::size_t>();
  epoch_loss_sum_ = ckpt.meta.at("epoch_loss_sum").get<double>();
  epoch_grad_sum_ = ckpt.meta.at("epoch_grad_sum").get<double>();
  epoch_grad_max_ = ckpt.meta.at("epoch_grad_max").get<double>();
  epoch_steps_ = ckpt.meta.at("epoch_steps").get<std::size_t>();
  report_.best_valid_metric = ckpt.meta.at("best_valid_metric").get<double>();
  report_.best_step = ckpt.meta.at("best_step").get<std::size_t>();
  report_.epochs.clear();
  for (const json& e : ckpt.meta.at("history").at("epochs")) {
    EpochStats stats;
    stats.epoch = e.at("epoch").get<std::size_t>();
    stats.step = e.at("step").get<std::size_t>();
    stats.train_loss = e.at("train_loss").get<double>();
    stats.valid_loss = e.at("valid_loss").get<double>();
    stats.valid_metric = e.at("valid_metric").get<double>();
    stats.grad_norm_mean = e.at("grad_norm_mean").get<double>();
    stats.grad_norm_max = e.at("grad_norm_max").get<double>();
    stats.seconds = e.at("seconds").get<double>();
    if (stats.step % train_batches_.size() != 0) continue;  // mid-epoch stop, superseded on resume
    report_.epochs.push_back(stats);
  }
  report_.step_losses = ckpt.meta.at("history").at("step_losses").get<std::vector<double>>();
  best_snapshot_.clear();
  for (const auto& [name, t] : named) {
    if (ckpt.contains("best/" + name)) best_snapshot_.push_back({name, ckpt.get("best/" + name).clone()});
  }
}

LoadedModel load_model(const std::filesystem::path& manifest_path) {
  const Checkpoint ckpt = load_checkpoint(manifest_path);
  LoadedModel out;
  out.config = experiment_config_from_json(ckpt.meta.at("config"));
  out.vocab = vocab_from_json(ckpt.meta.at("vocab"));
  if (out.config.model.vocab_size != out.vocab.size()) {
    throw DataError("checkpoint vocabulary does not match its config");
  }
  out.params = init_params(out.config.model);
  for (auto& [name, t] : out.params.named_tensors()) copy_into(ckpt, name, t);
  return out;
}

}  // namespace tcan
