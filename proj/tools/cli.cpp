#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "tcan/errors.hpp"
#include "tcan/experiments.hpp"

namespace tcan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config", "this command needs --config <file.json>");
  ExperimentConfig config = load_experiment_config(g.config);
  config = resolve_paths(std::move(config), fs::path(g.config).parent_path());
  if (!g.out_dir.empty()) config.out_dir = g.out_dir;
  if (g.seed) config.model.seed = *g.seed;
  config.validate();
  return config;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

int cmd_train(const Globals& g, const std::string& resume, std::ostream& out) {
  const ExperimentConfig config = load_config(g);
  std::optional<fs::path> resume_from;
  if (!resume.empty()) resume_from = fs::path(resume);
  const RunArtifacts art = run_experiment(config, config.out_dir, resume_from);
  const TrainReport& r = art.report;
  out << "params " << r.param_count << "\n";
  for (const EpochStats& e : r.epochs) {
    out << "epoch " << e.epoch << " step " << e.step << " train_loss " << fmt(e.train_loss) << " valid_"
        << r.metric << " " << fmt(e.valid_metric) << "\n";
  }
  if (r.test_metric) out << "test_" << r.metric << " " << fmt(*r.test_metric) << "\n";
  out << "wrote " << art.report_json.string() << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& split_name, std::ostream& out) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint", "eval needs --checkpoint <best.tcan>");
  LoadedModel model = load_model(checkpoint);
  CorpusConfig corpus = model.config.corpus;
  std::size_t batch_size = model.config.train.eval_batch_size;
  std::size_t seq_len = model.config.train.seq_len;
  if (!g.config.empty()) {
    const ExperimentConfig override_cfg = load_config(g);
    corpus = override_cfg.corpus;
    batch_size = override_cfg.train.eval_batch_size;
    seq_len = override_cfg.train.seq_len;
  }
  std::string path;
  Split split;
  if (split_name == "valid") {
    path = corpus.valid_path;
    split = Split::valid;
  } else if (split_name == "test") {
    path = corpus.test_path;
    split = Split::test;
  } else if (split_name == "train") {
    path = corpus.train_path;
    split = Split::train;
  } else {
    throw ConfigError("--split", "expected train, valid or test, got '" + split_name + "'");
  }
  if (path.empty()) throw ConfigError("--split", "no corpus path configured for split " + split_name);
  const TokenStream stream = model.vocab.encode(read_text_file(path), split, corpus.strict_unknown);
  const std::vector<Batch> batches = batchify(stream, batch_size, seq_len);
  const Evaluation ev = evaluate(model.params, model.config.model, batches, model.vocab.level());
  const json result = {{"split", split_name},
                       {"mean_nll", ev.mean_nll},
                       {"positions", ev.positions},
                       {std::string(metric_name(model.vocab.level())), ev.metric}};
  out << result.dump(2) << "\n";
  return kOk;
}

int cmd_ablate(const Globals& g, const std::string& kind, const std::vector<std::uint64_t>& seeds,
               std::size_t steps, std::ostream& out) {
  ExperimentConfig config = load_config(g);
  const AblationKind ablation = parse_ablation_kind(kind);
  if (steps > 0) {
    config.train.max_steps = steps;
    config.train.epochs = 0;
  }
  const fs::path dir = fs::path(config.out_dir);
  const AblationTable table = run_ablation(ablation, config, seeds, dir);
  out << table.to_csv();
  out << "varied:";
  for (const std::string& f : table.varied_fields) out << " " << f;
  out << "\nwrote " << (dir / "ablation.json").string() << "\n";
  return kOk;
}

int cmd_export(const Globals& g, const std::string& checkpoint, std::string text, const std::string& text_file,
               std::optional<std::size_t> layer, std::ostream& out) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint", "export-attn needs --checkpoint <best.tcan>");
  if (!text_file.empty()) text = read_text_file(text_file);
  if (text.empty()) throw ConfigError("--text", "export-attn needs --text or --text-file");
  const fs::path dir = g.out_dir.empty() ? fs::path(".") : fs::path(g.out_dir);
  const HeatmapExport ex = export_attention_heatmap(checkpoint, text, layer, dir);
  const std::size_t steps = ex.record.weights.dim(0);
  out << "layer " << ex.layer << " T " << steps << "\n";
  if (steps >= 4) out << "modal_offset " << modal_diagonal_offset(ex.record.weights, steps / 4, steps - steps / 4) << "\n";
  out << "wrote " << ex.csv.string() << " " << ex.raw_csv.string() << " " << ex.pgm.string() << "\n";
  return kOk;
}

int cmd_param_count(const Globals& g, std::ostream& out) {
  ExperimentConfig config = load_config(g);
  if (config.model.vocab_size == 0) config.model.vocab_size = load_corpus(config.corpus).vocab.size();
  const ModelParams params = init_params(config.model);
  for (const auto& [name, tensor] : params.named_tensors()) {
    out << name << " " << shape_str(tensor.shape()) << " " << tensor.numel() << "\n";
  }
  out << "total " << count_parameters(params) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TCAN sequence-modeling lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--out-dir", g.out_dir, "output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", seed, "model/init seed (overrides the config)");

  auto* train = app.add_subcommand("train", "train and evaluate one config");
  std::string resume;
  train->add_option("--resume", resume, "continue from a last.tcan checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  std::string checkpoint, split = "valid";
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--split", split, "train|valid|test");

  auto* ablate = app.add_subcommand("ablate", "run an ablation over variants and seeds");
  std::string kind;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t steps = 2000;
  ablate->add_option("--kind", kind, "softmax_direction|ta_vs_conv|er_on_off")->required();
  ablate->add_option("--seeds", seeds, "seeds (repeat or comma separated)")->delimiter(',');
  ablate->add_option("--steps", steps, "steps per run (0 keeps the config budget)");

  auto* exporter = app.add_subcommand("export-attn", "write attention weights of one level");
  std::string text, text_file;
  std::size_t layer = 0;
  exporter->add_option("--checkpoint", checkpoint)->required();
  exporter->add_option("--text", text, "sample text");
  exporter->add_option("--text-file", text_file, "sample text file");
  auto* layer_opt = exporter->add_option("--layer", layer, "1-indexed level (default: last)");

  auto* pcount = app.add_subcommand("param-count", "print parameter tensors and total");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, resume, out);
    if (*eval) return cmd_eval(g, checkpoint, split, out);
    if (*ablate) return cmd_ablate(g, kind, seeds, steps, out);
    if (*exporter) {
      std::optional<std::size_t> chosen;
      if (*layer_opt) chosen = layer;
      return cmd_export(g, checkpoint, text, text_file, chosen, out);
    }
    if (*pcount) return cmd_param_count(g, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kNumericAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace tcan::cli
