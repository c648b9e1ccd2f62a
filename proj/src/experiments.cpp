#include "tcan/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tcan/errors.hpp"

namespace tcan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& config, const fs::path& out_dir,
                            const std::optional<fs::path>& resume_from) {
  fs::create_directories(out_dir);
  Trainer trainer(config, load_corpus(config.corpus));
  if (resume_from) trainer.load_state(*resume_from);

  RunArtifacts art;
  art.report_json = out_dir / "report.json";
  art.metrics_csv = out_dir / "metrics.csv";
  art.best_checkpoint = out_dir / "best.tcan";
  art.last_checkpoint = out_dir / "last.tcan";
  auto write_reports = [&](const TrainReport& report) {
    write_file(art.report_json, report.to_json().dump(2) + "\n");
    write_file(art.metrics_csv, report.metrics_csv());
  };
  try {
    art.report = trainer.run(out_dir);
  } catch (const NumericError&) {
    write_reports(trainer.report());
    throw;
  }
  write_reports(art.report);
  return art;
}

std::string_view to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::softmax_direction: return "softmax_direction";
    case AblationKind::ta_vs_conv: return "ta_vs_conv";
    case AblationKind::er_on_off: return "er_on_off";
  }
  return "?";
}

AblationKind parse_ablation_kind(std::string_view s) {
  if (s == "softmax_direction") return AblationKind::softmax_direction;
  if (s == "ta_vs_conv") return AblationKind::ta_vs_conv;
  if (s == "er_on_off") return AblationKind::er_on_off;
  throw ConfigError("kind", "unknown ablation '" + std::string(s) +
                                "' (softmax_direction|ta_vs_conv|er_on_off)");
}

std::vector<AblationVariant> ablation_variants(AblationKind kind, const ExperimentConfig& base) {
  std::vector<AblationVariant> out;
  switch (kind) {
    case AblationKind::softmax_direction:
      for (SoftmaxDirection d : {SoftmaxDirection::vertical, SoftmaxDirection::horizontal, SoftmaxDirection::mixed}) {
        ExperimentConfig c = base;
        c.model.softmax_direction = d;
        out.push_back({std::string(to_string(d)), c});
      }
      break;
    case AblationKind::ta_vs_conv: {
      ExperimentConfig c = base;
      c.model.use_enhanced_residual = false;
      c.model.use_values_for_output = false;
      c.model.use_temporal_attention = true;
      out.push_back({"TA", c});
      c.model.use_temporal_attention = false;
      out.push_back({"conv", c});
      break;
    }
    case AblationKind::er_on_off: {
      ExperimentConfig c = base;
      c.model.use_enhanced_residual = true;
      out.push_back({"ER", c});
      c.model.use_enhanced_residual = false;
      out.push_back({"no-ER", c});
      break;
    }
  }
  return out;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  const json ja = to_json(a), jb = to_json(b);
  std::vector<std::string> keys;
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (jb.at(it.key()) != it.value()) keys.push_back(it.key());
  }
  return keys;
}

namespace {

json reference_values(AblationKind kind) {
  switch (kind) {
    case AblationKind::softmax_direction:
      return {{"dataset", "word-level PTB"},
              {"metric", "ppl"},
              {"values", {{"vertical", 28.10}, {"mixed", 30.88}, {"horizontal", 207.16}}}};
    case AblationKind::ta_vs_conv:
      return {{"dataset", "word-level PTB"},
              {"metric", "ppl"},
              {"values", {{"TA", 28.10}, {"conv", 151.98}}},
              {"size", {{"TA", "13.2M"}, {"conv", "14.7M"}}}};
    case AblationKind::er_on_off:
      return {{"dataset", "word-level PTB / char-level PTB"},
              {"metric", "ppl / bpc"},
              {"values", {{"ER", {26.92, 1.043}}, {"no-ER", {28.10, 1.060}}}}};
  }
  return json::object();
}

}  // namespace

std::vector<std::string> AblationTable::variants() const {
  std::vector<std::string> out;
  for (const AblationRow& r : rows)
    if (std::find(out.begin(), out.end(), r.variant) == out.end()) out.push_back(r.variant);
  return out;
}

double AblationTable::mean_final_metric(std::string_view variant) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const AblationRow& r : rows) {
    if (r.variant != variant) continue;
    total += r.final_metric;
    ++n;
  }
  if (n == 0) throw ContractError("no ablation rows for variant '" + std::string(variant) + "'");
  return total / static_cast<double>(n);
}

std::size_t AblationTable::param_count(std::string_view variant) const {
  for (const AblationRow& r : rows)
    if (r.variant == variant) return r.param_count;
  throw ContractError("no ablation rows for variant '" + std::string(variant) + "'");
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,param_count,final_valid_" << metric << ",best_valid_" << metric << '\n';
  char line[256];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof line, "%s,%llu,%zu,%.10g,%.10g\n", r.variant.c_str(),
                  static_cast<unsigned long long>(r.seed), r.param_count, r.final_metric, r.best_metric);
    os << line;
  }
  for (const std::string& v : variants()) {
    std::snprintf(line, sizeof line, "%s,mean,%zu,%.10g,\n", v.c_str(), param_count(v), mean_final_metric(v));
    os << line;
  }
  return os.str();
}

json AblationTable::to_json() const {
  json rows_json = json::array();
  for (const AblationRow& r : rows) {
    rows_json.push_back({{"variant", r.variant},
                         {"seed", r.seed},
                         {"param_count", r.param_count},
                         {"final_valid_metric", r.final_metric},
                         {"best_valid_metric", r.best_metric},
                         {"run_dir", r.run_dir}});
  }
  json means = json::object();
  for (const std::string& v : variants()) means[v] = mean_final_metric(v);
  return {{"kind", std::string(tcan::to_string(kind))},
          {"metric", metric},
          {"varied_fields", varied_fields},
          {"rows", rows_json},
          {"mean_final_valid_metric", means},
          {"reference", reference}};
}

AblationTable run_ablation(AblationKind kind, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                           const fs::path& out_dir) {
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  base.validate();
  const std::vector<AblationVariant> variants = ablation_variants(kind, base);
  AblationTable table;
  table.kind = kind;
  table.metric = std::string(metric_name(base.corpus.level));
  table.reference = reference_values(kind);
  for (std::size_t i = 1; i < variants.size(); ++i) {
    for (const std::string& key : config_diff(variants[0].config, variants[i].config)) {
      if (std::find(table.varied_fields.begin(), table.varied_fields.end(), key) == table.varied_fields.end())
        table.varied_fields.push_back(key);
    }
  }

  fs::create_directories(out_dir);
  for (const AblationVariant& variant : variants) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig config = variant.config;
      config.model.seed = seed;
      const fs::path run_dir = out_dir / (variant.label + "_seed" + std::to_string(seed));
      config.out_dir = run_dir.string();
      RunArtifacts art = run_experiment(config, run_dir);
      AblationRow row;
      row.variant = variant.label;
      row.seed = seed;
      row.param_count = art.report.param_count;
      row.final_metric = art.report.epochs.back().valid_metric;
      row.best_metric = art.report.best_valid_metric;
      row.run_dir = run_dir.string();
      table.rows.push_back(row);
    }
  }
  write_file(out_dir / "ablation.csv", table.to_csv());
  write_file(out_dir / "ablation.json", table.to_json().dump(2) + "\n");
  return table;
}

Tensor kept_weights(const Tensor& weights) {
  if (weights.rank() != 2 || weights.dim(0) != weights.dim(1)) {
    throw ShapeError("kept_weights: expected a square matrix");
  }
  const std::size_t n = weights.dim(0);
  std::vector<double> out(weights.data().begin(), weights.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out[i * n + j] = 0.0;
  return Tensor::from_data({n, n}, std::move(out));
}

std::string matrix_csv(const Tensor& matrix) {
  std::ostringstream os;
  char cell[32];
  for (std::size_t i = 0; i < matrix.dim(0); ++i) {
    for (std::size_t j = 0; j < matrix.dim(1); ++j) {
      std::snprintf(cell, sizeof cell, "%.17g", matrix.at(i, j));
      os << (j ? "," : "") << cell;
    }
    os << '\n';
  }
  return os.str();
}

std::string matrix_pgm(const Tensor& matrix) {
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  double peak = 0.0;
  for (double x : matrix.data()) peak = std::max(peak, x);
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double x : matrix.data()) {
    const double level = peak > 0.0 ? std::clamp(x / peak, 0.0, 1.0) * 255.0 : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(level + 0.5)));
  }
  return out;
}

std::size_t modal_diagonal_offset(const Tensor& weights, std::size_t first, std::size_t last) {
  const std::size_t n = weights.dim(0);
  last = std::min(last, n);
  if (first >= last) throw ContractError("modal_diagonal_offset: empty row range");
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t t = first; t < last; ++t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i <= t; ++i)
      if (weights.at(t, i) > weights.at(t, best)) best = i;
    ++counts[t - best];
  }
  std::size_t mode = 0, mode_count = 0;
  for (const auto& [offset, count] : counts) {
    if (count > mode_count) {
      mode = offset;
      mode_count = count;
    }
  }
  return mode;
}

HeatmapExport export_attention_heatmap(const fs::path& checkpoint, std::string_view sample,
                                       std::optional<std::size_t> layer, const fs::path& out_dir) {
  LoadedModel model = load_model(checkpoint);
  const TCANConfig& cfg = model.config.model;
  if (!cfg.use_temporal_attention) {
    throw ConfigError("layer", "checkpoint model has no temporal attention layers");
  }
  const std::size_t level = layer.value_or(cfg.num_levels);
  if (level < 1 || level > cfg.num_levels) {
    throw ConfigError("layer", "level " + std::to_string(level) + " outside [1, " +
                                   std::to_string(cfg.num_levels) + "]");
  }
  const TokenStream tokens = model.vocab.encode(sample);
  if (tokens.ids.empty()) throw DataError("export-attn: sample text encodes to no tokens");

  ForwardOptions options;
  options.capture_attention = true;
  NoGradGuard no_grad;
  ForwardResult fwd = model_forward(tokens.ids, model.params, cfg, options);

  HeatmapExport out;
  out.layer = level;
  out.record = fwd.records.at(level - 1);
  fs::create_directories(out_dir);
  const std::string stem = "attn_L" + std::to_string(level);
  out.csv = out_dir / (stem + ".csv");
  out.raw_csv = out_dir / (stem + "_raw.csv");
  out.pgm = out_dir / (stem + ".pgm");
  const Tensor kept = kept_weights(out.record.weights);
  write_file(out.csv, matrix_csv(kept));
  write_file(out.raw_csv, matrix_csv(out.record.weights));
  write_file(out.pgm, matrix_pgm(kept));
  return out;
}

}  // namespace tcan
