#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "tcan/experiments.hpp"

using namespace tcan;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSource = fs::path(TCAN_SOURCE_DIR);

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tcan_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small fast config on the overfit corpus, written next to the data.
fs::path write_config(const fs::path& dir, json overrides = json::object()) {
  json j = {{"d_embed", 8},       {"d_attn", 8},      {"kernel_size", 2},
            {"num_levels", 2},    {"lr", 0.003},      {"batch_size", 4},
            {"seq_len", 32},      {"eval_batch_size", 2}, {"epochs", 0},
            {"max_steps", 12},    {"level", "char"},
            {"train_path", (kSource / "data/overfit_char/train.txt").string()},
            {"valid_path", (kSource / "data/overfit_char/valid.txt").string()},
            {"test_path", (kSource / "data/overfit_char/test.txt").string()},
            {"out_dir", (dir / "run").string()}};
  j.update(overrides);
  const fs::path path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST_CASE("train writes report, metrics and checkpoints; reruns are identical") {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir);
  const Run r = invoke({"--config", cfg.string(), "train"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"report.json", "metrics.csv", "best.tcan", "best.bin", "last.tcan", "last.bin"})
    CHECK(fs::exists(dir / "run" / f));

  const json report = json::parse(slurp(dir / "run/report.json"));
  const ExperimentConfig echoed = experiment_config_from_json(report.at("config"));
  CHECK(echoed == resolve_paths(load_experiment_config(cfg), cfg.parent_path()));
  CHECK(report.at("metric") == "bpc");

  const std::string first_csv = slurp(dir / "run/metrics.csv");
  CHECK(first_csv.rfind("epoch,step,train_loss,valid_loss,valid_bpc\n", 0) == 0);

  // The echoed config alone reproduces the run.
  const fs::path again = dir / "again.json";
  json echo = report.at("config");
  echo["out_dir"] = (dir / "again").string();
  std::ofstream(again) << echo.dump();
  REQUIRE(invoke({"--config", again.string(), "train"}).code == 0);
  CHECK(slurp(dir / "again/metrics.csv") == first_csv);

  const Run ev = invoke({"eval", "--checkpoint", (dir / "run/best.tcan").string(), "--split", "test"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const json result = json::parse(ev.out);
  CHECK(result.at("split") == "test");
  CHECK(result.at("bpc").get<double>() > 0.0);
}

TEST_CASE("global flags override the config") {
  const fs::path dir = scratch("flags");
  const fs::path cfg = write_config(dir);
  REQUIRE(invoke({"train", "--config", cfg.string(), "--out-dir", (dir / "other").string(), "--seed", "9"}).code == 0);
  const json report = json::parse(slurp(dir / "other/report.json"));
  CHECK(report.at("config").at("seed") == 9);
  CHECK(report.at("seed") == 9);
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("config errors exit with code 2 and name the field") {
  const fs::path dir = scratch("errors");
  const Run bad_value = invoke({"--config", write_config(dir, {{"kernel_size", 0}}).string(), "train"});
  CHECK(bad_value.code == 2);
  CHECK(bad_value.err.find("kernel_size") != std::string::npos);

  const Run unknown = invoke({"--config", write_config(dir, {{"kernal_size", 3}}).string(), "train"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("kernal_size") != std::string::npos);

  const Run bad_enum = invoke({"--config", write_config(dir, {{"softmax_direction", "diagonal"}}).string(), "train"});
  CHECK(bad_enum.code == 2);
  CHECK(bad_enum.err.find("softmax_direction") != std::string::npos);

  CHECK(invoke({"--config", (dir / "missing.json").string(), "train"}).code == 2);
  CHECK(invoke({"train"}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"--config", write_config(dir).string(), "ablate", "--kind", "dropout"}).code == 2);
}

TEST_CASE("numeric abort exits with code 3 and keeps a partial report") {
  const fs::path dir = scratch("nan");
  const Run r = invoke({"--config", write_config(dir, {{"lr", 1e300}, {"clip", 0.0}}).string(), "train"});
  CHECK(r.code == 3);
  REQUIRE(fs::exists(dir / "run/report.json"));
  const json report = json::parse(slurp(dir / "run/report.json"));
  CHECK(report.at("aborted") == true);
  CHECK(report.at("abort_reason").get<std::string>().find("step") != std::string::npos);
}

TEST_CASE("param-count") {
  const fs::path dir = scratch("params");
  const Run r = invoke({"--config", write_config(dir, {{"use_enhanced_residual", false}}).string(), "param-count"});
  REQUIRE(r.code == 0);
  const Run on = invoke({"--config", write_config(dir, {{"use_enhanced_residual", true}}).string(), "param-count"});
  CHECK(on.out == r.out);
  CHECK(r.out.find("total ") != std::string::npos);
  CHECK(r.out.find("level1.conv1") != std::string::npos);
}

TEST_CASE("ablation variants differ in exactly one field") {
  const fs::path dir = scratch("variants");
  ExperimentConfig base = resolve_paths(load_experiment_config(write_config(dir)), dir);
  for (auto kind : {AblationKind::softmax_direction, AblationKind::ta_vs_conv, AblationKind::er_on_off}) {
    const auto variants = ablation_variants(kind, base);
    REQUIRE(variants.size() >= 2);
    for (std::size_t i = 0; i < variants.size(); ++i)
      for (std::size_t j = i + 1; j < variants.size(); ++j)
        CHECK(config_diff(variants[i].config, variants[j].config).size() == 1);
  }
  CHECK(ablation_variants(AblationKind::softmax_direction, base).size() == 3);
  CHECK_FALSE(ablation_variants(AblationKind::ta_vs_conv, base)[0].config.model.use_enhanced_residual);
}

TEST_CASE("ablate runs every variant and records reference values") {
  const fs::path dir = scratch("ablate");
  const fs::path cfg = write_config(dir);
  const Run r = invoke({"--config", cfg.string(), "--out-dir", (dir / "er").string(), "ablate", "--kind", "er_on_off",
                     "--seeds", "1,2", "--steps", "4"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json table = json::parse(slurp(dir / "er/ablation.json"));
  CHECK(table.at("rows").size() == 4);
  CHECK(table.at("varied_fields") == json::array({"use_enhanced_residual"}));
  CHECK(table.at("rows")[0].at("param_count") == table.at("rows")[2].at("param_count"));
  CHECK(fs::exists(dir / "er/ER_seed2/report.json"));
  CHECK(fs::exists(dir / "er/no-ER_seed1/metrics.csv"));
  CHECK(fs::exists(dir / "er/ablation.csv"));

  const Run sd = invoke({"--config", cfg.string(), "--out-dir", (dir / "sd").string(), "ablate", "--kind",
                      "softmax_direction", "--seeds", "1", "--steps", "2"});
  REQUIRE(sd.code == 0);
  const json sdt = json::parse(slurp(dir / "sd/ablation.json"));
  CHECK(sdt.at("reference").at("values").at("vertical") == 28.10);
  CHECK(sdt.at("reference").at("values").at("mixed") == 30.88);
  CHECK(sdt.at("reference").at("values").at("horizontal") == 207.16);

  const Run tc = invoke({"--config", cfg.string(), "--out-dir", (dir / "tc").string(), "ablate", "--kind", "ta_vs_conv",
                      "--seeds", "1", "--steps", "2"});
  REQUIRE(tc.code == 0);
  const json tct = json::parse(slurp(dir / "tc/ablation.json"));
  CHECK(tct.at("reference").at("values").at("TA") == 28.10);
  CHECK(tct.at("reference").at("values").at("conv") == 151.98);
  CHECK(tct.at("reference").at("size").at("TA") == "13.2M");
  CHECK(tct.at("reference").at("size").at("conv") == "14.7M");
}

TEST_CASE("export-attn writes the kept-weight matrix, raw weights and a PGM") {
  const fs::path dir = scratch("export");
  const fs::path cfg = write_config(dir);
  REQUIRE(invoke({"--config", cfg.string(), "train"}).code == 0);
  const std::string ckpt = (dir / "run/best.tcan").string();
  const std::string sample = "the cat sees a dog\n";
  const Run r = invoke({"--out-dir", (dir / "attn").string(), "export-attn", "--checkpoint", ckpt, "--text", sample});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const std::size_t steps = sample.size();
  std::vector<std::vector<double>> kept, raw;
  auto parse = [](const std::string& text) {
    std::vector<std::vector<double>> m;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      std::vector<double> row;
      std::istringstream cells(line);
      for (std::string cell; std::getline(cells, cell, ',');) row.push_back(std::stod(cell));
      m.push_back(row);
    }
    return m;
  };
  kept = parse(slurp(dir / "attn/attn_L2.csv"));
  raw = parse(slurp(dir / "attn/attn_L2_raw.csv"));
  REQUIRE(kept.size() == steps);
  for (std::size_t t = 0; t < steps; ++t) {
    REQUIRE(kept[t].size() == steps);
    for (std::size_t i = t + 1; i < steps; ++i) CHECK(kept[t][i] == 0.0);
  }
  for (std::size_t j = 0; j < steps; ++j) {
    double col = 0.0;
    for (std::size_t t = 0; t < steps; ++t) col += raw[t][j];
    CHECK(std::abs(col - 1.0) < 1e-9);
  }
  const std::string pgm = slurp(dir / "attn/attn_L2.pgm");
  const std::string header = "P5\n" + std::to_string(steps) + " " + std::to_string(steps) + "\n255\n";
  CHECK(pgm.rfind(header, 0) == 0);
  CHECK(pgm.size() == header.size() + steps * steps);

  CHECK(invoke({"--out-dir", (dir / "attn").string(), "export-attn", "--checkpoint", ckpt, "--text", sample, "--layer",
             "1"}).code == 0);
  CHECK(fs::exists(dir / "attn/attn_L1.csv"));
  const Run out_of_range =
      invoke({"--out-dir", (dir / "attn").string(), "export-attn", "--checkpoint", ckpt, "--text", sample, "--layer", "3"});
  CHECK(out_of_range.code == 2);
  CHECK(invoke({"export-attn", "--checkpoint", ckpt, "--text", sample, "--layer", "0", "--out-dir",
             (dir / "attn").string()}).code == 2);
}

TEST_CASE("heatmap helpers") {
  const Tensor w = Tensor::from_data({3, 3}, {0.2, 0.9, 0.9, 0.1, 0.4, 0.9, 0.3, 0.6, 0.5});
  const Tensor kept = kept_weights(w);
  CHECK(kept.at(0, 1) == 0.0);
  CHECK(kept.at(1, 2) == 0.0);
  CHECK(kept.at(2, 1) == 0.6);
  CHECK(matrix_csv(Tensor::from_data({2, 2}, {0.5, 0, 0.25, 1})) == "0.5,0\n0.25,1\n");
  // row 1 -> argmax 1 (offset 0), row 2 -> argmax 1 (offset 1); ties go to the smaller offset
  CHECK(modal_diagonal_offset(w, 2, 3) == 1);
  CHECK(modal_diagonal_offset(w, 1, 3) == 0);
  const std::string pgm = matrix_pgm(kept);
  CHECK(static_cast<unsigned char>(pgm.back()) == static_cast<unsigned char>(0.5 / 0.6 * 255.0 + 0.5));
}
