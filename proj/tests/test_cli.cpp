// Drives the installed command-line binary end to end.  The binary path is
// injected at compile time via CAP_CLI_PATH.

#include <doctest.h>

#include <sys/wait.h>

#include <Eigen/Dense>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cap/io.hpp"
#include "cap/objectives.hpp"
#include "cap/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cap_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_path = dir / "stdout.txt";
  const fs::path err_path = dir / "stderr.txt";
  const std::string cmd = std::string(CAP_CLI_PATH) + " " + args + " >" +
                          out_path.string() + " 2>" + err_path.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = cap::read_file(out_path);
  r.err = cap::read_file(err_path);
  return r;
}

// Logits with a per-row margin on the true class plus a shared bias vector.
cap::LogitMatrix biased_logits(int per_class, double margin,
                               const Eigen::VectorXd& bias) {
  const int k = static_cast<int>(bias.size());
  cap::LogitMatrix lm;
  lm.values.resize(per_class * k, k);
  std::vector<int> labels;
  for (int cls = 0; cls < k; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      const int row = cls * per_class + i;
      lm.values.row(row) = bias.transpose();
      lm.values(row, cls) += margin;
      labels.push_back(cls);
    }
  }
  lm.labels = labels;
  return lm;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version flag reports the tool version") {
  const fs::path dir = fresh_dir("version");
  const CliResult r = run_cli("--version", dir);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("cap 0.1.0") != std::string::npos);
}

TEST_CASE("synth run is deterministic and keeps flips out of validation") {
  const fs::path dir = fresh_dir("synth");
  const json config{
      {"longtail",
       {{"num_classes", 4}, {"dim", 5}, {"n_max", 60}, {"rho", 8.0},
        {"seed", 11}}},
      {"noise", {{"ratios", {0.2, 0.2, 0.1, 0.0}}, {"seed", 3}}},
      {"val_fraction", 0.25},
      {"split_seed", 2}};
  cap::atomic_write(dir / "config.json", config.dump());

  const std::string args = "synth --config " + (dir / "config.json").string() +
                           " --out " + (dir / "data.csv").string() +
                           " --noise-out " + (dir / "noise.csv").string() +
                           " --split-out " + (dir / "split.csv").string();
  const CliResult r = run_cli(args, dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  const cap::LabeledDataset ds =
      cap::dataset_from_csv(cap::read_file(dir / "data.csv"));
  CHECK(ds.num_classes == 4);
  CHECK(ds.features.cols() == 5);

  // Split rows cover every sample exactly once.
  std::map<int, std::string> role;
  const std::string split_text = cap::read_file(dir / "split.csv");
  std::size_t pos = split_text.find('\n') + 1;
  while (pos < split_text.size()) {
    const std::size_t comma = split_text.find(',', pos);
    const std::size_t eol = split_text.find('\n', pos);
    const int idx = std::stoi(split_text.substr(pos, comma - pos));
    CHECK(role.emplace(idx, split_text.substr(comma + 1, eol - comma - 1))
              .second);
    pos = eol + 1;
  }
  CHECK(role.size() == static_cast<std::size_t>(ds.n()));

  // Every injected flip landed on a training row.
  const auto flips = cap::noise_from_csv(cap::read_file(dir / "noise.csv"));
  CHECK(!flips.empty());
  for (const auto& flip : flips) {
    CHECK(role.at(flip.index) == "train");
    CHECK(ds.labels[static_cast<std::size_t>(flip.index)] == flip.new_label);
    CHECK(flip.new_label != flip.old_label);
  }

  const json manifest = json::parse(cap::read_file(dir / "manifest.json"));
  CHECK(manifest["tool"] == "cap");
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest["outputs"].size() == 3);

  // A second run reproduces every output byte for byte.
  const fs::path dir2 = fresh_dir("synth_rerun");
  cap::atomic_write(dir2 / "config.json", config.dump());
  const std::string args2 =
      "synth --config " + (dir2 / "config.json").string() + " --out " +
      (dir2 / "data.csv").string() + " --noise-out " +
      (dir2 / "noise.csv").string() + " --split-out " +
      (dir2 / "split.csv").string();
  REQUIRE(run_cli(args2, dir2).exit_code == 0);
  CHECK(cap::read_file(dir2 / "data.csv") == cap::read_file(dir / "data.csv"));
  CHECK(cap::read_file(dir2 / "noise.csv") ==
        cap::read_file(dir / "noise.csv"));
  CHECK(cap::read_file(dir2 / "split.csv") ==
        cap::read_file(dir / "split.csv"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("synth exit codes distinguish config, parse and io failures") {
  const fs::path dir = fresh_dir("synth_errors");
  // Noise without a validation split is rejected.
  const json bad_cfg{{"longtail",
                      {{"num_classes", 3}, {"dim", 4}, {"n_max", 20},
                       {"seed", 1}}},
                     {"noise", {{"ratios", {0.1, 0.1, 0.1}}}}};
  cap::atomic_write(dir / "bad.json", bad_cfg.dump());
  CHECK(run_cli("synth --config " + (dir / "bad.json").string() + " --out " +
                    (dir / "d.csv").string(),
                dir)
            .exit_code == 2);
  // Broken json is a parse failure.
  cap::atomic_write(dir / "broken.json", "{not json");
  CHECK(run_cli("synth --config " + (dir / "broken.json").string() +
                    " --out " + (dir / "d.csv").string(),
                dir)
            .exit_code == 3);
  // A missing config file is an io failure.
  CHECK(run_cli("synth --config " + (dir / "absent.json").string() +
                    " --out " + (dir / "d.csv").string(),
                dir)
            .exit_code == 5);
  // Unknown keys fail loudly.
  const json typo_cfg{{"longtail",
                       {{"num_classes", 3}, {"dim", 4}, {"n_max", 20}}},
                      {"val_fracton", 0.2}};
  cap::atomic_write(dir / "typo.json", typo_cfg.dump());
  CHECK(run_cli("synth --config " + (dir / "typo.json").string() + " --out " +
                    (dir / "d.csv").string(),
                dir)
            .exit_code == 2);
  CHECK(!fs::exists(dir / "d.csv"));
  fs::remove_all(dir);
}

TEST_CASE("validate-config checks inputs without writing outputs") {
  const fs::path dir = fresh_dir("validate");
  const json config{{"longtail",
                     {{"num_classes", 3}, {"dim", 4}, {"n_max", 30},
                      {"seed", 5}}}};
  cap::atomic_write(dir / "config.json", config.dump());
  const CliResult r =
      run_cli("--validate-config synth --config " +
                  (dir / "config.json").string() + " --out " +
                  (dir / "data.csv").string(),
              dir);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("config ok") != std::string::npos);
  CHECK(!fs::exists(dir / "data.csv"));
  CHECK(!fs::exists(dir / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("posthoc removes a planted bias and reruns identically") {
  const fs::path dir = fresh_dir("posthoc");
  Eigen::VectorXd bias(3);
  bias << 3.0, 0.0, -3.0;
  const cap::LogitMatrix logits = biased_logits(40, 2.0, bias);
  cap::atomic_write(dir / "logits.csv", cap::logits_to_csv(logits));
  Eigen::VectorXd freq(3), diff(3);
  freq << 0.5, 0.3, 0.2;
  diff << 0.9, 0.5, 0.1;
  cap::atomic_write(dir / "attrs.csv",
                    cap::attrs_to_csv(cap::AttributeTable::from_columns(
                        {"freq", "diff"}, {freq, diff})));

  const std::string args =
      "posthoc --logits " + (dir / "logits.csv").string() + " --attrs " +
      (dir / "attrs.csv").string() +
      " --objective '{\"variant\":\"balanced\"}' --mode l --steps 300 "
      "--lr 0.2 --out " +
      (dir / "out.json").string();
  const CliResult r = run_cli(args, dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  const json out = json::parse(cap::read_file(dir / "out.json"));
  CHECK(out["mode"] == "l");
  CHECK(out["pretrained_objective"].get<double>() > 0.3);
  CHECK(out["fitted_objective"].get<double>() == 0.0);
  double best = 1e300;
  for (const auto& h : out["history"]) {
    best = std::min(best, h["objective"].get<double>());
  }
  CHECK(out["fitted_objective"].get<double>() == best);
  CHECK(out["history"].size() == 301);
  const json manifest = json::parse(cap::read_file(dir / "manifest.json"));
  CHECK(manifest["command"] == "posthoc");

  const fs::path dir2 = fresh_dir("posthoc_rerun");
  const std::string args2 =
      "posthoc --logits " + (dir / "logits.csv").string() + " --attrs " +
      (dir / "attrs.csv").string() +
      " --objective '{\"variant\":\"balanced\"}' --mode l --steps 300 "
      "--lr 0.2 --out " +
      (dir2 / "out.json").string();
  REQUIRE(run_cli(args2, dir2).exit_code == 0);
  CHECK(cap::read_file(dir2 / "out.json") ==
        cap::read_file(dir / "out.json"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("eval metrics agree with the library") {
  const fs::path dir = fresh_dir("eval");
  Eigen::VectorXd bias(3);
  bias << 1.0, 0.0, -1.0;
  cap::LogitMatrix logits = biased_logits(4, 0.5, bias);
  cap::atomic_write(dir / "logits.csv", cap::logits_to_csv(logits));
  const CliResult r =
      run_cli("eval --logits " + (dir / "logits.csv").string() +
                  " --objective '{\"variant\":\"cvar\",\"a\":0.4}' --out " +
                  (dir / "metrics.json").string(),
              dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  const json out = json::parse(cap::read_file(dir / "metrics.json"));

  const auto preds = cap::predict_argmax(logits.values);
  const auto errs =
      cap::class_conditional_errors(preds, *logits.labels, logits.k());
  const double plain = cap::plain_error(preds, *logits.labels);
  cap::ObjectiveSpec balanced;
  balanced.kind = cap::ObjectiveKind::kBalanced;
  cap::ObjectiveSpec cvar;
  cvar.kind = cap::ObjectiveKind::kCvar;
  cvar.a = 0.4;
  CHECK(out["plain"].get<double>() == plain);
  CHECK(out["balanced"].get<double>() ==
        cap::eval_objective(errs, plain, balanced));
  CHECK(out["objective"].get<double>() == cap::eval_objective(errs, plain, cvar));
  CHECK(out["sdev"].get<double>() == cap::error_sdev(errs));
  REQUIRE(out["per_class_error"].size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(out["per_class_error"][k].get<double>() ==
          errs.errors[static_cast<std::size_t>(k)]);
  }

  // Unlabeled logits cannot be scored.
  cap::LogitMatrix raw = logits;
  raw.labels.reset();
  cap::atomic_write(dir / "raw.csv", cap::logits_to_csv(raw));
  CHECK(run_cli("eval --logits " + (dir / "raw.csv").string() + " --out " +
                    (dir / "m2.json").string(),
                dir)
            .exit_code == 2);
  fs::remove_all(dir);
}

TEST_CASE("gmm-sweep output is identical across thread counts") {
  const fs::path dir = fresh_dir("sweep");
  const std::string base =
      "gmm-sweep --pi 0.2 --sigma-ratio-grid 0.8,1.2 --delta-grid 1.0,2.0 "
      "--n 40 --dbar 1.0 --seeds 2 --seed 7 --out ";
  const CliResult r1 =
      run_cli("--threads 1 " + base + (dir / "s1.csv").string(), dir);
  INFO(r1.err);
  REQUIRE(r1.exit_code == 0);
  const CliResult r2 =
      run_cli("--threads 2 " + base + (dir / "s2.csv").string(), dir);
  REQUIRE(r2.exit_code == 0);
  CHECK(cap::read_file(dir / "s1.csv") == cap::read_file(dir / "s2.csv"));

  // Two ratio blocks, two deltas each; one optimum per block.
  const std::string text = cap::read_file(dir / "s1.csv");
  int rows = 0, optima = 0;
  for (std::size_t pos = text.find('\n') + 1; pos < text.size();
       pos = text.find('\n', pos) + 1) {
    ++rows;
    const std::size_t eol = text.find('\n', pos);
    if (text.substr(eol - 2, 2) == ",1") ++optima;
  }
  CHECK(rows == 4);
  CHECK(optima == 2);
  fs::remove_all(dir);
}

TEST_CASE("bilevel run from a synthetic config is deterministic") {
  const fs::path dir = fresh_dir("bilevel");
  const json data_cfg{{"longtail",
                       {{"num_classes", 3}, {"dim", 6}, {"n_max", 40},
                        {"rho", 4.0}, {"seed", 9}}},
                      {"val_fraction", 0.25},
                      {"split_seed", 1},
                      {"test_per_class", 50}};
  cap::atomic_write(dir / "data.json", data_cfg.dump());
  const json run_cfg{{"model", "linear"},
                     {"warmup_epochs", 1},
                     {"total_epochs", 3},
                     {"unroll_steps", 2},
                     {"batch_size", 16},
                     {"inner", {{"lr", 0.05}}},
                     {"outer", {{"lr", 0.3}}}};
  cap::atomic_write(dir / "run.json", run_cfg.dump());
  cap::atomic_write(dir / "objective.json", R"({"variant":"balanced"})");

  const std::string args =
      "bilevel --data " + (dir / "data.json").string() +
      " --attrs freq+diff --objective " + (dir / "objective.json").string() +
      " --config " + (dir / "run.json").string() + " --seed 3 --out " +
      (dir / "out.json").string();
  const CliResult r = run_cli(args, dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  const json out = json::parse(cap::read_file(dir / "out.json"));
  CHECK(out["trace"].size() == 3);
  const int best_epoch = out["best_epoch"].get<int>();
  CHECK(best_epoch >= 0);
  CHECK(best_epoch < 3);
  CHECK(out["eval_split"] == "test");
  CHECK(out["metrics"]["per_class_error"].size() == 3);
  const auto attrs = cap::attrs_from_csv(out["attribute_table"].get<std::string>());
  CHECK(attrs.names == std::vector<std::string>{"freq", "diff"});

  const fs::path dir2 = fresh_dir("bilevel_rerun");
  const std::string args2 =
      "bilevel --data " + (dir / "data.json").string() +
      " --attrs freq+diff --objective " + (dir / "objective.json").string() +
      " --config " + (dir / "run.json").string() + " --seed 3 --out " +
      (dir2 / "out.json").string();
  REQUIRE(run_cli(args2, dir2).exit_code == 0);
  CHECK(cap::read_file(dir2 / "out.json") == cap::read_file(dir / "out.json"));

  // A different seed must change the result.
  const fs::path dir3 = fresh_dir("bilevel_seed");
  const std::string args3 =
      "bilevel --data " + (dir / "data.json").string() +
      " --attrs freq+diff --objective " + (dir / "objective.json").string() +
      " --config " + (dir / "run.json").string() + " --seed 4 --out " +
      (dir3 / "out.json").string();
  REQUIRE(run_cli(args3, dir3).exit_code == 0);
  CHECK(cap::read_file(dir3 / "out.json") != cap::read_file(dir / "out.json"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
}

TEST_CASE("bilevel rejects unknown attribute tokens") {
  const fs::path dir = fresh_dir("bilevel_attrs");
  const json data_cfg{{"longtail",
                       {{"num_classes", 3}, {"dim", 4}, {"n_max", 20},
                        {"seed", 2}}},
                      {"val_fraction", 0.3}};
  cap::atomic_write(dir / "data.json", data_cfg.dump());
  cap::atomic_write(dir / "objective.json", R"({"variant":"balanced"})");
  CHECK(run_cli("bilevel --data " + (dir / "data.json").string() +
                    " --attrs bogus --objective " +
                    (dir / "objective.json").string() + " --out " +
                    (dir / "out.json").string(),
                dir)
            .exit_code == 2);
  // The noise attribute needs noise ratios from a synthetic noise block.
  CHECK(run_cli("bilevel --data " + (dir / "data.json").string() +
                    " --attrs noise --objective " +
                    (dir / "objective.json").string() + " --out " +
                    (dir / "out.json").string(),
                dir)
            .exit_code == 2);
  fs::remove_all(dir);
}

}  // TEST_SUITE
