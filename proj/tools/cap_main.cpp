// Command-line front end: posthoc fitting, bilevel search, the
// delta sweep study, synthetic data generation and metric evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cap/bilevel.hpp"
#include "cap/errors.hpp"
#include "cap/gmm.hpp"
#include "cap/io.hpp"
#include "cap/posthoc.hpp"
#include "cap/rng.hpp"
#include "cap/synth.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using nlohmann::json;

// Option values may be inline json (leading '{') or a file path.
json load_json_arg(const std::string& arg, const std::string& context) {
  std::string text;
  if (!arg.empty() && arg.front() == '{') {
    text = arg;
  } else {
    text = cap::read_file(arg);
  }
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw cap::ParseError("invalid json in " + context);
  }
  return j;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const std::filesystem::path& out_path,
                    const std::string& command, const json& config,
                    std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  json manifest{{"tool", "cap"},
                {"version", kVersion},
                {"command", command},
                {"seed", seed},
                {"config_hash", hash_hex(cap::stable_hash(config.dump()))},
                {"outputs", outputs}};
  const auto dir = out_path.parent_path();
  const auto path = (dir.empty() ? std::filesystem::path(".") : dir) /
                    "manifest.json";
  cap::atomic_write(path, manifest.dump(2) + "\n");
}

std::vector<double> parse_double_list(const std::string& arg,
                                      const std::string& context) {
  std::vector<double> out;
  std::string cur;
  for (char c : arg + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        out.push_back(cap::parse_double(cur, context));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw cap::ConfigError(context + " must be non-empty");
  return out;
}

cap::AdjustMode mode_from_string(const std::string& mode) {
  if (mode == "l") return cap::AdjustMode::kAdditive;
  if (mode == "delta") return cap::AdjustMode::kMultiplicative;
  if (mode == "both") return cap::AdjustMode::kBoth;
  throw cap::ConfigError("mode must be one of l, delta, both");
}

std::string mode_to_string(cap::AdjustMode mode) {
  switch (mode) {
    case cap::AdjustMode::kAdditive: return "l";
    case cap::AdjustMode::kMultiplicative: return "delta";
    case cap::AdjustMode::kBoth: return "both";
  }
  return "?";
}

json metrics_json(const cap::ClassErrorVector& errs, double plain,
                  const std::optional<cap::ObjectiveSpec>& requested) {
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(errs.k());
  cap::ObjectiveSpec balanced{cap::ObjectiveKind::kBalanced, 0.2, 0.5, {}};
  cap::ObjectiveSpec cvar{cap::ObjectiveKind::kCvar, 0.2, 0.5, {}};
  cap::ObjectiveSpec quant{cap::ObjectiveKind::kQuantile, 0.2, 0.5, {}};
  cap::ObjectiveSpec weighted{cap::ObjectiveKind::kWeighted, 0.2, 0.5, w};
  json out{{"plain", plain},
           {"balanced", cap::eval_objective(errs, plain, balanced)},
           {"sdev", cap::error_sdev(errs)},
           {"cvar_0.2", cap::eval_objective(errs, plain, cvar)},
           {"quantile_0.2", cap::eval_objective(errs, plain, quant)},
           {"weighted_uniform", cap::eval_objective(errs, plain, weighted)}};
  if (requested) {
    out["objective"] = cap::eval_objective(errs, plain, *requested);
  }
  json per_class = json::array();
  for (int k = 0; k < errs.k(); ++k) {
    per_class.push_back(errs.errors[static_cast<std::size_t>(k)]);
  }
  out["per_class_error"] = per_class;
  return out;
}

// ---------------------------------------------------------------------------
// synth config

struct SynthRun {
  cap::LongTailSpec lt;
  std::optional<cap::NoiseSpec> noise;
  std::optional<double> val_fraction;
  std::uint64_t split_seed = 0;
  int test_per_class = 200;
};

SynthRun synth_run_from_json(const json& j) {
  cap::check_keys(j, "synth config", {"longtail"},
                  {"noise", "val_fraction", "split_seed", "test_per_class"});
  const json& lt = j["longtail"];
  cap::check_keys(lt, "longtail", {"num_classes", "dim", "n_max"},
                  {"rho", "mean_scale", "sigma", "seed"});
  SynthRun run;
  run.lt.num_classes = lt["num_classes"].get<int>();
  run.lt.dim = lt["dim"].get<int>();
  run.lt.n_max = lt["n_max"].get<int>();
  if (lt.contains("rho")) run.lt.rho = lt["rho"].get<double>();
  if (lt.contains("mean_scale")) {
    run.lt.mean_scale = lt["mean_scale"].get<double>();
  }
  if (lt.contains("sigma")) {
    run.lt.sigma = cap::vector_from_json(lt["sigma"], "longtail sigma");
  }
  if (lt.contains("seed")) run.lt.seed = lt["seed"].get<std::uint64_t>();
  run.lt.validate();
  if (j.contains("noise")) {
    const json& nj = j["noise"];
    cap::check_keys(nj, "noise", {}, {"ratios", "random_seed", "seed"});
    if (nj.contains("ratios") == nj.contains("random_seed")) {
      throw cap::ConfigError(
          "noise needs exactly one of 'ratios' or 'random_seed'");
    }
    cap::NoiseSpec spec;
    if (nj.contains("ratios")) {
      spec.ratios = cap::vector_from_json(nj["ratios"], "noise ratios");
    } else {
      spec.ratios = cap::random_noise_ratios(
          run.lt.num_classes, nj["random_seed"].get<std::uint64_t>());
    }
    if (spec.ratios.size() != run.lt.num_classes) {
      throw cap::ConfigError("noise ratios must have one entry per class");
    }
    if (nj.contains("seed")) spec.seed = nj["seed"].get<std::uint64_t>();
    run.noise = spec;
  }
  if (j.contains("val_fraction")) {
    run.val_fraction = j["val_fraction"].get<double>();
  }
  if (j.contains("split_seed")) {
    run.split_seed = j["split_seed"].get<std::uint64_t>();
  }
  if (j.contains("test_per_class")) {
    run.test_per_class = j["test_per_class"].get<int>();
    if (run.test_per_class < 1) {
      throw cap::ConfigError("test_per_class must be positive");
    }
  }
  if (run.noise && !run.val_fraction) {
    throw cap::ConfigError(
        "noise injection needs val_fraction: the split must be taken before "
        "noise so validation stays clean");
  }
  return run;
}

struct SynthData {
  cap::LabeledDataset data;  // noise applied to training rows only
  std::vector<cap::NoiseRecordEntry> flips;  // indices into data
  std::optional<cap::SplitIndices> split;
};

SynthData materialize_synth(const SynthRun& run) {
  SynthData out;
  out.data = cap::make_longtail_gaussian(run.lt);
  if (run.val_fraction) {
    out.split = cap::stratified_split(out.data.labels, out.data.num_classes,
                                      *run.val_fraction, run.split_seed);
  }
  if (run.noise) {
    const std::vector<int>& train_idx = out.split->train_idx;
    const cap::NoisyDataset noisy =
        cap::inject_label_noise(cap::subset(out.data, train_idx), *run.noise);
    for (const auto& flip : noisy.flips) {
      const int full_idx = train_idx[static_cast<std::size_t>(flip.index)];
      out.data.labels[static_cast<std::size_t>(full_idx)] = flip.new_label;
      out.flips.push_back({full_idx, flip.old_label, flip.new_label});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilevel config

struct BilevelRun {
  cap::BilevelConfig cfg;
  cap::BasisSet basis = cap::BasisSet::standard();
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

void read_sgd(const json& j, const std::string& context, cap::SgdConfig* out) {
  cap::check_keys(j, context, {}, {"lr", "momentum", "weight_decay"});
  if (j.contains("lr")) out->lr = j["lr"].get<double>();
  if (j.contains("momentum")) out->momentum = j["momentum"].get<double>();
  if (j.contains("weight_decay")) {
    out->weight_decay = j["weight_decay"].get<double>();
  }
}

BilevelRun bilevel_run_from_json(const json& j) {
  cap::check_keys(
      j, "bilevel config", {},
      {"model", "hidden", "warmup_epochs", "total_epochs", "lr_decay_epochs",
       "lr_decay_factor", "inner", "outer", "unroll_steps", "batch_size",
       "learn_omega", "val_fraction", "split_seed", "basis",
       "divergence_threshold"});
  BilevelRun run;
  if (j.contains("model")) {
    const std::string name = j["model"].get<std::string>();
    if (name == "linear") {
      run.cfg.model = cap::ModelKind::kLinear;
    } else if (name == "mlp1") {
      run.cfg.model = cap::ModelKind::kMlp1;
    } else {
      throw cap::ConfigError("model must be linear or mlp1");
    }
  }
  if (j.contains("hidden")) run.cfg.hidden = j["hidden"].get<int>();
  if (j.contains("warmup_epochs")) {
    run.cfg.warmup_epochs = j["warmup_epochs"].get<int>();
  }
  if (j.contains("total_epochs")) {
    run.cfg.total_epochs = j["total_epochs"].get<int>();
  }
  if (j.contains("lr_decay_epochs")) {
    run.cfg.lr_decay_epochs.clear();
    for (const auto& e : j["lr_decay_epochs"]) {
      run.cfg.lr_decay_epochs.push_back(e.get<int>());
    }
  }
  if (j.contains("lr_decay_factor")) {
    run.cfg.lr_decay_factor = j["lr_decay_factor"].get<double>();
  }
  if (j.contains("inner")) read_sgd(j["inner"], "inner", &run.cfg.inner);
  if (j.contains("outer")) read_sgd(j["outer"], "outer", &run.cfg.outer);
  if (j.contains("unroll_steps")) {
    run.cfg.unroll_steps = j["unroll_steps"].get<int>();
  }
  if (j.contains("batch_size")) run.cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("learn_omega")) {
    run.cfg.learn_omega = j["learn_omega"].get<bool>();
  }
  if (j.contains("divergence_threshold")) {
    run.cfg.divergence_threshold = j["divergence_threshold"].get<double>();
  }
  if (j.contains("val_fraction")) {
    run.val_fraction = j["val_fraction"].get<double>();
  }
  if (j.contains("split_seed")) {
    run.split_seed = j["split_seed"].get<std::uint64_t>();
  }
  if (j.contains("basis")) run.basis = cap::basis_from_json(j["basis"]);
  run.cfg.validate();
  return run;
}

cap::AttributeRecipe recipe_from_string(const std::string& arg,
                                        const std::optional<Eigen::VectorXd>&
                                            noise_ratios) {
  cap::AttributeRecipe recipe;
  recipe.freq = false;
  std::string cur;
  for (char c : arg + "+") {
    if (c == '+') {
      if (cur == "freq") {
        recipe.freq = true;
      } else if (cur == "diff") {
        recipe.diff = true;
      } else if (cur == "identity") {
        recipe.identity = true;
      } else if (cur == "noise") {
        recipe.noise = true;
      } else {
        throw cap::ConfigError("unknown attribute token '" + cur + "'");
      }
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (recipe.noise) {
    if (!noise_ratios) {
      throw cap::ConfigError(
          "noise attribute requested but no noise ratios are available "
          "(only synthetic data with a noise block provides them)");
    }
    recipe.noise_ratios = *noise_ratios;
  }
  return recipe;
}

// ---------------------------------------------------------------------------
// subcommand drivers

struct CommonOpts {
  int threads = 1;
  bool validate_only = false;
};

int run_posthoc(const std::string& logits_path, const std::string& attrs_path,
                const std::string& objective_arg, const std::string& mode_str,
                int steps, double lr, std::uint64_t seed,
                const std::string& basis_arg, const std::string& out_path,
                const CommonOpts& common) {
  cap::PosthocConfig cfg;
  cfg.mode = mode_from_string(mode_str);
  cfg.steps = steps;
  cfg.lr = lr;
  const json obj_json = load_json_arg(objective_arg, "objective");
  cfg.objective = cap::objective_from_json(obj_json);
  cap::BasisSet basis = cap::BasisSet::standard();
  json basis_json = cap::to_json(basis);
  if (!basis_arg.empty()) {
    basis_json = load_json_arg(basis_arg, "basis");
    basis = cap::basis_from_json(basis_json);
  }
  const cap::LogitMatrix logits =
      cap::logits_from_csv(cap::read_file(logits_path));
  const cap::AttributeTable attrs =
      cap::attrs_from_csv(cap::read_file(attrs_path));
  if (common.validate_only) {
    std::cout << "config ok\n";
    return 0;
  }

  const cap::PosthocModel model = cap::fit_posthoc(logits, attrs, basis, cfg);
  json history = json::array();
  for (const auto& h : model.history) {
    history.push_back({{"step", h.step},
                       {"surrogate", h.surrogate},
                       {"objective", h.objective}});
  }
  json out{{"mode", mode_to_string(cfg.mode)},
           {"objective", obj_json},
           {"basis", basis_json},
           {"steps", cfg.steps},
           {"lr", cfg.lr},
           {"pretrained_objective", model.pretrained_objective},
           {"fitted_objective", model.fitted_objective},
           {"weights", cap::to_json(model.weights)},
           {"strategies", cap::to_json(model.strategies)},
           {"export_strategies", cap::to_json(cap::export_strategies(model))},
           {"history", history}};
  cap::atomic_write(out_path, out.dump(2) + "\n");
  json config{{"logits", logits_path}, {"attrs", attrs_path},
              {"objective", obj_json}, {"mode", mode_str},
              {"steps", steps},        {"lr", lr},
              {"basis", basis_json}};
  write_manifest(out_path, "posthoc", config, seed, {out_path});
  std::cout << "posthoc: objective " << model.pretrained_objective << " -> "
            << model.fitted_objective << "\n";
  return 0;
}

int run_bilevel(const std::string& data_path, const std::string& attrs_arg,
                const std::string& objective_arg, const std::string& config_arg,
                std::uint64_t seed, const std::string& test_path,
                const std::string& out_path, const CommonOpts& common) {
  const json obj_json = load_json_arg(objective_arg, "objective");
  const cap::ObjectiveSpec objective = cap::objective_from_json(obj_json);
  json config_json = json::object();
  if (!config_arg.empty()) {
    config_json = load_json_arg(config_arg, "bilevel config");
  }
  BilevelRun run = bilevel_run_from_json(config_json);
  run.cfg.seed = seed;

  cap::LabeledDataset full;
  std::optional<Eigen::VectorXd> noise_ratios;
  std::optional<cap::LabeledDataset> test;
  const bool synth_input = data_path.size() > 5 &&
                           data_path.substr(data_path.size() - 5) == ".json";
  std::optional<cap::SplitIndices> split;
  if (synth_input) {
    const SynthRun synth = synth_run_from_json(load_json_arg(data_path, "data"));
    const SynthData made = materialize_synth(synth);
    full = made.data;
    if (synth.noise) noise_ratios = synth.noise->ratios;
    if (made.split) {
      split = *made.split;
    }
    test = cap::make_balanced_gaussian(synth.lt, synth.test_per_class,
                                       cap::derive_seed(synth.lt.seed, 0x7e57));
    if (made.split && synth.noise) {
      // The split was taken before injection; assert validation stayed clean.
      cap::LongTailSpec clean_spec = synth.lt;
      const cap::LabeledDataset clean =
          cap::make_longtail_gaussian(clean_spec);
      for (int idx : made.split->val_idx) {
        if (clean.labels[static_cast<std::size_t>(idx)] !=
            full.labels[static_cast<std::size_t>(idx)]) {
          throw cap::NumericError("validation labels were touched by noise");
        }
      }
    }
  } else {
    full = cap::dataset_from_csv(cap::read_file(data_path));
  }
  if (!split) {
    split = cap::stratified_split(full.labels, full.num_classes,
                                  run.val_fraction, run.split_seed);
  }
  if (!test_path.empty()) {
    test = cap::dataset_from_csv(cap::read_file(test_path));
  }
  const cap::AttributeRecipe recipe =
      recipe_from_string(attrs_arg, noise_ratios);
  if (common.validate_only) {
    std::cout << "config ok\n";
    return 0;
  }

  const cap::LabeledDataset train = cap::subset(full, split->train_idx);
  const cap::LabeledDataset val = cap::subset(full, split->val_idx);
  const cap::SearchResult search =
      cap::search_phase(train, val, recipe, run.basis, objective, run.cfg);
  const cap::ToyModel final_model =
      cap::retrain(full, search.best_strategies, run.cfg, 1);

  const cap::LabeledDataset& eval_ds = test ? *test : val;
  const auto preds = cap::predict_argmax(final_model.forward_batch(eval_ds.features));
  const auto errs =
      cap::class_conditional_errors(preds, eval_ds.labels, eval_ds.num_classes);
  const double plain = cap::plain_error(preds, eval_ds.labels);

  json trace = json::array();
  for (const auto& t : search.trace) {
    trace.push_back({{"epoch", t.epoch},
                     {"mean_train_loss", t.mean_train_loss},
                     {"val_objective", t.val_objective}});
  }
  json out{{"objective", obj_json},
           {"attrs", attrs_arg},
           {"attribute_table", cap::attrs_to_csv(search.attrs)},
           {"weights", cap::to_json(search.best_weights)},
           {"strategies", cap::to_json(search.best_strategies)},
           {"best_epoch", search.best_epoch},
           {"trace", trace},
           {"eval_split", test ? "test" : "val"},
           {"metrics", metrics_json(errs, plain, objective)}};
  cap::atomic_write(out_path, out.dump(2) + "\n");
  json config{{"data", data_path},     {"attrs", attrs_arg},
              {"objective", obj_json}, {"config", config_json},
              {"test", test_path}};
  write_manifest(out_path, "bilevel", config, seed, {out_path});
  std::cout << "bilevel: best epoch " << search.best_epoch << ", "
            << (test ? "test" : "val") << " balanced "
            << out["metrics"]["balanced"].get<double>() << "\n";
  return 0;
}

int run_gmm_sweep(const std::string& pi_arg, const std::string& ratio_arg,
                  double dbar, int n, const std::string& delta_arg, int seeds,
                  double mu_norm, std::uint64_t seed,
                  const std::string& out_path, const CommonOpts& common) {
  cap::SweepConfig cfg;
  cfg.pis = parse_double_list(pi_arg, "--pi");
  cfg.sigma_ratios = parse_double_list(ratio_arg, "--sigma-ratio-grid");
  if (!delta_arg.empty()) {
    cfg.deltas = parse_double_list(delta_arg, "--delta-grid");
  }
  cfg.seeds = seeds;
  cfg.n = n;
  if (!(dbar > 0.0)) throw cap::ConfigError("--dbar must be positive");
  cfg.dim = static_cast<int>(std::lround(dbar * n));
  cfg.mu_norm = mu_norm;
  cfg.threads = common.threads;
  cfg.seed = seed;
  cfg.validate();
  if (common.validate_only) {
    std::cout << "config ok\n";
    return 0;
  }

  const auto rows = cap::delta_sweep(cfg);
  cap::atomic_write(out_path, cap::sweep_to_csv(rows));
  json config{{"pi", pi_arg},        {"sigma_ratio_grid", ratio_arg},
              {"dbar", dbar},        {"n", n},
              {"delta_grid", delta_arg}, {"seeds", seeds},
              {"mu_norm", mu_norm}};
  write_manifest(out_path, "gmm-sweep", config, seed, {out_path});
  int optima = 0;
  for (const auto& r : rows) optima += r.is_optimal ? 1 : 0;
  std::cout << "gmm-sweep: " << rows.size() << " rows, " << optima
            << " optima\n";
  return 0;
}

int run_synth(const std::string& config_arg, const std::string& out_path,
              const std::string& noise_out, const std::string& split_out,
              const CommonOpts& common) {
  const json config_json = load_json_arg(config_arg, "synth config");
  const SynthRun run = synth_run_from_json(config_json);
  if (common.validate_only) {
    std::cout << "config ok\n";
    return 0;
  }
  const SynthData made = materialize_synth(run);
  std::vector<std::string> outputs{out_path};
  cap::atomic_write(out_path, cap::dataset_to_csv(made.data));
  if (!noise_out.empty()) {
    if (!run.noise) {
      throw cap::ConfigError("--noise-out given but config has no noise block");
    }
    cap::atomic_write(noise_out, cap::noise_to_csv(made.flips));
    outputs.push_back(noise_out);
  }
  if (!split_out.empty()) {
    if (!made.split) {
      throw cap::ConfigError("--split-out given but config has no val_fraction");
    }
    std::string text = "index,role\n";
    std::vector<std::pair<int, const char*>> roles;
    for (int i : made.split->train_idx) roles.emplace_back(i, "train");
    for (int i : made.split->val_idx) roles.emplace_back(i, "val");
    std::sort(roles.begin(), roles.end());
    for (const auto& [idx, role] : roles) {
      text += std::to_string(idx) + "," + role + "\n";
    }
    cap::atomic_write(split_out, text);
    outputs.push_back(split_out);
  }
  write_manifest(out_path, "synth", config_json, run.lt.seed, outputs);
  std::cout << "synth: " << made.data.n() << " samples, " << made.flips.size()
            << " flips\n";
  return 0;
}

int run_eval(const std::string& logits_path, const std::string& objective_arg,
             const std::string& out_path, const CommonOpts& common) {
  const cap::LogitMatrix logits =
      cap::logits_from_csv(cap::read_file(logits_path));
  if (!logits.labels) {
    throw cap::ConfigError("eval needs labeled logits");
  }
  std::optional<cap::ObjectiveSpec> objective;
  json obj_json;
  if (!objective_arg.empty()) {
    obj_json = load_json_arg(objective_arg, "objective");
    objective = cap::objective_from_json(obj_json);
  }
  if (common.validate_only) {
    std::cout << "config ok\n";
    return 0;
  }
  const auto preds = cap::predict_argmax(logits.values);
  const auto errs =
      cap::class_conditional_errors(preds, *logits.labels, logits.k());
  const double plain = cap::plain_error(preds, *logits.labels);
  const json out = metrics_json(errs, plain, objective);
  cap::atomic_write(out_path, out.dump(2) + "\n");
  json config{{"logits", logits_path}, {"objective", obj_json}};
  write_manifest(out_path, "eval", config, 0, {out_path});
  std::cout << "eval: balanced " << out["balanced"].get<double>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class-attribute strategy tooling"};
  app.set_version_flag("--version", std::string("cap ") + kVersion);
  app.require_subcommand(1);
  CommonOpts common;
  app.add_option("--threads", common.threads, "worker threads (default 1)");
  app.add_flag("--validate-config", common.validate_only,
               "parse and validate inputs, then exit");

  std::string logits_path, attrs_path, objective_arg, mode_str = "l";
  int steps = 500;
  double lr = 0.05;
  std::uint64_t seed = 0;
  std::string basis_arg, out_path;
  auto* posthoc = app.add_subcommand("posthoc", "fit post-hoc adjustments");
  posthoc->add_option("--logits", logits_path, "validation logits csv")
      ->required();
  posthoc->add_option("--attrs", attrs_path, "attribute table csv")->required();
  posthoc->add_option("--objective", objective_arg, "objective json or path")
      ->required();
  posthoc->add_option("--mode", mode_str, "l, delta or both");
  posthoc->add_option("--steps", steps, "gradient steps (default 500)");
  posthoc->add_option("--lr", lr, "learning rate (default 0.05)");
  posthoc->add_option("--seed", seed, "seed recorded in the manifest");
  posthoc->add_option("--basis", basis_arg, "basis json or path");
  posthoc->add_option("--out", out_path, "output json")->required();

  std::string bl_data, bl_attrs = "freq", bl_objective, bl_config, bl_test,
              bl_out;
  std::uint64_t bl_seed = 0;
  auto* bilevel = app.add_subcommand("bilevel", "bilevel strategy search");
  bilevel->add_option("--data", bl_data, "dataset csv or synth config json")
      ->required();
  bilevel->add_option("--attrs", bl_attrs,
                      "attribute recipe: freq, diff, freq+diff, identity");
  bilevel->add_option("--objective", bl_objective, "objective json or path")
      ->required();
  bilevel->add_option("--config", bl_config, "bilevel config json or path");
  bilevel->add_option("--seed", bl_seed, "run seed");
  bilevel->add_option("--test", bl_test, "test dataset csv");
  bilevel->add_option("--out", bl_out, "output json")->required();

  std::string sw_pi = "0.1", sw_ratio = "1.0", sw_delta, sw_out;
  double sw_dbar = 2.0, sw_mu = 2.0;
  int sw_n = 100, sw_seeds = 10;
  std::uint64_t sw_seed = 0;
  auto* sweep = app.add_subcommand("gmm-sweep", "margin-ratio sweep study");
  sweep->add_option("--pi", sw_pi, "comma list of minority probabilities");
  sweep->add_option("--sigma-ratio-grid", sw_ratio, "comma list of ratios");
  sweep->add_option("--dbar", sw_dbar, "dimension / sample-size ratio");
  sweep->add_option("--n", sw_n, "training sample size");
  sweep->add_option("--delta-grid", sw_delta,
                    "comma list (default 30 log-spaced in [0.5, 8])");
  sweep->add_option("--seeds", sw_seeds, "seeds per cell (default 10)");
  sweep->add_option("--mu-norm", sw_mu, "mean vector norm (default 2)");
  sweep->add_option("--seed", sw_seed, "base seed");
  sweep->add_option("--out", sw_out, "output csv")->required();

  std::string sy_config, sy_out, sy_noise_out, sy_split_out;
  auto* synth = app.add_subcommand("synth", "generate long-tail data");
  synth->add_option("--config", sy_config, "synth config json or path")
      ->required();
  synth->add_option("--out", sy_out, "dataset csv")->required();
  synth->add_option("--noise-out", sy_noise_out, "noise record csv");
  synth->add_option("--split-out", sy_split_out, "split assignment csv");

  std::string ev_logits, ev_objective, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate metrics on logits");
  eval_cmd->add_option("--logits", ev_logits, "labeled logits csv")->required();
  eval_cmd->add_option("--objective", ev_objective, "objective json or path");
  eval_cmd->add_option("--out", ev_out, "output json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (posthoc->parsed()) {
      return run_posthoc(logits_path, attrs_path, objective_arg, mode_str,
                         steps, lr, seed, basis_arg, out_path, common);
    }
    if (bilevel->parsed()) {
      return run_bilevel(bl_data, bl_attrs, bl_objective, bl_config, bl_seed,
                         bl_test, bl_out, common);
    }
    if (sweep->parsed()) {
      return run_gmm_sweep(sw_pi, sw_ratio, sw_dbar, sw_n, sw_delta, sw_seeds,
                           sw_mu, sw_seed, sw_out, common);
    }
    if (synth->parsed()) {
      return run_synth(sy_config, sy_out, sy_noise_out, sy_split_out, common);
    }
    if (eval_cmd->parsed()) {
      return run_eval(ev_logits, ev_objective, ev_out, common);
    }
  } catch (const cap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cap::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const cap::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const cap::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
