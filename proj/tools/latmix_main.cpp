// latmix command-line interface: generate -> train -> evaluate -> predict.
//
// All randomness flows from explicit --seed flags; reruns with identical
// inputs produce byte-identical artifacts. Flag precedence is
// CLI flag > config file > built-in default.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latmix/latmix.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(std::stoi(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<latmix::LearningRound> parse_rounds(const std::string& text) {
  std::vector<latmix::LearningRound> rounds;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(start, comma - start);
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) {
      throw latmix::ConfigError("--rounds items must look like EPOCHS:LR");
    }
    latmix::LearningRound round;
    round.epochs = std::stoi(item.substr(0, colon));
    round.learning_rate = std::stod(item.substr(colon + 1));
    rounds.push_back(round);
    start = comma + 1;
  }
  return rounds;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(start, comma - start);
    if (!item.empty()) out.push_back(std::stod(item));
    start = comma + 1;
  }
  return out;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw latmix::IngestError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw latmix::FormatError(path + ": " + e.what());
  }
  return j;
}

void apply_config_file(const json& j, latmix::ModelConfig* model,
                       latmix::TrainConfig* train) {
  try {
    if (j.contains("model")) {
      const json& m = j.at("model");
      if (m.contains("hidden_sizes")) {
        model->hidden_sizes = m.at("hidden_sizes").get<std::vector<int>>();
      }
      if (m.contains("num_centers")) model->num_centers = m.at("num_centers").get<int>();
      if (m.contains("head")) {
        model->head = latmix::head_kind_from_string(m.at("head").get<std::string>());
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      if (t.contains("rounds")) {
        train->rounds.clear();
        for (const auto& rj : t.at("rounds")) {
          train->rounds.push_back(
              {rj.at("epochs").get<int>(), rj.at("lr").get<double>()});
        }
      }
      if (t.contains("batch_fraction")) {
        train->batch_fraction = t.at("batch_fraction").get<double>();
      }
      if (t.contains("noise_std_ms")) {
        train->noise_std_ms = t.at("noise_std_ms").get<double>();
      }
      if (t.contains("noise_mode")) {
        train->noise_mode =
            latmix::noise_mode_from_string(t.at("noise_mode").get<std::string>());
      }
      if (t.contains("ensemble_size")) {
        train->ensemble_size = t.at("ensemble_size").get<int>();
      }
      if (t.contains("seed")) train->seed = t.at("seed").get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw latmix::FormatError(std::string("config file: ") + e.what());
  }
}

std::string member_model_path(const std::string& dir, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "model_%02d.json", i);
  return dir + "/" + buf;
}

std::string member_trace_path(const std::string& dir, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "trace_%02d.csv", i);
  return dir + "/" + buf;
}

// --------------------------------------------------------------------------
// generate
// --------------------------------------------------------------------------

int cmd_generate(const std::string& spec_path, const std::string& preset,
                 std::size_t count, std::optional<std::uint64_t> seed,
                 const std::string& out_dir) {
  latmix::SyntheticSpec spec;
  if (!spec_path.empty()) {
    spec = latmix::load_synthetic_spec(spec_path);
  } else if (preset == "heavy-tail") {
    spec = latmix::make_heavy_tail_spec(count, seed.value_or(1));
  } else if (preset == "mcs-sweep") {
    spec = latmix::make_mcs_sweep_spec(count, seed.value_or(1));
  } else if (preset == "packet-length-sweep") {
    spec = latmix::make_packet_length_sweep_spec(count, seed.value_or(1));
  } else {
    throw latmix::ConfigError("generate: pass --spec FILE or --preset NAME");
  }
  if (seed) spec.seed = *seed;

  fs::create_directories(out_dir);
  const latmix::Dataset ds = latmix::generate_synthetic(spec);
  latmix::write_csv(ds, out_dir + "/dataset.csv");
  {
    std::ofstream out(out_dir + "/ground_truth.json", std::ios::binary);
    if (!out) throw latmix::IngestError("cannot write ground_truth.json");
    out << latmix::synthetic_spec_to_json(spec).dump(2) << '\n';
  }
  std::cout << "wrote " << ds.size() << " samples over " << spec.grid.size()
            << " grid point(s) to " << out_dir << "/dataset.csv\n";
  return 0;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& out_dir,
              const latmix::ModelConfig& model_config,
              const latmix::TrainConfig& train_config, double train_fraction,
              int jobs) {
  latmix::Dataset ds = latmix::load_csv(data_path);
  if (ds.size() == 0) throw latmix::IngestError(data_path + ": no samples");
  fs::create_directories(out_dir);

  if (train_fraction < 1.0) {
    auto [train_part, holdout] =
        latmix::split(ds, train_fraction, latmix::mix_seed(train_config.seed, 0x5D117));
    latmix::write_csv(holdout, out_dir + "/holdout.csv");
    ds = std::move(train_part);
    std::cout << "training on " << ds.size() << " samples, holdout "
              << holdout.size() << " -> holdout.csv\n";
  }

  const latmix::EnsembleResult ensemble =
      latmix::train_ensemble(ds, model_config, train_config, jobs);

  for (int i = 0; i < train_config.ensemble_size; ++i) {
    const latmix::TrainResult& member = ensemble.members[i];
    if (member.aborted) {
      const std::string checkpoint =
          out_dir + "/model_" + (i < 10 ? "0" : "") + std::to_string(i) +
          ".checkpoint.json";
      latmix::save_model(member.model, checkpoint);
      std::cerr << "member " << i << " aborted: " << member.abort_reason
                << " (checkpoint: " << checkpoint << ")\n";
    } else {
      latmix::save_model(member.model, member_model_path(out_dir, i));
    }
    latmix::write_trace_csv(member.trace, member_trace_path(out_dir, i));
  }

  if (!ensemble.all_ok()) {
    std::cerr << "training failed for member(s):";
    for (std::size_t i : ensemble.failed_members()) std::cerr << ' ' << i;
    std::cerr << '\n';
    return 1;
  }
  std::cout << "trained " << train_config.ensemble_size << " model(s) ("
            << latmix::to_string(model_config.head) << ", "
            << train_config.total_epochs() << " epochs each) into " << out_dir
            << '\n';
  return 0;
}

// --------------------------------------------------------------------------
// evaluate
// --------------------------------------------------------------------------

std::vector<std::string> collect_model_paths(const std::vector<std::string>& inputs) {
  std::vector<std::string> paths;
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(input)) {
        const std::string name = entry.path().filename().string();
        if (name.starts_with("model_") && name.ends_with(".json") &&
            !name.ends_with(".checkpoint.json")) {
          found.push_back(entry.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.push_back(input);
    }
  }
  if (paths.empty()) throw latmix::ConfigError("evaluate: no model files found");
  return paths;
}

int cmd_evaluate(const std::vector<std::string>& model_inputs,
                 const std::string& data_path, const std::string& truth_path,
                 const std::string& out_dir, const std::vector<double>& levels,
                 std::size_t grid_points, double grid_floor) {
  if (data_path.empty() == truth_path.empty()) {
    throw latmix::ConfigError("evaluate: pass exactly one of --data or --truth");
  }
  const std::vector<std::string> model_paths = collect_model_paths(model_inputs);
  std::vector<latmix::ModelWeights> models;
  models.reserve(model_paths.size());
  for (const auto& path : model_paths) models.push_back(latmix::load_model(path));

  latmix::EvaluationReport report;
  for (const auto& m : models) report.seeds.push_back(m.seed);
  report.config_echo = {{"models", model_paths},
                        {"levels", levels},
                        {"grid_points", grid_points},
                        {"grid_floor", grid_floor},
                        {"data", data_path},
                        {"truth", truth_path}};

  const std::vector<double> grid_levels =
      latmix::ccdf_levels(0.5, grid_floor, grid_points);

  auto evaluate_condition = [&](const std::vector<double>& condition,
                                const latmix::CcdfCurve& truth) {
    latmix::ConditionReport cond;
    cond.condition = condition;
    cond.truth = truth;
    for (std::size_t m = 0; m < models.size(); ++m) {
      char label[32];
      std::snprintf(label, sizeof(label), "model_%02zu", m);
      cond.model_curves.push_back(
          latmix::predict_ccdf(models[m], condition, truth.grid_ms, label));
    }
    cond.band = latmix::ensemble_bands(cond.model_curves);
    cond.metrics = latmix::tail_error(cond.band.avg, cond.truth, levels);
    report.conditions.push_back(std::move(cond));
  };

  if (!truth_path.empty()) {
    const latmix::SyntheticSpec spec = latmix::load_synthetic_spec(truth_path);
    report.condition_names = spec.condition_names;
    for (const auto& point : spec.grid) {
      const std::vector<double> grid =
          latmix::grid_from_analytic_truth(point.theta, grid_levels);
      latmix::CcdfCurve truth;
      truth.label = "truth";
      truth.condition = point.condition;
      truth.grid_ms = grid;
      for (double g : grid) {
        truth.probs.push_back(latmix::spliced_ccdf(g, point.theta));
      }
      evaluate_condition(point.condition, truth);
    }
  } else {
    const latmix::Dataset ds = latmix::load_csv(data_path);
    if (ds.size() == 0) throw latmix::IngestError(data_path + ": no samples");
    report.condition_names = ds.condition_names;
    std::map<std::vector<double>, std::vector<double>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto row = ds.condition_row(i);
      groups[std::vector<double>(row.begin(), row.end())].push_back(ds.latency_ms[i]);
    }
    if (groups.size() > 64) {
      throw latmix::ConfigError(
          "evaluate: " + std::to_string(groups.size()) +
          " distinct condition vectors; group or filter the data first");
    }
    for (const auto& [condition, samples] : groups) {
      const std::vector<double> grid =
          latmix::grid_from_samples(samples, grid_levels);
      latmix::CcdfCurve truth = latmix::empirical_ccdf(samples, grid, "empirical");
      truth.condition = condition;
      evaluate_condition(condition, truth);
    }
  }

  latmix::emit_report(report, out_dir);
  // Validate what we just wrote before declaring success.
  const latmix::EvaluationReport back = latmix::read_report(out_dir);
  for (const auto& cond : back.conditions) {
    cond.truth.validate();
    for (const auto& curve : cond.model_curves) curve.validate();
  }
  std::cout << "evaluated " << models.size() << " model(s) over "
            << report.conditions.size() << " condition(s) -> " << out_dir
            << "/report.json\n";
  return 0;
}

// --------------------------------------------------------------------------
// predict
// --------------------------------------------------------------------------

int cmd_predict(const std::string& model_path,
                const std::vector<std::string>& condition_args,
                std::optional<double> y_ms, std::optional<double> level) {
  if (y_ms.has_value() == level.has_value()) {
    throw latmix::ConfigError("predict: pass exactly one of --y or --level");
  }
  const latmix::ModelWeights model = latmix::load_model(model_path);

  std::map<std::string, double> given;
  for (const auto& arg : condition_args) {
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos) {
      throw latmix::ConfigError("predict: --condition expects NAME=VALUE, got '" +
                                arg + "'");
    }
    given[arg.substr(0, eq)] = std::stod(arg.substr(eq + 1));
  }
  const auto& names = model.normalization.condition_names;
  std::vector<double> condition;
  condition.reserve(names.size());
  for (const auto& name : names) {
    auto it = given.find(name);
    if (it == given.end()) {
      throw latmix::ConfigError("predict: missing --condition " + name + "=...");
    }
    condition.push_back(it->second);
    given.erase(it);
  }
  if (!given.empty()) {
    throw latmix::ConfigError("predict: condition '" + given.begin()->first +
                              "' is not in the model schema");
  }

  double value;
  if (y_ms) {
    const Eigen::VectorXd x = model.normalization.normalize_conditions(condition);
    const latmix::SplicedMixtureParams theta = latmix::forward(
        std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), model);
    value = latmix::spliced_ccdf(model.normalization.to_normalized_latency(*y_ms),
                                 theta);
  } else {
    if (!(*level > 0.0 && *level < 1.0)) {
      throw latmix::ConfigError("predict: --level must lie in (0,1)");
    }
    value = latmix::predict_quantile(model, condition, *level);
  }
  std::cout << latmix::detail::format_double(value) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional latency density estimation with spliced mixture heads"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Draw a synthetic dataset with known ground truth");
  std::string gen_spec, gen_preset, gen_out;
  std::size_t gen_count = 100000;
  std::uint64_t gen_seed = 1;
  generate->add_option("--spec", gen_spec, "Synthetic spec JSON");
  generate->add_option("--preset", gen_preset,
                       "Built-in spec: heavy-tail|mcs-sweep|packet-length-sweep");
  generate->add_option("--count", gen_count, "Samples per grid point (presets)");
  auto* gen_seed_opt = generate->add_option("--seed", gen_seed, "Generator seed");
  generate->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train an ensemble of models");
  std::string train_data, train_out, train_config_path, train_head, train_hidden,
      train_rounds, train_noise_mode;
  std::uint64_t train_seed = 1;
  double train_noise = 0.0, train_fraction = 1.0, train_batch_fraction = 0.125;
  int train_ensemble = 10, train_jobs = 1, train_centers = 15;
  train->add_option("--data", train_data, "Training CSV")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--config", train_config_path, "JSON config file");
  auto* opt_seed = train->add_option("--seed", train_seed, "Run seed");
  auto* opt_head = train->add_option("--head", train_head, "gmm|gmevm");
  auto* opt_noise = train->add_option("--noise-std-ms", train_noise,
                                      "Std of Gaussian noise added to training latencies");
  auto* opt_noise_mode =
      train->add_option("--noise-mode", train_noise_mode, "per-dataset|per-epoch");
  auto* opt_ensemble = train->add_option("--ensemble", train_ensemble, "Ensemble size");
  train->add_option("--train-fraction", train_fraction,
                    "Train on this fraction; remainder written to holdout.csv");
  train->add_option("--jobs", train_jobs, "Concurrent ensemble members");
  auto* opt_hidden = train->add_option("--hidden", train_hidden,
                                       "Hidden layer sizes, e.g. 10,100,100,80");
  auto* opt_centers = train->add_option("--centers", train_centers, "Mixture centers");
  auto* opt_rounds = train->add_option(
      "--rounds", train_rounds, "Schedule, e.g. 200:1e-2,200:1e-3,200:1e-4,200:1e-5");
  auto* opt_batch_fraction =
      train->add_option("--batch-fraction", train_batch_fraction, "Batch fraction");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compare model tails against truth");
  std::vector<std::string> eval_models;
  std::string eval_data, eval_truth, eval_out, eval_levels = "1e-2,1e-3,1e-4,1e-5";
  std::size_t eval_grid_points = 60;
  double eval_grid_floor = 1e-6;
  evaluate->add_option("--models", eval_models, "Model files or a directory")
      ->required()
      ->expected(-1);
  evaluate->add_option("--data", eval_data, "Empirical test CSV");
  evaluate->add_option("--truth", eval_truth, "Analytic ground-truth JSON");
  evaluate->add_option("--out", eval_out, "Output directory")->required();
  evaluate->add_option("--levels", eval_levels, "Tail-error levels");
  evaluate->add_option("--grid-points", eval_grid_points, "Evaluation grid size");
  evaluate->add_option("--grid-floor", eval_grid_floor, "Lowest grid ccdf level");

  // predict
  auto* predict = app.add_subcommand("predict", "Query one model");
  std::string pred_model;
  std::vector<std::string> pred_conditions;
  double pred_y = 0.0, pred_level = 0.0;
  predict->add_option("--model", pred_model, "Model file")->required();
  predict->add_option("--condition", pred_conditions, "NAME=VALUE (repeatable)");
  auto* opt_y = predict->add_option("--y", pred_y, "Print P[Y > y | x] for y in ms");
  auto* opt_level =
      predict->add_option("--level", pred_level, "Print the latency quantile at this reliability level");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      std::optional<std::uint64_t> seed;
      if (gen_seed_opt->count() > 0) seed = gen_seed;
      return cmd_generate(gen_spec, gen_preset, gen_count, seed, gen_out);
    }
    if (train->parsed()) {
      latmix::ModelConfig model_config;
      latmix::TrainConfig train_config;
      if (!train_config_path.empty()) {
        apply_config_file(load_json_file(train_config_path), &model_config,
                          &train_config);
      }
      if (opt_seed->count() > 0) train_config.seed = train_seed;
      if (opt_head->count() > 0) {
        model_config.head = latmix::head_kind_from_string(train_head);
      }
      if (opt_noise->count() > 0) train_config.noise_std_ms = train_noise;
      if (opt_noise_mode->count() > 0) {
        train_config.noise_mode = latmix::noise_mode_from_string(train_noise_mode);
      }
      if (opt_ensemble->count() > 0) train_config.ensemble_size = train_ensemble;
      if (opt_hidden->count() > 0) {
        model_config.hidden_sizes = parse_int_list(train_hidden);
      }
      if (opt_centers->count() > 0) model_config.num_centers = train_centers;
      if (opt_rounds->count() > 0) train_config.rounds = parse_rounds(train_rounds);
      if (opt_batch_fraction->count() > 0) {
        train_config.batch_fraction = train_batch_fraction;
      }
      if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
        throw latmix::ConfigError("--train-fraction must lie in (0,1]");
      }
      model_config.validate();
      train_config.validate();
      return cmd_train(train_data, train_out, model_config, train_config,
                       train_fraction, train_jobs);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_models, eval_data, eval_truth, eval_out,
                          parse_double_list(eval_levels), eval_grid_points,
                          eval_grid_floor);
    }
    if (predict->parsed()) {
      std::optional<double> y, level;
      if (opt_y->count() > 0) y = pred_y;
      if (opt_level->count() > 0) level = pred_level;
      return cmd_predict(pred_model, pred_conditions, y, level);
    }
  } catch (const std::exception& e) {
    std::cerr << "latmix: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
