// Command-line surface for the beach-profile prediction pipeline:
//   generate     synthetic survey + datum CSVs
//   train        ingest -> split -> fit one model, checkpoint the best epoch
//   evaluate     compare trained checkpoints on the test split
//   predict-ood  predict the unobserved MLWN->MLWS segment for one site
//
// Exit codes: 0 success, 2 input/config error, 3 training divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "topoformer/checkpoint.hpp"
#include "topoformer/dataset.hpp"
#include "topoformer/metrics.hpp"
#include "topoformer/models.hpp"
#include "topoformer/pipeline.hpp"
#include "topoformer/synthetic.hpp"
#include "topoformer/train.hpp"

namespace tf = topoformer;
using nlohmann::json;

namespace {

json default_run_config() {
  return json{
      {"seed", 42},
      {"data.dir", ""},
      {"out.dir", ""},
      {"model.variant", "topoformer"},
      {"model.d_model", 64},
      {"model.num_heads", 4},
      {"model.num_blocks", 6},
      {"model.convlstm_layers_per_block", 4},
      {"model.hidden_channels", 16},
      {"model.kernel", 3},
      {"model.mlp_hidden_1", 76},
      {"model.mlp_hidden_2", 128},
      {"model.lstm_hidden", 256},
      {"model.bilstm_hidden", 128},
      {"model.convlstm_hidden", 96},
      {"model.convlstm_cells", 4},
      {"model.convlstm_embed", 64},
      {"model.cnn_channels_1", 32},
      {"model.cnn_channels_2", 64},
      {"model.cnn_kernel", 5},
      {"model.cnn_dense", 128},
      {"train.batch_size", 32},
      {"train.max_epochs", 200},
      {"train.patience", 20},
      {"train.min_delta", 1e-6},
      {"train.learning_rate", 1e-3},
      {"split.site_stratified", false},
      {"generate.sites", 3},
      {"generate.profiles_per_site", 10},
      {"generate.noise_std", 0.01},
      {"generate.truncate_fraction", 0.0},
  };
}

/// Config file (flat dotted keys) merged over defaults; unknown keys are an
/// error so typos do not silently vanish.
json load_config_file(const std::string& path) {
  json merged = default_run_config();
  if (path.empty()) return merged;
  std::ifstream in(path);
  if (!in) throw tf::IoError("cannot open config file: " + path);
  json file;
  try {
    in >> file;
  } catch (const json::exception& e) {
    throw tf::ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  for (auto it = file.begin(); it != file.end(); ++it) {
    if (!merged.contains(it.key())) {
      throw tf::ConfigError("config file " + path + ": unknown key '" + it.key() + "'");
    }
    merged[it.key()] = it.value();
  }
  return merged;
}

void apply_set_overrides(json& config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw tf::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (!config.contains(key)) throw tf::ConfigError("--set: unknown key '" + key + "'");
    try {
      config[key] = json::parse(value);
    } catch (const json::exception&) {
      config[key] = value;  // plain string
    }
  }
}

void write_config_echo(const json& config, const std::string& out_dir) {
  auto out = tf::open_out(out_dir + "/config_echo.json");
  out << config.dump(2) << "\n";
}

tf::TopoFormerConfig topoformer_config_from(const json& c) {
  tf::TopoFormerConfig t;
  t.d_model = c.at("model.d_model").get<std::size_t>();
  t.num_heads = c.at("model.num_heads").get<std::size_t>();
  t.num_blocks = c.at("model.num_blocks").get<std::size_t>();
  t.convlstm_layers_per_block = c.at("model.convlstm_layers_per_block").get<std::size_t>();
  t.hidden_channels = c.at("model.hidden_channels").get<std::size_t>();
  t.kernel = c.at("model.kernel").get<std::size_t>();
  t.mlp_hidden_1 = c.at("model.mlp_hidden_1").get<std::size_t>();
  t.mlp_hidden_2 = c.at("model.mlp_hidden_2").get<std::size_t>();
  return t;
}

tf::BaselineConfig baseline_config_from(const json& c) {
  tf::BaselineConfig b;
  b.lstm_hidden = c.at("model.lstm_hidden").get<std::size_t>();
  b.bilstm_hidden = c.at("model.bilstm_hidden").get<std::size_t>();
  b.convlstm_hidden = c.at("model.convlstm_hidden").get<std::size_t>();
  b.convlstm_cells = c.at("model.convlstm_cells").get<std::size_t>();
  b.convlstm_embed = c.at("model.convlstm_embed").get<std::size_t>();
  b.cnn_channels_1 = c.at("model.cnn_channels_1").get<std::size_t>();
  b.cnn_channels_2 = c.at("model.cnn_channels_2").get<std::size_t>();
  b.cnn_kernel = c.at("model.cnn_kernel").get<std::size_t>();
  b.cnn_dense = c.at("model.cnn_dense").get<std::size_t>();
  return b;
}

std::unique_ptr<tf::Model> build_from_config(const json& config, std::uint64_t init_seed) {
  const tf::Variant variant =
      tf::variant_from_string(config.at("model.variant").get<std::string>());
  if (variant == tf::Variant::topoformer) {
    return tf::build_topoformer(topoformer_config_from(config), init_seed);
  }
  return tf::build_baseline(variant, baseline_config_from(config), init_seed);
}

std::string require_dir(const json& config, const std::string& key, const char* flag) {
  const std::string dir = config.at(key).get<std::string>();
  if (dir.empty()) {
    throw tf::ConfigError(std::string("missing ") + flag + " (or config key '" + key + "')");
  }
  return dir;
}

int cmd_generate(json config) {
  const std::string out_dir = require_dir(config, "out.dir", "--out");
  tf::GeneratorConfig gen;
  gen.sites = config.at("generate.sites").get<std::size_t>();
  gen.profiles_per_site = config.at("generate.profiles_per_site").get<std::size_t>();
  gen.seed = tf::derive_seed(config.at("seed").get<std::uint64_t>(), "generate");
  gen.noise_std = config.at("generate.noise_std").get<double>();
  gen.truncate_fraction = config.at("generate.truncate_fraction").get<double>();
  gen.validate();

  tf::SyntheticDataset data = tf::generate_synthetic(gen);
  std::filesystem::create_directories(out_dir);
  tf::write_synthetic_dataset(data, out_dir);
  write_config_echo(config, out_dir);

  std::size_t truncated = 0;
  for (bool t : data.truncated) truncated += t ? 1 : 0;
  std::cout << "generated " << data.profiles.size() << " profiles (" << truncated
            << " truncated at MLWN) across " << data.datums.size() << " sites into " << out_dir
            << "\n";
  return 0;
}

int cmd_train(json config) {
  const std::string data_dir = require_dir(config, "data.dir", "--data");
  const std::string out_dir = require_dir(config, "out.dir", "--out");
  std::filesystem::create_directories(out_dir);

  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  tf::LoadedData data = tf::load_data_dir(data_dir);
  std::vector<tf::Reject> rejects = data.rejects;
  tf::PreparedDataset prepared = tf::prepare_dataset(
      data, seed, config.at("split.site_stratified").get<bool>(), &rejects);

  const std::string variant = config.at("model.variant").get<std::string>();
  auto model = build_from_config(config, tf::derive_seed(seed, "init:" + variant));

  tf::TrainConfig train;
  train.batch_size = config.at("train.batch_size").get<std::size_t>();
  train.max_epochs = config.at("train.max_epochs").get<std::size_t>();
  train.patience = config.at("train.patience").get<std::size_t>();
  train.min_delta = config.at("train.min_delta").get<double>();
  train.learning_rate = config.at("train.learning_rate").get<double>();
  train.seed = seed;
  train.checkpoint_dir = out_dir;

  json extra;
  extra["normalization"] = prepared.norm.to_json();
  extra["split_seed"] = seed;
  extra["site_stratified"] = config.at("split.site_stratified").get<bool>();
  extra["run"] = config;

  tf::TrainingReport report = tf::fit(*model, prepared.split, train, extra);

  {
    auto out = tf::open_out(out_dir + "/report.csv");
    tf::write_training_report_csv(report, out);
  }
  {
    auto out = tf::open_out(out_dir + "/summary.json");
    out << tf::training_summary_json(report, train).dump(2) << "\n";
  }
  {
    auto out = tf::open_out(out_dir + "/rejects.csv");
    tf::write_rejects_csv(rejects, out);
  }
  write_config_echo(config, out_dir);

  std::cout << "trained " << variant << " for " << report.epochs.size() << " epochs (best epoch "
            << report.best_epoch << ", best val MAE " << tf::format_double(report.best_val_mae)
            << (report.stopped_early ? ", stopped early" : "") << ")\ncheckpoint: "
            << report.checkpoint_path << "\n";
  return 0;
}

int cmd_evaluate(json config, const std::vector<std::string>& checkpoint_paths) {
  const std::string data_dir = require_dir(config, "data.dir", "--data");
  const std::string out_dir = require_dir(config, "out.dir", "--out");
  if (checkpoint_paths.empty()) throw tf::ConfigError("evaluate: no checkpoints given");
  std::filesystem::create_directories(out_dir);

  std::vector<tf::Checkpoint> checkpoints;
  for (const auto& path : checkpoint_paths) checkpoints.push_back(tf::load_checkpoint(path));

  const json& first = checkpoints.front().manifest;
  for (const auto& c : checkpoints) {
    if (c.manifest.at("split_seed") != first.at("split_seed") ||
        c.manifest.at("normalization") != first.at("normalization") ||
        c.manifest.at("site_stratified") != first.at("site_stratified")) {
      throw tf::ConfigError("checkpoints disagree on split seed or normalization; they were not "
                            "trained on the same dataset");
    }
  }
  const std::uint64_t seed = first.at("split_seed").get<std::uint64_t>();
  const tf::Normalization norm = tf::Normalization::from_json(first.at("normalization"));

  tf::LoadedData data = tf::load_data_dir(data_dir);
  tf::PreparedDataset prepared =
      tf::prepare_dataset(data, seed, first.at("site_stratified").get<bool>(), nullptr);
  if (prepared.norm.to_json() != norm.to_json()) {
    throw tf::ConfigError("data directory + seed do not reproduce the checkpoint's "
                          "normalization statistics; wrong --data?");
  }

  std::vector<const tf::Model*> models;
  for (const auto& c : checkpoints) models.push_back(c.model.get());
  tf::EvaluationReport report = tf::evaluate_models(models, prepared.split.test, norm);

  {
    auto out = tf::open_out(out_dir + "/report.csv");
    tf::write_evaluation_report_csv(report, out);
  }
  {
    auto out = tf::open_out(out_dir + "/mape_values.csv");
    tf::write_mape_values_csv(report, prepared.split.test, out);
  }
  for (const auto& c : checkpoints) {
    auto preds = tf::predict_denormalized(*c.model, prepared.split.test, norm);
    auto out = tf::open_out(out_dir + "/predictions_" + c.model->name() + ".csv");
    tf::write_prediction_dump_csv(prepared.split.test, preds, norm, out);
  }
  write_config_echo(config, out_dir);

  std::cout << "evaluated " << report.rows.size() << " model(s) on " << report.test_profiles
            << " test profiles\n";
  for (const auto& r : report.rows) {
    std::cout << (r.best ? "* " : (r.second_best ? "- " : "  ")) << r.model << ": MAE "
              << tf::format_double(r.mae_m) << " m, RMSE " << tf::format_double(r.rmse_m)
              << " m, params " << r.params << "\n";
  }
  return 0;
}

int cmd_predict_ood(json config, const std::string& checkpoint_path, const std::string& site) {
  const std::string data_dir = require_dir(config, "data.dir", "--data");
  const std::string out_dir = require_dir(config, "out.dir", "--out");
  std::filesystem::create_directories(out_dir);

  tf::Checkpoint checkpoint = tf::load_checkpoint(checkpoint_path);
  const tf::Normalization norm =
      tf::Normalization::from_json(checkpoint.manifest.at("normalization"));

  tf::LoadedData data = tf::load_data_dir(data_dir);
  tf::OodInputs ood = tf::build_ood_inputs(data, site, norm);
  write_config_echo(config, out_dir);

  if (ood.examples.empty()) {
    auto out = tf::open_out(out_dir + "/ood_report.csv");
    tf::write_ood_report_csv(tf::OodReport{}, out);
    std::cerr << "warning: site " << site << " has no truncated profiles; nothing to predict\n";
    return 0;
  }

  std::vector<const tf::Model*> models{checkpoint.model.get()};
  tf::OodReport report =
      tf::evaluate_ood(models, ood.examples, ood.reference, norm, &data.truth);

  {
    auto out = tf::open_out(out_dir + "/ood_report.csv");
    tf::write_ood_report_csv(report, out);
  }
  {
    auto out =
        tf::open_out(out_dir + "/predictions_" + checkpoint.model->name() + "_ood.csv");
    tf::write_ood_dump_csv(report.rows, out);
  }

  std::cout << "predicted " << ood.examples.size() << " OOD profile(s) at site " << site
            << " against a reference of " << ood.reference.contributing_surveys
            << " survey(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Beach-profile prediction pipeline (hybrid transformer/ConvLSTM and baselines)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> set_overrides;
  app.add_option("--config", config_path, "JSON config file with flat dotted keys")
      ->envname("")
      ->expected(1);
  app.add_option("--set", set_overrides, "override a config key, e.g. --set train.patience=5");

  // generate
  auto* gen = app.add_subcommand("generate", "write synthetic profile and datum CSVs");
  gen->fallthrough();
  std::size_t gen_sites = 0, gen_profiles = 0;
  std::uint64_t seed = 0;
  double gen_noise = -1.0, gen_truncate = -1.0;
  std::string out_dir, data_dir;
  bool seed_set = false;
  gen->add_option("--sites", gen_sites, "number of survey sites");
  gen->add_option("--profiles-per-site", gen_profiles, "surveys per site");
  gen->add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; }, "root seed");
  gen->add_option("--noise", gen_noise, "observation noise std in meters");
  gen->add_option("--truncate-fraction", gen_truncate,
                  "per-site fraction of surveys truncated at MLWN");
  gen->add_option("--out", out_dir, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train one model and checkpoint the best epoch");
  train->fallthrough();
  std::string model_name;
  std::size_t epochs = 0, batch_size = 0, patience = 0;
  double lr = -1.0;
  bool train_seed_set = false;
  train->add_option("--model", model_name, "topoformer|lstm|bilstm|convlstm|cnn1d");
  train->add_option("--data", data_dir, "data directory (profiles.csv, datums.csv)");
  train->add_option("--out", out_dir, "output directory");
  train->add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { seed = s; train_seed_set = true; }, "root seed");
  train->add_option("--epochs", epochs, "max training epochs");
  train->add_option("--batch-size", batch_size, "mini-batch size");
  train->add_option("--patience", patience, "early-stopping patience in epochs");
  train->add_option("--lr", lr, "Adam learning rate");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "compare checkpoints on the test split");
  eval->fallthrough();
  std::vector<std::string> checkpoint_paths;
  eval->add_option("--checkpoints", checkpoint_paths, "checkpoint files")->expected(-1);
  eval->add_option("--data", data_dir, "data directory");
  eval->add_option("--out", out_dir, "output directory");

  // predict-ood
  auto* ood = app.add_subcommand("predict-ood", "predict MLWN->MLWS for truncated profiles");
  ood->fallthrough();
  std::string checkpoint_path, site;
  ood->add_option("--checkpoint", checkpoint_path, "checkpoint file");
  ood->add_option("--data", data_dir, "data directory");
  ood->add_option("--site", site, "site id");
  ood->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);

    json config = load_config_file(config_path);
    apply_set_overrides(config, set_overrides);
    if (!out_dir.empty()) config["out.dir"] = out_dir;
    if (!data_dir.empty()) config["data.dir"] = data_dir;

    if (gen->parsed()) {
      if (seed_set) config["seed"] = seed;
      if (gen_sites) config["generate.sites"] = gen_sites;
      if (gen_profiles) config["generate.profiles_per_site"] = gen_profiles;
      if (gen_noise >= 0.0) config["generate.noise_std"] = gen_noise;
      if (gen_truncate >= 0.0) config["generate.truncate_fraction"] = gen_truncate;
      return cmd_generate(std::move(config));
    }
    if (train->parsed()) {
      if (train_seed_set) config["seed"] = seed;
      if (!model_name.empty()) config["model.variant"] = model_name;
      if (epochs) config["train.max_epochs"] = epochs;
      if (batch_size) config["train.batch_size"] = batch_size;
      if (patience) config["train.patience"] = patience;
      if (lr > 0.0) config["train.learning_rate"] = lr;
      return cmd_train(std::move(config));
    }
    if (eval->parsed()) {
      return cmd_evaluate(std::move(config), checkpoint_paths);
    }
    if (ood->parsed()) {
      if (checkpoint_path.empty()) throw tf::ConfigError("predict-ood: --checkpoint is required");
      if (site.empty()) throw tf::ConfigError("predict-ood: --site is required");
      return cmd_predict_ood(std::move(config), checkpoint_path, site);
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const tf::DivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const tf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
