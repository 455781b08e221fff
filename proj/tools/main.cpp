// Command-line front end over the C API: dataset generation, self-training,
// evaluation, rejection curves and calibration sweeps.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqpl/seqpl.h"

using nlohmann::json;

namespace {

// --config accepts inline JSON or @path-to-file.
json base_config(const std::string& arg) {
  if (arg.empty()) return json::object();
  std::string text = arg;
  if (arg[0] == '@') {
    std::ifstream f(arg.substr(1));
    if (!f) throw std::runtime_error("cannot open config file " + arg.substr(1));
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::runtime_error("--config must be a JSON object (inline or @file)");
  return j;
}

// Flags override --config; SEQPL_SEED overrides a config seed but not an
// explicit --seed flag.
void apply_env_seed(json& cfg, bool seed_flag_given) {
  if (seed_flag_given) return;
  const char* env = std::getenv("SEQPL_SEED");
  if (!env || !*env) return;
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing junk");
    cfg["seed"] = v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("SEQPL_SEED is not an integer: ") + env);
  }
}

int finish(seqpl_status_t status, char* result) {
  if (status != SEQPL_OK) {
    std::cerr << "error: " << seqpl_last_error() << "\n";
    seqpl_string_free(result);
    return 1;
  }
  if (result && *result) std::cout << result << "\n";
  seqpl_string_free(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence recognition with uncertainty-aware pseudo-label selection"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --config appear after the subcommand name
  app.set_version_flag("--version", seqpl_version());

  std::string config_arg;
  app.add_option("--config", config_arg, "JSON config object, inline or @file")
      ->configurable(false);

  // shared knobs; each subcommand registers the ones it honors
  std::string out_dir, data_arg, run_dir, checkpoint, scores_file, measure = "both";
  uint64_t seed = 0;
  double tau = 0, temperature = 0, dropout = 0, label_fraction = 0, sigma = 0;
  int rounds = 0, beam_width = 0, ensembles = 0, iterations = 0, batch_size = 0, hidden = 0;
  int n = 0, n_val = 0, num_symbols = 0, bins = 0, s_max = 0;
  bool svg = false;
  std::vector<double> p_grid, subset_fractions;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "generation seed");
  gen->add_option("--n", n, "pool size");
  gen->add_option("--n-val", n_val, "validation set size");
  gen->add_option("--label-fraction", label_fraction, "labeled fraction of the pool");
  gen->add_option("--num-symbols", num_symbols, "alphabet size");
  gen->add_option("--sigma", sigma, "frame noise level");
  gen->add_option("--s-max", s_max, "decode length budget");

  auto* st = app.add_subcommand("self-train", "run pseudo-label self-training");
  st->add_option("--data", data_arg, "dataset directory from gen-data")->required();
  st->add_option("--run", run_dir, "run output directory")->required();
  st->add_option("--tau", tau, "selection threshold");
  st->add_option("--rounds", rounds, "self-training rounds");
  st->add_option("--beam-width", beam_width, "beam width");
  st->add_option("--ensembles", ensembles, "dropout ensemble size");
  st->add_option("--temperature", temperature, "hypothesis weight temperature");
  st->add_option("--dropout", dropout, "inference dropout probability");
  st->add_option("--hidden", hidden, "encoder/decoder width");
  st->add_option("--iterations", iterations, "training iterations per round");
  st->add_option("--batch-size", batch_size, "training batch size");
  st->add_option("--seed", seed, "run seed");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_arg, "dataset file (JSONL)")->required();
  ev->add_option("--beam-width", beam_width, "beam width");

  auto* rj = app.add_subcommand("rejection", "rejection curves and PRR for a checkpoint");
  rj->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  rj->add_option("--data", data_arg, "dataset file (JSONL)")->required();
  rj->add_option("--out", out_dir, "output directory")->required();
  rj->add_option("--measure", measure, "uncertainty | confidence | both");
  rj->add_option("--beam-width", beam_width, "beam width");
  rj->add_option("--ensembles", ensembles, "dropout ensemble size");
  rj->add_option("--temperature", temperature, "hypothesis weight temperature");
  rj->add_option("--dropout", dropout, "inference dropout probability");
  rj->add_option("--seed", seed, "ensemble seed");
  rj->add_option("--scores-file", scores_file, "JSONL {id,score} overriding computed scores");
  rj->add_flag("--svg", svg, "also render the curves as SVG");

  auto* cal = app.add_subcommand("calibrate", "ECE sweep over inference dropout");
  cal->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cal->add_option("--data", data_arg, "dataset file (JSONL)")->required();
  cal->add_option("--out", out_dir, "output directory")->required();
  cal->add_option("--p-grid", p_grid, "dropout probabilities")->delimiter(',');
  cal->add_option("--subset-fractions", subset_fractions, "lowest-uncertainty subset sizes")
      ->delimiter(',');
  cal->add_option("--ensembles", ensembles, "dropout ensemble size");
  cal->add_option("--beam-width", beam_width, "beam width");
  cal->add_option("--bins", bins, "calibration bins");
  cal->add_option("--temperature", temperature, "hypothesis weight temperature");
  cal->add_option("--seed", seed, "ensemble seed");

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = base_config(config_arg);
    auto touched = [&](const CLI::App* sub, const char* flag) {
      return sub->count(flag) > 0;
    };
    char* result = nullptr;

    if (gen->parsed()) {
      if (touched(gen, "--seed")) cfg["seed"] = seed;
      if (touched(gen, "--n")) cfg["n"] = n;
      if (touched(gen, "--n-val")) cfg["n_val"] = n_val;
      if (touched(gen, "--label-fraction")) cfg["label_fraction"] = label_fraction;
      if (touched(gen, "--num-symbols")) cfg["num_symbols"] = num_symbols;
      if (touched(gen, "--sigma")) cfg["sigma"] = sigma;
      if (touched(gen, "--s-max")) cfg["s_max"] = s_max;
      apply_env_seed(cfg, touched(gen, "--seed"));
      const seqpl_status_t s = seqpl_gen_data(cfg.dump().c_str(), out_dir.c_str(), &result);
      return finish(s, result);
    }
    if (st->parsed()) {
      if (touched(st, "--tau")) cfg["tau"] = tau;
      if (touched(st, "--rounds")) cfg["rounds"] = rounds;
      if (touched(st, "--beam-width")) cfg["beam_width"] = beam_width;
      if (touched(st, "--ensembles")) cfg["ensembles"] = ensembles;
      if (touched(st, "--temperature")) cfg["temperature"] = temperature;
      if (touched(st, "--dropout")) cfg["dropout_p"] = dropout;
      if (touched(st, "--hidden")) cfg["hidden"] = hidden;
      if (touched(st, "--iterations")) cfg["iterations"] = iterations;
      if (touched(st, "--batch-size")) cfg["batch_size"] = batch_size;
      if (touched(st, "--seed")) cfg["seed"] = seed;
      apply_env_seed(cfg, touched(st, "--seed"));
      const seqpl_status_t s = seqpl_self_train(cfg.dump().c_str(), data_arg.c_str(), run_dir.c_str(), &result);
      return finish(s, result);
    }
    if (ev->parsed()) {
      if (touched(ev, "--beam-width")) cfg["beam_width"] = beam_width;
      const seqpl_status_t s = seqpl_eval(checkpoint.c_str(), data_arg.c_str(), cfg.dump().c_str(), &result);
      return finish(s, result);
    }
    if (rj->parsed()) {
      if (touched(rj, "--measure")) cfg["measure"] = measure;
      if (touched(rj, "--beam-width")) cfg["beam_width"] = beam_width;
      if (touched(rj, "--ensembles")) cfg["ensembles"] = ensembles;
      if (touched(rj, "--temperature")) cfg["temperature"] = temperature;
      if (touched(rj, "--dropout")) cfg["dropout_p"] = dropout;
      if (touched(rj, "--seed")) cfg["seed"] = seed;
      if (touched(rj, "--scores-file")) cfg["scores_file"] = scores_file;
      if (svg) cfg["svg"] = true;
      apply_env_seed(cfg, touched(rj, "--seed"));
      const seqpl_status_t s = seqpl_rejection(checkpoint.c_str(), data_arg.c_str(), cfg.dump().c_str(), out_dir.c_str(), &result);
      return finish(s, result);
    }
    if (cal->parsed()) {
      if (touched(cal, "--p-grid")) cfg["p_grid"] = p_grid;
      if (touched(cal, "--subset-fractions")) cfg["subset_fractions"] = subset_fractions;
      if (touched(cal, "--ensembles")) cfg["ensembles"] = ensembles;
      if (touched(cal, "--beam-width")) cfg["beam_width"] = beam_width;
      if (touched(cal, "--bins")) cfg["bins"] = bins;
      if (touched(cal, "--temperature")) cfg["temperature"] = temperature;
      if (touched(cal, "--seed")) cfg["seed"] = seed;
      apply_env_seed(cfg, touched(cal, "--seed"));
      const seqpl_status_t s = seqpl_calibrate(checkpoint.c_str(), data_arg.c_str(), cfg.dump().c_str(), out_dir.c_str(), &result);
      return finish(s, result);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
