#include "seqpl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "seqpl/checkpoint.hpp"
#include "seqpl/pseudolabel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace seqpl {

const char* kToolVersion = "0.1.0";

namespace {

// seed-mixing tags for the derived streams
constexpr uint64_t kValTag = 0x76616cULL;
constexpr uint64_t kRejectTag = 0x72656a6563ULL;
constexpr uint64_t kCalTag = 0x63616c00ULL;

json parse_config(const std::string& text, const std::string& what) {
  if (text.empty()) return json::object();
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument(what + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(what + ": bad config JSON: " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known |= it.key() == k;
    if (!known) throw std::invalid_argument(what + ": unknown config key '" + it.key() + "'");
  }
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

// shortest round-trip decimal, deterministic across runs
std::string num(double v) { return json(v).dump(); }

std::string round_dir_name(int round) {
  std::string tag = std::to_string(round);
  if (tag.size() < 3) tag.insert(0, 3 - tag.size(), '0');
  return "round_" + tag;
}

// Removes the lock sentinel even when a run throws, so a failed run does not
// wedge the directory; the sentinel only guards concurrent writers.
struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / "run.lock") {
    if (fs::exists(path))
      throw std::runtime_error("run directory locked (run.lock present): " + dir.string());
    write_file(path, "locked\n");
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  c.num_symbols = j.value("num_symbols", c.num_symbols);
  c.len_min = j.value("len_min", c.len_min);
  c.len_max = j.value("len_max", c.len_max);
  c.frames_min = j.value("frames_min", c.frames_min);
  c.frames_max = j.value("frames_max", c.frames_max);
  c.channels = j.value("channels", c.channels);
  c.s_max = j.value("s_max", c.s_max);
  c.sigma = j.value("sigma", c.sigma);
  c.confusable_mix = j.value("confusable_mix", c.confusable_mix);
  if (j.contains("confusable_pairs"))
    c.confusable_pairs = j.at("confusable_pairs").get<std::vector<std::pair<int, int>>>();
  c.embed_seed = j.value("embed_seed", c.embed_seed);
  c.seed = j.value("seed", c.seed);
  return c;
}

json synth_to_json(const SynthConfig& c) {
  json j;
  j["num_symbols"] = c.num_symbols;
  j["len_min"] = c.len_min;
  j["len_max"] = c.len_max;
  j["frames_min"] = c.frames_min;
  j["frames_max"] = c.frames_max;
  j["channels"] = c.channels;
  j["s_max"] = c.s_max;
  j["sigma"] = c.sigma;
  j["confusable_mix"] = c.confusable_mix;
  j["confusable_pairs"] = c.confusable_pairs;
  j["embed_seed"] = c.embed_seed;
  j["seed"] = c.seed;
  return j;
}

Dataset load_labeled(const std::string& path, const std::string& what) {
  Dataset ds = load_dataset(path);
  if (ds.samples.empty()) throw std::runtime_error(what + ": dataset is empty: " + path);
  for (const auto& s : ds.samples)
    if (s.label.empty())
      throw std::runtime_error(what + ": sample " + std::to_string(s.id) +
                               " has no label: " + path);
  return ds;
}

struct ScoredSample {
  int64_t id = 0;
  bool wrong = false;
  double confidence = 0.0;   // exp(top log_prob), deterministic pass
  double uncertainty = 0.0;  // ensemble total uncertainty
};

std::string curve_csv(const RejectionCurve& curve) {
  std::string out = "rejected_fraction,retained_error\n";
  for (const auto& [r, e] : curve.points) out += num(r) + "," + num(e) + "\n";
  return out;
}

std::string curve_svg(const std::vector<std::pair<std::string, const RejectionCurve*>>& curves) {
  const double w = 480, h = 320, ml = 50, mr = 15, mt = 15, mb = 40;
  const double pw = w - ml - mr, ph = h - mt - mb;
  double ymax = 1e-9;
  for (const auto& [name, c] : curves)
    for (const auto& [r, e] : c->points) ymax = std::max(ymax, e);
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) +
                    "\" height=\"" + num(h) + "\">\n";
  svg += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  size_t ci = 0;
  for (const auto& [name, c] : curves) {
    std::string pts;
    for (const auto& [r, e] : c->points) {
      pts += num(ml + r * pw) + "," + num(mt + ph - e / ymax * ph) + " ";
    }
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           colors[ci % 3] + "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + num(ml + 8) + "\" y=\"" + num(mt + 16 + 16 * double(ci)) +
           "\" fill=\"" + colors[ci % 3] + "\" font-size=\"12\">" + name + "</text>\n";
    ++ci;
  }
  svg += "<text x=\"" + num(ml + pw / 2 - 50) + "\" y=\"" + num(h - 10) +
         "\" font-size=\"12\">rejected fraction</text>\n";
  svg += "<text x=\"12\" y=\"" + num(mt + ph / 2) +
         "\" font-size=\"12\" transform=\"rotate(-90 12 " + num(mt + ph / 2) +
         ")\">retained error</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::string cmd_gen_data(const std::string& config_json, const std::string& out_dir) {
  json cfg = parse_config(config_json, "gen-data");
  check_keys(cfg,
             {"num_symbols", "len_min", "len_max", "frames_min", "frames_max", "channels",
              "s_max", "sigma", "confusable_mix", "confusable_pairs", "embed_seed", "seed",
              "n", "n_val", "label_fraction"},
             "gen-data");
  SynthConfig synth = synth_from_json(cfg);
  const int n = cfg.value("n", 1000);
  const int n_val = cfg.value("n_val", 300);
  const double fraction = cfg.value("label_fraction", 0.1);
  if (n < 1 || n_val < 1) throw std::invalid_argument("gen-data: n and n_val must be >= 1");

  Vocabulary vocab = config_vocabulary(synth);
  auto pool = generate(synth, n);
  SynthConfig val_synth = synth;
  val_synth.seed = Rng::mix(synth.seed, kValTag);
  auto val = generate(val_synth, n_val);
  DatasetSplit sp = split(pool, fraction, synth.seed);  // split mixes its own tag

  std::vector<LabeledSample> unl;
  unl.reserve(sp.unlabeled.size());
  for (const auto& u : sp.unlabeled) unl.push_back({u.id, u.features, {}});

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_dataset((dir / "pool.jsonl").string(), vocab, synth.channels, pool);
  save_dataset((dir / "labeled.jsonl").string(), vocab, synth.channels, sp.labeled);
  save_dataset((dir / "unlabeled.jsonl").string(), vocab, synth.channels, unl, false);
  save_dataset((dir / "val.jsonl").string(), vocab, synth.channels, val);

  json snapshot = synth_to_json(synth);
  snapshot["n"] = n;
  snapshot["n_val"] = n_val;
  snapshot["label_fraction"] = fraction;
  write_file(dir / "config.json", snapshot.dump(2) + "\n");

  json counts;
  counts["pool"] = n;
  counts["labeled"] = static_cast<int>(sp.labeled.size());
  counts["unlabeled"] = static_cast<int>(sp.unlabeled.size());
  counts["val"] = n_val;
  json manifest;
  manifest["format"] = "seqpl-data-manifest";
  manifest["version"] = 1;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = snapshot;
  manifest["counts"] = counts;
  manifest["files"] = {{"pool", "pool.jsonl"},
                       {"labeled", "labeled.jsonl"},
                       {"unlabeled", "unlabeled.jsonl"},
                       {"val", "val.jsonl"}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return counts.dump();
}

std::string cmd_self_train(const std::string& config_json, const std::string& data_dir,
                           const std::string& run_dir) {
  json cfg = parse_config(config_json, "self-train");
  check_keys(cfg,
             {"tau", "rounds", "beam_width", "ensembles", "temperature", "dropout_p", "hidden",
              "seed", "iterations", "batch_size", "train_dropout", "learning_rate", "rho",
              "epsilon", "clip_norm"},
             "self-train");

  const fs::path ddir(data_dir);
  Dataset lab = load_labeled((ddir / "labeled.jsonl").string(), "self-train");
  Dataset unl_ds = load_dataset((ddir / "unlabeled.jsonl").string());
  Dataset val = load_labeled((ddir / "val.jsonl").string(), "self-train");
  if (!(lab.vocab == unl_ds.vocab) || !(lab.vocab == val.vocab))
    throw std::runtime_error("self-train: vocabulary mismatch across dataset files");

  std::ifstream dc(ddir / "config.json");
  if (!dc) throw std::runtime_error("self-train: missing " + (ddir / "config.json").string());
  json data_cfg = json::parse(dc);

  SelfTrainConfig sc;
  sc.tau = cfg.value("tau", sc.tau);
  sc.rounds = cfg.value("rounds", sc.rounds);
  sc.beam_width = cfg.value("beam_width", sc.beam_width);
  sc.ensembles = cfg.value("ensembles", sc.ensembles);
  sc.temperature = cfg.value("temperature", sc.temperature);
  sc.dropout_p = cfg.value("dropout_p", sc.dropout_p);
  sc.hidden = cfg.value("hidden", sc.hidden);
  sc.seed = cfg.value("seed", sc.seed);
  sc.s_max = data_cfg.value("s_max", 8);
  sc.train.iterations = cfg.value("iterations", sc.train.iterations);
  sc.train.batch_size = cfg.value("batch_size", sc.train.batch_size);
  sc.train.dropout = cfg.value("train_dropout", sc.train.dropout);
  sc.train.learning_rate = cfg.value("learning_rate", sc.train.learning_rate);
  sc.train.rho = cfg.value("rho", sc.train.rho);
  sc.train.epsilon = cfg.value("epsilon", sc.train.epsilon);
  sc.train.clip_norm = cfg.value("clip_norm", sc.train.clip_norm);
  sc.vocab = lab.vocab;
  sc.validation = val.samples;

  std::vector<UnlabeledSample> d_u;
  d_u.reserve(unl_ds.samples.size());
  for (auto& s : unl_ds.samples) d_u.emplace_back(s.id, s.features, std::vector<int>{});

  fs::create_directories(run_dir);
  const fs::path rdir(run_dir);
  RunLock lock(rdir);

  json snapshot;
  snapshot["tau"] = sc.tau;
  snapshot["rounds"] = sc.rounds;
  snapshot["beam_width"] = sc.beam_width;
  snapshot["ensembles"] = sc.ensembles;
  snapshot["temperature"] = sc.temperature;
  snapshot["dropout_p"] = sc.dropout_p;
  snapshot["hidden"] = sc.hidden;
  snapshot["s_max"] = sc.s_max;
  snapshot["seed"] = sc.seed;
  snapshot["iterations"] = sc.train.iterations;
  snapshot["batch_size"] = sc.train.batch_size;
  snapshot["train_dropout"] = sc.train.dropout;
  snapshot["learning_rate"] = sc.train.learning_rate;
  snapshot["rho"] = sc.train.rho;
  snapshot["epsilon"] = sc.train.epsilon;
  snapshot["clip_norm"] = sc.train.clip_norm;
  snapshot["data_dir"] = data_dir;
  write_file(rdir / "config.json", snapshot.dump(2) + "\n");

  json manifest;
  manifest["format"] = "seqpl-run-manifest";
  manifest["version"] = 1;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = snapshot;
  manifest["rounds"] = json::array();

  // streaming per-sample dump, one file per scored round
  auto dump_factory = [&](int round) -> ScoreObserver {
    fs::create_directories(rdir / round_dir_name(round));
    auto out = std::make_shared<std::ofstream>(rdir / round_dir_name(round) / "uncertainty.jsonl",
                                               std::ios::binary | std::ios::trunc);
    if (!*out) throw std::runtime_error("self-train: cannot write uncertainty dump");
    Vocabulary vocab = sc.vocab;
    return [out, vocab](const UnlabeledSample& u, const HypothesisSet& hyps,
                        const UncertaintyReport& rep, const Hypothesis& chosen) {
      json line;
      line["id"] = u.id;
      line["uncertainty"] = rep.total;
      line["label"] = vocab.decode_tokens(chosen.tokens);
      line["truncated"] = chosen.truncated;
      json hj = json::array();
      for (size_t b = 0; b < hyps.hyps.size(); ++b) {
        json h;
        h["tokens"] = vocab.decode_tokens(hyps.hyps[b].tokens);
        h["log_prob"] = hyps.hyps[b].log_prob;
        h["weight"] = rep.per_hyp[b].weight;
        h["step_entropies"] = rep.per_hyp[b].step_entropies;
        h["length"] = rep.per_hyp[b].length;
        hj.push_back(std::move(h));
      }
      line["hypotheses"] = std::move(hj);
      *out << line.dump() << '\n';
    };
  };

  auto round_observer = [&](const RoundRecord& rec, const ModelParams& params,
                            const PseudoRoundResult& pr) {
    const fs::path dir = rdir / round_dir_name(rec.round);
    fs::create_directories(dir);
    save_checkpoint(params, sc.vocab, (dir / "checkpoint.json").string());
    if (rec.round > 0) {
      std::string csv = "id,uncertainty,label\n";
      for (const PseudoEntry& e : pr.selected)
        csv += std::to_string(e.id) + "," + num(e.uncertainty) + "," +
               sc.vocab.decode_tokens(e.label) + "\n";
      write_file(dir / "selection.csv", csv);
    }
    json metrics;
    metrics["round"] = rec.round;
    metrics["selected"] = rec.selected;
    metrics["val_word_accuracy"] = rec.val_word_accuracy;
    metrics["val_cer"] = rec.val_cer;
    write_file(dir / "metrics.json", metrics.dump(2) + "\n");

    json entry;
    entry["round"] = rec.round;
    entry["dir"] = round_dir_name(rec.round);
    entry["checkpoint"] = rec.checkpoint_ref;
    entry["selected"] = rec.selected;
    manifest["rounds"].push_back(std::move(entry));
    write_file(rdir / "manifest.json", manifest.dump(2) + "\n");
  };

  SelfTrainResult result = self_train(lab.samples, d_u, sc, round_observer, dump_factory);

  std::string history = "round,selected,val_word_accuracy,val_cer,checkpoint\n";
  for (const RoundRecord& r : result.history)
    history += std::to_string(r.round) + "," + std::to_string(r.selected) + "," +
               num(r.val_word_accuracy) + "," + num(r.val_cer) + "," + r.checkpoint_ref + "\n";
  write_file(rdir / "history.csv", history);

  manifest["best"] = {{"round", result.best_round},
                      {"checkpoint", result.history[result.best_round].checkpoint_ref}};
  manifest["history_csv"] = "history.csv";
  write_file(rdir / "manifest.json", manifest.dump(2) + "\n");

  json summary;
  summary["best_round"] = result.best_round;
  summary["best_val_word_accuracy"] = result.history[result.best_round].val_word_accuracy;
  json hj = json::array();
  for (const RoundRecord& r : result.history) {
    json rec;
    rec["round"] = r.round;
    rec["selected"] = r.selected;
    rec["val_word_accuracy"] = r.val_word_accuracy;
    rec["val_cer"] = r.val_cer;
    hj.push_back(std::move(rec));
  }
  summary["history"] = std::move(hj);
  return summary.dump();
}

std::string cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                     const std::string& options_json) {
  json opt = parse_config(options_json, "eval");
  check_keys(opt, {"beam_width"}, "eval");
  const int beam_width = opt.value("beam_width", 5);

  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = load_labeled(dataset_path, "eval");
  if (!(ck.vocab == ds.vocab))
    throw std::runtime_error("eval: vocabulary mismatch between checkpoint and dataset");

  EvalReport rep = evaluate_model(ck.params, ck.vocab, ds.samples, beam_width);
  json out;
  out["word_accuracy"] = rep.word_accuracy;
  out["wer"] = rep.wer;
  out["cer"] = rep.cer;
  out["count"] = rep.count;
  return out.dump();
}

std::string cmd_rejection(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& options_json, const std::string& out_dir) {
  json opt = parse_config(options_json, "rejection");
  check_keys(opt,
             {"measure", "beam_width", "ensembles", "temperature", "dropout_p", "seed",
              "scores_file", "svg"},
             "rejection");
  const std::string measure = opt.value("measure", "both");
  if (measure != "uncertainty" && measure != "confidence" && measure != "both")
    throw std::invalid_argument("rejection: measure must be uncertainty, confidence or both");
  const int beam_width = opt.value("beam_width", 5);
  const int ensembles = opt.value("ensembles", 5);
  const double temperature = opt.value("temperature", 0.01);
  const double dropout_p = opt.value("dropout_p", 0.1);
  const uint64_t seed = opt.value("seed", uint64_t{0});
  const bool svg = opt.value("svg", false);
  const std::string scores_file = opt.value("scores_file", "");
  const bool want_unc = measure != "confidence";
  const bool want_conf = measure != "uncertainty";
  if (!scores_file.empty() && measure == "both")
    throw std::invalid_argument("rejection: scores_file needs a single measure");

  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = load_labeled(dataset_path, "rejection");
  if (!(ck.vocab == ds.vocab))
    throw std::runtime_error("rejection: vocabulary mismatch between checkpoint and dataset");

  EnsembleSpec ens;
  if (want_unc && scores_file.empty())
    ens = EnsembleSpec::make(dropout_p, ensembles, ck.params.hidden, Rng::mix(seed, kRejectTag));

  std::vector<ScoredSample> scored;
  scored.reserve(ds.samples.size());
  for (const LabeledSample& s : ds.samples) {
    HypothesisSet hyps =
        beam_search(ck.params, s.features, beam_width, ck.params.max_len - 1);
    const Hypothesis& top = assign_pseudo_label(hyps);
    ScoredSample r;
    r.id = s.id;
    r.wrong = ck.vocab.decode_tokens(top.tokens) != ck.vocab.decode_tokens(s.label);
    r.confidence = std::exp(top.log_prob);
    if (want_unc && scores_file.empty())
      r.uncertainty = total_uncertainty(ck.params, s.features, hyps, ens, temperature).total;
    scored.push_back(r);
  }

  if (!scores_file.empty()) {
    std::ifstream f(scores_file);
    if (!f) throw std::runtime_error("rejection: cannot open scores file " + scores_file);
    std::string line;
    int line_no = 0;
    std::vector<std::pair<int64_t, double>> injected;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("id") || !j.contains("score"))
        throw std::runtime_error("rejection: scores file line " + std::to_string(line_no) +
                                 ": expected {\"id\", \"score\"}");
      injected.emplace_back(j.at("id").get<int64_t>(), j.at("score").get<double>());
    }
    for (ScoredSample& r : scored) {
      auto it = std::find_if(injected.begin(), injected.end(),
                             [&](const auto& p) { return p.first == r.id; });
      if (it == injected.end())
        throw std::runtime_error("rejection: scores file missing id " + std::to_string(r.id));
      (want_unc ? r.uncertainty : r.confidence) = it->second;
    }
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const int n = static_cast<int>(scored.size());
  std::vector<bool> wrong(n);
  for (int i = 0; i < n; ++i) wrong[i] = scored[i].wrong;
  const double base_error =
      static_cast<double>(std::count(wrong.begin(), wrong.end(), true)) / n;

  json result;
  result["count"] = n;
  result["base_error"] = base_error;
  result["prr"] = json::object();
  std::vector<std::pair<std::string, const RejectionCurve*>> drawn;
  RejectionCurve unc_curve, conf_curve;

  auto emit = [&](const char* name, const std::vector<double>& s, RejectionOrder order,
                  RejectionCurve& curve) {
    curve = rejection_curve(s, wrong, order);
    write_file(dir / (std::string(name) + "_curve.csv"), curve_csv(curve));
    auto p = prr(curve, base_error, n);
    result["prr"][name] = p ? json(*p) : json("undefined");
    drawn.emplace_back(name, &curve);
  };
  if (want_unc) {
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = scored[i].uncertainty;
    emit("uncertainty", s, RejectionOrder::kUncertaintyDescending, unc_curve);
  }
  if (want_conf) {
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = scored[i].confidence;
    emit("confidence", s, RejectionOrder::kConfidenceAscending, conf_curve);
  }

  std::string lines;
  for (const ScoredSample& r : scored) {
    json j;
    j["id"] = r.id;
    j["wrong"] = r.wrong;
    j["confidence"] = r.confidence;
    if (want_unc) j["uncertainty"] = r.uncertainty;
    lines += j.dump() + "\n";
  }
  write_file(dir / "scores.jsonl", lines);
  if (svg) write_file(dir / "rejection_curves.svg", curve_svg(drawn));
  return result.dump();
}

std::string cmd_calibrate(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& options_json, const std::string& out_dir) {
  json opt = parse_config(options_json, "calibrate");
  check_keys(opt,
             {"p_grid", "ensembles", "beam_width", "bins", "subset_fractions", "temperature",
              "seed"},
             "calibrate");
  std::vector<double> p_grid = opt.value("p_grid", std::vector<double>{0.0, 0.1});
  const int ensembles = opt.value("ensembles", 5);
  const int beam_width = opt.value("beam_width", 5);
  const int bins = opt.value("bins", 10);
  std::vector<double> fractions = opt.value("subset_fractions", std::vector<double>{0.5});
  const double temperature = opt.value("temperature", 0.01);
  const uint64_t seed = opt.value("seed", uint64_t{0});
  if (p_grid.empty()) throw std::invalid_argument("calibrate: empty p grid");
  for (double f : fractions)
    if (!(f > 0.0) || f > 1.0)
      throw std::invalid_argument("calibrate: subset fractions must be in (0, 1]");

  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = load_labeled(dataset_path, "calibrate");
  if (!(ck.vocab == ds.vocab))
    throw std::runtime_error("calibrate: vocabulary mismatch between checkpoint and dataset");
  const int n = static_cast<int>(ds.samples.size());

  // deterministic pass once: hypotheses + correctness are p-independent
  std::vector<HypothesisSet> hyp_sets;
  std::vector<bool> correct(n);
  hyp_sets.reserve(n);
  for (int i = 0; i < n; ++i) {
    hyp_sets.push_back(beam_search(ck.params, ds.samples[i].features, beam_width,
                                   ck.params.max_len - 1));
    const Hypothesis& top = assign_pseudo_label(hyp_sets.back());
    correct[i] = ck.vocab.decode_tokens(top.tokens) == ck.vocab.decode_tokens(ds.samples[i].label);
  }

  std::string csv = "p,ece";
  for (double f : fractions) csv += ",ece_subset_" + num(f);
  csv += "\n";
  json rows = json::array();

  for (size_t pi = 0; pi < p_grid.size(); ++pi) {
    const double p = p_grid[pi];
    EnsembleSpec ens =
        EnsembleSpec::make(p, ensembles, ck.params.hidden, Rng::mix(seed, kCalTag + pi));
    std::vector<double> conf(n), unc(n);
    for (int i = 0; i < n; ++i) {
      // ensemble-mean confidence: average each member's sequence posterior for
      // the top hypothesis (a mixture, not a product of step-wise means)
      const Hypothesis& top = assign_pseudo_label(hyp_sets[i]);
      double mean_conf = 0.0;
      for (const DropoutMask& mask : ens.masks) {
        auto dists = step_distributions(ck.params, ds.samples[i].features, top.tokens, &mask);
        double lp = 0.0;
        for (size_t t = 0; t < top.tokens.size(); ++t) lp += std::log(dists[t][top.tokens[t]]);
        mean_conf += std::exp(lp);
      }
      conf[i] = std::min(1.0, mean_conf / static_cast<double>(ens.k()));
      unc[i] =
          total_uncertainty(ck.params, ds.samples[i].features, hyp_sets[i], ens, temperature)
              .total;
    }
    CalibrationReport full = ece(conf, correct, bins);
    json row;
    row["p"] = p;
    row["ece"] = full.ece;
    csv += num(p) + "," + num(full.ece);

    // lowest-uncertainty subsets, stable order on ties
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return unc[a] < unc[b]; });
    json subsets = json::object();
    for (double f : fractions) {
      const int m = std::max(1, static_cast<int>(std::llround(f * n)));
      std::vector<double> sub_conf;
      std::vector<bool> sub_correct;
      for (int i = 0; i < m; ++i) {
        sub_conf.push_back(conf[order[i]]);
        sub_correct.push_back(correct[order[i]]);
      }
      const double sub_ece = ece(sub_conf, sub_correct, bins).ece;
      subsets[num(f)] = sub_ece;
      csv += "," + num(sub_ece);
    }
    csv += "\n";
    row["ece_subset"] = std::move(subsets);
    rows.push_back(std::move(row));
  }

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "calibration.csv", csv);
  json result;
  result["rows"] = std::move(rows);
  result["bins"] = bins;
  result["count"] = n;
  return result.dump();
}

}  // namespace seqpl
