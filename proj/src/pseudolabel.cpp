#include "seqpl/pseudolabel.hpp"

#include <algorithm>
#include <stdexcept>

namespace seqpl {

int SelectionMask::count() const {
  return static_cast<int>(std::count(q.begin(), q.end(), uint8_t{1}));
}

SelectionMask select(std::span<const double> uncertainties, double tau) {
  SelectionMask mask;
  mask.q.reserve(uncertainties.size());
  for (double u : uncertainties) mask.q.push_back(u <= tau ? 1 : 0);
  return mask;
}

EnsembleSpec round_ensemble(const SelfTrainConfig& config, int round_index) {
  return EnsembleSpec::make(config.dropout_p, config.ensembles, config.hidden,
                            Rng::mix(config.seed, 0xa000 + static_cast<uint64_t>(round_index)));
}

namespace {

void check_config(const SelfTrainConfig& config) {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("SelfTrainConfig: " + msg);
  };
  if (config.tau < 0.0) fail("tau must be >= 0");
  if (config.rounds < 1) fail("rounds must be >= 1");
  if (config.beam_width < 1) fail("beam width must be >= 1");
  if (config.ensembles < 1) fail("ensemble size must be >= 1");
  if (!(config.temperature > 0.0)) fail("temperature must be > 0");
  if (config.dropout_p < 0.0 || config.dropout_p >= 1.0) fail("dropout p must be in [0, 1)");
  if (config.hidden < 1) fail("hidden size must be >= 1");
  if (config.s_max < 1) fail("s_max must be >= 1");
  if (config.vocab.size() < Vocabulary::kNumReserved + 1) fail("vocabulary missing");
}

std::vector<int> training_label(const PseudoEntry& e) {
  std::vector<int> label = e.label;
  if (e.truncated) label.push_back(Vocabulary::kEos);
  return label;
}

}  // namespace

PseudoRoundResult pseudo_label_round(const ModelParams& params,
                                     const std::vector<LabeledSample>& d_l,
                                     const std::vector<UnlabeledSample>& d_u,
                                     const SelfTrainConfig& config, int round_index,
                                     const ScoreObserver& observer) {
  check_config(config);
  PseudoRoundResult out;
  out.train_set = d_l;
  if (d_u.empty()) return out;

  const EnsembleSpec ens = round_ensemble(config, round_index);
  const int budget = params.max_len - 1;  // spare step keeps truncated labels trainable

  std::vector<double> uncertainties;
  uncertainties.reserve(d_u.size());
  for (const UnlabeledSample& u : d_u) {
    HypothesisSet hyps = beam_search(params, u.features, config.beam_width, budget);
    const Hypothesis& chosen = assign_pseudo_label(hyps);
    UncertaintyReport rep = total_uncertainty(params, u.features, hyps, ens, config.temperature);
    if (observer) observer(u, hyps, rep, chosen);

    PseudoEntry entry;
    entry.id = u.id;
    entry.features = u.features;
    entry.label = chosen.tokens;
    entry.truncated = chosen.truncated;
    entry.uncertainty = rep.total;
    entry.round = round_index;
    uncertainties.push_back(rep.total);
    out.scored.push_back(std::move(entry));
  }

  out.mask = select(uncertainties, config.tau);
  for (size_t i = 0; i < out.scored.size(); ++i) {
    if (!out.mask.q[i]) continue;
    const PseudoEntry& e = out.scored[i];
    out.selected.push_back(e);
    LabeledSample s;
    s.id = e.id;
    s.features = e.features;
    s.label = training_label(e);
    out.train_set.push_back(std::move(s));
  }
  return out;
}

EvalReport evaluate_model(const ModelParams& params, const Vocabulary& vocab,
                          const std::vector<LabeledSample>& samples, int beam_width) {
  if (samples.empty()) throw std::invalid_argument("evaluate_model: empty sample list");
  std::vector<std::string> preds, refs;
  preds.reserve(samples.size());
  refs.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    HypothesisSet hyps = beam_search(params, s.features, beam_width, params.max_len - 1);
    preds.push_back(vocab.decode_tokens(assign_pseudo_label(hyps).tokens));
    refs.push_back(vocab.decode_tokens(s.label));
  }
  return evaluate(preds, refs);
}

SelfTrainResult self_train(const std::vector<LabeledSample>& d_l,
                           const std::vector<UnlabeledSample>& d_u,
                           const SelfTrainConfig& config, const RoundObserver& observer,
                           const ScoreObserverFactory& score_observer) {
  check_config(config);
  if (d_l.empty()) throw std::invalid_argument("self_train: empty labeled set");
  if (config.validation.empty()) throw std::invalid_argument("self_train: empty validation set");

  const int channels = d_l.front().features.channels();
  const int max_len = config.s_max + 1;  // one spare step for truncated pseudo-labels

  auto train_round = [&](int round, const std::vector<LabeledSample>& data) {
    ModelParams init = ModelParams::init(channels, config.hidden, config.vocab.size(), max_len,
                                         Rng::mix(config.seed, 0xb000 + uint64_t(round)));
    TrainConfig tc = config.train;
    tc.seed = Rng::mix(config.seed, 0xc000 + uint64_t(round));
    return train(init, data, tc);
  };
  auto record = [&](int round, int selected, const ModelParams& params) {
    EvalReport rep = evaluate_model(params, config.vocab, config.validation, config.beam_width);
    RoundRecord rec;
    rec.round = round;
    rec.selected = selected;
    rec.val_word_accuracy = rep.word_accuracy;
    rec.val_cer = rep.cer;
    std::string tag = std::to_string(round);
    if (tag.size() < 3) tag.insert(0, 3 - tag.size(), '0');
    rec.checkpoint_ref = "round_" + tag + "/checkpoint.json";
    return rec;
  };

  SelfTrainResult result;
  ModelParams current = train_round(0, d_l);
  RoundRecord rec0 = record(0, 0, current);
  result.history.push_back(rec0);
  if (observer) observer(rec0, current, PseudoRoundResult{});

  if (d_u.empty()) {  // nothing to label: the supervised run is the result
    result.best = current;
    result.best_round = 0;
    return result;
  }

  result.best_round = -1;
  double best_acc = -1.0;
  for (int round = 1; round <= config.rounds; ++round) {
    PseudoRoundResult pr = pseudo_label_round(current, d_l, d_u, config, round,
                                              score_observer ? score_observer(round) : nullptr);
    current = train_round(round, pr.train_set);
    RoundRecord rec = record(round, pr.mask.count(), current);
    result.history.push_back(rec);
    if (observer) observer(rec, current, pr);
    if (rec.val_word_accuracy > best_acc) {
      best_acc = rec.val_word_accuracy;
      result.best = current;
      result.best_round = round;
    }
  }
  return result;
}

}  // namespace seqpl
