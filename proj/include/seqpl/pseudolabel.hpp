#pragma once
// Threshold selection, one pseudo-labeling round, and the multi-round
// self-training loop that re-trains from scratch on labeled + selected data.

#include <functional>

#include "seqpl/metrics.hpp"
#include "seqpl/synthdata.hpp"
#include "seqpl/uncertainty.hpp"

namespace seqpl {

struct SelectionMask {
  std::vector<uint8_t> q;  // 1 = selected

  int count() const;
};

// q_i = 1 iff u_i <= tau (boundary inclusive).
SelectionMask select(std::span<const double> uncertainties, double tau);

struct SelfTrainConfig {
  double tau = 0.01;
  int rounds = 5;
  int beam_width = 5;        // B
  int ensembles = 5;         // K
  double temperature = 0.01;  // T
  double dropout_p = 0.1;    // p, scoring-time masks
  int hidden = 16;
  int s_max = 8;
  uint64_t seed = 0;
  TrainConfig train;  // per-round seed is derived from `seed`
  Vocabulary vocab;
  std::vector<LabeledSample> validation;
};

struct PseudoEntry {
  int64_t id = 0;
  FeatureSequence features;
  std::vector<int> label;  // assigned hypothesis tokens, as decoded
  bool truncated = false;
  double uncertainty = 0.0;
  int round = 0;
};

struct PseudoRoundResult {
  std::vector<LabeledSample> train_set;  // d_l followed by the selected entries
  std::vector<PseudoEntry> selected;     // all satisfy uncertainty <= tau
  std::vector<PseudoEntry> scored;       // every unlabeled sample, d_u order
  SelectionMask mask;
};

// Per-sample observer for diagnostic dumps.
using ScoreObserver = std::function<void(const UnlabeledSample&, const HypothesisSet&,
                                         const UncertaintyReport&, const Hypothesis&)>;

// The round's K masks are a pure function of (config.seed, round_index), so a
// rerun rescoring the same round sees the identical ensemble.
EnsembleSpec round_ensemble(const SelfTrainConfig& config, int round_index);

// Beam-search + assign + score + select over all of d_u with the given
// (already trained) parameters. Selected entries are EOS-terminated for
// training; a truncated hypothesis still fits because models budget one
// spare step (beam length max_len - 1).
PseudoRoundResult pseudo_label_round(const ModelParams& params,
                                     const std::vector<LabeledSample>& d_l,
                                     const std::vector<UnlabeledSample>& d_u,
                                     const SelfTrainConfig& config, int round_index,
                                     const ScoreObserver& observer = nullptr);

struct RoundRecord {
  int round = 0;
  int selected = 0;
  double val_word_accuracy = 0.0;
  double val_cer = 0.0;
  std::string checkpoint_ref;
};

using RoundHistory = std::vector<RoundRecord>;

struct SelfTrainResult {
  ModelParams best;
  int best_round = 0;
  RoundHistory history;
};

// Greedy-free evaluation: top beam hypothesis as the prediction, exact-match
// word accuracy plus CER against the reference labels.
EvalReport evaluate_model(const ModelParams& params, const Vocabulary& vocab,
                          const std::vector<LabeledSample>& samples, int beam_width);

// Called after each completed round with its trained parameters and the
// round's pseudo-label result (round 0 gets an empty result).
using RoundObserver =
    std::function<void(const RoundRecord&, const ModelParams&, const PseudoRoundResult&)>;

// Builds the per-sample observer used while scoring a given round (for
// diagnostic dumps); may return an empty function.
using ScoreObserverFactory = std::function<ScoreObserver(int round)>;

// Round 0 trains on d_l alone; rounds 1..R re-label all of d_u with the
// previous round's model, then re-train from a fresh round-seeded init on
// d_l + selected. Returns the round >= 1 model with the best validation word
// accuracy (ties keep the earlier round). With d_u empty the loop collapses
// to the single supervised run and a one-entry history.
SelfTrainResult self_train(const std::vector<LabeledSample>& d_l,
                           const std::vector<UnlabeledSample>& d_u,
                           const SelfTrainConfig& config,
                           const RoundObserver& observer = nullptr,
                           const ScoreObserverFactory& score_observer = nullptr);

}  // namespace seqpl
