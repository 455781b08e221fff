#pragma once
// Stochastic inference: dropout-ensemble predictive posteriors under teacher
// forcing, per-step entropies, and the temperature-weighted total uncertainty
// of a hypothesis set.

#include "seqpl/decode.hpp"

namespace seqpl {

struct EnsembleSpec {
  double p = 0.1;                  // dropout probability
  std::vector<DropoutMask> masks;  // one per ensemble member, fixed per round
  uint64_t seed = 0;

  int k() const { return static_cast<int>(masks.size()); }
  // Samples the K masks once; they are reused for every sample in a round.
  static EnsembleSpec make(double p, int k, int units, uint64_t seed);
};

// One averaged distribution per decode step of a hypothesis.
using StepPosterior = std::vector<std::vector<double>>;

// Teacher-forces hyp's tokens once per ensemble member (mask active in the
// encoder) and averages the K per-step distributions elementwise.
StepPosterior stochastic_inference(const ModelParams& params, const FeatureSequence& v,
                                   const Hypothesis& hyp, const EnsembleSpec& ens);

// H = -sum p ln p with 0 ln 0 = 0. Validates the input distribution.
double step_entropy(std::span<const double> dist);

// Softmax over (1/T) ln P(Y^(b)|X), log-sum-exp stabilized.
std::vector<double> hypothesis_weights(const HypothesisSet& hyps, double temperature);

struct HypothesisUncertainty {
  double weight = 0.0;                 // omega_b
  std::vector<double> step_entropies;  // one per decode step
  int length = 0;                      // L_b
};

struct UncertaintyReport {
  std::vector<HypothesisUncertainty> per_hyp;
  double total = 0.0;  // in [0, ln E]
  double temperature = 0.0;
};

// Assembles the report from already-computed posteriors and weights. Pure
// arithmetic; total = sum_b (w_b / L_b) sum_t H_bt.
UncertaintyReport uncertainty_report(const std::vector<StepPosterior>& posteriors,
                                     std::span<const double> weights, double temperature);

UncertaintyReport total_uncertainty(const ModelParams& params, const FeatureSequence& v,
                                    const HypothesisSet& hyps, const EnsembleSpec& ens,
                                    double temperature);

}  // namespace seqpl
