#include "seqpl/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqpl {

EnsembleSpec EnsembleSpec::make(double p, int k, int units, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("EnsembleSpec: k must be >= 1, got " + std::to_string(k));
  EnsembleSpec ens;
  ens.p = p;
  ens.seed = seed;
  Rng rng(Rng::mix(seed, 0x6d61736b73ULL));
  ens.masks = sample_masks(p, k, units, rng);
  return ens;
}

StepPosterior stochastic_inference(const ModelParams& params, const FeatureSequence& v,
                                   const Hypothesis& hyp, const EnsembleSpec& ens) {
  if (hyp.tokens.empty()) throw std::invalid_argument("stochastic_inference: empty hypothesis");
  if (ens.masks.empty()) throw std::invalid_argument("stochastic_inference: no ensemble masks");

  const size_t steps = hyp.tokens.size();
  StepPosterior mean(steps, std::vector<double>(params.vocab, 0.0));
  for (const DropoutMask& mask : ens.masks) {
    auto dists = step_distributions(params, v, hyp.tokens, &mask);
    for (size_t t = 0; t < steps; ++t)
      for (int i = 0; i < params.vocab; ++i) mean[t][i] += dists[t][i];
  }
  const double inv_k = 1.0 / ens.k();
  for (auto& row : mean)
    for (double& x : row) x *= inv_k;
  return mean;
}

double step_entropy(std::span<const double> dist) {
  if (dist.empty()) throw std::invalid_argument("step_entropy: empty distribution");
  double sum = 0.0;
  for (double p : dist) {
    if (p < 0.0)
      throw std::invalid_argument("step_entropy: negative probability " + std::to_string(p));
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("step_entropy: probabilities sum to " + std::to_string(sum));
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

std::vector<double> hypothesis_weights(const HypothesisSet& hyps, double temperature) {
  if (hyps.hyps.empty()) throw std::invalid_argument("hypothesis_weights: empty set");
  if (!(temperature > 0.0))
    throw std::invalid_argument("hypothesis_weights: temperature must be > 0, got " +
                                std::to_string(temperature));
  std::vector<double> scaled;
  scaled.reserve(hyps.hyps.size());
  for (const Hypothesis& h : hyps.hyps) scaled.push_back(h.log_prob / temperature);
  return softmax(scaled);
}

UncertaintyReport uncertainty_report(const std::vector<StepPosterior>& posteriors,
                                     std::span<const double> weights, double temperature) {
  if (posteriors.size() != weights.size())
    throw std::invalid_argument("uncertainty_report: posterior/weight count mismatch");
  if (posteriors.empty()) throw std::invalid_argument("uncertainty_report: empty input");

  UncertaintyReport rep;
  rep.temperature = temperature;
  rep.total = 0.0;
  for (size_t b = 0; b < posteriors.size(); ++b) {
    HypothesisUncertainty hu;
    hu.weight = weights[b];
    hu.length = static_cast<int>(posteriors[b].size());
    if (hu.length == 0) throw std::invalid_argument("uncertainty_report: empty posterior");
    double sum_h = 0.0;
    for (const auto& row : posteriors[b]) {
      const double h = step_entropy(row);
      hu.step_entropies.push_back(h);
      sum_h += h;
    }
    rep.total += hu.weight / hu.length * sum_h;
    rep.per_hyp.push_back(std::move(hu));
  }
  return rep;
}

UncertaintyReport total_uncertainty(const ModelParams& params, const FeatureSequence& v,
                                    const HypothesisSet& hyps, const EnsembleSpec& ens,
                                    double temperature) {
  std::vector<double> weights = hypothesis_weights(hyps, temperature);
  std::vector<StepPosterior> posts;
  posts.reserve(hyps.hyps.size());
  for (const Hypothesis& h : hyps.hyps)
    posts.push_back(stochastic_inference(params, v, h, ens));
  return uncertainty_report(posts, weights, temperature);
}

}  // namespace seqpl
