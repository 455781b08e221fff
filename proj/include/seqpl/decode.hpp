#pragma once
// Deterministic inference: beam search over the decoder and the pseudo-label
// assignment rule (argmax over the returned hypothesis set).

#include "seqpl/recognizer.hpp"

namespace seqpl {

struct Hypothesis {
  std::vector<int> tokens;  // ends with EOS unless truncated at s_max
  double log_prob = 0.0;    // raw cumulative ln P, no length normalization
  bool truncated = false;

  // L_b: decode steps taken, EOS step included.
  int length() const { return static_cast<int>(tokens.size()); }
};

struct HypothesisSet {
  std::vector<Hypothesis> hyps;  // descending log_prob, pairwise distinct
  int beam_width = 0;
};

// Closed-list beam search: finished beams stay in the candidate pool and the
// search stops once the B best entries are all finished or s_max is reached.
// Beams still open at s_max come back flagged as truncated.
HypothesisSet beam_search(const ModelParams& params, const FeatureSequence& v, int beam_width,
                          int s_max);

// Highest log_prob wins; ties go to the shorter hypothesis, then to
// lexicographically smaller tokens.
const Hypothesis& assign_pseudo_label(const HypothesisSet& hyps);

}  // namespace seqpl
