#include "seqpl/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqpl {

namespace {

struct Beam {
  std::vector<int> tokens;
  double log_prob = 0.0;
  DecoderState state;
  int prev = Vocabulary::kBos;
  bool done = false;
};

// Deterministic ordering: better log_prob first, then shorter, then
// lexicographically smaller token sequence.
bool beam_before(const Beam& a, const Beam& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

bool hyp_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

}  // namespace

HypothesisSet beam_search(const ModelParams& params, const FeatureSequence& v, int beam_width,
                          int s_max) {
  if (beam_width < 1)
    throw std::invalid_argument("beam_search: beam width must be >= 1, got " +
                                std::to_string(beam_width));
  if (s_max < 1)
    throw std::invalid_argument("beam_search: s_max must be >= 1, got " + std::to_string(s_max));

  const Matrix h = encode(params, v);

  std::vector<Beam> beams(1);
  beams[0].state = initial_decoder_state(params);

  for (int step = 0; step < s_max; ++step) {
    bool any_open = false;
    for (const Beam& b : beams) any_open |= !b.done;
    if (!any_open) break;

    std::vector<Beam> pool;
    pool.reserve(beams.size() * params.vocab);
    for (Beam& b : beams) {
      if (b.done) {
        pool.push_back(std::move(b));
        continue;
      }
      AttentionResult att = attention_context(params, b.state, h);
      DecoderStepResult out = decoder_step(params, b.prev, att.context, b.state);
      // PAD and BOS are never emitted
      for (int tok = Vocabulary::kEos; tok < params.vocab; ++tok) {
        Beam nb;
        nb.tokens = b.tokens;
        nb.tokens.push_back(tok);
        nb.log_prob = b.log_prob + std::log(out.dist[tok]);
        nb.state = out.state;
        nb.prev = tok;
        nb.done = tok == Vocabulary::kEos;
        pool.push_back(std::move(nb));
      }
    }
    std::sort(pool.begin(), pool.end(), beam_before);
    if (static_cast<int>(pool.size()) > beam_width) pool.resize(beam_width);
    beams = std::move(pool);
  }

  HypothesisSet out;
  out.beam_width = beam_width;
  out.hyps.reserve(beams.size());
  for (Beam& b : beams) {
    Hypothesis hyp;
    hyp.tokens = std::move(b.tokens);
    hyp.log_prob = b.log_prob;
    hyp.truncated = !b.done;
    out.hyps.push_back(std::move(hyp));
  }
  std::sort(out.hyps.begin(), out.hyps.end(), hyp_before);
  return out;
}

const Hypothesis& assign_pseudo_label(const HypothesisSet& hyps) {
  if (hyps.hyps.empty()) throw std::invalid_argument("assign_pseudo_label: empty hypothesis set");
  const Hypothesis* best = &hyps.hyps[0];
  for (const Hypothesis& h : hyps.hyps)
    if (hyp_before(h, *best)) best = &h;
  return *best;
}

}  // namespace seqpl
