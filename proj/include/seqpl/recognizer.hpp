#pragma once
// Attention encoder-decoder recognition model: bidirectional GRU encoder over
// feature frames, additive attention, GRU decoder with an output softmax.
// Training is teacher-forced cross-entropy under AdaDelta.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqpl/numkit.hpp"

namespace seqpl {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kNumReserved = 3;

  Vocabulary() = default;
  // Reserved tokens first, then the real symbols in the given order.
  explicit Vocabulary(std::vector<std::string> real_symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  int num_real() const { return size() - kNumReserved; }
  const std::string& symbol(int index) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  int index_of(const std::string& symbol) const;  // throws if unknown

  // "abc" -> {a, b, c, EOS}
  std::vector<int> encode_label(const std::string& text) const;
  // Token sequence back to its symbol string, reserved tokens dropped.
  std::string decode_tokens(std::span<const int> tokens) const;

  bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
};

struct FeatureSequence {
  Matrix frames;  // W x C
  int length() const { return frames.rows; }
  int channels() const { return frames.cols; }
};

struct LabeledSample {
  int64_t id = 0;
  FeatureSequence features;
  std::vector<int> label;  // token indices, EOS-terminated
};

struct GruParams {
  Matrix wz, wr, wh;  // hidden x input
  Matrix uz, ur, uh;  // hidden x hidden
  Matrix bz, br, bh;  // hidden x 1
};

struct ModelParams {
  int channels = 0;   // C
  int hidden = 0;     // D
  int vocab = 0;      // E
  int max_len = 0;    // S_max, decode steps including EOS

  GruParams enc_fwd, enc_bwd;
  Matrix att_wa;          // D x 1
  Matrix att_wb, att_wc;  // D x D
  Matrix att_b;           // D x 1
  Matrix embed;           // E x D
  GruParams dec;          // input size 2D
  Matrix out_w;           // E x D
  Matrix out_b;           // E x 1

  static ModelParams init(int channels, int hidden, int vocab, int max_len, uint64_t seed);

  // Stable-ordered walk over every trainable matrix.
  void for_each_param(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct DecoderState {
  Matrix s;  // D x 1
  int step = 0;
};

DecoderState initial_decoder_state(const ModelParams& params);

// Encoder pass. A mask, when given, applies inverted dropout to every output
// frame (the MC-dropout boundary); its unit count must equal the hidden size.
Matrix encode(const ModelParams& params, const FeatureSequence& v,
              const DropoutMask* mask = nullptr);

struct AttentionResult {
  Matrix context;               // D x 1
  std::vector<double> weights;  // one per frame, sums to 1
};

AttentionResult attention_context(const ModelParams& params, const DecoderState& s_prev,
                                  const Matrix& h);

struct DecoderStepResult {
  DecoderState state;
  std::vector<double> dist;  // probability over the vocabulary
};

DecoderStepResult decoder_step(const ModelParams& params, int prev_token, const Matrix& context,
                               const DecoderState& s_prev);

// Per-step output distributions while teacher-forcing `tokens` (scored in
// order, BOS fed first). Shared capture path for scoring and ensembles.
std::vector<std::vector<double>> step_distributions(const ModelParams& params,
                                                    const FeatureSequence& v,
                                                    std::span<const int> tokens,
                                                    const DropoutMask* mask = nullptr);

double teacher_forced_loss(const ModelParams& params, const LabeledSample& sample,
                           const DropoutMask* mask = nullptr);

// ln P(Y|X, theta) under teacher forcing, no dropout. Requires EOS-terminated y.
double sequence_log_prob(const ModelParams& params, const FeatureSequence& v,
                         std::span<const int> y);
// Same sum without the EOS requirement (prefixes, truncated hypotheses).
double prefix_log_prob(const ModelParams& params, const FeatureSequence& v,
                       std::span<const int> tokens);

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 32;
  uint64_t seed = 0;
  double dropout = 0.0;  // train-time dropout on encoder outputs
  double learning_rate = 1.0;
  double rho = 0.95;
  double epsilon = 1e-6;
  double clip_norm = 5.0;
};

ModelParams train(const ModelParams& params, const std::vector<LabeledSample>& dataset,
                  const TrainConfig& config);

// Tape with named parameter leaves, for gradient work.
struct LossTape {
  Tape tape;
  std::vector<std::pair<std::string, Tape::NodeId>> param_nodes;
  Tape::NodeId loss = -1;
};

LossTape build_loss_tape(const ModelParams& params, const LabeledSample& sample,
                         const DropoutMask* mask = nullptr);

}  // namespace seqpl
