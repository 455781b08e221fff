#include "seqpl/recognizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace seqpl {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

static int find_symbol(const std::vector<std::string>& symbols, const std::string& s) {
  for (size_t i = 0; i < symbols.size(); ++i)
    if (symbols[i] == s) return static_cast<int>(i);
  return -1;
}

Vocabulary::Vocabulary(std::vector<std::string> real_symbols) {
  if (real_symbols.empty())
    throw std::invalid_argument("Vocabulary: need at least one real symbol");
  symbols_ = {"<pad>", "<bos>", "<eos>"};
  for (auto& s : real_symbols) {
    if (find_symbol(symbols_, s) >= 0)
      throw std::invalid_argument("Vocabulary: duplicate or reserved symbol '" + s + "'");
    symbols_.push_back(std::move(s));
  }
}

const std::string& Vocabulary::symbol(int index) const {
  if (index < 0 || index >= size())
    throw std::invalid_argument("Vocabulary: index " + std::to_string(index) + " out of range");
  return symbols_[index];
}

int Vocabulary::index_of(const std::string& symbol) const {
  const int idx = find_symbol(symbols_, symbol);
  if (idx < 0) throw std::invalid_argument("Vocabulary: unknown symbol '" + symbol + "'");
  return idx;
}

std::vector<int> Vocabulary::encode_label(const std::string& text) const {
  std::vector<int> tokens;
  for (char c : text) tokens.push_back(index_of(std::string(1, c)));
  tokens.push_back(kEos);
  return tokens;
}

std::string Vocabulary::decode_tokens(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t == kPad || t == kBos || t == kEos) continue;
    out += symbol(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

static Matrix he_normal(int rows, int cols, int fan_in, Rng& rng) {
  Matrix m(rows, cols);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : m.data) v = rng.normal() * stddev;
  return m;
}

static GruParams init_gru(int hidden, int input, Rng& rng) {
  GruParams g;
  g.wz = he_normal(hidden, input, input, rng);
  g.wr = he_normal(hidden, input, input, rng);
  g.wh = he_normal(hidden, input, input, rng);
  g.uz = he_normal(hidden, hidden, hidden, rng);
  g.ur = he_normal(hidden, hidden, hidden, rng);
  g.uh = he_normal(hidden, hidden, hidden, rng);
  g.bz = Matrix(hidden, 1);
  g.br = Matrix(hidden, 1);
  g.bh = Matrix(hidden, 1);
  return g;
}

ModelParams ModelParams::init(int channels, int hidden, int vocab, int max_len, uint64_t seed) {
  if (channels < 1 || hidden < 1 || max_len < 1)
    throw std::invalid_argument("ModelParams: dimensions must be positive");
  if (vocab < Vocabulary::kNumReserved + 1)
    throw std::invalid_argument("ModelParams: vocabulary too small");
  Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
  ModelParams p;
  p.channels = channels;
  p.hidden = hidden;
  p.vocab = vocab;
  p.max_len = max_len;
  p.enc_fwd = init_gru(hidden, channels, rng);
  p.enc_bwd = init_gru(hidden, channels, rng);
  p.att_wa = he_normal(hidden, 1, hidden, rng);
  p.att_wb = he_normal(hidden, hidden, hidden, rng);
  p.att_wc = he_normal(hidden, hidden, hidden, rng);
  p.att_b = Matrix(hidden, 1);
  p.embed = he_normal(vocab, hidden, hidden, rng);
  p.dec = init_gru(hidden, 2 * hidden, rng);
  p.out_w = he_normal(vocab, hidden, hidden, rng);
  p.out_b = Matrix(vocab, 1);
  return p;
}

template <typename P, typename F>
static void walk_params(P& p, F&& fn) {
  auto gru = [&](const std::string& prefix, auto& g) {
    fn(prefix + ".wz", g.wz);
    fn(prefix + ".wr", g.wr);
    fn(prefix + ".wh", g.wh);
    fn(prefix + ".uz", g.uz);
    fn(prefix + ".ur", g.ur);
    fn(prefix + ".uh", g.uh);
    fn(prefix + ".bz", g.bz);
    fn(prefix + ".br", g.br);
    fn(prefix + ".bh", g.bh);
  };
  gru("enc_fwd", p.enc_fwd);
  gru("enc_bwd", p.enc_bwd);
  fn("att.wa", p.att_wa);
  fn("att.wb", p.att_wb);
  fn("att.wc", p.att_wc);
  fn("att.b", p.att_b);
  fn("embed", p.embed);
  gru("dec", p.dec);
  fn("out.w", p.out_w);
  fn("out.b", p.out_b);
}

void ModelParams::for_each_param(const std::function<void(const std::string&, Matrix&)>& fn) {
  walk_params(*this, fn);
}

void ModelParams::for_each_param(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  walk_params(*this, fn);
}

// ---------------------------------------------------------------------------
// Forward inference
// ---------------------------------------------------------------------------

static Matrix add_m(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  for (int i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

static Matrix gru_forward(const GruParams& g, const Matrix& x, const Matrix& s) {
  Matrix z = add_m(add_m(matmul(g.wz, x), matmul(g.uz, s)), g.bz);
  Matrix r = add_m(add_m(matmul(g.wr, x), matmul(g.ur, s)), g.br);
  for (double& v : z.data) v = 1.0 / (1.0 + std::exp(-v));
  for (double& v : r.data) v = 1.0 / (1.0 + std::exp(-v));
  Matrix rs = r;
  for (int i = 0; i < rs.size(); ++i) rs.data[i] *= s.data[i];
  Matrix hb = add_m(add_m(matmul(g.wh, x), matmul(g.uh, rs)), g.bh);
  for (double& v : hb.data) v = std::tanh(v);
  Matrix out(s.rows, 1);
  for (int i = 0; i < out.size(); ++i)
    out.data[i] = (1.0 - z.data[i]) * s.data[i] + z.data[i] * hb.data[i];
  return out;
}

DecoderState initial_decoder_state(const ModelParams& params) {
  return DecoderState{Matrix(params.hidden, 1), 0};
}

Matrix encode(const ModelParams& params, const FeatureSequence& v, const DropoutMask* mask) {
  if (v.channels() != params.channels)
    throw std::invalid_argument("encode: feature channels " + std::to_string(v.channels()) +
                                " do not match model channels " +
                                std::to_string(params.channels));
  if (v.length() < 1) throw std::invalid_argument("encode: empty feature sequence");
  if (mask && mask->units() != params.hidden)
    throw std::invalid_argument("encode: mask units " + std::to_string(mask->units()) +
                                " do not match hidden size " + std::to_string(params.hidden));

  const int w = v.length();
  const int d = params.hidden;
  auto frame = [&](int i) {
    Matrix x(params.channels, 1);
    for (int c = 0; c < params.channels; ++c) x(c, 0) = v.frames(i, c);
    return x;
  };

  std::vector<Matrix> fwd(w), bwd(w);
  Matrix s(d, 1);
  for (int i = 0; i < w; ++i) {
    s = gru_forward(params.enc_fwd, frame(i), s);
    fwd[i] = s;
  }
  s = Matrix(d, 1);
  for (int i = w - 1; i >= 0; --i) {
    s = gru_forward(params.enc_bwd, frame(i), s);
    bwd[i] = s;
  }

  Matrix h(w, d);
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < d; ++j) {
      double val = fwd[i](j, 0) + bwd[i](j, 0);
      if (mask) val = mask->keep[j] ? val * mask->scale : 0.0;
      h(i, j) = val;
    }
  return h;
}

AttentionResult attention_context(const ModelParams& params, const DecoderState& s_prev,
                                  const Matrix& h) {
  if (h.rows < 1) throw std::invalid_argument("attention_context: empty encoder output");
  if (h.cols != params.hidden)
    throw std::invalid_argument("attention_context: encoder width " + std::to_string(h.cols) +
                                " does not match hidden size " + std::to_string(params.hidden));
  const int w = h.rows;
  const int d = params.hidden;

  Matrix pre = add_m(matmul(params.att_wb, s_prev.s), params.att_b);  // D x 1
  std::vector<double> scores(w);
  for (int i = 0; i < w; ++i) {
    double e = 0.0;
    for (int j = 0; j < d; ++j) {
      double t = pre(j, 0);
      for (int k = 0; k < d; ++k) t += params.att_wc(j, k) * h(i, k);
      e += params.att_wa(j, 0) * std::tanh(t);
    }
    scores[i] = e;
  }
  AttentionResult out;
  out.weights = softmax(scores);
  out.context = Matrix(d, 1);
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < d; ++j) out.context(j, 0) += out.weights[i] * h(i, j);
  return out;
}

DecoderStepResult decoder_step(const ModelParams& params, int prev_token, const Matrix& context,
                               const DecoderState& s_prev) {
  if (prev_token < 0 || prev_token >= params.vocab)
    throw std::invalid_argument("decoder_step: token " + std::to_string(prev_token) +
                                " out of range for vocabulary " + std::to_string(params.vocab));
  if (context.rows != params.hidden || context.cols != 1)
    throw std::invalid_argument("decoder_step: bad context shape");
  const int d = params.hidden;

  Matrix x(2 * d, 1);
  for (int j = 0; j < d; ++j) {
    x(j, 0) = params.embed(prev_token, j);
    x(d + j, 0) = context(j, 0);
  }
  DecoderStepResult out;
  out.state.s = gru_forward(params.dec, x, s_prev.s);
  out.state.step = s_prev.step + 1;

  Matrix logits = add_m(matmul(params.out_w, out.state.s), params.out_b);
  out.dist = softmax(std::span<const double>(logits.data));
  return out;
}

std::vector<std::vector<double>> step_distributions(const ModelParams& params,
                                                    const FeatureSequence& v,
                                                    std::span<const int> tokens,
                                                    const DropoutMask* mask) {
  Matrix h = encode(params, v, mask);
  DecoderState state = initial_decoder_state(params);
  int prev = Vocabulary::kBos;
  std::vector<std::vector<double>> dists;
  dists.reserve(tokens.size());
  for (int tok : tokens) {
    if (tok < 0 || tok >= params.vocab)
      throw std::invalid_argument("step_distributions: token " + std::to_string(tok) +
                                  " out of range");
    AttentionResult att = attention_context(params, state, h);
    DecoderStepResult step = decoder_step(params, prev, att.context, state);
    dists.push_back(std::move(step.dist));
    state = std::move(step.state);
    prev = tok;
  }
  return dists;
}

double prefix_log_prob(const ModelParams& params, const FeatureSequence& v,
                       std::span<const int> tokens) {
  auto dists = step_distributions(params, v, tokens, nullptr);
  double lp = 0.0;
  for (size_t t = 0; t < dists.size(); ++t) lp += std::log(dists[t][tokens[t]]);
  return lp;
}

double sequence_log_prob(const ModelParams& params, const FeatureSequence& v,
                         std::span<const int> y) {
  if (y.empty() || y.back() != Vocabulary::kEos)
    throw std::invalid_argument("sequence_log_prob: sequence must end with EOS");
  return prefix_log_prob(params, v, y);
}

// ---------------------------------------------------------------------------
// Teacher-forced loss tape
// ---------------------------------------------------------------------------

static void validate_label(const ModelParams& params, const LabeledSample& sample) {
  if (sample.label.empty()) throw std::invalid_argument("label: empty");
  if (static_cast<int>(sample.label.size()) > params.max_len)
    throw std::invalid_argument("label: length " + std::to_string(sample.label.size()) +
                                " exceeds max decode length " + std::to_string(params.max_len));
  if (sample.label.back() != Vocabulary::kEos)
    throw std::invalid_argument("label: must end with EOS");
  for (int t : sample.label)
    if (t < 0 || t >= params.vocab)
      throw std::invalid_argument("label: token " + std::to_string(t) + " out of range");
}

namespace {

struct TapeGru {
  Tape::NodeId wz, wr, wh, uz, ur, uh, bz, br, bh;
};

Tape::NodeId tape_gru_step(Tape& t, const TapeGru& g, Tape::NodeId ones, Tape::NodeId x,
                           Tape::NodeId s) {
  auto z = t.sigmoid(t.add(t.add(t.matmul(g.wz, x), t.matmul(g.uz, s)), g.bz));
  auto r = t.sigmoid(t.add(t.add(t.matmul(g.wr, x), t.matmul(g.ur, s)), g.br));
  auto hb = t.tanh(t.add(t.add(t.matmul(g.wh, x), t.matmul(g.uh, t.mul(r, s))), g.bh));
  return t.add(t.mul(t.sub(ones, z), s), t.mul(z, hb));
}

}  // namespace

LossTape build_loss_tape(const ModelParams& params, const LabeledSample& sample,
                         const DropoutMask* mask) {
  validate_label(params, sample);
  if (sample.features.channels() != params.channels)
    throw std::invalid_argument("loss: feature channels mismatch");
  if (mask && mask->units() != params.hidden)
    throw std::invalid_argument("loss: mask units do not match hidden size");

  const int w = sample.features.length();
  const int d = params.hidden;

  LossTape lt;
  Tape& t = lt.tape;

  auto reg = [&](const std::string& name, const Matrix& m) {
    Tape::NodeId id = t.input(m);
    lt.param_nodes.emplace_back(name, id);
    return id;
  };
  std::unordered_map<std::string, Tape::NodeId> ids;
  params.for_each_param([&](const std::string& name, const Matrix& m) { ids[name] = reg(name, m); });
  auto gru_ids = [&](const std::string& prefix) {
    return TapeGru{ids[prefix + ".wz"], ids[prefix + ".wr"], ids[prefix + ".wh"],
                   ids[prefix + ".uz"], ids[prefix + ".ur"], ids[prefix + ".uh"],
                   ids[prefix + ".bz"], ids[prefix + ".br"], ids[prefix + ".bh"]};
  };
  const TapeGru enc_fwd = gru_ids("enc_fwd");
  const TapeGru enc_bwd = gru_ids("enc_bwd");
  const TapeGru dec = gru_ids("dec");

  auto ones = t.input(Matrix(d, 1, 1.0));
  auto zero_state = t.input(Matrix(d, 1));

  std::vector<Tape::NodeId> frames(w);
  for (int i = 0; i < w; ++i) {
    Matrix x(params.channels, 1);
    for (int c = 0; c < params.channels; ++c) x(c, 0) = sample.features.frames(i, c);
    frames[i] = t.input(std::move(x));
  }

  std::vector<Tape::NodeId> fwd(w), bwd(w);
  Tape::NodeId s = zero_state;
  for (int i = 0; i < w; ++i) {
    s = tape_gru_step(t, enc_fwd, ones, frames[i], s);
    fwd[i] = s;
  }
  s = zero_state;
  for (int i = w - 1; i >= 0; --i) {
    s = tape_gru_step(t, enc_bwd, ones, frames[i], s);
    bwd[i] = s;
  }

  Tape::NodeId mask_node = -1;
  if (mask) {
    Matrix mv(d, 1);
    for (int j = 0; j < d; ++j) mv(j, 0) = mask->keep[j] ? mask->scale : 0.0;
    mask_node = t.input(std::move(mv));
  }
  std::vector<Tape::NodeId> cols(w);
  for (int i = 0; i < w; ++i) {
    Tape::NodeId hi = t.add(fwd[i], bwd[i]);
    cols[i] = mask ? t.mul(hi, mask_node) : hi;
  }
  auto ht = t.hconcat(cols);  // D x W

  auto wa_t = t.transpose(ids["att.wa"]);
  Tape::NodeId state = zero_state;
  int prev = Vocabulary::kBos;
  Tape::NodeId loss = -1;
  for (int tok : sample.label) {
    if (tok == Vocabulary::kPad) continue;  // padding carries no loss term
    auto pre = t.add(t.matmul(ids["att.wb"], state), ids["att.b"]);
    auto scores = t.matmul(wa_t, t.tanh(t.add_colvec(t.matmul(ids["att.wc"], ht), pre)));
    auto alpha = t.softmax_vec(scores);                 // 1 x W
    auto context = t.matmul(ht, t.transpose(alpha));    // D x 1
    auto x = t.vconcat({t.take_row(ids["embed"], prev), context});
    state = tape_gru_step(t, dec, ones, x, state);
    auto logits = t.add(t.matmul(ids["out.w"], state), ids["out.b"]);
    auto term = t.softmax_xent(logits, tok);
    loss = loss < 0 ? term : t.add(loss, term);
    prev = tok;
  }
  lt.loss = loss;
  return lt;
}

double teacher_forced_loss(const ModelParams& params, const LabeledSample& sample,
                           const DropoutMask* mask) {
  LossTape lt = build_loss_tape(params, sample, mask);
  return lt.tape.value(lt.loss)(0, 0);
}

// ---------------------------------------------------------------------------
// Training (AdaDelta with global-norm clipping)
// ---------------------------------------------------------------------------

ModelParams train(const ModelParams& params, const std::vector<LabeledSample>& dataset,
                  const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& s : dataset) validate_label(params, s);

  ModelParams out = params;
  struct Slot {
    std::string name;
    Matrix* param;
    Matrix grad, eg2, edx2;
  };
  std::vector<Slot> slots;
  out.for_each_param([&](const std::string& name, Matrix& m) {
    slots.push_back({name, &m, Matrix(m.rows, m.cols), Matrix(m.rows, m.cols),
                     Matrix(m.rows, m.cols)});
  });

  Rng rng(Rng::mix(config.seed, 0x747261696eULL));
  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t pos = order.size();
  auto next_index = [&]() {
    if (pos >= order.size()) {
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
      pos = 0;
    }
    return order[pos++];
  };

  for (int step = 0; step < config.iterations; ++step) {
    for (auto& sl : slots) std::fill(sl.grad.data.begin(), sl.grad.data.end(), 0.0);

    for (int b = 0; b < config.batch_size; ++b) {
      const LabeledSample& sample = dataset[next_index()];
      DropoutMask mask;
      const DropoutMask* mask_ptr = nullptr;
      if (config.dropout > 0.0) {
        mask = sample_masks(config.dropout, 1, out.hidden, rng)[0];
        mask_ptr = &mask;
      }
      LossTape lt = build_loss_tape(out, sample, mask_ptr);
      lt.tape.backward(lt.loss);
      if (!std::isfinite(lt.tape.value(lt.loss)(0, 0)))
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
      for (size_t si = 0; si < lt.param_nodes.size(); ++si) {
        const Matrix& g = lt.tape.grad(lt.param_nodes[si].second);
        Matrix& acc = slots[si].grad;
        for (int i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
      }
    }

    double norm_sq = 0.0;
    const double inv_batch = 1.0 / config.batch_size;
    for (auto& sl : slots)
      for (double& g : sl.grad.data) {
        g *= inv_batch;
        norm_sq += g * g;
      }
    const double norm = std::sqrt(norm_sq);
    const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

    for (auto& sl : slots) {
      for (int i = 0; i < sl.grad.size(); ++i) {
        const double g = sl.grad.data[i] * clip;
        sl.eg2.data[i] = config.rho * sl.eg2.data[i] + (1.0 - config.rho) * g * g;
        const double dx = -std::sqrt(sl.edx2.data[i] + config.epsilon) /
                          std::sqrt(sl.eg2.data[i] + config.epsilon) * g;
        sl.edx2.data[i] = config.rho * sl.edx2.data[i] + (1.0 - config.rho) * dx * dx;
        sl.param->data[i] += config.learning_rate * dx;
      }
    }
  }

  out.for_each_param([&](const std::string& name, Matrix& m) {
    if (!all_finite(m)) throw std::runtime_error("train: non-finite parameter " + name);
  });
  return out;
}

}  // namespace seqpl
