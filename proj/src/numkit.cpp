#include "seqpl/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqpl {

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
  data.assign(static_cast<size_t>(r) * c, fill);
}

Matrix Matrix::from(std::initializer_list<std::initializer_list<double>> rws) {
  Matrix m(static_cast<int>(rws.size()), rws.size() ? static_cast<int>(rws.begin()->size()) : 0);
  int r = 0;
  for (const auto& row : rws) {
    if (static_cast<int>(row.size()) != m.cols)
      throw std::invalid_argument("Matrix::from: ragged rows");
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: shape mismatch " + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
  Matrix out(a.rows, b.cols);
  const double* ap = a.data.data();
  const double* bp = b.data.data();
  double* op = out.data.data();
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = ap[static_cast<size_t>(i) * a.cols + k];
      if (aik == 0.0) continue;
      const double* brow = bp + static_cast<size_t>(k) * b.cols;
      double* orow = op + static_cast<size_t>(i) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data.begin(), a.data.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

static uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t Rng::next_u64() { return splitmix64_next(state_); }

double Rng::uniform() {
  // 53 random bits into [0,1)
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  // rejection sampling to stay unbiased
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<int>(v % un);
}

uint64_t Rng::mix(uint64_t seed, uint64_t index) {
  uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + (index << 1) + 1);
  return splitmix64_next(s);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

std::vector<DropoutMask> sample_masks(double p, int k, int units, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("sample_masks: p must be in [0,1), got " + std::to_string(p));
  if (k < 1) throw std::invalid_argument("sample_masks: k must be >= 1");
  if (units < 1) throw std::invalid_argument("sample_masks: units must be >= 1");
  std::vector<DropoutMask> masks(k);
  for (auto& m : masks) {
    m.p = p;
    m.scale = 1.0 / (1.0 - p);
    m.keep.resize(units);
    for (int u = 0; u < units; ++u) m.keep[u] = rng.uniform() >= p ? 1 : 0;
  }
  return masks;
}

std::vector<double> apply_dropout(std::span<const double> x, const DropoutMask& mask) {
  if (static_cast<int>(x.size()) != mask.units())
    throw std::invalid_argument("apply_dropout: length mismatch, input " +
                                std::to_string(x.size()) + " vs mask " +
                                std::to_string(mask.units()));
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = mask.keep[i] ? x[i] * mask.scale : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::check_id(NodeId id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("tape: input id " + std::to_string(id) +
                                " out of range (forward reference or cycle)");
}

Tape::NodeId Tape::push(Node n) {
  for (NodeId id : n.in) check_id(id);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::input(Matrix v) { return push({Op::kInput, {}, std::move(v), {}, 0, 0.0}); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  Matrix v = seqpl::matmul(nodes_[a].value, nodes_[b].value);
  return push({Op::kMatmul, {a, b}, std::move(v), {}, 0, 0.0});
}

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows) +
                                "x" + std::to_string(a.cols) + " vs " + std::to_string(b.rows) +
                                "x" + std::to_string(b.cols));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  require_same_shape(nodes_[a].value, nodes_[b].value, "add");
  Matrix v = nodes_[a].value;
  for (int i = 0; i < v.size(); ++i) v.data[i] += nodes_[b].value.data[i];
  return push({Op::kAdd, {a, b}, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  require_same_shape(nodes_[a].value, nodes_[b].value, "sub");
  Matrix v = nodes_[a].value;
  for (int i = 0; i < v.size(); ++i) v.data[i] -= nodes_[b].value.data[i];
  return push({Op::kSub, {a, b}, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  require_same_shape(nodes_[a].value, nodes_[b].value, "mul");
  Matrix v = nodes_[a].value;
  for (int i = 0; i < v.size(); ++i) v.data[i] *= nodes_[b].value.data[i];
  return push({Op::kMul, {a, b}, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
  check_id(a);
  Matrix v = nodes_[a].value;
  for (double& x : v.data) x *= factor;
  return push({Op::kScale, {a}, std::move(v), {}, 0, factor});
}

Tape::NodeId Tape::add_colvec(NodeId m, NodeId vec) {
  check_id(m);
  check_id(vec);
  const Matrix& mm = nodes_[m].value;
  const Matrix& vv = nodes_[vec].value;
  if (vv.cols != 1 || vv.rows != mm.rows)
    throw std::invalid_argument("add_colvec: vector shape " + std::to_string(vv.rows) + "x" +
                                std::to_string(vv.cols) + " does not broadcast over " +
                                std::to_string(mm.rows) + "x" + std::to_string(mm.cols));
  Matrix v = mm;
  for (int i = 0; i < v.rows; ++i)
    for (int j = 0; j < v.cols; ++j) v(i, j) += vv(i, 0);
  return push({Op::kAddColvec, {m, vec}, std::move(v), {}, 0, 0.0});
}

template <typename F>
static Matrix map_elem(const Matrix& a, F f) {
  Matrix v = a;
  for (double& x : v.data) x = f(x);
  return v;
}

Tape::NodeId Tape::tanh(NodeId a) {
  check_id(a);
  return push({Op::kTanh, {a}, map_elem(nodes_[a].value, [](double x) { return std::tanh(x); }),
               {}, 0, 0.0});
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  check_id(a);
  return push({Op::kSigmoid, {a},
               map_elem(nodes_[a].value, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }),
               {}, 0, 0.0});
}

Tape::NodeId Tape::exp(NodeId a) {
  check_id(a);
  return push({Op::kExp, {a}, map_elem(nodes_[a].value, [](double x) { return std::exp(x); }),
               {}, 0, 0.0});
}

Tape::NodeId Tape::log(NodeId a) {
  check_id(a);
  return push({Op::kLog, {a}, map_elem(nodes_[a].value, [](double x) { return std::log(x); }),
               {}, 0, 0.0});
}

Tape::NodeId Tape::softmax_vec(NodeId a) {
  check_id(a);
  const Matrix& in = nodes_[a].value;
  if (in.rows != 1 && in.cols != 1)
    throw std::invalid_argument("softmax_vec: expected a vector");
  std::vector<double> s = softmax(std::span<const double>(in.data));
  Matrix v(in.rows, in.cols);
  v.data = std::move(s);
  return push({Op::kSoftmax, {a}, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::softmax_xent(NodeId logits, int target) {
  check_id(logits);
  const Matrix& in = nodes_[logits].value;
  if (in.rows != 1 && in.cols != 1)
    throw std::invalid_argument("softmax_xent: expected a logit vector");
  if (target < 0 || target >= in.size())
    throw std::invalid_argument("softmax_xent: target " + std::to_string(target) +
                                " out of range for " + std::to_string(in.size()) + " classes");
  const double mx = *std::max_element(in.data.begin(), in.data.end());
  double lse = 0.0;
  for (double x : in.data) lse += std::exp(x - mx);
  lse = mx + std::log(lse);
  Matrix v(1, 1);
  v(0, 0) = lse - in.data[target];
  return push({Op::kSoftmaxXent, {logits}, std::move(v), {}, target, 0.0});
}

Tape::NodeId Tape::sum(NodeId a) {
  check_id(a);
  Matrix v(1, 1);
  for (double x : nodes_[a].value.data) v(0, 0) += x;
  return push({Op::kSum, {a}, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::transpose(NodeId a) {
  check_id(a);
  return push({Op::kTranspose, {a}, seqpl::transpose(nodes_[a].value), {}, 0, 0.0});
}

Tape::NodeId Tape::take_row(NodeId a, int row) {
  check_id(a);
  const Matrix& in = nodes_[a].value;
  if (row < 0 || row >= in.rows)
    throw std::invalid_argument("take_row: row " + std::to_string(row) + " out of range");
  Matrix v(in.cols, 1);
  for (int j = 0; j < in.cols; ++j) v(j, 0) = in(row, j);
  return push({Op::kTakeRow, {a}, std::move(v), {}, row, 0.0});
}

Tape::NodeId Tape::hconcat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: no inputs");
  int rows = -1, cols = 0;
  for (NodeId id : parts) {
    check_id(id);
    const Matrix& m = nodes_[id].value;
    if (rows < 0) rows = m.rows;
    if (m.rows != rows) throw std::invalid_argument("hconcat: row mismatch");
    cols += m.cols;
  }
  Matrix v(rows, cols);
  int off = 0;
  for (NodeId id : parts) {
    const Matrix& m = nodes_[id].value;
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) v(i, off + j) = m(i, j);
    off += m.cols;
  }
  return push({Op::kHconcat, parts, std::move(v), {}, 0, 0.0});
}

Tape::NodeId Tape::vconcat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("vconcat: no inputs");
  int rows = 0, cols = -1;
  for (NodeId id : parts) {
    check_id(id);
    const Matrix& m = nodes_[id].value;
    if (cols < 0) cols = m.cols;
    if (m.cols != cols) throw std::invalid_argument("vconcat: column mismatch");
    rows += m.rows;
  }
  Matrix v(rows, cols);
  int off = 0;
  for (NodeId id : parts) {
    const Matrix& m = nodes_[id].value;
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) v(off + i, j) = m(i, j);
    off += m.rows;
  }
  return push({Op::kVconcat, parts, std::move(v), {}, 0, 0.0});
}

const Matrix& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

const Matrix& Tape::grad(NodeId id) const {
  check_id(id);
  return nodes_[id].grad;
}

void Tape::backward(NodeId loss) {
  check_id(loss);
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows != 1 || lv.cols != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + std::to_string(lv.rows) +
                                "x" + std::to_string(lv.cols));
  for (auto& n : nodes_) {
    n.grad = Matrix(n.value.rows, n.value.cols);
  }
  nodes_[loss].grad(0, 0) = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    for (NodeId in : n.in) {
      if (in >= id) throw std::invalid_argument("backward: tape not topologically ordered");
    }
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kMatmul: {
        const Matrix& a = nodes_[n.in[0]].value;
        const Matrix& b = nodes_[n.in[1]].value;
        // dA = g * B^T, dB = A^T * g
        Matrix& ga = nodes_[n.in[0]].grad;
        Matrix& gb = nodes_[n.in[1]].grad;
        for (int i = 0; i < a.rows; ++i)
          for (int k = 0; k < a.cols; ++k) {
            double acc = 0.0;
            for (int j = 0; j < b.cols; ++j) acc += g(i, j) * b(k, j);
            ga(i, k) += acc;
          }
        for (int k = 0; k < b.rows; ++k)
          for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < a.rows; ++i) acc += a(i, k) * g(i, j);
            gb(k, j) += acc;
          }
        break;
      }
      case Op::kAdd: {
        Matrix& ga = nodes_[n.in[0]].grad;
        Matrix& gb = nodes_[n.in[1]].grad;
        for (int i = 0; i < g.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] += g.data[i];
        }
        break;
      }
      case Op::kSub: {
        Matrix& ga = nodes_[n.in[0]].grad;
        Matrix& gb = nodes_[n.in[1]].grad;
        for (int i = 0; i < g.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] -= g.data[i];
        }
        break;
      }
      case Op::kMul: {
        const Matrix& a = nodes_[n.in[0]].value;
        const Matrix& b = nodes_[n.in[1]].value;
        Matrix& ga = nodes_[n.in[0]].grad;
        Matrix& gb = nodes_[n.in[1]].grad;
        for (int i = 0; i < g.size(); ++i) {
          ga.data[i] += g.data[i] * b.data[i];
          gb.data[i] += g.data[i] * a.data[i];
        }
        break;
      }
      case Op::kScale: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.darg;
        break;
      }
      case Op::kAddColvec: {
        Matrix& gm = nodes_[n.in[0]].grad;
        Matrix& gv = nodes_[n.in[1]].grad;
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            gm(i, j) += g(i, j);
            gv(i, 0) += g(i, j);
          }
        break;
      }
      case Op::kTanh: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.size(); ++i) {
          const double y = n.value.data[i];
          ga.data[i] += g.data[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kSigmoid: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.size(); ++i) {
          const double y = n.value.data[i];
          ga.data[i] += g.data[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::kExp: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.value.data[i];
        break;
      }
      case Op::kLog: {
        const Matrix& a = nodes_[n.in[0]].value;
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / a.data[i];
        break;
      }
      case Op::kSoftmax: {
        // J^T g = s .* (g - <g, s>)
        Matrix& ga = nodes_[n.in[0]].grad;
        double dot = 0.0;
        for (int i = 0; i < g.size(); ++i) dot += g.data[i] * n.value.data[i];
        for (int i = 0; i < g.size(); ++i)
          ga.data[i] += n.value.data[i] * (g.data[i] - dot);
        break;
      }
      case Op::kSoftmaxXent: {
        const Matrix& logits = nodes_[n.in[0]].value;
        Matrix& ga = nodes_[n.in[0]].grad;
        std::vector<double> s = softmax(std::span<const double>(logits.data));
        const double gs = g(0, 0);
        for (int i = 0; i < logits.size(); ++i) {
          ga.data[i] += gs * (s[i] - (i == n.iarg ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kSum: {
        Matrix& ga = nodes_[n.in[0]].grad;
        const double gs = g(0, 0);
        for (int i = 0; i < ga.size(); ++i) ga.data[i] += gs;
        break;
      }
      case Op::kTranspose: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
        break;
      }
      case Op::kTakeRow: {
        Matrix& ga = nodes_[n.in[0]].grad;
        for (int j = 0; j < g.rows; ++j) ga(n.iarg, j) += g(j, 0);
        break;
      }
      case Op::kHconcat: {
        int off = 0;
        for (NodeId in : n.in) {
          Matrix& gi = nodes_[in].grad;
          for (int i = 0; i < gi.rows; ++i)
            for (int j = 0; j < gi.cols; ++j) gi(i, j) += g(i, off + j);
          off += gi.cols;
        }
        break;
      }
      case Op::kVconcat: {
        int off = 0;
        for (NodeId in : n.in) {
          Matrix& gi = nodes_[in].grad;
          for (int i = 0; i < gi.rows; ++i)
            for (int j = 0; j < gi.cols; ++j) gi(i, j) += g(off + i, j);
          off += gi.rows;
        }
        break;
      }
    }
  }
}

}  // namespace seqpl
