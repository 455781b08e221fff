#pragma once
// Dense matrices, seeded randomness, dropout masks and a tape-based
// reverse-mode autodiff kernel. Everything downstream computes through this.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace seqpl {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);
  static Matrix from(std::initializer_list<std::initializer_list<double>> rows);

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  int size() const { return rows * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
bool all_finite(const Matrix& a);

// Numerically stable softmax (max subtraction). Throws on empty input.
std::vector<double> softmax(std::span<const double> logits);

// splitmix64: 64-bit seed, counter-advancing state. Identical seed gives an
// identical stream on every platform, and mix() derives independent
// substream seeds so per-index generation stays order-free.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform();              // [0, 1)
  double normal();               // standard normal (Box-Muller, cached spare)
  int uniform_int(int n);        // [0, n)
  static uint64_t mix(uint64_t seed, uint64_t index);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct DropoutMask {
  std::vector<uint8_t> keep;  // 1 = keep, 0 = drop
  double p = 0.0;
  double scale = 1.0;  // 1/(1-p), inverted-dropout scaling

  int units() const { return static_cast<int>(keep.size()); }
};

// K masks for one scoring round; masks are sampled here once and then reused
// for every sample scored in that round.
std::vector<DropoutMask> sample_masks(double p, int k, int units, Rng& rng);

std::vector<double> apply_dropout(std::span<const double> x, const DropoutMask& mask);

// ---------------------------------------------------------------------------
// Tape autodiff. Nodes are appended in topological order (inputs must already
// exist), values are immutable once produced, and backward() does one reverse
// sweep from a scalar loss. Fixed op vocabulary sized for the recognizer.
// ---------------------------------------------------------------------------
class Tape {
 public:
  using NodeId = int;

  NodeId input(Matrix v);  // leaf (parameter or constant)

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double factor);
  NodeId add_colvec(NodeId m, NodeId v);  // broadcast column vector over columns
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId softmax_vec(NodeId a);                 // 1xN or Nx1
  NodeId softmax_xent(NodeId logits, int target);  // fused CE, scalar out
  NodeId sum(NodeId a);                         // reduce to 1x1
  NodeId transpose(NodeId a);
  NodeId take_row(NodeId a, int row);           // row of a, as a column vector
  NodeId hconcat(const std::vector<NodeId>& parts);
  NodeId vconcat(const std::vector<NodeId>& parts);

  const Matrix& value(NodeId id) const;
  // Gradient of the last backward() loss w.r.t. node id (zeros if unreached).
  const Matrix& grad(NodeId id) const;

  // One reverse sweep. loss must be a 1x1 node.
  void backward(NodeId loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    kInput, kMatmul, kAdd, kSub, kMul, kScale, kAddColvec, kTanh, kSigmoid,
    kExp, kLog, kSoftmax, kSoftmaxXent, kSum, kTranspose, kTakeRow,
    kHconcat, kVconcat,
  };
  struct Node {
    Op op;
    std::vector<NodeId> in;
    Matrix value;
    Matrix grad;
    int iarg = 0;      // target index / row index
    double darg = 0.0; // scale factor
  };

  NodeId push(Node n);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace seqpl
