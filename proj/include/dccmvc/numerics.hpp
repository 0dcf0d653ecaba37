#pragma once

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// A Tensor owns a value and (optionally) an accumulated gradient; it is the
// storage type for parameters and data. A Tape records every operation applied
// to Vars (handles to tape nodes) and replays them in reverse on backward().

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dccmvc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultLogFloor = 1e-12;

std::string shape_str(const Matrix& m);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);

  const Matrix& value() const { return value_; }
  Matrix& mutable_value() { return value_; }

  Eigen::Index rows() const { return value_.rows(); }
  Eigen::Index cols() const { return value_.cols(); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  // Absent until a backward pass reaches this tensor.
  const std::optional<Matrix>& grad() const { return grad_; }
  void accumulate_grad(const Matrix& g);
  void zero_grad() { grad_.reset(); }

 private:
  Matrix value_;
  bool requires_grad_ = false;
  std::optional<Matrix> grad_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var constant(Matrix value);
  // Differentiable input. Registering the same tensor twice returns the same node.
  // Gradients are accumulated into the tensor's grad when it requires grad.
  Var leaf(Tensor& tensor);

  Var record(Matrix value, bool needs_grad, BackwardFn backward);

  // Reverse sweep from a 1x1 loss. Populates grads of reachable leaves.
  void backward(Var loss);

  const Matrix& value(std::size_t index) const { return nodes_[index].value; }
  bool needs_grad(std::size_t index) const { return nodes_[index].needs_grad; }
  // Gradient of an intermediate node after backward(); empty if unreached.
  const Matrix& grad(Var v) const { return nodes_[v.index()].grad; }

  void accumulate(std::size_t index, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> leaves_;
};

// ---- primitives ------------------------------------------------------------

enum class Op {
  kMatmul,
  kAdd,
  kSub,
  kHadamard,
  kScalarMul,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSquare,
  kRowSoftmax,
  kSum,
  kMean,
  kConcatCols,
  kSliceCols,
  kTranspose,
};

std::string_view op_name(Op op);

Var matmul(Var a, Var b);
// b may have the shape of a or be a 1 x cols row (bias broadcast over rows).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scalar_mul(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
// Strict log: every entry must be strictly positive.
Var log(Var a);
// log(max(a, floor)); entries below the floor receive zero gradient.
Var clamped_log(Var a, double floor = kDefaultLogFloor);
Var square(Var a);
Var row_softmax(Var a);
Var sum(Var a);
Var mean(Var a);
// Sum over rows: n x m -> 1 x m.
Var col_sums(Var a);
// Sum over columns: n x m -> n x 1.
Var row_sums(Var a);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var transpose(Var a);

// Generic dispatch used by the gradient suites. Scalar-valued kinds take
// `scalar` (scalar_mul factor, log floor when positive); slice_cols takes
// [begin, begin + count).
struct OpArgs {
  double scalar = 0.0;
  Eigen::Index begin = 0;
  Eigen::Index count = 0;
};
Var forward_op(Op op, std::span<const Var> inputs, const OpArgs& args = {});

// ---- Adam ------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ParameterRef {
  std::string name;
  Tensor* tensor = nullptr;
};

class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  long step() const { return step_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  // One bias-corrected Adam update of every parameter from its accumulated grad
  // (a missing grad counts as zero). Throws before touching anything if a
  // gradient is non-finite.
  void update(std::span<const ParameterRef> params);

 private:
  AdamOptions options_;
  long step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

inline void adam_step(std::span<const ParameterRef> params, AdamState& state) {
  state.update(params);
}

}  // namespace dccmvc
