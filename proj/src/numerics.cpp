#include "dccmvc/numerics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace dccmvc {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

Tensor::Tensor(Matrix value, bool requires_grad)
    : value_(std::move(value)), requires_grad_(requires_grad) {}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

void Tensor::accumulate_grad(const Matrix& g) {
  if (g.rows() != value_.rows() || g.cols() != value_.cols()) {
    throw std::invalid_argument("gradient shape " + shape_str(g) + " does not match tensor " +
                                shape_str(value_));
  }
  if (grad_) {
    *grad_ += g;
  } else {
    grad_ = g;
  }
}

const Matrix& Var::value() const { return tape_->value(index_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw std::invalid_argument("scalar() on non-scalar value " + shape_str(v));
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor& tensor) {
  if (auto it = leaves_.find(&tensor); it != leaves_.end()) {
    return Var(this, it->second);
  }
  Tensor* target = &tensor;
  BackwardFn fn;
  if (tensor.requires_grad()) {
    fn = [target](const Matrix& g, Tape&) { target->accumulate_grad(g); };
  }
  Var v = record(tensor.value(), tensor.requires_grad(), std::move(fn));
  leaves_.emplace(&tensor, v.index());
  return v;
}

Var Tape::record(Matrix value, bool needs_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t index, const Matrix& g) {
  Node& node = nodes_[index];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.value()));
  }
  for (Node& node : nodes_) node.grad.resize(0, 0);
  if (!nodes_[loss.index()].needs_grad) return;
  nodes_[loss.index()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.size() == 0 || !node.backward) continue;
    node.backward(node.grad, *this);
  }
}

// ---- primitives ------------------------------------------------------------

namespace {

[[noreturn]] void shape_error(std::string_view op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

bool any_needs_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.tape().needs_grad(v.index())) return true;
  }
  return false;
}

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

// Records an elementwise op whose derivative is a function of (input, output).
template <typename Forward, typename Deriv>
Var unary(Var a, Forward forward, Deriv deriv) {
  Tape& tape = a.tape();
  Matrix out = a.value().unaryExpr(forward);
  const std::size_t ia = a.index();
  const bool ng = any_needs_grad({a});
  std::size_t io = tape.size();
  return tape.record(std::move(out), ng, [ia, io, deriv](const Matrix& g, Tape& t) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(io);
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < x.size(); ++k) d.data()[k] = deriv(x.data()[k], y.data()[k]);
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Matrix out;
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), any_needs_grad({a, b}), [ia, ib](const Matrix& g, Tape& t) {
    if (t.needs_grad(ia)) {
      Matrix ga;
      ga.noalias() = g * t.value(ib).transpose();
      t.accumulate(ia, ga);
    }
    if (t.needs_grad(ib)) {
      Matrix gb;
      gb.noalias() = t.value(ia).transpose() * g;
      t.accumulate(ib, gb);
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const std::size_t ia = a.index(), ib = b.index();
  if (x.rows() == y.rows() && x.cols() == y.cols()) {
    return tape.record(x + y, any_needs_grad({a, b}), [ia, ib](const Matrix& g, Tape& t) {
      t.accumulate(ia, g);
      t.accumulate(ib, g);
    });
  }
  if (y.rows() == 1 && y.cols() == x.cols()) {
    Matrix out = x.rowwise() + y.row(0);
    return tape.record(std::move(out), any_needs_grad({a, b}), [ia, ib](const Matrix& g, Tape& t) {
      t.accumulate(ia, g);
      if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
    });
  }
  shape_error("add", x, y);
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(a.value() - b.value(), any_needs_grad({a, b}),
                     [ia, ib](const Matrix& g, Tape& t) {
                       t.accumulate(ia, g);
                       if (t.needs_grad(ib)) t.accumulate(ib, -g);
                     });
}

Var hadamard(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("hadamard", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(a.value().cwiseProduct(b.value()), any_needs_grad({a, b}),
                     [ia, ib](const Matrix& g, Tape& t) {
                       if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                       if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                     });
}

Var scalar_mul(Var a, double s) {
  const std::size_t ia = a.index();
  return a.tape().record(a.value() * s, any_needs_grad({a}),
                         [ia, s](const Matrix& g, Tape& t) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const std::size_t ia = a.index();
  return a.tape().record(a.value().array() + s, any_needs_grad({a}),
                         [ia](const Matrix& g, Tape& t) { t.accumulate(ia, g); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  const Matrix& x = a.value();
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (!(x.data()[k] > 0.0)) {
      throw std::domain_error("log: non-positive input " + std::to_string(x.data()[k]) +
                              " in " + shape_str(x) + " without a clamp floor");
    }
  }
  return unary(
      a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamped_log(Var a, double floor) {
  if (!(floor > 0.0)) throw std::domain_error("clamped_log: floor must be positive");
  return unary(
      a, [floor](double v) { return std::log(v > floor ? v : floor); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var row_softmax(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  const std::size_t ia = a.index();
  const std::size_t io = a.tape().size();
  return a.tape().record(std::move(out), any_needs_grad({a}), [ia, io](const Matrix& g, Tape& t) {
    const Matrix& y = t.value(io);
    // dx = y * (g - <g, y>) per row
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(ia, d);
  });
}

Var sum(Var a) {
  const std::size_t ia = a.index();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), any_needs_grad({a}),
                         [ia, r, c](const Matrix& g, Tape& t) {
                           t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                         });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scalar_mul(sum(a), 1.0 / n);
}

Var col_sums(Var a) {
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows();
  return a.tape().record(a.value().colwise().sum(), any_needs_grad({a}),
                         [ia, r](const Matrix& g, Tape& t) {
                           t.accumulate(ia, g.replicate(r, 1));
                         });
}

Var row_sums(Var a) {
  const std::size_t ia = a.index();
  const Eigen::Index c = a.cols();
  return a.tape().record(a.value().rowwise().sum(), any_needs_grad({a}),
                         [ia, c](const Matrix& g, Tape& t) {
                           t.accumulate(ia, g.replicate(1, c));
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& tape = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    if (&p.tape() != &tape) throw std::invalid_argument("operands recorded on different tapes");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
    ng = ng || tape.needs_grad(p.index());
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.index(), offset);
    offset += p.cols();
  }
  return tape.record(std::move(out), ng, [layout](const Matrix& g, Tape& t) {
    for (const auto& [idx, off] : layout) {
      if (t.needs_grad(idx)) t.accumulate(idx, g.middleCols(off, t.value(idx).cols()));
    }
  });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " +
                                shape_str(a.value()));
  }
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(a.value().middleCols(begin, count), any_needs_grad({a}),
                         [ia, r, c, begin, count](const Matrix& g, Tape& t) {
                           Matrix d = Matrix::Zero(r, c);
                           d.middleCols(begin, count) = g;
                           t.accumulate(ia, d);
                         });
}

Var transpose(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(a.value().transpose(), any_needs_grad({a}),
                         [ia](const Matrix& g, Tape& t) { t.accumulate(ia, g.transpose()); });
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kHadamard: return "hadamard";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kRowSoftmax: return "row_softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kTranspose: return "transpose";
  }
  return "unknown";
}

Var forward_op(Op op, std::span<const Var> inputs, const OpArgs& args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Op::kMatmul: arity(2); return matmul(inputs[0], inputs[1]);
    case Op::kAdd: arity(2); return add(inputs[0], inputs[1]);
    case Op::kSub: arity(2); return sub(inputs[0], inputs[1]);
    case Op::kHadamard: arity(2); return hadamard(inputs[0], inputs[1]);
    case Op::kScalarMul: arity(1); return scalar_mul(inputs[0], args.scalar);
    case Op::kRelu: arity(1); return relu(inputs[0]);
    case Op::kSigmoid: arity(1); return sigmoid(inputs[0]);
    case Op::kExp: arity(1); return exp(inputs[0]);
    case Op::kLog:
      arity(1);
      return args.scalar > 0.0 ? clamped_log(inputs[0], args.scalar) : log(inputs[0]);
    case Op::kSquare: arity(1); return square(inputs[0]);
    case Op::kRowSoftmax: arity(1); return row_softmax(inputs[0]);
    case Op::kSum: arity(1); return sum(inputs[0]);
    case Op::kMean: arity(1); return mean(inputs[0]);
    case Op::kConcatCols: return concat_cols(inputs);
    case Op::kSliceCols: arity(1); return slice_cols(inputs[0], args.begin, args.count);
    case Op::kTranspose: arity(1); return transpose(inputs[0]);
  }
  throw std::invalid_argument("forward_op: unknown op");
}

// ---- Adam ------------------------------------------------------------------

void AdamState::update(std::span<const ParameterRef> params) {
  if (m_.empty()) {
    for (const ParameterRef& p : params) {
      m_.push_back(Matrix::Zero(p.tensor->rows(), p.tensor->cols()));
      v_.push_back(Matrix::Zero(p.tensor->rows(), p.tensor->cols()));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: parameter count changed from " + std::to_string(m_.size()) +
                                " to " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = *params[i].tensor;
    if (t.rows() != m_[i].rows() || t.cols() != m_[i].cols()) {
      throw std::invalid_argument("adam: shape of '" + params[i].name + "' changed to " +
                                  shape_str(t.value()));
    }
    if (t.grad() && !t.grad()->allFinite()) {
      throw std::domain_error("adam: non-finite gradient for parameter '" + params[i].name + "'");
    }
  }

  ++step_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    if (t.grad()) {
      const Matrix& g = *t.grad();
      m_[i] = o.beta1 * m_[i] + (1.0 - o.beta1) * g;
      v_[i] = o.beta2 * v_[i] + (1.0 - o.beta2) * g.cwiseProduct(g);
    } else {
      m_[i] *= o.beta1;
      v_[i] *= o.beta2;
    }
    if (o.learning_rate == 0.0) continue;
    t.mutable_value().array() -=
        o.learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + o.epsilon);
  }
}

}  // namespace dccmvc
