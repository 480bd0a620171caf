#pragma once

// Tape-based reverse-mode differentiation over dense row-major arrays.
//
// A Tape owns every node recorded during one forward pass. Tensors are
// lightweight handles (tape pointer + node index) and stay valid for the
// lifetime of the tape. Gradients follow fixed subgradient conventions at
// kinks: relu'(0) = 0, abs'(0) = 0, clamp_min'(lo) = 0, sqrt'(0) = 0, and
// max_over_axis routes the adjoint to the first maximal element.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fsp::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kAddScalar,
  kMatmul,
  kConcat,
  kSlice,
  kReshape,
  kBroadcastRows,
  kSum,
  kSumAxis,
  kMean,
  kSin,
  kCos,
  kTanh,
  kSqrt,
  kSquare,
  kRelu,
  kClampMin,
  kAbs,
  kMaxOverAxis,
};

class Tape;

/// Handle to a node on a Tape.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Shape& shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Node;
  using Backprop = std::function<void(Tape&, const Node&)>;

  struct Node {
    OpKind kind = OpKind::kLeaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Backprop backprop;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Tensor constant(Shape shape, std::vector<double> value) { return leaf(std::move(shape), std::move(value), false); }
  Tensor variable(Shape shape, std::vector<double> value) { return leaf(std::move(shape), std::move(value), true); }
  Tensor scalar(double v) { return constant({}, {v}); }
  Tensor filled(Shape shape, double v) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
  }

  /// Appends an operation node. `backprop` is only kept when some input needs gradients.
  Tensor record(OpKind kind, std::initializer_list<Tensor> inputs, Shape shape, std::vector<double> value,
                Backprop backprop) {
    return record(kind, std::vector<Tensor>(inputs), std::move(shape), std::move(value), std::move(backprop));
  }

  Tensor record(OpKind kind, const std::vector<Tensor>& inputs, Shape shape, std::vector<double> value,
                Backprop backprop) {
    Node node;
    node.kind = kind;
    node.shape = std::move(shape);
    node.value = std::move(value);
    for (const Tensor& in : inputs) {
      check_owned(in);
      node.parents.push_back(in.id());
      node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Tensor(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar root. Gradients of earlier sweeps are discarded.
  void backward(const Tensor& loss) {
    check_owned(loss);
    if (numel(nodes_[loss.id()].shape) != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id()].shape));
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad.assign(n.value.size(), 0.0);
      } else {
        n.grad.clear();
      }
    }
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.requires_grad && n.backprop) n.backprop(*this, n);
    }
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint accumulator of a parent; empty span when the parent does not need gradients.
  std::span<double> grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    return n.grad;
  }

  void check_owned(const Tensor& t) const {
    if (t.tape_ != this || t.id_ >= nodes_.size()) {
      throw std::invalid_argument("tensor does not belong to this tape");
    }
  }

 private:
  friend class Tensor;

  Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel(shape) != value.size()) {
      throw ShapeError("leaf: shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                       " values, got " + std::to_string(value.size()));
    }
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Tensor(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
inline std::span<const double> Tensor::value() const { return tape_->node(id_).value; }
inline std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }
inline bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
inline double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return value()[0];
}

namespace detail {

inline void same_tape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

inline void expect_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, OpKind kind, Fwd fwd, Deriv deriv) {
  auto xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(kind, {x}, x.shape(), std::move(out), [xid, deriv](Tape& tape, const Tape::Node& self) {
    auto gx = tape.grad_of(xid);
    const auto& xval = tape.node(xid).value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xval[i], self.value[i]);
  });
}

enum class Binary { kAdd, kSub, kMul };

inline Tensor binary(const Tensor& a, const Tensor& b, Binary op, OpKind kind, std::string_view name) {
  same_tape(a, b, name);
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = op == Binary::kAdd ? x + y : op == Binary::kSub ? x - y : x * y;
  }
  const std::size_t aid = a.id();
  const std::size_t bid = b.id();
  return a.tape().record(kind, {a, b}, shape, std::move(out),
                         [aid, bid, a_scalar, b_scalar, op](Tape& tape, const Tape::Node& self) {
                           auto ga = tape.grad_of(aid);
                           auto gb = tape.grad_of(bid);
                           const auto& avl = tape.node(aid).value;
                           const auto& bvl = tape.node(bid).value;
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             const double g = self.grad[i];
                             const std::size_t ia = a_scalar ? 0 : i;
                             const std::size_t ib = b_scalar ? 0 : i;
                             if (!ga.empty()) ga[ia] += op == Binary::kMul ? g * bvl[ib] : g;
                             if (!gb.empty()) {
                               gb[ib] += op == Binary::kMul ? g * avl[ia] : op == Binary::kSub ? -g : g;
                             }
                           }
                         });
}

// Splits `shape` around `axis` into (outer, extent, inner) for strided copies.
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& shape, std::size_t axis) {
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::kAdd, OpKind::kAdd, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::kSub, OpKind::kSub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::kMul, OpKind::kMul, "elementwise_mul");
}

inline Tensor scalar_mul(const Tensor& x, double c) {
  return detail::unary(
      x, OpKind::kScalarMul, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, OpKind::kAddScalar, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scalar_mul(x, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scalar_mul(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return scalar_mul(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

inline Tensor sin(const Tensor& x) {
  return detail::unary(
      x, OpKind::kSin, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

inline Tensor cos(const Tensor& x) {
  return detail::unary(
      x, OpKind::kCos, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, OpKind::kTanh, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.value()) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input " + std::to_string(v));
  }
  return detail::unary(
      x, OpKind::kSqrt, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, OpKind::kSquare, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, OpKind::kRelu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor clamp_min(const Tensor& x, double lo) {
  return detail::unary(
      x, OpKind::kClampMin, [lo](double v) { return v > lo ? v : lo; },
      [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, OpKind::kAbs, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  const std::size_t aid = a.id();
  const std::size_t bid = b.id();
  return a.tape().record(OpKind::kMatmul, {a, b}, {m, n}, std::move(out),
                         [aid, bid, m, k, n](Tape& tape, const Tape::Node& self) {
                           auto ga = tape.grad_of(aid);
                           auto gb = tape.grad_of(bid);
                           const auto& avl = tape.node(aid).value;
                           const auto& bvl = tape.node(bid).value;
                           const double* g = self.grad.data();
                           if (!ga.empty()) {
                             // dA = dC * B^T
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double* brow = bvl.data() + p * n;
                                 const double* grow = g + i * n;
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                 ga[i * k + p] += acc;
                               }
                             }
                           }
                           if (!gb.empty()) {
                             // dB = A^T * dC
                             for (std::size_t i = 0; i < m; ++i) {
                               const double* grow = g + i * n;
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double s = avl[i * k + p];
                                 if (s == 0.0) continue;
                                 double* gbrow = gb.data() + p * n;
                                 for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
                               }
                             }
                           }
                         });
}

/// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  Shape shape = ref;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    detail::same_tape(parts.front(), p, "concat");
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(s));
      }
    }
    shape[axis] += s[axis];
  }
  auto [outer, total, inner] = detail::split_axis(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> extents;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t ext = p.shape()[axis];
    auto pv = p.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * ext * inner, ext * inner, out.data() + (o * total + off) * inner);
    }
    offsets.push_back(off);
    extents.push_back(ext);
    off += ext;
  }
  std::vector<std::size_t> ids;
  for (const Tensor& p : parts) ids.push_back(p.id());
  return parts.front().tape().record(
      OpKind::kConcat, parts, shape, std::move(out),
      [ids, offsets, extents, outer = outer, total = total, inner = inner](Tape& tape, const Tape::Node& self) {
        for (std::size_t q = 0; q < ids.size(); ++q) {
          auto gp = tape.grad_of(ids[q]);
          if (gp.empty()) continue;
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + (o * total + offsets[q]) * inner;
            double* dst = gp.data() + o * extents[q] * inner;
            for (std::size_t i = 0; i < extents[q] * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || begin >= end || end > xs[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + shape_str(xs));
  }
  auto [outer, ext, inner] = detail::split_axis(xs, axis);
  Shape shape = xs;
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  auto xv = x.value();
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + (o * ext + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  const std::size_t xid = x.id();
  return x.tape().record(OpKind::kSlice, {x}, shape, std::move(out),
                         [xid, outer = outer, ext = ext, inner = inner, begin, len](Tape& tape, const Tape::Node& self) {
                           auto gx = tape.grad_of(xid);
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.grad.data() + o * len * inner;
                             double* dst = gx.data() + (o * ext + begin) * inner;
                             for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                           }
                         });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.value().begin(), x.value().end());
  const std::size_t xid = x.id();
  return x.tape().record(OpKind::kReshape, {x}, std::move(shape), std::move(out),
                         [xid](Tape& tape, const Tape::Node& self) {
                           auto gx = tape.grad_of(xid);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                         });
}

/// Repeats a [1, n] (or [n]) row `rows` times, giving [rows, n].
inline Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  const Shape& rs = row.shape();
  const bool ok = (rs.size() == 1) || (rs.size() == 2 && rs[0] == 1);
  if (!ok || rows == 0) throw ShapeError("broadcast_rows: expected a single row, got " + shape_str(rs));
  const std::size_t n = row.size();
  std::vector<double> out(rows * n);
  auto rv = row.value();
  for (std::size_t r = 0; r < rows; ++r) std::copy(rv.begin(), rv.end(), out.begin() + r * n);
  const std::size_t rid = row.id();
  return row.tape().record(OpKind::kBroadcastRows, {row}, {rows, n}, std::move(out),
                           [rid, rows, n](Tape& tape, const Tape::Node& self) {
                             auto gr = tape.grad_of(rid);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[r * n + j];
                             }
                           });
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  const std::size_t xid = x.id();
  return x.tape().record(OpKind::kSum, {x}, {}, {acc}, [xid](Tape& tape, const Tape::Node& self) {
    auto gx = tape.grad_of(xid);
    for (double& g : gx) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  const std::size_t xid = x.id();
  return x.tape().record(OpKind::kMean, {x}, {}, {acc * inv}, [xid, inv](Tape& tape, const Tape::Node& self) {
    auto gx = tape.grad_of(xid);
    for (double& g : gx) g += self.grad[0] * inv;
  });
}

/// Reduces a rank-2 tensor along `axis` by summation.
inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
  detail::expect_rank(x, 2, "sum_axis");
  if (axis > 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  auto xv = x.value();
  std::vector<double> out(axis == 1 ? rows : cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[axis == 1 ? r : c] += xv[r * cols + c];
  }
  const std::size_t xid = x.id();
  const std::size_t extent = out.size();
  return x.tape().record(OpKind::kSumAxis, {x}, {extent}, std::move(out),
                         [xid, rows, cols, axis](Tape& tape, const Tape::Node& self) {
                           auto gx = tape.grad_of(xid);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[axis == 1 ? r : c];
                           }
                         });
}

/// Maximum of a rank-2 tensor along `axis`; ties resolve to the lowest index.
inline Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  detail::expect_rank(x, 2, "max_over_axis");
  if (axis > 1) throw ShapeError("max_over_axis: axis must be 0 or 1");
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  const std::size_t outer = axis == 1 ? rows : cols;
  const std::size_t extent = axis == 1 ? cols : rows;
  auto xv = x.value();
  std::vector<double> out(outer);
  std::vector<std::size_t> argmax(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = axis == 1 ? o * cols : o;
    for (std::size_t e = 1; e < extent; ++e) {
      const std::size_t idx = axis == 1 ? o * cols + e : e * cols + o;
      if (xv[idx] > xv[best]) best = idx;
    }
    argmax[o] = best;
    out[o] = xv[best];
  }
  const std::size_t xid = x.id();
  return x.tape().record(OpKind::kMaxOverAxis, {x}, {outer}, std::move(out),
                         [xid, argmax = std::move(argmax)](Tape& tape, const Tape::Node& self) {
                           auto gx = tape.grad_of(xid);
                           for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                         });
}

/// Optional parameters for the generic `apply` entry point.
struct OpParams {
  double scalar = 0.0;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape shape;
};

/// Records `kind` on the tape of the inputs. Convenience dispatcher over the typed functions above.
inline Tensor apply(OpKind kind, const std::vector<Tensor>& in, const OpParams& p = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument("apply: op expects " + std::to_string(n) + " inputs, got " +
                                  std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::kAdd: need(2); return add(in[0], in[1]);
    case OpKind::kSub: need(2); return sub(in[0], in[1]);
    case OpKind::kMul: need(2); return mul(in[0], in[1]);
    case OpKind::kScalarMul: need(1); return scalar_mul(in[0], p.scalar);
    case OpKind::kAddScalar: need(1); return add_scalar(in[0], p.scalar);
    case OpKind::kMatmul: need(2); return matmul(in[0], in[1]);
    case OpKind::kConcat: return concat(in, p.axis);
    case OpKind::kSlice: need(1); return slice(in[0], p.axis, p.begin, p.end);
    case OpKind::kReshape: need(1); return reshape(in[0], p.shape);
    case OpKind::kBroadcastRows: need(1); return broadcast_rows(in[0], p.begin);
    case OpKind::kSum: need(1); return sum(in[0]);
    case OpKind::kSumAxis: need(1); return sum_axis(in[0], p.axis);
    case OpKind::kMean: need(1); return mean(in[0]);
    case OpKind::kSin: need(1); return sin(in[0]);
    case OpKind::kCos: need(1); return cos(in[0]);
    case OpKind::kTanh: need(1); return tanh(in[0]);
    case OpKind::kSqrt: need(1); return sqrt(in[0]);
    case OpKind::kSquare: need(1); return square(in[0]);
    case OpKind::kRelu: need(1); return relu(in[0]);
    case OpKind::kClampMin: need(1); return clamp_min(in[0], p.scalar);
    case OpKind::kAbs: need(1); return abs(in[0]);
    case OpKind::kMaxOverAxis: need(1); return max_over_axis(in[0], p.axis);
    case OpKind::kLeaf: break;
  }
  throw std::invalid_argument("apply: leaves are created with Tape::constant/variable");
}

/// Scalar-valued function of one tensor, built on the supplied tape.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

/// Max over components of |analytic - central difference| / max(1, |analytic|).
inline double gradient_check(const ScalarFn& f, const Shape& shape, const std::vector<double>& x, double h = 1e-5) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xt = tape.variable(shape, x);
    Tensor y = f(tape, xt);
    tape.backward(y);
    analytic.assign(xt.grad().begin(), xt.grad().end());
  }
  auto eval = [&](const std::vector<double>& at) {
    Tape tape;
    const double v = f(tape, tape.constant(shape, at)).item();
    if (!std::isfinite(v)) throw std::domain_error("gradient_check: non-finite function value");
    return v;
  };
  double worst = 0.0;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = eval(probe);
    probe[i] = x[i] - h;
    const double fm = eval(probe);
    probe[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i])));
  }
  return worst;
}

}  // namespace fsp::ad
