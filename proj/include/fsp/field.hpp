#pragma once

// Per-element scalar fields used to assemble kinematics and distance graphs.
// A Field is either a compile-time-style constant shared by every element or
// a rank-1 tensor of per-element values. Arithmetic folds constants so that
// structurally zero terms (e.g. off-axis rotation entries of a planar arm)
// never reach the tape.

#include <optional>

#include "fsp/autodiff.hpp"

namespace fsp::ad {

class Field {
 public:
  Field() = default;
  Field(double c) : constant_(c) {}  // NOLINT(google-explicit-constructor)
  Field(Tensor t) : tensor_(std::move(t)) {}  // NOLINT(google-explicit-constructor)

  bool is_constant() const { return !tensor_.has_value(); }
  double constant() const { return constant_; }
  const Tensor& tensor() const { return *tensor_; }

  bool is(double c) const { return is_constant() && constant_ == c; }

  /// Tensor of `n` elements; constants are broadcast onto `tape`.
  Tensor materialize(Tape& tape, std::size_t n) const {
    if (tensor_) return *tensor_;
    return tape.filled({n}, constant_);
  }

 private:
  double constant_ = 0.0;
  std::optional<Tensor> tensor_;
};

inline Field operator+(const Field& a, const Field& b) {
  if (a.is_constant() && b.is_constant()) return a.constant() + b.constant();
  if (a.is(0.0)) return b;
  if (b.is(0.0)) return a;
  if (a.is_constant()) return add_scalar(b.tensor(), a.constant());
  if (b.is_constant()) return add_scalar(a.tensor(), b.constant());
  return add(a.tensor(), b.tensor());
}

inline Field operator*(const Field& a, const Field& b) {
  if (a.is_constant() && b.is_constant()) return a.constant() * b.constant();
  if (a.is(0.0) || b.is(0.0)) return 0.0;
  if (a.is(1.0)) return b;
  if (b.is(1.0)) return a;
  if (a.is_constant()) return scalar_mul(b.tensor(), a.constant());
  if (b.is_constant()) return scalar_mul(a.tensor(), b.constant());
  return mul(a.tensor(), b.tensor());
}

inline Field operator-(const Field& a) { return Field(-1.0) * a; }
inline Field operator-(const Field& a, const Field& b) { return a + (-b); }

}  // namespace fsp::ad
