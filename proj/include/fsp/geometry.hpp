#pragma once

// Oriented bounding boxes and their analytic signed distance.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsp/autodiff.hpp"
#include "fsp/field.hpp"

namespace fsp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Box with arbitrary orientation. `rotation` maps box coordinates to world.
struct ObbObstacle {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 half_extents = Vec3::Constant(0.5);

  static ObbObstacle from_yaw(const Vec3& center, double yaw, const Vec3& half_extents) {
    ObbObstacle box;
    box.center = center;
    box.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    box.half_extents = half_extents;
    box.validate();
    return box;
  }

  /// Rotation about world z; exact for boxes built with from_yaw.
  double yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

  void validate() const {
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
      throw GeometryError("obb: rotation is not orthonormal");
    }
    if (std::fabs(rotation.determinant() - 1.0) > 1e-9) throw GeometryError("obb: rotation determinant is not +1");
    if (!(half_extents.array() > 0.0).all()) throw GeometryError("obb: half extents must be positive");
    if (!center.allFinite()) throw GeometryError("obb: center must be finite");
  }

  /// Point expressed in box coordinates.
  Vec3 to_local(const Vec3& p) const { return rotation.transpose() * (p - center); }
};

/// Negative inside, zero on the surface, positive outside.
inline double obb_sdf(const Vec3& point, const ObbObstacle& box) {
  const Vec3 a = box.to_local(point).cwiseAbs() - box.half_extents;
  return a.cwiseMax(0.0).norm() + std::min(a.maxCoeff(), 0.0);
}

/// Signed clearance of a sphere of `radius` around `point`.
inline double surface_clearance(const Vec3& point, double radius, const ObbObstacle& box) {
  if (radius < 0.0) throw GeometryError("surface_clearance: negative radius " + std::to_string(radius));
  return obb_sdf(point, box) - radius;
}

/// Gradient of obb_sdf with respect to the query point.
///
/// Outside the box this is the unit direction from the closest surface point.
/// Inside it is the outward normal of the nearest face; equidistant faces
/// resolve to the lowest axis index and a coordinate of exactly zero counts as
/// the positive side.
inline Vec3 obb_sdf_grad(const Vec3& point, const ObbObstacle& box) {
  const Vec3 q = box.to_local(point);
  const Vec3 a = q.cwiseAbs() - box.half_extents;
  Vec3 local = Vec3::Zero();
  const Vec3 outside = a.cwiseMax(0.0);
  const double norm = outside.norm();
  if (norm > 0.0) {
    for (int i = 0; i < 3; ++i) local[i] = outside[i] / norm * (q[i] < 0.0 ? -1.0 : 1.0);
  } else {
    int axis = 0;
    for (int i = 1; i < 3; ++i) {
      if (a[i] > a[axis]) axis = i;
    }
    local[axis] = q[axis] < 0.0 ? -1.0 : 1.0;
  }
  return box.rotation * local;
}

/// Inside/outside test by comparing box-frame coordinates against the extents.
inline bool obb_contains(const Vec3& point, const ObbObstacle& box) {
  const Vec3 q = box.to_local(point);
  return (q.cwiseAbs().array() < box.half_extents.array()).all();
}

namespace ad_geometry {

using ad::Field;
using ad::Tape;
using ad::Tensor;

/// Box parameters as fields: scalar constants for one shared box or per-element constant tensors.
struct BoxFields {
  std::array<Field, 3> center;
  std::array<std::array<Field, 3>, 3> rotation;
  std::array<Field, 3> half_extents;
};

inline BoxFields box_fields(const ObbObstacle& box) {
  BoxFields f;
  for (int i = 0; i < 3; ++i) {
    f.center[i] = box.center[i];
    f.half_extents[i] = box.half_extents[i];
    for (int j = 0; j < 3; ++j) f.rotation[i][j] = box.rotation(i, j);
  }
  return f;
}

/// One box per element: element e is queried against boxes[e / repeat].
inline BoxFields box_fields(Tape& tape, std::span<const ObbObstacle> boxes, std::size_t repeat) {
  const std::size_t n = boxes.size() * repeat;
  auto column = [&](auto&& get) {
    std::vector<double> v(n);
    for (std::size_t e = 0; e < n; ++e) v[e] = get(boxes[e / repeat]);
    return Field(tape.constant({n}, std::move(v)));
  };
  BoxFields f;
  for (int i = 0; i < 3; ++i) {
    f.center[i] = column([i](const ObbObstacle& b) { return b.center[i]; });
    f.half_extents[i] = column([i](const ObbObstacle& b) { return b.half_extents[i]; });
    for (int j = 0; j < 3; ++j) f.rotation[i][j] = column([i, j](const ObbObstacle& b) { return b.rotation(i, j); });
  }
  return f;
}

/// Differentiable signed distance for `n` points given as coordinate fields.
inline Tensor obb_sdf(Tape& tape, const std::array<Field, 3>& point, const BoxFields& box, std::size_t n) {
  std::array<Field, 3> rel;
  for (int r = 0; r < 3; ++r) rel[r] = point[r] - box.center[r];
  std::vector<Tensor> deficits;
  for (int i = 0; i < 3; ++i) {
    Field local = rel[0] * box.rotation[0][i] + rel[1] * box.rotation[1][i] + rel[2] * box.rotation[2][i];
    Field a = Field(ad::abs(local.materialize(tape, n))) - box.half_extents[i];
    deficits.push_back(ad::reshape(a.materialize(tape, n), {n, 1}));
  }
  Tensor a = ad::concat(deficits, 1);
  Tensor outside = ad::sqrt(ad::sum_axis(ad::square(ad::relu(a)), 1));
  Tensor inside = ad::neg(ad::relu(ad::neg(ad::max_over_axis(a, 1))));
  return ad::add(outside, inside);
}

}  // namespace ad_geometry

}  // namespace fsp
