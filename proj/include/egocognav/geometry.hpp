#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "egocognav/errors.hpp"

namespace egocognav {

// Continuous 6D rotation parametrization: the first two columns of a
// rotation matrix, stored column-major as a1 (0..2) and a2 (3..5).
struct Rot6D {
  std::array<double, 6> a{1, 0, 0, 0, 1, 0};

  static Rot6D identity() { return Rot6D{}; }
};

// Orthonormal 3x3 rotation matrix, row-major.
struct RotMatrix {
  std::array<double, 9> r{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double at(int i, int j) const { return r[i * 3 + j]; }
  double& at(int i, int j) { return r[i * 3 + j]; }

  static RotMatrix identity() { return RotMatrix{}; }

  static RotMatrix yaw(double psi) {
    RotMatrix m;
    const double c = std::cos(psi), s = std::sin(psi);
    m.r = {c, -s, 0, s, c, 0, 0, 0, 1};
    return m;
  }

  RotMatrix transposed() const {
    RotMatrix m;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m.at(i, j) = at(j, i);
    }
    return m;
  }

  RotMatrix operator*(const RotMatrix& o) const {
    RotMatrix m;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
        m.at(i, j) = s;
      }
    }
    return m;
  }

  double det() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
  }

  // Frobenius distance to orthonormality, |R^T R - I|_F.
  double orthonormality_error() const {
    const RotMatrix p = transposed() * (*this);
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double d = p.at(i, j) - (i == j ? 1.0 : 0.0);
        s += d * d;
      }
    }
    return std::sqrt(s);
  }

  bool is_rotation(double tol = 1e-6) const {
    return orthonormality_error() <= tol && std::fabs(det() - 1.0) <= tol;
  }
};

// One 10 Hz step of body-frame motion: planar translation plus heading change.
struct BodyDelta {
  double dx = 0.0;    // meters, forward
  double dy = 0.0;    // meters, left
  double dpsi = 0.0;  // radians
};

// Goal expressed relative to the current body frame.
struct GoalEncoding {
  double d = 0.0;   // meters
  double sb = 0.0;  // sin(bearing)
  double cb = 1.0;  // cos(bearing)
};

// Normalized image coordinates, clamped to [0,1] at ingestion.
struct GazePoint {
  double u = 0.5;
  double v = 0.5;
};

// Planar pose: position plus yaw heading in a z-up world frame.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
};

namespace detail {
inline double dot3(const double* a, const double* b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm3(const double* a) { return std::sqrt(dot3(a, a)); }
}  // namespace detail

// Gram-Schmidt on the two stored columns; third column from the cross
// product. Throws DegenerateInput when a1 is near zero or a2 is near
// parallel to a1 (threshold 1e-8), which signals corrupt data.
inline RotMatrix rot6d_to_matrix(const Rot6D& r) {
  constexpr double kDegenerate = 1e-8;
  const double* a1 = r.a.data();
  const double* a2 = r.a.data() + 3;
  for (double v : r.a) {
    if (!std::isfinite(v)) throw DegenerateInput("rot6d: non-finite input");
  }
  const double n1 = detail::norm3(a1);
  if (n1 <= kDegenerate) throw DegenerateInput("rot6d: first column near zero");
  double b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
  const double proj = detail::dot3(b1, a2);
  double res[3] = {a2[0] - proj * b1[0], a2[1] - proj * b1[1],
                   a2[2] - proj * b1[2]};
  const double n2 = detail::norm3(res);
  if (n2 <= kDegenerate) {
    throw DegenerateInput("rot6d: columns near parallel");
  }
  double b2[3] = {res[0] / n2, res[1] / n2, res[2] / n2};
  double b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
                  b1[0] * b2[1] - b1[1] * b2[0]};
  RotMatrix m;
  for (int i = 0; i < 3; ++i) {
    m.at(i, 0) = b1[i];
    m.at(i, 1) = b2[i];
    m.at(i, 2) = b3[i];
  }
  return m;
}

// Inverse map: keep the first two columns.
inline Rot6D matrix_to_rot6d(const RotMatrix& m) {
  if (!m.is_rotation()) throw NotARotation("matrix_to_rot6d: invalid input");
  Rot6D r;
  for (int i = 0; i < 3; ++i) {
    r.a[i] = m.at(i, 0);
    r.a[3 + i] = m.at(i, 1);
  }
  return r;
}

// Entrywise L1 of (pred^T gt - I). Zero iff pred == gt, symmetric, and
// bounded by 12.
inline double relative_rotation_l1(const RotMatrix& pred, const RotMatrix& gt) {
  const RotMatrix rel = pred.transposed() * gt;
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      s += std::fabs(rel.at(i, j) - (i == j ? 1.0 : 0.0));
    }
  }
  return s;
}

// Integrates body-frame deltas from a start pose. The step-t translation is
// expressed in the body frame of pose t-1; heading updates after the
// translation.
inline std::vector<Pose2D> integrate_deltas(const Pose2D& start,
                                            const std::vector<BodyDelta>& deltas) {
  std::vector<Pose2D> out;
  out.reserve(deltas.size());
  Pose2D p = start;
  for (const BodyDelta& d : deltas) {
    const double c = std::cos(p.psi), s = std::sin(p.psi);
    p.x += c * d.dx - s * d.dy;
    p.y += s * d.dx + c * d.dy;
    p.psi += d.dpsi;
    out.push_back(p);
  }
  return out;
}

// Inverse of integrate_deltas: recovers per-step body-frame deltas from a
// world pose sequence. Heading changes are wrapped into [-pi, pi].
inline std::vector<BodyDelta> world_to_body_deltas(const std::vector<Pose2D>& poses) {
  if (poses.size() < 2) {
    throw TooShort("world_to_body_deltas needs at least 2 poses");
  }
  std::vector<BodyDelta> out;
  out.reserve(poses.size() - 1);
  for (size_t i = 1; i < poses.size(); ++i) {
    const Pose2D& prev = poses[i - 1];
    const double wx = poses[i].x - prev.x;
    const double wy = poses[i].y - prev.y;
    const double c = std::cos(prev.psi), s = std::sin(prev.psi);
    BodyDelta d;
    d.dx = c * wx + s * wy;
    d.dy = -s * wx + c * wy;
    d.dpsi = std::remainder(poses[i].psi - prev.psi, 2.0 * M_PI);
    out.push_back(d);
  }
  return out;
}

// Distance and bearing of a world goal in the current body frame. A goal at
// the current position returns (0, 0, 1) since the bearing is undefined.
inline GoalEncoding encode_goal(const Pose2D& pose, double goal_x,
                                double goal_y) {
  const double wx = goal_x - pose.x;
  const double wy = goal_y - pose.y;
  const double d = std::hypot(wx, wy);
  if (d == 0.0) return GoalEncoding{0.0, 0.0, 1.0};
  const double c = std::cos(pose.psi), s = std::sin(pose.psi);
  const double bx = c * wx + s * wy;
  const double by = -s * wx + c * wy;
  const double beta = std::atan2(by, bx);
  return GoalEncoding{d, std::sin(beta), std::cos(beta)};
}

}  // namespace egocognav
