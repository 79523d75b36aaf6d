#include "mast/geometry.hpp"

#include "mast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mast {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidArgument("camera focal lengths must be positive");
  }
}

RotationMatrix rot6d_to_matrix(const Rotation6D& r) {
  const double n1 = r.a1.norm();
  if (!(n1 > 1e-12) || !std::isfinite(n1)) {
    throw DegenerateRotation("6D rotation: first vector is zero");
  }
  const Vec3 b1 = r.a1 / n1;
  const Vec3 u2 = r.a2 - b1.dot(r.a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > 1e-12 * std::max(1.0, r.a2.norm()))) {
    throw DegenerateRotation("6D rotation: vectors are parallel or second vector is zero");
  }
  const Vec3 b2 = u2 / n2;
  RotationMatrix m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Rotation6D matrix_to_rot6d(const RotationMatrix& m) { return {m.col(0), m.col(1)}; }

double geodesic_distance(const RotationMatrix& r1, const RotationMatrix& r2) {
  const double c = std::clamp(((r1 * r2.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

bool is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  const Mat3 e = m.transpose() * m - Mat3::Identity();
  return e.cwiseAbs().maxCoeff() <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

RotationMatrix axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Eigen::Quaterniond uniform_quaternion(double u1, double u2, double u3) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  // Eigen's constructor order is (w, x, y, z).
  return Eigen::Quaterniond(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2),
                            a * std::cos(two_pi * u2), b * std::sin(two_pi * u3));
}

std::vector<RotationMatrix> generate_rotation_anchors(int n, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("generate_rotation_anchors: n must be >= 2");
  const std::size_t pool_size = 100 * static_cast<std::size_t>(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Quaterniond> pool;
  pool.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) {
    const double u1 = unit(rng);
    const double u2 = unit(rng);
    const double u3 = unit(rng);
    pool.push_back(uniform_quaternion(u1, u2, u3));
  }

  // closeness[i] = max |<q_i, q_chosen>|; geodesic distance is 2 acos of it,
  // so the farthest candidate is the one with the smallest closeness.
  std::vector<double> closeness(pool_size);
  std::vector<char> taken(pool_size, 0);
  const Eigen::Quaterniond identity = Eigen::Quaterniond::Identity();
  for (std::size_t i = 0; i < pool_size; ++i) closeness[i] = std::abs(pool[i].dot(identity));

  std::vector<RotationMatrix> anchors;
  anchors.reserve(static_cast<std::size_t>(n));
  anchors.push_back(Mat3::Identity());
  while (anchors.size() < static_cast<std::size_t>(n)) {
    std::size_t best = pool_size;
    double best_closeness = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool_size; ++i) {
      if (!taken[i] && closeness[i] < best_closeness) {
        best_closeness = closeness[i];
        best = i;
      }
    }
    taken[best] = 1;
    const Eigen::Quaterniond& q = pool[best];
    anchors.push_back(q.toRotationMatrix());
    for (std::size_t i = 0; i < pool_size; ++i) {
      closeness[i] = std::max(closeness[i], std::abs(pool[i].dot(q)));
    }
  }
  return anchors;
}

std::vector<double> generate_translation_bins(double d_min, double d_max, int n) {
  if (n < 1) throw InvalidArgument("generate_translation_bins: n must be >= 1");
  if (!(d_max > d_min)) throw InvalidArgument("generate_translation_bins: empty range");
  std::vector<double> centers(static_cast<std::size_t>(n));
  const double width = (d_max - d_min) / static_cast<double>(n);
  for (int i = 0; i < n; ++i) centers[static_cast<std::size_t>(i)] = d_min + (i + 0.5) * width;
  return centers;
}

AnchorSet make_anchor_set(int n_rot, int n_vx, int n_vy, int n_z, double v_min, double v_max,
                          double z_min, double z_max, std::uint64_t seed) {
  AnchorSet a;
  a.rotations = n_rot == 1 ? std::vector<RotationMatrix>{Mat3::Identity()}
                           : generate_rotation_anchors(n_rot, seed);
  a.bins_vx = generate_translation_bins(v_min, v_max, n_vx);
  a.bins_vy = generate_translation_bins(v_min, v_max, n_vy);
  a.bins_z = generate_translation_bins(z_min, z_max, n_z);
  a.vx_min = a.vy_min = v_min;
  a.vx_max = a.vy_max = v_max;
  a.z_min = z_min;
  a.z_max = z_max;
  return a;
}

Vec3 translation_from_image(double vx, double vy, double z, const CameraIntrinsics& cam) {
  return {vx * z / cam.fx, vy * z / cam.fy, z};
}

Pose compose_pose(const AnchorPicks& picks, const PickedResiduals& residuals,
                  const AnchorSet& anchors, const CameraIntrinsics& cam) {
  auto in_range = [](int i, std::size_t n) { return i >= 0 && static_cast<std::size_t>(i) < n; };
  if (!in_range(picks.rotation, anchors.rotations.size()) ||
      !in_range(picks.vx, anchors.bins_vx.size()) || !in_range(picks.vy, anchors.bins_vy.size()) ||
      !in_range(picks.z, anchors.bins_z.size())) {
    throw InvalidArgument("compose_pose: anchor index out of range");
  }
  const auto idx = [](int i) { return static_cast<std::size_t>(i); };
  const double z = anchors.bins_z[idx(picks.z)] + residuals.z;
  if (!(z > 0.0)) throw NonPositiveDepth("compose_pose: composed depth is not positive");
  Pose p;
  p.rotation = rot6d_to_matrix(residuals.rotation) * anchors.rotations[idx(picks.rotation)];
  p.translation = translation_from_image(anchors.bins_vx[idx(picks.vx)] + residuals.vx,
                                         anchors.bins_vy[idx(picks.vy)] + residuals.vy, z, cam);
  return p;
}

Pose compose_with_initial_guess(const RelativePose& net, const Pose& init) {
  if (!(init.translation.z() > 0.0) || !(net.z > 0.0)) {
    throw NonPositiveDepth("compose_with_initial_guess: depth must be positive");
  }
  Pose p;
  p.rotation = net.rotation * init.rotation;
  p.translation = Vec3(net.x + init.translation.x(), net.y + init.translation.y(),
                       net.z * init.translation.z());
  return p;
}

Pose initial_guess_from_box(const Box2D& box, const ObjectModel& model,
                            const CameraIntrinsics& cam) {
  if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
    throw InvalidArgument("initial_guess_from_box: box must have positive area");
  }
  const double z = cam.fx * model.diameter / std::max(box.width(), box.height());
  Pose p;
  p.translation = Vec3((box.center_x() - cam.cx) * z / cam.fx, (box.center_y() - cam.cy) * z / cam.fy, z);
  return p;
}

std::vector<Vec3> apply_pose(const Pose& p, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& x : pts) out.push_back(p.rotation * x + p.translation);
  return out;
}

RotationMatrix closest_symmetric_rotation(const RotationMatrix& r_pred, const RotationMatrix& r_gt,
                                          const ObjectModel& model) {
  if (model.symmetries.empty()) throw InvalidArgument("closest_symmetric_rotation: no symmetries");
  RotationMatrix best = r_gt * model.symmetries.front();
  double best_d = geodesic_distance(r_pred, best);
  for (std::size_t i = 1; i < model.symmetries.size(); ++i) {
    const RotationMatrix cand = r_gt * model.symmetries[i];
    const double d = geodesic_distance(r_pred, cand);
    if (d < best_d) {
      best_d = d;
      best = cand;
    }
  }
  return best;
}

double point_cloud_diameter(std::span<const Vec3> pts) {
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      best = std::max(best, (pts[i] - pts[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

}  // namespace mast
