#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mast {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// A rotation matrix in SO(3). Kept as a plain Eigen matrix; use is_rotation()
// to validate values that come from outside the library.
using RotationMatrix = Mat3;

// Continuous 6D rotation representation: the first two (unnormalized) columns.
struct Rotation6D {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();

  static Rotation6D from_array(std::span<const double, 6> v) {
    return {Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])};
  }
};

struct Pose {
  RotationMatrix rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
};

struct CameraIntrinsics {
  double fx = 572.4114;
  double fy = 573.57043;
  double cx = 325.2611;
  double cy = 242.04899;

  void validate() const;
};

// Axis-aligned 2D rectangle in pixels.
struct Box2D {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

struct AnchorSet {
  std::vector<RotationMatrix> rotations;
  std::vector<double> bins_vx;
  std::vector<double> bins_vy;
  std::vector<double> bins_z;
  // Ranges the bins were generated from; needed for the target graph.
  double vx_min = -200.0, vx_max = 200.0;
  double vy_min = -200.0, vy_max = 200.0;
  double z_min = 0.0, z_max = 2.0;

  double vx_spacing() const { return (vx_max - vx_min) / static_cast<double>(bins_vx.size()); }
  double vy_spacing() const { return (vy_max - vy_min) / static_cast<double>(bins_vy.size()); }
  double z_spacing() const { return (z_max - z_min) / static_cast<double>(bins_z.size()); }
};

struct ObjectModel {
  std::vector<Vec3> points;
  double diameter = 0.0;
  std::vector<RotationMatrix> symmetries{Mat3::Identity()};

  bool is_symmetric() const { return symmetries.size() > 1; }
};

// Gram-Schmidt orthonormalization of the 6D representation into [b1 b2 b3].
// Throws DegenerateRotation for zero or parallel inputs.
RotationMatrix rot6d_to_matrix(const Rotation6D& r);

// Inverse of rot6d_to_matrix on valid rotations: the first two columns.
Rotation6D matrix_to_rot6d(const RotationMatrix& m);

// Angular distance arccos((trace(R1 R2^T) - 1) / 2) with the argument clamped.
double geodesic_distance(const RotationMatrix& r1, const RotationMatrix& r2);

bool is_rotation(const Mat3& m, double tol = 1e-6);

RotationMatrix axis_angle(const Vec3& axis, double angle);

// Uniform random unit quaternion from three uniform variates in [0, 1).
Eigen::Quaterniond uniform_quaternion(double u1, double u2, double u3);

template <typename Rng>
RotationMatrix random_rotation(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng);
  const double u2 = unit(rng);
  const double u3 = unit(rng);
  return uniform_quaternion(u1, u2, u3).toRotationMatrix();
}

// Farthest-point subsampling of a seeded uniform quaternion pool, identity first.
std::vector<RotationMatrix> generate_rotation_anchors(int n, std::uint64_t seed);

// Centers of n uniform bins over [d_min, d_max].
std::vector<double> generate_translation_bins(double d_min, double d_max, int n);

AnchorSet make_anchor_set(int n_rot, int n_vx, int n_vy, int n_z, double v_min, double v_max,
                          double z_min, double z_max, std::uint64_t seed);

// Scalar residuals picked from the regressor heads together with the chosen anchors.
struct AnchorPicks {
  int rotation = 0;
  int vx = 0;
  int vy = 0;
  int z = 0;
};

struct PickedResiduals {
  Rotation6D rotation;  // residual rotation in 6D form; identity means no correction
  double vx = 0.0;
  double vy = 0.0;
  double z = 0.0;
};

// Combines coarse anchors and fine residuals into a camera-frame pose:
// R = R_reg R_cls, z = z_cls + z_reg, x = (v_x,cls + v_x,reg) z / f_x, y analogous.
Pose compose_pose(const AnchorPicks& picks, const PickedResiduals& residuals,
                  const AnchorSet& anchors, const CameraIntrinsics& cam);

// Network output expressed relative to an initial guess.
struct RelativePose {
  RotationMatrix rotation = Mat3::Identity();
  double x = 0.0;
  double y = 0.0;
  double z = 1.0;
};

Pose compose_with_initial_guess(const RelativePose& net, const Pose& init);

// Pinhole size-ratio estimate: identity rotation, depth from the largest box side.
Pose initial_guess_from_box(const Box2D& box, const ObjectModel& model,
                            const CameraIntrinsics& cam);

std::vector<Vec3> apply_pose(const Pose& p, std::span<const Vec3> pts);

// Member of {r_gt * s : s in symmetries} closest to r_pred; ties go to the lowest index.
RotationMatrix closest_symmetric_rotation(const RotationMatrix& r_pred, const RotationMatrix& r_gt,
                                          const ObjectModel& model);

// Image-plane offsets of the projected origin relative to the principal point.
inline double project_vx(const Vec3& t, const CameraIntrinsics& cam) { return t.x() * cam.fx / t.z(); }
inline double project_vy(const Vec3& t, const CameraIntrinsics& cam) { return t.y() * cam.fy / t.z(); }

Vec3 translation_from_image(double vx, double vy, double z, const CameraIntrinsics& cam);

// Maximum pairwise distance, O(n^2).
double point_cloud_diameter(std::span<const Vec3> pts);

}  // namespace mast
