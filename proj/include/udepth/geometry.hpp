#pragma once

#include <array>
#include <string>

namespace udepth {

// Pinhole intrinsics plus the stereo baseline. fx, fy, cx, cy in pixels,
// baseline in meters.
struct CameraRig {
  float fx = 1.f, fy = 1.f, cx = 0.f, cy = 0.f;
  float baseline_m = 1.f;
  void validate() const;  // throws ConfigError on non-positive fx/fy/baseline
};

CameraRig load_calibration(const std::string& path);
void save_calibration(const std::string& path, const CameraRig& rig);

// 6-dof pose: Euler angles (radians) applied in z-y-x order, then translation
// in meters. This is the parametrization the pose regressor outputs.
struct Pose6 {
  std::array<double, 3> r{0, 0, 0};  // rx, ry, rz
  std::array<double, 3> t{0, 0, 0};  // tx, ty, tz
};

// Rigid transform as a 4x4 homogeneous matrix, row-major.
struct SE3 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static SE3 identity() { return SE3{}; }
  double at(int r, int c) const { return m[static_cast<size_t>(r * 4 + c)]; }
  double& at(int r, int c) { return m[static_cast<size_t>(r * 4 + c)]; }
  std::array<double, 3> translation() const { return {at(0, 3), at(1, 3), at(2, 3)}; }
  std::array<double, 3> apply(const std::array<double, 3>& p) const;
  // max |R^T R - I| over entries, plus |det(R) - 1|
  double orthogonality_error() const;
};

// R = Rz(rz) * Ry(ry) * Rx(rx); writes a row-major 3x3 into out.
void rotation_zyx(double rx, double ry, double rz, double* out9);
// derivative of the rotation w.r.t. angle k (0=rx, 1=ry, 2=rz)
void rotation_zyx_deriv(double rx, double ry, double rz, int k, double* out9);

SE3 pose_to_matrix(const Pose6& p);
// Euler extraction; exact inverse of pose_to_matrix for |ry| < pi/2.
Pose6 matrix_to_pose(const SE3& a);

SE3 compose(const SE3& a, const SE3& b);  // a then applied after b: a*b
SE3 invert(const SE3& a);
// angle of the relative rotation between a and b, radians
double rotation_geodesic(const SE3& a, const SE3& b);

}  // namespace udepth
