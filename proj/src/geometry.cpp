#include "udepth/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "udepth/error.hpp"
#include "udepth/io.hpp"

namespace udepth {

void CameraRig::validate() const {
  if (!(fx > 0.f) || !(fy > 0.f)) throw ConfigError("camera focal lengths must be positive");
  if (!(baseline_m > 0.f)) throw ConfigError("stereo baseline must be positive");
}

CameraRig load_calibration(const std::string& path) {
  const auto kv = read_key_values(path);
  CameraRig rig;
  rig.fx = static_cast<float>(kv_get(kv, "fx", 0.0));
  rig.fy = static_cast<float>(kv_get(kv, "fy", 0.0));
  rig.cx = static_cast<float>(kv_get(kv, "cx", 0.0));
  rig.cy = static_cast<float>(kv_get(kv, "cy", 0.0));
  rig.baseline_m = static_cast<float>(kv_get(kv, "baseline_m", 0.0));
  rig.validate();
  return rig;
}

void save_calibration(const std::string& path, const CameraRig& rig) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "fx=" << rig.fx << "\nfy=" << rig.fy << "\ncx=" << rig.cx << "\ncy=" << rig.cy
     << "\nbaseline_m=" << rig.baseline_m << "\n";
}

std::array<double, 3> SE3::apply(const std::array<double, 3>& p) const {
  std::array<double, 3> q{};
  for (int r = 0; r < 3; ++r)
    q[static_cast<size_t>(r)] = at(r, 0) * p[0] + at(r, 1) * p[1] + at(r, 2) * p[2] + at(r, 3);
  return q;
}

double SE3::orthogonality_error() const {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += at(k, i) * at(k, j);
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  const double det = at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
                     at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
                     at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
  return std::max(worst, std::abs(det - 1.0));
}

void rotation_zyx(double rx, double ry, double rz, double* R) {
  const double ca = std::cos(rx), sa = std::sin(rx);
  const double cb = std::cos(ry), sb = std::sin(ry);
  const double cc = std::cos(rz), sc = std::sin(rz);
  R[0] = cb * cc;
  R[1] = cc * sa * sb - ca * sc;
  R[2] = ca * cc * sb + sa * sc;
  R[3] = cb * sc;
  R[4] = ca * cc + sa * sb * sc;
  R[5] = ca * sb * sc - cc * sa;
  R[6] = -sb;
  R[7] = cb * sa;
  R[8] = ca * cb;
}

void rotation_zyx_deriv(double rx, double ry, double rz, int k, double* D) {
  const double ca = std::cos(rx), sa = std::sin(rx);
  const double cb = std::cos(ry), sb = std::sin(ry);
  const double cc = std::cos(rz), sc = std::sin(rz);
  switch (k) {
    case 0:  // d/d rx
      D[0] = 0;
      D[1] = cc * ca * sb + sa * sc;
      D[2] = -sa * cc * sb + ca * sc;
      D[3] = 0;
      D[4] = -sa * cc + ca * sb * sc;
      D[5] = -sa * sb * sc - cc * ca;
      D[6] = 0;
      D[7] = cb * ca;
      D[8] = -sa * cb;
      break;
    case 1:  // d/d ry
      D[0] = -sb * cc;
      D[1] = cc * sa * cb;
      D[2] = ca * cc * cb;
      D[3] = -sb * sc;
      D[4] = sa * cb * sc;
      D[5] = ca * cb * sc;
      D[6] = -cb;
      D[7] = -sb * sa;
      D[8] = -ca * sb;
      break;
    default:  // d/d rz
      D[0] = -cb * sc;
      D[1] = -sc * sa * sb - ca * cc;
      D[2] = -ca * sc * sb + sa * cc;
      D[3] = cb * cc;
      D[4] = -ca * sc + sa * sb * cc;
      D[5] = ca * sb * cc + sc * sa;
      D[6] = 0;
      D[7] = 0;
      D[8] = 0;
      break;
  }
}

SE3 pose_to_matrix(const Pose6& p) {
  double R[9];
  rotation_zyx(p.r[0], p.r[1], p.r[2], R);
  SE3 a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.at(r, c) = R[r * 3 + c];
  for (int r = 0; r < 3; ++r) a.at(r, 3) = p.t[static_cast<size_t>(r)];
  return a;
}

Pose6 matrix_to_pose(const SE3& a) {
  Pose6 p;
  double sy = -a.at(2, 0);
  sy = std::max(-1.0, std::min(1.0, sy));
  p.r[1] = std::asin(sy);
  p.r[0] = std::atan2(a.at(2, 1), a.at(2, 2));
  p.r[2] = std::atan2(a.at(1, 0), a.at(0, 0));
  for (int r = 0; r < 3; ++r) p.t[static_cast<size_t>(r)] = a.at(r, 3);
  return p;
}

SE3 compose(const SE3& a, const SE3& b) {
  SE3 c;
  for (int r = 0; r < 4; ++r) {
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a.at(r, k) * b.at(k, j);
      c.at(r, j) = s;
    }
  }
  return c;
}

SE3 invert(const SE3& a) {
  SE3 inv;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) inv.at(r, c) = a.at(c, r);  // R^T
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += inv.at(r, k) * a.at(k, 3);
    inv.at(r, 3) = -s;
  }
  return inv;
}

double rotation_geodesic(const SE3& a, const SE3& b) {
  // trace(Ra * Rb^T)
  double tr = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) tr += a.at(r, k) * b.at(r, k);
  const double c = std::max(-1.0, std::min(1.0, (tr - 1.0) * 0.5));
  return std::acos(c);
}

}  // namespace udepth
