#include "udepth/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "udepth/error.hpp"

namespace udepth {

DepthReport depth_metrics(const Tensor& pred, const Tensor& gt, double cap_m,
                          const std::optional<CropRect>& crop) {
  if (!pred.same_shape(gt))
    throw DimensionError("depth_metrics: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  if (pred.rank() < 2) throw DimensionError("depth_metrics: expects a [..,H,W] map");
  const int w = pred.dim(pred.rank() - 1);
  const int h = pred.dim(pred.rank() - 2);
  const std::int64_t planes = pred.size() / (std::int64_t(h) * w);

  const double lo = 1e-3;
  const double hi = cap_m > 0 ? cap_m : std::numeric_limits<double>::infinity();
  auto cl = [&](double v) { return std::min(hi, std::max(lo, v)); };

  DepthReport r;
  double abs_rel = 0, sq_rel = 0, se = 0, se_log = 0;
  std::int64_t d1 = 0, d2 = 0, d3 = 0, n = 0;
  for (std::int64_t p = 0; p < planes; ++p) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (crop && (x < crop->x0 || x >= crop->x1 || y < crop->y0 || y >= crop->y1)) continue;
        const std::int64_t i = (p * h + y) * w + x;
        const double gv = gt[i];
        if (!(gv > 0)) continue;
        const double g = cl(gv);
        const double d = cl(pred[i]);
        const double diff = d - g;
        abs_rel += std::abs(diff) / g;
        sq_rel += diff * diff / g;
        se += diff * diff;
        const double dl = std::log(d) - std::log(g);
        se_log += dl * dl;
        const double ratio = std::max(d / g, g / d);
        if (ratio < 1.25) ++d1;
        if (ratio < 1.25 * 1.25) ++d2;
        if (ratio < 1.25 * 1.25 * 1.25) ++d3;
        ++n;
      }
    }
  }
  if (n == 0) throw ContractError("depth_metrics: no valid ground-truth pixels");
  r.n_valid = n;
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(se / n);
  r.rmse_log = std::sqrt(se_log / n);
  r.delta1 = double(d1) / n;
  r.delta2 = double(d2) / n;
  r.delta3 = double(d3) / n;
  return r;
}

namespace {

// absolute trajectory from relative frame-to-frame motions: A_0 = I and
// A_{k+1} = A_k * inv(M_{k->k+1}), so translation(A_k) is camera k's position
// in frame-0 coordinates
std::vector<SE3> chain_relative(std::span<const Pose6> rel) {
  std::vector<SE3> abs_poses;
  abs_poses.push_back(SE3::identity());
  for (const Pose6& p : rel)
    abs_poses.push_back(compose(abs_poses.back(), invert(pose_to_matrix(p))));
  return abs_poses;
}

// least-squares similarity/rigid alignment of point sets (Umeyama)
void align_points(const std::vector<std::array<double, 3>>& from,
                  const std::vector<std::array<double, 3>>& to, bool with_scale,
                  Eigen::Matrix3d& R, Eigen::Vector3d& t, double& s) {
  const int n = static_cast<int>(from.size());
  Eigen::MatrixXd A(3, n), B(3, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      A(k, i) = from[static_cast<size_t>(i)][static_cast<size_t>(k)];
      B(k, i) = to[static_cast<size_t>(i)][static_cast<size_t>(k)];
    }
  const Eigen::Vector3d ma = A.rowwise().mean(), mb = B.rowwise().mean();
  A.colwise() -= ma;
  B.colwise() -= mb;
  const Eigen::Matrix3d cov = B * A.transpose() / double(n);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2, 2) = -1;
  R = svd.matrixU() * S * svd.matrixV().transpose();
  s = 1.0;
  if (with_scale) {
    const double var_a = A.squaredNorm() / double(n);
    if (var_a > 1e-12) s = (svd.singularValues().asDiagonal() * S).trace() / var_a;
  }
  t = mb - s * R * ma;
}

}  // namespace

AteReport ate_snippet(std::span<const Pose6> pred, std::span<const Pose6> gt, Alignment align) {
  if (pred.size() != gt.size())
    throw ContractError("ate_snippet: trajectories have different lengths");
  if (pred.empty()) throw ContractError("ate_snippet: empty snippet");

  const std::vector<SE3> ap = chain_relative(pred);
  const std::vector<SE3> ag = chain_relative(gt);

  // the shared identity anchor carries no information (it is equal on both
  // sides by construction), so residuals run over the moved frames only
  const size_t n = ap.size() - 1;
  std::vector<std::array<double, 3>> pp(n), pg(n);
  for (size_t i = 0; i < n; ++i) {
    pp[i] = ap[i + 1].translation();
    pg[i] = ag[i + 1].translation();
  }

  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double s = 1.0;
  if (align != Alignment::None) align_points(pp, pg, align == Alignment::RigidScale, R, t, s);

  double se = 0.0, rsum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p(pp[i][0], pp[i][1], pp[i][2]);
    const Eigen::Vector3d q = s * R * p + t;
    const Eigen::Vector3d g(pg[i][0], pg[i][1], pg[i][2]);
    se += (q - g).squaredNorm();
    rsum += rotation_geodesic(ap[i + 1], ag[i + 1]);
  }
  AteReport r;
  r.t_ate = std::sqrt(se / double(n));
  r.r_ate = rsum / double(n);
  return r;
}

std::vector<SE3> read_pose_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<SE3> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i]))
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected 12 numbers");
    double extra;
    if (ss >> extra)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 12 numbers");
    SE3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m.at(r, c) = v[r * 4 + c];
    if (m.orthogonality_error() > 1e-3)
      throw ParseError(path + ":" + std::to_string(lineno) + ": rotation block not orthonormal");
    // polar re-orthonormalization of the rotation block
    Eigen::Matrix3d R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) R(r, c) = m.at(r, c);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2, 2) = -1;
    const Eigen::Matrix3d Rn = svd.matrixU() * S * svd.matrixV().transpose();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m.at(r, c) = Rn(r, c);
    poses.push_back(m);
  }
  return poses;
}

void write_pose_file(const std::string& path, std::span<const SE3> poses) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << std::setprecision(17);
  for (const SE3& m : poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) os << m.at(r, c) << (r == 2 && c == 3 ? "" : " ");
    os << "\n";
  }
}

std::string format_depth_report(const DepthReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "abs_rel=" << r.abs_rel << "\nsq_rel=" << r.sq_rel << "\nrmse=" << r.rmse
     << "\nrmse_log=" << r.rmse_log << "\ndelta1=" << r.delta1 << "\ndelta2=" << r.delta2
     << "\ndelta3=" << r.delta3 << "\nn_valid=" << r.n_valid << "\n";
  os << "depth\t" << r.abs_rel << "\t" << r.sq_rel << "\t" << r.rmse << "\t" << r.rmse_log << "\t"
     << r.delta1 << "\t" << r.delta2 << "\t" << r.delta3 << "\t" << r.n_valid << "\n";
  return os.str();
}

std::string format_ate_report(const AteReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "t_ate=" << r.t_ate << "\nr_ate=" << r.r_ate << "\n";
  os << "ate\t" << r.t_ate << "\t" << r.r_ate << "\n";
  return os.str();
}

}  // namespace udepth
