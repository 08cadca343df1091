#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "udepth/geometry.hpp"
#include "udepth/tensor.hpp"

namespace udepth {

struct DepthReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  std::int64_t n_valid = 0;
};

// pixel rectangle, half-open: x in [x0,x1), y in [y0,y1)
struct CropRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Errors over pixels with gt > 0 (and inside the crop when given); both maps
// are clamped to [1e-3, cap_m] first. cap_m <= 0 disables the cap. Thresholds
// are 1.25, 1.25^2, 1.25^3. Throws ContractError when no pixel is valid.
DepthReport depth_metrics(const Tensor& pred, const Tensor& gt, double cap_m,
                          const std::optional<CropRect>& crop = std::nullopt);

struct AteReport {
  double t_ate = 0;  // meters, RMSE over the snippet positions
  double r_ate = 0;  // radians, mean geodesic rotation error
};

enum class Alignment { None, Rigid, RigidScale };

// Relative poses are chained into absolute trajectories anchored at the
// identity; with Rigid (or RigidScale) the predicted positions are
// least-squares aligned to the ground truth before the residuals. The shared
// anchor frame is excluded from the residuals (it is identical on both sides
// by construction).
AteReport ate_snippet(std::span<const Pose6> pred, std::span<const Pose6> gt, Alignment align);

// one line per frame: 12 numbers, the top 3x4 of the homogeneous matrix.
// Slightly non-orthonormal rotations (within 1e-3) are re-orthonormalized.
std::vector<SE3> read_pose_file(const std::string& path);
void write_pose_file(const std::string& path, std::span<const SE3> poses);

// key=value block plus a single tab-separated record line
std::string format_depth_report(const DepthReport& r);
std::string format_ate_report(const AteReport& r);

}  // namespace udepth
