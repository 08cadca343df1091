#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "udepth/geometry.hpp"
#include "udepth/rng.hpp"
#include "udepth/tensor.hpp"

namespace udepth {

struct StereoSample {
  Tensor left, right;     // [3,H,W] in [0,1]
  Tensor gt_disparity;    // [1,H,W] pixels, right-aligned; optional (empty)
  CameraRig rig;
};

struct TemporalSample {
  std::vector<Tensor> frames;   // n x [3,H,W]
  std::vector<Pose6> gt_poses;  // n-1 relative motions, frame k -> k+1 coords
  Tensor gt_depth;              // [1,H,W] meters aligned with frames[0]; optional
};

// Textured fronto-parallel plane(s) rendered into both stereo views and a
// short temporal snippet, all with exact ground truth. The right view is the
// clamped-bilinear horizontal shift of the left raster by the ground-truth
// disparity, so it agrees with the warp operators to float rounding.
struct SceneConfig {
  int height = 64, width = 128;
  float baseline_m = 0.5f;
  float focal_px = 80.f;       // fx = fy
  float depth_m = 10.f;        // background plane; disparity = b*fx/depth
  int layers = 1;              // 1..3; extra layers are nearer rectangles
  int noise_octaves = 4;
  int n_frames = 3;
  float motion_tx_m = -0.25f;  // per-step translation of the temporal pose
  CameraRig rig() const;
};

std::pair<StereoSample, TemporalSample> generate_synthetic(std::uint64_t seed,
                                                           const SceneConfig& cfg);

// 8-bit RGB PPM (P6) or PNG; values scaled to [0,1]
Tensor load_image(const std::string& path);
Tensor load_image(const std::string& path, int target_h, int target_w);
void save_image_ppm(const std::string& path, const Tensor& image);  // [3,H,W] or [1,H,W]

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w);
Tensor flip_horizontal(const Tensor& chw);

struct AugmentParams {
  bool flip = false;
  bool crop = false;
  float crop_x0 = 0.f, crop_y0 = 0.f;      // fractional top-left
  float crop_w = 1.f, crop_h = 1.f;        // fractional extent
  float brightness = 1.f;                  // [0.5, 2.0]
  float gamma = 1.f;                       // [0.8, 1.2]
  float color[3] = {1.f, 1.f, 1.f};        // per-channel, [0.8, 1.2]
  static AugmentParams identity() { return {}; }
  static AugmentParams draw(Rng& rng);
};

// Flip mirrors both views and swaps the left/right roles; crop keeps at least
// 60% of the area and resizes back; photometric changes are shared by both
// views. Outputs stay in [0,1] at the input resolution.
StereoSample augment(const StereoSample& s, Rng& rng);
StereoSample augment_with(const StereoSample& s, const AugmentParams& p);

struct SplitRecord {
  std::string left, right, gt_depth;  // gt_depth may be empty
};

// one record per line: left right [gt_depth]; '#' lines skipped
std::vector<SplitRecord> read_split_list(const std::string& path);

// "UDT1" raster of shape [1,H,W] in meters; zeros mark missing pixels
Tensor load_depth_gt(const std::string& path);

}  // namespace udepth
