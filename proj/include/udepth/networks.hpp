#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "udepth/geometry.hpp"
#include "udepth/tape.hpp"

namespace udepth {

struct NetworkConfig {
  float width_mult = 1.f;  // 1, 1/2, 1/4 or 1/8
  int input_h = 256;
  int input_w = 512;
  int n_frames = 3;            // snippet length for the pose network
  float max_disp_frac = 0.3f;  // sigmoid ceiling on normalized disparity
  void validate() const;       // resolution must be divisible by 32
  int scaled(int base_channels) const;
};

struct Model {
  std::string name;
  std::vector<Parameter> params;
  int add_param(const std::string& param_name, Tensor value);
  Parameter* find(const std::string& param_name);
  const Parameter* find(const std::string& param_name) const;
};

std::int64_t param_count(const Model& m);

struct ConvSpec {
  std::string name;
  int in_ch = 0, out_ch = 0, k = 3, stride = 1;
  int w = -1, b = -1;  // indices into Model::params
};

// Puts every parameter on the tape (in declaration order) so gradients can be
// read back per parameter after backward().
std::vector<Var> bind_params(Tape& t, const Model& m);

// ---- disparity network -----------------------------------------------------
// Encoder conv1..conv5b, decoder upconv5..disp1 with skip connections and
// four sigmoid-bounded 2-channel disparity heads (channel 0 = left-aligned,
// channel 1 = right-aligned, values in [0, max_disp_frac] width units).

struct DispNet {
  NetworkConfig cfg;
  Model model;
  ConvSpec conv1, conv1b, conv2, conv2b, conv3, conv3b, conv4, conv4b, conv5, conv5b;
  ConvSpec upconv5, iconv5, upconv4, iconv4, disp4, upconv3, iconv3, disp3, upconv2, iconv2,
      disp2, upconv1, iconv1, disp1;
};

struct DispNetRun {
  std::array<Var, 4> disp;  // [0] full resolution .. [3] 1/8 resolution
  std::vector<Var> param_vars;
};

struct DispOutputs {
  std::array<Tensor, 4> disp;
};

DispNet build_dispnet(const NetworkConfig& cfg, std::uint64_t seed);
// bound, when given, reuses already-bound parameter vars so several forward
// passes on one tape share a single gradient accumulator per parameter
DispNetRun dispnet_forward(Tape& t, const DispNet& net, Var image,
                           const std::vector<Var>* bound = nullptr);
DispOutputs dispnet_infer(const DispNet& net, const Tensor& image);

// ---- pose network -----------------------------------------------------------
// Seven stride-2 convs, one fully connected layer, then linear r and t heads
// producing (n_frames-1) x 6 values per sample.

struct PoseNet {
  NetworkConfig cfg;
  Model model;
  std::array<ConvSpec, 7> convs;
  int fc_in = 0, fc_out = 0;
  int fc_w = -1, fc_b = -1;
  int r_w = -1, r_b = -1, t_w = -1, t_b = -1;
};

struct PoseNetRun {
  std::vector<Var> poses;  // one [N,6] var per consecutive frame pair
  std::vector<Var> param_vars;
};

PoseNet build_posenet(const NetworkConfig& cfg, std::uint64_t seed);
PoseNetRun posenet_forward(Tape& t, const PoseNet& net, Var snippet,
                           const std::vector<Var>* bound = nullptr);
std::vector<Pose6> posenet_infer(const PoseNet& net, const Tensor& snippet);

// ---- deep image sampler ------------------------------------------------------
// DispNet topology on a 4-channel (image + disparity) input with linear
// 3-channel prediction heads at each scale. Raw outputs; callers clamp to
// [0,1] when feeding photometric losses.

struct DisNet {
  NetworkConfig cfg;
  Model model;
  ConvSpec conv1, conv1b, conv2, conv2b, conv3, conv3b, conv4, conv4b, conv5, conv5b;
  ConvSpec upconv5, iconv5, upconv4, iconv4, pred4, upconv3, iconv3, pred3, upconv2, iconv2,
      pred2, upconv1, iconv1, pred1;
};

struct DisNetRun {
  std::array<Var, 4> pred;  // [0] full resolution .. [3] 1/8 resolution
  std::vector<Var> param_vars;
};

DisNet build_disnet(const NetworkConfig& cfg, std::uint64_t seed);
DisNetRun disnet_forward(Tape& t, const DisNet& net, Var image, Var disparity_norm,
                         const std::vector<Var>* bound = nullptr);

}  // namespace udepth
