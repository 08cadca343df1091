#include "udepth/networks.hpp"

#include <cmath>

#include "udepth/error.hpp"
#include "udepth/rng.hpp"

namespace udepth {

void NetworkConfig::validate() const {
  const bool width_ok = width_mult == 1.f || width_mult == 0.5f || width_mult == 0.25f ||
                        width_mult == 0.125f;
  if (!width_ok) throw ConfigError("width_mult must be 1, 1/2, 1/4 or 1/8");
  if (input_h % 32 || input_w % 32 || input_h < 32 || input_w < 32)
    throw ConfigError("input resolution must be a positive multiple of 32, got " +
                      std::to_string(input_h) + "x" + std::to_string(input_w));
  if (n_frames < 2) throw ConfigError("n_frames must be at least 2");
  if (!(max_disp_frac > 0.f && max_disp_frac <= 0.5f))
    throw ConfigError("max_disp_frac must be in (0, 0.5]");
}

int NetworkConfig::scaled(int base_channels) const {
  const int c = static_cast<int>(std::lround(base_channels * width_mult));
  return c < 1 ? 1 : c;
}

int Model::add_param(const std::string& param_name, Tensor value) {
  if (find(param_name)) throw ContractError("duplicate parameter name: " + param_name);
  value.requires_grad = true;
  params.push_back(Parameter{param_name, std::move(value), Tensor()});
  return static_cast<int>(params.size()) - 1;
}

Parameter* Model::find(const std::string& param_name) {
  for (auto& p : params)
    if (p.name == param_name) return &p;
  return nullptr;
}

const Parameter* Model::find(const std::string& param_name) const {
  for (const auto& p : params)
    if (p.name == param_name) return &p;
  return nullptr;
}

std::int64_t param_count(const Model& m) {
  std::int64_t n = 0;
  for (const auto& p : m.params) n += p.value.size();
  return n;
}

std::vector<Var> bind_params(Tape& t, const Model& m) {
  std::vector<Var> vars;
  vars.reserve(m.params.size());
  for (const auto& p : m.params) vars.push_back(t.leaf(p.value, true));
  return vars;
}

namespace {

Tensor init_weight(int out_ch, int in_ch, int k, std::uint64_t seed) {
  Tensor w({out_ch, in_ch, k, k});
  Rng rng(seed);
  float* p = w.data();
  for (std::int64_t i = 0; i < w.size(); ++i)
    p[i] = static_cast<float>(rng.truncated_normal(0.02));
  return w;
}

Tensor init_fc_weight(int in_f, int out_f, std::uint64_t seed) {
  Tensor w({in_f, out_f});
  Rng rng(seed);
  float* p = w.data();
  for (std::int64_t i = 0; i < w.size(); ++i)
    p[i] = static_cast<float>(rng.truncated_normal(0.02));
  return w;
}

ConvSpec make_conv(Model& m, const std::string& prefix, const std::string& name, int in_ch,
                   int out_ch, int k, int stride, std::uint64_t seed) {
  ConvSpec c;
  c.name = name;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.k = k;
  c.stride = stride;
  c.w = m.add_param(prefix + "/" + name + "/weight",
                    init_weight(out_ch, in_ch, k, mix_seed(seed, m.params.size())));
  c.b = m.add_param(prefix + "/" + name + "/bias", Tensor::zeros({out_ch}));
  return c;
}

Var conv(const std::vector<Var>& pv, const ConvSpec& c, Var x) {
  return conv2d(x, pv[static_cast<size_t>(c.w)], pv[static_cast<size_t>(c.b)], c.stride);
}

Var conv_relu(const std::vector<Var>& pv, const ConvSpec& c, Var x) {
  return relu(conv(pv, c, x));
}

// "stride 2" decoder convolution: nearest 2x upscale then a stride-1 conv
Var upconv_relu(const std::vector<Var>& pv, const ConvSpec& c, Var x) {
  return relu(conv(pv, c, upsample2x(x)));
}

void check_image_input(const NetworkConfig& cfg, const Tensor& v, int channels,
                       const char* what) {
  if (v.rank() != 4 || v.dim(1) != channels || v.dim(2) != cfg.input_h || v.dim(3) != cfg.input_w)
    throw DimensionError(std::string(what) + ": expected [N," + std::to_string(channels) + "," +
                         std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w) +
                         "], got " + shape_str(v.shape()));
}

ConvSpec& head_of(DispNet& n, int s) {
  switch (s) {
    case 4: return n.disp4;
    case 3: return n.disp3;
    case 2: return n.disp2;
    default: return n.disp1;
  }
}

ConvSpec& head_of(DisNet& n, int s) {
  switch (s) {
    case 4: return n.pred4;
    case 3: return n.pred3;
    case 2: return n.pred2;
    default: return n.pred1;
  }
}

// shared encoder/decoder construction for the disparity and sampler networks;
// head_ch = 2 sigmoid-bounded or 3 linear
template <typename Net>
void build_codec(Net& net, const NetworkConfig& cfg, int in_ch, int head_ch,
                 const char* head_name, std::uint64_t seed) {
  Model& m = net.model;
  const std::string& p = m.name;
  auto c = [&](int base) { return cfg.scaled(base); };
  net.conv1 = make_conv(m, p, "conv1", in_ch, c(32), 7, 2, seed);
  net.conv1b = make_conv(m, p, "conv1b", c(32), c(32), 7, 1, seed);
  net.conv2 = make_conv(m, p, "conv2", c(32), c(64), 5, 2, seed);
  net.conv2b = make_conv(m, p, "conv2b", c(64), c(64), 5, 1, seed);
  net.conv3 = make_conv(m, p, "conv3", c(64), c(128), 3, 2, seed);
  net.conv3b = make_conv(m, p, "conv3b", c(128), c(128), 3, 1, seed);
  net.conv4 = make_conv(m, p, "conv4", c(128), c(256), 3, 2, seed);
  net.conv4b = make_conv(m, p, "conv4b", c(256), c(256), 3, 1, seed);
  net.conv5 = make_conv(m, p, "conv5", c(256), c(512), 3, 2, seed);
  net.conv5b = make_conv(m, p, "conv5b", c(512), c(512), 3, 1, seed);

  net.upconv5 = make_conv(m, p, "upconv5", c(512), c(256), 3, 1, seed);
  net.iconv5 = make_conv(m, p, "iconv5", c(256) + c(256), c(256), 3, 1, seed);
  net.upconv4 = make_conv(m, p, "upconv4", c(256), c(128), 3, 1, seed);
  net.iconv4 = make_conv(m, p, "iconv4", c(128) + c(128), c(128), 3, 1, seed);
  auto& head4 = head_of(net, 4);
  head4 = make_conv(m, p, std::string(head_name) + "4", c(128), head_ch, 3, 1, seed);
  net.upconv3 = make_conv(m, p, "upconv3", c(128), c(64), 3, 1, seed);
  net.iconv3 = make_conv(m, p, "iconv3", c(64) + c(64) + head_ch, c(64), 3, 1, seed);
  auto& head3 = head_of(net, 3);
  head3 = make_conv(m, p, std::string(head_name) + "3", c(64), head_ch, 3, 1, seed);
  net.upconv2 = make_conv(m, p, "upconv2", c(64), c(32), 3, 1, seed);
  net.iconv2 = make_conv(m, p, "iconv2", c(32) + c(32) + head_ch, c(32), 3, 1, seed);
  auto& head2 = head_of(net, 2);
  head2 = make_conv(m, p, std::string(head_name) + "2", c(32), head_ch, 3, 1, seed);
  net.upconv1 = make_conv(m, p, "upconv1", c(32), c(16), 3, 1, seed);
  net.iconv1 = make_conv(m, p, "iconv1", c(16) + head_ch, c(16), 3, 1, seed);
  auto& head1 = head_of(net, 1);
  head1 = make_conv(m, p, std::string(head_name) + "1", c(16), head_ch, 3, 1, seed);
}

// runs the shared topology; head(x, spec, scale_index) produces each output
template <typename Net, typename HeadFn>
std::array<Var, 4> codec_forward(const Net& net, const std::vector<Var>& pv, Var input,
                                 const HeadFn& head) {
  Var e1 = conv_relu(pv, net.conv1, input);
  Var e1b = conv_relu(pv, net.conv1b, e1);
  Var e2 = conv_relu(pv, net.conv2, e1b);
  Var e2b = conv_relu(pv, net.conv2b, e2);
  Var e3 = conv_relu(pv, net.conv3, e2b);
  Var e3b = conv_relu(pv, net.conv3b, e3);
  Var e4 = conv_relu(pv, net.conv4, e3b);
  Var e4b = conv_relu(pv, net.conv4b, e4);
  Var e5 = conv_relu(pv, net.conv5, e4b);
  Var e5b = conv_relu(pv, net.conv5b, e5);

  Var d5 = upconv_relu(pv, net.upconv5, e5b);
  Var i5 = conv_relu(pv, net.iconv5, concat_channels({d5, e4b}));
  Var d4 = upconv_relu(pv, net.upconv4, i5);
  Var i4 = conv_relu(pv, net.iconv4, concat_channels({d4, e3b}));
  std::array<Var, 4> out;
  out[3] = head(i4, 3);
  Var d3 = upconv_relu(pv, net.upconv3, i4);
  Var i3 = conv_relu(pv, net.iconv3, concat_channels({d3, e2b, upsample2x(out[3])}));
  out[2] = head(i3, 2);
  Var d2 = upconv_relu(pv, net.upconv2, i3);
  Var i2 = conv_relu(pv, net.iconv2, concat_channels({d2, e1b, upsample2x(out[2])}));
  out[1] = head(i2, 1);
  Var d1 = upconv_relu(pv, net.upconv1, i2);
  Var i1 = conv_relu(pv, net.iconv1, concat_channels({d1, upsample2x(out[1])}));
  out[0] = head(i1, 0);
  return out;
}

}  // namespace

DispNet build_dispnet(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DispNet net;
  net.cfg = cfg;
  net.model.name = "dispnet";
  build_codec(net, cfg, 3, 2, "disp", seed);
  return net;
}

DispNetRun dispnet_forward(Tape& t, const DispNet& net, Var image,
                           const std::vector<Var>* bound) {
  check_image_input(net.cfg, t.value(image), 3, "dispnet_forward");
  DispNetRun run;
  run.param_vars = bound ? *bound : bind_params(t, net.model);
  const float cap = net.cfg.max_disp_frac;
  auto head = [&](Var x, int scale_idx) {
    const ConvSpec* heads[4] = {&net.disp1, &net.disp2, &net.disp3, &net.disp4};
    return mul(sigmoid(conv(run.param_vars, *heads[scale_idx], x)), cap);
  };
  run.disp = codec_forward(net, run.param_vars, image, head);
  return run;
}

DispOutputs dispnet_infer(const DispNet& net, const Tensor& image) {
  Tape t;
  DispNetRun run = dispnet_forward(t, net, t.constant(image));
  DispOutputs out;
  for (int i = 0; i < 4; ++i) out.disp[static_cast<size_t>(i)] = t.value(run.disp[static_cast<size_t>(i)]);
  return out;
}

DisNet build_disnet(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DisNet net;
  net.cfg = cfg;
  net.model.name = "disnet";
  build_codec(net, cfg, 4, 3, "pred", seed);
  return net;
}

DisNetRun disnet_forward(Tape& t, const DisNet& net, Var image, Var disparity_norm,
                         const std::vector<Var>* bound) {
  check_image_input(net.cfg, t.value(image), 3, "disnet_forward");
  check_image_input(net.cfg, t.value(disparity_norm), 1, "disnet_forward disparity");
  DisNetRun run;
  run.param_vars = bound ? *bound : bind_params(t, net.model);
  auto head = [&](Var x, int scale_idx) {
    const ConvSpec* heads[4] = {&net.pred1, &net.pred2, &net.pred3, &net.pred4};
    return conv(run.param_vars, *heads[scale_idx], x);  // linear heads
  };
  run.pred = codec_forward(net, run.param_vars, concat_channels({image, disparity_norm}), head);
  return run;
}

PoseNet build_posenet(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PoseNet net;
  net.cfg = cfg;
  Model& m = net.model;
  m.name = "posenet";
  auto c = [&](int base) { return cfg.scaled(base); };
  const int chans[8] = {cfg.n_frames * 3, c(16), c(32), c(64), c(128), c(256), c(256), c(512)};
  const int ks[7] = {7, 5, 3, 3, 3, 3, 3};
  int h = cfg.input_h, w = cfg.input_w;
  for (int i = 0; i < 7; ++i) {
    net.convs[static_cast<size_t>(i)] = make_conv(m, m.name, "conv" + std::to_string(i + 1),
                                                  chans[i], chans[i + 1], ks[i], 2, seed);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  net.fc_in = chans[7] * h * w;
  net.fc_out = c(512);
  net.fc_w = m.add_param("posenet/fc1/weight",
                         init_fc_weight(net.fc_in, net.fc_out, mix_seed(seed, 101)));
  net.fc_b = m.add_param("posenet/fc1/bias", Tensor::zeros({net.fc_out}));
  const int head = (cfg.n_frames - 1) * 3;
  net.r_w = m.add_param("posenet/r/weight", init_fc_weight(net.fc_out, head, mix_seed(seed, 102)));
  net.r_b = m.add_param("posenet/r/bias", Tensor::zeros({head}));
  net.t_w = m.add_param("posenet/t/weight", init_fc_weight(net.fc_out, head, mix_seed(seed, 103)));
  net.t_b = m.add_param("posenet/t/bias", Tensor::zeros({head}));
  return net;
}

PoseNetRun posenet_forward(Tape& t, const PoseNet& net, Var snippet,
                           const std::vector<Var>* bound) {
  check_image_input(net.cfg, t.value(snippet), net.cfg.n_frames * 3, "posenet_forward");
  PoseNetRun run;
  run.param_vars = bound ? *bound : bind_params(t, net.model);
  const auto& pv = run.param_vars;
  Var x = snippet;
  for (const auto& cs : net.convs) x = conv_relu(pv, cs, x);
  const auto& s = t.value(x).shape();
  Var flat = reshape(x, {s[0], s[1] * s[2] * s[3]});
  if (s[1] * s[2] * s[3] != net.fc_in)
    throw DimensionError("posenet_forward: flattened size mismatch");
  Var fc = relu(fully_connected(flat, pv[static_cast<size_t>(net.fc_w)],
                                pv[static_cast<size_t>(net.fc_b)]));
  Var r = fully_connected(fc, pv[static_cast<size_t>(net.r_w)], pv[static_cast<size_t>(net.r_b)]);
  Var tr = fully_connected(fc, pv[static_cast<size_t>(net.t_w)], pv[static_cast<size_t>(net.t_b)]);
  for (int k = 0; k + 1 < net.cfg.n_frames; ++k) {
    Var rk = slice_channels(r, 3 * k, 3 * k + 3);
    Var tk = slice_channels(tr, 3 * k, 3 * k + 3);
    run.poses.push_back(concat_channels({rk, tk}));
  }
  return run;
}

std::vector<Pose6> posenet_infer(const PoseNet& net, const Tensor& snippet) {
  Tape t;
  PoseNetRun run = posenet_forward(t, net, t.constant(snippet));
  if (snippet.dim(0) != 1) throw ContractError("posenet_infer expects a single sample");
  std::vector<Pose6> poses;
  for (const Var& pv : run.poses) {
    const Tensor& v = t.value(pv);
    Pose6 p;
    for (int i = 0; i < 3; ++i) {
      p.r[static_cast<size_t>(i)] = v[i];
      p.t[static_cast<size_t>(i)] = v[3 + i];
    }
    poses.push_back(p);
  }
  return poses;
}

}  // namespace udepth
