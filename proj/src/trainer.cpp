#include "udepth/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "udepth/error.hpp"
#include "udepth/io.hpp"

namespace udepth {

TrainMode parse_mode(const std::string& s) {
  if (s == "bis_only") return TrainMode::BisOnly;
  if (s == "bis_plus_dis") return TrainMode::BisPlusDis;
  if (s == "full") return TrainMode::Full;
  throw ConfigError("unknown mode '" + s + "' (bis_only|bis_plus_dis|full)");
}

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::BisOnly: return "bis_only";
    case TrainMode::BisPlusDis: return "bis_plus_dis";
    case TrainMode::Full: return "full";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (total_iters <= 0) throw ConfigError("total_iters must be positive");
  if (batch <= 0) throw ConfigError("batch must be positive");
  if (!(lr0 > 0.f)) throw ConfigError("lr0 must be positive");
  net.validate();
  weights.validate();
  if (mode == TrainMode::Full && !split_path.empty())
    throw ConfigError("mode=full trains on synthetic snippets; split lists carry no "
                      "temporal frames");
  if (!split_path.empty() && calib_path.empty())
    throw ConfigError("split training needs calib_path");
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.total_iters = static_cast<std::int64_t>(kv_get(kv, "total_iters", 1000.0));
  c.lr0 = static_cast<float>(kv_get(kv, "lr0", 1e-4));
  c.beta1 = static_cast<float>(kv_get(kv, "beta1", 0.9));
  c.beta2 = static_cast<float>(kv_get(kv, "beta2", 0.99));
  c.adam_eps = static_cast<float>(kv_get(kv, "adam_eps", 1e-8));
  c.batch = static_cast<int>(kv_get(kv, "batch", 2.0));
  c.mode = parse_mode(kv_get(kv, "mode", std::string("bis_only")));
  c.seed = static_cast<std::uint64_t>(kv_get(kv, "seed", 0.0));
  c.net.width_mult = static_cast<float>(kv_get(kv, "width_mult", 0.125));
  c.net.input_h = static_cast<int>(kv_get(kv, "input_h", 64.0));
  c.net.input_w = static_cast<int>(kv_get(kv, "input_w", 128.0));
  c.net.n_frames = static_cast<int>(kv_get(kv, "n_frames", 3.0));
  c.net.max_disp_frac = static_cast<float>(kv_get(kv, "max_disp_frac", 0.3));
  c.weights.alpha = static_cast<float>(kv_get(kv, "alpha", 0.85));
  c.weights.lambda_ap1 = static_cast<float>(kv_get(kv, "lambda_ap1", 1.0));
  c.weights.lambda_ap2 = static_cast<float>(kv_get(kv, "lambda_ap2", 1.0));
  c.weights.lambda_ap3 = static_cast<float>(kv_get(kv, "lambda_ap3", 1.0));
  c.weights.lambda_ds = static_cast<float>(kv_get(kv, "lambda_ds", 1.0));
  c.weights.lambda_lr = static_cast<float>(kv_get(kv, "lambda_lr", 1.0));
  c.weights.charbonnier_eps = static_cast<float>(kv_get(kv, "charbonnier_eps", 1e-3));
  c.weights.charbonnier_gamma = static_cast<float>(kv_get(kv, "charbonnier_gamma", 0.45));
  c.scene.height = c.net.input_h;
  c.scene.width = c.net.input_w;
  c.scene.baseline_m = static_cast<float>(kv_get(kv, "scene_baseline_m", 0.5));
  c.scene.focal_px = static_cast<float>(kv_get(kv, "scene_focal_px", 80.0));
  c.scene.depth_m = static_cast<float>(kv_get(kv, "scene_depth_m", 10.0));
  c.scene.layers = static_cast<int>(kv_get(kv, "scene_layers", 1.0));
  c.scene.noise_octaves = static_cast<int>(kv_get(kv, "scene_octaves", 4.0));
  c.scene.n_frames = c.net.n_frames;
  c.scene.motion_tx_m = static_cast<float>(kv_get(kv, "scene_motion_tx_m", -0.25));
  c.split_path = kv_get(kv, "split", std::string());
  c.calib_path = kv_get(kv, "calib", std::string());
  c.augment_enabled = kv_get(kv, "augment", 0.0) != 0.0;
  c.log_every = static_cast<int>(kv_get(kv, "log_every", 1.0));
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  return train_config_from_kv(read_key_values(path));
}

float lr_schedule(std::int64_t iter, std::int64_t total, float lr0) {
  if (iter < 0 || iter >= total) throw ContractError("lr_schedule: iter out of range");
  if (iter * 5 < total * 3) return lr0;
  if (iter * 5 < total * 4) return 0.5f * lr0;
  return 0.25f * lr0;
}

void adam_step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads,
               AdamState& state, float lr, float beta1, float beta2, float eps) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ContractError("adam_step: parameter/gradient/state counts differ");
  state.step += 1;
  const float bc1 = 1.f - std::pow(beta1, static_cast<float>(state.step));
  const float bc2 = 1.f - std::pow(beta2, static_cast<float>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const Tensor& g = grads[i];
    if (!g.same_shape(p.value))
      throw ContractError("adam_step: gradient shape mismatch for " + p.name);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    Tensor next(p.value.shape());
    float* np = next.data();
    float* mp = m.data();
    float* vp = v.data();
    const float* gp = g.data();
    const float* pp = p.value.data();
    for (std::int64_t k = 0; k < p.value.size(); ++k) {
      mp[k] = beta1 * mp[k] + (1.f - beta1) * gp[k];
      vp[k] = beta2 * vp[k] + (1.f - beta2) * gp[k] * gp[k];
      const float mhat = mp[k] / bc1;
      const float vhat = vp[k] / bc2;
      np[k] = pp[k] - lr * mhat / (std::sqrt(vhat) + eps);
    }
    next.requires_grad = true;
    p.value = std::move(next);
    p.grad = g;
  }
}

// ---------------------------------------------------------------------------
// checkpoints: magic "UDM2", u32 version, u32 count, then per record a u16
// name length, the name bytes, and the tensor in raster encoding

namespace {
constexpr char kCkptMagic[4] = {'U', 'D', 'M', '2'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.value;
  return nullptr;
}

void save_checkpoint_file(const std::string& path, const std::vector<Parameter>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kCkptMagic, 4);
  write_u32_le(os, kCkptVersion);
  write_u32_le(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw ContractError("parameter name too long");
    write_u16_le(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_raster(os, e.value);
  }
  if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError(path + ": bad checkpoint magic (expected UDM2)");
  const std::uint32_t version = read_u32_le(is);
  if (version != kCkptVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = read_u32_le(is);
  Checkpoint ck;
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t len = read_u16_le(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      if (!is) throw FormatError("unexpected end of stream");
      Tensor t = read_raster(is);
      ck.entries.push_back(Parameter{std::move(name), std::move(t), Tensor()});
    }
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return ck;
}

void load_model_params(Model& m, const Checkpoint& ck) {
  for (auto& p : m.params) {
    const Tensor* t = ck.find(p.name);
    if (!t) throw FormatError("checkpoint is missing parameter " + p.name);
    if (!t->same_shape(p.value))
      throw FormatError("checkpoint shape mismatch for " + p.name + ": " +
                        shape_str(t->shape()) + " vs " + shape_str(p.value.shape()));
    Tensor v = t->clone();
    v.requires_grad = true;
    p.value = std::move(v);
  }
}

NetworkConfig config_from_checkpoint(const Checkpoint& ck, TrainMode* mode_out) {
  const Tensor* meta = ck.find("meta/config");
  if (!meta || meta->size() != 6) throw FormatError("checkpoint has no meta/config record");
  NetworkConfig cfg;
  cfg.width_mult = (*meta)[0];
  cfg.input_h = static_cast<int>((*meta)[1]);
  cfg.input_w = static_cast<int>((*meta)[2]);
  cfg.n_frames = static_cast<int>((*meta)[3]);
  cfg.max_disp_frac = (*meta)[5];
  cfg.validate();
  if (mode_out) {
    const int m = static_cast<int>((*meta)[4]);
    *mode_out = m == 2 ? TrainMode::Full : (m == 1 ? TrainMode::BisPlusDis : TrainMode::BisOnly);
  }
  return cfg;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  cfg_.scene.height = cfg_.net.input_h;
  cfg_.scene.width = cfg_.net.input_w;
  cfg_.scene.n_frames = cfg_.net.n_frames;
  disp_ = build_dispnet(cfg_.net, mix_seed(cfg_.seed, 1));
  has_dis_ = cfg_.mode != TrainMode::BisOnly;
  has_pose_ = cfg_.mode == TrainMode::Full;
  if (has_dis_) dis_ = build_disnet(cfg_.net, mix_seed(cfg_.seed, 2));
  if (has_pose_) pose_ = build_posenet(cfg_.net, mix_seed(cfg_.seed, 3));
  rebuild_param_list();
  adam_.m.clear();
  adam_.v.clear();
  for (Parameter* p : all_params_) {
    adam_.m.push_back(Tensor(p->value.shape()));
    adam_.v.push_back(Tensor(p->value.shape()));
  }
  if (!cfg_.split_path.empty()) {
    split_ = read_split_list(cfg_.split_path);
    if (split_.empty()) throw ConfigError("split list is empty: " + cfg_.split_path);
    split_rig_ = load_calibration(cfg_.calib_path);
  }
}

void Trainer::rebuild_param_list() {
  all_params_.clear();
  for (auto& p : disp_.model.params) all_params_.push_back(&p);
  if (has_dis_)
    for (auto& p : dis_.model.params) all_params_.push_back(&p);
  if (has_pose_)
    for (auto& p : pose_.model.params) all_params_.push_back(&p);
}

TrainSample Trainer::make_sample(std::int64_t index) const {
  TrainSample s;
  if (split_.empty()) {
    auto [stereo, temporal] = generate_synthetic(mix_seed(cfg_.seed, 0x5a0000 + static_cast<std::uint64_t>(index)),
                                                 cfg_.scene);
    s.stereo = std::move(stereo);
    s.temporal = std::move(temporal);
  } else {
    const auto& rec = split_[static_cast<size_t>(index) % split_.size()];
    s.stereo.left = load_image(rec.left, cfg_.net.input_h, cfg_.net.input_w);
    s.stereo.right = load_image(rec.right, cfg_.net.input_h, cfg_.net.input_w);
    s.stereo.rig = split_rig_;
    s.temporal.frames = {s.stereo.left};
  }
  if (cfg_.augment_enabled) {
    Rng rng(mix_seed(cfg_.seed, 0xa60000 + static_cast<std::uint64_t>(index)));
    s.stereo = augment(s.stereo, rng);
    if (!has_pose_) s.temporal.frames = {s.stereo.left};
    // temporal frames are left untouched in full mode; photometric jitter
    // would break the cross-frame consistency the pose loss relies on
  }
  return s;
}

namespace {

Tensor stack_batch(const std::vector<const Tensor*>& items) {
  const Tensor& first = *items[0];
  std::vector<int> shape;
  shape.push_back(static_cast<int>(items.size()));
  for (int i = 0; i < first.rank(); ++i) shape.push_back(first.dim(i));
  Tensor out(shape);
  float* op = out.data();
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i]->same_shape(first)) throw DimensionError("stack_batch: ragged shapes");
    std::copy(items[i]->data(), items[i]->data() + first.size(), op + first.size() * static_cast<std::int64_t>(i));
  }
  return out;
}

}  // namespace

Trainer::StepGraph Trainer::build_graph(Tape& tape, std::int64_t sample_base) {
  std::vector<TrainSample> batch;
  batch.reserve(static_cast<size_t>(cfg_.batch));
  for (int j = 0; j < cfg_.batch; ++j) batch.push_back(make_sample(sample_base + j));

  std::vector<const Tensor*> lefts, rights;
  for (const auto& s : batch) {
    lefts.push_back(&s.stereo.left);
    rights.push_back(&s.stereo.right);
  }
  const CameraRig rig = batch[0].stereo.rig;

  Var left = tape.constant(stack_batch(lefts));
  Var right = tape.constant(stack_batch(rights));

  // image pyramids (box-filtered targets)
  std::array<Var, 4> L, R;
  L[0] = left;
  R[0] = right;
  for (int s = 1; s < 4; ++s) {
    L[static_cast<size_t>(s)] = downsample2x(L[static_cast<size_t>(s - 1)]);
    R[static_cast<size_t>(s)] = downsample2x(R[static_cast<size_t>(s - 1)]);
  }

  std::vector<Var> disp_bound = bind_params(tape, disp_.model);
  DispNetRun drun = dispnet_forward(tape, disp_, left, &disp_bound);

  const float alpha = cfg_.weights.alpha;
  const float ch_eps = cfg_.weights.charbonnier_eps;
  const float ch_gamma = cfg_.weights.charbonnier_gamma;

  std::array<ScaleLossVars, 4> parts;
  std::array<Var, 4> d_l_norm, d_r_norm;
  for (int s = 0; s < 4; ++s) {
    const auto si = static_cast<size_t>(s);
    const int ws = cfg_.net.input_w >> s;
    ScaleLossVars& p = parts[si];
    p.scale = 1 << s;
    d_l_norm[si] = slice_channels(drun.disp[si], 0, 1);
    d_r_norm[si] = slice_channels(drun.disp[si], 1, 2);
    Var d_l_px = mul(d_l_norm[si], static_cast<float>(ws));
    Var d_r_px = mul(d_r_norm[si], static_cast<float>(ws));
    Var recon_r = disparity_warp(L[si], d_r_px, +1);
    Var recon_l = disparity_warp(R[si], d_l_px, -1);
    p.ap_r = appearance_loss(R[si], recon_r, alpha, ch_eps, ch_gamma);
    p.ap_l = appearance_loss(L[si], recon_l, alpha, ch_eps, ch_gamma);
    p.ds_l = smoothness_loss(d_l_norm[si], L[si], ch_eps, ch_gamma);
    p.ds_r = smoothness_loss(d_r_norm[si], R[si], ch_eps, ch_gamma);
    p.lr = lr_consistency_loss(d_l_px, d_r_px);
  }

  std::vector<Var> dis_bound;
  if (has_dis_) {
    dis_bound = bind_params(tape, dis_.model);
    DisNetRun rrun = disnet_forward(tape, dis_, left, d_r_norm[0], &dis_bound);
    DisNetRun lrun = disnet_forward(tape, dis_, right, d_l_norm[0], &dis_bound);
    for (int s = 0; s < 4; ++s) {
      const auto si = static_cast<size_t>(s);
      parts[si].ap_dis_r =
          appearance_loss(R[si], vclamp(rrun.pred[si], 0.f, 1.f), alpha, ch_eps, ch_gamma);
      parts[si].ap_dis_l =
          appearance_loss(L[si], vclamp(lrun.pred[si], 0.f, 1.f), alpha, ch_eps, ch_gamma);
    }
  }

  std::vector<Var> pose_bound;
  if (has_pose_) {
    const int n = cfg_.net.n_frames;
    std::vector<Var> frames(static_cast<size_t>(n));
    frames[0] = left;
    for (int k = 1; k < n; ++k) {
      std::vector<const Tensor*> fk;
      for (const auto& s : batch) fk.push_back(&s.temporal.frames[static_cast<size_t>(k)]);
      frames[static_cast<size_t>(k)] = tape.constant(stack_batch(fk));
    }
    pose_bound = bind_params(tape, pose_.model);
    PoseNetRun prun = posenet_forward(tape, pose_, concat_channels(frames), &pose_bound);

    Var ap3;
    for (int k = 0; k + 1 < n; ++k) {
      // depth for frame k from its full-resolution left-aligned disparity
      Var dk_norm = k == 0 ? d_l_norm[0]
                           : slice_channels(
                                 dispnet_forward(tape, disp_, frames[static_cast<size_t>(k)],
                                                 &disp_bound)
                                     .disp[0],
                                 0, 1);
      Var dk_px = mul(dk_norm, static_cast<float>(cfg_.net.input_w));
      Var depth = depth_from_disparity(dk_px, rig);
      Var recon = projective_warp(frames[static_cast<size_t>(k + 1)], depth,
                                  prun.poses[static_cast<size_t>(k)], rig);
      Var term = appearance_loss(frames[static_cast<size_t>(k)], recon, alpha, ch_eps, ch_gamma);
      ap3 = ap3.valid() ? add(ap3, term) : term;
    }
    parts[0].ap_temporal = mul(ap3, 1.f / static_cast<float>(n - 1));
  }

  std::array<LossVars, 4> weighted;
  for (int s = 0; s < 4; ++s)
    weighted[static_cast<size_t>(s)] =
        total_loss(tape, parts[static_cast<size_t>(s)], cfg_.weights);
  StepGraph g;
  g.loss = sum_scales(tape, weighted);
  g.bound.insert(g.bound.end(), disp_bound.begin(), disp_bound.end());
  g.bound.insert(g.bound.end(), dis_bound.begin(), dis_bound.end());
  g.bound.insert(g.bound.end(), pose_bound.begin(), pose_bound.end());
  return g;
}

LossBreakdown Trainer::evaluate(std::int64_t sample_base) {
  Tape tape;
  StepGraph g = build_graph(tape, sample_base);
  return breakdown(tape, g.loss);
}

LossBreakdown Trainer::step() {
  Tape tape;
  StepGraph g = build_graph(tape, iter_ * cfg_.batch);
  LossBreakdown bd = breakdown(tape, g.loss);
  if (!std::isfinite(bd.total)) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << iter_ << ": ap1=" << bd.ap1 << " ap2=" << bd.ap2
       << " ap3=" << bd.ap3 << " ds=" << bd.ds << " lr=" << bd.lr;
    throw NumericError(os.str());
  }

  tape.backward(g.loss.total);

  std::vector<Tensor> grads;
  grads.reserve(g.bound.size());
  for (size_t i = 0; i < g.bound.size(); ++i) {
    Tensor gr = tape.grad(g.bound[i]);
    if (gr.empty()) gr = Tensor(all_params_[i]->value.shape());
    grads.push_back(std::move(gr));
  }

  const float lr = lr_schedule(iter_, cfg_.total_iters, cfg_.lr0);
  adam_step(all_params_, grads, adam_, lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  iter_ += 1;
  return bd;
}

void Trainer::run(std::ostream* log) {
  while (iter_ < cfg_.total_iters) {
    const std::int64_t i = iter_;
    const float lr = lr_schedule(i, cfg_.total_iters, cfg_.lr0);
    LossBreakdown bd = step();
    if (log && (i % cfg_.log_every == 0 || i + 1 == cfg_.total_iters)) {
      (*log) << i << '\t' << lr << '\t' << bd.ap1 << '\t' << bd.ap2 << '\t' << bd.ap3 << '\t'
             << bd.ds << '\t' << bd.lr << '\t' << bd.total << '\n';
    }
  }
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<Parameter> entries;
  for (size_t i = 0; i < all_params_.size(); ++i) {
    entries.push_back(Parameter{all_params_[i]->name, all_params_[i]->value, Tensor()});
    entries.push_back(Parameter{"adam/m/" + all_params_[i]->name, adam_.m[i], Tensor()});
    entries.push_back(Parameter{"adam/v/" + all_params_[i]->name, adam_.v[i], Tensor()});
  }
  entries.push_back(
      Parameter{"trainer/step", Tensor({1}, {static_cast<float>(adam_.step)}), Tensor()});
  entries.push_back(Parameter{
      "meta/config",
      Tensor({6}, {cfg_.net.width_mult, static_cast<float>(cfg_.net.input_h),
                   static_cast<float>(cfg_.net.input_w), static_cast<float>(cfg_.net.n_frames),
                   static_cast<float>(cfg_.mode == TrainMode::Full        ? 2
                                      : cfg_.mode == TrainMode::BisPlusDis ? 1
                                                                           : 0),
                   cfg_.net.max_disp_frac}),
      Tensor()});
  save_checkpoint_file(path, entries);
}

void Trainer::load_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path);
  TrainMode mode;
  NetworkConfig net = config_from_checkpoint(ck, &mode);
  if (mode != cfg_.mode || net.input_h != cfg_.net.input_h || net.input_w != cfg_.net.input_w ||
      net.width_mult != cfg_.net.width_mult || net.n_frames != cfg_.net.n_frames)
    throw ConfigError("checkpoint configuration does not match the trainer");
  load_model_params(disp_.model, ck);
  if (has_dis_) load_model_params(dis_.model, ck);
  if (has_pose_) load_model_params(pose_.model, ck);
  for (size_t i = 0; i < all_params_.size(); ++i) {
    const Tensor* m = ck.find("adam/m/" + all_params_[i]->name);
    const Tensor* v = ck.find("adam/v/" + all_params_[i]->name);
    if (!m || !v) throw FormatError("checkpoint is missing optimizer state for " +
                                    all_params_[i]->name);
    if (!m->same_shape(all_params_[i]->value) || !v->same_shape(all_params_[i]->value))
      throw FormatError("optimizer state shape mismatch for " + all_params_[i]->name);
    adam_.m[i] = m->clone();
    adam_.v[i] = v->clone();
  }
  const Tensor* st = ck.find("trainer/step");
  if (!st || st->size() != 1) throw FormatError("checkpoint is missing trainer/step");
  adam_.step = static_cast<std::int64_t>((*st)[0]);
  iter_ = adam_.step;
}

}  // namespace udepth
