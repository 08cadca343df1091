#include "udepth/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "udepth/data.hpp"
#include "udepth/error.hpp"
#include "udepth/io.hpp"
#include "udepth/metrics.hpp"
#include "udepth/trainer.hpp"

namespace udepth::cli {

namespace fs = std::filesystem;

namespace {

std::string num(int v, int width = 4) {
  std::ostringstream os;
  os.width(width);
  os.fill('0');
  os << v;
  return os.str();
}

std::optional<CropRect> parse_crop(const std::string& s) {
  if (s.empty()) return std::nullopt;
  CropRect r;
  char c1, c2, c3;
  std::istringstream ss(s);
  if (!(ss >> r.x0 >> c1 >> r.y0 >> c2 >> r.x1 >> c3 >> r.y1) || c1 != ',' || c2 != ',' ||
      c3 != ',')
    throw ConfigError("--crop expects x0,y0,x1,y1");
  return r;
}

Alignment parse_align(const std::string& s) {
  if (s == "none") return Alignment::None;
  if (s == "rigid") return Alignment::Rigid;
  if (s == "rigid_scale") return Alignment::RigidScale;
  throw ConfigError("--align expects none|rigid|rigid_scale");
}

double parse_cap(const std::string& s) {
  if (s == "none") return 0.0;
  if (s == "50") return 50.0;
  if (s == "80") return 80.0;
  throw ConfigError("--cap expects 50|80|none");
}

TrainConfig config_from(const std::string& config_path, std::uint64_t seed) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_key_values(config_path);
  if (!kv.count("seed")) kv["seed"] = std::to_string(seed);
  return train_config_from_kv(kv);
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::uint64_t seed, const std::string& out,
              int count, int seq_frames) {
  TrainConfig cfg = config_from(config_path, seed);
  fs::create_directories(out);
  fs::create_directories(fs::path(out) / "seq");

  std::ofstream split(fs::path(out) / "split.txt");
  if (!split) throw IoError("cannot write split list in " + out);
  for (int i = 0; i < count; ++i) {
    auto [stereo, temporal] = generate_synthetic(mix_seed(seed, 0x5a0000 + static_cast<std::uint64_t>(i)),
                                                 cfg.scene);
    const std::string l = (fs::path(out) / ("left_" + num(i) + ".ppm")).string();
    const std::string r = (fs::path(out) / ("right_" + num(i) + ".ppm")).string();
    const std::string d = (fs::path(out) / ("disp_" + num(i) + ".udt")).string();
    const std::string z = (fs::path(out) / ("depth_" + num(i) + ".udt")).string();
    save_image_ppm(l, stereo.left);
    save_image_ppm(r, stereo.right);
    save_raster(d, stereo.gt_disparity);
    save_raster(z, temporal.gt_depth);
    split << l << " " << r << " " << z << "\n";
  }
  save_calibration((fs::path(out) / "calib.txt").string(), cfg.scene.rig());

  // one long constant-motion sequence for odometry evaluation
  SceneConfig seq_cfg = cfg.scene;
  seq_cfg.n_frames = seq_frames;
  auto [stereo, temporal] = generate_synthetic(mix_seed(seed, 0x5e9), seq_cfg);
  std::vector<SE3> traj;
  traj.push_back(SE3::identity());
  for (int j = 0; j < seq_frames; ++j) {
    save_image_ppm((fs::path(out) / "seq" / ("frame_" + num(j) + ".ppm")).string(),
                   temporal.frames[static_cast<size_t>(j)]);
    if (j + 1 < seq_frames)
      traj.push_back(compose(traj.back(),
                             invert(pose_to_matrix(temporal.gt_poses[static_cast<size_t>(j)]))));
  }
  write_pose_file((fs::path(out) / "seq" / "poses.txt").string(), traj);
  std::cout << "wrote " << count << " stereo samples and a " << seq_frames
            << "-frame sequence to " << out << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path, std::uint64_t seed, const std::string& mode,
              double width_mult, std::int64_t iters, const std::string& out,
              const std::string& resume, int save_every, std::int64_t stop_after) {
  TrainConfig cfg = config_from(config_path, seed);
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  if (width_mult > 0) cfg.net.width_mult = static_cast<float>(width_mult);
  if (iters > 0) cfg.total_iters = iters;
  cfg.validate();
  fs::create_directories(out);

  Trainer trainer(cfg);
  if (!resume.empty()) trainer.load_checkpoint(resume);

  std::ofstream log(fs::path(out) / "log.tsv", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write log in " + out);
  // stop_after pauses a longer schedule without changing it; resuming from
  // the checkpoint continues the same trace
  const std::int64_t stop = stop_after > 0 ? std::min(stop_after, cfg.total_iters)
                                           : cfg.total_iters;
  while (trainer.iter() < stop) {
    const std::int64_t i = trainer.iter();
    const float lr = lr_schedule(i, cfg.total_iters, cfg.lr0);
    LossBreakdown bd = trainer.step();
    if (i % cfg.log_every == 0 || trainer.iter() == cfg.total_iters)
      log << i << '\t' << lr << '\t' << bd.ap1 << '\t' << bd.ap2 << '\t' << bd.ap3 << '\t'
          << bd.ds << '\t' << bd.lr << '\t' << bd.total << '\n';
    if (save_every > 0 && trainer.iter() % save_every == 0)
      trainer.save_checkpoint(
          (fs::path(out) / ("checkpoint_" + num(static_cast<int>(trainer.iter()), 6) + ".udm"))
              .string());
  }
  trainer.save_checkpoint((fs::path(out) / "checkpoint.udm").string());
  std::cout << "trained to iteration " << trainer.iter() << " of " << cfg.total_iters << " ("
            << mode_name(cfg.mode) << "), checkpoint in " << out << "\n";
  return 0;
}

// ---- eval-depth --------------------------------------------------------------

int cmd_eval_depth(const std::string& checkpoint, const std::string& split_path,
                   const std::string& calib_path, const std::string& cap_s,
                   const std::string& crop_s, const std::string& out) {
  const double cap = parse_cap(cap_s);
  const auto crop = parse_crop(crop_s);
  Checkpoint ck = load_checkpoint_file(checkpoint);
  NetworkConfig net = config_from_checkpoint(ck);
  DispNet disp = build_dispnet(net, 0);
  load_model_params(disp.model, ck);
  const CameraRig rig = load_calibration(calib_path);

  const auto records = read_split_list(split_path);
  if (records.empty()) throw ContractError("split list has no records: " + split_path);

  DepthReport total{};
  int evaluated = 0;
  for (const auto& rec : records) {
    if (rec.gt_depth.empty()) continue;
    Tensor left = load_image(rec.left, net.input_h, net.input_w);
    Tensor batch({1, 3, net.input_h, net.input_w});
    std::copy(left.data(), left.data() + left.size(), batch.data());
    DispOutputs outs = dispnet_infer(disp, batch);
    // left-aligned channel, resized to the ground-truth raster
    const Tensor& d0 = outs.disp[0];
    Tensor dl({1, net.input_h, net.input_w});
    std::copy(d0.data(), d0.data() + dl.size(), dl.data());
    Tensor gt = load_depth_gt(rec.gt_depth);
    const int gh = gt.dim(1), gw = gt.dim(2);
    Tensor dl_r = resize_bilinear(dl, gh, gw);
    Tensor pred({1, gh, gw});
    for (std::int64_t i = 0; i < pred.size(); ++i) {
      const float d_px = std::max(1e-3f, dl_r[i] * static_cast<float>(gw));
      pred[i] = rig.baseline_m * rig.fx / d_px;
    }
    DepthReport r = depth_metrics(pred, gt, cap, crop);
    total.abs_rel += r.abs_rel;
    total.sq_rel += r.sq_rel;
    total.rmse += r.rmse;
    total.rmse_log += r.rmse_log;
    total.delta1 += r.delta1;
    total.delta2 += r.delta2;
    total.delta3 += r.delta3;
    total.n_valid += r.n_valid;
    ++evaluated;
  }
  if (!evaluated) throw ContractError("no records with depth ground truth in " + split_path);
  total.abs_rel /= evaluated;
  total.sq_rel /= evaluated;
  total.rmse /= evaluated;
  total.rmse_log /= evaluated;
  total.delta1 /= evaluated;
  total.delta2 /= evaluated;
  total.delta3 /= evaluated;
  const std::string report = format_depth_report(total);
  std::cout << report;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "depth_report.txt");
    os << report;
  }
  return 0;
}

// ---- eval-pose ---------------------------------------------------------------

int cmd_eval_pose(const std::string& checkpoint, const std::string& seq_dir,
                  const std::string& align_s, const std::string& out) {
  const Alignment align = parse_align(align_s);
  Checkpoint ck = load_checkpoint_file(checkpoint);
  NetworkConfig net = config_from_checkpoint(ck);
  PoseNet pose = build_posenet(net, 0);
  load_model_params(pose.model, ck);

  std::vector<std::string> frame_files;
  for (const auto& e : fs::directory_iterator(seq_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0) frame_files.push_back(e.path().string());
  }
  std::sort(frame_files.begin(), frame_files.end());
  const auto traj = read_pose_file((fs::path(seq_dir) / "poses.txt").string());
  if (frame_files.size() != traj.size())
    throw ContractError("sequence has " + std::to_string(frame_files.size()) + " frames but " +
                        std::to_string(traj.size()) + " poses");
  const int n = net.n_frames;
  if (static_cast<int>(frame_files.size()) < n)
    throw ContractError("sequence shorter than one snippet");

  std::vector<Tensor> frames;
  for (const auto& f : frame_files) frames.push_back(load_image(f, net.input_h, net.input_w));

  double t_sum = 0, r_sum = 0;
  int snippets = 0;
  for (size_t t0 = 0; t0 + static_cast<size_t>(n) <= frames.size(); ++t0) {
    Tensor snippet({1, 3 * n, net.input_h, net.input_w});
    for (int k = 0; k < n; ++k)
      std::copy(frames[t0 + static_cast<size_t>(k)].data(),
                frames[t0 + static_cast<size_t>(k)].data() + frames[t0].size(),
                snippet.data() + static_cast<std::int64_t>(k) * frames[t0].size());
    std::vector<Pose6> pred = posenet_infer(pose, snippet);
    std::vector<Pose6> gt;
    for (int k = 0; k + 1 < n; ++k) {
      const SE3 rel = compose(invert(traj[t0 + static_cast<size_t>(k) + 1]),
                              traj[t0 + static_cast<size_t>(k)]);
      gt.push_back(matrix_to_pose(rel));
    }
    AteReport r = ate_snippet(pred, gt, align);
    t_sum += r.t_ate;
    r_sum += r.r_ate;
    ++snippets;
  }
  AteReport mean;
  mean.t_ate = t_sum / snippets;
  mean.r_ate = r_sum / snippets;
  const std::string report = format_ate_report(mean);
  std::cout << report;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "ate_report.txt");
    os << report;
  }
  return 0;
}

// ---- warp --------------------------------------------------------------------

int cmd_warp(const std::string& image_path, const std::string& disp_path,
             const std::string& units, const std::string& checkpoint, const std::string& out) {
  Tensor image = load_image(image_path);
  Tensor disp = load_raster(disp_path);
  if (disp.rank() != 3 || disp.dim(0) != 1)
    throw FormatError(disp_path + ": disparity raster must be [1,H,W]");
  if (disp.dim(1) != image.dim(1) || disp.dim(2) != image.dim(2))
    throw DimensionError("image and disparity sizes differ");
  const int h = image.dim(1), w = image.dim(2);
  float to_px = 1.f, to_norm = 1.f / static_cast<float>(w);
  if (units == "norm") {
    to_px = static_cast<float>(w);
    to_norm = 1.f;
  } else if (units != "px") {
    throw ConfigError("--disparity-units expects px|norm");
  }
  fs::create_directories(out);

  Tape t;
  Tensor img_b({1, 3, h, w});
  std::copy(image.data(), image.data() + image.size(), img_b.data());
  Tensor disp_px({1, 1, h, w});
  for (std::int64_t i = 0; i < disp.size(); ++i) disp_px[i] = disp[i] * to_px;
  Var recon = disparity_warp(t.constant(img_b), t.constant(disp_px), +1);
  Tensor bis = t.value(recon);
  Tensor bis_img({3, h, w});
  std::copy(bis.data(), bis.data() + bis_img.size(), bis_img.data());
  save_image_ppm((fs::path(out) / "bis.ppm").string(), bis_img);

  if (!checkpoint.empty()) {
    Checkpoint ck = load_checkpoint_file(checkpoint);
    TrainMode mode;
    NetworkConfig net = config_from_checkpoint(ck, &mode);
    if (mode == TrainMode::BisOnly)
      throw ContractError("checkpoint was trained without the deep sampler");
    if (net.input_h != h || net.input_w != w)
      throw DimensionError("checkpoint resolution differs from the input image");
    DisNet dis = build_disnet(net, 0);
    load_model_params(dis.model, ck);
    Tensor disp_norm({1, 1, h, w});
    for (std::int64_t i = 0; i < disp.size(); ++i) disp_norm[i] = disp[i] * to_norm;
    Tape t2;
    DisNetRun run = disnet_forward(t2, dis, t2.constant(img_b), t2.constant(disp_norm));
    Tensor pred = t2.value(vclamp(run.pred[0], 0.f, 1.f));
    Tensor dis_img({3, h, w});
    std::copy(pred.data(), pred.data() + dis_img.size(), dis_img.data());
    save_image_ppm((fs::path(out) / "dis.ppm").string(), dis_img);
  }
  std::cout << "wrote reconstructions to " << out << "\n";
  return 0;
}

// ---- info --------------------------------------------------------------------

int cmd_info(const std::string& checkpoint) {
  Checkpoint ck = load_checkpoint_file(checkpoint);
  std::map<std::string, std::int64_t> per_model;
  std::int64_t total = 0;
  for (const auto& e : ck.entries) {
    const auto slash = e.name.find('/');
    const std::string group = slash == std::string::npos ? e.name : e.name.substr(0, slash);
    if (group == "adam" || group == "trainer" || group == "meta") continue;
    per_model[group] += e.value.size();
    total += e.value.size();
  }
  for (const auto& [name, count] : per_model)
    std::cout << name << "=" << count << "\n";
  std::cout << "total=" << total << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"self-supervised stereo depth and ego-motion toolkit"};
  app.require_subcommand(1);

  std::string config, out, mode, checkpoint, split, calib, seq, image, dispf, resume;
  std::string cap = "80", align = "rigid", crop, units = "px";
  std::uint64_t seed = 0;
  double width_mult = 0;
  std::int64_t iters = 0, stop_after = 0;
  int count = 8, seq_frames = 12, save_every = 0;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config, "key=value configuration file");
    c->add_option("--seed", seed, "RNG seed");
  };

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic stereo+temporal dataset");
  add_common(synth);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--count", count, "number of stereo samples");
  synth->add_option("--seq-frames", seq_frames, "length of the odometry sequence");

  CLI::App* train = app.add_subcommand("train", "run the trainer");
  add_common(train);
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--mode", mode, "bis_only|bis_plus_dis|full");
  train->add_option("--width-mult", width_mult, "channel width multiplier");
  train->add_option("--iters", iters, "total iterations");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--save-every", save_every, "periodic checkpoint interval");
  train->add_option("--stop-after", stop_after, "pause after this iteration, keeping the schedule");

  CLI::App* evald = app.add_subcommand("eval-depth", "depth error metrics on a split list");
  add_common(evald);
  evald->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  evald->add_option("--split", split, "split list file")->required();
  evald->add_option("--calib", calib, "calibration file")->required();
  evald->add_option("--cap", cap, "depth cap in meters: 50|80|none");
  evald->add_option("--crop", crop, "evaluation crop x0,y0,x1,y1");
  evald->add_option("--out", out, "directory for the report file");

  CLI::App* evalp = app.add_subcommand("eval-pose", "snippet trajectory error on a sequence");
  add_common(evalp);
  evalp->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  evalp->add_option("--seq", seq, "sequence directory (frame_*.ppm + poses.txt)")->required();
  evalp->add_option("--align", align, "none|rigid|rigid_scale");
  evalp->add_option("--out", out, "directory for the report file");

  CLI::App* warp = app.add_subcommand("warp", "reconstruct the opposite view from image+disparity");
  add_common(warp);
  warp->add_option("--image", image, "input image")->required();
  warp->add_option("--disparity", dispf, "disparity raster (UDT1)")->required();
  warp->add_option("--disparity-units", units, "px|norm");
  warp->add_option("--checkpoint", checkpoint, "also run the deep sampler from this checkpoint");
  warp->add_option("--out", out, "output directory")->required();

  CLI::App* info = app.add_subcommand("info", "parameter counts of a checkpoint");
  add_common(info);
  info->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  std::vector<const char*> argv;
  argv.push_back("udepth");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, seed, out, count, seq_frames);
    if (train->parsed())
      return cmd_train(config, seed, mode, width_mult, iters, out, resume, save_every,
                       stop_after);
    if (evald->parsed()) return cmd_eval_depth(checkpoint, split, calib, cap, crop, out);
    if (evalp->parsed()) return cmd_eval_pose(checkpoint, seq, align, out);
    if (warp->parsed()) return cmd_warp(image, dispf, units, checkpoint, out);
    if (info->parsed()) return cmd_info(checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no command\n";
  return 2;
}

}  // namespace udepth::cli
