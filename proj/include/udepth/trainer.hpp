#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "udepth/data.hpp"
#include "udepth/losses.hpp"
#include "udepth/networks.hpp"

namespace udepth {

enum class TrainMode { BisOnly, BisPlusDis, Full };
TrainMode parse_mode(const std::string& s);
std::string mode_name(TrainMode m);

struct TrainConfig {
  std::int64_t total_iters = 1000;
  float lr0 = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float adam_eps = 1e-8f;
  int batch = 2;
  TrainMode mode = TrainMode::BisOnly;
  std::uint64_t seed = 0;
  NetworkConfig net;
  LossWeights weights;
  SceneConfig scene;          // synthetic data source
  std::string split_path;    // when set, stereo pairs come from this list
  std::string calib_path;    // required with split_path
  bool augment_enabled = false;
  int log_every = 1;
  void validate() const;
};

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);
TrainConfig load_train_config(const std::string& path);

// lr0 until 3/5 of the run, half until 4/5, a quarter after
float lr_schedule(std::int64_t iter, std::int64_t total, float lr0);

struct AdamState {
  std::vector<Tensor> m, v;  // aligned with the parameter list
  std::int64_t step = 0;
};

// bias-corrected Adam; parameters receive fresh value tensors (buffers on the
// previous step's tape are never written through)
void adam_step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads,
               AdamState& state, float lr, float beta1, float beta2, float eps);

struct TrainSample {
  StereoSample stereo;
  TemporalSample temporal;  // frames[0] is the stereo left view
};

// name -> tensor records of a checkpoint file ("UDM2")
struct Checkpoint {
  std::vector<Parameter> entries;
  const Tensor* find(const std::string& name) const;
};

void save_checkpoint_file(const std::string& path, const std::vector<Parameter>& entries);
Checkpoint load_checkpoint_file(const std::string& path);
// copies matching entries into the model; throws FormatError on missing or
// mismatched parameters
void load_model_params(Model& m, const Checkpoint& ck);
// rebuilds the network config stored under meta/config
NetworkConfig config_from_checkpoint(const Checkpoint& ck, TrainMode* mode_out = nullptr);

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  LossBreakdown step();
  // builds the loss graph on the batch starting at sample_base without
  // touching the parameters; used for fixed-batch probes and validation
  LossBreakdown evaluate(std::int64_t sample_base);
  void run(std::ostream* log);  // remaining iterations, one log line per step

  std::int64_t iter() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  DispNet& dispnet() { return disp_; }
  DisNet& disnet() { return dis_; }
  PoseNet& posenet() { return pose_; }
  bool has_disnet() const { return has_dis_; }
  bool has_posenet() const { return has_pose_; }
  const std::vector<Parameter*>& parameters() const { return all_params_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  // deterministic sample stream: index -> scene, independent of call order
  TrainSample make_sample(std::int64_t index) const;

 private:
  TrainConfig cfg_;
  DispNet disp_;
  DisNet dis_;
  PoseNet pose_;
  bool has_dis_ = false;
  bool has_pose_ = false;
  AdamState adam_;
  std::int64_t iter_ = 0;
  std::vector<Parameter*> all_params_;
  std::vector<SplitRecord> split_;  // when training from files
  CameraRig split_rig_;

  struct StepGraph {
    LossVars loss;
    std::vector<Var> bound;  // aligned with all_params_
  };
  StepGraph build_graph(Tape& tape, std::int64_t sample_base);
  void rebuild_param_list();
};

}  // namespace udepth
