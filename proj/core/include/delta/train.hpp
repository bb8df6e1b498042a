#pragma once

#include <filesystem>
#include <optional>

#include "delta/loss.hpp"
#include "delta/model.hpp"

namespace delta {

/// Adam over a ParamStore, iterating parameters in registration order.
class Adam {
 public:
  Adam(ParamStore& ps, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// Global grad norm after scaling; caps the effective scale so the norm
  /// does not exceed max_norm. Returns the pre-clip norm.
  double clip_grad_norm(double max_norm, double& grad_scale) const;
  void step(double lr, double grad_scale);

 private:
  ParamStore& ps_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  int64_t steps = 2000;
  double lr = 3e-4;
  int64_t warmup = 100;
  std::string schedule = "constant";  // "constant" | "onecycle"
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 1.0;
  int64_t patch_h = 8, patch_w = 10;  // coarse-grid training patch
  bool use_anchors = true;
  bool use_upsampler = true;
  /// Sample later window starts too, initializing the state from noised
  /// ground truth to mimic propagated estimates at inference time.
  bool mix_window_starts = true;
  double prop_noise_uv = 1.0;     // px
  double prop_noise_logd = 0.05;  // log units
  int64_t batch = 1;
  int threads = 1;
  int64_t val_every = 250;
  int64_t checkpoint_every = 500;
  bool augment = true;
  bool supervise_occluded = true;
  uint64_t seed = 0;
  LossWeights loss;

  void validate() const;
};

struct TrainResult {
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;
  double final_val_epe = 0;
  double final_val_log_depth_err = 0;
  int64_t steps_run = 0;
};

/// Patchwise training with appended anchor tracks; writes a JSON-lines
/// metrics log and periodic checkpoints under out_dir. Deterministic in
/// (model, config) when threads == 1.
TrainResult train_model(DeltaModel& model,
                        const std::vector<RgbdSequence>& train_seqs,
                        const std::vector<RgbdSequence>& val_seqs,
                        const TrainConfig& cfg,
                        const std::filesystem::path& out_dir);

struct ValScores {
  double epe = 0;
  double log_depth_err = 0;
};
/// Dense fine-resolution EPE and log-depth error over held-out sequences.
ValScores validate_dense(const DeltaModel& model,
                         const std::vector<RgbdSequence>& seqs);

}  // namespace delta
