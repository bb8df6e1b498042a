#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "delta/common.hpp"

namespace delta {

/// Explicit sprite kinematics; when a scene config carries overrides they
/// replace the seeded random draws (used heavily in tests).
struct SpriteSpec {
  std::array<double, 2> position{0, 0};  // top-left at frame 0, pixels
  std::array<double, 2> size{16, 16};    // width, height in pixels
  double depth = 4.0;                    // at frame 0
  std::array<double, 2> velocity{0, 0};  // px/frame
  double depth_vel = 0.0;                // log-depth change per frame
};

struct SceneConfig {
  int64_t t = 12;
  int64_t h = 64;
  int64_t w = 64;
  int n_sprites = 4;
  double near = 2.0;
  double far = 8.0;

  // Random draw ranges (used when no override is given).
  double sprite_speed_max = 2.5;      // px/frame per axis
  double sprite_depth_vel_max = 0.04; // |log-depth| change per frame
  double sprite_min_size = 12;
  double sprite_max_size = 28;
  double cam_speed_max = 1.0;         // px/frame per axis
  double cam_depth_scale_max = 0.02;  // |log| dolly factor per frame

  // Procedural texture: value-noise grid resolution per surface.
  int texture_cells = 10;

  double depth_noise_std = 0.0;  // Gaussian in log space, frames t >= 1 only

  // Pinhole intrinsics recorded for metric lifting.
  double focal = 64.0;

  // Overrides; empty means "draw from seed".
  std::vector<SpriteSpec> sprites_override;
  std::vector<std::array<double, 2>> cam_translation_override;  // per-frame delta
  std::vector<double> cam_depth_scale_override;                 // per-frame log delta

  void validate() const;
};

struct RgbdSequence {
  int64_t t = 0, h = 0, w = 0;
  std::vector<double> rgb;        // T*H*W*3 in [0,1]
  std::vector<double> depth;      // T*H*W, strictly positive
  bool has_gt = false;
  std::vector<double> gt_tracks;  // T*H*W*3: (u, v, d) per frame-0 pixel
  std::vector<uint8_t> gt_vis;    // T*H*W
  uint64_t seed = 0;
  double focal = 0, cx = 0, cy = 0;
  SceneConfig config;

  int64_t pix() const { return h * w; }
  double depth_at(int64_t frame, int64_t y, int64_t x) const {
    return depth[(frame * h + y) * w + x];
  }
};

/// Layered sprite renderer with dense ground truth. Deterministic in
/// (config, seed).
RgbdSequence generate_sequence(const SceneConfig& config, uint64_t seed);

void save_dataset(const RgbdSequence& seq, const std::filesystem::path& dir);
RgbdSequence load_dataset(const std::filesystem::path& dir);

/// Writes sequences as dir/seq_00000... plus an index.json.
void save_dataset_collection(const std::vector<RgbdSequence>& seqs,
                             const std::filesystem::path& dir);
/// Loads either a collection directory (index.json) or a single sequence.
std::vector<RgbdSequence> load_dataset_collection(
    const std::filesystem::path& dir);

/// Mean 2D endpoint error (frames 1..T-1) of the constant prediction
/// (u_t, v_t) := (u_0, v_0).
double zero_motion_baseline(const RgbdSequence& seq);
/// Mean |log(d_t / d_0)| over frames 1..T-1: the depth analogue.
double zero_motion_depth_baseline(const RgbdSequence& seq);

}  // namespace delta
