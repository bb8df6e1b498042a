#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json_fwd.hpp>

#include "delta/encoder.hpp"
#include "delta/serialize.hpp"
#include "delta/synthdata.hpp"
#include "delta/tracker.hpp"
#include "delta/upsampler.hpp"

namespace delta {

struct ModelConfig {
  EncoderConfig encoder;
  TrackerConfig tracker;
  UpsamplerConfig upsampler;

  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig preset(const std::string& name);

  nlohmann::json to_json() const;
  /// Rejects unknown keys anywhere in the document.
  static ModelConfig from_json(const nlohmann::json& j);

  void validate() const;
};

struct DenseTrackResult {
  TrackFile coarse;
  TrackFile fine;  // empty (n == 0) in sparse mode
};

/// The full pipeline: encoder + tracker + upsampler sharing one parameter
/// store.
class DeltaModel {
 public:
  DeltaModel(const ModelConfig& cfg, uint64_t init_seed);
  DeltaModel(const DeltaModel&) = delete;
  DeltaModel& operator=(const DeltaModel&) = delete;

  std::unique_ptr<DeltaModel> clone() const;

  ModelConfig cfg;
  ParamStore params;
  Encoder encoder;
  Tracker tracker;
  Upsampler upsampler;
  uint64_t init_seed = 0;

  static Tensor frame_tensor(const RgbdSequence& seq, int64_t t);
  static Tensor depth_tensor(const RgbdSequence& seq, int64_t t);

  std::vector<FeaturePyramid> compute_pyramids(const RgbdSequence& seq) const;
  WindowInputs window_inputs(const RgbdSequence& seq,
                             const std::vector<FeaturePyramid>& pyramids,
                             int64_t start, int64_t s_len) const;

  /// Windowed whole-video dense tracking on the stride-r coarse grid,
  /// followed by the learned upsampler (skipped in sparse mode).
  DenseTrackResult track_video_dense(const RgbdSequence& seq) const;

  /// Sparse-mode tracking of explicit query points (local attention and the
  /// upsampler disabled).
  TrackFile track_video_sparse(const RgbdSequence& seq,
                               const std::vector<double>& queries_uv) const;

  void save_checkpoint(const std::filesystem::path& dir) const;
  static std::unique_ptr<DeltaModel> load_checkpoint(
      const std::filesystem::path& dir);
};

}  // namespace delta
