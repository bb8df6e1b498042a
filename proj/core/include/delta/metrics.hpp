#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delta/serialize.hpp"

namespace delta {

struct EpeResult {
  std::optional<double> all, vis, occ;  // absent when the restriction is empty
};

/// Mean 2D endpoint error over frames 1..T-1 (the query frame is excluded),
/// overall and restricted to gt-visible / gt-occluded points.
EpeResult endpoint_error(const std::vector<double>& pred_uv,
                         const std::vector<double>& gt_uv,
                         const std::vector<uint8_t>& gt_vis, int64_t t_len,
                         int64_t n);

/// IoU of the occluded sets over all T*N entries; 1.0 when both are empty.
double occlusion_iou(const std::vector<uint8_t>& pred_vis,
                     const std::vector<uint8_t>& gt_vis);

struct PinholeIntrinsics {
  double focal = 1, cx = 0, cy = 0;
};

struct TapVid3dResult {
  double apd3d = 0, aj = 0, oa = 0;  // percentages in [0, 100]
};

/// TAP-Vid3D-style metrics over all frames after pinhole lifting:
/// per threshold, APD counts gt-visible points within delta; Jaccard counts
/// a point positive only if within delta AND predicted visible.
/// pred/gt: T*N*3 as (u, v, d).
TapVid3dResult tapvid3d_metrics(const std::vector<double>& pred,
                                const std::vector<uint8_t>& pred_vis,
                                const std::vector<double>& gt,
                                const std::vector<uint8_t>& gt_vis,
                                const std::vector<double>& thresholds,
                                int64_t t_len, int64_t n,
                                const PinholeIntrinsics& intr);

struct EvalReport {
  std::optional<double> epe_all, epe_vis, epe_occ;
  double occ_iou = 0;
  double apd3d = 0, aj = 0, oa = 0;
  std::vector<double> thresholds;  // absolute, scene units
  double threshold_scale = 0;      // median gt depth used for scaling
  double mean_abs_log_depth_err = 0;

  nlohmann::json to_json() const;
};

/// Relative thresholds scaled by the median gt depth (frames 1..T-1).
EvalReport evaluate_tracks(const TrackFile& pred, const TrackFile& gt,
                           const std::vector<double>& rel_thresholds = {
                               0.01, 0.02, 0.04, 0.08, 0.16});

/// Dense ground-truth tracks of a dataset directory as a TrackFile.
TrackFile dataset_gt_tracks(const std::filesystem::path& dataset_dir);
TrackFile dataset_gt_tracks(const struct RgbdSequence& seq);

}  // namespace delta
