#pragma once

#include <optional>
#include <vector>

#include "delta/tracker.hpp"
#include "delta/upsampler.hpp"

namespace delta {

struct LossWeights {
  double lambda_2d = 100.0;
  double lambda_depth = 1.0;
  double lambda_visib = 0.1;
  /// Per-refinement-iteration weights; empty means uniform. Must sum to 1.
  std::vector<double> per_iteration;

  void validate(int m_iter) const;
  std::vector<double> iteration_weights(int m_iter) const;
};

/// Ground truth for one supervised track set, frame-major like TrackState.
struct TrackTargets {
  int64_t t_len = 0, n = 0;
  std::vector<double> uv;     // T*N*2
  std::vector<double> depth;  // T*N, linear depth
  std::vector<uint8_t> vis;   // T*N
};

struct LossOptions {
  bool supervise_occluded = true;  // positions of occluded points still count
};

struct LossBreakdown {
  double total = 0;
  double l2d_coarse = 0, ldepth_coarse = 0, lvisib_coarse = 0;
  double l2d_fine = 0, ldepth_fine = 0, lvisib_fine = 0;
};

/// Restricts a state to the given track subset (e.g. drops anchor extras).
TrackState gather_tracks(const TrackState& st,
                         const std::vector<int64_t>& track_idx);

/// L1 on 2D coordinates and inverse depth per refinement iteration, BCE on
/// visibility for the final iteration; the upsampled prediction adds the
/// same three terms once. Position terms are per-point (|du| + |dv|).
Tensor compute_loss(const std::vector<TrackState>& per_iter,
                    const TrackTargets& gt_coarse, const FineTracks* fine,
                    const TrackTargets* gt_fine, const LossWeights& weights,
                    const LossOptions& opts, LossBreakdown* breakdown);

}  // namespace delta
