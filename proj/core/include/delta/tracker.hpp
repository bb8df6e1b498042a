#pragma once

#include <optional>
#include <vector>

#include "delta/encoder.hpp"
#include "delta/nn.hpp"

namespace delta {

enum class SpatialVariant { kNone, kFull, kCoTracker, kOurs };
enum class DepthRepr { kLogDepth, kDeltaDepth, kInvDepth };

struct TrackerConfig {
  int blocks = 3;
  int heads = 4;
  int64_t hidden = 128;
  int m_iter = 4;
  int64_t window = 8;   // S
  int64_t overlap = 4;
  int64_t k_virtual = 16;
  int anchor_grid_h = 4;  // inference anchors: uniform grid over the coarse map
  int anchor_grid_w = 4;
  int patch_size = 4;     // p; dense local attention patches of L = p^2 tracks
  int corr_radius = 3;
  int mlp_ratio = 2;
  int n_freq = 10;        // sinusoid octaves per scalar (width 2*n_freq+1)
  double pos_scale_uv = 1.0 / 16.0;
  double pos_scale_depth = 1.0;
  double time_scale = 1.0;
  bool pos_embed_depth = true;  // depth channel of the positional embedding
  double vis_init_logit = 10.0;
  SpatialVariant variant = SpatialVariant::kOurs;
  bool local_attention = true;
  int64_t full_attention_cap = 4096;
  DepthRepr depth_repr = DepthRepr::kLogDepth;
  double min_depth = 1e-3;  // clamp for the delta/inverse representations
  int feature_stride = 4;   // r: track features and the coarse track grid

  void validate() const;
  int64_t anchor_count() const {
    return static_cast<int64_t>(anchor_grid_h) * anchor_grid_w;
  }
};

/// Evolving trajectories over one window or a whole video, frame-major:
/// row t*N + n holds track n at frame t.
struct TrackState {
  int64_t t_len = 0, n = 0;
  Tensor uv;          // [T*N, 2] full-resolution pixel coordinates
  Tensor log_d;       // [T*N, 1]
  Tensor vis_logit;   // [T*N, 1]
  Tensor track_feat;  // [T*N, Df]
  std::vector<double> query_uv;     // N*2
  std::vector<double> query_log_d;  // N

  /// Values-only copy with fresh leaves (cuts the autodiff graph).
  TrackState detached() const;
};

/// Local-attention patches and anchor token indices for one track set.
struct TrackGroups {
  std::vector<std::vector<int64_t>> patches;  // track indices per patch
  std::vector<int64_t> anchors;               // anchor token indices
};

/// Dense coarse grid (gh x gw tracks): patches from the frame-0 grid, and
/// anchors as a uniform ah x aw sub-grid of the tracks themselves.
TrackGroups dense_grid_groups(int64_t gh, int64_t gw, int patch_size,
                              int anchor_h, int anchor_w);

/// Patchwise-training layout: ph x pw patch tracks in local patches plus
/// n_extra anchor tracks appended behind them (excluded from local
/// attention and from supervision).
TrackGroups training_patch_groups(int64_t ph, int64_t pw, int patch_size,
                                  int64_t n_extra);

/// Per-frame inputs of one temporal window.
struct WindowInputs {
  std::vector<FeaturePyramid> pyramids;
  std::vector<Tensor> depth_maps;  // [H, W] raw positive depths
  int64_t height = 0, width = 0;
};

class Tracker {
 public:
  Tracker() = default;
  Tracker(const TrackerConfig& cfg, const EncoderConfig& enc, ParamStore& ps,
          Rng& rng);

  const TrackerConfig& config() const { return cfg_; }
  int64_t token_width() const;
  int64_t corr_width() const;

  /// Replicates queries across t_len frames; track features sampled from the
  /// stride-r level of the frame-0 pyramid, depth from the frame-0 map.
  TrackState init_tracks(const std::vector<double>& queries_uv,
                         const Tensor& frame0_depth,
                         const FeaturePyramid& pyramid0, int64_t t_len) const;

  /// Assembles the per-track per-frame transformer tokens.
  Tensor build_tokens(const TrackState& state, const WindowInputs& win) const;

  struct BlockIo {
    Tensor x;  // [S*N, hidden] real-track tokens, frame-major
    Tensor v;  // [S*K, hidden] virtual tokens (undefined when unused)
  };
  /// One transformer block: temporal attention, spatial attention
  /// (local then global), MLP. Exposed for the cost audit.
  BlockIo apply_block(int block_idx, BlockIo io, int64_t s_len, int64_t n,
                      const TrackGroups& groups) const;

  BlockIo make_virtual_tokens(int64_t s_len) const;

  /// M_iter refinement passes; the window's first frame is never modified.
  /// per_iter, when given, receives the state after every iteration.
  TrackState refine_window(const TrackState& state, const WindowInputs& win,
                           const TrackGroups& groups, int m_iter,
                           std::vector<TrackState>* per_iter = nullptr) const;

 private:
  struct Block {
    LayerNormLayer t_ln;
    MhaProj t_attn;
    LayerNormLayer l_ln;
    MhaProj l_attn;
    LayerNormLayer va_ln_q, va_ln_kv;
    MhaProj va_attn;
    LayerNormLayer vs_ln;
    MhaProj vs_attn;
    LayerNormLayer xv_ln_q, xv_ln_kv;
    MhaProj xv_attn;
    LayerNormLayer mlp_ln;
    MlpBlock mlp;
  };

  Tensor depth_coordinate(const Tensor& log_d) const;
  Tensor position_embedding(const TrackState& state) const;
  Tensor time_embedding_rows(int64_t s_len, int64_t n, const Linear& proj) const;

  TrackerConfig cfg_;
  int64_t d_f_ = 0;
  int n_levels_ = 0;
  Linear input_proj_;
  LayerNormLayer input_ln_;
  Linear pos_proj_;   // 3*(2F+1) -> token width
  Linear time_proj_;  // (2F+1) -> token width
  Tensor virtual_embed_;  // [K, hidden]
  Linear vtime_proj_;     // (2F+1) -> hidden
  std::vector<Block> blocks_;
  LayerNormLayer head_ln_;
  Linear head_uv_, head_depth_, head_feat_, head_vis_;
};

/// Window start offsets: 0, S-ov, 2(S-ov), ... with the last window clamped
/// to end exactly at t_len.
std::vector<int64_t> window_starts(int64_t t_len, int64_t s_len,
                                   int64_t overlap);

/// Coarse query grid at stride r: cell (i, j) maps to full-resolution pixel
/// (j*r + r/2, i*r + r/2).
std::vector<double> coarse_grid_queries(int64_t h, int64_t w, int r);

}  // namespace delta
