#pragma once

#include <vector>

#include "delta/nn.hpp"
#include "delta/tracker.hpp"

namespace delta {

enum class UpsamplerVariant {
  kAttentionAlibi,  // cross-attention with the distance bias (default)
  kAttention,       // cross-attention, no bias
  kConv,            // conv head on the decoded fine features
  kBilinear,
  kNearest,
};

struct UpsamplerConfig {
  int kappa = 3;  // odd neighborhood side; kappa^2 coarse neighbors per pixel
  int tau = 2;    // cross-attention blocks
  int r = 4;      // upsampling factor (power of two)
  int64_t d_up = 32;
  int heads = 2;
  double alibi_scale = 1.0;  // multiplies the per-head slope schedule
  UpsamplerVariant variant = UpsamplerVariant::kAttentionAlibi;

  void validate() const;
};

/// Per fine pixel: kappa^2 nonnegative weights summing to one over its
/// coarse neighborhood, plus the neighborhood indices (border-clamped,
/// duplicates allowed at borders).
struct UpsampleWeightMap {
  int64_t fine_h = 0, fine_w = 0;
  int kappa = 0;
  Tensor weights;                       // [H*W, kappa^2]
  std::vector<int64_t> neighbor_index;  // H*W*kappa^2 coarse indices
};

/// Neighborhood indices and L1 distances (in coarse units) shared by all
/// upsampler variants.
struct UpsampleGeometry {
  int64_t coarse_h = 0, coarse_w = 0;
  std::vector<int64_t> neighbor_index;  // H*W*kappa^2
  std::vector<double> l1_dist;          // H*W*kappa^2
};

UpsampleGeometry upsample_geometry(int64_t h, int64_t w, int r, int kappa);

/// Fixed interpolation baselines expressed in the same weight-map form.
UpsampleWeightMap bilinear_weight_map(int64_t h, int64_t w, int r, int kappa);
UpsampleWeightMap nearest_weight_map(int64_t h, int64_t w, int r, int kappa);

class Upsampler {
 public:
  Upsampler() = default;
  Upsampler(const UpsamplerConfig& cfg, int64_t coarse_feat_dim,
            ParamStore& ps, Rng& rng);

  const UpsamplerConfig& config() const { return cfg_; }

  /// Learns the weight map from the window's first frame; the same map is
  /// reused for every frame of the window. frame0: [H, W, 3];
  /// coarse_feat: [H/r, W/r, D].
  UpsampleWeightMap compute_weights(const Tensor& frame0,
                                    const Tensor& coarse_feat) const;

 private:
  Tensor decode_fine(const Tensor& frame0, const Tensor& coarse_feat) const;

  UpsamplerConfig cfg_;
  ConvLayer coarse_in_;
  LayerNormLayer coarse_in_ln_;
  std::vector<ConvLayer> up_convs_;
  std::vector<LayerNormLayer> up_lns_;
  ConvLayer stem_;
  Linear kv_proj_;
  struct CrossBlock {
    LayerNormLayer ln_q, ln_kv;
    MhaProj attn;
    LayerNormLayer mlp_ln;
    MlpBlock mlp;
  };
  std::vector<CrossBlock> blocks_;
  Linear head1_, head2_;
};

/// Fine-resolution trajectories: per frame and fine pixel the convex
/// combination of the kappa^2 coarse neighbors (uv and log-depth averaged
/// as stored; visibility averaged as logits).
struct FineTracks {
  int64_t t_len = 0, n = 0;
  Tensor uv;         // [T*N, 2]
  Tensor log_d;      // [T*N, 1]
  Tensor vis_logit;  // [T*N, 1]
};

FineTracks apply_upsample(const TrackState& coarse,
                          const UpsampleWeightMap& wmap);

}  // namespace delta
