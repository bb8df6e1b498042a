#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "delta/tensor.hpp"

namespace delta {

// ---------------------------------------------------------------------------
// Elementwise. Binary ops accept equal shapes, a scalar rhs, a rhs matching
// the last dimension (per-column bias), or a rhs with one value per row.
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor vexp(const Tensor& a);
Tensor vlog(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor vabs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
Tensor reciprocal(const Tensor& a);

// ---------------------------------------------------------------------------
// Shape and indexing.
// ---------------------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
/// Concatenates along the last axis; all inputs share leading dims.
Tensor concat_cols(const std::vector<Tensor>& xs);
/// Stacks row blocks; all inputs share the last dim.
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t n);
Tensor slice_rows(const Tensor& a, int64_t r0, int64_t n);
/// Rows picked by index (duplicates allowed). Backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx);
/// Inverse of gather: out[idx[i]] += a[i]; out has n_rows rows.
Tensor scatter_rows(const Tensor& a, std::vector<int64_t> idx, int64_t n_rows);

// ---------------------------------------------------------------------------
// Linear algebra and normalization.
// ---------------------------------------------------------------------------
/// a: [..., K] x b: [K, N] -> [..., N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);
/// Layer norm over the last axis with learnable gain/bias of size [C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

// ---------------------------------------------------------------------------
// Reductions and losses.
// ---------------------------------------------------------------------------
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// sum(x*mask)/sum(mask); mask is constant. sum(mask) must be positive.
Tensor masked_mean(const Tensor& x, const Tensor& mask);
/// Elementwise numerically-stable BCE of logits against {0,1} targets.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// ---------------------------------------------------------------------------
// Embeddings.
// ---------------------------------------------------------------------------
/// Per-channel sinusoidal embedding: each scalar s maps to
/// [s, sin(f_j*s), cos(f_j*s)] for f_j = base_freq * 2^j, j < n_freq.
/// [R, C] -> [R, C*(2*n_freq+1)].
Tensor sin_embed(const Tensor& x, int n_freq, double base_freq);

// ---------------------------------------------------------------------------
// Attention. One audited kernel used by every attention site in the model.
// q: [batch*nq, D]; k, v: [batch*nk, D]; D divisible by heads.
// Optional additive bias laid out as [batch*heads*nq, nk].
// ---------------------------------------------------------------------------
enum class MacCategory {
  kSpatial = 0,          // per-frame cross-track attention
  kTemporalReal = 1,     // along-time attention of real tracks
  kTemporalVirtual = 2,  // along-time attention of virtual tracks
  kUpsampler = 3,
  kOther = 4,
};

/// Tally of query-key score pairs (one unit per Q-K pair, head count ignored).
struct MacCounters {
  static constexpr int kCategories = 5;
  bool enabled = false;
  int64_t by_category[kCategories] = {0, 0, 0, 0, 0};
  int64_t total() const {
    int64_t s = 0;
    for (int64_t v : by_category) s += v;
    return s;
  }
  int64_t at(MacCategory c) const { return by_category[static_cast<int>(c)]; }
  void reset() {
    for (auto& v : by_category) v = 0;
  }
};

MacCounters& mac_counters();

/// Enables and resets the thread-local counters for the current scope.
struct MacCounterScope {
  MacCounterScope() {
    prev_ = mac_counters().enabled;
    mac_counters().enabled = true;
    mac_counters().reset();
  }
  ~MacCounterScope() { mac_counters().enabled = prev_; }

 private:
  bool prev_;
};

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 int64_t batch, int heads, const Tensor* bias,
                 MacCategory category);

// ---------------------------------------------------------------------------
// Convolution. x: [H, W, Cin]; w: [kh, kw, Cin, Cout]; zero padding.
// ---------------------------------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor upsample2x_nearest(const Tensor& x);

// ---------------------------------------------------------------------------
// Sampling. Points are (x=column, y=row), clamped to the map border.
// ---------------------------------------------------------------------------
/// map: [H, W, C]; pts: [P, 2] -> [P, C]. Differentiable in map and pts.
Tensor bilinear_sample(const Tensor& map, const Tensor& pts);

/// Dot products of per-track features against map features sampled on the
/// (2*radius+1)^2 grid with unit spacing in level coordinates, centered at
/// uv/stride. map: [Hl, Wl, Df]; feats: [N, Df]; uv: [N, 2] (full-res coords).
/// Taps are ordered row-major over (dy, dx) in [-radius, radius].
Tensor corr_features(const Tensor& map, const Tensor& feats, const Tensor& uv,
                     int radius, int stride);

/// log(bilinear_sample(depth_map, p)) - log_d per grid point; unit spacing in
/// full-resolution pixels. depth_map: [H, W] (constant, strictly positive);
/// log_d: [N, 1]; uv: [N, 2] -> [N, (2*radius+1)^2].
Tensor depth_corr(const Tensor& depth_map, const Tensor& log_d,
                  const Tensor& uv, int radius);

/// Raw bilinear samples of a single-channel map on the unit-spaced
/// (2*radius+1)^2 grid around each uv. map: [H, W] -> [N, (2*radius+1)^2].
Tensor grid_sample_taps(const Tensor& map, const Tensor& uv, int radius);

/// out[b] = sum_j w[b,j] * values[nbr[b*K+j]].
/// values: [N, C]; w: [B, K]; nbr: flat B*K indices -> [B, C].
Tensor weighted_gather(const Tensor& values, const std::vector<int64_t>& nbr,
                       const Tensor& w);

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------
struct GradCheckOptions {
  double eps = 1e-5;
  /// Max coordinates checked per input (-1 = all), picked deterministically.
  int max_coords_per_input = -1;
  uint64_t select_seed = 0;
};

/// Max over checked coordinates of |analytic - central_fd| / max(|analytic|,
/// |fd|, 1). f must be pure and scalar-valued; non-finite f(x) fails.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts = {});

}  // namespace delta
