#include "delta/upsampler.hpp"

#include <cmath>

namespace delta {

void UpsamplerConfig::validate() const {
  check(kappa >= 1 && kappa % 2 == 1, "UpsamplerConfig: kappa must be odd, got ",
        kappa);
  check(tau >= 1, "UpsamplerConfig: tau must be >= 1");
  check(r >= 2 && (r & (r - 1)) == 0, "UpsamplerConfig: r must be a power of two, got ",
        r);
  check(d_up >= heads && d_up % heads == 0,
        "UpsamplerConfig: d_up must be a multiple of heads");
}

UpsampleGeometry upsample_geometry(int64_t h, int64_t w, int r, int kappa) {
  check(h % r == 0 && w % r == 0, "upsample_geometry: ", h, "x", w,
        " not divisible by r=", r);
  check(kappa % 2 == 1, "upsample_geometry: kappa must be odd");
  UpsampleGeometry g;
  g.coarse_h = h / r;
  g.coarse_w = w / r;
  const int half = kappa / 2;
  const double off = r / 2;
  g.neighbor_index.resize(h * w * kappa * kappa);
  g.l1_dist.resize(h * w * kappa * kappa);
  for (int64_t y = 0; y < h; ++y) {
    const int64_t ci = std::min<int64_t>(y / r, g.coarse_h - 1);
    const double vc = (y - off) / r;
    for (int64_t x = 0; x < w; ++x) {
      const int64_t cj = std::min<int64_t>(x / r, g.coarse_w - 1);
      const double uc = (x - off) / r;
      int64_t slot = (y * w + x) * kappa * kappa;
      for (int dy = -half; dy <= half; ++dy) {
        const int64_t ni =
            std::clamp<int64_t>(ci + dy, 0, g.coarse_h - 1);
        for (int dx = -half; dx <= half; ++dx, ++slot) {
          const int64_t nj =
              std::clamp<int64_t>(cj + dx, 0, g.coarse_w - 1);
          g.neighbor_index[slot] = ni * g.coarse_w + nj;
          g.l1_dist[slot] = std::fabs(uc - nj) + std::fabs(vc - ni);
        }
      }
    }
  }
  return g;
}

UpsampleWeightMap nearest_weight_map(int64_t h, int64_t w, int r, int kappa) {
  UpsampleGeometry g = upsample_geometry(h, w, r, kappa);
  const int64_t k2 = static_cast<int64_t>(kappa) * kappa;
  std::vector<double> wv(h * w * k2, 0.0);
  // Ties break toward the center slot (the containing coarse cell), which
  // makes this classic nearest-neighbor upsampling.
  const int64_t center = k2 / 2;
  for (int64_t p = 0; p < h * w; ++p) {
    int64_t best = center;
    for (int64_t j = 0; j < k2; ++j)
      if (g.l1_dist[p * k2 + j] < g.l1_dist[p * k2 + best]) best = j;
    wv[p * k2 + best] = 1.0;
  }
  UpsampleWeightMap m;
  m.fine_h = h;
  m.fine_w = w;
  m.kappa = kappa;
  m.weights = Tensor::from_data({h * w, k2}, std::move(wv));
  m.neighbor_index = std::move(g.neighbor_index);
  return m;
}

UpsampleWeightMap bilinear_weight_map(int64_t h, int64_t w, int r, int kappa) {
  check(kappa >= 3, "bilinear_weight_map: kappa must be >= 3");
  UpsampleGeometry g = upsample_geometry(h, w, r, kappa);
  const int64_t k2 = static_cast<int64_t>(kappa) * kappa;
  const double off = r / 2;
  std::vector<double> wv(h * w * k2, 0.0);
  auto put = [&](int64_t p, int64_t coarse_idx, double weight) {
    if (weight == 0.0) return;
    for (int64_t j = 0; j < k2; ++j) {
      if (g.neighbor_index[p * k2 + j] == coarse_idx) {
        wv[p * k2 + j] += weight;
        return;
      }
    }
    fail("bilinear_weight_map: coarse cell ", coarse_idx,
         " not in the neighborhood of pixel ", p);
  };
  for (int64_t y = 0; y < h; ++y) {
    const double vc = (y - off) / r;
    const int64_t y0 =
        std::clamp<int64_t>(static_cast<int64_t>(std::floor(vc)), 0,
                            std::max<int64_t>(g.coarse_h - 2, 0));
    const double fy =
        g.coarse_h > 1 ? std::clamp(vc - y0, 0.0, 1.0) : 0.0;
    for (int64_t x = 0; x < w; ++x) {
      const double uc = (x - off) / r;
      const int64_t x0 =
          std::clamp<int64_t>(static_cast<int64_t>(std::floor(uc)), 0,
                              std::max<int64_t>(g.coarse_w - 2, 0));
      const double fx =
          g.coarse_w > 1 ? std::clamp(uc - x0, 0.0, 1.0) : 0.0;
      const int64_t p = y * w + x;
      const int64_t x1 = std::min(x0 + 1, g.coarse_w - 1);
      const int64_t y1 = std::min(y0 + 1, g.coarse_h - 1);
      put(p, y0 * g.coarse_w + x0, (1 - fy) * (1 - fx));
      put(p, y0 * g.coarse_w + x1, (1 - fy) * fx);
      put(p, y1 * g.coarse_w + x0, fy * (1 - fx));
      put(p, y1 * g.coarse_w + x1, fy * fx);
    }
  }
  UpsampleWeightMap m;
  m.fine_h = h;
  m.fine_w = w;
  m.kappa = kappa;
  m.weights = Tensor::from_data({h * w, k2}, std::move(wv));
  m.neighbor_index = std::move(g.neighbor_index);
  return m;
}

Upsampler::Upsampler(const UpsamplerConfig& cfg, int64_t coarse_feat_dim,
                     ParamStore& ps, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.d_up;
  coarse_in_ = ConvLayer(ps, "upsampler.coarse_in", 1, 1, coarse_feat_dim, d,
                         1, 0, rng);
  coarse_in_ln_ = LayerNormLayer(ps, "upsampler.coarse_in_ln", d);
  int stages = 0;
  for (int s = cfg_.r; s > 1; s /= 2) ++stages;
  for (int s = 0; s < stages; ++s) {
    up_convs_.emplace_back(ps, "upsampler.up" + std::to_string(s), 3, 3, d, d,
                           1, 1, rng);
    up_lns_.emplace_back(ps, "upsampler.up_ln" + std::to_string(s), d);
  }
  stem_ = ConvLayer(ps, "upsampler.stem", 3, 3, 3, d, 1, 1, rng);
  kv_proj_ = Linear(ps, "upsampler.kv_proj", coarse_feat_dim, d, rng);
  for (int b = 0; b < cfg_.tau; ++b) {
    const std::string bp = "upsampler.block" + std::to_string(b);
    CrossBlock cb;
    cb.ln_q = LayerNormLayer(ps, bp + ".ln_q", d);
    cb.ln_kv = LayerNormLayer(ps, bp + ".ln_kv", d);
    cb.attn = MhaProj(ps, bp + ".attn", d, cfg_.heads, rng);
    cb.mlp_ln = LayerNormLayer(ps, bp + ".mlp_ln", d);
    cb.mlp = MlpBlock(ps, bp + ".mlp", d, d * 2, rng);
    blocks_.push_back(std::move(cb));
  }
  head1_ = Linear(ps, "upsampler.head1", d, d, rng);
  head2_ = Linear(ps, "upsampler.head2", d,
                  static_cast<int64_t>(cfg_.kappa) * cfg_.kappa, rng, 0.1);
}

Tensor Upsampler::decode_fine(const Tensor& frame0,
                              const Tensor& coarse_feat) const {
  Tensor x = relu(coarse_in_ln_(coarse_in_(coarse_feat)));
  for (size_t s = 0; s < up_convs_.size(); ++s)
    x = relu(up_lns_[s](up_convs_[s](upsample2x_nearest(x))));
  return add(x, stem_(frame0));
}

UpsampleWeightMap Upsampler::compute_weights(const Tensor& frame0,
                                             const Tensor& coarse_feat) const {
  check(frame0.shape().size() == 3 && frame0.shape()[2] == 3,
        "compute_weights: frame must be [H,W,3], got ",
        shape_str(frame0.shape()));
  const int64_t h = frame0.shape()[0], w = frame0.shape()[1];
  check(h % cfg_.r == 0 && w % cfg_.r == 0, "compute_weights: ", h, "x", w,
        " not divisible by r=", cfg_.r);
  check(coarse_feat.shape().size() == 3 &&
            coarse_feat.shape()[0] == h / cfg_.r &&
            coarse_feat.shape()[1] == w / cfg_.r,
        "compute_weights: coarse features ", shape_str(coarse_feat.shape()),
        " do not match frame ", h, "x", w, " at r=", cfg_.r);

  if (cfg_.variant == UpsamplerVariant::kBilinear)
    return bilinear_weight_map(h, w, cfg_.r, cfg_.kappa);
  if (cfg_.variant == UpsamplerVariant::kNearest)
    return nearest_weight_map(h, w, cfg_.r, cfg_.kappa);

  UpsampleGeometry geo = upsample_geometry(h, w, cfg_.r, cfg_.kappa);
  const int64_t k2 = static_cast<int64_t>(cfg_.kappa) * cfg_.kappa;
  const int64_t n_pix = h * w;

  Tensor fine = decode_fine(frame0, coarse_feat);   // [H, W, d]
  Tensor f = reshape(fine, {n_pix, cfg_.d_up});

  if (cfg_.variant != UpsamplerVariant::kConv) {
    const int64_t n_coarse = geo.coarse_h * geo.coarse_w;
    Tensor ck = kv_proj_(reshape(coarse_feat, {n_coarse, coarse_feat.shape()[2]}));
    Tensor kv = gather_rows(ck, geo.neighbor_index);  // [n_pix*k2, d]

    // Static distance bias, one slope per head.
    Tensor bias;
    if (cfg_.variant == UpsamplerVariant::kAttentionAlibi) {
      std::vector<double> bv(n_pix * cfg_.heads * k2);
      for (int64_t p = 0; p < n_pix; ++p)
        for (int hh = 0; hh < cfg_.heads; ++hh) {
          const double slope =
              -cfg_.alibi_scale / static_cast<double>(int64_t{1} << (hh + 1));
          for (int64_t j = 0; j < k2; ++j)
            bv[(p * cfg_.heads + hh) * k2 + j] =
                slope * geo.l1_dist[p * k2 + j];
        }
      bias = Tensor::from_data({n_pix * cfg_.heads, k2}, std::move(bv));
    }

    for (const auto& blk : blocks_) {
      Tensor q = blk.ln_q(f);
      Tensor kvn = blk.ln_kv(kv);
      Tensor y = blk.attn(q, kvn, n_pix, MacCategory::kUpsampler,
                          bias.defined() ? &bias : nullptr);
      f = add(f, y);
      f = add(f, blk.mlp(blk.mlp_ln(f)));
    }
  }

  Tensor logits = head2_(gelu(head1_(f)));
  if (cfg_.variant == UpsamplerVariant::kAttentionAlibi) {
    // The distance penalty also biases the emitted weight logits, so the
    // weight map itself prefers near coarse cells.
    std::vector<double> bv(n_pix * k2);
    const double slope = -cfg_.alibi_scale * 0.5;
    for (int64_t i = 0; i < n_pix * k2; ++i) bv[i] = slope * geo.l1_dist[i];
    logits = add(logits, Tensor::from_data({n_pix, k2}, std::move(bv)));
  }
  UpsampleWeightMap m;
  m.fine_h = h;
  m.fine_w = w;
  m.kappa = cfg_.kappa;
  m.weights = softmax(logits);
  m.neighbor_index = std::move(geo.neighbor_index);
  return m;
}

FineTracks apply_upsample(const TrackState& coarse,
                          const UpsampleWeightMap& wmap) {
  const int64_t k2 = static_cast<int64_t>(wmap.kappa) * wmap.kappa;
  const int64_t n_pix = wmap.fine_h * wmap.fine_w;
  check(wmap.weights.shape() == Shape({n_pix, k2}),
        "apply_upsample: weight map shape ", shape_str(wmap.weights.shape()),
        " does not match ", wmap.fine_h, "x", wmap.fine_w, " kappa=",
        wmap.kappa);
  FineTracks out;
  out.t_len = coarse.t_len;
  out.n = n_pix;
  std::vector<Tensor> uv_frames, d_frames, v_frames;
  for (int64_t t = 0; t < coarse.t_len; ++t) {
    Tensor uv_t = slice_rows(coarse.uv, t * coarse.n, coarse.n);
    Tensor d_t = slice_rows(coarse.log_d, t * coarse.n, coarse.n);
    Tensor v_t = slice_rows(coarse.vis_logit, t * coarse.n, coarse.n);
    uv_frames.push_back(weighted_gather(uv_t, wmap.neighbor_index, wmap.weights));
    d_frames.push_back(weighted_gather(d_t, wmap.neighbor_index, wmap.weights));
    v_frames.push_back(weighted_gather(v_t, wmap.neighbor_index, wmap.weights));
  }
  out.uv = coarse.t_len == 1 ? uv_frames[0] : concat_rows(uv_frames);
  out.log_d = coarse.t_len == 1 ? d_frames[0] : concat_rows(d_frames);
  out.vis_logit = coarse.t_len == 1 ? v_frames[0] : concat_rows(v_frames);
  return out;
}

}  // namespace delta
