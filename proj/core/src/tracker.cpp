#include "delta/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace delta {

void TrackerConfig::validate() const {
  check(blocks >= 1 && heads >= 1 && hidden >= heads,
        "TrackerConfig: bad transformer dims");
  check(hidden % heads == 0, "TrackerConfig: hidden ", hidden,
        " not divisible by ", heads, " heads");
  check(m_iter >= 1, "TrackerConfig: m_iter must be >= 1");
  check(window >= 2, "TrackerConfig: window must be >= 2");
  check(overlap > 0 && overlap < window, "TrackerConfig: overlap ", overlap,
        " must be in (0, ", window, ")");
  check(k_virtual >= 1, "TrackerConfig: k_virtual must be >= 1");
  check(anchor_grid_h >= 1 && anchor_grid_w >= 1,
        "TrackerConfig: anchor grid must be >= 1x1");
  check(patch_size >= 1, "TrackerConfig: patch_size must be >= 1");
  check(corr_radius >= 0, "TrackerConfig: negative correlation radius");
  check(n_freq >= 1, "TrackerConfig: n_freq must be >= 1");
  check(feature_stride >= 1, "TrackerConfig: feature_stride must be >= 1");
  check(min_depth > 0, "TrackerConfig: min_depth must be positive");
}

TrackState TrackState::detached() const {
  TrackState out;
  out.t_len = t_len;
  out.n = n;
  out.uv = Tensor::from_data(uv.shape(), {uv.data().begin(), uv.data().end()});
  out.log_d =
      Tensor::from_data(log_d.shape(), {log_d.data().begin(), log_d.data().end()});
  out.vis_logit = Tensor::from_data(
      vis_logit.shape(), {vis_logit.data().begin(), vis_logit.data().end()});
  out.track_feat = Tensor::from_data(
      track_feat.shape(), {track_feat.data().begin(), track_feat.data().end()});
  out.query_uv = query_uv;
  out.query_log_d = query_log_d;
  return out;
}

TrackGroups dense_grid_groups(int64_t gh, int64_t gw, int patch_size,
                              int anchor_h, int anchor_w) {
  check(gh >= 1 && gw >= 1, "dense_grid_groups: empty grid");
  TrackGroups g;
  const int64_t ph = (gh + patch_size - 1) / patch_size;
  const int64_t pw = (gw + patch_size - 1) / patch_size;
  g.patches.assign(ph * pw, {});
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j)
      g.patches[(i / patch_size) * pw + j / patch_size].push_back(i * gw + j);
  for (int a = 0; a < anchor_h; ++a) {
    const int64_t ai = std::min<int64_t>((a * 2 + 1) * gh / (2 * anchor_h), gh - 1);
    for (int b = 0; b < anchor_w; ++b) {
      const int64_t aj =
          std::min<int64_t>((b * 2 + 1) * gw / (2 * anchor_w), gw - 1);
      g.anchors.push_back(ai * gw + aj);
    }
  }
  return g;
}

TrackGroups training_patch_groups(int64_t ph, int64_t pw, int patch_size,
                                  int64_t n_extra) {
  TrackGroups g = dense_grid_groups(ph, pw, patch_size, 1, 1);
  g.anchors.clear();
  for (int64_t m = 0; m < n_extra; ++m) g.anchors.push_back(ph * pw + m);
  return g;
}

std::vector<int64_t> window_starts(int64_t t_len, int64_t s_len,
                                   int64_t overlap) {
  check(s_len <= t_len, "window_starts: window length ", s_len,
        " exceeds video length ", t_len);
  check(overlap > 0 && overlap < s_len, "window_starts: overlap ", overlap,
        " must be in (0, ", s_len, ")");
  std::vector<int64_t> starts = {0};
  while (starts.back() + s_len < t_len) {
    int64_t next = starts.back() + (s_len - overlap);
    if (next + s_len > t_len) next = t_len - s_len;
    starts.push_back(next);
  }
  return starts;
}

std::vector<double> coarse_grid_queries(int64_t h, int64_t w, int r) {
  check(h % r == 0 && w % r == 0, "coarse_grid_queries: ", h, "x", w,
        " not divisible by stride ", r);
  const int64_t gh = h / r, gw = w / r;
  const double off = r / 2;
  std::vector<double> q(gh * gw * 2);
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      q[(i * gw + j) * 2] = j * r + off;
      q[(i * gw + j) * 2 + 1] = i * r + off;
    }
  return q;
}

Tracker::Tracker(const TrackerConfig& cfg, const EncoderConfig& enc,
                 ParamStore& ps, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  d_f_ = enc.d_f;
  n_levels_ = static_cast<int>(enc.strides.size());
  bool has_r = false;
  for (int s : enc.strides) has_r = has_r || s == cfg_.feature_stride;
  check(has_r, "Tracker: encoder pyramid has no level at feature stride ",
        cfg_.feature_stride);

  const int64_t d_tok = token_width();
  const int64_t h = cfg_.hidden;
  const int64_t embed_w = 2 * cfg_.n_freq + 1;
  input_proj_ = Linear(ps, "tracker.input_proj", d_tok, h, rng);
  input_ln_ = LayerNormLayer(ps, "tracker.input_ln", h);
  pos_proj_ = Linear(ps, "tracker.pos_proj", 3 * embed_w, d_tok, rng);
  time_proj_ = Linear(ps, "tracker.time_proj", embed_w, d_tok, rng);
  virtual_embed_ = ps.param("tracker.virtual_embed", {cfg_.k_virtual, h},
                            init_normal(cfg_.k_virtual * h, rng, 0.02));
  vtime_proj_ = Linear(ps, "tracker.vtime_proj", embed_w, h, rng);

  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string bp = "tracker.block" + std::to_string(b);
    Block blk;
    blk.t_ln = LayerNormLayer(ps, bp + ".t_ln", h);
    blk.t_attn = MhaProj(ps, bp + ".t_attn", h, cfg_.heads, rng);
    blk.l_ln = LayerNormLayer(ps, bp + ".l_ln", h);
    blk.l_attn = MhaProj(ps, bp + ".l_attn", h, cfg_.heads, rng);
    blk.va_ln_q = LayerNormLayer(ps, bp + ".va_ln_q", h);
    blk.va_ln_kv = LayerNormLayer(ps, bp + ".va_ln_kv", h);
    blk.va_attn = MhaProj(ps, bp + ".va_attn", h, cfg_.heads, rng);
    blk.vs_ln = LayerNormLayer(ps, bp + ".vs_ln", h);
    blk.vs_attn = MhaProj(ps, bp + ".vs_attn", h, cfg_.heads, rng);
    blk.xv_ln_q = LayerNormLayer(ps, bp + ".xv_ln_q", h);
    blk.xv_ln_kv = LayerNormLayer(ps, bp + ".xv_ln_kv", h);
    blk.xv_attn = MhaProj(ps, bp + ".xv_attn", h, cfg_.heads, rng);
    blk.mlp_ln = LayerNormLayer(ps, bp + ".mlp_ln", h);
    blk.mlp = MlpBlock(ps, bp + ".mlp", h, h * cfg_.mlp_ratio, rng);
    blocks_.push_back(std::move(blk));
  }

  head_ln_ = LayerNormLayer(ps, "tracker.head_ln", h);
  head_uv_ = Linear(ps, "tracker.head_uv", h, 2, rng, 0.1);
  head_depth_ = Linear(ps, "tracker.head_depth", h, 1, rng, 0.1);
  head_feat_ = Linear(ps, "tracker.head_feat", h, d_f_, rng, 0.1);
  head_vis_ = Linear(ps, "tracker.head_vis", h, 1, rng, 0.1);
}

int64_t Tracker::corr_width() const {
  const int64_t taps =
      (2 * cfg_.corr_radius + 1) * (2 * cfg_.corr_radius + 1);
  return n_levels_ * taps;
}

int64_t Tracker::token_width() const {
  const int64_t taps =
      (2 * cfg_.corr_radius + 1) * (2 * cfg_.corr_radius + 1);
  return d_f_ + corr_width() + taps + 1 + 3 * (2 * cfg_.n_freq + 1);
}

TrackState Tracker::init_tracks(const std::vector<double>& queries_uv,
                                const Tensor& frame0_depth,
                                const FeaturePyramid& pyramid0,
                                int64_t t_len) const {
  check(queries_uv.size() % 2 == 0, "init_tracks: odd query buffer");
  check(t_len >= 1, "init_tracks: t_len must be >= 1");
  const int64_t n = static_cast<int64_t>(queries_uv.size()) / 2;
  check(frame0_depth.shape().size() == 2, "init_tracks: depth must be [H,W]");
  const int64_t h = frame0_depth.shape()[0], w = frame0_depth.shape()[1];
  for (int64_t i = 0; i < n; ++i) {
    const double u = queries_uv[i * 2], v = queries_uv[i * 2 + 1];
    check(u >= 0 && u <= w - 1 && v >= 0 && v <= h - 1,
          "init_tracks: query ", i, " at (", u, ",", v,
          ") outside frame of size ", w, "x", h);
  }

  Tensor q = Tensor::from_data({n, 2}, queries_uv);
  Tensor d0 =
      bilinear_sample(reshape(frame0_depth, {h, w, 1}), q);  // [n,1]
  for (double d : d0.data())
    check(d > 0, "init_tracks: non-positive depth at a query point");
  Tensor log_d0 = vlog(d0);

  const PyramidLevel& level = pyramid_level_at(pyramid0, cfg_.feature_stride);
  Tensor feat0 =
      bilinear_sample(level.map, scale(q, 1.0 / cfg_.feature_stride));

  std::vector<int64_t> rep(t_len * n);
  for (int64_t t = 0; t < t_len; ++t)
    for (int64_t i = 0; i < n; ++i) rep[t * n + i] = i;

  TrackState st;
  st.t_len = t_len;
  st.n = n;
  st.uv = gather_rows(q, rep);
  st.log_d = gather_rows(log_d0, rep);
  st.track_feat = gather_rows(feat0, rep);
  st.vis_logit = Tensor::full({t_len * n, 1}, cfg_.vis_init_logit);
  st.query_uv = queries_uv;
  st.query_log_d.assign(log_d0.data().begin(), log_d0.data().end());
  return st;
}

Tensor Tracker::depth_coordinate(const Tensor& log_d) const {
  switch (cfg_.depth_repr) {
    case DepthRepr::kLogDepth:
      return log_d;
    case DepthRepr::kDeltaDepth:
      return vexp(log_d);
    case DepthRepr::kInvDepth:
      return vexp(scale(log_d, -1.0));
  }
  fail("unreachable depth repr");
}

Tensor Tracker::position_embedding(const TrackState& state) const {
  Tensor uv_s = scale(state.uv, cfg_.pos_scale_uv);
  const double ds =
      cfg_.pos_embed_depth ? cfg_.pos_scale_depth : 0.0;
  Tensor d_s = scale(depth_coordinate(state.log_d), ds);
  Tensor pos = concat_cols({uv_s, d_s});
  return pos_proj_(sin_embed(pos, cfg_.n_freq, 1.0));
}

Tensor Tracker::time_embedding_rows(int64_t s_len, int64_t n,
                                    const Linear& proj) const {
  std::vector<double> tv(s_len);
  for (int64_t t = 0; t < s_len; ++t) tv[t] = t * cfg_.time_scale;
  Tensor te = proj(sin_embed(Tensor::from_data({s_len, 1}, std::move(tv)),
                             cfg_.n_freq, 1.0));
  std::vector<int64_t> idx(s_len * n);
  for (int64_t t = 0; t < s_len; ++t)
    for (int64_t i = 0; i < n; ++i) idx[t * n + i] = t;
  return gather_rows(te, idx);
}

Tensor Tracker::build_tokens(const TrackState& state,
                             const WindowInputs& win) const {
  const int64_t s_len = state.t_len, n = state.n;
  check(static_cast<int64_t>(win.pyramids.size()) == s_len &&
            static_cast<int64_t>(win.depth_maps.size()) == s_len,
        "build_tokens: window has ", win.pyramids.size(), " frames for state of ",
        s_len);
  const int radius = cfg_.corr_radius;

  std::vector<Tensor> corr_list, dc_list;
  for (int64_t t = 0; t < s_len; ++t) {
    Tensor uv_t = slice_rows(state.uv, t * n, n);
    Tensor feat_t = slice_rows(state.track_feat, t * n, n);
    Tensor logd_t = slice_rows(state.log_d, t * n, n);
    corr_list.push_back(
        pyramid_correlation(win.pyramids[t], feat_t, uv_t, radius));
    switch (cfg_.depth_repr) {
      case DepthRepr::kLogDepth:
        dc_list.push_back(depth_corr(win.depth_maps[t], logd_t, uv_t, radius));
        break;
      case DepthRepr::kDeltaDepth: {
        Tensor s = grid_sample_taps(win.depth_maps[t], uv_t, radius);
        dc_list.push_back(sub(s, vexp(logd_t)));
        break;
      }
      case DepthRepr::kInvDepth: {
        Tensor s = grid_sample_taps(win.depth_maps[t], uv_t, radius);
        dc_list.push_back(
            sub(reciprocal(clamp_min(s, cfg_.min_depth)),
                vexp(scale(logd_t, -1.0))));
        break;
      }
    }
  }
  Tensor corr = s_len == 1 ? corr_list[0] : concat_rows(corr_list);
  Tensor dcorr = s_len == 1 ? dc_list[0] : concat_rows(dc_list);

  Tensor vis_prob = sigmoid(state.vis_logit);

  std::vector<int64_t> idx0(s_len * n);
  for (int64_t t = 0; t < s_len; ++t)
    for (int64_t i = 0; i < n; ++i) idx0[t * n + i] = i;
  Tensor disp_uv = sub(state.uv, gather_rows(state.uv, idx0));
  Tensor dch = depth_coordinate(state.log_d);
  Tensor disp_d = sub(dch, gather_rows(dch, idx0));
  Tensor disp = concat_cols({scale(disp_uv, cfg_.pos_scale_uv),
                             scale(disp_d, cfg_.pos_scale_depth)});
  Tensor disp_embed = sin_embed(disp, cfg_.n_freq, 1.0);

  Tensor core =
      concat_cols({state.track_feat, corr, dcorr, vis_prob, disp_embed});
  Tensor tokens = add(core, position_embedding(state));
  return add(tokens, time_embedding_rows(s_len, n, time_proj_));
}

Tracker::BlockIo Tracker::make_virtual_tokens(int64_t s_len) const {
  const int64_t k = cfg_.k_virtual;
  std::vector<int64_t> rep(s_len * k);
  for (int64_t t = 0; t < s_len; ++t)
    for (int64_t i = 0; i < k; ++i) rep[t * k + i] = i;
  Tensor base = gather_rows(virtual_embed_, rep);
  Tensor v = add(base, time_embedding_rows(s_len, k, vtime_proj_));
  return BlockIo{Tensor(), v};
}

Tracker::BlockIo Tracker::apply_block(int block_idx, BlockIo io, int64_t s_len,
                                      int64_t n,
                                      const TrackGroups& groups) const {
  check(block_idx >= 0 && block_idx < static_cast<int>(blocks_.size()),
        "apply_block: bad block index ", block_idx);
  const Block& blk = blocks_[block_idx];
  const int64_t k = cfg_.k_virtual;
  Tensor x = io.x;
  Tensor v = io.v;
  const bool has_v = v.defined();

  // Temporal self-attention along each track; virtual tracks share weights.
  auto temporal = [&](Tensor tokens, int64_t n_tracks, MacCategory cat) {
    std::vector<int64_t> to_track(s_len * n_tracks), to_frame(s_len * n_tracks);
    for (int64_t t = 0; t < s_len; ++t)
      for (int64_t i = 0; i < n_tracks; ++i) {
        to_track[i * s_len + t] = t * n_tracks + i;
        to_frame[t * n_tracks + i] = i * s_len + t;
      }
    Tensor m = gather_rows(tokens, to_track);
    Tensor a = blk.t_ln(m);
    m = add(m, blk.t_attn(a, a, n_tracks, cat));
    return gather_rows(m, to_frame);
  };
  if (n > 0) x = temporal(x, n, MacCategory::kTemporalReal);
  if (has_v) v = temporal(v, k, MacCategory::kTemporalVirtual);

  // Dense local attention within frame-0 patches.
  if (cfg_.local_attention && !groups.patches.empty() && n > 0) {
    std::map<size_t, std::vector<const std::vector<int64_t>*>> by_size;
    for (const auto& patch : groups.patches)
      if (!patch.empty()) by_size[patch.size()].push_back(&patch);
    for (const auto& [sz, patches] : by_size) {
      std::vector<int64_t> idx;
      idx.reserve(s_len * patches.size() * sz);
      for (int64_t t = 0; t < s_len; ++t)
        for (const auto* patch : patches)
          for (int64_t member : *patch) {
            check(member >= 0 && member < n, "apply_block: patch member ",
                  member, " out of ", n, " tracks");
            idx.push_back(t * n + member);
          }
      Tensor xg = gather_rows(x, idx);
      Tensor a = blk.l_ln(xg);
      Tensor y = blk.l_attn(a, a, s_len * patches.size(), MacCategory::kSpatial);
      x = add(x, scatter_rows(y, idx, s_len * n));
    }
  }

  // Global spatial attention.
  switch (cfg_.variant) {
    case SpatialVariant::kNone:
      break;
    case SpatialVariant::kFull: {
      check(n <= cfg_.full_attention_cap,
            "spatial variant 'full' with N=", n,
            " exceeds the configured cap of ", cfg_.full_attention_cap);
      if (n > 0) {
        Tensor a = blk.l_ln(x);
        x = add(x, blk.l_attn(a, a, s_len, MacCategory::kSpatial));
      }
      break;
    }
    case SpatialVariant::kCoTracker:
    case SpatialVariant::kOurs: {
      check(has_v, "apply_block: virtual tokens required for this variant");
      Tensor kv_tokens;
      if (cfg_.variant == SpatialVariant::kOurs) {
        check(!groups.anchors.empty(),
              "apply_block: variant 'ours' needs anchor tracks");
        std::vector<int64_t> idx;
        idx.reserve(s_len * groups.anchors.size());
        for (int64_t t = 0; t < s_len; ++t)
          for (int64_t a : groups.anchors) {
            check(a >= 0 && a < n, "apply_block: anchor index ", a,
                  " out of ", n, " tracks");
            idx.push_back(t * n + a);
          }
        kv_tokens = gather_rows(x, idx);
      } else {
        kv_tokens = x;
      }
      if (kv_tokens.numel() > 0) {
        Tensor aq = blk.va_ln_q(v);
        Tensor akv = blk.va_ln_kv(kv_tokens);
        v = add(v, blk.va_attn(aq, akv, s_len, MacCategory::kSpatial));
      }
      Tensor av = blk.vs_ln(v);
      v = add(v, blk.vs_attn(av, av, s_len, MacCategory::kSpatial));
      if (n > 0) {
        Tensor ax = blk.xv_ln_q(x);
        Tensor akv2 = blk.xv_ln_kv(v);
        x = add(x, blk.xv_attn(ax, akv2, s_len, MacCategory::kSpatial));
      }
      break;
    }
  }

  // Token MLP, shared between real and virtual tokens.
  if (n > 0) x = add(x, blk.mlp(blk.mlp_ln(x)));
  if (has_v) v = add(v, blk.mlp(blk.mlp_ln(v)));
  return BlockIo{x, v};
}

namespace {

void check_finite(const Tensor& t, int iteration, const char* head) {
  for (double v : t.data())
    if (!std::isfinite(v))
      fail("refine_window: non-finite update at iteration ", iteration,
           " in head '", head, "'");
}

}  // namespace

TrackState Tracker::refine_window(const TrackState& state,
                                  const WindowInputs& win,
                                  const TrackGroups& groups, int m_iter,
                                  std::vector<TrackState>* per_iter) const {
  const int64_t s_len = state.t_len, n = state.n;
  check(s_len >= 2, "refine_window: window length ", s_len, " is below 2");
  check(m_iter >= 1, "refine_window: m_iter must be >= 1, got ", m_iter);
  if (n == 0) {
    if (per_iter)
      for (int m = 0; m < m_iter; ++m) per_iter->push_back(state);
    return state;
  }

  // Frame 0 of the window is the query frame and stays fixed.
  std::vector<double> mask_v(s_len * n, 1.0), keep_v(s_len * n, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    mask_v[i] = 0.0;
    keep_v[i] = 1.0;
  }
  Tensor mask = Tensor::from_data({s_len * n, 1}, std::move(mask_v));
  Tensor keep = Tensor::from_data({s_len * n, 1}, std::move(keep_v));

  const bool needs_virtual = cfg_.variant == SpatialVariant::kCoTracker ||
                             cfg_.variant == SpatialVariant::kOurs;

  TrackState cur = state;
  for (int m = 0; m < m_iter; ++m) {
    Tensor tokens = build_tokens(cur, win);
    BlockIo io;
    io.x = input_ln_(input_proj_(tokens));
    if (needs_virtual) io.v = make_virtual_tokens(s_len).v;
    for (int b = 0; b < cfg_.blocks; ++b)
      io = apply_block(b, io, s_len, n, groups);
    Tensor h = head_ln_(io.x);

    Tensor duv = mul(head_uv_(h), mask);
    Tensor new_uv = add(cur.uv, duv);
    check_finite(new_uv, m, "uv");

    Tensor dd = mul(head_depth_(h), mask);
    Tensor new_logd;
    switch (cfg_.depth_repr) {
      case DepthRepr::kLogDepth:
        new_logd = add(cur.log_d, dd);
        break;
      case DepthRepr::kDeltaDepth: {
        Tensor d = vexp(cur.log_d);
        new_logd = vlog(clamp_min(add(d, dd), cfg_.min_depth));
        break;
      }
      case DepthRepr::kInvDepth: {
        Tensor inv = vexp(scale(cur.log_d, -1.0));
        new_logd = scale(vlog(clamp_min(add(inv, dd), 1e-6)), -1.0);
        break;
      }
    }
    check_finite(new_logd, m, "depth");

    Tensor dfeat = mul(head_feat_(h), mask);
    Tensor new_feat = add(cur.track_feat, dfeat);

    TrackState next;
    next.t_len = s_len;
    next.n = n;
    next.uv = new_uv;
    next.log_d = new_logd;
    next.track_feat = new_feat;
    next.query_uv = cur.query_uv;
    next.query_log_d = cur.query_log_d;
    if (m == m_iter - 1) {
      // Visibility is predicted only once the location has converged.
      Tensor vis = add(mul(head_vis_(h), mask), mul(cur.vis_logit, keep));
      check_finite(vis, m, "visibility");
      next.vis_logit = vis;
    } else {
      next.vis_logit = cur.vis_logit;
    }
    cur = std::move(next);
    if (per_iter) per_iter->push_back(cur);
  }
  return cur;
}

}  // namespace delta
