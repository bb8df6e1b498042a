#include "delta/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

namespace delta {

using nlohmann::json;

namespace {

/// Reads keys off a JSON object and rejects anything unconsumed.
class StrictReader {
 public:
  StrictReader(const json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    check(j.is_object(), where_, " must be a JSON object");
  }
  template <class T>
  void get(const char* key, T& out) {
    if (j_.contains(key)) out = j_.at(key).get<T>();
    seen_.insert(key);
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      check(seen_.count(it.key()) > 0, where_, ": unknown key '", it.key(),
            "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const char* variant_name(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::kNone: return "none";
    case SpatialVariant::kFull: return "full";
    case SpatialVariant::kCoTracker: return "cotracker";
    case SpatialVariant::kOurs: return "ours";
  }
  return "?";
}

SpatialVariant variant_from(const std::string& s) {
  if (s == "none") return SpatialVariant::kNone;
  if (s == "full") return SpatialVariant::kFull;
  if (s == "cotracker") return SpatialVariant::kCoTracker;
  if (s == "ours") return SpatialVariant::kOurs;
  fail("unknown spatial variant '", s, "'");
}

const char* repr_name(DepthRepr r) {
  switch (r) {
    case DepthRepr::kLogDepth: return "log";
    case DepthRepr::kDeltaDepth: return "delta";
    case DepthRepr::kInvDepth: return "inverse";
  }
  return "?";
}

DepthRepr repr_from(const std::string& s) {
  if (s == "log") return DepthRepr::kLogDepth;
  if (s == "delta") return DepthRepr::kDeltaDepth;
  if (s == "inverse") return DepthRepr::kInvDepth;
  fail("unknown depth representation '", s, "'");
}

const char* upsampler_name(UpsamplerVariant v) {
  switch (v) {
    case UpsamplerVariant::kAttentionAlibi: return "attention_alibi";
    case UpsamplerVariant::kAttention: return "attention";
    case UpsamplerVariant::kConv: return "conv";
    case UpsamplerVariant::kBilinear: return "bilinear";
    case UpsamplerVariant::kNearest: return "nearest";
  }
  return "?";
}

UpsamplerVariant upsampler_from(const std::string& s) {
  if (s == "attention_alibi") return UpsamplerVariant::kAttentionAlibi;
  if (s == "attention") return UpsamplerVariant::kAttention;
  if (s == "conv") return UpsamplerVariant::kConv;
  if (s == "bilinear") return UpsamplerVariant::kBilinear;
  if (s == "nearest") return UpsamplerVariant::kNearest;
  fail("unknown upsampler variant '", s, "'");
}

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.encoder.d_f = 32;
  c.encoder.strides = {2, 4, 8};
  c.encoder.res_blocks = {1, 1, 0};
  c.tracker.blocks = 3;
  c.tracker.heads = 4;
  c.tracker.hidden = 128;
  c.tracker.m_iter = 4;
  c.tracker.window = 8;
  c.tracker.overlap = 4;
  c.tracker.k_virtual = 16;
  c.tracker.anchor_grid_h = 4;
  c.tracker.anchor_grid_w = 4;
  c.tracker.patch_size = 4;
  c.tracker.mlp_ratio = 2;
  c.tracker.feature_stride = 4;
  c.upsampler.r = 4;
  c.upsampler.kappa = 3;
  c.upsampler.tau = 2;
  c.upsampler.d_up = 32;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.encoder.d_f = 256;
  c.encoder.strides = {2, 4, 8};
  c.encoder.res_blocks = {2, 2, 2};
  c.tracker.blocks = 6;
  c.tracker.heads = 8;
  c.tracker.hidden = 384;
  c.tracker.m_iter = 6;
  c.tracker.window = 16;
  c.tracker.overlap = 8;
  c.tracker.k_virtual = 64;
  c.tracker.anchor_grid_h = 9;
  c.tracker.anchor_grid_w = 12;
  c.tracker.patch_size = 6;
  c.tracker.mlp_ratio = 4;
  c.tracker.feature_stride = 4;
  c.upsampler.r = 4;
  c.upsampler.kappa = 3;
  c.upsampler.tau = 2;
  c.upsampler.d_up = 64;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  fail("unknown preset '", name, "' (expected desk or paper)");
}

void ModelConfig::validate() const {
  encoder.validate();
  tracker.validate();
  upsampler.validate();
  bool has_stride = false;
  for (int s : encoder.strides) has_stride = has_stride || s == tracker.feature_stride;
  check(has_stride, "ModelConfig: no pyramid level at feature stride ",
        tracker.feature_stride);
  check(upsampler.r == tracker.feature_stride,
        "ModelConfig: upsampler r (", upsampler.r,
        ") must equal the tracker feature stride (", tracker.feature_stride,
        ")");
}

json ModelConfig::to_json() const {
  json e;
  e["d_f"] = encoder.d_f;
  e["strides"] = encoder.strides;
  e["res_blocks"] = encoder.res_blocks;
  json t;
  t["blocks"] = tracker.blocks;
  t["heads"] = tracker.heads;
  t["hidden"] = tracker.hidden;
  t["m_iter"] = tracker.m_iter;
  t["window"] = tracker.window;
  t["overlap"] = tracker.overlap;
  t["k_virtual"] = tracker.k_virtual;
  t["anchor_grid_h"] = tracker.anchor_grid_h;
  t["anchor_grid_w"] = tracker.anchor_grid_w;
  t["patch_size"] = tracker.patch_size;
  t["corr_radius"] = tracker.corr_radius;
  t["mlp_ratio"] = tracker.mlp_ratio;
  t["n_freq"] = tracker.n_freq;
  t["pos_scale_uv"] = tracker.pos_scale_uv;
  t["pos_scale_depth"] = tracker.pos_scale_depth;
  t["time_scale"] = tracker.time_scale;
  t["pos_embed_depth"] = tracker.pos_embed_depth;
  t["vis_init_logit"] = tracker.vis_init_logit;
  t["variant"] = variant_name(tracker.variant);
  t["local_attention"] = tracker.local_attention;
  t["full_attention_cap"] = tracker.full_attention_cap;
  t["depth_repr"] = repr_name(tracker.depth_repr);
  t["min_depth"] = tracker.min_depth;
  t["feature_stride"] = tracker.feature_stride;
  json u;
  u["kappa"] = upsampler.kappa;
  u["tau"] = upsampler.tau;
  u["r"] = upsampler.r;
  u["d_up"] = upsampler.d_up;
  u["heads"] = upsampler.heads;
  u["alibi_scale"] = upsampler.alibi_scale;
  u["variant"] = upsampler_name(upsampler.variant);
  json j;
  j["encoder"] = e;
  j["tracker"] = t;
  j["upsampler"] = u;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c = desk();
  StrictReader top(j, "model config");
  if (const json* e = top.child("encoder")) {
    StrictReader r(*e, "encoder config");
    r.get("d_f", c.encoder.d_f);
    r.get("strides", c.encoder.strides);
    r.get("res_blocks", c.encoder.res_blocks);
    r.finish();
  }
  if (const json* t = top.child("tracker")) {
    StrictReader r(*t, "tracker config");
    r.get("blocks", c.tracker.blocks);
    r.get("heads", c.tracker.heads);
    r.get("hidden", c.tracker.hidden);
    r.get("m_iter", c.tracker.m_iter);
    r.get("window", c.tracker.window);
    r.get("overlap", c.tracker.overlap);
    r.get("k_virtual", c.tracker.k_virtual);
    r.get("anchor_grid_h", c.tracker.anchor_grid_h);
    r.get("anchor_grid_w", c.tracker.anchor_grid_w);
    r.get("patch_size", c.tracker.patch_size);
    r.get("corr_radius", c.tracker.corr_radius);
    r.get("mlp_ratio", c.tracker.mlp_ratio);
    r.get("n_freq", c.tracker.n_freq);
    r.get("pos_scale_uv", c.tracker.pos_scale_uv);
    r.get("pos_scale_depth", c.tracker.pos_scale_depth);
    r.get("time_scale", c.tracker.time_scale);
    r.get("pos_embed_depth", c.tracker.pos_embed_depth);
    r.get("vis_init_logit", c.tracker.vis_init_logit);
    std::string v = variant_name(c.tracker.variant);
    r.get("variant", v);
    c.tracker.variant = variant_from(v);
    r.get("local_attention", c.tracker.local_attention);
    r.get("full_attention_cap", c.tracker.full_attention_cap);
    std::string dr = repr_name(c.tracker.depth_repr);
    r.get("depth_repr", dr);
    c.tracker.depth_repr = repr_from(dr);
    r.get("min_depth", c.tracker.min_depth);
    r.get("feature_stride", c.tracker.feature_stride);
    r.finish();
  }
  if (const json* u = top.child("upsampler")) {
    StrictReader r(*u, "upsampler config");
    r.get("kappa", c.upsampler.kappa);
    r.get("tau", c.upsampler.tau);
    r.get("r", c.upsampler.r);
    r.get("d_up", c.upsampler.d_up);
    r.get("heads", c.upsampler.heads);
    r.get("alibi_scale", c.upsampler.alibi_scale);
    std::string v = upsampler_name(c.upsampler.variant);
    r.get("variant", v);
    c.upsampler.variant = upsampler_from(v);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

DeltaModel::DeltaModel(const ModelConfig& config, uint64_t seed)
    : cfg(config), init_seed(seed) {
  cfg.validate();
  Rng rng(seed);
  Rng enc_rng = rng.fork(1);
  Rng trk_rng = rng.fork(2);
  Rng ups_rng = rng.fork(3);
  encoder = Encoder(cfg.encoder, params, enc_rng);
  tracker = Tracker(cfg.tracker, cfg.encoder, params, trk_rng);
  upsampler = Upsampler(cfg.upsampler, cfg.encoder.d_f, params, ups_rng);
}

std::unique_ptr<DeltaModel> DeltaModel::clone() const {
  auto copy = std::make_unique<DeltaModel>(cfg, init_seed);
  copy->params.copy_values_from(params);
  return copy;
}

Tensor DeltaModel::frame_tensor(const RgbdSequence& seq, int64_t t) {
  check(t >= 0 && t < seq.t, "frame_tensor: frame ", t, " out of ", seq.t);
  const int64_t n = seq.h * seq.w * 3;
  std::vector<double> v(seq.rgb.begin() + t * n, seq.rgb.begin() + (t + 1) * n);
  return Tensor::from_data({seq.h, seq.w, 3}, std::move(v));
}

Tensor DeltaModel::depth_tensor(const RgbdSequence& seq, int64_t t) {
  check(t >= 0 && t < seq.t, "depth_tensor: frame ", t, " out of ", seq.t);
  const int64_t n = seq.h * seq.w;
  std::vector<double> v(seq.depth.begin() + t * n,
                        seq.depth.begin() + (t + 1) * n);
  return Tensor::from_data({seq.h, seq.w}, std::move(v));
}

std::vector<FeaturePyramid> DeltaModel::compute_pyramids(
    const RgbdSequence& seq) const {
  std::vector<FeaturePyramid> out;
  out.reserve(seq.t);
  for (int64_t t = 0; t < seq.t; ++t)
    out.push_back(encoder.extract(frame_tensor(seq, t)));
  return out;
}

WindowInputs DeltaModel::window_inputs(
    const RgbdSequence& seq, const std::vector<FeaturePyramid>& pyramids,
    int64_t start, int64_t s_len) const {
  check(start >= 0 && start + s_len <= seq.t, "window_inputs: window [",
        start, ",", start + s_len, ") out of video of length ", seq.t);
  WindowInputs win;
  win.height = seq.h;
  win.width = seq.w;
  for (int64_t t = start; t < start + s_len; ++t) {
    win.pyramids.push_back(pyramids[t]);
    win.depth_maps.push_back(depth_tensor(seq, t));
  }
  return win;
}

namespace {

struct GlobalState {
  int64_t t_len = 0, n = 0, d_f = 0;
  std::vector<double> uv, log_d, vis, feat;
};

TrackState slice_window_state(const GlobalState& g, int64_t start,
                              int64_t s_len, int64_t covered_until,
                              const std::vector<double>& query_uv,
                              const std::vector<double>& query_log_d) {
  // Frames already covered by earlier windows keep their estimates; the
  // rest replicate the last covered frame.
  TrackState st;
  st.t_len = s_len;
  st.n = g.n;
  std::vector<double> uv(s_len * g.n * 2), ld(s_len * g.n), vis(s_len * g.n),
      feat(s_len * g.n * g.d_f);
  for (int64_t t = 0; t < s_len; ++t) {
    int64_t src = start + t;
    if (covered_until > 0 && src >= covered_until) src = covered_until - 1;
    std::copy_n(&g.uv[src * g.n * 2], g.n * 2, &uv[t * g.n * 2]);
    std::copy_n(&g.log_d[src * g.n], g.n, &ld[t * g.n]);
    std::copy_n(&g.vis[src * g.n], g.n, &vis[t * g.n]);
    std::copy_n(&g.feat[src * g.n * g.d_f], g.n * g.d_f, &feat[t * g.n * g.d_f]);
  }
  st.uv = Tensor::from_data({s_len * g.n, 2}, std::move(uv));
  st.log_d = Tensor::from_data({s_len * g.n, 1}, std::move(ld));
  st.vis_logit = Tensor::from_data({s_len * g.n, 1}, std::move(vis));
  st.track_feat = Tensor::from_data({s_len * g.n, g.d_f}, std::move(feat));
  st.query_uv = query_uv;
  st.query_log_d = query_log_d;
  return st;
}

void write_back(GlobalState& g, const TrackState& st, int64_t start) {
  for (int64_t t = 0; t < st.t_len; ++t) {
    const int64_t dst = start + t;
    std::copy_n(&st.uv.data()[t * g.n * 2], g.n * 2, &g.uv[dst * g.n * 2]);
    std::copy_n(&st.log_d.data()[t * g.n], g.n, &g.log_d[dst * g.n]);
    std::copy_n(&st.vis_logit.data()[t * g.n], g.n, &g.vis[dst * g.n]);
    std::copy_n(&st.track_feat.data()[t * g.n * g.d_f], g.n * g.d_f,
                &g.feat[dst * g.n * g.d_f]);
  }
}

TrackFile tracks_from_values(const RgbdSequence& seq, int64_t t_len, int64_t n,
                             const std::vector<double>& uv,
                             const std::vector<double>& log_d,
                             const std::vector<double>& vis_logit,
                             const std::vector<double>& query_uv) {
  TrackFile tf;
  tf.t = t_len;
  tf.n = n;
  tf.height = seq.h;
  tf.width = seq.w;
  tf.focal = seq.focal;
  tf.cx = seq.cx;
  tf.cy = seq.cy;
  tf.uv = uv;
  tf.depth.resize(t_len * n);
  tf.vis.resize(t_len * n);
  for (int64_t i = 0; i < t_len * n; ++i) {
    tf.depth[i] = std::exp(log_d[i]);
    tf.vis[i] = vis_logit[i] > 0 ? 1 : 0;  // sigmoid(x) > 0.5  <=>  x > 0
  }
  tf.query_uv = query_uv;
  return tf;
}

}  // namespace

DenseTrackResult DeltaModel::track_video_dense(const RgbdSequence& seq) const {
  NoGradGuard no_grad;
  const TrackerConfig& tc = cfg.tracker;
  const int r = tc.feature_stride;
  check(seq.h % r == 0 && seq.w % r == 0, "track_video_dense: frame ", seq.h,
        "x", seq.w, " not divisible by r=", r);
  const int64_t gh = seq.h / r, gw = seq.w / r;
  std::vector<double> queries = coarse_grid_queries(seq.h, seq.w, r);
  const int64_t n = gh * gw;
  TrackGroups groups =
      dense_grid_groups(gh, gw, tc.patch_size, tc.anchor_grid_h, tc.anchor_grid_w);

  const std::vector<int64_t> starts = window_starts(seq.t, tc.window, tc.overlap);
  std::vector<FeaturePyramid> pyramids = compute_pyramids(seq);

  TrackState init = tracker.init_tracks(queries, depth_tensor(seq, 0),
                                        pyramids[0], seq.t);
  GlobalState g;
  g.t_len = seq.t;
  g.n = n;
  g.d_f = cfg.encoder.d_f;
  g.uv.assign(init.uv.data().begin(), init.uv.data().end());
  g.log_d.assign(init.log_d.data().begin(), init.log_d.data().end());
  g.vis.assign(init.vis_logit.data().begin(), init.vis_logit.data().end());
  g.feat.assign(init.track_feat.data().begin(), init.track_feat.data().end());

  // Window weight maps, indexed like `starts`, computed on each window's
  // first frame and shared by all frames of that window.
  std::vector<UpsampleWeightMap> wmaps;
  const bool do_fine = true;
  int64_t covered = 0;
  for (size_t w = 0; w < starts.size(); ++w) {
    const int64_t s0 = starts[w];
    WindowInputs win = window_inputs(seq, pyramids, s0, tc.window);
    TrackState local =
        slice_window_state(g, s0, tc.window, covered, init.query_uv,
                           init.query_log_d);
    TrackState refined = tracker.refine_window(local, win, groups, tc.m_iter);
    write_back(g, refined, s0);
    covered = s0 + tc.window;
    if (do_fine) {
      const PyramidLevel& lvl = pyramid_level_at(pyramids[s0], r);
      wmaps.push_back(
          upsampler.compute_weights(frame_tensor(seq, s0), lvl.map));
    }
  }

  DenseTrackResult out;
  out.coarse = tracks_from_values(seq, seq.t, n, g.uv, g.log_d, g.vis, queries);

  // Each frame is upsampled with the weight map of the newest window that
  // contains it (the window whose estimate the frame carries).
  std::vector<size_t> frame_window(seq.t, 0);
  for (size_t w = 0; w < starts.size(); ++w)
    for (int64_t t = starts[w]; t < starts[w] + tc.window; ++t)
      frame_window[t] = w;

  const int64_t n_fine = seq.h * seq.w;
  std::vector<double> f_uv(seq.t * n_fine * 2), f_ld(seq.t * n_fine),
      f_vl(seq.t * n_fine);
  for (int64_t t = 0; t < seq.t; ++t) {
    const UpsampleWeightMap& wm = wmaps[frame_window[t]];
    TrackState frame_state;
    frame_state.t_len = 1;
    frame_state.n = n;
    frame_state.uv = Tensor::from_data(
        {n, 2}, {g.uv.begin() + t * n * 2, g.uv.begin() + (t + 1) * n * 2});
    frame_state.log_d = Tensor::from_data(
        {n, 1}, {g.log_d.begin() + t * n, g.log_d.begin() + (t + 1) * n});
    frame_state.vis_logit = Tensor::from_data(
        {n, 1}, {g.vis.begin() + t * n, g.vis.begin() + (t + 1) * n});
    frame_state.track_feat = Tensor::zeros({n, 1});
    FineTracks fine = apply_upsample(frame_state, wm);
    std::copy(fine.uv.data().begin(), fine.uv.data().end(),
              f_uv.begin() + t * n_fine * 2);
    std::copy(fine.log_d.data().begin(), fine.log_d.data().end(),
              f_ld.begin() + t * n_fine);
    std::copy(fine.vis_logit.data().begin(), fine.vis_logit.data().end(),
              f_vl.begin() + t * n_fine);
  }
  std::vector<double> fine_queries(n_fine * 2);
  for (int64_t y = 0; y < seq.h; ++y)
    for (int64_t x = 0; x < seq.w; ++x) {
      fine_queries[(y * seq.w + x) * 2] = x;
      fine_queries[(y * seq.w + x) * 2 + 1] = y;
    }
  out.fine =
      tracks_from_values(seq, seq.t, n_fine, f_uv, f_ld, f_vl, fine_queries);
  return out;
}

TrackFile DeltaModel::track_video_sparse(
    const RgbdSequence& seq, const std::vector<double>& queries_uv) const {
  NoGradGuard no_grad;
  TrackerConfig tc = cfg.tracker;
  const int64_t n = static_cast<int64_t>(queries_uv.size()) / 2;
  check(n > 0, "track_video_sparse: no query points");

  // Sparse mode: no dense local attention; anchors are an evenly spaced
  // subset of the query tracks themselves.
  TrackGroups groups;
  const int64_t m = std::min<int64_t>(tc.anchor_count(), n);
  for (int64_t a = 0; a < m; ++a) groups.anchors.push_back(a * n / m);

  const std::vector<int64_t> starts = window_starts(seq.t, tc.window, tc.overlap);
  std::vector<FeaturePyramid> pyramids = compute_pyramids(seq);
  TrackState init = tracker.init_tracks(queries_uv, depth_tensor(seq, 0),
                                        pyramids[0], seq.t);
  GlobalState g;
  g.t_len = seq.t;
  g.n = n;
  g.d_f = cfg.encoder.d_f;
  g.uv.assign(init.uv.data().begin(), init.uv.data().end());
  g.log_d.assign(init.log_d.data().begin(), init.log_d.data().end());
  g.vis.assign(init.vis_logit.data().begin(), init.vis_logit.data().end());
  g.feat.assign(init.track_feat.data().begin(), init.track_feat.data().end());

  int64_t covered = 0;
  for (int64_t s0 : starts) {
    WindowInputs win = window_inputs(seq, pyramids, s0, tc.window);
    TrackState local = slice_window_state(g, s0, tc.window, covered,
                                          init.query_uv, init.query_log_d);
    TrackState refined = tracker.refine_window(local, win, groups, tc.m_iter);
    write_back(g, refined, s0);
    covered = s0 + tc.window;
  }
  return tracks_from_values(seq, seq.t, n, g.uv, g.log_d, g.vis, queries_uv);
}

void DeltaModel::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "params");
  json meta;
  meta["kind"] = "delta_checkpoint";
  meta["config"] = cfg.to_json();
  meta["init_seed"] = init_seed;
  json plist = json::array();
  for (const auto& [name, t] : params.items()) {
    plist.push_back(name);
    save_tensor(dir / "params" / (name + ".bin"), t.shape(),
                {t.data().begin(), t.data().end()});
  }
  meta["params"] = plist;
  write_json_file(dir / "model.json", meta);
}

std::unique_ptr<DeltaModel> DeltaModel::load_checkpoint(
    const std::filesystem::path& dir) {
  json meta = read_json_file(dir / "model.json");
  check(meta.value("kind", "") == "delta_checkpoint", dir.string(),
        " is not a checkpoint directory");
  ModelConfig cfg = ModelConfig::from_json(meta.at("config"));
  auto model = std::make_unique<DeltaModel>(cfg, meta.value("init_seed", 0ull));
  std::set<std::string> listed;
  for (const auto& p : meta.at("params")) listed.insert(p.get<std::string>());
  for (const auto& [name, t] : model->params.items()) {
    check(listed.count(name), "checkpoint ", dir.string(), " lacks parameter ",
          name);
    Shape s;
    std::vector<double> v = load_tensor_f64(dir / "params" / (name + ".bin"), &s);
    check(s == t.shape(), "checkpoint parameter ", name, " has shape ",
          shape_str(s), ", model wants ", shape_str(t.shape()));
    Tensor& dst = model->params.at(name);
    std::copy(v.begin(), v.end(), dst.raw().begin());
  }
  check(listed.size() == model->params.size(),
        "checkpoint lists ", listed.size(), " parameters, model has ",
        model->params.size());
  return model;
}

}  // namespace delta
