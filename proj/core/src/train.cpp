#include "delta/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "delta/metrics.hpp"

namespace delta {

using nlohmann::json;

Adam::Adam(ParamStore& ps, double beta1, double beta2, double eps)
    : ps_(ps), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : ps.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

double Adam::clip_grad_norm(double max_norm, double& grad_scale) const {
  double sq = 0;
  for (const auto& [name, t] : ps_.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += (g * grad_scale) * (g * grad_scale);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) grad_scale *= max_norm / norm;
  return norm;
}

void Adam::step(double lr, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  size_t i = 0;
  for (const auto& [name, t] : ps_.items()) {
    Tensor& p = ps_.at(name);
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.raw();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j] * grad_scale;
      m[j] = beta1_ * m[j] + (1 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1 - beta2_) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void TrainConfig::validate() const {
  check(steps >= 1, "TrainConfig: steps must be >= 1");
  check(lr > 0, "TrainConfig: lr must be positive");
  check(warmup >= 0, "TrainConfig: negative warmup");
  check(schedule == "constant" || schedule == "onecycle",
        "TrainConfig: unknown schedule '", schedule, "'");
  check(patch_h >= 1 && patch_w >= 1, "TrainConfig: bad patch size");
  check(batch >= 1, "TrainConfig: batch must be >= 1");
  check(threads >= 1, "TrainConfig: threads must be >= 1");
}

namespace {

void hflip(RgbdSequence& s) {
  const int64_t h = s.h, w = s.w;
  for (int64_t t = 0; t < s.t; ++t) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w / 2; ++x) {
        const int64_t a = (t * h + y) * w + x;
        const int64_t b = (t * h + y) * w + (w - 1 - x);
        for (int c = 0; c < 3; ++c) std::swap(s.rgb[a * 3 + c], s.rgb[b * 3 + c]);
        std::swap(s.depth[a], s.depth[b]);
      }
    }
  }
  if (s.has_gt) {
    std::vector<double> gt(s.gt_tracks.size());
    std::vector<uint8_t> vis(s.gt_vis.size());
    for (int64_t t = 0; t < s.t; ++t)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const int64_t dst = (t * h + y) * w + x;
          const int64_t src = (t * h + y) * w + (w - 1 - x);
          gt[dst * 3] = (w - 1) - s.gt_tracks[src * 3];
          gt[dst * 3 + 1] = s.gt_tracks[src * 3 + 1];
          gt[dst * 3 + 2] = s.gt_tracks[src * 3 + 2];
          vis[dst] = s.gt_vis[src];
        }
    s.gt_tracks = std::move(gt);
    s.gt_vis = std::move(vis);
  }
}

RgbdSequence augment_sequence(const RgbdSequence& in, Rng& rng) {
  RgbdSequence s = in;
  if (rng.bernoulli(0.5)) hflip(s);
  const double f = rng.uniform(0.8, 1.2);
  for (auto& v : s.rgb) v = std::clamp(v * f, 0.0, 1.0);
  return s;
}

Tensor crop_rgb_tensor(const RgbdSequence& s, int64_t t, int64_t y0,
                       int64_t x0, int64_t ch, int64_t cw) {
  std::vector<double> v(ch * cw * 3);
  for (int64_t y = 0; y < ch; ++y)
    for (int64_t x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c)
        v[(y * cw + x) * 3 + c] =
            s.rgb[((t * s.h + y0 + y) * s.w + x0 + x) * 3 + c];
  return Tensor::from_data({ch, cw, 3}, std::move(v));
}

TrackTargets targets_at_pixels(const RgbdSequence& s,
                               const std::vector<int64_t>& px,
                               const std::vector<int64_t>& py, int64_t s_len,
                               int64_t frame0 = 0) {
  TrackTargets tt;
  tt.t_len = s_len;
  tt.n = static_cast<int64_t>(px.size());
  tt.uv.resize(s_len * tt.n * 2);
  tt.depth.resize(s_len * tt.n);
  tt.vis.resize(s_len * tt.n);
  for (int64_t t = 0; t < s_len; ++t)
    for (int64_t i = 0; i < tt.n; ++i) {
      const int64_t src = ((frame0 + t) * s.h + py[i]) * s.w + px[i];
      const int64_t dst = t * tt.n + i;
      tt.uv[dst * 2] = s.gt_tracks[src * 3];
      tt.uv[dst * 2 + 1] = s.gt_tracks[src * 3 + 1];
      tt.depth[dst] = s.gt_tracks[src * 3 + 2];
      tt.vis[dst] = s.gt_vis[src];
    }
  return tt;
}

// A later-window state as inference would hand it over: covered frames carry
// (noised) trajectory estimates, the rest replicate the last covered frame,
// and track features are sampled at the handed-over positions.
TrackState propagated_init(const Tracker& tracker, const RgbdSequence& seq,
                           const std::vector<int64_t>& px,
                           const std::vector<int64_t>& py, int64_t ws,
                           int64_t s_len, int64_t covered,
                           const WindowInputs& win, const TrainConfig& cfg,
                           Rng& rng) {
  const int64_t n = static_cast<int64_t>(px.size());
  // Per-track noised estimates for the covered source frames.
  std::vector<double> est_uv(covered * n * 2), est_ld(covered * n);
  std::vector<uint8_t> est_vis(covered * n);
  for (int64_t t = 0; t < covered; ++t)
    for (int64_t i = 0; i < n; ++i) {
      const int64_t src = ((ws + t) * seq.h + py[i]) * seq.w + px[i];
      est_uv[(t * n + i) * 2] =
          seq.gt_tracks[src * 3] + rng.normal(0, cfg.prop_noise_uv);
      est_uv[(t * n + i) * 2 + 1] =
          seq.gt_tracks[src * 3 + 1] + rng.normal(0, cfg.prop_noise_uv);
      est_ld[t * n + i] = std::log(seq.gt_tracks[src * 3 + 2]) +
                          rng.normal(0, cfg.prop_noise_logd);
      est_vis[t * n + i] = seq.gt_vis[src];
    }

  const double l0 = tracker.config().vis_init_logit;
  std::vector<double> uv(s_len * n * 2), ld(s_len * n), vl(s_len * n);
  for (int64_t t = 0; t < s_len; ++t) {
    const int64_t src_t = std::min(t, covered - 1);
    for (int64_t i = 0; i < n; ++i) {
      uv[(t * n + i) * 2] = est_uv[(src_t * n + i) * 2];
      uv[(t * n + i) * 2 + 1] = est_uv[(src_t * n + i) * 2 + 1];
      ld[t * n + i] = est_ld[src_t * n + i];
      vl[t * n + i] = est_vis[src_t * n + i] ? l0 : -l0;
    }
  }

  TrackState st;
  st.t_len = s_len;
  st.n = n;
  st.uv = Tensor::from_data({s_len * n, 2}, std::move(uv));
  st.log_d = Tensor::from_data({s_len * n, 1}, std::move(ld));
  st.vis_logit = Tensor::from_data({s_len * n, 1}, std::move(vl));
  // Appearance from the window's first frame at the handed-over positions.
  Tensor q0 = slice_rows(st.uv, 0, n);
  const PyramidLevel& lvl =
      pyramid_level_at(win.pyramids[0], tracker.config().feature_stride);
  Tensor feat0 = bilinear_sample(
      lvl.map, scale(q0, 1.0 / tracker.config().feature_stride));
  std::vector<int64_t> rep(s_len * n);
  for (int64_t t = 0; t < s_len; ++t)
    for (int64_t i = 0; i < n; ++i) rep[t * n + i] = i;
  st.track_feat = gather_rows(feat0, rep);
  for (int64_t i = 0; i < n; ++i) {
    st.query_uv.push_back(st.uv.data()[i * 2]);
    st.query_uv.push_back(st.uv.data()[i * 2 + 1]);
    st.query_log_d.push_back(st.log_d.data()[i]);
  }
  return st;
}

struct ElementResult {
  LossBreakdown breakdown;
};

ElementResult run_element(DeltaModel& model,
                          const std::vector<RgbdSequence>& seqs,
                          const TrainConfig& cfg, uint64_t stream) {
  const TrackerConfig& tc = model.cfg.tracker;
  Rng rng = Rng(cfg.seed).fork(0x5e11 + stream);
  const RgbdSequence& base = seqs[rng.uniform_int(seqs.size())];
  RgbdSequence seq =
      cfg.augment ? augment_sequence(base, rng) : base;
  check(seq.has_gt, "train: sequence lacks ground truth");

  const int r = tc.feature_stride;
  const int64_t s_len = tc.window;
  check(seq.t >= s_len, "train: sequence length ", seq.t,
        " shorter than window ", s_len);

  // Window start: the anchor window trains the replicated init; later
  // windows train the propagated-state regime of windowed inference.
  int64_t ws = 0;
  int64_t covered = 0;  // frames already estimated by earlier windows
  if (cfg.mix_window_starts && seq.t > s_len) {
    const std::vector<int64_t> starts =
        window_starts(seq.t, s_len, tc.overlap);
    const size_t pick = rng.uniform_int(starts.size());
    ws = starts[pick];
    if (pick > 0) covered = starts[pick - 1] + s_len - ws;
  }

  const int64_t gh = seq.h / r, gw = seq.w / r;
  const int64_t ph = std::min(cfg.patch_h, gh);
  const int64_t pw = std::min(cfg.patch_w, gw);
  const int64_t pi = rng.uniform_int(gh - ph + 1);
  const int64_t pj = rng.uniform_int(gw - pw + 1);
  const int64_t off = r / 2;

  std::vector<double> queries;
  std::vector<int64_t> qx, qy;  // integer pixel coords for gt lookup
  for (int64_t i = 0; i < ph; ++i)
    for (int64_t j = 0; j < pw; ++j) {
      const int64_t x = (pj + j) * r + off;
      const int64_t y = (pi + i) * r + off;
      queries.push_back(static_cast<double>(x));
      queries.push_back(static_cast<double>(y));
      qx.push_back(x);
      qy.push_back(y);
    }
  const int64_t n_patch = ph * pw;

  int64_t n_anchors = 0;
  if (cfg.use_anchors && tc.variant == SpatialVariant::kOurs) {
    for (int a = 0; a < tc.anchor_grid_h; ++a) {
      const int64_t ai =
          std::min<int64_t>((a * 2 + 1) * gh / (2 * tc.anchor_grid_h), gh - 1);
      for (int b = 0; b < tc.anchor_grid_w; ++b) {
        const int64_t aj = std::min<int64_t>(
            (b * 2 + 1) * gw / (2 * tc.anchor_grid_w), gw - 1);
        queries.push_back(static_cast<double>(aj * r + off));
        queries.push_back(static_cast<double>(ai * r + off));
        qx.push_back(aj * r + off);
        qy.push_back(ai * r + off);
        ++n_anchors;
      }
    }
  }
  TrackGroups groups = training_patch_groups(ph, pw, tc.patch_size, n_anchors);

  WindowInputs win;
  win.height = seq.h;
  win.width = seq.w;
  for (int64_t t = ws; t < ws + s_len; ++t) {
    win.pyramids.push_back(model.encoder.extract(DeltaModel::frame_tensor(seq, t)));
    win.depth_maps.push_back(DeltaModel::depth_tensor(seq, t));
  }

  TrackState init =
      covered > 0
          ? propagated_init(model.tracker, seq, qx, qy, ws, s_len, covered,
                            win, cfg, rng)
          : model.tracker.init_tracks(queries, win.depth_maps[0],
                                      win.pyramids[0], s_len);
  std::vector<TrackState> per_iter;
  model.tracker.refine_window(init, win, groups, tc.m_iter, &per_iter);

  std::vector<int64_t> patch_idx(n_patch);
  for (int64_t i = 0; i < n_patch; ++i) patch_idx[i] = i;
  std::vector<TrackState> supervised;
  supervised.reserve(per_iter.size());
  for (const auto& st : per_iter)
    supervised.push_back(n_anchors ? gather_tracks(st, patch_idx) : st);

  const std::vector<int64_t> qx_patch(qx.begin(), qx.begin() + n_patch);
  const std::vector<int64_t> qy_patch(qy.begin(), qy.begin() + n_patch);
  TrackTargets gt_coarse = targets_at_pixels(seq, qx_patch, qy_patch, s_len, ws);

  std::optional<FineTracks> fine;
  TrackTargets gt_fine;
  if (cfg.use_upsampler) {
    const int64_t fy0 = pi * r, fx0 = pj * r;
    const int64_t fh = ph * r, fw = pw * r;
    Tensor frame0_crop = crop_rgb_tensor(seq, ws, fy0, fx0, fh, fw);
    const PyramidLevel& lvl = pyramid_level_at(win.pyramids[0], r);
    std::vector<int64_t> crop_idx;
    crop_idx.reserve(ph * pw);
    for (int64_t i = 0; i < ph; ++i)
      for (int64_t j = 0; j < pw; ++j)
        crop_idx.push_back((pi + i) * gw + (pj + j));
    Tensor feat_crop = reshape(
        gather_rows(reshape(lvl.map, {gh * gw, model.cfg.encoder.d_f}), crop_idx),
        {ph, pw, model.cfg.encoder.d_f});
    UpsampleWeightMap wmap = model.upsampler.compute_weights(frame0_crop, feat_crop);
    fine = apply_upsample(supervised.back(), wmap);

    std::vector<int64_t> fx, fy;
    fx.reserve(fh * fw);
    fy.reserve(fh * fw);
    for (int64_t y = 0; y < fh; ++y)
      for (int64_t x = 0; x < fw; ++x) {
        fx.push_back(fx0 + x);
        fy.push_back(fy0 + y);
      }
    gt_fine = targets_at_pixels(seq, fx, fy, s_len, ws);
  }

  LossOptions lopts;
  lopts.supervise_occluded = cfg.supervise_occluded;
  ElementResult res;
  Tensor total = compute_loss(supervised, gt_coarse,
                              fine ? &*fine : nullptr,
                              fine ? &gt_fine : nullptr, cfg.loss, lopts,
                              &res.breakdown);
  check(std::isfinite(res.breakdown.total), "train: loss diverged (non-finite)");
  total.backward();
  return res;
}

double lr_at(const TrainConfig& cfg, int64_t step) {
  if (cfg.warmup > 0 && step < cfg.warmup)
    return cfg.lr * static_cast<double>(step + 1) / cfg.warmup;
  if (cfg.schedule == "onecycle") {
    const double prog = cfg.steps == cfg.warmup
                            ? 1.0
                            : static_cast<double>(step - cfg.warmup) /
                                  static_cast<double>(cfg.steps - cfg.warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::clamp(prog, 0.0, 1.0)));
  }
  return cfg.lr;
}

}  // namespace

ValScores validate_dense(const DeltaModel& model,
                         const std::vector<RgbdSequence>& seqs) {
  check(!seqs.empty(), "validate_dense: no sequences");
  double epe_sum = 0, d_sum = 0;
  for (const auto& seq : seqs) {
    DenseTrackResult res = model.track_video_dense(seq);
    TrackFile gt = dataset_gt_tracks(seq);
    EvalReport rep = evaluate_tracks(res.fine, gt);
    epe_sum += rep.epe_all.value_or(0.0);
    d_sum += rep.mean_abs_log_depth_err;
  }
  return {epe_sum / seqs.size(), d_sum / seqs.size()};
}

TrainResult train_model(DeltaModel& model,
                        const std::vector<RgbdSequence>& train_seqs,
                        const std::vector<RgbdSequence>& val_seqs,
                        const TrainConfig& cfg,
                        const std::filesystem::path& out_dir) {
  cfg.validate();
  check(!train_seqs.empty(), "train: no training sequences");
  std::filesystem::create_directories(out_dir);

  Adam adam(model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  check(log.good(), "train: cannot open metrics log");

  const std::filesystem::path ckpt_dir = out_dir / "checkpoint";
  TrainResult result;
  result.checkpoint_dir = ckpt_dir;
  result.log_path = out_dir / "train_log.jsonl";

  // Replicas for data-parallel batches; values are re-synced every step.
  const int n_workers =
      static_cast<int>(std::min<int64_t>(cfg.threads, cfg.batch));
  std::vector<std::unique_ptr<DeltaModel>> replicas;
  if (n_workers > 1)
    for (int i = 0; i < n_workers; ++i) replicas.push_back(model.clone());

  for (int64_t step = 0; step < cfg.steps; ++step) {
    const double lr = lr_at(cfg, step);
    LossBreakdown mean_bd;
    auto accumulate_bd = [&](const LossBreakdown& bd) {
      mean_bd.total += bd.total / cfg.batch;
      mean_bd.l2d_coarse += bd.l2d_coarse / cfg.batch;
      mean_bd.ldepth_coarse += bd.ldepth_coarse / cfg.batch;
      mean_bd.lvisib_coarse += bd.lvisib_coarse / cfg.batch;
      mean_bd.l2d_fine += bd.l2d_fine / cfg.batch;
      mean_bd.ldepth_fine += bd.ldepth_fine / cfg.batch;
      mean_bd.lvisib_fine += bd.lvisib_fine / cfg.batch;
    };

    try {
      if (n_workers <= 1) {
        model.params.zero_grads();
        for (int64_t e = 0; e < cfg.batch; ++e)
          accumulate_bd(
              run_element(model, train_seqs, cfg, step * cfg.batch + e)
                  .breakdown);
      } else {
        std::vector<LossBreakdown> bds(cfg.batch);
        std::vector<std::string> errors(n_workers);
        std::vector<std::thread> workers;
        for (int w = 0; w < n_workers; ++w) {
          workers.emplace_back([&, w]() {
            try {
              replicas[w]->params.copy_values_from(model.params);
              replicas[w]->params.zero_grads();
              for (int64_t e = w; e < cfg.batch; e += n_workers)
                bds[e] = run_element(*replicas[w], train_seqs, cfg,
                                     step * cfg.batch + e)
                             .breakdown;
            } catch (const std::exception& ex) {
              errors[w] = ex.what();
            }
          });
        }
        for (auto& t : workers) t.join();
        for (const auto& err : errors)
          check(err.empty(), "train: worker failed: ", err);
        model.params.zero_grads();
        for (const auto& r : replicas)
          model.params.add_grads_from(r->params, 1.0);
        for (const auto& bd : bds) accumulate_bd(bd);
      }
    } catch (const Error&) {
      // Leave the last periodic checkpoint in place as the survivor.
      fail("train: aborted at step ", step,
           " after divergence; last good checkpoint: ", ckpt_dir.string());
    }

    double grad_scale = 1.0 / cfg.batch;
    const double norm = adam.clip_grad_norm(cfg.grad_clip, grad_scale);
    adam.step(lr, grad_scale);

    json rec;
    rec["step"] = step;
    rec["total"] = mean_bd.total;
    rec["l2d_coarse"] = mean_bd.l2d_coarse;
    rec["ldepth_coarse"] = mean_bd.ldepth_coarse;
    rec["lvisib_coarse"] = mean_bd.lvisib_coarse;
    rec["l2d_fine"] = mean_bd.l2d_fine;
    rec["ldepth_fine"] = mean_bd.ldepth_fine;
    rec["lvisib_fine"] = mean_bd.lvisib_fine;
    rec["lr"] = lr;
    rec["grad_norm"] = norm;

    const bool last = step + 1 == cfg.steps;
    if (!val_seqs.empty() &&
        (last || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0))) {
      ValScores v = validate_dense(model, val_seqs);
      rec["val_epe"] = v.epe;
      rec["val_log_depth_err"] = v.log_depth_err;
      result.final_val_epe = v.epe;
      result.final_val_log_depth_err = v.log_depth_err;
    }
    if (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0))
      model.save_checkpoint(ckpt_dir);

    log << rec.dump() << "\n";
    result.steps_run = step + 1;
  }
  log.flush();
  return result;
}

}  // namespace delta
