// Acceptance suite: one pass/fail line per criterion.
//
//   1. exact cost-formula equality on random layouts
//   2. linear-vs-quadratic attention cost scaling
//   3. depth-scale invariance (random init + trained checkpoint)
//   4. upsampler convexity suite
//   5. finite-difference gradient checks (ops + end-to-end micro model)
//   6. metric oracle equivalence
//   7. toy training beats half the zero-motion baselines
//   8. ablation directionality (depth repr / attention / anchor tracks)
//   9. CLI determinism (byte-identical re-runs)
//
// Slow criteria can be selected with --only "1,2,4"; the default runs all.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "delta/costing.hpp"
#include "delta/metrics.hpp"
#include "delta/model.hpp"
#include "delta/train.hpp"
#include "../op_grad_suite.hpp"
#include "../param_grad_check.hpp"

namespace fs = std::filesystem;
using namespace delta;
using Clock = std::chrono::steady_clock;

namespace {

struct CriterionResult {
  int id = 0;
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------- 1 & 2

CriterionResult criterion_cost_equality() {
  const auto t0 = Clock::now();
  Rng rng(20250811);
  int failures = 0;
  std::string first_failure;
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t t_len = 2 + rng.uniform_int(15);    // [2,16]
    const int64_t k = 1 + rng.uniform_int(32);        // [1,32]
    const int64_t n = 16 + rng.uniform_int(4081);     // [16,4096]
    const int64_t m = 1 + rng.uniform_int(n);         // [1,N']
    AttentionLayout layout{k, m, 4};
    CostReport rep = attention_cost(
        layout, t_len, n,
        {CostVariant::kFull, CostVariant::kCoTrackerVirtual,
         CostVariant::kOursGlobal});
    for (const auto& e : rep.entries) {
      if (e.measured_spatial != e.predicted_spatial) {
        ++failures;
        if (first_failure.empty())
          first_failure = strcat_msg(cost_variant_name(e.variant), " T=",
                                     t_len, " K=", k, " N=", n, " M=", m,
                                     ": measured ", e.measured_spatial,
                                     " vs predicted ", e.predicted_spatial);
      }
    }
  }
  const double secs = seconds_since(t0);
  CriterionResult r;
  r.id = 1;
  r.pass = failures == 0 && secs < 60.0;
  r.detail = strcat_msg("50 random layouts x 3 variants, ", failures,
                        " mismatches, ", fmt(secs), "s");
  if (!first_failure.empty()) r.detail += "; first: " + first_failure;
  return r;
}

CriterionResult criterion_cost_scaling(const fs::path& work) {
  AttentionLayout layout{16, 16, 4};
  std::vector<int64_t> ns;
  for (int64_t n = 64; n <= 4096; n *= 2) ns.push_back(n);

  auto rows_ours = cost_sweep(CostVariant::kOursGlobal, layout, 8, ns);
  auto rows_full = cost_sweep(CostVariant::kFull, layout, 8, ns);

  fs::create_directories(work);
  std::ofstream csv(work / "cost_vs_n.csv", std::ios::trunc);
  csv << "n,variant,measured,predicted\n";
  std::vector<double> xs, ys_ours, ys_full;
  for (size_t i = 0; i < ns.size(); ++i) {
    xs.push_back(static_cast<double>(ns[i]));
    ys_ours.push_back(static_cast<double>(rows_ours[i].measured));
    ys_full.push_back(static_cast<double>(rows_full[i].measured));
    csv << ns[i] << ",ours_global," << rows_ours[i].measured << ","
        << rows_ours[i].predicted << "\n";
    csv << ns[i] << ",full," << rows_full[i].measured << ","
        << rows_full[i].predicted << "\n";
  }
  const double r_ours_affine = polyfit_max_residual(xs, ys_ours, 1);
  const double r_full_quad = polyfit_max_residual(xs, ys_full, 2);
  const double r_full_affine = polyfit_max_residual(xs, ys_full, 1);

  CriterionResult r;
  r.id = 2;
  r.pass = r_ours_affine < 1.0 && r_full_quad < 1.0 && r_full_affine > 1.0;
  r.detail = strcat_msg("ours affine residual ", fmt(r_ours_affine),
                        ", full quadratic residual ", fmt(r_full_quad),
                        ", full affine residual ", fmt(r_full_affine),
                        " (CSV at ", (work / "cost_vs_n.csv").string(), ")");
  return r;
}

// ---------------------------------------------------------------- 3

std::unique_ptr<DeltaModel> with_config(const DeltaModel& src,
                                        const ModelConfig& cfg) {
  auto out = std::make_unique<DeltaModel>(cfg, src.init_seed);
  out->params.copy_values_from(src.params);
  return out;
}

struct ScalePairing {
  double max_uv_diff = 0;
  bool vis_identical = true;
  double max_depth_rel_err = 0;
  bool uv_bitwise = true;
};

ScalePairing scale_pairing(const DeltaModel& model, const RgbdSequence& seq,
                           double c) {
  DenseTrackResult base = model.track_video_dense(seq);
  RgbdSequence scaled = seq;
  for (auto& d : scaled.depth) d *= c;
  DenseTrackResult sc = model.track_video_dense(scaled);

  ScalePairing p;
  auto compare = [&](const TrackFile& a, const TrackFile& b) {
    for (size_t i = 0; i < a.uv.size(); ++i) {
      const double d = std::fabs(b.uv[i] - a.uv[i]);
      p.max_uv_diff = std::max(p.max_uv_diff, d);
      if (std::memcmp(&b.uv[i], &a.uv[i], sizeof(double)) != 0)
        p.uv_bitwise = false;
    }
    for (size_t i = 0; i < a.vis.size(); ++i)
      if (a.vis[i] != b.vis[i]) p.vis_identical = false;
    for (size_t i = 0; i < a.depth.size(); ++i) {
      const double rel = std::fabs(b.depth[i] / a.depth[i] - c) / c;
      p.max_depth_rel_err = std::max(p.max_depth_rel_err, rel);
    }
  };
  compare(base.coarse, sc.coarse);
  compare(base.fine, sc.fine);
  return p;
}

CriterionResult criterion_scale_invariance(const fs::path& ckpt_dir) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.tracker.pos_embed_depth = false;

  SceneConfig sc;
  sc.t = 12;
  sc.h = 64;
  sc.w = 64;
  sc.n_sprites = 4;
  RgbdSequence seq = generate_sequence(sc, 424242);

  std::vector<std::pair<std::string, std::unique_ptr<DeltaModel>>> models;
  models.emplace_back("random-init",
                      std::make_unique<DeltaModel>(cfg, 123));
  if (fs::exists(ckpt_dir / "model.json")) {
    auto trained = DeltaModel::load_checkpoint(ckpt_dir);
    ModelConfig tcfg = trained->cfg;
    tcfg.tracker.pos_embed_depth = false;
    models.emplace_back("trained", with_config(*trained, tcfg));
  }

  CriterionResult r;
  r.id = 3;
  r.pass = models.size() == 2;
  std::string detail;
  if (models.size() < 2) detail = "trained checkpoint missing (run criterion 7 first); ";
  for (const auto& [name, model] : models) {
    for (double c : {0.1, 3.0, 42.0}) {
      ScalePairing p = scale_pairing(*model, seq, c);
      const bool ok =
          p.vis_identical && p.max_uv_diff < 1e-9 && p.max_depth_rel_err < 1e-6;
      r.pass = r.pass && ok;
      detail += strcat_msg(name, " c=", c, ": uv diff ", fmt(p.max_uv_diff),
                           p.uv_bitwise ? " (bitwise)" : "", ", vis ",
                           p.vis_identical ? "identical" : "DIFFERS",
                           ", depth rel err ", fmt(p.max_depth_rel_err), "; ");
    }
  }
  r.detail = detail;
  return r;
}

// ---------------------------------------------------------------- 4

CriterionResult criterion_upsampler_convexity() {
  Rng rng(777);
  int checked = 0;
  bool ok = true;
  std::string why;

  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int r = rng.bernoulli(0.5) ? 2 : 4;
    const int64_t gh = 2 + rng.uniform_int(3);
    const int64_t gw = 2 + rng.uniform_int(3);
    const int64_t h = gh * r, w = gw * r;
    UpsamplerConfig cfg;
    cfg.kappa = 3;
    cfg.tau = 1;
    cfg.r = r;
    cfg.d_up = 8;
    cfg.heads = 2;
    cfg.variant = trial % 3 == 0 ? UpsamplerVariant::kAttention
                                 : UpsamplerVariant::kAttentionAlibi;
    ParamStore ps;
    Rng prng(1000 + trial);
    Upsampler up(cfg, 4, ps, prng);

    std::vector<double> fv(h * w * 3), cv(gh * gw * 4);
    for (auto& x : fv) x = rng.uniform();
    for (auto& x : cv) x = rng.normal();
    UpsampleWeightMap m =
        up.compute_weights(Tensor::from_data({h, w, 3}, fv),
                           Tensor::from_data({gh, gw, 4}, cv));

    const int64_t k2 = 9, n_pix = h * w, n_coarse = gh * gw;
    for (int64_t p = 0; p < n_pix && ok; ++p) {
      double s = 0;
      for (int64_t j = 0; j < k2; ++j) {
        const double wv = m.weights.data()[p * k2 + j];
        if (wv < 0) {
          ok = false;
          why = "negative weight";
        }
        s += wv;
      }
      if (std::fabs(s - 1.0) > 1e-6) {
        ok = false;
        why = strcat_msg("weight sum ", s);
      }
    }

    // Random coarse field: hull bounds + exact constant preservation +
    // translation equivariance.
    TrackState st;
    st.t_len = 1;
    st.n = n_coarse;
    std::vector<double> uv(n_coarse * 2), ld(n_coarse), vl(n_coarse);
    for (auto& x : uv) x = rng.uniform(-20, 20);
    for (auto& x : ld) x = rng.uniform(-1, 1);
    for (auto& x : vl) x = rng.uniform(-5, 5);
    st.uv = Tensor::from_data({n_coarse, 2}, uv);
    st.log_d = Tensor::from_data({n_coarse, 1}, ld);
    st.vis_logit = Tensor::from_data({n_coarse, 1}, vl);
    st.track_feat = Tensor::zeros({n_coarse, 1});
    FineTracks fine = apply_upsample(st, m);
    for (int64_t p = 0; p < n_pix && ok; ++p)
      for (int cdim = 0; cdim < 2; ++cdim) {
        double lo = 1e300, hi = -1e300;
        for (int64_t j = 0; j < k2; ++j) {
          const double v = uv[m.neighbor_index[p * k2 + j] * 2 + cdim];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const double v = fine.uv.data()[p * 2 + cdim];
        if (v < lo - 1e-9 || v > hi + 1e-9) {
          ok = false;
          why = "outside neighbor hull";
        }
      }

    TrackState cst;
    cst.t_len = 1;
    cst.n = n_coarse;
    cst.uv = Tensor::full({n_coarse, 2}, 4.5);
    cst.log_d = Tensor::full({n_coarse, 1}, 0.25);
    cst.vis_logit = Tensor::full({n_coarse, 1}, 1.5);
    cst.track_feat = Tensor::zeros({n_coarse, 1});
    FineTracks cfine = apply_upsample(cst, m);
    for (int64_t i = 0; i < cfine.uv.numel() && ok; ++i)
      if (std::fabs(cfine.uv.data()[i] - 4.5) > 1e-12) {
        ok = false;
        why = "constant field not preserved";
      }

    TrackState shifted = st.detached();
    for (int64_t i = 0; i < shifted.uv.numel(); i += 2) {
      shifted.uv.raw()[i] += 3.75;
      shifted.uv.raw()[i + 1] -= 1.5;
    }
    FineTracks sfine = apply_upsample(shifted, m);
    for (int64_t i = 0; i < sfine.uv.numel() && ok; i += 2) {
      if (std::fabs(sfine.uv.data()[i] - fine.uv.data()[i] - 3.75) > 1e-9 ||
          std::fabs(sfine.uv.data()[i + 1] - fine.uv.data()[i + 1] + 1.5) >
              1e-9) {
        ok = false;
        why = "translation equivariance violated";
      }
    }
    ++checked;
  }

  CriterionResult r;
  r.id = 4;
  r.pass = ok && checked == 1000;
  r.detail = strcat_msg(checked, " random weight maps/fields checked",
                        ok ? "" : ("; failed: " + why));
  return r;
}

// ---------------------------------------------------------------- 5

CriterionResult criterion_grad_checks() {
  const auto t0 = Clock::now();
  std::string worst_op;
  const double op_err = op_grad_suite(&worst_op);

  // End-to-end micro model: N=4 tracks, T=3, 1 block, 1 iteration, 8x8
  // frames, upsampler and full loss included.
  ModelConfig cfg;
  cfg.encoder.d_f = 6;
  cfg.encoder.strides = {2, 4};
  cfg.encoder.res_blocks = {1, 0};
  cfg.tracker.blocks = 1;
  cfg.tracker.heads = 2;
  cfg.tracker.hidden = 16;
  cfg.tracker.m_iter = 1;
  cfg.tracker.window = 3;
  cfg.tracker.overlap = 1;
  cfg.tracker.k_virtual = 2;
  cfg.tracker.anchor_grid_h = 1;
  cfg.tracker.anchor_grid_w = 2;
  cfg.tracker.patch_size = 2;
  cfg.tracker.corr_radius = 1;
  cfg.tracker.n_freq = 2;
  cfg.tracker.feature_stride = 2;
  cfg.upsampler.r = 2;
  cfg.upsampler.kappa = 3;
  cfg.upsampler.tau = 1;
  cfg.upsampler.d_up = 6;
  cfg.upsampler.heads = 2;
  DeltaModel model(cfg, 2024);

  SceneConfig sc;
  sc.t = 3;
  sc.h = 8;
  sc.w = 8;
  sc.n_sprites = 1;
  sc.sprite_min_size = 3;
  sc.sprite_max_size = 5;
  sc.sprite_speed_max = 0.7;
  RgbdSequence seq = generate_sequence(sc, 31);

  // A 2x2 patch of the 4x4 coarse grid plus two appended anchors.
  std::vector<double> queries = {1.0, 1.0, 3.0, 1.0, 1.0, 3.0, 3.0, 3.0,
                                 5.0, 5.0, 7.0, 7.0};
  TrackGroups groups = training_patch_groups(2, 2, 2, 2);
  std::vector<int64_t> patch_idx = {0, 1, 2, 3};

  TrackTargets gt_coarse;
  gt_coarse.t_len = 3;
  gt_coarse.n = 4;
  const int64_t qxs[4] = {1, 3, 1, 3}, qys[4] = {1, 1, 3, 3};
  for (int64_t t = 0; t < 3; ++t)
    for (int i = 0; i < 4; ++i) {
      const int64_t src = (t * 8 + qys[i]) * 8 + qxs[i];
      gt_coarse.uv.push_back(seq.gt_tracks[src * 3]);
      gt_coarse.uv.push_back(seq.gt_tracks[src * 3 + 1]);
      gt_coarse.depth.push_back(seq.gt_tracks[src * 3 + 2]);
      gt_coarse.vis.push_back(seq.gt_vis[src]);
    }
  TrackTargets gt_fine;
  gt_fine.t_len = 3;
  gt_fine.n = 16;
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) {
        const int64_t src = (t * 8 + y) * 8 + x;
        gt_fine.uv.push_back(seq.gt_tracks[src * 3]);
        gt_fine.uv.push_back(seq.gt_tracks[src * 3 + 1]);
        gt_fine.depth.push_back(seq.gt_tracks[src * 3 + 2]);
        gt_fine.vis.push_back(seq.gt_vis[src]);
      }

  auto build = [&]() {
    WindowInputs win =
        model.window_inputs(seq, model.compute_pyramids(seq), 0, 3);
    TrackState st = model.tracker.init_tracks(queries, win.depth_maps[0],
                                              win.pyramids[0], 3);
    std::vector<TrackState> per_iter;
    model.tracker.refine_window(st, win, groups, 1, &per_iter);
    std::vector<TrackState> supervised;
    for (const auto& s : per_iter)
      supervised.push_back(gather_tracks(s, patch_idx));

    // Upsample the 2x2 patch region (fine 4x4 at its origin).
    std::vector<double> crop_rgb(4 * 4 * 3);
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x)
        for (int c = 0; c < 3; ++c)
          crop_rgb[(y * 4 + x) * 3 + c] = seq.rgb[((0 * 8 + y) * 8 + x) * 3 + c];
    const PyramidLevel& lvl = pyramid_level_at(win.pyramids[0], 2);
    std::vector<int64_t> crop_idx = {0, 1, 4, 5};
    Tensor feat_crop = reshape(
        gather_rows(reshape(lvl.map, {16, cfg.encoder.d_f}), crop_idx),
        {2, 2, cfg.encoder.d_f});
    UpsampleWeightMap wmap = model.upsampler.compute_weights(
        Tensor::from_data({4, 4, 3}, crop_rgb), feat_crop);
    FineTracks fine = apply_upsample(supervised.back(), wmap);
    return compute_loss(supervised, gt_coarse, &fine, &gt_fine, LossWeights{},
                        {}, nullptr);
  };
  const double model_err = param_grad_check(build, model.params, 1e-5, 8, 555);
  const double secs = seconds_since(t0);

  CriterionResult r;
  r.id = 5;
  r.pass = op_err < 1e-4 && model_err < 1e-4 && secs < 300.0;
  r.detail = strcat_msg("ops max rel err ", fmt(op_err), " (worst: ", worst_op,
                        "), micro-model max rel err ", fmt(model_err), ", ",
                        fmt(secs), "s");
  return r;
}

// ---------------------------------------------------------------- 6

CriterionResult criterion_metric_oracles() {
  Rng rng(808);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t t_len = 2 + rng.uniform_int(3);
    const int64_t n = 1 + rng.uniform_int(5);
    const int64_t rows = t_len * n;
    std::vector<double> pred(rows * 3), gt(rows * 3);
    std::vector<uint8_t> pvis(rows), gvis(rows);
    for (int64_t i = 0; i < rows; ++i) {
      gt[i * 3] = rng.uniform(0, 30);
      gt[i * 3 + 1] = rng.uniform(0, 30);
      gt[i * 3 + 2] = rng.uniform(1, 5);
      pred[i * 3] = gt[i * 3] + rng.normal() * 1.5;
      pred[i * 3 + 1] = gt[i * 3 + 1] + rng.normal() * 1.5;
      pred[i * 3 + 2] = gt[i * 3 + 2] * std::exp(0.15 * rng.normal());
      pvis[i] = rng.bernoulli(0.75);
      gvis[i] = rng.bernoulli(0.75);
    }
    std::vector<double> deltas;
    const int n_thr = 1 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_thr; ++i) deltas.push_back(rng.uniform(0.05, 1.0));
    const PinholeIntrinsics intr{12.0, 14.5, 14.5};

    // EPE oracle.
    {
      std::vector<double> pu(rows * 2), gu(rows * 2);
      for (int64_t i = 0; i < rows; ++i) {
        pu[i * 2] = pred[i * 3];
        pu[i * 2 + 1] = pred[i * 3 + 1];
        gu[i * 2] = gt[i * 3];
        gu[i * 2 + 1] = gt[i * 3 + 1];
      }
      EpeResult er = endpoint_error(pu, gu, gvis, t_len, n);
      double sa = 0, sv = 0, so = 0;
      int64_t ca = 0, cv = 0, co = 0;
      for (int64_t t = 1; t < t_len; ++t)
        for (int64_t i = 0; i < n; ++i) {
          const int64_t rr = t * n + i;
          const double e = std::hypot(pu[rr * 2] - gu[rr * 2],
                                      pu[rr * 2 + 1] - gu[rr * 2 + 1]);
          sa += e;
          ++ca;
          (gvis[rr] ? sv : so) += e;
          ++(gvis[rr] ? cv : co);
        }
      if (ca && std::fabs(*er.all - sa / ca) > 1e-9) ++mismatches;
      if (cv && std::fabs(*er.vis - sv / cv) > 1e-9) ++mismatches;
      if (co && std::fabs(*er.occ - so / co) > 1e-9) ++mismatches;
    }
    // IoU oracle.
    {
      int64_t inter = 0, uni = 0;
      for (int64_t i = 0; i < rows; ++i) {
        if (!pvis[i] && !gvis[i]) ++inter;
        if (!pvis[i] || !gvis[i]) ++uni;
      }
      const double expect = uni ? double(inter) / uni : 1.0;
      if (std::fabs(occlusion_iou(pvis, gvis) - expect) > 1e-9) ++mismatches;
    }
    // TAP-Vid3D oracle.
    {
      auto lift = [&](const double* p, double* o) {
        o[0] = (p[0] - intr.cx) * p[2] / intr.focal;
        o[1] = (p[1] - intr.cy) * p[2] / intr.focal;
        o[2] = p[2];
      };
      double apd = 0, aj = 0;
      for (double d : deltas) {
        int64_t wv = 0, gv = 0, tp = 0, fp = 0, fn = 0;
        for (int64_t i = 0; i < rows; ++i) {
          double a[3], b[3];
          lift(&pred[i * 3], a);
          lift(&gt[i * 3], b);
          const double e = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) +
                                     (a[1] - b[1]) * (a[1] - b[1]) +
                                     (a[2] - b[2]) * (a[2] - b[2]));
          const bool within = e < d;
          if (gvis[i]) {
            ++gv;
            if (within) ++wv;
          }
          const bool pos = within && pvis[i];
          if (gvis[i] && pos) ++tp;
          if (pvis[i] && !(within && gvis[i])) ++fp;
          if (gvis[i] && !pos) ++fn;
        }
        apd += gv ? double(wv) / gv : 0;
        aj += (tp + fp + fn) ? double(tp) / (tp + fp + fn) : 0;
      }
      int64_t okc = 0;
      for (int64_t i = 0; i < rows; ++i)
        if ((pvis[i] != 0) == (gvis[i] != 0)) ++okc;
      TapVid3dResult tr =
          tapvid3d_metrics(pred, pvis, gt, gvis, deltas, t_len, n, intr);
      if (std::fabs(tr.apd3d - 100 * apd / deltas.size()) > 1e-9) ++mismatches;
      if (std::fabs(tr.aj - 100 * aj / deltas.size()) > 1e-9) ++mismatches;
      if (std::fabs(tr.oa - 100.0 * okc / rows) > 1e-9) ++mismatches;
    }
  }
  CriterionResult r;
  r.id = 6;
  r.pass = mismatches == 0;
  r.detail = strcat_msg("100 random instances, ", mismatches, " mismatches");
  return r;
}

// ---------------------------------------------------------------- 7

std::vector<RgbdSequence> desk_sequences(int count, uint64_t seed0,
                                         int64_t t = 12, int64_t hw = 64,
                                         double depth_scale = 1.0) {
  SceneConfig sc;
  sc.t = t;
  sc.h = hw;
  sc.w = hw;
  sc.n_sprites = 4;
  sc.near = 2.0 * depth_scale;
  sc.far = 8.0 * depth_scale;
  std::vector<RgbdSequence> seqs;
  for (int i = 0; i < count; ++i)
    seqs.push_back(generate_sequence(sc, seed0 + i));
  return seqs;
}

CriterionResult criterion_toy_training(const fs::path& work,
                                       const fs::path& ckpt_dir) {
  const auto t0 = Clock::now();
  std::vector<RgbdSequence> train_seqs = desk_sequences(64, 1000);
  std::vector<RgbdSequence> val_seqs = desk_sequences(8, 5000);

  double epe_baseline = 0, depth_baseline = 0;
  for (const auto& s : val_seqs) {
    epe_baseline += zero_motion_baseline(s);
    depth_baseline += zero_motion_depth_baseline(s);
  }
  epe_baseline /= val_seqs.size();
  depth_baseline /= val_seqs.size();

  DeltaModel model(ModelConfig::desk(), 0);
  TrainConfig tc;
  tc.steps = 2000;
  tc.lr = 3e-4;
  tc.warmup = 100;
  tc.patch_h = 8;
  tc.patch_w = 10;
  tc.batch = 2;
  tc.threads = 2;
  tc.val_every = 500;
  tc.checkpoint_every = 500;
  tc.seed = 0;
  TrainResult res = train_model(model, train_seqs, val_seqs, tc, work / "train");
  model.save_checkpoint(ckpt_dir);

  const double secs = seconds_since(t0);
  CriterionResult r;
  r.id = 7;
  r.pass = res.final_val_epe < 0.5 * epe_baseline &&
           res.final_val_log_depth_err < 0.5 * depth_baseline &&
           secs < 3600.0;
  r.detail = strcat_msg("val EPE ", fmt(res.final_val_epe), " vs baseline ",
                        fmt(epe_baseline), " (need < ", fmt(0.5 * epe_baseline),
                        "); log-depth err ", fmt(res.final_val_log_depth_err),
                        " vs baseline ", fmt(depth_baseline), " (need < ",
                        fmt(0.5 * depth_baseline), "); ", fmt(secs), "s");
  return r;
}

// ---------------------------------------------------------------- 8

struct ArmScores {
  double epe = 0;
  double depth_err = 0;
};

ArmScores train_arm(const ModelConfig& cfg, bool use_anchors, uint64_t seed,
                    const std::vector<RgbdSequence>& train_seqs,
                    const std::vector<RgbdSequence>& val_seqs,
                    const fs::path& out) {
  DeltaModel model(cfg, seed);
  TrainConfig tc;
  tc.steps = 350;
  tc.lr = 3e-4;
  tc.warmup = 50;
  tc.patch_h = 5;
  tc.patch_w = 5;
  tc.batch = 2;
  tc.threads = 2;
  tc.val_every = 0;
  tc.checkpoint_every = 0;
  tc.seed = seed;
  tc.use_anchors = use_anchors;
  train_model(model, train_seqs, {}, tc, out);
  ValScores v = validate_dense(model, val_seqs);
  return {v.epe, v.log_depth_err};
}

CriterionResult criterion_ablations(const fs::path& work) {
  const auto t0 = Clock::now();
  std::vector<RgbdSequence> train_seqs = desk_sequences(24, 9000, 8, 48);
  // Held-out evaluation includes depth ranges unseen in training so
  // scale-dependent depth heads pay for their representation.
  std::vector<RgbdSequence> val_seqs = desk_sequences(2, 9500, 8, 48, 1.0);
  for (auto& s : desk_sequences(2, 9600, 8, 48, 0.5)) val_seqs.push_back(s);
  for (auto& s : desk_sequences(2, 9700, 8, 48, 3.0)) val_seqs.push_back(s);

  ModelConfig base = ModelConfig::desk();
  ModelConfig delta_d = base;
  delta_d.tracker.depth_repr = DepthRepr::kDeltaDepth;
  ModelConfig no_attn = base;
  no_attn.tracker.variant = SpatialVariant::kNone;
  no_attn.tracker.local_attention = false;
  ModelConfig no_anchor = base;
  no_anchor.tracker.variant = SpatialVariant::kCoTracker;

  const std::vector<uint64_t> seeds = {0, 1, 2};
  auto mean_arm = [&](const char* name, const ModelConfig& cfg,
                      bool anchors) {
    ArmScores mean;
    for (uint64_t s : seeds) {
      ArmScores a = train_arm(cfg, anchors, s, train_seqs, val_seqs,
                              work / (std::string(name) + "_s" + std::to_string(s)));
      mean.epe += a.epe / seeds.size();
      mean.depth_err += a.depth_err / seeds.size();
      std::cerr << "  [ablate] " << name << " seed " << s << ": EPE "
                << a.epe << ", log-depth err " << a.depth_err << "\n";
    }
    return mean;
  };

  ArmScores a_base = mean_arm("base_log", base, true);
  ArmScores a_delta = mean_arm("delta_depth", delta_d, true);
  ArmScores a_noattn = mean_arm("no_attention", no_attn, true);
  ArmScores a_noanchor = mean_arm("no_anchors", no_anchor, false);

  const bool depth_dir = a_base.depth_err <= a_delta.depth_err;
  const bool attn_dir = a_noattn.epe > a_base.epe;
  const bool anchor_dir = a_noanchor.epe > a_base.epe;
  const double secs = seconds_since(t0);

  CriterionResult r;
  r.id = 8;
  r.pass = depth_dir && attn_dir && anchor_dir;
  r.detail = strcat_msg(
      "(a) depth err log ", fmt(a_base.depth_err), " vs delta ",
      fmt(a_delta.depth_err), depth_dir ? " OK" : " VIOLATED", "; (b) EPE base ",
      fmt(a_base.epe), " vs no-attention ", fmt(a_noattn.epe),
      attn_dir ? " OK" : " VIOLATED", "; (c) EPE with anchors ", fmt(a_base.epe),
      " vs without ", fmt(a_noanchor.epe), anchor_dir ? " OK" : " VIOLATED",
      "; 3 seeds, ", fmt(secs), "s");
  return r;
}

// ---------------------------------------------------------------- 9

bool dirs_identical(const fs::path& a, const fs::path& b, std::string* why) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) {
    if (!fs::exists(b / r)) {
      *why = "missing " + r.string();
      return false;
    }
    std::ifstream fa(a / r, std::ios::binary), fb(b / r, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)),
                   std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)),
                   std::istreambuf_iterator<char>());
    if (ca != cb) {
      *why = "differs: " + r.string();
      return false;
    }
  }
  return true;
}

CriterionResult criterion_cli_determinism(const std::string& delta_bin,
                                          const fs::path& work) {
  CriterionResult r;
  r.id = 9;
  if (delta_bin.empty()) {
    r.pass = false;
    r.detail = "delta binary path not provided (--delta-bin)";
    return r;
  }
  fs::remove_all(work);
  fs::create_directories(work);
  auto run = [&](const std::string& args) {
    const std::string cmd = delta_bin + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  auto twice = [&](const std::string& what, const std::string& args_a,
                   const std::string& args_b, const fs::path& out_a,
                   const fs::path& out_b, std::string* why) {
    if (!run(args_a) || !run(args_b)) {
      *why = what + ": command failed";
      return false;
    }
    if (!dirs_identical(out_a, out_b, why)) {
      *why = what + " " + *why;
      return false;
    }
    return true;
  };

  std::string why;
  bool ok = true;
  const fs::path g1 = work / "g1", g2 = work / "g2";
  ok = ok && twice("gen",
                   "gen --seed 3 --count 2 --T 8 --H 32 --W 32 --out " +
                       g1.string(),
                   "gen --seed 3 --count 2 --T 8 --H 32 --W 32 --out " +
                       g2.string(),
                   g1, g2, &why);
  const fs::path b1 = work / "b1", b2 = work / "b2";
  ok = ok && twice("bench-attn",
                   "bench-attn --T 4 --K 8 --N 256 --M 16 --no-sweep --out " +
                       b1.string(),
                   "bench-attn --T 4 --K 8 --N 256 --M 16 --no-sweep --out " +
                       b2.string(),
                   b1, b2, &why);
  const fs::path t1 = work / "t1", t2 = work / "t2";
  const std::string train_args =
      " --data " + g1.string() +
      " --steps 2 --seed 1 --patch-h 4 --patch-w 4 --val-every 0 --out ";
  ok = ok && twice("train", "train" + train_args + t1.string(),
                   "train" + train_args + t2.string(), t1, t2, &why);
  const fs::path k1 = work / "k1", k2 = work / "k2";
  const std::string track_args = " --data " + (g1 / "seq_00000").string() +
                                 " --checkpoint " +
                                 (t1 / "checkpoint").string() + " --out ";
  ok = ok && twice("track", "track" + track_args + k1.string(),
                   "track" + track_args + k2.string(), k1, k2, &why);
  const fs::path e1 = work / "e1", e2 = work / "e2";
  const std::string eval_args = " --pred " + (k1 / "tracks").string() +
                                " --gt " + (g1 / "seq_00000").string() +
                                " --out ";
  ok = ok && twice("eval", "eval" + eval_args + e1.string(),
                   "eval" + eval_args + e2.string(), e1, e2, &why);

  r.pass = ok;
  r.detail = ok ? "gen/bench-attn/train/track/eval re-runs byte-identical"
              : why;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  std::string delta_bin;
  std::string only;
  fs::path work = "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--delta-bin" && i + 1 < argc) delta_bin = argv[++i];
    else if (a == "--only" && i + 1 < argc) only = argv[++i];
    else if (a == "--work-dir" && i + 1 < argc) work = argv[++i];
    else {
      std::cerr << "usage: delta_acceptance [--delta-bin PATH] [--only 1,2,...]"
                   " [--work-dir DIR]\n";
      return 2;
    }
  }
  auto selected = [&](int id) {
    if (only.empty()) return true;
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty() && std::stoi(tok) == id) return true;
    return false;
  };

  fs::create_directories(work);
  std::map<int, CriterionResult> results;
  auto record = [&](CriterionResult r) {
    results[r.id] = r;
    std::cerr << "[criterion " << r.id << "] " << (r.pass ? "pass" : "FAIL")
              << " — " << r.detail << "\n";
  };

  if (selected(1)) record(criterion_cost_equality());
  if (selected(2)) record(criterion_cost_scaling(work / "c2"));
  if (selected(4)) record(criterion_upsampler_convexity());
  if (selected(5)) record(criterion_grad_checks());
  if (selected(6)) record(criterion_metric_oracles());
  if (selected(9)) record(criterion_cli_determinism(delta_bin, work / "c9"));
  const fs::path ckpt_dir = work / "trained_checkpoint";
  if (selected(7)) record(criterion_toy_training(work / "c7", ckpt_dir));
  if (selected(3)) record(criterion_scale_invariance(ckpt_dir));
  if (selected(8)) record(criterion_ablations(work / "c8"));

  static const char* kNames[] = {
      "",
      "cost-formula equality",
      "linear-vs-quadratic scaling",
      "depth-scale invariance",
      "upsampler convexity suite",
      "gradient checks",
      "metric oracle equivalence",
      "toy training",
      "ablation directionality",
      "CLI determinism",
  };
  int failures = 0;
  std::cout << "\n=== acceptance summary ===\n";
  for (const auto& [id, r] : results) {
    std::cout << (r.pass ? "[PASS]" : "[FAIL]") << " criterion " << id << " ("
              << kNames[id] << "): " << r.detail << "\n";
    if (!r.pass) ++failures;
  }
  std::cout << (failures == 0 ? "all criteria passed\n"
                              : std::to_string(failures) + " criteria failed\n");
  return failures == 0 ? 0 : 1;
}
