#include "delta/loss.hpp"

#include <cmath>

namespace delta {

void LossWeights::validate(int m_iter) const {
  check(lambda_2d >= 0 && lambda_depth >= 0 && lambda_visib >= 0,
        "LossWeights: negative weighting");
  if (!per_iteration.empty()) {
    check(static_cast<int>(per_iteration.size()) == m_iter,
          "LossWeights: ", per_iteration.size(), " iteration weights for ",
          m_iter, " iterations");
    double s = 0;
    for (double w : per_iteration) {
      check(w >= 0, "LossWeights: negative iteration weight");
      s += w;
    }
    check(std::fabs(s - 1.0) < 1e-9, "LossWeights: iteration weights sum to ",
          s, ", expected 1");
  }
}

std::vector<double> LossWeights::iteration_weights(int m_iter) const {
  if (!per_iteration.empty()) return per_iteration;
  return std::vector<double>(m_iter, 1.0 / m_iter);
}

TrackState gather_tracks(const TrackState& st,
                         const std::vector<int64_t>& track_idx) {
  std::vector<int64_t> rows;
  rows.reserve(st.t_len * track_idx.size());
  for (int64_t t = 0; t < st.t_len; ++t)
    for (int64_t i : track_idx) {
      check(i >= 0 && i < st.n, "gather_tracks: index ", i, " out of ", st.n);
      rows.push_back(t * st.n + i);
    }
  TrackState out;
  out.t_len = st.t_len;
  out.n = static_cast<int64_t>(track_idx.size());
  out.uv = gather_rows(st.uv, rows);
  out.log_d = gather_rows(st.log_d, rows);
  out.vis_logit = gather_rows(st.vis_logit, rows);
  out.track_feat = gather_rows(st.track_feat, rows);
  const bool has_queries =
      st.query_uv.size() == static_cast<size_t>(st.n) * 2 &&
      st.query_log_d.size() == static_cast<size_t>(st.n);
  if (has_queries) {
    for (int64_t i : track_idx) {
      out.query_uv.push_back(st.query_uv[i * 2]);
      out.query_uv.push_back(st.query_uv[i * 2 + 1]);
      out.query_log_d.push_back(st.query_log_d[i]);
    }
  }
  return out;
}

namespace {

struct TermInputs {
  Tensor gt_uv;       // [T*N, 2]
  Tensor gt_inv_d;    // [T*N, 1]
  Tensor gt_vis;      // [T*N, 1] as 0/1
  Tensor point_mask;  // [T*N, 1]; all ones unless occluded points are skipped
  double mask_count = 0;
};

TermInputs make_targets(const TrackTargets& gt, const LossOptions& opts) {
  const int64_t rows = gt.t_len * gt.n;
  check(static_cast<int64_t>(gt.uv.size()) == rows * 2 &&
            static_cast<int64_t>(gt.depth.size()) == rows &&
            static_cast<int64_t>(gt.vis.size()) == rows,
        "compute_loss: inconsistent target sizes");
  TermInputs ti;
  ti.gt_uv = Tensor::from_data({rows, 2}, gt.uv);
  std::vector<double> inv(rows), vis(rows), mask(rows);
  for (int64_t i = 0; i < rows; ++i) {
    check(gt.depth[i] > 0, "compute_loss: non-positive gt depth");
    inv[i] = 1.0 / gt.depth[i];
    vis[i] = gt.vis[i] ? 1.0 : 0.0;
    mask[i] = (opts.supervise_occluded || gt.vis[i]) ? 1.0 : 0.0;
    ti.mask_count += mask[i];
  }
  check(ti.mask_count > 0, "compute_loss: no supervised points");
  ti.gt_inv_d = Tensor::from_data({rows, 1}, std::move(inv));
  ti.gt_vis = Tensor::from_data({rows, 1}, std::move(vis));
  ti.point_mask = Tensor::from_data({rows, 1}, std::move(mask));
  return ti;
}

// Mean over supervised points of |du| + |dv|.
Tensor l1_2d(const Tensor& uv, const TermInputs& ti) {
  Tensor a = vabs(sub(uv, ti.gt_uv));
  Tensor masked = mul(a, ti.point_mask);
  return scale(sum_all(masked), 1.0 / ti.mask_count);
}

Tensor l1_inv_depth(const Tensor& log_d, const TermInputs& ti) {
  Tensor inv = vexp(scale(log_d, -1.0));
  Tensor a = vabs(sub(inv, ti.gt_inv_d));
  Tensor masked = mul(a, ti.point_mask);
  return scale(sum_all(masked), 1.0 / ti.mask_count);
}

Tensor bce_vis(const Tensor& vis_logit, const TermInputs& ti) {
  return mean_all(bce_with_logits(vis_logit, ti.gt_vis));
}

void check_finite_component(const Tensor& t, const char* name) {
  check(std::isfinite(t.item()), "compute_loss: component '", name,
        "' is not finite");
}

}  // namespace

Tensor compute_loss(const std::vector<TrackState>& per_iter,
                    const TrackTargets& gt_coarse, const FineTracks* fine,
                    const TrackTargets* gt_fine, const LossWeights& weights,
                    const LossOptions& opts, LossBreakdown* breakdown) {
  check(!per_iter.empty(), "compute_loss: no iterations given");
  const int m_iter = static_cast<int>(per_iter.size());
  weights.validate(m_iter);
  const std::vector<double> iw = weights.iteration_weights(m_iter);
  for (const auto& st : per_iter)
    check(st.t_len == gt_coarse.t_len && st.n == gt_coarse.n,
          "compute_loss: prediction is ", st.t_len, "x", st.n, ", targets ",
          gt_coarse.t_len, "x", gt_coarse.n);

  TermInputs tc = make_targets(gt_coarse, opts);
  LossBreakdown bd;

  Tensor total = Tensor::scalar(0.0);
  for (int m = 0; m < m_iter; ++m) {
    Tensor l2d = l1_2d(per_iter[m].uv, tc);
    Tensor ld = l1_inv_depth(per_iter[m].log_d, tc);
    check_finite_component(l2d, "coarse 2d");
    check_finite_component(ld, "coarse inverse depth");
    bd.l2d_coarse += iw[m] * l2d.item();
    bd.ldepth_coarse += iw[m] * ld.item();
    total = add(total, scale(l2d, iw[m] * weights.lambda_2d));
    total = add(total, scale(ld, iw[m] * weights.lambda_depth));
  }
  Tensor lv = bce_vis(per_iter.back().vis_logit, tc);
  check_finite_component(lv, "coarse visibility");
  bd.lvisib_coarse = lv.item();
  total = add(total, scale(lv, weights.lambda_visib));

  if (fine) {
    check(gt_fine, "compute_loss: fine prediction without fine targets");
    check(fine->t_len == gt_fine->t_len && fine->n == gt_fine->n,
          "compute_loss: fine prediction is ", fine->t_len, "x", fine->n,
          ", targets ", gt_fine->t_len, "x", gt_fine->n);
    TermInputs tf = make_targets(*gt_fine, opts);
    Tensor l2d = l1_2d(fine->uv, tf);
    Tensor ld = l1_inv_depth(fine->log_d, tf);
    Tensor lvf = bce_vis(fine->vis_logit, tf);
    check_finite_component(l2d, "fine 2d");
    check_finite_component(ld, "fine inverse depth");
    check_finite_component(lvf, "fine visibility");
    bd.l2d_fine = l2d.item();
    bd.ldepth_fine = ld.item();
    bd.lvisib_fine = lvf.item();
    total = add(total, scale(l2d, weights.lambda_2d));
    total = add(total, scale(ld, weights.lambda_depth));
    total = add(total, scale(lvf, weights.lambda_visib));
  }

  bd.total = total.item();
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace delta
