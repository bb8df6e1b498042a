#include "delta/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "delta/synthdata.hpp"

namespace delta {

using nlohmann::json;

EpeResult endpoint_error(const std::vector<double>& pred_uv,
                         const std::vector<double>& gt_uv,
                         const std::vector<uint8_t>& gt_vis, int64_t t_len,
                         int64_t n) {
  check(static_cast<int64_t>(pred_uv.size()) == t_len * n * 2 &&
            pred_uv.size() == gt_uv.size() &&
            static_cast<int64_t>(gt_vis.size()) == t_len * n,
        "endpoint_error: shape mismatch");
  double s_all = 0, s_vis = 0, s_occ = 0;
  int64_t c_all = 0, c_vis = 0, c_occ = 0;
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t i = 0; i < n; ++i) {
      const int64_t r = t * n + i;
      const double e = std::hypot(pred_uv[r * 2] - gt_uv[r * 2],
                                  pred_uv[r * 2 + 1] - gt_uv[r * 2 + 1]);
      s_all += e;
      ++c_all;
      if (gt_vis[r]) {
        s_vis += e;
        ++c_vis;
      } else {
        s_occ += e;
        ++c_occ;
      }
    }
  }
  EpeResult out;
  if (c_all) out.all = s_all / c_all;
  if (c_vis) out.vis = s_vis / c_vis;
  if (c_occ) out.occ = s_occ / c_occ;
  return out;
}

double occlusion_iou(const std::vector<uint8_t>& pred_vis,
                     const std::vector<uint8_t>& gt_vis) {
  check(pred_vis.size() == gt_vis.size(), "occlusion_iou: size mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred_vis.size(); ++i) {
    const bool p_occ = !pred_vis[i];
    const bool g_occ = !gt_vis[i];
    if (p_occ && g_occ) ++inter;
    if (p_occ || g_occ) ++uni;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

TapVid3dResult tapvid3d_metrics(const std::vector<double>& pred,
                                const std::vector<uint8_t>& pred_vis,
                                const std::vector<double>& gt,
                                const std::vector<uint8_t>& gt_vis,
                                const std::vector<double>& thresholds,
                                int64_t t_len, int64_t n,
                                const PinholeIntrinsics& intr) {
  check(static_cast<int64_t>(pred.size()) == t_len * n * 3 &&
            pred.size() == gt.size() &&
            static_cast<int64_t>(pred_vis.size()) == t_len * n &&
            pred_vis.size() == gt_vis.size(),
        "tapvid3d_metrics: shape mismatch");
  check(!thresholds.empty(), "tapvid3d_metrics: no thresholds");

  auto lift = [&](const double* p, double* xyz) {
    const double d = p[2];
    check(d > 0, "tapvid3d_metrics: non-positive depth in lift");
    xyz[0] = (p[0] - intr.cx) * d / intr.focal;
    xyz[1] = (p[1] - intr.cy) * d / intr.focal;
    xyz[2] = d;
  };

  const int64_t rows = t_len * n;
  std::vector<double> err(rows);
  for (int64_t r = 0; r < rows; ++r) {
    double a[3], b[3];
    lift(&pred[r * 3], a);
    lift(&gt[r * 3], b);
    err[r] = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) +
                       (a[1] - b[1]) * (a[1] - b[1]) +
                       (a[2] - b[2]) * (a[2] - b[2]));
  }

  double apd_sum = 0, aj_sum = 0;
  for (double delta : thresholds) {
    int64_t within_vis = 0, gt_vis_count = 0;
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t r = 0; r < rows; ++r) {
      const bool within = err[r] < delta;
      if (gt_vis[r]) {
        ++gt_vis_count;
        if (within) ++within_vis;
      }
      const bool pos = within && pred_vis[r];
      if (gt_vis[r] && pos) ++tp;
      if (pred_vis[r] && !(within && gt_vis[r])) ++fp;
      if (gt_vis[r] && !pos) ++fn;
    }
    apd_sum += gt_vis_count ? static_cast<double>(within_vis) / gt_vis_count : 0.0;
    const int64_t denom = tp + fp + fn;
    aj_sum += denom ? static_cast<double>(tp) / denom : 0.0;
  }

  int64_t vis_correct = 0;
  for (int64_t r = 0; r < rows; ++r)
    if ((pred_vis[r] != 0) == (gt_vis[r] != 0)) ++vis_correct;

  TapVid3dResult out;
  out.apd3d = 100.0 * apd_sum / thresholds.size();
  out.aj = 100.0 * aj_sum / thresholds.size();
  out.oa = 100.0 * vis_correct / rows;
  return out;
}

json EvalReport::to_json() const {
  json j;
  j["epe_all"] = epe_all ? json(*epe_all) : json();
  j["epe_vis"] = epe_vis ? json(*epe_vis) : json();
  j["epe_occ"] = epe_occ ? json(*epe_occ) : json();
  j["occ_iou"] = occ_iou;
  j["apd3d"] = apd3d;
  j["aj"] = aj;
  j["oa"] = oa;
  j["thresholds"] = thresholds;
  j["threshold_scale_median_gt_depth"] = threshold_scale;
  j["mean_abs_log_depth_err"] = mean_abs_log_depth_err;
  j["conventions"] = {
      {"epe_frames", "1..T-1"},
      {"tapvid3d_frames", "all"},
      {"lifting", "pinhole camera space"},
  };
  return j;
}

EvalReport evaluate_tracks(const TrackFile& pred, const TrackFile& gt,
                           const std::vector<double>& rel_thresholds) {
  check(pred.t == gt.t && pred.n == gt.n, "evaluate_tracks: pred is ", pred.t,
        "x", pred.n, ", gt is ", gt.t, "x", gt.n);
  const int64_t rows = pred.t * pred.n;

  std::vector<double> pred_uv(rows * 2), gt_uv(rows * 2);
  std::vector<double> pred3(rows * 3), gt3(rows * 3);
  for (int64_t r = 0; r < rows; ++r) {
    pred_uv[r * 2] = pred.uv[r * 2];
    pred_uv[r * 2 + 1] = pred.uv[r * 2 + 1];
    gt_uv[r * 2] = gt.uv[r * 2];
    gt_uv[r * 2 + 1] = gt.uv[r * 2 + 1];
    pred3[r * 3] = pred.uv[r * 2];
    pred3[r * 3 + 1] = pred.uv[r * 2 + 1];
    pred3[r * 3 + 2] = pred.depth[r];
    gt3[r * 3] = gt.uv[r * 2];
    gt3[r * 3 + 1] = gt.uv[r * 2 + 1];
    gt3[r * 3 + 2] = gt.depth[r];
  }

  EvalReport rep;
  EpeResult epe = endpoint_error(pred_uv, gt_uv, gt.vis, pred.t, pred.n);
  rep.epe_all = epe.all;
  rep.epe_vis = epe.vis;
  rep.epe_occ = epe.occ;
  rep.occ_iou = occlusion_iou(pred.vis, gt.vis);

  // Thresholds in scene units, scaled by the median gt depth.
  std::vector<double> depths;
  depths.reserve(rows);
  for (int64_t t = 1; t < gt.t; ++t)
    for (int64_t i = 0; i < gt.n; ++i) depths.push_back(gt.depth[t * gt.n + i]);
  if (depths.empty()) depths.push_back(1.0);
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2,
                   depths.end());
  rep.threshold_scale = depths[depths.size() / 2];
  for (double r : rel_thresholds) rep.thresholds.push_back(r * rep.threshold_scale);

  PinholeIntrinsics intr{gt.focal > 0 ? gt.focal : 1.0, gt.cx, gt.cy};
  TapVid3dResult tv = tapvid3d_metrics(pred3, pred.vis, gt3, gt.vis,
                                       rep.thresholds, pred.t, pred.n, intr);
  rep.apd3d = tv.apd3d;
  rep.aj = tv.aj;
  rep.oa = tv.oa;

  double dsum = 0;
  for (int64_t r = 0; r < rows; ++r)
    dsum += std::fabs(std::log(pred.depth[r] / gt.depth[r]));
  rep.mean_abs_log_depth_err = dsum / rows;
  return rep;
}

TrackFile dataset_gt_tracks(const RgbdSequence& seq) {
  check(seq.has_gt, "dataset_gt_tracks: sequence has no ground truth");
  TrackFile tf;
  tf.t = seq.t;
  tf.n = seq.pix();
  tf.height = seq.h;
  tf.width = seq.w;
  tf.focal = seq.focal;
  tf.cx = seq.cx;
  tf.cy = seq.cy;
  const int64_t rows = tf.t * tf.n;
  tf.uv.resize(rows * 2);
  tf.depth.resize(rows);
  tf.vis.assign(seq.gt_vis.begin(), seq.gt_vis.end());
  for (int64_t r = 0; r < rows; ++r) {
    tf.uv[r * 2] = seq.gt_tracks[r * 3];
    tf.uv[r * 2 + 1] = seq.gt_tracks[r * 3 + 1];
    tf.depth[r] = seq.gt_tracks[r * 3 + 2];
  }
  tf.query_uv.resize(tf.n * 2);
  for (int64_t y = 0; y < seq.h; ++y)
    for (int64_t x = 0; x < seq.w; ++x) {
      tf.query_uv[(y * seq.w + x) * 2] = x;
      tf.query_uv[(y * seq.w + x) * 2 + 1] = y;
    }
  return tf;
}

TrackFile dataset_gt_tracks(const std::filesystem::path& dataset_dir) {
  return dataset_gt_tracks(load_dataset(dataset_dir));
}

}  // namespace delta
