#include <cmath>

#include "delta/ops.hpp"

namespace delta {

namespace {

// One bilinear lookup: four taps, their weights, and the weight derivatives
// with respect to the (pre-clamp) point coordinates.
struct BilinTap {
  int64_t idx[4];      // row-major offsets of the 4 texels (in texel units)
  double w[4];
  double dwx[4];
  double dwy[4];
};

BilinTap bilin_tap(double x, double y, int64_t h, int64_t w) {
  BilinTap t;
  const double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const double gx = (x > 0.0 && x < static_cast<double>(w - 1)) ? 1.0 : 0.0;
  const double gy = (y > 0.0 && y < static_cast<double>(h - 1)) ? 1.0 : 0.0;
  int64_t x0 = static_cast<int64_t>(std::floor(xc));
  int64_t y0 = static_cast<int64_t>(std::floor(yc));
  if (x0 > w - 2) x0 = std::max<int64_t>(w - 2, 0);
  if (y0 > h - 2) y0 = std::max<int64_t>(h - 2, 0);
  const double fx = (w > 1) ? xc - static_cast<double>(x0) : 0.0;
  const double fy = (h > 1) ? yc - static_cast<double>(y0) : 0.0;
  const int64_t x1 = std::min(x0 + 1, w - 1);
  const int64_t y1 = std::min(y0 + 1, h - 1);
  t.idx[0] = y0 * w + x0;
  t.idx[1] = y0 * w + x1;
  t.idx[2] = y1 * w + x0;
  t.idx[3] = y1 * w + x1;
  t.w[0] = (1 - fy) * (1 - fx);
  t.w[1] = (1 - fy) * fx;
  t.w[2] = fy * (1 - fx);
  t.w[3] = fy * fx;
  t.dwx[0] = -(1 - fy) * gx;
  t.dwx[1] = (1 - fy) * gx;
  t.dwx[2] = -fy * gx;
  t.dwx[3] = fy * gx;
  t.dwy[0] = -(1 - fx) * gy;
  t.dwy[1] = -fx * gy;
  t.dwy[2] = (1 - fx) * gy;
  t.dwy[3] = fx * gy;
  return t;
}

}  // namespace

Tensor bilinear_sample(const Tensor& map, const Tensor& pts) {
  check(map.shape().size() == 3, "bilinear_sample: map must be [H,W,C], got ",
        shape_str(map.shape()));
  check(pts.shape().size() == 2 && pts.shape()[1] == 2,
        "bilinear_sample: points must be [P,2], got ", shape_str(pts.shape()));
  const int64_t h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  const int64_t p = pts.shape()[0];
  std::vector<double> out(p * c, 0.0);
  const auto& mv = map.data();
  const auto& pv = pts.data();
  for (int64_t i = 0; i < p; ++i) {
    const BilinTap t = bilin_tap(pv[i * 2], pv[i * 2 + 1], h, w);
    double* dst = out.data() + i * c;
    for (int q = 0; q < 4; ++q) {
      const double* src = mv.data() + t.idx[q] * c;
      const double wq = t.w[q];
      for (int64_t ci = 0; ci < c; ++ci) dst[ci] += wq * src[ci];
    }
  }
  auto mn = map.node();
  auto pn = pts.node();
  return make_op_node(
      "bilinear_sample", {p, c}, std::move(out), {mn, pn},
      [mn, pn, h, w, c, p](TensorNode& o) {
        const auto& pv = pn->value;
        for (int64_t i = 0; i < p; ++i) {
          const BilinTap t = bilin_tap(pv[i * 2], pv[i * 2 + 1], h, w);
          const double* go = o.grad.data() + i * c;
          if (mn->requires_grad) {
            auto& gm = mn->grad_buf();
            for (int q = 0; q < 4; ++q) {
              double* dst = gm.data() + t.idx[q] * c;
              for (int64_t ci = 0; ci < c; ++ci) dst[ci] += t.w[q] * go[ci];
            }
          }
          if (pn->requires_grad) {
            auto& gp = pn->grad_buf();
            double dx = 0, dy = 0;
            for (int q = 0; q < 4; ++q) {
              const double* src = mn->value.data() + t.idx[q] * c;
              double dot = 0;
              for (int64_t ci = 0; ci < c; ++ci) dot += src[ci] * go[ci];
              dx += t.dwx[q] * dot;
              dy += t.dwy[q] * dot;
            }
            gp[i * 2] += dx;
            gp[i * 2 + 1] += dy;
          }
        }
      });
}

Tensor corr_features(const Tensor& map, const Tensor& feats, const Tensor& uv,
                     int radius, int stride) {
  check(map.shape().size() == 3, "corr_features: map must be [Hl,Wl,Df]");
  check(feats.shape().size() == 2, "corr_features: feats must be [N,Df]");
  check(uv.shape().size() == 2 && uv.shape()[1] == 2,
        "corr_features: uv must be [N,2]");
  check(radius >= 0 && stride >= 1, "corr_features: bad radius/stride");
  const int64_t h = map.shape()[0], w = map.shape()[1], df = map.shape()[2];
  check(feats.shape()[1] == df, "corr_features: feature width ",
        feats.shape()[1], " vs map channels ", df);
  const int64_t n = feats.shape()[0];
  check(uv.shape()[0] == n, "corr_features: uv rows ", uv.shape()[0],
        " vs feats rows ", n);
  const int64_t side = 2 * radius + 1;
  const int64_t taps = side * side;
  const double inv_stride = 1.0 / stride;

  std::vector<double> out(n * taps, 0.0);
  const auto& mv = map.data();
  const auto& fv = feats.data();
  const auto& uvv = uv.data();
  for (int64_t i = 0; i < n; ++i) {
    const double cx = uvv[i * 2] * inv_stride;
    const double cy = uvv[i * 2 + 1] * inv_stride;
    const double* f = fv.data() + i * df;
    int64_t tap = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx, ++tap) {
        const BilinTap t = bilin_tap(cx + dx, cy + dy, h, w);
        double acc = 0;
        for (int q = 0; q < 4; ++q) {
          const double* src = mv.data() + t.idx[q] * df;
          double dot = 0;
          for (int64_t ci = 0; ci < df; ++ci) dot += src[ci] * f[ci];
          acc += t.w[q] * dot;
        }
        out[i * taps + tap] = acc;
      }
    }
  }

  auto mn = map.node();
  auto fn = feats.node();
  auto un = uv.node();
  return make_op_node(
      "corr_features", {n, taps}, std::move(out), {mn, fn, un},
      [mn, fn, un, h, w, df, n, radius, taps, inv_stride](TensorNode& o) {
        const auto& uvv = un->value;
        for (int64_t i = 0; i < n; ++i) {
          const double cx = uvv[i * 2] * inv_stride;
          const double cy = uvv[i * 2 + 1] * inv_stride;
          const double* f = fn->value.data() + i * df;
          double du = 0, dv = 0;
          int64_t tap = 0;
          for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx, ++tap) {
              const double go = o.grad[i * taps + tap];
              if (go == 0.0) continue;
              const BilinTap t = bilin_tap(cx + dx, cy + dy, h, w);
              for (int q = 0; q < 4; ++q) {
                const double* src = mn->value.data() + t.idx[q] * df;
                if (fn->requires_grad) {
                  auto& gf = fn->grad_buf();
                  double* gfi = gf.data() + i * df;
                  const double s = go * t.w[q];
                  for (int64_t ci = 0; ci < df; ++ci) gfi[ci] += s * src[ci];
                }
                if (mn->requires_grad) {
                  auto& gm = mn->grad_buf();
                  double* gmq = gm.data() + t.idx[q] * df;
                  const double s = go * t.w[q];
                  for (int64_t ci = 0; ci < df; ++ci) gmq[ci] += s * f[ci];
                }
                if (un->requires_grad) {
                  double dot = 0;
                  for (int64_t ci = 0; ci < df; ++ci) dot += src[ci] * f[ci];
                  du += go * t.dwx[q] * dot;
                  dv += go * t.dwy[q] * dot;
                }
              }
            }
          }
          if (un->requires_grad) {
            auto& gu = un->grad_buf();
            gu[i * 2] += du * inv_stride;
            gu[i * 2 + 1] += dv * inv_stride;
          }
        }
      });
}

Tensor depth_corr(const Tensor& depth_map, const Tensor& log_d,
                  const Tensor& uv, int radius) {
  check(depth_map.shape().size() == 2, "depth_corr: depth map must be [H,W]");
  check(uv.shape().size() == 2 && uv.shape()[1] == 2,
        "depth_corr: uv must be [N,2]");
  const int64_t h = depth_map.shape()[0], w = depth_map.shape()[1];
  const int64_t n = uv.shape()[0];
  check(log_d.numel() == n, "depth_corr: log_d has ", log_d.numel(),
        " entries for ", n, " tracks");
  const int64_t side = 2 * radius + 1;
  const int64_t taps = side * side;

  std::vector<double> out(n * taps);
  // Sampled depths kept for the backward chain through log().
  auto sampled = std::make_shared<std::vector<double>>(n * taps);
  const auto& dv = depth_map.data();
  const auto& ldv = log_d.data();
  const auto& uvv = uv.data();
  for (int64_t i = 0; i < n; ++i) {
    int64_t tap = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx, ++tap) {
        const BilinTap t =
            bilin_tap(uvv[i * 2] + dx, uvv[i * 2 + 1] + dy, h, w);
        double s = 0;
        for (int q = 0; q < 4; ++q) s += t.w[q] * dv[t.idx[q]];
        check(s > 0, "depth_corr: non-positive sampled depth ", s,
              " at track ", i, " tap ", tap);
        (*sampled)[i * taps + tap] = s;
        out[i * taps + tap] = std::log(s) - ldv[i];
      }
    }
  }

  auto mn = depth_map.node();
  auto ln = log_d.node();
  auto un = uv.node();
  return make_op_node(
      "depth_corr", {n, taps}, std::move(out), {mn, ln, un},
      [mn, ln, un, sampled, h, w, n, radius, taps](TensorNode& o) {
        const auto& uvv = un->value;
        for (int64_t i = 0; i < n; ++i) {
          double dlogd = 0, du = 0, dvv = 0;
          int64_t tap = 0;
          for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx, ++tap) {
              const double go = o.grad[i * taps + tap];
              if (go == 0.0) continue;
              dlogd -= go;
              const double inv_s = 1.0 / (*sampled)[i * taps + tap];
              const BilinTap t =
                  bilin_tap(uvv[i * 2] + dx, uvv[i * 2 + 1] + dy, h, w);
              if (mn->requires_grad) {
                auto& gm = mn->grad_buf();
                for (int q = 0; q < 4; ++q)
                  gm[t.idx[q]] += go * inv_s * t.w[q];
              }
              if (un->requires_grad) {
                double ddx = 0, ddy = 0;
                for (int q = 0; q < 4; ++q) {
                  ddx += t.dwx[q] * mn->value[t.idx[q]];
                  ddy += t.dwy[q] * mn->value[t.idx[q]];
                }
                du += go * inv_s * ddx;
                dvv += go * inv_s * ddy;
              }
            }
          }
          if (ln->requires_grad) ln->grad_buf()[i] += dlogd;
          if (un->requires_grad) {
            auto& gu = un->grad_buf();
            gu[i * 2] += du;
            gu[i * 2 + 1] += dvv;
          }
        }
      });
}

Tensor grid_sample_taps(const Tensor& map, const Tensor& uv, int radius) {
  check(map.shape().size() == 2, "grid_sample_taps: map must be [H,W]");
  check(uv.shape().size() == 2 && uv.shape()[1] == 2,
        "grid_sample_taps: uv must be [N,2]");
  const int64_t h = map.shape()[0], w = map.shape()[1];
  const int64_t n = uv.shape()[0];
  const int64_t side = 2 * radius + 1;
  const int64_t taps = side * side;
  std::vector<double> out(n * taps);
  const auto& mv = map.data();
  const auto& uvv = uv.data();
  for (int64_t i = 0; i < n; ++i) {
    int64_t tap = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx, ++tap) {
        const BilinTap t =
            bilin_tap(uvv[i * 2] + dx, uvv[i * 2 + 1] + dy, h, w);
        double s = 0;
        for (int q = 0; q < 4; ++q) s += t.w[q] * mv[t.idx[q]];
        out[i * taps + tap] = s;
      }
    }
  }
  auto mn = map.node();
  auto un = uv.node();
  return make_op_node(
      "grid_sample_taps", {n, taps}, std::move(out), {mn, un},
      [mn, un, h, w, n, radius, taps](TensorNode& o) {
        const auto& uvv = un->value;
        for (int64_t i = 0; i < n; ++i) {
          double du = 0, dvv = 0;
          int64_t tap = 0;
          for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx, ++tap) {
              const double go = o.grad[i * taps + tap];
              if (go == 0.0) continue;
              const BilinTap t =
                  bilin_tap(uvv[i * 2] + dx, uvv[i * 2 + 1] + dy, h, w);
              if (mn->requires_grad) {
                auto& gm = mn->grad_buf();
                for (int q = 0; q < 4; ++q) gm[t.idx[q]] += go * t.w[q];
              }
              if (un->requires_grad) {
                double ddx = 0, ddy = 0;
                for (int q = 0; q < 4; ++q) {
                  ddx += t.dwx[q] * mn->value[t.idx[q]];
                  ddy += t.dwy[q] * mn->value[t.idx[q]];
                }
                du += go * ddx;
                dvv += go * ddy;
              }
            }
          }
          if (un->requires_grad) {
            auto& gu = un->grad_buf();
            gu[i * 2] += du;
            gu[i * 2 + 1] += dvv;
          }
        }
      });
}

Tensor weighted_gather(const Tensor& values, const std::vector<int64_t>& nbr,
                       const Tensor& w) {
  check(values.shape().size() == 2, "weighted_gather: values must be [N,C]");
  check(w.shape().size() == 2, "weighted_gather: weights must be [B,K]");
  const int64_t n = values.shape()[0], c = values.shape()[1];
  const int64_t bsz = w.shape()[0], k = w.shape()[1];
  check(static_cast<int64_t>(nbr.size()) == bsz * k,
        "weighted_gather: neighbor list has ", nbr.size(), " entries, want ",
        bsz * k);
  for (int64_t i : nbr)
    check(i >= 0 && i < n, "weighted_gather: index ", i,
          " out of coarse grid of ", n, " entries");
  std::vector<double> out(bsz * c, 0.0);
  const auto& vv = values.data();
  const auto& wv = w.data();
  for (int64_t b = 0; b < bsz; ++b) {
    double* dst = out.data() + b * c;
    for (int64_t j = 0; j < k; ++j) {
      const double* src = vv.data() + nbr[b * k + j] * c;
      const double wj = wv[b * k + j];
      for (int64_t ci = 0; ci < c; ++ci) dst[ci] += wj * src[ci];
    }
  }
  auto vn = values.node();
  auto wn = w.node();
  auto ix = std::make_shared<std::vector<int64_t>>(nbr);
  return make_op_node(
      "weighted_gather", {bsz, c}, std::move(out), {vn, wn},
      [vn, wn, ix, bsz, k, c](TensorNode& o) {
        for (int64_t b = 0; b < bsz; ++b) {
          const double* go = o.grad.data() + b * c;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t src_row = (*ix)[b * k + j];
            if (wn->requires_grad) {
              const double* src = vn->value.data() + src_row * c;
              double dot = 0;
              for (int64_t ci = 0; ci < c; ++ci) dot += src[ci] * go[ci];
              wn->grad_buf()[b * k + j] += dot;
            }
            if (vn->requires_grad) {
              double* dst = vn->grad_buf().data() + src_row * c;
              const double wj = wn->value[b * k + j];
              for (int64_t ci = 0; ci < c; ++ci) dst[ci] += wj * go[ci];
            }
          }
        }
      });
}

}  // namespace delta
