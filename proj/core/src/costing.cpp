#include "delta/costing.hpp"

#include <Eigen/Dense>

namespace delta {

const char* cost_variant_name(CostVariant v) {
  switch (v) {
    case CostVariant::kFull: return "full";
    case CostVariant::kCoTrackerVirtual: return "cotracker_virtual";
    case CostVariant::kOursGlobal: return "ours_global";
    case CostVariant::kOursGlobalLocal: return "ours_global_local";
  }
  return "?";
}

CostVariant cost_variant_from(const std::string& s) {
  if (s == "full") return CostVariant::kFull;
  if (s == "cotracker_virtual" || s == "cotracker")
    return CostVariant::kCoTrackerVirtual;
  if (s == "ours_global" || s == "ours") return CostVariant::kOursGlobal;
  if (s == "ours_global_local") return CostVariant::kOursGlobalLocal;
  fail("unknown cost variant '", s, "'");
}

void AttentionLayout::validate() const {
  check(k_virtual >= 1, "AttentionLayout: K must be >= 1");
  check(m_anchors >= 1, "AttentionLayout: M must be >= 1");
  check(patch_size >= 1, "AttentionLayout: patch size must be >= 1");
}

namespace {

// Local patches as consecutive index chunks; exact even when the patch
// count does not divide N.
std::vector<std::vector<int64_t>> chunk_patches(int64_t n, int64_t l) {
  std::vector<std::vector<int64_t>> patches;
  for (int64_t start = 0; start < n; start += l) {
    std::vector<int64_t> p;
    for (int64_t i = start; i < std::min(start + l, n); ++i) p.push_back(i);
    patches.push_back(std::move(p));
  }
  return patches;
}

int64_t local_pairs(int64_t t_len, int64_t n, int64_t l) {
  int64_t per_frame = 0;
  for (int64_t start = 0; start < n; start += l) {
    const int64_t sz = std::min(l, n - start);
    per_frame += sz * sz;
  }
  return t_len * per_frame;
}

}  // namespace

int64_t predicted_spatial_cost(CostVariant v, int64_t t_len, int64_t n_prime,
                               const AttentionLayout& layout) {
  const int64_t k = layout.k_virtual;
  const int64_t m = layout.m_anchors;
  const int64_t l = static_cast<int64_t>(layout.patch_size) * layout.patch_size;
  switch (v) {
    case CostVariant::kFull:
      return t_len * n_prime * n_prime;
    case CostVariant::kCoTrackerVirtual:
      return 2 * t_len * k * n_prime + t_len * k * k + k * t_len * t_len;
    case CostVariant::kOursGlobal:
      return t_len * k * (n_prime + 2 * m) + t_len * k * k +
             k * t_len * t_len;
    case CostVariant::kOursGlobalLocal:
      return predicted_spatial_cost(CostVariant::kOursGlobal, t_len, n_prime,
                                    layout) +
             local_pairs(t_len, n_prime, l);
  }
  fail("unreachable cost variant");
}

int64_t predicted_total_cost(CostVariant v, int64_t t_len, int64_t n_prime,
                             const AttentionLayout& layout) {
  const bool appends_anchors =
      v == CostVariant::kOursGlobal || v == CostVariant::kOursGlobalLocal;
  const int64_t n_real = n_prime + (appends_anchors ? layout.m_anchors : 0);
  return predicted_spatial_cost(v, t_len, n_prime, layout) +
         n_real * t_len * t_len;
}

CostReport attention_cost(const AttentionLayout& layout, int64_t t_len,
                          int64_t n_prime,
                          const std::vector<CostVariant>& variants) {
  layout.validate();
  check(t_len >= 1 && n_prime >= 1, "attention_cost: bad T/N (", t_len, "/",
        n_prime, ")");

  CostReport report;
  report.t_len = t_len;
  report.n_prime = n_prime;
  report.layout = layout;

  for (CostVariant v : variants) {
    // A minimal but real transformer block; channel width does not affect
    // the pair counts.
    EncoderConfig enc;
    enc.d_f = 2;
    enc.strides = {1};
    enc.res_blocks = {0};
    TrackerConfig tc;
    tc.blocks = 1;
    tc.heads = 1;
    tc.hidden = 4;
    tc.mlp_ratio = 1;
    tc.n_freq = 1;
    tc.corr_radius = 0;
    tc.k_virtual = layout.k_virtual;
    tc.patch_size = layout.patch_size;
    tc.feature_stride = 1;
    tc.window = std::max<int64_t>(t_len, 2);
    tc.overlap = 1;
    tc.full_attention_cap = std::max<int64_t>(n_prime, 4096);
    tc.local_attention = v == CostVariant::kOursGlobalLocal;
    switch (v) {
      case CostVariant::kFull:
        tc.variant = SpatialVariant::kFull;
        break;
      case CostVariant::kCoTrackerVirtual:
        tc.variant = SpatialVariant::kCoTracker;
        break;
      case CostVariant::kOursGlobal:
      case CostVariant::kOursGlobalLocal:
        tc.variant = SpatialVariant::kOurs;
        break;
    }

    ParamStore ps;
    Rng rng(7);
    Tracker tracker(tc, enc, ps, rng);

    const bool appends_anchors = tc.variant == SpatialVariant::kOurs;
    const int64_t n_tokens = n_prime + (appends_anchors ? layout.m_anchors : 0);

    TrackGroups groups;
    if (appends_anchors)
      for (int64_t a = 0; a < layout.m_anchors; ++a)
        groups.anchors.push_back(n_prime + a);
    if (tc.local_attention)
      groups.patches = chunk_patches(
          n_prime, static_cast<int64_t>(layout.patch_size) * layout.patch_size);

    // Synthetic hidden tokens; values are irrelevant to the counters.
    std::vector<double> xv(t_len * n_tokens * tc.hidden);
    Rng vr(13);
    for (auto& x : xv) x = vr.normal();
    Tracker::BlockIo io;
    io.x = Tensor::from_data({t_len * n_tokens, tc.hidden}, std::move(xv));
    if (tc.variant == SpatialVariant::kCoTracker ||
        tc.variant == SpatialVariant::kOurs)
      io.v = tracker.make_virtual_tokens(t_len).v;

    NoGradGuard no_grad;
    MacCounterScope scope;
    tracker.apply_block(0, io, t_len, n_tokens, groups);
    const MacCounters& c = mac_counters();

    CostEntry e;
    e.variant = v;
    e.predicted_spatial = predicted_spatial_cost(v, t_len, n_prime, layout);
    e.measured_spatial =
        c.at(MacCategory::kSpatial) + c.at(MacCategory::kTemporalVirtual);
    e.predicted_total = predicted_total_cost(v, t_len, n_prime, layout);
    e.measured_total = e.measured_spatial + c.at(MacCategory::kTemporalReal);
    report.entries.push_back(e);
  }
  return report;
}

std::vector<CostSweepRow> cost_sweep(CostVariant v,
                                     const AttentionLayout& layout,
                                     int64_t t_len,
                                     const std::vector<int64_t>& n_values) {
  std::vector<CostSweepRow> rows;
  for (int64_t n : n_values) {
    CostReport r = attention_cost(layout, t_len, n, {v});
    rows.push_back({n, r.entries[0].measured_spatial,
                    r.entries[0].predicted_spatial});
  }
  return rows;
}

double polyfit_max_residual(const std::vector<double>& xs,
                            const std::vector<double>& ys, int degree) {
  check(xs.size() == ys.size() && !xs.empty(), "polyfit: bad inputs");
  check(degree >= 0 && static_cast<size_t>(degree) < xs.size(),
        "polyfit: degree ", degree, " with ", xs.size(), " points");
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const int n = static_cast<int>(xs.size());
  LMat a(n, degree + 1);
  LVec b(n);
  for (int i = 0; i < n; ++i) {
    long double p = 1.0L;
    for (int d = 0; d <= degree; ++d) {
      a(i, d) = p;
      p *= static_cast<long double>(xs[i]);
    }
    b(i) = static_cast<long double>(ys[i]);
  }
  LVec coef = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  LVec resid = a * coef - b;
  long double mx = 0;
  for (int i = 0; i < n; ++i)
    mx = std::max<long double>(mx, std::fabs(static_cast<double>(resid(i))));
  return static_cast<double>(mx);
}

}  // namespace delta
