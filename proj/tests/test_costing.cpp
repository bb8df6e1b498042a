#include <doctest.h>

#include "delta/costing.hpp"

using namespace delta;

TEST_CASE("closed forms reproduce the worked example") {
  // T=8, K=16, N'=1200, M=108.
  AttentionLayout layout{16, 108, 6};
  CHECK(predicted_spatial_cost(CostVariant::kCoTrackerVirtual, 8, 1200,
                               layout) == 310272);
  CHECK(predicted_spatial_cost(CostVariant::kOursGlobal, 8, 1200, layout) ==
        184320);
}

TEST_CASE("hand count: T=1, K=1, N'=1, M=1 gives 5") {
  AttentionLayout layout{1, 1, 1};
  CHECK(predicted_spatial_cost(CostVariant::kOursGlobal, 1, 1, layout) == 5);
}

TEST_CASE("measured counts equal the closed forms on the worked example") {
  AttentionLayout layout{16, 108, 6};
  CostReport rep = attention_cost(layout, 8, 1200,
                                  {CostVariant::kFull,
                                   CostVariant::kCoTrackerVirtual,
                                   CostVariant::kOursGlobal});
  for (const auto& e : rep.entries) {
    INFO(cost_variant_name(e.variant));
    CHECK(e.measured_spatial == e.predicted_spatial);
    CHECK(e.measured_total == e.predicted_total);
  }
  CHECK(rep.entries[0].predicted_spatial == 8 * 1200 * 1200);
  CHECK(rep.entries[1].predicted_spatial == 310272);
  CHECK(rep.entries[2].predicted_spatial == 184320);
}

TEST_CASE("property sweep: random layouts match exactly for every variant") {
  Rng rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    const int64_t t_len = 2 + rng.uniform_int(6);
    const int64_t k = 1 + rng.uniform_int(8);
    const int64_t m = 1 + rng.uniform_int(24);
    const int p = 1 + static_cast<int>(rng.uniform_int(3));
    // Local patches exact: pick N' as a multiple of p^2.
    const int64_t n = (1 + rng.uniform_int(12)) * p * p;
    AttentionLayout layout{k, m, p};
    CostReport rep = attention_cost(
        layout, t_len, n,
        {CostVariant::kFull, CostVariant::kCoTrackerVirtual,
         CostVariant::kOursGlobal, CostVariant::kOursGlobalLocal});
    for (const auto& e : rep.entries) {
      INFO(cost_variant_name(e.variant), " T=", t_len, " K=", k, " M=", m,
           " N=", n, " p=", p);
      CHECK(e.measured_spatial == e.predicted_spatial);
      CHECK(e.measured_total == e.predicted_total);
    }
    // With full patches the local term is exactly T*N*L.
    const int64_t local = predicted_spatial_cost(CostVariant::kOursGlobalLocal,
                                                 t_len, n, layout) -
                          predicted_spatial_cost(CostVariant::kOursGlobal,
                                                 t_len, n, layout);
    CHECK(local == t_len * n * p * p);
  }
}

TEST_CASE("non-divisible patch counts still match via the exact patch sum") {
  AttentionLayout layout{4, 3, 3};  // L = 9, N' = 20 -> patches 9+9+2
  CostReport rep =
      attention_cost(layout, 5, 20, {CostVariant::kOursGlobalLocal});
  CHECK(rep.entries[0].measured_spatial == rep.entries[0].predicted_spatial);
}

TEST_CASE("M == N': anchor attention equals cotracker plus the extra gather") {
  // With M = N' the formulas differ by exactly T*K*M (the anchors are
  // appended as extra tokens, so tracks<-virtual covers N'+M rows).
  AttentionLayout layout{8, 64, 2};
  const int64_t t_len = 4, n = 64;
  CostReport rep = attention_cost(layout, t_len, n,
                                  {CostVariant::kCoTrackerVirtual,
                                   CostVariant::kOursGlobal});
  const auto& cot = rep.entries[0];
  const auto& ours = rep.entries[1];
  CHECK(cot.measured_spatial == cot.predicted_spatial);
  CHECK(ours.measured_spatial == ours.predicted_spatial);
  CHECK(ours.predicted_spatial - cot.predicted_spatial ==
        t_len * layout.k_virtual * layout.m_anchors);
}

TEST_CASE("ours_global scales affinely in N'; full scales quadratically") {
  AttentionLayout layout{16, 16, 4};
  std::vector<int64_t> ns;
  for (int64_t n = 64; n <= 2048; n *= 2) ns.push_back(n);

  auto rows_ours = cost_sweep(CostVariant::kOursGlobal, layout, 8, ns);
  std::vector<double> xs, ys;
  for (const auto& r : rows_ours) {
    xs.push_back(static_cast<double>(r.n_prime));
    ys.push_back(static_cast<double>(r.measured));
  }
  CHECK(polyfit_max_residual(xs, ys, 1) < 1.0);

  auto rows_full = cost_sweep(CostVariant::kFull, layout, 8, ns);
  ys.clear();
  for (const auto& r : rows_full) ys.push_back(static_cast<double>(r.measured));
  CHECK(polyfit_max_residual(xs, ys, 2) < 1.0);
  CHECK(polyfit_max_residual(xs, ys, 1) > 1.0);  // genuinely quadratic
}

TEST_CASE("full variant beyond the configured cap fails") {
  EncoderConfig enc;
  enc.d_f = 2;
  enc.strides = {1};
  enc.res_blocks = {0};
  TrackerConfig tc;
  tc.hidden = 4;
  tc.heads = 1;
  tc.blocks = 1;
  tc.mlp_ratio = 1;
  tc.variant = SpatialVariant::kFull;
  tc.local_attention = false;
  tc.feature_stride = 1;
  tc.full_attention_cap = 64;
  ParamStore ps;
  Rng rng(1);
  Tracker tracker(tc, enc, ps, rng);
  std::vector<double> xv(2 * 128 * 4, 0.1);
  Tracker::BlockIo io;
  io.x = Tensor::from_data({2 * 128, 4}, xv);
  TrackGroups groups;
  CHECK_THROWS_AS(tracker.apply_block(0, io, 2, 128, groups), Error);
}
