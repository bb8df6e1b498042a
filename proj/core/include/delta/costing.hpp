#pragma once

#include <string>
#include <vector>

#include "delta/tracker.hpp"

namespace delta {

enum class CostVariant {
  kFull,              // per-frame self-attention over all tracks: T*N^2
  kCoTrackerVirtual,  // 2*T*K*N + T*K^2 + K*T^2
  kOursGlobal,        // T*K*(N+2M) + T*K^2 + K*T^2 (anchor tracks appended)
  kOursGlobalLocal,   // ours_global + T*N*L dense local attention
};

const char* cost_variant_name(CostVariant v);
CostVariant cost_variant_from(const std::string& s);

struct AttentionLayout {
  int64_t k_virtual = 16;
  int64_t m_anchors = 16;
  int patch_size = 4;  // L = patch_size^2 tracks per local patch

  void validate() const;
};

struct CostEntry {
  CostVariant variant = CostVariant::kFull;
  // "spatial" follows the closed forms: per-frame spatial attention plus
  // the virtual-track temporal term K*T^2 where virtual tracks exist.
  int64_t predicted_spatial = 0;
  int64_t measured_spatial = 0;
  // "total" additionally counts the real-track temporal attention N*T^2.
  int64_t predicted_total = 0;
  int64_t measured_total = 0;
};

struct CostReport {
  int64_t t_len = 0;
  int64_t n_prime = 0;
  AttentionLayout layout;
  std::vector<CostEntry> entries;
};

/// Closed-form spatial score-pair count (one MAC unit per Q-K pair).
int64_t predicted_spatial_cost(CostVariant v, int64_t t_len, int64_t n_prime,
                               const AttentionLayout& layout);
int64_t predicted_total_cost(CostVariant v, int64_t t_len, int64_t n_prime,
                             const AttentionLayout& layout);

/// Runs one real transformer block per variant with the instrumented
/// attention kernel and compares the counted Q-K pairs to the closed forms.
CostReport attention_cost(const AttentionLayout& layout, int64_t t_len,
                          int64_t n_prime,
                          const std::vector<CostVariant>& variants);

struct CostSweepRow {
  int64_t n_prime = 0;
  int64_t measured = 0;
  int64_t predicted = 0;
};

std::vector<CostSweepRow> cost_sweep(CostVariant v,
                                     const AttentionLayout& layout,
                                     int64_t t_len,
                                     const std::vector<int64_t>& n_values);

/// Max absolute residual of an unweighted least-squares polynomial fit of
/// the given degree; evaluated in long double.
double polyfit_max_residual(const std::vector<double>& xs,
                            const std::vector<double>& ys, int degree);

}  // namespace delta
