#pragma once

#include <vector>

#include "delta/nn.hpp"

namespace delta {

struct EncoderConfig {
  int64_t d_f = 32;                        // channels per pyramid level
  std::vector<int> strides = {2, 4, 8};    // strictly increasing
  std::vector<int> res_blocks = {1, 1, 0}; // residual blocks per stage

  void validate() const;
  int max_stride() const { return strides.back(); }
};

struct PyramidLevel {
  int stride = 1;
  Tensor map;  // [H/stride, W/stride, d_f]
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;
};

/// Residual conv backbone emitting a feature pyramid, one map per stride.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, ParamStore& ps, Rng& rng);

  FeaturePyramid extract(const Tensor& frame) const;  // frame: [H, W, 3]
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct ResBlock {
    ConvLayer c1, c2;
    LayerNormLayer n1, n2;
  };
  struct Stage {
    bool has_down = false;
    ConvLayer down;
    LayerNormLayer down_ln;
    std::vector<ResBlock> blocks;
    ConvLayer proj;
  };
  EncoderConfig cfg_;
  ConvLayer stem_;
  LayerNormLayer stem_ln_;
  std::vector<Stage> stages_;
};

/// Correlation features against every pyramid level, concatenated:
/// levels * (2*radius+1)^2 dot products per track.
Tensor pyramid_correlation(const FeaturePyramid& pyr, const Tensor& track_feat,
                           const Tensor& uv, int radius);

/// Level whose stride equals `stride` (the track-feature source).
const PyramidLevel& pyramid_level_at(const FeaturePyramid& pyr, int stride);

}  // namespace delta
