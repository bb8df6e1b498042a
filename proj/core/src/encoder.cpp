#include "delta/encoder.hpp"

namespace delta {

void EncoderConfig::validate() const {
  check(d_f >= 1, "EncoderConfig: d_f must be positive");
  check(!strides.empty(), "EncoderConfig: no pyramid strides");
  check(res_blocks.size() == strides.size(),
        "EncoderConfig: res_blocks has ", res_blocks.size(), " stages for ",
        strides.size(), " strides");
  for (size_t i = 0; i < strides.size(); ++i) {
    check(strides[i] >= 1, "EncoderConfig: bad stride ", strides[i]);
    if (i) {
      check(strides[i] > strides[i - 1],
            "EncoderConfig: strides must be strictly increasing");
      check(strides[i] % strides[i - 1] == 0,
            "EncoderConfig: stride ", strides[i], " not a multiple of ",
            strides[i - 1]);
    }
  }
}

Encoder::Encoder(const EncoderConfig& cfg, ParamStore& ps, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int64_t c = cfg_.d_f;
  stem_ = ConvLayer(ps, "encoder.stem", 3, 3, 3, c, cfg_.strides[0], 1, rng);
  stem_ln_ = LayerNormLayer(ps, "encoder.stem_ln", c);
  for (size_t s = 0; s < cfg_.strides.size(); ++s) {
    Stage stage;
    const std::string sp = "encoder.stage" + std::to_string(s);
    if (s > 0) {
      stage.has_down = true;
      const int ds = cfg_.strides[s] / cfg_.strides[s - 1];
      stage.down = ConvLayer(ps, sp + ".down", 3, 3, c, c, ds, 1, rng);
      stage.down_ln = LayerNormLayer(ps, sp + ".down_ln", c);
    }
    for (int b = 0; b < cfg_.res_blocks[s]; ++b) {
      ResBlock rb;
      const std::string bp = sp + ".res" + std::to_string(b);
      rb.c1 = ConvLayer(ps, bp + ".c1", 3, 3, c, c, 1, 1, rng);
      rb.n1 = LayerNormLayer(ps, bp + ".n1", c);
      rb.c2 = ConvLayer(ps, bp + ".c2", 3, 3, c, c, 1, 1, rng);
      rb.n2 = LayerNormLayer(ps, bp + ".n2", c);
      stage.blocks.push_back(std::move(rb));
    }
    stage.proj = ConvLayer(ps, sp + ".proj", 1, 1, c, cfg_.d_f, 1, 0, rng);
    stages_.push_back(std::move(stage));
  }
}

FeaturePyramid Encoder::extract(const Tensor& frame) const {
  check(frame.shape().size() == 3 && frame.shape()[2] == 3,
        "Encoder::extract: frame must be [H,W,3], got ",
        shape_str(frame.shape()));
  const int64_t h = frame.shape()[0], w = frame.shape()[1];
  const int ms = cfg_.max_stride();
  check(h % ms == 0 && w % ms == 0, "Encoder::extract: frame ", h, "x", w,
        " must be divisible by the largest stride ", ms);

  Tensor x = relu(stem_ln_(stem_(frame)));
  FeaturePyramid pyr;
  for (size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    if (stage.has_down) x = relu(stage.down_ln(stage.down(x)));
    for (const auto& rb : stage.blocks) {
      Tensor y = rb.c2(relu(rb.n1(rb.c1(x))));
      x = relu(add(x, rb.n2(y)));
    }
    PyramidLevel level;
    level.stride = cfg_.strides[s];
    level.map = stage.proj(x);
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

Tensor pyramid_correlation(const FeaturePyramid& pyr, const Tensor& track_feat,
                           const Tensor& uv, int radius) {
  check(!pyr.levels.empty(), "pyramid_correlation: empty pyramid");
  std::vector<Tensor> per_level;
  per_level.reserve(pyr.levels.size());
  for (const auto& level : pyr.levels)
    per_level.push_back(
        corr_features(level.map, track_feat, uv, radius, level.stride));
  return per_level.size() == 1 ? per_level[0] : concat_cols(per_level);
}

const PyramidLevel& pyramid_level_at(const FeaturePyramid& pyr, int stride) {
  for (const auto& level : pyr.levels)
    if (level.stride == stride) return level;
  fail("pyramid has no level with stride ", stride);
}

}  // namespace delta
