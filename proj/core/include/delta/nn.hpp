#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "delta/ops.hpp"
#include "delta/tensor.hpp"

namespace delta {

/// Named trainable tensors in registration order. Registration order is the
/// optimizer iteration order, so identical configs give identical runs.
class ParamStore {
 public:
  Tensor param(const std::string& name, Shape shape,
               std::vector<double> init) {
    check(!index_.count(name), "ParamStore: duplicate parameter '", name, "'");
    Tensor t = Tensor::from_data(std::move(shape), std::move(init));
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown parameter '", name, "'");
    return params_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return params_;
  }
  size_t size() const { return params_.size(); }
  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  /// Overwrites values by name-aligned position; shapes must match.
  void copy_values_from(const ParamStore& other) {
    check(other.size() == size(), "ParamStore: size mismatch in copy (",
          other.size(), " vs ", size(), ")");
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& [name, t] = params_[i];
      const auto& [oname, ot] = other.params_[i];
      check(name == oname && t.shape() == ot.shape(),
            "ParamStore: parameter mismatch at ", name, " vs ", oname);
      std::copy(ot.data().begin(), ot.data().end(), t.raw().begin());
    }
  }

  /// Accumulates another store's gradients into this one, fixed order.
  void add_grads_from(const ParamStore& other, double scale) {
    check(other.size() == size(), "ParamStore: size mismatch in grad merge");
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_[i].second;
      const auto& ot = other.params_[i].second;
      if (!ot.has_grad()) continue;
      auto g = ot.grad();
      t.zero_grad();  // ensure allocated
      auto* node = t.node().get();
      auto& dst = node->grad_buf();
      for (int64_t j = 0; j < t.numel(); ++j) dst[j] += scale * g[j];
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Initializers.
// ---------------------------------------------------------------------------
inline std::vector<double> init_zeros(int64_t n) {
  return std::vector<double>(n, 0.0);
}

inline std::vector<double> init_normal(int64_t n, Rng& rng, double std) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, std);
  return v;
}

/// Xavier-uniform for a [fan_in, fan_out] weight.
inline std::vector<double> init_xavier(int64_t fan_in, int64_t fan_out,
                                       Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-a, a);
  return v;
}

// ---------------------------------------------------------------------------
// Layers.
// ---------------------------------------------------------------------------
struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
         Rng& rng, double gain = 1.0) {
    w = ps.param(prefix + ".w", {in, out}, init_xavier(in, out, rng, gain));
    b = ps.param(prefix + ".b", {out}, init_zeros(out));
  }
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct LayerNormLayer {
  Tensor g, b;
  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& ps, const std::string& prefix, int64_t width) {
    g = ps.param(prefix + ".g", {width}, std::vector<double>(width, 1.0));
    b = ps.param(prefix + ".b", {width}, init_zeros(width));
  }
  Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
};

struct MlpBlock {
  Linear fc1, fc2;
  MlpBlock() = default;
  MlpBlock(ParamStore& ps, const std::string& prefix, int64_t width,
           int64_t hidden, Rng& rng)
      : fc1(ps, prefix + ".fc1", width, hidden, rng),
        fc2(ps, prefix + ".fc2", hidden, width, rng) {}
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

/// Multi-head attention with learned projections around the audited
/// attention kernel. Queries and keys/values may come from different
/// token sets (cross attention).
struct MhaProj {
  Linear wq, wk, wv, wo;
  int heads = 1;
  MhaProj() = default;
  MhaProj(ParamStore& ps, const std::string& prefix, int64_t width,
          int n_heads, Rng& rng)
      : wq(ps, prefix + ".wq", width, width, rng),
        wk(ps, prefix + ".wk", width, width, rng),
        wv(ps, prefix + ".wv", width, width, rng),
        wo(ps, prefix + ".wo", width, width, rng),
        heads(n_heads) {}

  Tensor operator()(const Tensor& q_tokens, const Tensor& kv_tokens,
                    int64_t batch, MacCategory category,
                    const Tensor* bias = nullptr) const {
    Tensor q = wq(q_tokens);
    Tensor k = wk(kv_tokens);
    Tensor v = wv(kv_tokens);
    return wo(attention(q, k, v, batch, heads, bias, category));
  }
};

struct ConvLayer {
  Tensor w, b;
  int stride = 1, pad = 1;
  ConvLayer() = default;
  ConvLayer(ParamStore& ps, const std::string& prefix, int64_t kh, int64_t kw,
            int64_t cin, int64_t cout, int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    const double a = std::sqrt(6.0 / static_cast<double>(kh * kw * cin + cout));
    std::vector<double> wv(kh * kw * cin * cout);
    for (auto& x : wv) x = rng.uniform(-a, a);
    w = ps.param(prefix + ".w", {kh, kw, cin, cout}, std::move(wv));
    b = ps.param(prefix + ".b", {cout}, init_zeros(cout));
  }
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

}  // namespace delta
