#include "delta/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace delta {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

namespace {

CMapM cmap(const std::vector<double>& v, int64_t r, int64_t c) {
  return CMapM(v.data(), r, c);
}
MapM mmap(std::vector<double>& v, int64_t r, int64_t c) {
  return MapM(v.data(), r, c);
}

int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

enum class BcMode { kSame, kScalar, kCol, kRow };

BcMode bc_mode(const char* op, const Tensor& a, const Tensor& b) {
  const int64_t an = a.numel(), bn = b.numel();
  if (bn == 1) return BcMode::kScalar;
  if (a.shape() == b.shape() || (an == bn && last_dim(a.shape()) == last_dim(b.shape())))
    return BcMode::kSame;
  const int64_t c = last_dim(a.shape());
  const int64_t r = an / c;
  if (bn == c && b.shape().size() <= 2) return BcMode::kCol;
  if (bn == r && b.shape().size() == 2 && b.shape()[1] == 1) return BcMode::kRow;
  fail(op, ": incompatible shapes ", shape_str(a.shape()), " vs ",
       shape_str(b.shape()));
}

template <class Fwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 double da_coeff, double db_coeff) {
  // fwd(av, bv) -> value; gradients are da_coeff and db_coeff (add/sub/..).
  const BcMode mode = bc_mode(name, a, b);
  const int64_t n = a.numel();
  const int64_t c = last_dim(a.shape());
  std::vector<double> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  switch (mode) {
    case BcMode::kSame:
      for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
      break;
    case BcMode::kScalar:
      for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[0]);
      break;
    case BcMode::kCol:
      for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % c]);
      break;
    case BcMode::kRow:
      for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i / c]);
      break;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op_node(
      name, a.shape(), std::move(out), {an, bn},
      [an, bn, mode, c, da_coeff, db_coeff](TensorNode& o) {
        const auto& g = o.grad;
        const int64_t n = o.numel();
        if (an->requires_grad) {
          auto& ga = an->grad_buf();
          for (int64_t i = 0; i < n; ++i) ga[i] += da_coeff * g[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buf();
          switch (mode) {
            case BcMode::kSame:
              for (int64_t i = 0; i < n; ++i) gb[i] += db_coeff * g[i];
              break;
            case BcMode::kScalar:
              for (int64_t i = 0; i < n; ++i) gb[0] += db_coeff * g[i];
              break;
            case BcMode::kCol:
              for (int64_t i = 0; i < n; ++i) gb[i % c] += db_coeff * g[i];
              break;
            case BcMode::kRow:
              for (int64_t i = 0; i < n; ++i) gb[i / c] += db_coeff * g[i];
              break;
          }
        }
      });
}

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd dydx_from_xy) {
  const int64_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  auto an = a.node();
  return make_op_node(name, a.shape(), std::move(out), {an},
                      [an, dydx_from_xy](TensorNode& o) {
                        if (!an->requires_grad) return;
                        auto& ga = an->grad_buf();
                        const int64_t n = o.numel();
                        for (int64_t i = 0; i < n; ++i)
                          ga[i] += o.grad[i] * dydx_from_xy(an->value[i], o.value[i]);
                      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BcMode mode = bc_mode("mul", a, b);
  const int64_t n = a.numel();
  const int64_t c = last_dim(a.shape());
  std::vector<double> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto bidx = [mode, c](int64_t i) -> int64_t {
    switch (mode) {
      case BcMode::kSame: return i;
      case BcMode::kScalar: return 0;
      case BcMode::kCol: return i % c;
      case BcMode::kRow: return i / c;
    }
    return 0;
  };
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[bidx(i)];
  auto an = a.node();
  auto bn = b.node();
  return make_op_node("mul", a.shape(), std::move(out), {an, bn},
                      [an, bn, bidx](TensorNode& o) {
                        const int64_t n = o.numel();
                        if (an->requires_grad) {
                          auto& ga = an->grad_buf();
                          for (int64_t i = 0; i < n; ++i)
                            ga[i] += o.grad[i] * bn->value[bidx(i)];
                        }
                        if (bn->requires_grad) {
                          auto& gb = bn->grad_buf();
                          for (int64_t i = 0; i < n; ++i)
                            gb[bidx(i)] += o.grad[i] * an->value[i];
                        }
                      });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op("scale", a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op("add_scalar", a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor vexp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor vlog(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor vabs(const Tensor& a) {
  return unary_op("abs", a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_op("clamp_min", a, [lo](double x) { return x > lo ? x : lo; },
                  [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor reciprocal(const Tensor& a) {
  return unary_op("reciprocal", a, [](double x) { return 1.0 / x; },
                  [](double, double y) { return -y * y; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(shape_numel(shape) == a.numel(), "reshape: ", shape_str(a.shape()),
        " -> ", shape_str(shape), " changes element count");
  auto an = a.node();
  std::vector<double> v(a.data().begin(), a.data().end());
  return make_op_node("reshape", std::move(shape), std::move(v), {an},
                      [an](TensorNode& o) {
                        auto& ga = an->grad_buf();
                        for (int64_t i = 0; i < o.numel(); ++i) ga[i] += o.grad[i];
                      });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_cols: empty input list");
  const int64_t c0 = last_dim(xs[0].shape());
  const int64_t rows = xs[0].numel() / c0;
  int64_t ctot = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  for (const auto& x : xs) {
    const int64_t c = last_dim(x.shape());
    check(x.numel() / c == rows, "concat_cols: row mismatch ",
          shape_str(x.shape()), " vs ", shape_str(xs[0].shape()));
    ctot += c;
    parents.push_back(x.node());
  }
  std::vector<double> out(rows * ctot);
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t c = last_dim(x.shape());
    const auto& v = x.data();
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * c, c, out.data() + r * ctot + off);
    off += c;
  }
  Shape oshape = xs[0].shape();
  oshape.back() = ctot;
  auto widths = std::make_shared<std::vector<int64_t>>();
  for (const auto& x : xs) widths->push_back(last_dim(x.shape()));
  return make_op_node("concat_cols", std::move(oshape), std::move(out), parents,
                      [parents, widths, rows, ctot](TensorNode& o) {
                        int64_t off = 0;
                        for (size_t i = 0; i < parents.size(); ++i) {
                          const int64_t c = (*widths)[i];
                          if (parents[i]->requires_grad) {
                            auto& g = parents[i]->grad_buf();
                            for (int64_t r = 0; r < rows; ++r)
                              for (int64_t j = 0; j < c; ++j)
                                g[r * c + j] += o.grad[r * ctot + off + j];
                          }
                          off += c;
                        }
                      });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_rows: empty input list");
  const int64_t c = last_dim(xs[0].shape());
  int64_t rtot = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  for (const auto& x : xs) {
    check(last_dim(x.shape()) == c, "concat_rows: width mismatch ",
          shape_str(x.shape()), " vs ", shape_str(xs[0].shape()));
    rtot += x.numel() / c;
    parents.push_back(x.node());
  }
  std::vector<double> out(rtot * c);
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.data().begin(), x.data().end(), out.begin() + off);
    off += x.numel();
  }
  return make_op_node("concat_rows", {rtot, c}, std::move(out), parents,
                      [parents](TensorNode& o) {
                        int64_t off = 0;
                        for (const auto& p : parents) {
                          if (p->requires_grad) {
                            auto& g = p->grad_buf();
                            for (int64_t i = 0; i < p->numel(); ++i)
                              g[i] += o.grad[off + i];
                          }
                          off += p->numel();
                        }
                      });
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t n) {
  const int64_t c = last_dim(a.shape());
  const int64_t rows = a.numel() / c;
  check(c0 >= 0 && n >= 0 && c0 + n <= c, "slice_cols: range [", c0, ",",
        c0 + n, ") out of width ", c);
  std::vector<double> out(rows * n);
  const auto& v = a.data();
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(v.data() + r * c + c0, n, out.data() + r * n);
  Shape oshape = a.shape();
  oshape.back() = n;
  auto an = a.node();
  return make_op_node("slice_cols", std::move(oshape), std::move(out), {an},
                      [an, c0, n, c, rows](TensorNode& o) {
                        auto& g = an->grad_buf();
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t j = 0; j < n; ++j)
                            g[r * c + c0 + j] += o.grad[r * n + j];
                      });
}

Tensor slice_rows(const Tensor& a, int64_t r0, int64_t n) {
  const int64_t c = last_dim(a.shape());
  const int64_t rows = a.numel() / c;
  check(r0 >= 0 && n >= 0 && r0 + n <= rows, "slice_rows: range [", r0, ",",
        r0 + n, ") out of ", rows, " rows");
  std::vector<double> out(n * c);
  std::copy_n(a.data().data() + r0 * c, n * c, out.data());
  auto an = a.node();
  return make_op_node("slice_rows", {n, c}, std::move(out), {an},
                      [an, r0, c](TensorNode& o) {
                        auto& g = an->grad_buf();
                        for (int64_t i = 0; i < o.numel(); ++i)
                          g[r0 * c + i] += o.grad[i];
                      });
}

Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx) {
  const int64_t c = last_dim(a.shape());
  const int64_t rows = a.numel() / c;
  for (int64_t i : idx)
    check(i >= 0 && i < rows, "gather_rows: index ", i, " out of ", rows);
  const int64_t n = static_cast<int64_t>(idx.size());
  std::vector<double> out(n * c);
  const auto& v = a.data();
  for (int64_t r = 0; r < n; ++r)
    std::copy_n(v.data() + idx[r] * c, c, out.data() + r * c);
  auto an = a.node();
  auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_op_node("gather_rows", {n, c}, std::move(out), {an},
                      [an, ix, c](TensorNode& o) {
                        auto& g = an->grad_buf();
                        const int64_t n = static_cast<int64_t>(ix->size());
                        for (int64_t r = 0; r < n; ++r)
                          for (int64_t j = 0; j < c; ++j)
                            g[(*ix)[r] * c + j] += o.grad[r * c + j];
                      });
}

Tensor scatter_rows(const Tensor& a, std::vector<int64_t> idx, int64_t n_rows) {
  const int64_t c = last_dim(a.shape());
  const int64_t rows = a.numel() / c;
  check(static_cast<int64_t>(idx.size()) == rows, "scatter_rows: got ",
        idx.size(), " indices for ", rows, " rows");
  for (int64_t i : idx)
    check(i >= 0 && i < n_rows, "scatter_rows: index ", i, " out of ", n_rows);
  std::vector<double> out(n_rows * c, 0.0);
  const auto& v = a.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) out[idx[r] * c + j] += v[r * c + j];
  auto an = a.node();
  auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_op_node("scatter_rows", {n_rows, c}, std::move(out), {an},
                      [an, ix, c](TensorNode& o) {
                        auto& g = an->grad_buf();
                        const int64_t rows = static_cast<int64_t>(ix->size());
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t j = 0; j < c; ++j)
                            g[r * c + j] += o.grad[(*ix)[r] * c + j];
                      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(b.shape().size() == 2, "matmul: rhs must be 2D, got ",
        shape_str(b.shape()));
  const int64_t k = b.shape()[0];
  const int64_t n = b.shape()[1];
  check(last_dim(a.shape()) == k, "matmul: inner dims differ, ",
        shape_str(a.shape()), " x ", shape_str(b.shape()));
  const int64_t m = a.numel() / k;
  std::vector<double> out(m * n);
  {
    auto A = cmap(a.node()->value, m, k);
    auto B = cmap(b.node()->value, k, n);
    mmap(out, m, n).noalias() = A * B;
  }
  Shape oshape = a.shape();
  oshape.back() = n;
  auto an = a.node();
  auto bn = b.node();
  return make_op_node("matmul", std::move(oshape), std::move(out), {an, bn},
                      [an, bn, m, k, n](TensorNode& o) {
                        auto G = cmap(o.grad, m, n);
                        if (an->requires_grad) {
                          auto B = cmap(bn->value, k, n);
                          mmap(an->grad_buf(), m, k).noalias() += G * B.transpose();
                        }
                        if (bn->requires_grad) {
                          auto A = cmap(an->value, m, k);
                          mmap(bn->grad_buf(), k, n).noalias() += A.transpose() * G;
                        }
                      });
}

Tensor softmax(const Tensor& a) {
  const int64_t c = last_dim(a.shape());
  const int64_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  const auto& v = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * c;
    double* y = out.data() + r * c;
    double mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0;
    for (int64_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < c; ++j) y[j] *= inv;
  }
  auto an = a.node();
  return make_op_node("softmax", a.shape(), std::move(out), {an},
                      [an, rows, c](TensorNode& o) {
                        auto& g = an->grad_buf();
                        for (int64_t r = 0; r < rows; ++r) {
                          const double* y = o.value.data() + r * c;
                          const double* dy = o.grad.data() + r * c;
                          double dot = 0;
                          for (int64_t j = 0; j < c; ++j) dot += y[j] * dy[j];
                          for (int64_t j = 0; j < c; ++j)
                            g[r * c + j] += y[j] * (dy[j] - dot);
                        }
                      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int64_t c = last_dim(x.shape());
  check(gamma.numel() == c && beta.numel() == c, "layer_norm: gain/bias size ",
        gamma.numel(), "/", beta.numel(), " vs width ", c);
  const int64_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * c;
    double mean = 0;
    for (int64_t j = 0; j < c; ++j) mean += p[j];
    mean /= c;
    double var = 0;
    for (int64_t j = 0; j < c; ++j) var += (p[j] - mean) * (p[j] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (p[j] - mean) * inv;
      (*xhat)[r * c + j] = xh;
      out[r * c + j] = xh * gv[j] + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op_node(
      "layer_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat, inv_std, rows, c](TensorNode& o) {
        if (gn->requires_grad) {
          auto& gg = gn->grad_buf();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j)
              gg[j] += o.grad[r * c + j] * (*xhat)[r * c + j];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buf();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) gb[j] += o.grad[r * c + j];
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_buf();
          for (int64_t r = 0; r < rows; ++r) {
            const double* dy = o.grad.data() + r * c;
            const double* xh = xhat->data() + r * c;
            double m1 = 0, m2 = 0;
            for (int64_t j = 0; j < c; ++j) {
              const double dxh = dy[j] * gn->value[j];
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= c;
            m2 /= c;
            const double inv = (*inv_std)[r];
            for (int64_t j = 0; j < c; ++j) {
              const double dxh = dy[j] * gn->value[j];
              gx[r * c + j] += inv * (dxh - m1 - xh[j] * m2);
            }
          }
        }
      });
}

Tensor sum_all(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op_node("sum_all", {1}, {s}, {an}, [an](TensorNode& o) {
    auto& g = an->grad_buf();
    for (auto& gi : g) gi += o.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  const double invn = 1.0 / static_cast<double>(a.numel());
  double s = 0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op_node("mean_all", {1}, {s * invn}, {an},
                      [an, invn](TensorNode& o) {
                        auto& g = an->grad_buf();
                        for (auto& gi : g) gi += o.grad[0] * invn;
                      });
}

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  check(x.numel() == mask.numel(), "masked_mean: size mismatch ",
        shape_str(x.shape()), " vs ", shape_str(mask.shape()));
  double s = 0, cnt = 0;
  const auto& xv = x.data();
  const auto& mv = mask.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    s += xv[i] * mv[i];
    cnt += mv[i];
  }
  check(cnt > 0, "masked_mean: mask selects nothing");
  auto xn = x.node();
  auto mn = mask.node();
  const double inv = 1.0 / cnt;
  return make_op_node("masked_mean", {1}, {s * inv}, {xn, mn},
                      [xn, mn, inv](TensorNode& o) {
                        if (!xn->requires_grad) return;
                        auto& g = xn->grad_buf();
                        for (int64_t i = 0; i < xn->numel(); ++i)
                          g[i] += o.grad[0] * inv * mn->value[i];
                      });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  check(logits.numel() == targets.numel(), "bce_with_logits: size mismatch ",
        shape_str(logits.shape()), " vs ", shape_str(targets.shape()));
  const int64_t n = logits.numel();
  std::vector<double> out(n);
  const auto& lv = logits.data();
  const auto& tv = targets.data();
  for (int64_t i = 0; i < n; ++i) {
    const double l = lv[i];
    out[i] = std::max(l, 0.0) - l * tv[i] + std::log1p(std::exp(-std::fabs(l)));
  }
  auto ln = logits.node();
  auto tn = targets.node();
  return make_op_node("bce_with_logits", logits.shape(), std::move(out),
                      {ln, tn}, [ln, tn](TensorNode& o) {
                        if (!ln->requires_grad) return;
                        auto& g = ln->grad_buf();
                        for (int64_t i = 0; i < o.numel(); ++i) {
                          const double l = ln->value[i];
                          const double sig = 1.0 / (1.0 + std::exp(-l));
                          g[i] += o.grad[i] * (sig - tn->value[i]);
                        }
                      });
}

Tensor sin_embed(const Tensor& x, int n_freq, double base_freq) {
  check(n_freq >= 0, "sin_embed: n_freq must be >= 0");
  const int64_t c = last_dim(x.shape());
  const int64_t rows = x.numel() / c;
  const int64_t w = 2 * n_freq + 1;
  std::vector<double> out(rows * c * w);
  const auto& xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) {
      const double s = xv[r * c + j];
      double* y = out.data() + (r * c + j) * w;
      y[0] = s;
      double f = base_freq;
      for (int q = 0; q < n_freq; ++q) {
        y[1 + 2 * q] = std::sin(f * s);
        y[2 + 2 * q] = std::cos(f * s);
        f *= 2.0;
      }
    }
  }
  Shape oshape = x.shape();
  oshape.back() = c * w;
  auto xn = x.node();
  return make_op_node(
      "sin_embed", std::move(oshape), std::move(out), {xn},
      [xn, n_freq, base_freq, w](TensorNode& o) {
        auto& g = xn->grad_buf();
        const int64_t n_in = xn->numel();
        for (int64_t i = 0; i < n_in; ++i) {
          const double* y = o.value.data() + i * w;
          const double* dy = o.grad.data() + i * w;
          double ds = dy[0];
          double f = base_freq;
          for (int q = 0; q < n_freq; ++q) {
            // d sin(fs)/ds = f cos(fs);  d cos(fs)/ds = -f sin(fs)
            ds += dy[1 + 2 * q] * f * y[2 + 2 * q];
            ds -= dy[2 + 2 * q] * f * y[1 + 2 * q];
            f *= 2.0;
          }
          g[i] += ds;
        }
      });
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts) {
  // Analytic pass on fresh leaves.
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tensor t = Tensor::from_data(in.shape(),
                                 {in.data().begin(), in.data().end()});
    t.set_requires_grad(true);
    leaves.push_back(t);
  }
  Tensor y = f(leaves);
  check(y.numel() == 1, "grad_check: f must be scalar-valued");
  check(std::isfinite(y.item()), "grad_check: f(x) is not finite");
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.numel(), 0.0);
  }

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tensor r = f(xs);
    const double v = r.item();
    check(std::isfinite(v), "grad_check: perturbed f(x) is not finite");
    return v;
  };

  double max_err = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    std::vector<int64_t> coords;
    const int64_t numel = inputs[i].numel();
    if (opts.max_coords_per_input >= 0 && numel > opts.max_coords_per_input) {
      Rng rng(opts.select_seed + 0x7f4a7c15u * (i + 1));
      std::vector<int64_t> all(numel);
      for (int64_t j = 0; j < numel; ++j) all[j] = j;
      for (int j = 0; j < opts.max_coords_per_input; ++j) {
        const int64_t pick = j + rng.uniform_int(numel - j);
        std::swap(all[j], all[pick]);
        coords.push_back(all[j]);
      }
    } else {
      coords.resize(numel);
      for (int64_t j = 0; j < numel; ++j) coords[j] = j;
    }
    for (int64_t coord : coords) {
      std::vector<Tensor> xs;
      for (const auto& in : inputs)
        xs.push_back(Tensor::from_data(in.shape(),
                                       {in.data().begin(), in.data().end()}));
      double* slot = &xs[i].raw()[coord];
      const double base = *slot;
      *slot = base + opts.eps;
      const double fp = eval(xs);
      *slot = base - opts.eps;
      const double fm = eval(xs);
      *slot = base;
      const double fd = (fp - fm) / (2.0 * opts.eps);
      const double an = analytic[i][coord];
      const double err =
          std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1.0});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace delta
