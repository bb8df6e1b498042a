#include <Eigen/Dense>

#include "delta/ops.hpp"

namespace delta {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

struct ConvDims {
  int64_t h, w, cin, kh, kw, cout, ho, wo;
  int stride, pad;
};

RowMat im2col(const double* x, const ConvDims& dm) {
  RowMat cols(dm.ho * dm.wo, dm.kh * dm.kw * dm.cin);
  for (int64_t oy = 0; oy < dm.ho; ++oy) {
    for (int64_t ox = 0; ox < dm.wo; ++ox) {
      double* row = cols.data() + (oy * dm.wo + ox) * cols.cols();
      int64_t c = 0;
      for (int64_t ky = 0; ky < dm.kh; ++ky) {
        const int64_t iy = oy * dm.stride - dm.pad + ky;
        for (int64_t kx = 0; kx < dm.kw; ++kx) {
          const int64_t ix = ox * dm.stride - dm.pad + kx;
          if (iy < 0 || iy >= dm.h || ix < 0 || ix >= dm.w) {
            for (int64_t ci = 0; ci < dm.cin; ++ci) row[c++] = 0.0;
          } else {
            const double* px = x + (iy * dm.w + ix) * dm.cin;
            for (int64_t ci = 0; ci < dm.cin; ++ci) row[c++] = px[ci];
          }
        }
      }
    }
  }
  return cols;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  check(x.shape().size() == 3, "conv2d: input must be [H,W,Cin], got ",
        shape_str(x.shape()));
  check(w.shape().size() == 4, "conv2d: kernel must be [kh,kw,Cin,Cout], got ",
        shape_str(w.shape()));
  ConvDims dm;
  dm.h = x.shape()[0];
  dm.w = x.shape()[1];
  dm.cin = x.shape()[2];
  dm.kh = w.shape()[0];
  dm.kw = w.shape()[1];
  dm.cout = w.shape()[3];
  dm.stride = stride;
  dm.pad = pad;
  check(w.shape()[2] == dm.cin, "conv2d: kernel expects ", w.shape()[2],
        " input channels, input has ", dm.cin);
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad ", stride, "/", pad);
  dm.ho = (dm.h + 2 * pad - dm.kh) / stride + 1;
  dm.wo = (dm.w + 2 * pad - dm.kw) / stride + 1;
  check(dm.ho >= 1 && dm.wo >= 1, "conv2d: kernel ", dm.kh, "x", dm.kw,
        " larger than padded input ", dm.h, "x", dm.w);
  check(b.numel() == dm.cout, "conv2d: bias size ", b.numel(), " vs ",
        dm.cout, " output channels");

  RowMat cols = im2col(x.data().data(), dm);
  Eigen::Map<const RowMat> W(w.data().data(), dm.kh * dm.kw * dm.cin, dm.cout);
  std::vector<double> out(dm.ho * dm.wo * dm.cout);
  Eigen::Map<RowMat> O(out.data(), dm.ho * dm.wo, dm.cout);
  O.noalias() = cols * W;
  const auto& bv = b.data();
  for (int64_t r = 0; r < dm.ho * dm.wo; ++r)
    for (int64_t c = 0; c < dm.cout; ++c) out[r * dm.cout + c] += bv[c];

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op_node(
      "conv2d", {dm.ho, dm.wo, dm.cout}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, dm](TensorNode& o) {
        Eigen::Map<const RowMat> dO(o.grad.data(), dm.ho * dm.wo, dm.cout);
        if (bn->requires_grad) {
          auto& gb = bn->grad_buf();
          for (int64_t r = 0; r < dm.ho * dm.wo; ++r)
            for (int64_t c = 0; c < dm.cout; ++c) gb[c] += dO(r, c);
        }
        if (wn->requires_grad) {
          RowMat cols = im2col(xn->value.data(), dm);
          Eigen::Map<RowMat>(wn->grad_buf().data(), cols.cols(), dm.cout)
              .noalias() += cols.transpose() * dO;
        }
        if (xn->requires_grad) {
          Eigen::Map<const RowMat> W(wn->value.data(),
                                     dm.kh * dm.kw * dm.cin, dm.cout);
          RowMat dcols = dO * W.transpose();
          auto& gx = xn->grad_buf();
          for (int64_t oy = 0; oy < dm.ho; ++oy) {
            for (int64_t ox = 0; ox < dm.wo; ++ox) {
              const double* row =
                  dcols.data() + (oy * dm.wo + ox) * dcols.cols();
              int64_t c = 0;
              for (int64_t ky = 0; ky < dm.kh; ++ky) {
                const int64_t iy = oy * dm.stride - dm.pad + ky;
                for (int64_t kx = 0; kx < dm.kw; ++kx) {
                  const int64_t ix = ox * dm.stride - dm.pad + kx;
                  if (iy < 0 || iy >= dm.h || ix < 0 || ix >= dm.w) {
                    c += dm.cin;
                  } else {
                    double* px = gx.data() + (iy * dm.w + ix) * dm.cin;
                    for (int64_t ci = 0; ci < dm.cin; ++ci) px[ci] += row[c++];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor upsample2x_nearest(const Tensor& x) {
  check(x.shape().size() == 3, "upsample2x_nearest: input must be [H,W,C]");
  const int64_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  std::vector<double> out(4 * h * w * c);
  const auto& v = x.data();
  for (int64_t y = 0; y < 2 * h; ++y)
    for (int64_t xx = 0; xx < 2 * w; ++xx)
      std::copy_n(v.data() + ((y / 2) * w + xx / 2) * c, c,
                  out.data() + (y * 2 * w + xx) * c);
  auto xn = x.node();
  return make_op_node("upsample2x_nearest", {2 * h, 2 * w, c}, std::move(out),
                      {xn}, [xn, h, w, c](TensorNode& o) {
                        auto& g = xn->grad_buf();
                        for (int64_t y = 0; y < 2 * h; ++y)
                          for (int64_t xx = 0; xx < 2 * w; ++xx) {
                            const double* src =
                                o.grad.data() + (y * 2 * w + xx) * c;
                            double* dst =
                                g.data() + ((y / 2) * w + xx / 2) * c;
                            for (int64_t ci = 0; ci < c; ++ci)
                              dst[ci] += src[ci];
                          }
                      });
}

}  // namespace delta
