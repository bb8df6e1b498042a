#include <Eigen/Dense>

#include "delta/ops.hpp"

namespace delta {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

MacCounters& mac_counters() {
  thread_local MacCounters counters;
  return counters;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 int64_t batch, int heads, const Tensor* bias,
                 MacCategory category) {
  check(batch >= 1, "attention: batch must be >= 1, got ", batch);
  const int64_t d = q.shape().back();
  check(k.shape().back() == d && v.shape().back() == d,
        "attention: q/k/v widths differ: ", shape_str(q.shape()), " ",
        shape_str(k.shape()), " ", shape_str(v.shape()));
  check(heads >= 1 && d % heads == 0, "attention: width ", d,
        " not divisible by ", heads, " heads");
  const int64_t q_rows = q.numel() / d;
  const int64_t kv_rows = k.numel() / d;
  check(v.numel() / d == kv_rows, "attention: k/v row mismatch: ",
        shape_str(k.shape()), " vs ", shape_str(v.shape()));
  check(q_rows % batch == 0 && kv_rows % batch == 0,
        "attention: rows not divisible by batch ", batch, ": q=",
        q_rows, " kv=", kv_rows);
  const int64_t nq = q_rows / batch;
  const int64_t nk = kv_rows / batch;
  const int64_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (bias)
    check(bias->numel() == batch * heads * nq * nk,
          "attention: bias shape ", shape_str(bias->shape()),
          " does not match [batch*heads*nq, nk] = [", batch * heads * nq, ",",
          nk, "]");

  auto& ctr = mac_counters();
  if (ctr.enabled)
    ctr.by_category[static_cast<int>(category)] += batch * nq * nk;

  const bool needs_grad = q.requires_grad() || k.requires_grad() ||
                          v.requires_grad() || (bias && bias->requires_grad());

  std::vector<double> out(q_rows * d, 0.0);
  // Attention weights are kept only when a backward pass will need them.
  std::shared_ptr<std::vector<double>> weights;
  if (needs_grad) weights = std::make_shared<std::vector<double>>(
      static_cast<size_t>(batch * heads * nq * nk));

  const double* qp = q.data().data();
  const double* kp = k.data().data();
  const double* vp = v.data().data();
  const double* bp = bias ? bias->data().data() : nullptr;

  const int64_t q_block = needs_grad ? nq : std::min<int64_t>(nq, 256);
  RowMat scores(q_block, nk);
  for (int64_t b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      ConstStridedMap Q(qp + b * nq * d + h * dh, nq, dh,
                        Eigen::OuterStride<>(d));
      ConstStridedMap K(kp + b * nk * d + h * dh, nk, dh,
                        Eigen::OuterStride<>(d));
      ConstStridedMap V(vp + b * nk * d + h * dh, nk, dh,
                        Eigen::OuterStride<>(d));
      StridedMap O(out.data() + b * nq * d + h * dh, nq, dh,
                   Eigen::OuterStride<>(d));
      for (int64_t q0 = 0; q0 < nq; q0 += q_block) {
        const int64_t qb = std::min(q_block, nq - q0);
        auto S = scores.topRows(qb);
        S.noalias() = Q.middleRows(q0, qb) * K.transpose() * att_scale;
        if (bp) {
          const double* brow = bp + ((b * heads + h) * nq + q0) * nk;
          S += ConstStridedMap(brow, qb, nk, Eigen::OuterStride<>(nk));
        }
        for (int64_t r = 0; r < qb; ++r) {
          auto row = S.row(r).array();
          row = (row - row.maxCoeff()).exp();
          row /= row.sum();
        }
        O.middleRows(q0, qb).noalias() = S * V;
        if (weights) {
          double* w = weights->data() + ((b * heads + h) * nq + q0) * nk;
          Eigen::Map<RowMat>(w, qb, nk) = S;
        }
      }
    }
  }

  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  std::vector<std::shared_ptr<TensorNode>> parents = {qn, kn, vn};
  std::shared_ptr<TensorNode> biasn;
  if (bias) {
    biasn = bias->node();
    parents.push_back(biasn);
  }
  return make_op_node(
      "attention", q.shape(), std::move(out), std::move(parents),
      [qn, kn, vn, biasn, weights, batch, heads, nq, nk, d, dh,
       att_scale](TensorNode& o) {
        const double* qp = qn->value.data();
        const double* kp = kn->value.data();
        const double* vp = vn->value.data();
        double* gq = qn->requires_grad ? qn->grad_buf().data() : nullptr;
        double* gk = kn->requires_grad ? kn->grad_buf().data() : nullptr;
        double* gv = vn->requires_grad ? vn->grad_buf().data() : nullptr;
        double* gb = (biasn && biasn->requires_grad) ? biasn->grad_buf().data()
                                                     : nullptr;
        RowMat dP(nq, nk), dS(nq, nk);
        for (int64_t b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            ConstStridedMap Q(qp + b * nq * d + h * dh, nq, dh,
                              Eigen::OuterStride<>(d));
            ConstStridedMap K(kp + b * nk * d + h * dh, nk, dh,
                              Eigen::OuterStride<>(d));
            ConstStridedMap V(vp + b * nk * d + h * dh, nk, dh,
                              Eigen::OuterStride<>(d));
            ConstStridedMap dO(o.grad.data() + b * nq * d + h * dh, nq, dh,
                               Eigen::OuterStride<>(d));
            Eigen::Map<const RowMat> P(
                weights->data() + (b * heads + h) * nq * nk, nq, nk);
            dP.noalias() = dO * V.transpose();
            for (int64_t r = 0; r < nq; ++r) {
              double dot = 0;
              for (int64_t j = 0; j < nk; ++j) dot += P(r, j) * dP(r, j);
              for (int64_t j = 0; j < nk; ++j)
                dS(r, j) = P(r, j) * (dP(r, j) - dot);
            }
            if (gv)
              StridedMap(gv + b * nk * d + h * dh, nk, dh,
                         Eigen::OuterStride<>(d))
                  .noalias() += P.transpose() * dO;
            if (gq)
              StridedMap(gq + b * nq * d + h * dh, nq, dh,
                         Eigen::OuterStride<>(d))
                  .noalias() += dS * K * att_scale;
            if (gk)
              StridedMap(gk + b * nk * d + h * dh, nk, dh,
                         Eigen::OuterStride<>(d))
                  .noalias() += dS.transpose() * Q * att_scale;
            if (gb)
              StridedMap(gb + (b * heads + h) * nq * nk, nq, nk,
                         Eigen::OuterStride<>(nk)) += dS;
          }
        }
      });
}

}  // namespace delta
