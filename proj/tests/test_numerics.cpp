#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>

#include "delta/ops.hpp"
#include "delta/serialize.hpp"

using namespace delta;

namespace {

Tensor randt(Shape shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Plain-loop attention oracle, independent of the Eigen kernel.
std::vector<double> attention_oracle(const std::vector<double>& q,
                                     const std::vector<double>& k,
                                     const std::vector<double>& v,
                                     int64_t batch, int64_t nq, int64_t nk,
                                     int64_t d, int heads,
                                     const std::vector<double>* bias) {
  const int64_t dh = d / heads;
  std::vector<double> out(batch * nq * d, 0.0);
  for (int64_t b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int64_t i = 0; i < nq; ++i) {
        std::vector<double> s(nk);
        for (int64_t j = 0; j < nk; ++j) {
          double dot = 0;
          for (int64_t c = 0; c < dh; ++c)
            dot += q[(b * nq + i) * d + h * dh + c] *
                   k[(b * nk + j) * d + h * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          if (bias) s[j] += (*bias)[((b * heads + h) * nq + i) * nk + j];
        }
        double mx = s[0];
        for (double x : s) mx = std::max(mx, x);
        double z = 0;
        for (auto& x : s) {
          x = std::exp(x - mx);
          z += x;
        }
        for (int64_t j = 0; j < nk; ++j)
          for (int64_t c = 0; c < dh; ++c)
            out[(b * nq + i) * d + h * dh + c] +=
                s[j] / z * v[(b * nk + j) * d + h * dh + c];
      }
  return out;
}

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
  Tensor y = softmax(Tensor::zeros({3}));
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Tensor x = randt({17, 9}, 3, 4.0);
  Tensor y = softmax(x);
  for (int64_t r = 0; r < 17; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 9; ++c) {
      const double v = y.data()[r * 9 + c];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("exp is the inverse of log") {
  Tensor x = Tensor::scalar(2.5);
  CHECK(std::fabs(vexp(vlog(x)).item() - 2.5) < 1e-12);
}

TEST_CASE("matmul by identity is identity") {
  Tensor a = randt({3, 3}, 11);
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Tensor out = matmul(Tensor::from_data({3, 3}, eye), a);
  for (int64_t i = 0; i < 9; ++i)
    CHECK(out.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-14));
}

TEST_CASE("shape mismatch reports the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("bilinear sample: corners, exact texel, border clamp") {
  Tensor map = Tensor::from_data({2, 2, 1}, {0, 1, 2, 3});
  auto at = [&](double x, double y) {
    return bilinear_sample(map, Tensor::from_data({1, 2}, {x, y})).item();
  };
  CHECK(at(0.5, 0.5) == doctest::Approx(1.5));
  CHECK(at(1.0, 0.0) == doctest::Approx(1.0));
  CHECK(at(-5.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("bilinear sample of a constant map is constant everywhere") {
  Tensor map = Tensor::full({5, 7, 2}, 3.25);
  Rng rng(5);
  std::vector<double> pts;
  for (int i = 0; i < 20; ++i) {
    pts.push_back(rng.uniform(-3, 9));
    pts.push_back(rng.uniform(-3, 7));
  }
  Tensor out = bilinear_sample(map, Tensor::from_data({20, 2}, pts));
  for (double v : out.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));
}

TEST_CASE("grad_check: x squared at 3") {
  auto f = [](const std::vector<Tensor>& xs) { return mul(xs[0], xs[0]); };
  const double err = grad_check(f, {Tensor::scalar(3.0)});
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check: sum of softmax is constant") {
  auto f = [](const std::vector<Tensor>& xs) { return sum_all(softmax(xs[0])); };
  const double err = grad_check(f, {randt({6}, 2)});
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check covers every differentiable op") {
  GradCheckOptions opts;
  auto run = [&](const char* name, auto f, std::vector<Tensor> inputs) {
    const double err = grad_check(f, inputs, opts);
    INFO(name);
    CHECK(err < 1e-4);
  };

  run("add/bias",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(add(x[0], x[1]), x[0]));
      },
      {randt({4, 3}, 21), randt({3}, 22)});
  run("sub/rowvec",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(sub(x[0], x[1]), x[0]));
      },
      {randt({4, 3}, 23), randt({4, 1}, 24)});
  run("mul scalar",
      [](const std::vector<Tensor>& x) { return sum_all(mul(x[0], x[1])); },
      {randt({5}, 25), randt({1}, 26)});
  run("exp", [](const std::vector<Tensor>& x) { return sum_all(mul(vexp(x[0]), x[0])); },
      {randt({6}, 27, 0.5)});
  run("log",
      [](const std::vector<Tensor>& x) {
        return sum_all(vlog(add_scalar(vabs(x[0]), 2.0)));
      },
      {randt({6}, 28)});
  run("sigmoid",
      [](const std::vector<Tensor>& x) { return sum_all(mul(sigmoid(x[0]), x[0])); },
      {randt({7}, 29)});
  run("gelu", [](const std::vector<Tensor>& x) { return sum_all(gelu(x[0])); },
      {randt({9}, 30)});
  run("relu+abs",
      [](const std::vector<Tensor>& x) {
        return sum_all(add(relu(x[0]), vabs(x[1])));
      },
      {randt({8}, 31), randt({8}, 32)});
  run("reciprocal",
      [](const std::vector<Tensor>& x) {
        return sum_all(reciprocal(add_scalar(vabs(x[0]), 1.0)));
      },
      {randt({6}, 47)});
  run("clamp_min",
      [](const std::vector<Tensor>& x) { return sum_all(clamp_min(x[0], 0.2)); },
      {randt({9}, 48)});
  run("matmul",
      [](const std::vector<Tensor>& x) { return sum_all(mul(matmul(x[0], x[1]), matmul(x[0], x[1]))); },
      {randt({3, 4}, 33), randt({4, 2}, 34)});
  run("softmax",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(softmax(x[0]), x[1]));
      },
      {randt({3, 5}, 35), randt({3, 5}, 36)});
  run("layer_norm",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(layer_norm(x[0], x[1], x[2]), x[0]));
      },
      {randt({4, 6}, 37), randt({6}, 38, 0.3), randt({6}, 39)});
  run("concat/slice",
      [](const std::vector<Tensor>& x) {
        Tensor c = concat_cols({x[0], x[1]});
        return sum_all(mul(slice_cols(c, 1, 3), slice_cols(c, 0, 3)));
      },
      {randt({3, 2}, 40), randt({3, 2}, 41)});
  run("concat_rows/slice_rows",
      [](const std::vector<Tensor>& x) {
        Tensor c = concat_rows({x[0], x[1]});
        return sum_all(mul(slice_rows(c, 1, 3), slice_rows(c, 2, 3)));
      },
      {randt({3, 2}, 53), randt({3, 2}, 54)});
  run("gather/scatter",
      [](const std::vector<Tensor>& x) {
        Tensor g = gather_rows(x[0], {2, 0, 1, 2});
        return sum_all(mul(scatter_rows(g, {1, 1, 0, 2}, 3), x[0]));
      },
      {randt({3, 3}, 42)});
  run("sin_embed",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(sin_embed(x[0], 3, 0.7),
                           sin_embed(x[0], 3, 0.7)));
      },
      {randt({4, 2}, 43)});
  run("bce",
      [](const std::vector<Tensor>& x) {
        return mean_all(
            bce_with_logits(x[0], Tensor::from_data({4}, {1, 0, 1, 0})));
      },
      {randt({4}, 44)});
  run("mean/masked_mean",
      [](const std::vector<Tensor>& x) {
        Tensor mask = Tensor::from_data({6}, {1, 0, 1, 1, 0, 1});
        return add(mean_all(x[0]), masked_mean(mul(x[0], x[0]), mask));
      },
      {randt({6}, 45)});
  run("upsample2x",
      [](const std::vector<Tensor>& x) {
        return sum_all(mul(upsample2x_nearest(x[0]), upsample2x_nearest(x[0])));
      },
      {randt({2, 3, 2}, 46)});
}

TEST_CASE("grad_check: bilinear sample wrt map and points") {
  Tensor map = randt({5, 6, 3}, 50);
  Tensor pts = Tensor::from_data({4, 2}, {0.3, 1.7, 2.2, 3.4, 4.6, 0.2, 1.1, 2.9});
  auto f = [](const std::vector<Tensor>& x) {
    return sum_all(mul(bilinear_sample(x[0], x[1]), bilinear_sample(x[0], x[1])));
  };
  CHECK(grad_check(f, {map, pts}) < 1e-4);
}

TEST_CASE("grad_check: conv2d wrt input, kernel, bias") {
  Tensor x = randt({6, 6, 2}, 60);
  Tensor w = randt({3, 3, 2, 3}, 61, 0.4);
  Tensor b = randt({3}, 62);
  auto f = [](const std::vector<Tensor>& xs) {
    return sum_all(mul(conv2d(xs[0], xs[1], xs[2], 2, 1),
                       conv2d(xs[0], xs[1], xs[2], 2, 1)));
  };
  CHECK(grad_check(f, {x, w, b}) < 1e-4);
}

TEST_CASE("conv2d matches a naive loop oracle") {
  Tensor x = randt({5, 7, 2}, 63);
  Tensor w = randt({3, 3, 2, 4}, 64);
  Tensor b = randt({4}, 65);
  const int stride = 2, pad = 1;
  Tensor y = conv2d(x, w, b, stride, pad);
  const int64_t ho = y.shape()[0], wo = y.shape()[1];
  for (int64_t oy = 0; oy < ho; ++oy)
    for (int64_t ox = 0; ox < wo; ++ox)
      for (int64_t co = 0; co < 4; ++co) {
        double acc = b.data()[co];
        for (int64_t ky = 0; ky < 3; ++ky)
          for (int64_t kx = 0; kx < 3; ++kx)
            for (int64_t ci = 0; ci < 2; ++ci) {
              const int64_t iy = oy * stride - pad + ky;
              const int64_t ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
              acc += x.data()[(iy * 7 + ix) * 2 + ci] *
                     w.data()[((ky * 3 + kx) * 2 + ci) * 4 + co];
            }
        CHECK(y.data()[(oy * wo + ox) * 4 + co] ==
              doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("attention matches the loop oracle, with and without bias") {
  const int64_t batch = 3, nq = 4, nk = 5, d = 8;
  const int heads = 2;
  Tensor q = randt({batch * nq, d}, 70);
  Tensor k = randt({batch * nk, d}, 71);
  Tensor v = randt({batch * nk, d}, 72);
  Tensor bias = randt({batch * heads * nq, nk}, 73);

  Tensor y0 = attention(q, k, v, batch, heads, nullptr, MacCategory::kOther);
  auto o0 = attention_oracle({q.data().begin(), q.data().end()},
                             {k.data().begin(), k.data().end()},
                             {v.data().begin(), v.data().end()}, batch, nq, nk,
                             d, heads, nullptr);
  for (size_t i = 0; i < o0.size(); ++i)
    CHECK(y0.data()[i] == doctest::Approx(o0[i]).epsilon(1e-11));

  Tensor y1 = attention(q, k, v, batch, heads, &bias, MacCategory::kOther);
  std::vector<double> bv(bias.data().begin(), bias.data().end());
  auto o1 = attention_oracle({q.data().begin(), q.data().end()},
                             {k.data().begin(), k.data().end()},
                             {v.data().begin(), v.data().end()}, batch, nq, nk,
                             d, heads, &bv);
  for (size_t i = 0; i < o1.size(); ++i)
    CHECK(y1.data()[i] == doctest::Approx(o1[i]).epsilon(1e-11));
}

TEST_CASE("grad_check: attention wrt q, k, v and bias") {
  const int64_t batch = 2, nq = 3, nk = 4, d = 4;
  Tensor q = randt({batch * nq, d}, 80, 0.7);
  Tensor k = randt({batch * nk, d}, 81, 0.7);
  Tensor v = randt({batch * nk, d}, 82);
  Tensor bias = randt({batch * 2 * nq, nk}, 83, 0.5);
  auto f = [&](const std::vector<Tensor>& xs) {
    Tensor y = attention(xs[0], xs[1], xs[2], batch, 2, &xs[3],
                         MacCategory::kOther);
    return sum_all(mul(y, y));
  };
  CHECK(grad_check(f, {q, k, v, bias}) < 1e-4);
}

TEST_CASE("attention counters tally query-key pairs per category") {
  const int64_t batch = 3, nq = 4, nk = 5, d = 8;
  Tensor q = randt({batch * nq, d}, 90);
  Tensor k = randt({batch * nk, d}, 91);
  Tensor v = randt({batch * nk, d}, 92);
  MacCounterScope scope;
  attention(q, k, v, batch, 2, nullptr, MacCategory::kSpatial);
  attention(q, k, v, batch, 4, nullptr, MacCategory::kTemporalReal);
  CHECK(mac_counters().at(MacCategory::kSpatial) == batch * nq * nk);
  CHECK(mac_counters().at(MacCategory::kTemporalReal) == batch * nq * nk);
  CHECK(mac_counters().total() == 2 * batch * nq * nk);
}

TEST_CASE("corr_features: constant map equal to track feature") {
  // All grid samples of a constant map dot the track feature to |f|^2.
  std::vector<double> f = {0.5, -1.0, 2.0};
  double s = 0;
  for (double x : f) s += x * x;
  std::vector<double> mapv;
  for (int i = 0; i < 6 * 6; ++i) mapv.insert(mapv.end(), f.begin(), f.end());
  Tensor map = Tensor::from_data({6, 6, 3}, mapv);
  Tensor feats = Tensor::from_data({1, 3}, f);
  Tensor uv = Tensor::from_data({1, 2}, {6.0, 7.0});
  Tensor out = corr_features(map, feats, uv, 1, 2);
  CHECK(out.numel() == 9);
  for (double v : out.data()) CHECK(v == doctest::Approx(s).epsilon(1e-12));
}

TEST_CASE("corr_features is linear in the track feature") {
  Tensor map = randt({8, 8, 4}, 100);
  Tensor f1 = randt({2, 4}, 101);
  Tensor f2 = randt({2, 4}, 102);
  Tensor uv = Tensor::from_data({2, 2}, {3.3, 4.1, 9.9, 2.2});
  Tensor a = corr_features(map, f1, uv, 2, 2);
  Tensor b = corr_features(map, f2, uv, 2, 2);
  Tensor ab = corr_features(map, add(f1, f2), uv, 2, 2);
  for (int64_t i = 0; i < ab.numel(); ++i)
    CHECK(ab.data()[i] ==
          doctest::Approx(a.data()[i] + b.data()[i]).epsilon(1e-11));
}

TEST_CASE("grad_check: corr_features wrt map, feats and uv") {
  Tensor map = randt({6, 7, 3}, 110);
  Tensor feats = randt({2, 3}, 111);
  Tensor uv = Tensor::from_data({2, 2}, {4.3, 3.7, 8.6, 5.9});
  auto f = [](const std::vector<Tensor>& x) {
    Tensor y = corr_features(x[0], x[1], x[2], 1, 2);
    return sum_all(mul(y, y));
  };
  CHECK(grad_check(f, {map, feats, uv}) < 1e-4);
}

TEST_CASE("depth_corr: constant map at matching estimate is zero") {
  Tensor dm = Tensor::full({6, 6}, 2.0);
  Tensor logd = Tensor::from_data({1, 1}, {std::log(1.0)});
  Tensor uv = Tensor::from_data({1, 2}, {2.5, 2.5});
  Tensor out = depth_corr(dm, logd, uv, 1);
  for (double v : out.data())
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor logd2 = Tensor::from_data({1, 1}, {std::log(2.0)});
  Tensor out2 = depth_corr(dm, logd2, uv, 1);
  for (double v : out2.data()) CHECK(std::fabs(v) < 1e-12);
}

TEST_CASE("depth_corr scale cancellation within 1e-9") {
  Rng rng(7);
  std::vector<double> dm(64);
  for (auto& v : dm) v = rng.uniform(1.0, 5.0);
  const double c = 0.1;
  std::vector<double> dms(64);
  for (int i = 0; i < 64; ++i) dms[i] = c * dm[i];
  Tensor map = Tensor::from_data({8, 8}, dm);
  Tensor maps = Tensor::from_data({8, 8}, dms);
  Tensor logd = Tensor::from_data({1, 1}, {0.7});
  Tensor logds = Tensor::from_data({1, 1}, {0.7 + std::log(c)});
  Tensor uv = Tensor::from_data({1, 2}, {3.4, 4.6});
  Tensor a = depth_corr(map, logd, uv, 2);
  Tensor b = depth_corr(maps, logds, uv, 2);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(std::fabs(a.data()[i] - b.data()[i]) < 1e-9);
}

TEST_CASE("depth_corr rejects non-positive sampled depth") {
  Tensor dm = Tensor::full({4, 4}, -1.0);
  Tensor logd = Tensor::from_data({1, 1}, {0.0});
  Tensor uv = Tensor::from_data({1, 2}, {1.5, 1.5});
  CHECK_THROWS_AS(depth_corr(dm, logd, uv, 1), Error);
}

TEST_CASE("grad_check: depth_corr and grid_sample_taps wrt uv and estimate") {
  Rng rng(8);
  std::vector<double> dm(48);
  for (auto& v : dm) v = rng.uniform(0.5, 3.0);
  Tensor map = Tensor::from_data({6, 8}, dm);
  Tensor logd = Tensor::from_data({2, 1}, {0.3, -0.2});
  Tensor uv = Tensor::from_data({2, 2}, {3.4, 2.6, 5.2, 3.8});
  auto f = [&](const std::vector<Tensor>& x) {
    Tensor y = depth_corr(map, x[0], x[1], 1);
    Tensor z = grid_sample_taps(map, x[1], 1);
    return add(sum_all(mul(y, y)), sum_all(mul(z, z)));
  };
  CHECK(grad_check(f, {logd, uv}) < 1e-4);
}

TEST_CASE("grad_check: weighted_gather wrt values and weights") {
  Tensor values = randt({5, 3}, 120);
  Tensor w = randt({4, 2}, 121);
  std::vector<int64_t> nbr = {0, 1, 1, 2, 3, 4, 4, 0};
  auto f = [&](const std::vector<Tensor>& x) {
    Tensor y = weighted_gather(x[0], nbr, x[1]);
    return sum_all(mul(y, y));
  };
  CHECK(grad_check(f, {values, w}) < 1e-4);
}

TEST_CASE("backward accumulates grads of the same shape on every leaf") {
  Tensor a = randt({3, 4}, 130);
  a.set_requires_grad(true);
  Tensor b = randt({4, 2}, 131);
  b.set_requires_grad(true);
  Tensor y = sum_all(matmul(a, b));
  y.backward();
  REQUIRE(a.has_grad());
  REQUIRE(b.has_grad());
  CHECK(static_cast<int64_t>(a.grad().size()) == a.numel());
  CHECK(static_cast<int64_t>(b.grad().size()) == b.numel());
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  Tensor a = randt({2, 2}, 140);
  a.set_requires_grad(true);
  NoGradGuard guard;
  Tensor y = mul(a, a);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("rng determinism: identical seeds, identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(1000) == b.uniform_int(1000));
  }
}

TEST_CASE("tensor file round-trip is bit-exact; truncation is reported") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "delta_numerics_test";
  fs::create_directories(dir);
  const fs::path p = dir / "t.bin";

  Tensor t = randt({3, 5}, 150);
  save_tensor(p, t.shape(), {t.data().begin(), t.data().end()});
  Shape s;
  std::vector<double> back = load_tensor_f64(p, &s);
  REQUIRE(s == t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(std::memcmp(&back[i], &t.data()[i], sizeof(double)) == 0);
  }

  // Truncate the payload and expect the loader to name file and byte count.
  std::ifstream in(p, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(all.data(), static_cast<std::streamsize>(all.size() - 9));
  out.close();
  try {
    load_tensor(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("t.bin") != std::string::npos);
    CHECK(msg.find("120") != std::string::npos);  // 3*5*8 expected bytes
  }
  fs::remove_all(dir);
}
