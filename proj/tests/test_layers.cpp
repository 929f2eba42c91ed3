#include <doctest.h>

#include <cmath>

#include "stlkit/layers.hpp"
#include "test_helpers.hpp"

using namespace stlkit;
using namespace stlkit::nn;
using stlkit::test::fill_uniform;

namespace {

// Independent six-nested-loop convolution oracle. Normative reference for
// the im2col/GEMM implementation.
template <typename T>
Tensor4<T> conv_oracle(const Tensor4<T>& x, const Tensor4<T>& w,
                       const Tensor4<T>& b, int stride, int pad) {
  const int out_c = w.n(), kh = w.h(), kw = w.w();
  const int out_h = conv_out_dim(x.h(), kh, stride, pad);
  const int out_w = conv_out_dim(x.w(), kw, stride, pad);
  Tensor4<T> y(x.n(), out_c, out_h, out_w);
  for (int s = 0; s < x.n(); ++s)
    for (int o = 0; o < out_c; ++o)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          T acc = b[o];
          for (int ci = 0; ci < x.c(); ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy >= 0 && iy < x.h() && ix >= 0 && ix < x.w()) {
                  acc += x(s, ci, iy, ix) * w(o, ci, ky, kx);
                }
              }
          y(s, o, oy, ox) = acc;
        }
  return y;
}

// Scan oracle for max pooling: explicit window maxima with first-index ties.
template <typename T>
Tensor4<T> maxpool_oracle(const Tensor4<T>& x, int kernel, int stride) {
  const int out_h = conv_out_dim(x.h(), kernel, stride, 0);
  const int out_w = conv_out_dim(x.w(), kernel, stride, 0);
  Tensor4<T> y(x.n(), x.c(), out_h, out_w);
  for (int s = 0; s < x.n(); ++s)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          T best = x(s, c, oy * stride, ox * stride);
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
              best = std::max(best, x(s, c, oy * stride + ky, ox * stride + kx));
            }
          y(s, c, oy, ox) = best;
        }
  return y;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  REQUIRE(a.same_dims(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) -
                                      static_cast<double>(b[i])));
  }
  return worst;
}

// Central-difference check of a layer backward against the linear
// functional L = sum(coef * forward(x)). Returns the max relative error
// over all checked elements.
double fd_rel_err(const std::function<Tensor4d(const Tensor4d&)>& forward,
                  const Tensor4d& x, const Tensor4d& grad_x,
                  const Tensor4d& coef, double eps = 1e-6,
                  double skip_near_kink = -1.0) {
  auto loss = [&](const Tensor4d& in) {
    const Tensor4d y = forward(in);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += y[i] * coef[i];
    return total;
  };
  double worst = 0.0;
  Tensor4d probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (skip_near_kink > 0.0 && std::fabs(x[i]) < skip_near_kink) continue;
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double lp = loss(probe);
    probe[i] = saved - eps;
    const double lm = loss(probe);
    probe[i] = saved;
    const double fd = (lp - lm) / (2.0 * eps);
    const double denom = std::max({std::fabs(fd), std::fabs(grad_x[i]), 1e-12});
    worst = std::max(worst, std::fabs(fd - grad_x[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 sums to 9") {
  Tensor4f x(1, 1, 3, 3, 1.0f);
  Tensor4f w(1, 1, 3, 3, 1.0f);
  Tensor4f b(1, 1, 1, 1, 0.0f);
  const auto y = conv2d_forward(x, w, b, 1, 0);
  CHECK(y.dims() == Dims4{1, 1, 1, 1});
  CHECK(y[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  Rng rng(1);
  Tensor4f x(2, 1, 5, 4);
  fill_uniform(x, rng);
  Tensor4f w(1, 1, 1, 1, 1.0f);
  Tensor4f b(1, 1, 1, 1, 0.0f);
  const auto y = conv2d_forward(x, w, b, 1, 0);
  CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv2d: random case matches the nested-loop oracle") {
  Rng rng(2);
  Tensor4f x(2, 3, 7, 7);
  Tensor4f w(4, 3, 3, 3);
  Tensor4f b(1, 1, 1, 4);
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  const auto y = conv2d_forward(x, w, b, 2, 1);
  const auto expect = conv_oracle(x, w, b, 2, 1);
  CHECK(max_abs_diff(y, expect) < 1e-6);
}

TEST_CASE("conv2d: oracle equality over random shapes, both precisions") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(2));
    const int c = 1 + static_cast<int>(rng.below(4));
    const int h = 1 + static_cast<int>(rng.below(9));
    const int w = 1 + static_cast<int>(rng.below(9));
    const int k = 1 + static_cast<int>(rng.below(std::min(h, w)));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    const int oc = 1 + static_cast<int>(rng.below(3));
    if (conv_out_dim(h, k, stride, pad) < 1 || conv_out_dim(w, k, stride, pad) < 1) {
      continue;
    }
    Tensor4d x(n, c, h, w), wt(oc, c, k, k), b(1, 1, 1, oc);
    fill_uniform(x, rng);
    fill_uniform(wt, rng);
    fill_uniform(b, rng);
    CHECK(max_abs_diff(conv2d_forward(x, wt, b, stride, pad),
                       conv_oracle(x, wt, b, stride, pad)) < 1e-12);
    const auto xf = cast_tensor<float>(x);
    const auto wf = cast_tensor<float>(wt);
    const auto bf = cast_tensor<float>(b);
    CHECK(max_abs_diff(conv2d_forward(xf, wf, bf, stride, pad),
                       conv_oracle(xf, wf, bf, stride, pad)) < 1e-6);
  }
}

TEST_CASE("conv2d: dimension errors") {
  Tensor4f x(1, 2, 3, 3), w(1, 3, 3, 3), b(1, 1, 1, 1);
  CHECK_THROWS_AS(conv2d_forward(x, w, b, 1, 0), ConfigError);
  Tensor4f w2(1, 2, 5, 5);
  CHECK_THROWS_AS(conv2d_forward(x, w2, b, 1, 0), ConfigError);  // 3x3 vs k5
}

TEST_CASE("conv2d backward: zero grad gives zero gradients") {
  Rng rng(4);
  Tensor4d x(1, 2, 5, 5), w(3, 2, 3, 3), b(1, 1, 1, 3);
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  const auto y = conv2d_forward(x, w, b, 1, 1);
  Tensor4d gy(y.dims());
  const auto grads = conv2d_backward(x, w, gy, 1, 1);
  CHECK(max_abs_diff(grads.gx, Tensor4d(x.dims())) == 0.0);
  CHECK(max_abs_diff(grads.gw, Tensor4d(w.dims())) == 0.0);
  CHECK(max_abs_diff(grads.gb, Tensor4d(b.dims())) == 0.0);
}

TEST_CASE("conv2d backward: identity kernel passes the gradient through") {
  Rng rng(5);
  Tensor4d x(1, 1, 4, 4), w(1, 1, 1, 1, 1.0), gy(1, 1, 4, 4);
  fill_uniform(x, rng);
  fill_uniform(gy, rng);
  const auto grads = conv2d_backward(x, w, gy, 1, 0);
  CHECK(max_abs_diff(grads.gx, gy) == 0.0);
}

TEST_CASE("conv2d backward: matches finite differences") {
  Rng rng(6);
  Tensor4d x(2, 2, 5, 5), w(3, 2, 3, 3), b(1, 1, 1, 3);
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  const auto y = conv2d_forward(x, w, b, 2, 1);
  Tensor4d coef(y.dims());
  fill_uniform(coef, rng);
  const auto grads = conv2d_backward(x, w, coef, 2, 1);

  CHECK(fd_rel_err([&](const Tensor4d& in) { return conv2d_forward(in, w, b, 2, 1); },
                   x, grads.gx, coef) < 1e-6);
  CHECK(fd_rel_err([&](const Tensor4d& in) { return conv2d_forward(x, in, b, 2, 1); },
                   w, grads.gw, coef) < 1e-6);
  CHECK(fd_rel_err([&](const Tensor4d& in) { return conv2d_forward(x, w, in, 2, 1); },
                   b, grads.gb, coef) < 1e-6);
}

TEST_CASE("relu forward and backward") {
  Tensor4f x(1, 1, 1, 3);
  x[0] = -1.0f;
  x[1] = 0.0f;
  x[2] = 2.0f;
  const auto y = relu_forward(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);

  Tensor4f in(1, 1, 1, 2), g(1, 1, 1, 2);
  in[0] = -1.0f;
  in[1] = 2.0f;
  g[0] = 5.0f;
  g[1] = 7.0f;
  const auto gx = relu_backward(in, g);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[1] == 7.0f);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
  Rng rng(7);
  Tensor4d x(1, 2, 4, 4), coef(1, 2, 4, 4);
  fill_uniform(x, rng);
  fill_uniform(coef, rng);
  const auto gx = relu_backward(x, coef);
  CHECK(fd_rel_err([](const Tensor4d& in) { return relu_forward(in); }, x, gx,
                   coef, 1e-6, 1e-3) < 1e-6);
}

TEST_CASE("relu clamp_sum variant clamps the incoming error") {
  Tensor4f in(1, 1, 1, 2), g(1, 1, 1, 2);
  in[0] = -1.0f;
  in[1] = 2.0f;
  g[0] = 5.0f;
  g[1] = -7.0f;
  const auto gx = relu_backward(in, g, ReluBackwardMode::clamp_sum);
  CHECK(gx[0] == 5.0f);   // passes despite negative input
  CHECK(gx[1] == 0.0f);   // clamped despite positive input
}

TEST_CASE("maxpool: window max and argmax with row-major ties") {
  Tensor4f x(1, 1, 2, 2);
  x(0, 0, 0, 0) = 1;
  x(0, 0, 0, 1) = 2;
  x(0, 0, 1, 0) = 3;
  x(0, 0, 1, 1) = 0;
  std::vector<std::int32_t> argmax;
  const auto y = maxpool_forward(x, 2, 2, argmax);
  CHECK(y.dims() == Dims4{1, 1, 1, 1});
  CHECK(y[0] == 3.0f);
  CHECK(argmax[0] == 2);  // flat index of (row 1, col 0)

  Tensor4f c(1, 1, 4, 4, 5.0f);
  const auto yc = maxpool_forward(c, 2, 2, argmax);
  CHECK(yc[0] == 5.0f);
  CHECK(argmax[0] == 0);  // constant map: first index wins
}

TEST_CASE("maxpool: random case matches scan oracle; backward scatters") {
  Rng rng(8);
  Tensor4f x(1, 2, 6, 6);
  fill_uniform(x, rng);
  std::vector<std::int32_t> argmax;
  const auto y = maxpool_forward(x, 2, 2, argmax);
  CHECK(max_abs_diff(y, maxpool_oracle(x, 2, 2)) == 0.0);

  Tensor4f gy(y.dims());
  fill_uniform(gy, rng);
  const auto gx = maxpool_backward(x.dims(), argmax, gy);
  // Every output grad lands on its argmax; total mass is preserved.
  double sum_gy = 0, sum_gx = 0;
  for (std::size_t i = 0; i < gy.size(); ++i) sum_gy += gy[i];
  for (std::size_t i = 0; i < gx.size(); ++i) sum_gx += gx[i];
  CHECK(sum_gx == doctest::Approx(sum_gy));
  // Non-overlapping windows: at most one nonzero per window.
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        int nonzero = 0;
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            nonzero += gx(0, c, oy * 2 + ky, ox * 2 + kx) != 0.0f;
          }
        CHECK(nonzero <= 1);
      }
}

TEST_CASE("fully connected: identity weights, bias passthrough, FD") {
  Tensor4d x(2, 3, 1, 1);
  Rng rng(9);
  fill_uniform(x, rng);
  Tensor4d w(1, 1, 3, 3), b(1, 1, 1, 3);
  for (int i = 0; i < 3; ++i) w(0, 0, i, i) = 1.0;
  const auto y = fc_forward(x, w, b);
  CHECK(max_abs_diff(y, x) == 0.0);

  Tensor4d zero(2, 3, 1, 1);
  fill_uniform(b, rng);
  const auto yb = fc_forward(zero, w, b);
  for (int s = 0; s < 2; ++s)
    for (int j = 0; j < 3; ++j) CHECK(yb(s, j, 0, 0) == b[j]);

  Tensor4d x2(2, 2, 3, 3), w2(1, 1, 4, 18), b2(1, 1, 1, 4);
  fill_uniform(x2, rng);
  fill_uniform(w2, rng);
  fill_uniform(b2, rng);
  const auto y2 = fc_forward(x2, w2, b2);
  Tensor4d coef(y2.dims());
  fill_uniform(coef, rng);
  const auto grads = fc_backward(x2, w2, coef);
  CHECK(fd_rel_err([&](const Tensor4d& in) { return fc_forward(in, w2, b2); },
                   x2, grads.gx, coef) < 1e-6);
  CHECK(fd_rel_err([&](const Tensor4d& in) { return fc_forward(x2, in, b2); },
                   w2, grads.gw, coef) < 1e-6);
  CHECK(fd_rel_err([&](const Tensor4d& in) { return fc_forward(x2, w2, in); },
                   b2, grads.gb, coef) < 1e-6);
}

TEST_CASE("dropout: rate 0 and eval mode are the identity") {
  Rng rng(10);
  Tensor4f x(1, 1, 4, 4);
  fill_uniform(x, rng);
  Rng d1(1);
  CHECK(max_abs_diff(dropout_forward(x, 0.0, d1, true), x) == 0.0);
  CHECK(max_abs_diff(dropout_forward(x, 0.7, d1, false), x) == 0.0);
  CHECK_THROWS_AS(dropout_forward(x, 1.0, d1, true), ConfigError);
}

TEST_CASE("dropout: survivor fraction and mean preservation at rate 0.5") {
  Rng data_rng(11);
  Tensor4f x(1, 1, 400, 250);  // 1e5 elements
  fill_uniform(x, data_rng, 0.5, 1.5);
  Rng drop_rng(12);
  Tensor4f mask;
  const auto y = dropout_forward(x, 0.5, drop_rng, true, &mask);
  std::size_t survivors = 0;
  double mean_x = 0, mean_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    survivors += mask[i] != 0.0f;
    mean_x += x[i];
    mean_y += y[i];
  }
  const double frac = static_cast<double>(survivors) / x.size();
  CHECK(frac == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::fabs(frac - 0.5) < 0.01);
  CHECK(mean_y / x.size() ==
        doctest::Approx(mean_x / x.size()).epsilon(0.01));
}

TEST_CASE("conv1x1: channel selection and constant maps") {
  Rng rng(13);
  Tensor4f x(1, 3, 4, 4);
  fill_uniform(x, rng);
  Tensor4f w(1, 3, 1, 1), b(1, 1, 1, 1);
  w(0, 1, 0, 0) = 1.0f;  // select channel 1
  const auto y = conv2d_forward(x, w, b, 1, 0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y(0, 0, i, j) == x(0, 1, i, j));

  Tensor4f wz(2, 3, 1, 1), bz(1, 1, 1, 2);
  bz[0] = 0.25f;
  bz[1] = -0.5f;
  const auto yz = conv2d_forward(x, wz, bz, 1, 0);
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(yz(0, k, i, j) == bz[k]);

  Tensor4f wr(2, 3, 1, 1), br(1, 1, 1, 2);
  fill_uniform(wr, rng);
  fill_uniform(br, rng);
  CHECK(max_abs_diff(conv2d_forward(x, wr, br, 1, 0),
                     conv_oracle(x, wr, br, 1, 0)) < 1e-6);
}

TEST_CASE("global max pool: values, scatter, ties") {
  Tensor4f x(1, 1, 2, 2);
  x(0, 0, 0, 0) = 1;
  x(0, 0, 0, 1) = 5;
  x(0, 0, 1, 0) = 2;
  x(0, 0, 1, 1) = 3;
  std::vector<std::int32_t> argmax;
  const auto y = global_max_pool_forward(x, argmax);
  CHECK(y[0] == 5.0f);
  CHECK(argmax[0] == 1);
  Tensor4f gy(1, 1, 1, 1);
  gy[0] = 4.0f;
  const auto gx = global_max_pool_backward(x.dims(), argmax, gy);
  CHECK(gx(0, 0, 0, 1) == 4.0f);
  int nonzero = 0;
  for (std::size_t i = 0; i < gx.size(); ++i) nonzero += gx[i] != 0.0f;
  CHECK(nonzero == 1);

  Tensor4f all_equal(1, 1, 3, 3, 2.5f);
  global_max_pool_forward(all_equal, argmax);
  CHECK(argmax[0] == 0);

  Rng rng(14);
  Tensor4f xr(2, 3, 5, 5);
  fill_uniform(xr, rng);
  const auto yr = global_max_pool_forward(xr, argmax);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c) {
      float best = xr(s, c, 0, 0);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) best = std::max(best, xr(s, c, i, j));
      CHECK(yr(s, c, 0, 0) == best);
    }
}

TEST_CASE("global avg pool: mean, uniform backward") {
  Tensor4f x(1, 1, 2, 2);
  x(0, 0, 0, 0) = 1;
  x(0, 0, 0, 1) = 5;
  x(0, 0, 1, 0) = 2;
  x(0, 0, 1, 1) = 4;
  const auto y = global_avg_pool_forward(x);
  CHECK(y[0] == doctest::Approx(3.0f));

  Tensor4f gy(1, 1, 1, 1);
  gy[0] = 4.0f;
  const auto gx = global_avg_pool_backward(x.dims(), gy);
  for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(1.0f));

  Rng rng(15);
  Tensor4d xr(2, 2, 6, 7);
  fill_uniform(xr, rng);
  const auto yr = global_avg_pool_forward(xr);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 2; ++c) {
      double sum = 0;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 7; ++j) sum += xr(s, c, i, j);
      CHECK(yr(s, c, 0, 0) == doctest::Approx(sum / 42.0).epsilon(1e-6));
    }
}

TEST_CASE("global pool backward structure: sparsity and uniformity") {
  Rng rng(16);
  Tensor4f x(3, 4, 5, 5), gy(3, 4, 1, 1);
  fill_uniform(x, rng);
  fill_uniform(gy, rng);
  std::vector<std::int32_t> argmax;
  global_max_pool_forward(x, argmax);
  const auto gmax = global_max_pool_backward(x.dims(), argmax, gy);
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 4; ++c) {
      int nonzero = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) nonzero += gmax(s, c, i, j) != 0.0f;
      CHECK(nonzero <= 1);
    }
  const auto gavg = global_avg_pool_backward(x.dims(), gy);
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 4; ++c) {
      double sum = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          CHECK(gavg(s, c, i, j) == gavg(s, c, 0, 0));
          sum += gavg(s, c, i, j);
        }
      CHECK(sum == doctest::Approx(gy(s, c, 0, 0)).epsilon(1e-5));
    }
}

TEST_CASE("softmax cross-entropy: symmetry, direct value, gradient identity") {
  Tensor4d logits(1, 2, 1, 1);
  Tensor4d target(1, 2, 1, 1);
  target(0, 0, 0, 0) = 1.0;
  auto res = softmax_cross_entropy(logits, target);
  CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(res.probs[0] == doctest::Approx(0.5));
  CHECK(res.probs[1] == doctest::Approx(0.5));

  logits(0, 0, 0, 0) = 3.0;
  logits(0, 1, 0, 0) = 1.0;
  res = softmax_cross_entropy(logits, target);
  CHECK(res.loss == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));

  // grad_logits == (probs - targets) / n exactly
  Rng rng(17);
  Tensor4d l2(3, 4, 1, 1), t2(3, 4, 1, 1);
  fill_uniform(l2, rng);
  for (int s = 0; s < 3; ++s) t2(s, static_cast<int>(rng.below(4)), 0, 0) = 1.0;
  const auto r2 = softmax_cross_entropy(l2, t2);
  for (std::size_t i = 0; i < l2.size(); ++i) {
    CHECK(r2.grad_logits[i] == (r2.probs[i] - t2[i]) / 3.0);
  }
}

TEST_CASE("softmax: probabilities sum to 1, loss nonnegative, one-hot checked") {
  Rng rng(18);
  Tensor4d logits(5, 3, 1, 1), targets(5, 3, 1, 1);
  fill_uniform(logits, rng, -30.0, 30.0);
  for (int s = 0; s < 5; ++s) targets(s, static_cast<int>(rng.below(3)), 0, 0) = 1.0;
  const auto res = softmax_cross_entropy(logits, targets);
  for (int s = 0; s < 5; ++s) {
    double sum = 0;
    for (int j = 0; j < 3; ++j) sum += res.probs(s, j, 0, 0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(res.loss >= 0.0);

  Tensor4d bad(5, 3, 1, 1);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), InputError);
  bad = targets;
  bad(0, 0, 0, 0) = 0.5;
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), InputError);
}

TEST_CASE("purity: repeated calls are bit-identical") {
  Rng rng(19);
  Tensor4f x(2, 3, 8, 8), w(4, 3, 3, 3), b(1, 1, 1, 4);
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  const auto y1 = conv2d_forward(x, w, b, 1, 1);
  const auto y2 = conv2d_forward(x, w, b, 1, 1);
  CHECK(y1 == y2);

  Rng d1(77), d2(77);
  const auto z1 = dropout_forward(x, 0.3, d1, true);
  const auto z2 = dropout_forward(x, 0.3, d2, true);
  CHECK(z1 == z2);

  const auto g1 = conv2d_backward(x, w, y1, 1, 1);
  const auto g2 = conv2d_backward(x, w, y1, 1, 1);
  CHECK(g1.gx == g2.gx);
  CHECK(g1.gw == g2.gw);
  CHECK(g1.gb == g2.gb);
}
