#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "stlkit/rng.hpp"
#include "stlkit/tensor.hpp"
#include "stlkit/threading.hpp"

namespace stlkit::nn {

// Output extent of a convolution/pool window along one axis.
inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

enum class ReluBackwardMode {
  // Gate by the sign of the forward input (standard subgradient).
  input_gate,
  // Clamp the incoming error sum at zero instead. Not the gradient of the
  // forward pass; kept selectable for comparison runs.
  clamp_sum,
};

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, C overwritten. Cache-blocked; each C element is
// accumulated by exactly one thread with the reduction index ascending, so
// results do not depend on the thread count.
// ---------------------------------------------------------------------------

namespace detail {

// Shared core for C = A*B and C = A^T*B: C[i][j] = sum_p A'(i,p) * B[p][j]
// where A'(i,p) is a[i*k+p] (a_transposed=false) or a[p*m+i] (true).
// Column blocks stay resident while row chunks stream over the reduction.
template <typename T, bool a_transposed>
void gemm_cols_range(const T* a, const T* b, T* c, std::size_t m,
                     std::size_t k, std::size_t n, std::size_t j0,
                     std::size_t j1) {
  constexpr std::size_t jb_size = 2048 / sizeof(T);  // per-block columns
  constexpr std::size_t mc_size = 16;                // row chunk
  for (std::size_t jb = j0; jb < j1; jb += jb_size) {
    const std::size_t jw = std::min(jb_size, j1 - jb);
    for (std::size_t i0 = 0; i0 < m; i0 += mc_size) {
      const std::size_t i1 = std::min(i0 + mc_size, m);
      for (std::size_t i = i0; i < i1; ++i) {
        std::fill(c + i * n + jb, c + i * n + jb + jw, T{});
      }
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + jb;
        for (std::size_t i = i0; i < i1; ++i) {
          const T av = a_transposed ? a[p * m + i] : a[i * k + p];
          T* crow = c + i * n + jb;
          for (std::size_t j = 0; j < jw; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
void gemm_ab(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n) {
  parallel_for(n, [&](std::size_t j0, std::size_t j1) {
    detail::gemm_cols_range<T, false>(a, b, c, m, k, n, j0, j1);
  });
}

// Single-threaded variant, safe inside a parallel_for body.
template <typename T>
void gemm_ab_seq(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  detail::gemm_cols_range<T, false>(a, b, c, m, k, n, 0, n);
}

// C = A^T * B with A (k x m), B (k x n).
template <typename T>
void gemm_atb(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
              std::size_t n) {
  parallel_for(n, [&](std::size_t j0, std::size_t j1) {
    detail::gemm_cols_range<T, true>(a, b, c, m, k, n, j0, j1);
  });
}

template <typename T>
void gemm_atb_seq(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  detail::gemm_cols_range<T, true>(a, b, c, m, k, n, 0, n);
}

namespace detail {

// Row-pair dots for C (+)= A * B^T, blocked over the reduction so both
// operand slices stay cache-resident. Each dot runs in fixed-width lanes
// combined in a fixed order (vectorizable without FP reassociation, and the
// summation order never changes).
template <typename T>
void gemm_abt_rows(const T* a, const T* b, T* c, std::size_t k, std::size_t n,
                   std::size_t i0, std::size_t i1, bool accumulate) {
  constexpr std::size_t kb_size = 4096 / sizeof(T);
  constexpr std::size_t lanes = 32 / sizeof(T);
  if (!accumulate) {
    for (std::size_t i = i0; i < i1; ++i) {
      std::fill(c + i * n, c + i * n + n, T{});
    }
  }
  for (std::size_t kb = 0; kb < k; kb += kb_size) {
    const std::size_t kw = std::min(kb_size, k - kb);
    for (std::size_t i = i0; i < i1; ++i) {
      const T* ablock = a + i * k + kb;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* bblock = b + j * k + kb;
        T lane[lanes] = {};
        std::size_t p = 0;
        for (; p + lanes <= kw; p += lanes) {
          for (std::size_t l = 0; l < lanes; ++l) {
            lane[l] += ablock[p + l] * bblock[p + l];
          }
        }
        T acc{};
        for (std::size_t l = 0; l < lanes; ++l) acc += lane[l];
        for (; p < kw; ++p) acc += ablock[p] * bblock[p];
        crow[j] += acc;
      }
    }
  }
}

}  // namespace detail

// C = A * B^T with A (m x k), B (n x k).
template <typename T>
void gemm_abt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
              std::size_t n) {
  parallel_for(m, [&](std::size_t i0, std::size_t i1) {
    detail::gemm_abt_rows(a, b, c, k, n, i0, i1, false);
  });
}

// C += A * B^T; used to fold per-sample contributions in a fixed order.
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  parallel_for(m, [&](std::size_t i0, std::size_t i1) {
    detail::gemm_abt_rows(a, b, c, k, n, i0, i1, true);
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM. The patch matrix is stored per sample:
// sample s owns a contiguous (in_c*kh*kw) x (out_h*out_w) block whose rows
// are (in-channel, ky, kx) and columns are (oy, ox). A per-sample GEMM then
// writes straight into the output tensor's (channel, position) layout.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col_sample(const T* xs, int in_c, int in_h, int in_w, int kh, int kw,
                   int stride, int pad, int out_h, int out_w, T* dst) {
  for (int ci = 0; ci < in_c; ++ci) {
    const T* plane = xs + static_cast<std::size_t>(ci) * in_h * in_w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_h) {
            for (int ox = 0; ox < out_w; ++ox) *dst++ = T{};
            continue;
          }
          const T* src_row = plane + static_cast<std::size_t>(iy) * in_w;
          if (pad == 0 && stride == 1) {
            const T* src = src_row + kx;
            for (int ox = 0; ox < out_w; ++ox) *dst++ = src[ox];
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              *dst++ = (ix >= 0 && ix < in_w) ? src_row[ix] : T{};
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
void im2col(const Tensor4<T>& x, int kh, int kw, int stride, int pad,
            int out_h, int out_w, std::vector<T>& col) {
  const std::size_t q_rows = static_cast<std::size_t>(x.c()) * kh * kw;
  const std::size_t per_sample = static_cast<std::size_t>(out_h) * out_w;
  col.resize(q_rows * per_sample * x.n());
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      detail::im2col_sample(x.data() + s * x.sample_stride(), x.c(), x.h(),
                            x.w(), kh, kw, stride, pad, out_h, out_w,
                            col.data() + s * q_rows * per_sample);
    }
  });
}

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                          const Tensor4<T>& b, int stride, int pad,
                          std::vector<T>* col_cache = nullptr) {
  const int out_c = w.n(), in_c = w.c(), kh = w.h(), kw = w.w();
  if (in_c != x.c()) {
    throw ConfigError("conv2d: input has " + std::to_string(x.c()) +
                      " channels, kernel expects " + std::to_string(in_c));
  }
  if (kh < 1 || kw < 1 || stride < 1 || pad < 0) {
    throw ConfigError("conv2d: invalid kernel/stride/pad");
  }
  if (static_cast<int>(b.size()) != out_c) {
    throw ConfigError("conv2d: bias size mismatch");
  }
  const int out_h = conv_out_dim(x.h(), kh, stride, pad);
  const int out_w = conv_out_dim(x.w(), kw, stride, pad);
  if (out_h < 1 || out_w < 1) {
    throw ConfigError("conv2d: non-positive output dims for input " +
                      x.dims().str());
  }

  std::vector<T> local_col;
  std::vector<T>& col = col_cache ? *col_cache : local_col;
  im2col(x, kh, kw, stride, pad, out_h, out_w, col);

  const std::size_t q_rows = static_cast<std::size_t>(in_c) * kh * kw;
  const std::size_t per_sample = static_cast<std::size_t>(out_h) * out_w;
  Tensor4<T> y(x.n(), out_c, out_h, out_w);
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      T* ys = y.data() + s * y.sample_stride();
      gemm_ab_seq(w.data(), col.data() + s * q_rows * per_sample, ys, out_c,
                  q_rows, per_sample);
      for (int o = 0; o < out_c; ++o) {
        T* row = ys + o * per_sample;
        const T bias = b[o];
        for (std::size_t p = 0; p < per_sample; ++p) row[p] += bias;
      }
    }
  });
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> gx, gw, gb;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                             const Tensor4<T>& gy, int stride, int pad,
                             const std::vector<T>* col_cache = nullptr) {
  const int out_c = w.n(), in_c = w.c(), kh = w.h(), kw = w.w();
  const int out_h = gy.h(), out_w = gy.w();
  if (gy.n() != x.n() || gy.c() != out_c ||
      out_h != conv_out_dim(x.h(), kh, stride, pad) ||
      out_w != conv_out_dim(x.w(), kw, stride, pad)) {
    throw InternalError("conv2d_backward: grad dims " + gy.dims().str() +
                        " mismatch input " + x.dims().str());
  }
  const std::size_t q_rows = static_cast<std::size_t>(in_c) * kh * kw;
  const std::size_t per_sample = static_cast<std::size_t>(out_h) * out_w;

  std::vector<T> local_col;
  const std::vector<T>* col = col_cache;
  if (!col) {
    im2col(x, kh, kw, stride, pad, out_h, out_w, local_col);
    col = &local_col;
  }

  ConvGrads<T> grads;
  grads.gb = Tensor4<T>(1, 1, 1, out_c);
  for (int o = 0; o < out_c; ++o) {
    T acc{};
    for (int s = 0; s < x.n(); ++s) {
      const T* row = gy.data() + s * gy.sample_stride() + o * per_sample;
      for (std::size_t p = 0; p < per_sample; ++p) acc += row[p];
    }
    grads.gb[o] = acc;
  }

  // Weight gradient: per-sample contributions folded in sample order.
  grads.gw = Tensor4<T>(out_c, in_c, kh, kw);
  for (int s = 0; s < x.n(); ++s) {
    gemm_abt_acc(gy.data() + s * gy.sample_stride(),
                 col->data() + s * q_rows * per_sample, grads.gw.data(), out_c,
                 per_sample, q_rows);
  }

  // Input gradient: per-sample W^T * gy_s, scattered back through the
  // patch mapping.
  grads.gx = Tensor4<T>(x.dims());
  const int in_h = x.h(), in_w = x.w();
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s0, std::size_t s1) {
    std::vector<T> gcol(q_rows * per_sample);
    for (std::size_t s = s0; s < s1; ++s) {
      gemm_atb_seq(w.data(), gy.data() + s * gy.sample_stride(), gcol.data(),
                   q_rows, out_c, per_sample);
      T* gxs = grads.gx.data() + s * grads.gx.sample_stride();
      const T* src = gcol.data();
      for (int ci = 0; ci < in_c; ++ci) {
        T* plane = gxs + static_cast<std::size_t>(ci) * in_h * in_w;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            for (int oy = 0; oy < out_h; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= in_h) {
                src += out_w;
                continue;
              }
              T* dst_row = plane + static_cast<std::size_t>(iy) * in_w;
              if (pad == 0 && stride == 1) {
                T* dst = dst_row + kx;
                for (int ox = 0; ox < out_w; ++ox) dst[ox] += src[ox];
              } else {
                for (int ox = 0; ox < out_w; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix >= 0 && ix < in_w) dst_row[ix] += src[ox];
                }
              }
              src += out_w;
            }
          }
        }
      }
    }
  });
  return grads;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling layers.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.dims());
  parallel_for(x.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) y[i] = x[i] > T{} ? x[i] : T{};
  });
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& forward_input, const Tensor4<T>& gy,
                         ReluBackwardMode mode = ReluBackwardMode::input_gate) {
  if (!forward_input.same_dims(gy)) {
    throw InternalError("relu_backward: dims mismatch");
  }
  Tensor4<T> gx(gy.dims());
  if (mode == ReluBackwardMode::input_gate) {
    parallel_for(gy.size(), [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        gx[i] = forward_input[i] > T{} ? gy[i] : T{};
      }
    });
  } else {
    parallel_for(gy.size(), [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) gx[i] = gy[i] > T{} ? gy[i] : T{};
    });
  }
  return gx;
}

// Max pooling; records the argmax (flat index within each (sample, channel)
// plane). Ties go to the first index in row-major scan order.
template <typename T>
Tensor4<T> maxpool_forward(const Tensor4<T>& x, int kernel, int stride,
                           std::vector<std::int32_t>& argmax) {
  if (kernel < 1 || stride < 1) throw ConfigError("maxpool: invalid kernel/stride");
  const int out_h = conv_out_dim(x.h(), kernel, stride, 0);
  const int out_w = conv_out_dim(x.w(), kernel, stride, 0);
  if (out_h < 1 || out_w < 1) {
    throw ConfigError("maxpool: window does not fit input " + x.dims().str());
  }
  Tensor4<T> y(x.n(), x.c(), out_h, out_w);
  argmax.assign(y.size(), 0);
  const int in_h = x.h(), in_w = x.w();
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      for (int ci = 0; ci < x.c(); ++ci) {
        const T* plane = x.data() + s * x.sample_stride() +
                         static_cast<std::size_t>(ci) * in_h * in_w;
        for (int oy = 0; oy < out_h; ++oy) {
          for (int ox = 0; ox < out_w; ++ox) {
            T best = -std::numeric_limits<T>::infinity();
            std::int32_t best_idx = 0;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride + ky;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride + kx;
                const T v = plane[iy * in_w + ix];
                if (v > best) {
                  best = v;
                  best_idx = static_cast<std::int32_t>(iy * in_w + ix);
                }
              }
            }
            const std::size_t out_idx =
                ((s * x.c() + ci) * out_h + oy) * out_w + ox;
            y[out_idx] = best;
            argmax[out_idx] = best_idx;
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor4<T> maxpool_backward(const Dims4& in_dims,
                            const std::vector<std::int32_t>& argmax,
                            const Tensor4<T>& gy) {
  Tensor4<T> gx(in_dims);
  const std::size_t plane = static_cast<std::size_t>(in_dims.h) * in_dims.w;
  const std::size_t out_plane = static_cast<std::size_t>(gy.h()) * gy.w();
  parallel_for(static_cast<std::size_t>(in_dims.n), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      for (int ci = 0; ci < in_dims.c; ++ci) {
        const std::size_t out_base = (s * in_dims.c + ci) * out_plane;
        T* gplane = gx.data() + (s * in_dims.c + ci) * plane;
        for (std::size_t p = 0; p < out_plane; ++p) {
          gplane[argmax[out_base + p]] += gy[out_base + p];
        }
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// Fully connected. Weights are (1, 1, out, in); input is flattened per
// sample.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> fc_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                      const Tensor4<T>& b) {
  const int out = w.h(), in = w.w();
  if (static_cast<std::size_t>(in) != x.sample_stride()) {
    throw ConfigError("fully_connected: input size " +
                      std::to_string(x.sample_stride()) + " != weight fan-in " +
                      std::to_string(in));
  }
  if (static_cast<int>(b.size()) != out) {
    throw ConfigError("fully_connected: bias size mismatch");
  }
  Tensor4<T> y(x.n(), out, 1, 1);
  gemm_abt(x.data(), w.data(), y.data(), x.n(), in, out);
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      T* row = y.data() + s * out;
      for (int o = 0; o < out; ++o) row[o] += b[o];
    }
  });
  return y;
}

template <typename T>
struct FcGrads {
  Tensor4<T> gx, gw, gb;
};

template <typename T>
FcGrads<T> fc_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                       const Tensor4<T>& gy) {
  const int out = w.h(), in = w.w();
  if (gy.n() != x.n() || gy.c() != out || gy.h() != 1 || gy.w() != 1) {
    throw InternalError("fc_backward: grad dims mismatch");
  }
  FcGrads<T> grads;
  grads.gw = Tensor4<T>(1, 1, out, in);
  gemm_atb(gy.data(), x.data(), grads.gw.data(), out, x.n(), in);
  grads.gb = Tensor4<T>(1, 1, 1, out);
  for (int o = 0; o < out; ++o) {
    T acc{};
    for (int s = 0; s < x.n(); ++s) acc += gy[static_cast<std::size_t>(s) * out + o];
    grads.gb[o] = acc;
  }
  grads.gx = Tensor4<T>(x.dims());
  gemm_ab(gy.data(), w.data(), grads.gx.data(), x.n(), out, in);
  return grads;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so the
// eval path is the identity. The mask is produced by a single sequential
// pass over the RNG stream.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> dropout_forward(const Tensor4<T>& x, double rate, Rng& rng,
                           bool train_mode, Tensor4<T>* mask_out = nullptr) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!train_mode || rate == 0.0) {
    if (mask_out) {
      *mask_out = Tensor4<T>(x.dims());
      mask_out->fill(T{1});
    }
    return x;
  }
  Tensor4<T> mask(x.dims());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.next_double() >= rate ? T{1} : T{0};
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor4<T> y(x.dims());
  parallel_for(x.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) y[i] = x[i] * mask[i] * scale;
  });
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <typename T>
Tensor4<T> dropout_backward(const Tensor4<T>& gy, const Tensor4<T>& mask,
                            double rate) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor4<T> gx(gy.dims());
  parallel_for(gy.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) gx[i] = gy[i] * mask[i] * scale;
  });
  return gx;
}

// ---------------------------------------------------------------------------
// Global pooling heads over per-class score maps.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> global_max_pool_forward(const Tensor4<T>& x,
                                   std::vector<std::int32_t>& argmax) {
  Tensor4<T> y(x.n(), x.c(), 1, 1);
  argmax.assign(y.size(), 0);
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (std::size_t pidx = 0; pidx < y.size(); ++pidx) {
    const T* p = x.data() + pidx * plane;
    T best = p[0];
    std::int32_t best_idx = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (p[i] > best) {
        best = p[i];
        best_idx = static_cast<std::int32_t>(i);
      }
    }
    y[pidx] = best;
    argmax[pidx] = best_idx;
  }
  return y;
}

// Each per-map gradient lands on exactly the recorded argmax location.
template <typename T>
Tensor4<T> global_max_pool_backward(const Dims4& in_dims,
                                    const std::vector<std::int32_t>& argmax,
                                    const Tensor4<T>& gy) {
  Tensor4<T> gx(in_dims);
  const std::size_t plane = static_cast<std::size_t>(in_dims.h) * in_dims.w;
  for (std::size_t pidx = 0; pidx < gy.size(); ++pidx) {
    gx[pidx * plane + argmax[pidx]] = gy[pidx];
  }
  return gx;
}

template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n(), x.c(), 1, 1);
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (std::size_t pidx = 0; pidx < y.size(); ++pidx) {
    const T* p = x.data() + pidx * plane;
    T acc{};
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    y[pidx] = acc / static_cast<T>(plane);
  }
  return y;
}

// The per-map gradient is spread uniformly: g / (h*w) everywhere.
template <typename T>
Tensor4<T> global_avg_pool_backward(const Dims4& in_dims, const Tensor4<T>& gy) {
  Tensor4<T> gx(in_dims);
  const std::size_t plane = static_cast<std::size_t>(in_dims.h) * in_dims.w;
  for (std::size_t pidx = 0; pidx < gy.size(); ++pidx) {
    const T v = gy[pidx] / static_cast<T>(plane);
    T* p = gx.data() + pidx * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = v;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over (n, K, 1, 1) logits against one-hot targets.
// Loss is the minibatch mean; grad_logits = (probs - targets) / n.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> softmax_probs(const Tensor4<T>& logits) {
  if (logits.h() != 1 || logits.w() != 1) {
    throw InternalError("softmax: expected (n,K,1,1) logits, got " +
                        logits.dims().str());
  }
  const int k = logits.c();
  Tensor4<T> probs(logits.dims());
  for (int s = 0; s < logits.n(); ++s) {
    const T* row = logits.data() + static_cast<std::size_t>(s) * k;
    T* out = probs.data() + static_cast<std::size_t>(s) * k;
    T m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    T denom{};
    for (int j = 0; j < k; ++j) {
      out[j] = std::exp(row[j] - m);
      denom += out[j];
    }
    for (int j = 0; j < k; ++j) out[j] /= denom;
  }
  return probs;
}

template <typename T>
void check_one_hot(const Tensor4<T>& targets) {
  const int k = targets.c();
  if (k < 2 || targets.h() != 1 || targets.w() != 1) {
    throw InputError("targets: expected one-hot (n,K,1,1) with K >= 2, got " +
                     targets.dims().str());
  }
  for (int s = 0; s < targets.n(); ++s) {
    int ones = 0;
    for (int j = 0; j < k; ++j) {
      const T v = targets(s, j, 0, 0);
      if (v == T{1}) {
        ++ones;
      } else if (v != T{0}) {
        throw InputError("targets: sample " + std::to_string(s) +
                         " is not one-hot");
      }
    }
    if (ones != 1) {
      throw InputError("targets: sample " + std::to_string(s) +
                       " is not one-hot");
    }
  }
}

// Mean cross-entropy of probability rows against one-hot targets.
template <typename T>
double cross_entropy_mean(const Tensor4<T>& probs, const Tensor4<T>& targets) {
  const int k = probs.c();
  double total = 0.0;
  for (int s = 0; s < probs.n(); ++s) {
    for (int j = 0; j < k; ++j) {
      if (targets(s, j, 0, 0) == T{1}) {
        const double p = std::max(static_cast<double>(probs(s, j, 0, 0)), 1e-300);
        total += -std::log(p);
      }
    }
  }
  return total / probs.n();
}

template <typename T>
struct SoftmaxCeResult {
  double loss = 0.0;
  Tensor4<T> probs;
  Tensor4<T> grad_logits;
};

template <typename T>
SoftmaxCeResult<T> softmax_cross_entropy(const Tensor4<T>& logits,
                                         const Tensor4<T>& targets) {
  if (!logits.same_dims(targets)) {
    throw InputError("softmax_cross_entropy: logits " + logits.dims().str() +
                     " vs targets " + targets.dims().str());
  }
  check_one_hot(targets);
  SoftmaxCeResult<T> res;
  res.probs = softmax_probs(logits);
  res.loss = cross_entropy_mean(res.probs, targets);
  res.grad_logits = Tensor4<T>(logits.dims());
  const T inv_n = static_cast<T>(1.0 / logits.n());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    res.grad_logits[i] = (res.probs[i] - targets[i]) * inv_n;
  }
  return res;
}

}  // namespace stlkit::nn
