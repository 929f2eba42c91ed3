#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlkit {

// Error categories used across the toolkit. All map to CLI exit code 2
// except InternalError (exit 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims4 {
  int n = 0, c = 0, h = 0, w = 0;

  bool operator==(const Dims4& o) const = default;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Dense rank-4 array in (n, c, h, w) row-major order. The single value type
// for images, feature maps, parameters and gradients.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;

  Tensor4(int n, int c, int h, int w, T fill = T{}) : dims_{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
      throw ConfigError("Tensor4: negative dimension " + dims_.str());
    }
    data_.assign(dims_.count(), fill);
  }

  explicit Tensor4(Dims4 d, T fill = T{}) : Tensor4(d.n, d.c, d.h, d.w, fill) {}

  const Dims4& dims() const { return dims_; }
  int n() const { return dims_.n; }
  int c() const { return dims_.c; }
  int h() const { return dims_.h; }
  int w() const { return dims_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int i, int j, int y, int x) {
    return data_[idx(i, j, y, x)];
  }
  const T& operator()(int i, int j, int y, int x) const {
    return data_[idx(i, j, y, x)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_dims(const Tensor4& o) const { return dims_ == o.dims_; }

  // Flat offset of the first element of sample i.
  std::size_t sample_offset(int i) const {
    return static_cast<std::size_t>(i) * dims_.c * dims_.h * dims_.w;
  }
  std::size_t sample_stride() const {
    return static_cast<std::size_t>(dims_.c) * dims_.h * dims_.w;
  }

  bool operator==(const Tensor4& o) const {
    return dims_ == o.dims_ && data_ == o.data_;
  }

 private:
  std::size_t idx(int i, int j, int y, int x) const {
    return ((static_cast<std::size_t>(i) * dims_.c + j) * dims_.h + y) *
               dims_.w +
           x;
  }

  Dims4 dims_;
  std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename T>
bool all_finite(const Tensor4<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  }
  return true;
}

template <typename To, typename From>
Tensor4<To> cast_tensor(const Tensor4<From>& src) {
  Tensor4<To> out(src.dims());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<To>(src[i]);
  }
  return out;
}

}  // namespace stlkit
