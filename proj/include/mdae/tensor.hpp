#pragma once

#include <cstddef>
#include <vector>

#include "mdae/common.hpp"

namespace mdae {

// Dense rank-4 array (batch, channel, height, width), row-major with w
// innermost. Value semantics throughout: copies are deep, moves are cheap,
// dims are fixed at construction.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;

  Tensor4(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, T(0)) {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw shape_error("Tensor4: negative dim in " + dims_str(n, c, h, w));
  }

  static Tensor4 filled(int n, int c, int h, int w, T v) {
    Tensor4 t(n, c, h, w);
    t.fill(v);
    return t;
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int n, int c, int i, int j) {
    return data_[flat(n, c, i, j)];
  }
  const T& operator()(int n, int c, int i, int j) const {
    return data_[flat(n, c, i, j)];
  }

  std::size_t flat(int n, int c, int i, int j) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + i) * w_ + j;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_dims(const Tensor4& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string dims() const { return dims_str(n_, c_, h_, w_); }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n_, c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

template <typename T>
void require_same_dims(const Tensor4<T>& a, const Tensor4<T>& b,
                       const char* where) {
  if (!a.same_dims(b))
    throw shape_error(std::string(where) + ": dims " + a.dims() + " vs " +
                      b.dims());
}

}  // namespace mdae
