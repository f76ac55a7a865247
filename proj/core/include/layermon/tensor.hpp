#pragma once

#include <cstddef>
#include <vector>

namespace layermon {

/// Dense row-major (n, c, h, w) array of doubles. Two-dimensional data such
/// as dense-layer activations uses (n, d, 1, 1); the model works in 64-bit
/// throughout so gradient checks are meaningful.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}
  Tensor(int n_, int d) : Tensor(n_, d, 1, 1) {}

  std::size_t size() const { return data.size(); }
  int plane() const { return h * w; }

  double& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  double at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }

  double* row(int in, int ic, int ih) {
    return data.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
  }
  const double* row(int in, int ic, int ih) const {
    return data.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
  }

  /// Same storage viewed as (n, c*h*w).
  Tensor reshaped(int n_, int c_, int h_, int w_) const;

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace layermon
