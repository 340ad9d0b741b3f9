#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/rng.hpp"

namespace moe {
namespace nn {

// Flat-parameter convolutional/linear stack used by the force estimator.
// All math in double so reverse-mode gradients can be checked against
// central finite differences at tight tolerances.

struct ConvSpec {
  int in_c = 0, out_c = 0, kernel = 3, stride = 2, pad = 1;
  int in_h = 0, in_w = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int weight_count() const { return out_c * in_c * kernel * kernel; }
};

struct TensorEntry {
  std::string name;
  std::vector<int> dims;
  int offset = 0;
  int count = 0;
};

// Offset table of named tensors inside one flat parameter vector.
class ParamLayout {
 public:
  int add(const std::string& name, std::vector<int> dims) {
    TensorEntry e;
    e.name = name;
    e.dims = std::move(dims);
    e.count = 1;
    for (int d : e.dims) e.count *= d;
    e.offset = total_;
    total_ += e.count;
    entries_.push_back(e);
    return e.offset;
  }
  const std::vector<TensorEntry>& entries() const { return entries_; }
  int total() const { return total_; }
  const TensorEntry& find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e;
    }
    throw ContractViolation("unknown parameter tensor: " + name);
  }

 private:
  std::vector<TensorEntry> entries_;
  int total_ = 0;
};

// y[oc,oy,ox] = bias[oc] + sum_{ic,ky,kx} w[oc,ic,ky,kx] * x[ic,iy,ix]
inline void conv2d_forward(const ConvSpec& s, const double* x, const double* w,
                           const double* b, double* y) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < s.in_c; ++ic) {
          const double* xc = x + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
          const double* wc =
              w + ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel) *
                      s.kernel;
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride + ky - s.pad;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride + kx - s.pad;
              if (ix < 0 || ix >= s.in_w) continue;
              acc += wc[ky * s.kernel + kx] * xc[iy * s.in_w + ix];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

// Accumulates input/weight/bias gradients from dy. dx may be null for the
// first layer.
inline void conv2d_backward(const ConvSpec& s, const double* x,
                            const double* w, const double* dy, double* dx,
                            double* dw, double* db) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g = dy[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
        if (g == 0.0) continue;
        db[oc] += g;
        for (int ic = 0; ic < s.in_c; ++ic) {
          const double* xc = x + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
          double* dxc =
              dx ? dx + static_cast<std::size_t>(ic) * s.in_h * s.in_w : nullptr;
          const std::size_t wbase =
              ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel) *
              s.kernel;
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride + ky - s.pad;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride + kx - s.pad;
              if (ix < 0 || ix >= s.in_w) continue;
              dw[wbase + ky * s.kernel + kx] += g * xc[iy * s.in_w + ix];
              if (dxc) dxc[iy * s.in_w + ix] += g * w[wbase + ky * s.kernel + kx];
            }
          }
        }
      }
    }
  }
}

// y = W x + b with W stored row-major [out, in]
inline void linear_forward(int in_n, int out_n, const double* x,
                           const double* w, const double* b, double* y) {
  for (int o = 0; o < out_n; ++o) {
    double acc = b[o];
    const double* wr = w + static_cast<std::size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

inline void linear_backward(int in_n, int out_n, const double* x,
                            const double* w, const double* dy, double* dx,
                            double* dw, double* db) {
  for (int o = 0; o < out_n; ++o) {
    const double g = dy[o];
    db[o] += g;
    const double* wr = w + static_cast<std::size_t>(o) * in_n;
    double* dwr = dw + static_cast<std::size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) {
      dwr[i] += g * x[i];
      if (dx) dx[i] += g * wr[i];
    }
  }
}

inline void relu_forward(int n, double* x) {
  for (int i = 0; i < n; ++i) {
    if (x[i] < 0.0) x[i] = 0.0;
  }
}

// dx masked by the post-activation values (0 where the unit was clamped)
inline void relu_backward(int n, const double* y, double* dy) {
  for (int i = 0; i < n; ++i) {
    if (y[i] <= 0.0) dy[i] = 0.0;
  }
}

inline void global_average_pool(int c, int h, int w, const double* x,
                                double* y) {
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ic = 0; ic < c; ++ic) {
    double acc = 0.0;
    const double* xc = x + static_cast<std::size_t>(ic) * h * w;
    for (int i = 0; i < h * w; ++i) acc += xc[i];
    y[ic] = acc * inv;
  }
}

inline void global_average_pool_backward(int c, int h, int w, const double* dy,
                                         double* dx) {
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ic = 0; ic < c; ++ic) {
    const double g = dy[ic] * inv;
    double* dxc = dx + static_cast<std::size_t>(ic) * h * w;
    for (int i = 0; i < h * w; ++i) dxc[i] += g;
  }
}

// Uniform Glorot-style init from the project Rng so equal seeds give
// bit-identical parameter vectors on any toolchain.
inline void init_tensor(Rng& rng, double* p, int count, int fan_in,
                        int fan_out, bool is_bias) {
  if (is_bias) {
    for (int i = 0; i < count; ++i) p[i] = 0.0;
    return;
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int i = 0; i < count; ++i) p[i] = rng.uniform(-bound, bound);
}

}  // namespace nn
}  // namespace moe
