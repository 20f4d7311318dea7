#include "lpad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace lpad {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ConfigError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace lpad

namespace lpad::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int n, c, h, w;      // input
  int co, kh, kw;      // kernel
  int ho, wo;          // output
  int stride, dil, pad;
  int col_rows() const { return c * kh * kw; }
  int col_cols() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ow*stride - pad + off lies in [0, w).
inline void valid_cols(int off, const ConvGeom& g, int& lo, int& hi) {
  const int a = g.pad - off;  // need ow*stride >= a and ow*stride <= w - 1 + a
  lo = a <= 0 ? 0 : (a + g.stride - 1) / g.stride;
  const int b = g.w - 1 + a;
  hi = b < 0 ? 0 : std::min(g.wo, b / g.stride + 1);
  lo = std::min(lo, hi);
}

// Column matrix rows are `ld` elements apart so several samples can share one
// matrix side by side.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col, std::size_t ld) {
  for (int c = 0; c < g.c; ++c) {
    const T* src = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* dst = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * ld;
        int lo, hi;
        valid_cols(kj * g.dil, g, lo, hi);
        const int shift = kj * g.dil - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki * g.dil;
          T* row = dst + static_cast<std::size_t>(oh) * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(row, row + g.wo, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * g.w;
          std::fill(row, row + lo, T{0});
          if (g.stride == 1) {
            std::copy(srow + lo + shift, srow + hi + shift, row + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) row[ow] = srow[ow * g.stride + shift];
          }
          std::fill(row + hi, row + g.wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x, std::size_t ld) {
  for (int c = 0; c < g.c; ++c) {
    T* dst = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* srcc = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * ld;
        int lo, hi;
        valid_cols(kj * g.dil, g, lo, hi);
        const int shift = kj * g.dil - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki * g.dil;
          if (ih < 0 || ih >= g.h) continue;
          const T* row = srcc + static_cast<std::size_t>(oh) * g.wo;
          T* drow = dst + static_cast<std::size_t>(ih) * g.w;
          if (g.stride == 1) {
            T* d = drow + shift;
            for (int ow = lo; ow < hi; ++ow) d[ow] += row[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) drow[ow * g.stride + shift] += row[ow];
          }
        }
      }
    }
  }
}

ConvGeom make_geom(const Shape& xs, const Shape& ws, const Conv2dOptions& opt) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw ConfigError("conv2d expects rank-4 input and kernel, got " + shape_str(xs) + " and " +
                      shape_str(ws));
  }
  if (ws[1] != xs[1]) {
    throw ConfigError("conv2d channel mismatch: input " + shape_str(xs) + " vs kernel " +
                      shape_str(ws));
  }
  if (opt.dilation < 1 || opt.stride < 1 || opt.padding < 0) {
    throw ConfigError("conv2d requires stride >= 1, dilation >= 1, padding >= 0");
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, opt.stride, opt.dilation,
             opt.padding};
  g.ho = conv_out_extent(g.h, g.kh, g.stride, g.dil, g.pad);
  g.wo = conv_out_extent(g.w, g.kw, g.stride, g.dil, g.pad);
  if (g.ho < 1 || g.wo < 1) {
    throw ConfigError("conv2d output would be empty for input " + shape_str(xs) + " and kernel " +
                      shape_str(ws));
  }
  return g;
}

// Samples per GEMM: small spatial extents are batched so the matrix products
// stay large, while the column buffer stays around 16 MB.
inline int chunk_samples(const ConvGeom& g) {
  constexpr std::size_t kMaxColElems = std::size_t{1} << 22;
  const std::size_t per = static_cast<std::size_t>(g.col_rows()) * g.col_cols();
  return static_cast<int>(std::clamp<std::size_t>(kMaxColElems / std::max<std::size_t>(per, 1), 1, g.n));
}

template <typename T>
Tensor<T> conv_forward_raw(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  Tensor<T> y({g.n, g.co, g.ho, g.wo});
  const int chunk = chunk_samples(g);
  const std::size_t hw = g.col_cols();
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * hw * chunk);
  std::vector<T> ybuf(chunk > 1 ? static_cast<std::size_t>(g.co) * hw * chunk : 0);
  ConstMatMap<T> wm(w.data(), g.co, g.col_rows());
  const std::size_t xstride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t ystride = static_cast<std::size_t>(g.co) * hw;
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nb = std::min(chunk, g.n - n0);
    const std::size_t ld = hw * nb;
    for (int j = 0; j < nb; ++j) im2col(x.data() + (n0 + j) * xstride, g, col.data() + j * hw, ld);
    ConstMatMap<T> cm(col.data(), g.col_rows(), ld);
    if (nb == 1) {
      MatMap<T> ym(y.data() + n0 * ystride, g.co, ld);
      ym.noalias() = wm * cm;
      continue;
    }
    MatMap<T> ym(ybuf.data(), g.co, ld);
    ym.noalias() = wm * cm;
    for (int j = 0; j < nb; ++j)
      for (int o = 0; o < g.co; ++o) {
        const T* src = ybuf.data() + o * ld + j * hw;
        std::copy(src, src + hw, y.data() + (n0 + j) * ystride + o * hw);
      }
  }
  return y;
}

// Accumulates into dx and dw when non-null.
template <typename T>
void conv_backward_raw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeom& g,
                       Tensor<T>* dx, Tensor<T>* dw) {
  const int chunk = chunk_samples(g);
  const std::size_t hw = g.col_cols();
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * hw * chunk);
  std::vector<T> dybuf(chunk > 1 ? static_cast<std::size_t>(g.co) * hw * chunk : 0);
  ConstMatMap<T> wm(w.data(), g.co, g.col_rows());
  const std::size_t xstride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t ystride = static_cast<std::size_t>(g.co) * hw;
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nb = std::min(chunk, g.n - n0);
    const std::size_t ld = hw * nb;
    const T* dyp = dy.data() + n0 * ystride;
    if (nb > 1) {
      for (int j = 0; j < nb; ++j)
        for (int o = 0; o < g.co; ++o) {
          const T* src = dy.data() + (n0 + j) * ystride + o * hw;
          std::copy(src, src + hw, dybuf.data() + o * ld + j * hw);
        }
      dyp = dybuf.data();
    }
    ConstMatMap<T> dym(dyp, g.co, ld);
    if (dw != nullptr) {
      for (int j = 0; j < nb; ++j) im2col(x.data() + (n0 + j) * xstride, g, col.data() + j * hw, ld);
      ConstMatMap<T> cm(col.data(), g.col_rows(), ld);
      MatMap<T> dwm(dw->data(), g.co, g.col_rows());
      dwm.noalias() += dym * cm.transpose();
    }
    if (dx != nullptr) {
      MatMap<T> cm(col.data(), g.col_rows(), ld);
      cm.noalias() = wm.transpose() * dym;
      for (int j = 0; j < nb; ++j) col2im_add(col.data() + j * hw, g, dx->data() + (n0 + j) * xstride, ld);
    }
  }
}

// Output-phase tap folding for upsample_conv3x3: kernel row ki of a 3x3
// kernel lands on low-resolution tap (ki + 1 - phase) / 2.
inline int fold_tap(int phase, int k) { return (k + 1 - phase) / 2; }

template <typename T>
Tensor<T> fold_phase_kernels(const Tensor<T>& w) {
  const int co = w.dim(0), ci = w.dim(1);
  Tensor<T> k({4 * co, ci, 2, 2});
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int o = 0; o < co; ++o)
        for (int c = 0; c < ci; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj)
              k.at((a * 2 + b) * co + o, c, fold_tap(a, ki), fold_tap(b, kj)) += w.at(o, c, ki, kj);
  return k;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int dilation, int padding) {
  const int span = dilation * (kernel - 1) + 1;
  const int room = in + 2 * padding - span;
  if (room < 0) return 0;
  return room / stride + 1;
}

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Conv2dOptions opt) {
  const ConvGeom geom = make_geom(g.value(x).shape(), g.value(w).shape(), opt);
  Tensor<T> y = conv_forward_raw(g.value(x), g.value(w), geom);
  return g.record(std::move(y), {x, w}, [x, w, geom](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    Tensor<T>* dx = gr.requires_grad(x) ? &gr.grad_ref(x) : nullptr;
    Tensor<T>* dw = gr.requires_grad(w) ? &gr.grad_ref(w) : nullptr;
    conv_backward_raw(gr.value(x), gr.value(w), dy, geom, dx, dw);
  });
}

template <typename T>
Var<T> upsample_nearest2x(Graph<T>& g, Var<T> x) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() != 4) throw ConfigError("upsample expects rank-4 input, got " + shape_str(xv.shape()));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor<T> y({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < 2 * h; ++r)
        for (int s = 0; s < 2 * w; ++s) y.at(i, ch, r, s) = xv.at(i, ch, r / 2, s / 2);
  return g.record(std::move(y), {x}, [x, n, c, h, w](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < 2 * h; ++r)
          for (int s = 0; s < 2 * w; ++s) dx.at(i, ch, r / 2, s / 2) += dy.at(i, ch, r, s);
  });
}

template <typename T>
Var<T> upsample_conv3x3(Graph<T>& g, Var<T> x, Var<T> w) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  if (wv.rank() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3) {
    throw ConfigError("upsample_conv3x3 expects a 3x3 kernel, got " + shape_str(wv.shape()));
  }
  const Tensor<T> kernels = fold_phase_kernels(wv);
  const ConvGeom geom = make_geom(xv.shape(), kernels.shape(), Conv2dOptions{1, 1, 1});
  const Tensor<T> z = conv_forward_raw(xv, kernels, geom);
  const int n = geom.n, co = wv.dim(0), h = geom.h, wd = geom.w;
  Tensor<T> y({n, co, 2 * h, 2 * wd});
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int o = 0; o < co; ++o)
          for (int r = 0; r < h; ++r)
            for (int s = 0; s < wd; ++s)
              y.at(i, o, 2 * r + a, 2 * s + b) = z.at(i, (a * 2 + b) * co + o, r + a, s + b);
  return g.record(std::move(y), {x, w}, [x, w, geom, co](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    const int n = geom.n, h = geom.h, wd = geom.w;
    Tensor<T> dz({n, 4 * co, h + 1, wd + 1});
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int o = 0; o < co; ++o)
            for (int r = 0; r < h; ++r)
              for (int s = 0; s < wd; ++s)
                dz.at(i, (a * 2 + b) * co + o, r + a, s + b) = dy.at(i, o, 2 * r + a, 2 * s + b);
    const Tensor<T>& wv = gr.value(w);
    const Tensor<T> kernels = fold_phase_kernels(wv);
    Tensor<T>* dx = gr.requires_grad(x) ? &gr.grad_ref(x) : nullptr;
    Tensor<T> dk;
    if (gr.requires_grad(w)) dk = Tensor<T>(kernels.shape());
    conv_backward_raw(gr.value(x), kernels, dz, geom, dx, dk.empty() ? nullptr : &dk);
    if (!dk.empty()) {
      Tensor<T>& dw = gr.grad_ref(w);
      const int ci = wv.dim(1);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int o = 0; o < co; ++o)
            for (int c = 0; c < ci; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj)
                  dw.at(o, c, ki, kj) += dk.at((a * 2 + b) * co + o, c, fold_tap(a, ki), fold_tap(b, kj));
    }
  });
}

template <typename T>
Var<T> add_channel_bias(Graph<T>& g, Var<T> x, Var<T> b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& bv = g.value(b);
  if ((xv.rank() != 2 && xv.rank() != 4) || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw ConfigError("bias " + shape_str(bv.shape()) + " does not match input " + shape_str(xv.shape()));
  }
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t inner = xv.size() / (static_cast<std::size_t>(n) * c);
  Tensor<T> y = xv;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* p = y.data() + (static_cast<std::size_t>(i) * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] += bv[ch];
    }
  return g.record(std::move(y), {x, b}, [x, b, n, c, inner](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    if (gr.requires_grad(x)) {
      Tensor<T>& dx = gr.grad_ref(x);
      for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& db = gr.grad_ref(b);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const T* p = dy.data() + (static_cast<std::size_t>(i) * c + ch) * inner;
          T s{0};
          for (std::size_t k = 0; k < inner; ++k) s += p[k];
          db[ch] += s;
        }
    }
  });
}

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ConfigError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                      shape_str(wv.shape()));
  }
  const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor<T> y({n, o});
  MatMap<T>(y.data(), n, o).noalias() =
      ConstMatMap<T>(xv.data(), n, f) * ConstMatMap<T>(wv.data(), o, f).transpose();
  return g.record(std::move(y), {x, w}, [x, w, n, f, o](Graph<T>& gr, int self) {
    ConstMatMap<T> dy(gr.grad_ref(self).data(), n, o);
    if (gr.requires_grad(x)) {
      MatMap<T>(gr.grad_ref(x).data(), n, f).noalias() += dy * ConstMatMap<T>(gr.value(w).data(), o, f);
    }
    if (gr.requires_grad(w)) {
      MatMap<T>(gr.grad_ref(w).data(), o, f).noalias() +=
          dy.transpose() * ConstMatMap<T>(gr.value(x).data(), n, f);
    }
  });
}

template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> x, Shape shape) {
  Tensor<T> y = g.value(x).reshaped(std::move(shape));
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
  });
}

template <typename T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu slope must lie in (0,1)");
  const T s = static_cast<T>(slope);
  Tensor<T> y = g.value(x);
  for (auto& v : y.values()) v = v > T{0} ? v : s * v;
  return g.record(std::move(y), {x}, [x, s](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    const Tensor<T>& xv = gr.value(x);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += xv[k] > T{0} ? dy[k] : s * dy[k];
  });
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> x) {
  Tensor<T> y = g.value(x);
  for (auto& v : y.values()) {
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    const Tensor<T>& yv = gr.value(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k] * yv[k] * (T{1} - yv[k]);
  });
}

namespace {

template <typename T>
void row_softmax(const T* in, T* out, int cols) {
  T mx = in[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  T sum{0};
  for (int j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (int j = 0; j < cols; ++j) out[j] /= sum;
}

}  // namespace

template <typename T>
Var<T> softmax(Graph<T>& g, Var<T> x) {
  const Tensor<T>& xv = g.value(x);
  const int cols = xv.dim(-1);
  const std::size_t rows = xv.size() / cols;
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) row_softmax(xv.data() + r * cols, y.data() + r * cols, cols);
  return g.record(std::move(y), {x}, [x, rows, cols](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    const Tensor<T>& saved = gr.value(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T inner{0};
      for (int j = 0; j < cols; ++j) inner += dy[o + j] * saved[o + j];
      for (int j = 0; j < cols; ++j) dx[o + j] += saved[o + j] * (dy[o + j] - inner);
    }
  });
}

template <typename T>
Var<T> log_softmax(Graph<T>& g, Var<T> x) {
  const Tensor<T>& xv = g.value(x);
  const int cols = xv.dim(-1);
  const std::size_t rows = xv.size() / cols;
  Tensor<T> y(xv.shape());
  Tensor<T> probs(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    T sum{0};
    for (int j = 0; j < cols; ++j) sum += std::exp(in[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < cols; ++j) {
      y[r * cols + j] = in[j] - lse;
      probs[r * cols + j] = std::exp(in[j] - lse);
    }
  }
  return g.record(std::move(y), {x}, [x, probs = std::move(probs), rows, cols](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T total{0};
      for (int j = 0; j < cols; ++j) total += dy[o + j];
      for (int j = 0; j < cols; ++j) dx[o + j] += dy[o + j] - probs[o + j] * total;
    }
  });
}

namespace {

template <typename T>
Var<T> batchnorm_impl(Graph<T>& g, Var<T> x, const Tensor<T>& running_mean, const Tensor<T>& running_var,
                      Tensor<T>* update_mean, Tensor<T>* update_var, bool train, BatchNormOptions opt) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() != 4) throw ConfigError("batchnorm2d expects rank-4 input, got " + shape_str(xv.shape()));
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  if (running_mean.size() != static_cast<std::size_t>(c) || running_var.size() != static_cast<std::size_t>(c)) {
    throw ConfigError("batchnorm2d running statistics do not match " + std::to_string(c) + " channels");
  }
  if (train && n < 2) throw ConfigError("batchnorm2d in train mode needs batch size >= 2");
  const double m = static_cast<double>(n) * static_cast<double>(hw);

  Tensor<T> y(xv.shape());
  std::vector<T> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      mean = s / m;
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) ss += (p[k] - mean) * (p[k] - mean);
      }
      var = ss / m;
      (*update_mean)[ch] = static_cast<T>((1.0 - opt.momentum) * running_mean[ch] + opt.momentum * mean);
      (*update_var)[ch] =
          static_cast<T>((1.0 - opt.momentum) * running_var[ch] + opt.momentum * var * m / (m - 1.0));
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + opt.eps);
    inv_std[ch] = static_cast<T>(is);
    for (int i = 0; i < n; ++i) {
      const std::size_t o = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) y[o + k] = static_cast<T>((xv[o + k] - mean) * is);
    }
  }
  Tensor<T> xhat = train ? y : Tensor<T>();
  return g.record(std::move(y), {x},
                  [x, train, n, c, hw, inv_std = std::move(inv_std), xhat = std::move(xhat)](Graph<T>& gr, int self) {
                    const Tensor<T>& dy = gr.grad_ref(self);
                    Tensor<T>& dx = gr.grad_ref(x);
                    const double m = static_cast<double>(n) * static_cast<double>(hw);
                    for (int ch = 0; ch < c; ++ch) {
                      double mdy = 0.0, mdyx = 0.0;
                      if (train) {
                        for (int i = 0; i < n; ++i) {
                          const std::size_t o = (static_cast<std::size_t>(i) * c + ch) * hw;
                          for (std::size_t k = 0; k < hw; ++k) {
                            mdy += dy[o + k];
                            mdyx += static_cast<double>(dy[o + k]) * xhat[o + k];
                          }
                        }
                        mdy /= m;
                        mdyx /= m;
                      }
                      const double is = inv_std[ch];
                      for (int i = 0; i < n; ++i) {
                        const std::size_t o = (static_cast<std::size_t>(i) * c + ch) * hw;
                        for (std::size_t k = 0; k < hw; ++k) {
                          const double xh = train ? static_cast<double>(xhat[o + k]) : 0.0;
                          dx[o + k] += static_cast<T>(is * (dy[o + k] - mdy - xh * mdyx));
                        }
                      }
                    }
                  });
}

}  // namespace

template <typename T>
Var<T> batchnorm2d(Graph<T>& g, Var<T> x, Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                   BatchNormOptions opt) {
  return batchnorm_impl(g, x, running_mean, running_var, &running_mean, &running_var, train, opt);
}

template <typename T>
Var<T> batchnorm2d_eval(Graph<T>& g, Var<T> x, const Tensor<T>& running_mean, const Tensor<T>& running_var,
                        BatchNormOptions opt) {
  return batchnorm_impl<T>(g, x, running_mean, running_var, nullptr, nullptr, false, opt);
}

template <typename T>
Var<T> dropout(Graph<T>& g, Var<T> x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  if (!train || rate == 0.0) return reshape(g, x, g.value(x).shape());
  const Tensor<T>& xv = g.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(xv.shape());
  Tensor<T> y(xv.shape());
  for (std::size_t k = 0; k < xv.size(); ++k) {
    mask[k] = rng.uniform() < rate ? T{0} : keep_scale;
    y[k] = xv[k] * mask[k];
  }
  return g.record(std::move(y), {x}, [x, mask = std::move(mask)](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad_ref(self);
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k] * mask[k];
  });
}

template <typename T>
Var<T> mse_loss(Graph<T>& g, Var<T> a, Var<T> b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_same_shape(av.shape(), bv.shape(), "mse_loss");
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double d = static_cast<double>(av[k]) - bv[k];
    s += d * d;
  }
  const double count = static_cast<double>(av.size());
  Tensor<T> y({1}, static_cast<T>(s / count));
  return g.record(std::move(y), {a, b}, [a, b, count](Graph<T>& gr, int self) {
    const double gs = gr.grad_ref(self)[0];
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    const double scale = 2.0 * gs / count;
    if (gr.requires_grad(a)) {
      Tensor<T>& da = gr.grad_ref(a);
      for (std::size_t k = 0; k < av.size(); ++k) da[k] += static_cast<T>(scale * (av[k] - bv[k]));
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& db = gr.grad_ref(b);
      for (std::size_t k = 0; k < av.size(); ++k) db[k] -= static_cast<T>(scale * (av[k] - bv[k]));
    }
  });
}

template <typename T>
Var<T> weighted_bce(Graph<T>& g, Var<T> pred, Var<T> target, double alpha) {
  const Tensor<T>& pv = g.value(pred);
  const Tensor<T>& yv = g.value(target);
  require_same_shape(pv.shape(), yv.shape(), "weighted_bce");
  for (std::size_t k = 0; k < yv.size(); ++k) {
    if (yv[k] != T{0} && yv[k] != T{1}) {
      throw ConfigError("weighted_bce target must be binary, found " + std::to_string(static_cast<double>(yv[k])));
    }
  }
  const double lo = kBceClip, hi = 1.0 - kBceClip;
  double s = 0.0;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const double p = std::clamp(static_cast<double>(pv[k]), lo, hi);
    s += yv[k] != T{0} ? std::log(p) : alpha * std::log(1.0 - p);
  }
  const double count = static_cast<double>(pv.size());
  Tensor<T> y({1}, static_cast<T>(-s / count));
  return g.record(std::move(y), {pred, target}, [pred, target, alpha, count, lo, hi](Graph<T>& gr, int self) {
    if (!gr.requires_grad(pred)) return;
    const double gs = gr.grad_ref(self)[0];
    const Tensor<T>& pv = gr.value(pred);
    const Tensor<T>& yv = gr.value(target);
    Tensor<T>& dp = gr.grad_ref(pred);
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const double p = pv[k];
      if (p < lo || p > hi) continue;
      const double d = yv[k] != T{0} ? -1.0 / p : alpha / (1.0 - p);
      dp[k] += static_cast<T>(gs * d / count);
    }
  });
}

template <typename T>
Var<T> pick_weighted_sum(Graph<T>& g, Var<T> x, std::span<const int> index, std::span<const double> weight) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() != 2 || index.size() != static_cast<std::size_t>(xv.dim(0)) || weight.size() != index.size()) {
    throw ConfigError("pick_weighted_sum: " + std::to_string(index.size()) + " picks for input " +
                      shape_str(xv.shape()));
  }
  const int cols = xv.dim(1);
  double s = 0.0;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= cols) throw ConfigError("pick_weighted_sum: index out of range");
    s += weight[r] * xv[r * cols + index[r]];
  }
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> wts(weight.begin(), weight.end());
  Tensor<T> y({1}, static_cast<T>(s));
  return g.record(std::move(y), {x}, [x, cols, idx = std::move(idx), wts = std::move(wts)](Graph<T>& gr, int self) {
    const double gs = gr.grad_ref(self)[0];
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t r = 0; r < idx.size(); ++r) dx[r * cols + idx[r]] += static_cast<T>(gs * wts[r]);
  });
}

template <typename T>
Var<T> dot(Graph<T>& g, Var<T> x, const Tensor<T>& c) {
  const Tensor<T>& xv = g.value(x);
  require_same_shape(xv.shape(), c.shape(), "dot");
  double s = 0.0;
  for (std::size_t k = 0; k < xv.size(); ++k) s += static_cast<double>(xv[k]) * c[k];
  Tensor<T> y({1}, static_cast<T>(s));
  return g.record(std::move(y), {x}, [x, c](Graph<T>& gr, int self) {
    const T gs = gr.grad_ref(self)[0];
    Tensor<T>& dx = gr.grad_ref(x);
    for (std::size_t k = 0; k < c.size(); ++k) dx[k] += gs * c[k];
  });
}

#define LPAD_INSTANTIATE_OPS(T)                                                                         \
  template Var<T> conv2d(Graph<T>&, Var<T>, Var<T>, Conv2dOptions);                                     \
  template Var<T> upsample_nearest2x(Graph<T>&, Var<T>);                                                \
  template Var<T> upsample_conv3x3(Graph<T>&, Var<T>, Var<T>);                                          \
  template Var<T> add_channel_bias(Graph<T>&, Var<T>, Var<T>);                                          \
  template Var<T> linear(Graph<T>&, Var<T>, Var<T>);                                                    \
  template Var<T> reshape(Graph<T>&, Var<T>, Shape);                                                    \
  template Var<T> leaky_relu(Graph<T>&, Var<T>, double);                                                \
  template Var<T> sigmoid(Graph<T>&, Var<T>);                                                           \
  template Var<T> softmax(Graph<T>&, Var<T>);                                                           \
  template Var<T> log_softmax(Graph<T>&, Var<T>);                                                       \
  template Var<T> batchnorm2d(Graph<T>&, Var<T>, Tensor<T>&, Tensor<T>&, bool, BatchNormOptions);       \
  template Var<T> batchnorm2d_eval(Graph<T>&, Var<T>, const Tensor<T>&, const Tensor<T>&, BatchNormOptions); \
  template Var<T> dropout(Graph<T>&, Var<T>, double, bool, Rng&);                                       \
  template Var<T> mse_loss(Graph<T>&, Var<T>, Var<T>);                                                  \
  template Var<T> weighted_bce(Graph<T>&, Var<T>, Var<T>, double);                                      \
  template Var<T> pick_weighted_sum(Graph<T>&, Var<T>, std::span<const int>, std::span<const double>); \
  template Var<T> dot(Graph<T>&, Var<T>, const Tensor<T>&);

LPAD_INSTANTIATE_OPS(float)
LPAD_INSTANTIATE_OPS(double)

}  // namespace lpad::ops
