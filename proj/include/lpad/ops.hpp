#pragma once

#include <span>

#include "lpad/graph.hpp"
#include "lpad/rng.hpp"

// Differentiable dense-array operations. Every op appends one node to the
// graph and registers its vector-Jacobian product. Rank-4 inputs are NCHW.
namespace lpad::ops {

template <typename T>
using Var = typename Graph<T>::Var;

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// Cross-correlation of x[N,C,H,W] with w[Co,C,kh,kw].
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Conv2dOptions opt);

/// Output extent of a convolution along one axis; may be < 1 for bad configs.
int conv_out_extent(int in, int kernel, int stride, int dilation, int padding);

/// Nearest-neighbour 2x upsampling of x[N,C,H,W].
template <typename T>
Var<T> upsample_nearest2x(Graph<T>& g, Var<T> x);

/// conv2d(upsample_nearest2x(x), w, padding 1) for a 3x3 kernel w, evaluated
/// without materializing the upsampled input: each of the four output phases
/// is a 2x2 convolution on x with taps folded from w.
template <typename T>
Var<T> upsample_conv3x3(Graph<T>& g, Var<T> x, Var<T> w);

/// Adds b[C] along axis 1 of x (rank 2 or 4).
template <typename T>
Var<T> add_channel_bias(Graph<T>& g, Var<T> x, Var<T> b);

/// y = x w^T for x[N,F], w[O,F].
template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w);

template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> x, Shape shape);

template <typename T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, double slope);

template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> x);

/// Softmax over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(Graph<T>& g, Var<T> x);

/// log(softmax(x)) over the last axis.
template <typename T>
Var<T> log_softmax(Graph<T>& g, Var<T> x);

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel standardization without affine terms. In train mode batch
/// statistics are used and the running estimates are updated in place
/// (unbiased variance, exponential momentum); eval mode only reads them.
template <typename T>
Var<T> batchnorm2d(Graph<T>& g, Var<T> x, Tensor<T>& running_mean, Tensor<T>& running_var,
                   bool train, BatchNormOptions opt = {});

/// Eval-mode batchnorm2d reading frozen statistics.
template <typename T>
Var<T> batchnorm2d_eval(Graph<T>& g, Var<T> x, const Tensor<T>& running_mean, const Tensor<T>& running_var,
                        BatchNormOptions opt = {});

/// Inverted dropout; identity in eval mode or at rate 0.
template <typename T>
Var<T> dropout(Graph<T>& g, Var<T> x, double rate, bool train, Rng& rng);

/// Mean of (a - b)^2 over every element.
template <typename T>
Var<T> mse_loss(Graph<T>& g, Var<T> a, Var<T> b);

inline constexpr double kBceClip = 1e-7;

/// -mean[y log p + alpha (1 - y) log(1 - p)] with p clipped to
/// [kBceClip, 1 - kBceClip]. Targets must be exactly 0 or 1.
template <typename T>
Var<T> weighted_bce(Graph<T>& g, Var<T> pred, Var<T> target, double alpha);

/// sum_n weight[n] * x[n, index[n]] for x[N,A].
template <typename T>
Var<T> pick_weighted_sum(Graph<T>& g, Var<T> x, std::span<const int> index,
                         std::span<const double> weight);

/// sum(x * c) for a constant c of the same shape.
template <typename T>
Var<T> dot(Graph<T>& g, Var<T> x, const Tensor<T>& c);

}  // namespace lpad::ops
