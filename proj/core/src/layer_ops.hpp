#pragma once

// Internal dense/conv/pool primitives shared by the forward pass, the
// training loop, and the derivative sweeps. Not installed.

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace xagg::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

/// Valid-padding, stride-1 convolution geometry for one image.
struct ConvGeom {
  int in_c, in_h, in_w;
  int out_c, kh, kw;
  int out_h() const { return in_h - kh + 1; }
  int out_w() const { return in_w - kw + 1; }
  int patch() const { return in_c * kh * kw; }             // K
  std::int64_t cols() const { return std::int64_t(out_h()) * out_w(); }
  std::int64_t in_count() const { return std::int64_t(in_c) * in_h * in_w; }
  std::int64_t out_count() const { return std::int64_t(out_c) * out_h() * out_w(); }
};

/// col is K x (out_h*out_w), row-major: row (c,dy,dx), column (y,x).
void im2col(const double* in, const ConvGeom& g, double* col);

/// Transpose of im2col: scatter-adds col back onto the input grid.
void col2im_add(const double* col, const ConvGeom& g, double* in_grad);

/// out = W * patches(in) (+ bias). col_scratch must hold K*cols() doubles.
void conv_forward(const double* weight, const double* bias, const double* in,
                  const ConvGeom& g, double* out, double* col_scratch);

/// din = W^T routed back through the patch structure (weights only).
/// din is overwritten.
void conv_input_vjp(const double* weight, const double* dout, const ConvGeom& g,
                    double* din, double* col_scratch);

/// Accumulates dW += dout * patches(in)^T and db += row sums of dout.
void conv_param_grad_add(const double* dout, const double* in, const ConvGeom& g,
                         double* dweight, double* dbias, double* col_scratch);

void dense_forward(const double* weight, const double* bias, const double* in,
                   int in_dim, int out_dim, double* out);
void dense_forward_nobias(const double* weight, const double* in, int in_dim,
                          int out_dim, double* out);
void dense_input_vjp(const double* weight, const double* dout, int in_dim,
                     int out_dim, double* din);

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped. argmax records, per output cell, the flat index of
/// the winning input element.
void maxpool_forward(const double* in, int c, int h, int w, int ph, int pw,
                     double* out, std::int32_t* argmax);
/// Scatter: din[argmax[j]] += dout[j]; din must be zero-filled by caller.
void maxpool_scatter_add(const double* dout, const std::int32_t* argmax,
                         std::int64_t out_count, double* din);
/// Gather (transpose of scatter): out[j] = g[argmax[j]].
void maxpool_gather(const double* g_in_space, const std::int32_t* argmax,
                    std::int64_t out_count, double* out);

/// Stable logistic sigmoid.
double sigmoid(double z);
/// Stable softplus with sharpness beta: (1/beta) * log(1 + exp(beta*z)).
double softplus_value(double z, double beta);

}  // namespace xagg::detail
