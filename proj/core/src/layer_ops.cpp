#include "layer_ops.hpp"

#include <cmath>
#include <cstring>

namespace xagg::detail {

void im2col(const double* in, const ConvGeom& g, double* col) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::int64_t n_cols = g.cols();
  for (int c = 0; c < g.in_c; ++c) {
    const double* plane = in + std::int64_t(c) * g.in_h * g.in_w;
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        double* row = col + (std::int64_t(c) * g.kh * g.kw + dy * g.kw + dx) * n_cols;
        for (int y = 0; y < oh; ++y) {
          const double* src = plane + std::int64_t(y + dy) * g.in_w + dx;
          std::memcpy(row + std::int64_t(y) * ow, src, sizeof(double) * ow);
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* in_grad) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::int64_t n_cols = g.cols();
  for (int c = 0; c < g.in_c; ++c) {
    double* plane = in_grad + std::int64_t(c) * g.in_h * g.in_w;
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        const double* row = col + (std::int64_t(c) * g.kh * g.kw + dy * g.kw + dx) * n_cols;
        for (int y = 0; y < oh; ++y) {
          double* dst = plane + std::int64_t(y + dy) * g.in_w + dx;
          const double* src = row + std::int64_t(y) * ow;
          for (int x = 0; x < ow; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

void conv_forward(const double* weight, const double* bias, const double* in,
                  const ConvGeom& g, double* out, double* col_scratch) {
  im2col(in, g, col_scratch);
  CMapRM w(weight, g.out_c, g.patch());
  CMapRM col(col_scratch, g.patch(), g.cols());
  MapRM o(out, g.out_c, g.cols());
  o.noalias() = w * col;
  if (bias != nullptr) {
    for (int oc = 0; oc < g.out_c; ++oc) o.row(oc).array() += bias[oc];
  }
}

void conv_input_vjp(const double* weight, const double* dout, const ConvGeom& g,
                    double* din, double* col_scratch) {
  CMapRM w(weight, g.out_c, g.patch());
  CMapRM dm(dout, g.out_c, g.cols());
  MapRM dcol(col_scratch, g.patch(), g.cols());
  dcol.noalias() = w.transpose() * dm;
  std::memset(din, 0, sizeof(double) * g.in_count());
  col2im_add(col_scratch, g, din);
}

void conv_param_grad_add(const double* dout, const double* in, const ConvGeom& g,
                         double* dweight, double* dbias, double* col_scratch) {
  im2col(in, g, col_scratch);
  CMapRM col(col_scratch, g.patch(), g.cols());
  CMapRM dm(dout, g.out_c, g.cols());
  MapRM dw(dweight, g.out_c, g.patch());
  dw.noalias() += dm * col.transpose();
  for (int oc = 0; oc < g.out_c; ++oc) dbias[oc] += dm.row(oc).sum();
}

void dense_forward(const double* weight, const double* bias, const double* in,
                   int in_dim, int out_dim, double* out) {
  CMapRM w(weight, out_dim, in_dim);
  Eigen::Map<const Eigen::VectorXd> x(in, in_dim);
  Eigen::Map<Eigen::VectorXd> y(out, out_dim);
  y.noalias() = w * x;
  if (bias != nullptr) y += Eigen::Map<const Eigen::VectorXd>(bias, out_dim);
}

void dense_forward_nobias(const double* weight, const double* in, int in_dim,
                          int out_dim, double* out) {
  dense_forward(weight, nullptr, in, in_dim, out_dim, out);
}

void dense_input_vjp(const double* weight, const double* dout, int in_dim,
                     int out_dim, double* din) {
  CMapRM w(weight, out_dim, in_dim);
  Eigen::Map<const Eigen::VectorXd> dy(dout, out_dim);
  Eigen::Map<Eigen::VectorXd> dx(din, in_dim);
  dx.noalias() = w.transpose() * dy;
}

void maxpool_forward(const double* in, int c, int h, int w, int ph, int pw,
                     double* out, std::int32_t* argmax) {
  const int oh = h / ph, ow = w / pw;
  std::int64_t j = 0;
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in + std::int64_t(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++j) {
        std::int64_t best = std::int64_t(ch) * h * w + std::int64_t(oy * ph) * w + ox * pw;
        double best_v = in[best];
        for (int dy = 0; dy < ph; ++dy) {
          for (int dx = 0; dx < pw; ++dx) {
            std::int64_t idx = std::int64_t(ch) * h * w + std::int64_t(oy * ph + dy) * w + (ox * pw + dx);
            if (in[idx] > best_v) {
              best_v = in[idx];
              best = idx;
            }
          }
        }
        out[j] = best_v;
        argmax[j] = static_cast<std::int32_t>(best);
      }
    }
    (void)plane;
  }
}

void maxpool_scatter_add(const double* dout, const std::int32_t* argmax,
                         std::int64_t out_count, double* din) {
  for (std::int64_t j = 0; j < out_count; ++j) din[argmax[j]] += dout[j];
}

void maxpool_gather(const double* g_in_space, const std::int32_t* argmax,
                    std::int64_t out_count, double* out) {
  for (std::int64_t j = 0; j < out_count; ++j) out[j] = g_in_space[argmax[j]];
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus_value(double z, double beta) {
  const double t = beta * z;
  return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / beta;
}

}  // namespace xagg::detail
