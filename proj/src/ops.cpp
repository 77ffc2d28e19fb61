// Copyright 2026 The FFR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ffr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>

namespace ffr {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

std::vector<double>& grad_of(TensorImpl* t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": " + what + " is undefined");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined()) throw DimensionError(std::string(op) + ": undefined operand");
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* dst = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.padding);
          double* row = dst + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.padding);
            row[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* src = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = dx + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const double* row = src + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(iw)] += row[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (kernel == 0) throw ConfigError("kernel size must be positive");
  if (extent + 2 * padding < kernel) {
    throw ConfigError("window of size " + std::to_string(kernel) + " does not fit extent " +
                      std::to_string(extent) + " with padding " + std::to_string(padding));
  }
  return (extent + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  const std::size_t batch = input.dim(0);
  const std::size_t filters = weight.dim(0);
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input " + shape_string(input.shape()) + " has " +
                         std::to_string(input.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: kernel must be square, got " + shape_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != filters) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(filters) + " filters");
  }
  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), stride, padding, 0, 0};
  g.out_h = conv_output_extent(g.height, g.kernel, stride, padding);
  g.out_w = conv_output_extent(g.width, g.kernel, stride, padding);

  const std::size_t k_rows = g.channels * g.kernel * g.kernel;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t in_stride = g.channels * g.height * g.width;
  const bool direct = g.kernel == 1 && stride == 1 && padding == 0;

  Tensor out({batch, filters, g.out_h, g.out_w});
  std::vector<double> cols(direct ? 0 : k_rows * plane);
  ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(filters),
                   static_cast<Eigen::Index>(k_rows));
  const auto P = static_cast<Eigen::Index>(plane);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = input.data().data() + b * in_stride;
    const double* colp = xb;
    if (!direct) {
      im2col(xb, g, cols.data());
      colp = cols.data();
    }
    MatrixMap y(out.data().data() + b * filters * plane, static_cast<Eigen::Index>(filters), P);
    y.noalias() = w * ConstMatrixMap(colp, static_cast<Eigen::Index>(k_rows), P);
    if (bias.defined()) {
      for (std::size_t f = 0; f < filters; ++f) y.row(static_cast<Eigen::Index>(f)).array() += bias[f];
    }
  }

  if (should_record({&input, &weight, &bias})) {
    TensorImpl* xi = input.impl();
    TensorImpl* wi = weight.impl();
    TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* yi = out.impl();
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    Tape::active().record(out, inputs, [=]() {
      const std::vector<double>& gy = yi->grad;
      std::vector<double> cbuf(direct ? 0 : k_rows * plane);
      std::vector<double> dcols(xi->requires_grad ? k_rows * plane : 0);
      ConstMatrixMap wm(wi->data.data(), static_cast<Eigen::Index>(filters),
                        static_cast<Eigen::Index>(k_rows));
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMatrixMap dy(gy.data() + b * filters * plane, static_cast<Eigen::Index>(filters), P);
        const double* xb = xi->data.data() + b * in_stride;
        if (wi->requires_grad) {
          const double* colp = xb;
          if (!direct) {
            im2col(xb, g, cbuf.data());
            colp = cbuf.data();
          }
          MatrixMap dw(grad_of(wi).data(), static_cast<Eigen::Index>(filters),
                       static_cast<Eigen::Index>(k_rows));
          dw.noalias() += dy * ConstMatrixMap(colp, static_cast<Eigen::Index>(k_rows), P).transpose();
        }
        if (xi->requires_grad) {
          double* dxb = grad_of(xi).data() + b * in_stride;
          if (direct) {
            MatrixMap dx(dxb, static_cast<Eigen::Index>(k_rows), P);
            dx.noalias() += wm.transpose() * dy;
          } else {
            MatrixMap dc(dcols.data(), static_cast<Eigen::Index>(k_rows), P);
            dc.noalias() = wm.transpose() * dy;
            col2im_add(dcols.data(), g, dxb);
          }
        }
        if (bi && bi->requires_grad) {
          std::vector<double>& db = grad_of(bi);
          for (std::size_t f = 0; f < filters; ++f) {
            const double* row = gy.data() + (b * filters + f) * plane;
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += row[p];
            db[f] += s;
          }
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::size_t batch = input.dim(0), in_features = input.dim(1), out_features = weight.dim(0);
  if (weight.dim(1) != in_features) {
    throw DimensionError("linear: input " + shape_string(input.shape()) +
                         " does not match weight " + shape_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_features) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(out_features) + " outputs");
  }
  const auto B = static_cast<Eigen::Index>(batch);
  const auto D = static_cast<Eigen::Index>(in_features);
  const auto O = static_cast<Eigen::Index>(out_features);
  Tensor out({batch, out_features});
  MatrixMap y(out.data().data(), B, O);
  ConstMatrixMap x(input.data().data(), B, D);
  ConstMatrixMap w(weight.data().data(), O, D);
  y.noalias() = x * w.transpose();
  if (bias.defined()) {
    for (Eigen::Index o = 0; o < O; ++o) y.col(o).array() += bias[static_cast<std::size_t>(o)];
  }
  if (should_record({&input, &weight, &bias})) {
    TensorImpl* xi = input.impl();
    TensorImpl* wi = weight.impl();
    TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* yi = out.impl();
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    Tape::active().record(out, inputs, [=]() {
      ConstMatrixMap dy(yi->grad.data(), B, O);
      if (xi->requires_grad) {
        MatrixMap dx(grad_of(xi).data(), B, D);
        dx.noalias() += dy * ConstMatrixMap(wi->data.data(), O, D);
      }
      if (wi->requires_grad) {
        MatrixMap dw(grad_of(wi).data(), O, D);
        dw.noalias() += dy.transpose() * ConstMatrixMap(xi->data.data(), B, D);
      }
      if (bi && bi->requires_grad) {
        std::vector<double>& db = grad_of(bi);
        for (Eigen::Index b = 0; b < B; ++b) {
          for (Eigen::Index o = 0; o < O; ++o) db[static_cast<std::size_t>(o)] += dy(b, o);
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode, double eps, double momentum) {
  require_rank(input, 4, "batchnorm2d", "input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  const std::size_t count = batch * hw;
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw DimensionError("batchnorm2d: affine parameters do not match " +
                         std::to_string(channels) + " channels");
  }
  if (state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw DimensionError("batchnorm2d: running statistics do not match " +
                         std::to_string(channels) + " channels");
  }
  const bool training = mode == Mode::Train;
  if (training && count < 2) {
    throw ConfigError("batchnorm2d: training needs at least 2 values per channel, got " +
                      std::to_string(count));
  }

  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  Tensor out(input.shape());
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / static_cast<double>(count);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] +
                             momentum * ss / static_cast<double>(count - 1);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    const double gc = gamma[c], bc = beta[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double h = (x[off + i] - mean) * is;
        (*xhat)[off + i] = h;
        y[off + i] = gc * h + bc;
      }
    }
  }

  if (should_record({&input, &gamma, &beta})) {
    TensorImpl* xi = input.impl();
    TensorImpl* gi = gamma.impl();
    TensorImpl* bi = beta.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {input, gamma, beta}, [=]() {
      const std::vector<double>& dy = yi->grad;
      const auto m = static_cast<double>(count);
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_dy += dy[off + i];
            sum_dy_xhat += dy[off + i] * (*xhat)[off + i];
          }
        }
        if (gi->requires_grad) grad_of(gi)[c] += sum_dy_xhat;
        if (bi->requires_grad) grad_of(bi)[c] += sum_dy;
        if (!xi->requires_grad) continue;
        std::vector<double>& dx = grad_of(xi);
        const double gc = gi->data[c];
        const double is = (*inv_std)[c];
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            if (training) {
              dx[off + i] += gc * is / m *
                             (m * dy[off + i] - sum_dy - (*xhat)[off + i] * sum_dy_xhat);
            } else {
              dx[off + i] += gc * is * dy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& dx = grad_of(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xi->data[i] > 0.0) dx[i] += yi->grad[i];
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "maxpool2d", "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_output_extent(h, kernel, stride, 0);
  const std::size_t ow = conv_output_extent(w, kernel, stride, 0);
  Tensor out({batch, channels, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const double* xs = x.data().data();
  double* ys = out.data().data();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = bc * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + (i * stride) * w + j * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = base + (i * stride + ki) * w + j * stride + kj;
            if (xs[idx] > xs[best]) best = idx;
          }
        }
        ys[o] = xs[best];
        (*argmax)[o] = best;
      }
    }
  }
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& dx = grad_of(xi);
      for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += yi->grad[i];
    });
  }
  return out;
}

Tensor global_avgpool(const Tensor& x) {
  require_rank(x, 4, "global_avgpool", "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({batch, channels});
  const double* xs = x.data().data();
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xs[bc * hw + i];
    out[bc] = s / static_cast<double>(hw);
  }
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& dx = grad_of(xi);
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double g = yi->grad[bc] * inv;
        for (std::size_t i = 0; i < hw; ++i) dx[bc * hw + i] += g;
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  if (!x.defined() || x.rank() < 1) throw DimensionError("flatten: input must have a batch axis");
  const std::size_t batch = x.dim(0);
  const std::size_t rest = batch ? x.numel() / batch : 0;
  Tensor out({batch, rest}, std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& dx = grad_of(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += yi->grad[i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto as = a.data(), bs = b.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  if (should_record({&a, &b})) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {a, b}, [=]() {
      for (TensorImpl* t : {ai, bi}) {
        if (!t->requires_grad) continue;
        std::vector<double>& d = grad_of(t);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += yi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto as = a.data(), bs = b.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] - bs[i];
  if (should_record({&a, &b})) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {a, b}, [=]() {
      if (ai->requires_grad) {
        std::vector<double>& d = grad_of(ai);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += yi->grad[i];
      }
      if (bi->requires_grad) {
        std::vector<double>& d = grad_of(bi);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= yi->grad[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = factor * xs[i];
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& d = grad_of(xi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * yi->grad[i];
    });
  }
  return out;
}

Tensor l1_norm(const Tensor& x) {
  if (!x.defined()) throw DimensionError("l1_norm: undefined operand");
  double s = 0.0;
  for (double v : x.data()) s += std::abs(v);
  Tensor out = Tensor::scalar(s);
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      const double g = yi->grad[0];
      std::vector<double>& d = grad_of(xi);
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = xi->data[i];
        if (v > 0.0) {
          d[i] += g;
        } else if (v < 0.0) {
          d[i] -= g;
        }
      }
    });
  }
  return out;
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  const std::size_t n = prediction.numel();
  if (n == 0) throw DimensionError("mse: empty operands");
  double s = 0.0;
  auto p = prediction.data(), t = target.data();
  for (std::size_t i = 0; i < n; ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (should_record({&prediction, &target})) {
    TensorImpl* pi = prediction.impl();
    TensorImpl* ti = target.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {prediction, target}, [=]() {
      const double g = 2.0 * yi->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = pi->data[i] - ti->data[i];
        if (pi->requires_grad) grad_of(pi)[i] += g * r;
        if (ti->requires_grad) grad_of(ti)[i] -= g * r;
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for a batch of " + std::to_string(batch));
  }
  if (batch == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const double* z = logits.data().data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(label) +
                           " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = z + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double se = 0.0;
    for (std::size_t k = 0; k < classes; ++k) se += std::exp(row[k] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t k = 0; k < classes; ++k) (*probs)[b * classes + k] = std::exp(row[k] - lse);
    total += lse - row[static_cast<std::size_t>(label)];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  if (should_record({&logits})) {
    TensorImpl* zi = logits.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {logits}, [=]() {
      const double g = yi->grad[0] / static_cast<double>(batch);
      std::vector<double>& d = grad_of(zi);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < classes; ++k) {
          double p = (*probs)[b * classes + k];
          if (static_cast<int>(k) == (*lab)[b]) p -= 1.0;
          d[b * classes + k] += g * p;
        }
      }
    });
  }
  return out;
}

Tensor scatter_channels(const Tensor& x, std::span<const std::size_t> positions,
                        std::size_t width) {
  require_rank(x, 4, "scatter_channels", "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (positions.size() != channels) {
    throw DimensionError("scatter_channels: " + std::to_string(positions.size()) +
                         " positions for " + std::to_string(channels) + " channels");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= width || (i && positions[i] <= positions[i - 1])) {
      throw DimensionError("scatter_channels: positions must be increasing and below " +
                           std::to_string(width));
    }
  }
  auto pos = std::make_shared<std::vector<std::size_t>>(positions.begin(), positions.end());
  Tensor out({batch, width, x.dim(2), x.dim(3)});
  const double* xs = x.data().data();
  double* ys = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(xs + (b * channels + c) * hw, hw, ys + (b * width + (*pos)[c]) * hw);
    }
  }
  if (should_record({&x})) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = out.impl();
    Tape::active().record(out, {x}, [=]() {
      std::vector<double>& d = grad_of(xi);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double* src = yi->grad.data() + (b * width + (*pos)[c]) * hw;
          double* dst = d.data() + (b * channels + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

}  // namespace ffr
