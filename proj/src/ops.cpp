/*
 * Copyright DRNet Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "drnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "drnet/error.hpp"

namespace drnet {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

thread_local MacCounter* active_counter = nullptr;

Tensor* grad_target(const std::shared_ptr<GraphNode>& node) {
  return node->requires_grad ? &node->grad_buffer() : nullptr;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, hout, wout;
  int stride, pad;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return hout * wout; }
};

// cols is [cin*kh*kw, hout*wout] row-major for one sample.
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oh = 0; oh < g.hout; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride + static_cast<long>(i) - g.pad;
          double* out = row + oh * g.wout;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wout, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wout; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride + static_cast<long>(j) - g.pad;
            out[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oh = 0; oh < g.hout; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride + static_cast<long>(i) - g.pad;
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wout; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride + static_cast<long>(j) - g.pad;
            if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += row[oh * g.wout + ow];
          }
        }
      }
    }
  }
}

std::size_t output_extent(std::size_t in, std::size_t k, int stride, int pad, const char* op, const char* axis) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  if (stride <= 0) throw ConfigError(std::string(op) + ": stride must be positive");
  if (span < 0) {
    throw ConfigError(std::string(op) + ": window " + std::to_string(k) + " exceeds padded " + axis + " extent " +
                      std::to_string(in + 2 * static_cast<std::size_t>(pad)));
  }
  return static_cast<std::size_t>(span / stride + 1);
}

}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }
MacCounter::~MacCounter() { active_counter = previous_; }

void MacCounter::record(std::uint64_t macs) {
  if (active_counter) active_counter->total_ += macs;
}

Variable conv2d(const Variable& input, const Variable& weight, const std::optional<Variable>& bias, int stride,
                int padding) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: channel axis mismatch, input has " + std::to_string(x.dim(1)) +
                         " channels but weight expects " + std::to_string(w.dim(1)));
  }
  if (padding < 0) throw ConfigError("conv2d: negative padding");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, stride, padding};
  g.hout = output_extent(g.h, g.kh, stride, padding, "conv2d", "height");
  g.wout = output_extent(g.w, g.kw, stride, padding, "conv2d", "width");
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " +
                         shape_string(bias->value().shape()));
  }

  Tensor out({g.n, g.cout, g.hout, g.wout});
  std::vector<double> cols(g.patch() * g.pixels());
  ConstMatrixMap wm(w.raw(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
  ConstMatrixMap cm(cols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
  const std::size_t in_stride = g.cin * g.h * g.w;
  const std::size_t out_stride = g.cout * g.pixels();
  // Per-sample products keep each sample's arithmetic independent of N.
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x.raw() + n * in_stride, cols.data());
    MatrixMap om(out.raw() + n * out_stride, static_cast<long>(g.cout), static_cast<long>(g.pixels()));
    om.noalias() = wm * cm;
    if (bias) {
      for (std::size_t c = 0; c < g.cout; ++c) om.row(static_cast<long>(c)).array() += bias->value()[c];
    }
  }
  MacCounter::record(static_cast<std::uint64_t>(g.n) * g.cout * g.patch() * g.pixels());

  std::vector<Variable> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias ? bias->node() : nullptr;
  return make_op_result(std::move(out), std::move(inputs), [xn, wn, bn, g](const Tensor& dy) {
    Tensor* dx = grad_target(xn);
    Tensor* dw = grad_target(wn);
    Tensor* db = bn ? grad_target(bn) : nullptr;
    std::vector<double> cols(g.patch() * g.pixels());
    std::vector<double> dcols(dx ? cols.size() : 0);
    ConstMatrixMap wm(wn->value.raw(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
    ConstMatrixMap cm(cols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
    const std::size_t in_stride = g.cin * g.h * g.w;
    const std::size_t out_stride = g.cout * g.pixels();
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatrixMap gm(dy.raw() + n * out_stride, static_cast<long>(g.cout), static_cast<long>(g.pixels()));
      if (dw) {
        im2col(g, xn->value.raw() + n * in_stride, cols.data());
        MatrixMap dwm(dw->raw(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
        dwm.noalias() += gm * cm.transpose();
      }
      if (dx) {
        MatrixMap dcm(dcols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
        dcm.noalias() = wm.transpose() * gm;
        col2im_add(g, dcols.data(), dx->raw() + n * in_stride);
      }
      if (db) {
        for (std::size_t c = 0; c < g.cout; ++c) (*db)[c] += gm.row(static_cast<long>(c)).sum();
      }
    }
  });
}

Variable linear(const Variable& input, const Variable& weight, const Variable& bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("linear: inner dimension mismatch, input has " + std::to_string(x.dim(1)) +
                         " features but weight expects " + std::to_string(w.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw DimensionError("linear: bias must have shape [" + std::to_string(w.dim(0)) + "], got " +
                         shape_string(b.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  Tensor out({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.raw() + r * d;
    for (std::size_t o = 0; o < k; ++o) {
      const double* wr = w.raw() + o * d;
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += xr[i] * wr[i];
      out.at(r, o) = acc + b[o];
    }
  }
  MacCounter::record(static_cast<std::uint64_t>(n) * d * k);

  auto xn = input.node(), wn = weight.node(), bn = bias.node();
  return make_op_result(std::move(out), {input, weight, bias}, [xn, wn, bn, n, d, k](const Tensor& dy) {
    Tensor* dx = grad_target(xn);
    Tensor* dw = grad_target(wn);
    Tensor* db = grad_target(bn);
    const Tensor& x = xn->value;
    const Tensor& w = wn->value;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < k; ++o) {
        const double g = dy.at(r, o);
        if (g == 0.0) continue;
        if (dx) {
          for (std::size_t i = 0; i < d; ++i) (*dx)[r * d + i] += g * w[o * d + i];
        }
        if (dw) {
          for (std::size_t i = 0; i < d; ++i) (*dw)[o * d + i] += g * x[r * d + i];
        }
        if (db) (*db)[o] += g;
      }
    }
  });
}

Variable relu(const Variable& input) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xn = input.node();
  return make_op_result(std::move(out), {input}, [xn](const Tensor& dy) {
    Tensor* dx = grad_target(xn);
    if (!dx) return;
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      if (xn->value[i] > 0.0) (*dx)[i] += dy[i];
    }
  });
}

Variable max_pool2d(const Variable& input, int kernel, int stride, int padding) {
  const Tensor& x = input.value();
  require_rank(x, 4, "max_pool2d", "input");
  if (kernel <= 0) throw ConfigError("max_pool2d: kernel must be positive");
  if (padding < 0 || 2 * padding >= kernel + 1) {
    throw ConfigError("max_pool2d: padding " + std::to_string(padding) + " too large for kernel " +
                      std::to_string(kernel));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * static_cast<std::size_t>(padding) < static_cast<std::size_t>(kernel) ||
      w + 2 * static_cast<std::size_t>(padding) < static_cast<std::size_t>(kernel)) {
    throw ConfigError("max_pool2d: window " + std::to_string(kernel) + " larger than input " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  const std::size_t hout = output_extent(h, kernel, stride, padding, "max_pool2d", "height");
  const std::size_t wout = output_extent(w, kernel, stride, padding, "max_pool2d", "width");
  Tensor out({n, c, hout, wout});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.raw() + plane * h * w;
    for (std::size_t oh = 0; oh < hout; ++oh) {
      for (std::size_t ow = 0; ow < wout; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (int i = 0; i < kernel; ++i) {
          const long ih = static_cast<long>(oh) * stride + i - padding;
          if (ih < 0 || ih >= static_cast<long>(h)) continue;
          for (int j = 0; j < kernel; ++j) {
            const long iw = static_cast<long>(ow) * stride + j - padding;
            if (iw < 0 || iw >= static_cast<long>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * hout + oh) * wout + ow;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  auto xn = input.node();
  return make_op_result(std::move(out), {input}, [xn, argmax = std::move(argmax)](const Tensor& dy) {
    Tensor* dx = grad_target(xn);
    if (!dx) return;
    for (std::size_t o = 0; o < dy.numel(); ++o) (*dx)[argmax[o]] += dy[o];
  });
}

Variable global_avg_pool(const Variable& input) {
  const Tensor& x = input.value();
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  Tensor out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    const double* src = x.raw() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
    out[p] = acc / static_cast<double>(hw);
  }
  auto xn = input.node();
  return make_op_result(std::move(out), {input}, [xn, hw](const Tensor& dy) {
    Tensor* dx = grad_target(xn);
    if (!dx) return;
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < dy.numel(); ++p) {
      double* dst = dx->raw() + p * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += dy[p] * inv;
    }
  });
}

namespace {

Tensor row_softmax(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.raw() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) out.at(r, j) = std::exp(z[j] - zmax) / denom;
  }
  return out;
}

}  // namespace

Variable softmax_cross_entropy(const Variable& logits, std::span<const int> targets) {
  const Tensor& z = logits.value();
  require_rank(z, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (targets.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(n));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[r]) + " at row " +
                       std::to_string(r) + " outside [0," + std::to_string(k) + ")");
    }
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.raw() + r * k;
    const double zmax = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - zmax);
    loss += std::log(denom) + zmax - row[targets[r]];
  }
  loss /= static_cast<double>(n);

  auto zn = logits.node();
  std::vector<int> labels(targets.begin(), targets.end());
  return make_op_result(Tensor({1}, {loss}), {logits}, [zn, labels = std::move(labels)](const Tensor& dy) {
    Tensor* dz = grad_target(zn);
    if (!dz) return;
    const Tensor p = row_softmax(zn->value);
    const std::size_t n = p.dim(0), k = p.dim(1);
    const double g = dy[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
        dz->at(r, j) += g * (p.at(r, j) - onehot);
      }
    }
  });
}

Variable softmax_rows(const Variable& logits) {
  require_rank(logits.value(), 2, "softmax_rows", "logits");
  Tensor p = row_softmax(logits.value());
  auto zn = logits.node();
  Tensor saved = p;
  return make_op_result(std::move(p), {logits}, [zn, saved = std::move(saved)](const Tensor& dy) {
    Tensor* dz = grad_target(zn);
    if (!dz) return;
    const std::size_t n = saved.dim(0), k = saved.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += dy.at(r, j) * saved.at(r, j);
      for (std::size_t j = 0; j < k; ++j) dz->at(r, j) += saved.at(r, j) * (dy.at(r, j) - dot);
    }
  });
}

Variable add(const Variable& a, const Variable& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  accumulate_into(out, b.value());
  auto an = a.node(), bn = b.node();
  return make_op_result(std::move(out), {a, b}, [an, bn](const Tensor& dy) {
    if (Tensor* da = grad_target(an)) accumulate_into(*da, dy);
    if (Tensor* db = grad_target(bn)) accumulate_into(*db, dy);
  });
}

Variable scale(const Variable& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  auto an = a.node();
  return make_op_result(std::move(out), {a}, [an, factor](const Tensor& dy) {
    if (Tensor* da = grad_target(an)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*da)[i] += factor * dy[i];
    }
  });
}

Variable sum(const Variable& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  auto an = a.node();
  return make_op_result(Tensor({1}, {acc}), {a}, [an](const Tensor& dy) {
    if (Tensor* da = grad_target(an)) {
      for (double& v : da->data()) v += dy[0];
    }
  });
}

Variable weighted_sum(const Variable& a, const Tensor& weights) {
  if (a.shape() != weights.shape()) {
    throw DimensionError("weighted_sum: shape " + shape_string(a.shape()) + " vs weights " +
                         shape_string(weights.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) acc += a.value()[i] * weights[i];
  auto an = a.node();
  return make_op_result(Tensor({1}, {acc}), {a}, [an, weights](const Tensor& dy) {
    if (Tensor* da = grad_target(an)) {
      for (std::size_t i = 0; i < weights.numel(); ++i) (*da)[i] += dy[0] * weights[i];
    }
  });
}

namespace {

struct ChannelLayout {
  std::size_t n, c, spatial;
  std::size_t index(std::size_t b, std::size_t ch, std::size_t s) const { return (b * c + ch) * spatial + s; }
};

ChannelLayout channel_layout(const Tensor& x, const char* op) {
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  throw DimensionError(std::string(op) + ": expected rank 2 or 4 input, got " + shape_string(x.shape()));
}

void check_affine(const ChannelLayout& l, const Tensor& gamma, const Tensor& beta, const char* op) {
  if (gamma.numel() != l.c || beta.numel() != l.c) {
    throw DimensionError(std::string(op) + ": channel axis has " + std::to_string(l.c) +
                         " channels but affine parameters have " + std::to_string(gamma.numel()));
  }
}

}  // namespace

Variable batch_norm_train(const Variable& input, const Variable& gamma, const Variable& beta, double eps,
                          BatchMoments* moments_out) {
  const Tensor& x = input.value();
  const ChannelLayout l = channel_layout(x, "batch_norm");
  check_affine(l, gamma.value(), beta.value(), "batch_norm");
  const std::size_t m = l.n * l.spatial;
  if (m == 0) throw DimensionError("batch_norm: empty batch");

  std::vector<double> mean(l.c, 0.0), var(l.c, 0.0), inv_std(l.c);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double acc = 0.0;
    for (std::size_t b = 0; b < l.n; ++b)
      for (std::size_t s = 0; s < l.spatial; ++s) acc += x[l.index(b, ch, s)];
    mean[ch] = acc / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t b = 0; b < l.n; ++b)
      for (std::size_t s = 0; s < l.spatial; ++s) {
        const double d = x[l.index(b, ch, s)] - mean[ch];
        sq += d * d;
      }
    var[ch] = sq / static_cast<double>(m);
    inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t b = 0; b < l.n; ++b)
    for (std::size_t ch = 0; ch < l.c; ++ch)
      for (std::size_t s = 0; s < l.spatial; ++s) {
        const std::size_t i = l.index(b, ch, s);
        xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
        out[i] = gamma.value()[ch] * xhat[i] + beta.value()[ch];
      }
  if (moments_out) *moments_out = BatchMoments{mean, var, m};

  auto xn = input.node(), gn = gamma.node(), bn = beta.node();
  return make_op_result(
      std::move(out), {input, gamma, beta},
      [xn, gn, bn, l, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& dy) {
        Tensor* dx = grad_target(xn);
        Tensor* dg = grad_target(gn);
        Tensor* db = grad_target(bn);
        for (std::size_t ch = 0; ch < l.c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < l.n; ++b)
            for (std::size_t s = 0; s < l.spatial; ++s) {
              const std::size_t i = l.index(b, ch, s);
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * xhat[i];
            }
          if (dg) (*dg)[ch] += sum_dy_xhat;
          if (db) (*db)[ch] += sum_dy;
          if (!dx) continue;
          const double k = gn->value[ch] * inv_std[ch] / static_cast<double>(m);
          for (std::size_t b = 0; b < l.n; ++b)
            for (std::size_t s = 0; s < l.spatial; ++s) {
              const std::size_t i = l.index(b, ch, s);
              (*dx)[i] += k * (static_cast<double>(m) * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
      });
}

Variable batch_norm_eval(const Variable& input, const Variable& gamma, const Variable& beta,
                         std::span<const double> running_mean, std::span<const double> running_var, double eps) {
  const Tensor& x = input.value();
  const ChannelLayout l = channel_layout(x, "batch_norm");
  check_affine(l, gamma.value(), beta.value(), "batch_norm");
  if (running_mean.size() != l.c || running_var.size() != l.c) {
    throw DimensionError("batch_norm: running statistics width " + std::to_string(running_mean.size()) +
                         " vs channel count " + std::to_string(l.c));
  }
  std::vector<double> mean(running_mean.begin(), running_mean.end());
  std::vector<double> inv_std(l.c);
  for (std::size_t ch = 0; ch < l.c; ++ch) inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < l.n; ++b)
    for (std::size_t ch = 0; ch < l.c; ++ch)
      for (std::size_t s = 0; s < l.spatial; ++s) {
        const std::size_t i = l.index(b, ch, s);
        out[i] = gamma.value()[ch] * (x[i] - mean[ch]) * inv_std[ch] + beta.value()[ch];
      }
  auto xn = input.node(), gn = gamma.node(), bn = beta.node();
  return make_op_result(std::move(out), {input, gamma, beta},
                        [xn, gn, bn, l, mean = std::move(mean), inv_std = std::move(inv_std)](const Tensor& dy) {
                          Tensor* dx = grad_target(xn);
                          Tensor* dg = grad_target(gn);
                          Tensor* db = grad_target(bn);
                          for (std::size_t b = 0; b < l.n; ++b)
                            for (std::size_t ch = 0; ch < l.c; ++ch)
                              for (std::size_t s = 0; s < l.spatial; ++s) {
                                const std::size_t i = l.index(b, ch, s);
                                const double xhat = (xn->value[i] - mean[ch]) * inv_std[ch];
                                if (dx) (*dx)[i] += dy[i] * gn->value[ch] * inv_std[ch];
                                if (dg) (*dg)[ch] += dy[i] * xhat;
                                if (db) (*db)[ch] += dy[i];
                              }
                        });
}

Variable dropout(const Variable& input, double rate, bool training, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0,1)");
  if (!training || rate == 0.0) return input;
  if (!rng) throw StateError("dropout: training with nonzero rate needs an RNG");
  Tensor mask(input.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask.data()) v = uniform_open01(*rng) < rate ? 0.0 : keep;
  Tensor out = input.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  auto xn = input.node();
  return make_op_result(std::move(out), {input}, [xn, mask = std::move(mask)](const Tensor& dy) {
    if (Tensor* dx = grad_target(xn)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*dx)[i] += dy[i] * mask[i];
    }
  });
}

}  // namespace drnet
