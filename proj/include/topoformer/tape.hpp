#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <tuple>
#include <utility>
#include <vector>

#include "topoformer/errors.hpp"
#include "topoformer/tensor.hpp"

namespace topoformer {

/// Records one forward/backward episode. Every op appends its
/// gradient-propagation rule in execution order; backward() replays the
/// records strictly in reverse, which is a valid topological order by
/// construction. Adjoints flow through per-node scratch buffers and are
/// added into the persistent grad buffers at the end, so repeated
/// backward calls accumulate.
class Tape {
  using NodePtr = std::shared_ptr<detail::TensorNode>;

 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t num_records() const { return records_.size(); }

  void clear() {
    records_.clear();
    nodes_.clear();
    mark_ = next_mark();
  }

  // ---- elementwise ----

  Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = make_like(a);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    if (track(out, {a, b})) {
      record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
        const std::size_t n = on->adjoint.size();
        if (an->requires_grad)
          for (std::size_t i = 0; i < n; ++i) an->adjoint[i] += on->adjoint[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < n; ++i) bn->adjoint[i] += on->adjoint[i];
      });
    }
    return out;
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = make_like(a);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
    if (track(out, {a, b})) {
      record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
        const std::size_t n = on->adjoint.size();
        if (an->requires_grad)
          for (std::size_t i = 0; i < n; ++i) an->adjoint[i] += on->adjoint[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < n; ++i) bn->adjoint[i] -= on->adjoint[i];
      });
    }
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = make_like(a);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    if (track(out, {a, b})) {
      record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
        const std::size_t n = on->adjoint.size();
        if (an->requires_grad)
          for (std::size_t i = 0; i < n; ++i) an->adjoint[i] += on->adjoint[i] * bn->data[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < n; ++i) bn->adjoint[i] += on->adjoint[i] * an->data[i];
      });
    }
    return out;
  }

  /// [m,n] + [n], bias broadcast over rows.
  Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
      throw DimensionError("add_rowwise: incompatible shapes " + shape_str(x.shape()) + " and " +
                           shape_str(bias.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out = make_like(x);
    const double* px = x.data().data();
    const double* pb = bias.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
    if (track(out, {x, bias})) {
      record([xn = x.node_ptr(), bn = bias.node_ptr(), on = out.node_ptr(), m, n] {
        if (xn->requires_grad)
          for (std::size_t i = 0; i < m * n; ++i) xn->adjoint[i] += on->adjoint[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) bn->adjoint[j] += on->adjoint[i * n + j];
      });
    }
    return out;
  }

  Tensor sigmoid(const Tensor& x) {
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = px[i];
      po[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i) {
          const double s = on->data[i];
          xn->adjoint[i] += on->adjoint[i] * s * (1.0 - s);
        }
      });
    }
    return out;
  }

  Tensor tanh(const Tensor& x) {
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = std::tanh(px[i]);
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i) {
          const double t = on->data[i];
          xn->adjoint[i] += on->adjoint[i] * (1.0 - t * t);
        }
      });
    }
    return out;
  }

  Tensor relu(const Tensor& x) {
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i)
          if (xn->data[i] > 0.0) xn->adjoint[i] += on->adjoint[i];
      });
    }
    return out;
  }

  /// |x| with subgradient 0 at the tie.
  Tensor abs(const Tensor& x) {
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = std::fabs(px[i]);
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i) {
          const double v = xn->data[i];
          if (v > 0.0)
            xn->adjoint[i] += on->adjoint[i];
          else if (v < 0.0)
            xn->adjoint[i] -= on->adjoint[i];
        }
      });
    }
    return out;
  }

  Tensor scale(const Tensor& x, double c) {
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] * c;
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), c] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i) xn->adjoint[i] += on->adjoint[i] * c;
      });
    }
    return out;
  }

  // ---- reductions ----

  Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = make_scalar(acc);
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        const double g = on->adjoint[0];
        for (std::size_t i = 0; i < xn->adjoint.size(); ++i) xn->adjoint[i] += g;
      });
    }
    return out;
  }

  Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    Tensor out = make_scalar(acc * inv_n);
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), inv_n] {
        if (!xn->requires_grad) return;
        const double g = on->adjoint[0] * inv_n;
        for (std::size_t i = 0; i < xn->adjoint.size(); ++i) xn->adjoint[i] += g;
      });
    }
    return out;
  }

  // ---- linear algebra ----

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
      throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const double av = pa[i * k + l];
        if (av == 0.0) continue;
        const double* brow = pb + l * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    if (track(out, {a, b})) {
      record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr(), m, k, n] {
        // dA = G * B^T, dB = A^T * G
        if (an->requires_grad) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              const double* grow = on->adjoint.data() + i * n;
              const double* brow = bn->data.data() + l * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              an->adjoint[i * k + l] += acc;
            }
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = an->data.data() + i * k;
            const double* grow = on->adjoint.data() + i * n;
            for (std::size_t l = 0; l < k; ++l) {
              const double av = arow[l];
              if (av == 0.0) continue;
              double* brow = bn->adjoint.data() + l * n;
              for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      });
    }
    return out;
  }

  /// 1-D cross-correlation with same zero padding.
  /// input [C_in, L], kernel [C_out, C_in, K] (K odd), bias [C_out] optional.
  Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    return conv1d_impl(input, kernel, &bias);
  }

  Tensor conv1d(const Tensor& input, const Tensor& kernel) {
    return conv1d_impl(input, kernel, nullptr);
  }

  /// Softmax along `axis`, max-subtracted for stability.
  Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
      throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                           shape_str(x.shape()));
    }
    const auto [outer, count, inner] = axis_strides(x.shape(), axis);
    Tensor out = make_like(x);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * count * inner + i;
        double mx = px[base];
        for (std::size_t t = 1; t < count; ++t) mx = std::max(mx, px[base + t * inner]);
        double z = 0.0;
        for (std::size_t t = 0; t < count; ++t) {
          const double e = std::exp(px[base + t * inner] - mx);
          po[base + t * inner] = e;
          z += e;
        }
        const double inv_z = 1.0 / z;
        for (std::size_t t = 0; t < count; ++t) po[base + t * inner] *= inv_z;
      }
    }
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), outer, count, inner] {
        if (!xn->requires_grad) return;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * count * inner + i;
            double dot = 0.0;
            for (std::size_t t = 0; t < count; ++t)
              dot += on->adjoint[base + t * inner] * on->data[base + t * inner];
            for (std::size_t t = 0; t < count; ++t) {
              const std::size_t idx = base + t * inner;
              xn->adjoint[idx] += on->data[idx] * (on->adjoint[idx] - dot);
            }
          }
        }
      });
    }
    return out;
  }

  /// Row-wise layer normalization: x [m,n], gamma/beta [n].
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.dim(0) != x.dim(1)) {
      throw DimensionError("layer_norm: incompatible shapes " + shape_str(x.shape()) + ", " +
                           shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out = make_like(x);
    // keep x-hat and 1/sigma for the backward rule
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_sigma = std::make_shared<std::vector<double>>(m);
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pbt = beta.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = px + i * n;
      double mu = 0.0;
      for (std::size_t j = 0; j < n; ++j) mu += row[j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = row[j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + epsilon);
      (*inv_sigma)[i] = is;
      for (std::size_t j = 0; j < n; ++j) {
        const double xh = (row[j] - mu) * is;
        (*xhat)[i * n + j] = xh;
        po[i * n + j] = pg[j] * xh + pbt[j];
      }
    }
    if (track(out, {x, gamma, beta})) {
      record([xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(),
              on = out.node_ptr(), xhat, inv_sigma, m, n] {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = on->adjoint.data() + i * n;
          const double* xh = xhat->data() + i * n;
          if (gn->requires_grad)
            for (std::size_t j = 0; j < n; ++j) gn->adjoint[j] += g[j] * xh[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < n; ++j) bn->adjoint[j] += g[j];
          if (xn->requires_grad) {
            double mean_h = 0.0, mean_hx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double h = g[j] * gn->data[j];
              mean_h += h;
              mean_hx += h * xh[j];
            }
            mean_h *= inv_n;
            mean_hx *= inv_n;
            const double is = (*inv_sigma)[i];
            for (std::size_t j = 0; j < n; ++j) {
              const double h = g[j] * gn->data[j];
              xn->adjoint[i * n + j] += is * (h - mean_h - xh[j] * mean_hx);
            }
          }
        }
      });
    }
    return out;
  }

  // ---- shape ops ----

  Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) {
      throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for shape " +
                           shape_str(s0));
    }
    Shape out_shape = s0;
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
      if (p.rank() != s0.size()) throw DimensionError("concat: rank mismatch");
      for (std::size_t d = 0; d < s0.size(); ++d) {
        if (d != axis && p.dim(d) != s0[d]) {
          throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                               shape_str(s0));
        }
      }
      total_axis += p.dim(axis);
    }
    out_shape[axis] = total_axis;
    Tensor out = Tensor::zeros(out_shape);
    const auto [outer, count, inner] = axis_strides(out_shape, axis);
    (void)count;
    std::vector<std::size_t> offsets;  // start along axis per part
    std::size_t off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      const std::size_t pc = p.dim(axis);
      const double* src = p.data().data();
      double* dst = out.data().data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < pc; ++t)
          std::copy_n(src + (o * pc + t) * inner, inner,
                      dst + (o * total_axis + off + t) * inner);
      off += pc;
    }
    bool any_grad = false;
    for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
    if (recording_ && any_grad) {
      out.set_requires_grad(true);
      register_node(out);
      std::vector<NodePtr> ins;
      for (const auto& p : parts) {
        register_node(p);
        ins.push_back(p.node_ptr());
      }
      record([ins, offsets, on = out.node_ptr(), outer, inner, total_axis, axis] {
        for (std::size_t pi = 0; pi < ins.size(); ++pi) {
          const auto& in = ins[pi];
          if (!in->requires_grad) continue;
          const std::size_t pc = in->shape[axis];
          const std::size_t start = offsets[pi];
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t t = 0; t < pc; ++t) {
              const double* g = on->adjoint.data() + (o * total_axis + start + t) * inner;
              double* dst = in->adjoint.data() + (o * pc + t) * inner;
              for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
        }
      });
    }
    return out;
  }

  Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t count) {
    if (axis >= x.rank()) {
      throw DimensionError("slice: axis " + std::to_string(axis) + " invalid for shape " +
                           shape_str(x.shape()));
    }
    if (start + count > x.dim(axis) || count == 0) {
      throw DimensionError("slice: range [" + std::to_string(start) + "," +
                           std::to_string(start + count) + ") invalid for shape " +
                           shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = count;
    const auto [outer, full, inner] = axis_strides(x.shape(), axis);
    Tensor out = Tensor::zeros(out_shape);
    const double* src = x.data().data();
    double* dst = out.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < count; ++t)
        std::copy_n(src + (o * full + start + t) * inner, inner, dst + (o * count + t) * inner);
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), outer, full, inner, start, count] {
        if (!xn->requires_grad) return;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t t = 0; t < count; ++t) {
            const double* g = on->adjoint.data() + (o * count + t) * inner;
            double* dst = xn->adjoint.data() + (o * full + start + t) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
          }
      });
    }
    return out;
  }

  Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size()) {
      throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                           " changes element count");
    }
    Tensor out(new_shape, x.data());
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < on->adjoint.size(); ++i) xn->adjoint[i] += on->adjoint[i];
      });
    }
    return out;
  }

  Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) {
      throw DimensionError("transpose: expected rank-2 tensor, got " + shape_str(x.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const double* px = x.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), m, n] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) xn->adjoint[i * n + j] += on->adjoint[j * m + i];
      });
    }
    return out;
  }

  /// Fused LSTM gate nonlinearity. `pre` holds the four gate
  /// pre-activations as equal contiguous blocks [i | f | o | g]; c_prev is
  /// the previous cell state. Returns (h, c) with
  ///   i,f,o = sigmoid(block), g = tanh(block),
  ///   c = f.c_prev + i.g, h = o.tanh(c).
  /// One record instead of the dozen a composed version would cost per
  /// recurrence step.
  std::pair<Tensor, Tensor> lstm_pointwise(const Tensor& pre, const Tensor& c_prev) {
    const std::size_t n = c_prev.size();
    if (pre.size() != 4 * n) {
      throw DimensionError("lstm_pointwise: pre-activation shape " + shape_str(pre.shape()) +
                           " is not four gate blocks of cell-state shape " +
                           shape_str(c_prev.shape()));
    }
    Tensor h = Tensor::zeros(c_prev.shape());
    Tensor c = Tensor::zeros(c_prev.shape());
    // saved activations: i, f, o, g, tanh(c)
    auto acts = std::make_shared<std::vector<double>>(5 * n);
    const double* p = pre.data().data();
    const double* cp = c_prev.data().data();
    double* ph = h.data().data();
    double* pc = c.data().data();
    double* a = acts->data();
    auto sig = [](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    };
    for (std::size_t idx = 0; idx < n; ++idx) {
      const double i = sig(p[idx]);
      const double f = sig(p[n + idx]);
      const double o = sig(p[2 * n + idx]);
      const double g = std::tanh(p[3 * n + idx]);
      const double c_new = f * cp[idx] + i * g;
      const double tc = std::tanh(c_new);
      a[idx] = i;
      a[n + idx] = f;
      a[2 * n + idx] = o;
      a[3 * n + idx] = g;
      a[4 * n + idx] = tc;
      pc[idx] = c_new;
      ph[idx] = o * tc;
    }
    if (recording_ && (pre.requires_grad() || c_prev.requires_grad())) {
      h.set_requires_grad(true);
      c.set_requires_grad(true);
      register_node(pre);
      register_node(c_prev);
      register_node(h);
      register_node(c);
      record([pn = pre.node_ptr(), cpn = c_prev.node_ptr(), hn = h.node_ptr(),
              cn = c.node_ptr(), acts, n] {
        const double* a = acts->data();
        const double* dh = hn->adjoint.data();
        const double* dc = cn->adjoint.data();
        for (std::size_t idx = 0; idx < n; ++idx) {
          const double i = a[idx];
          const double f = a[n + idx];
          const double o = a[2 * n + idx];
          const double g = a[3 * n + idx];
          const double tc = a[4 * n + idx];
          const double dct = dc[idx] + dh[idx] * o * (1.0 - tc * tc);
          if (pn->requires_grad) {
            pn->adjoint[idx] += dct * g * i * (1.0 - i);
            pn->adjoint[n + idx] += dct * cpn->data[idx] * f * (1.0 - f);
            pn->adjoint[2 * n + idx] += dh[idx] * tc * o * (1.0 - o);
            pn->adjoint[3 * n + idx] += dct * i * (1.0 - g * g);
          }
          if (cpn->requires_grad) cpn->adjoint[idx] += dct * f;
        }
      });
    }
    return {h, c};
  }

  /// Non-overlapping average pooling along the length axis of [C, L].
  Tensor avg_pool1d(const Tensor& x, std::size_t width) {
    if (x.rank() != 2) {
      throw DimensionError("avg_pool1d: expected rank-2 tensor, got " + shape_str(x.shape()));
    }
    if (width == 0 || x.dim(1) % width != 0) {
      throw DimensionError("avg_pool1d: length " + std::to_string(x.dim(1)) +
                           " not divisible by width " + std::to_string(width));
    }
    const std::size_t c = x.dim(0), l = x.dim(1), lo = l / width;
    Tensor out = Tensor::zeros({c, lo});
    const double* px = x.data().data();
    double* po = out.data().data();
    const double inv_w = 1.0 / static_cast<double>(width);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < lo; ++t) {
        double acc = 0.0;
        for (std::size_t w = 0; w < width; ++w) acc += px[ch * l + t * width + w];
        po[ch * lo + t] = acc * inv_w;
      }
    if (track(out, {x})) {
      record([xn = x.node_ptr(), on = out.node_ptr(), c, l, lo, width, inv_w] {
        if (!xn->requires_grad) return;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t t = 0; t < lo; ++t) {
            const double g = on->adjoint[ch * lo + t] * inv_w;
            for (std::size_t w = 0; w < width; ++w) xn->adjoint[ch * l + t * width + w] += g;
          }
      });
    }
    return out;
  }

  // ---- backward ----

  /// Seeds d(loss)/d(loss) = 1, replays all records in reverse, then adds
  /// the resulting adjoints into the persistent grad buffers of every
  /// requires_grad tensor on the tape.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, shape is " + shape_str(loss.shape()));
    }
    if (records_.empty()) {
      throw ContractError("backward: tape is empty");
    }
    for (auto& n : nodes_) n->adjoint.assign(n->data.size(), 0.0);
    detail::TensorNode* ln = loss.node();
    if (ln->adjoint.empty()) ln->adjoint.assign(1, 0.0);
    ln->adjoint[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backprop();
    for (auto& n : nodes_) {
      if (!n->requires_grad) continue;
      if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->adjoint[i];
    }
  }

 private:
  struct Record {
    std::function<void()> backprop;
  };

  static Tensor make_like(const Tensor& x) { return Tensor(x.shape(), x.data()); }
  static Tensor make_scalar(double v) { return Tensor::scalar(v); }

  static std::tuple<std::size_t, std::size_t, std::size_t> axis_strides(const Shape& s,
                                                                        std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    return {outer, s[axis], inner};
  }

  static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
      throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
  }

  /// Marks the output as requiring grad if tracking applies and registers
  /// the participating nodes. Returns true when a record must be appended.
  bool track(Tensor& out, std::initializer_list<Tensor> inputs) {
    if (!recording_) return false;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return false;
    out.set_requires_grad(true);
    for (const auto& t : inputs) register_node(t);
    register_node(out);
    return true;
  }

  void register_node(const Tensor& t) {
    detail::TensorNode* n = t.node();
    if (n->reg_mark != mark_) {
      n->reg_mark = mark_;
      nodes_.push_back(t.node_ptr());
    }
  }

  template <typename F>
  void record(F&& f) {
    records_.push_back(Record{std::forward<F>(f)});
  }

  static std::uint64_t next_mark() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  Tensor conv1d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias) {
    if (input.rank() != 2 || kernel.rank() != 3) {
      throw DimensionError("conv1d: expected input [C_in,L] and kernel [C_out,C_in,K], got " +
                           shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    }
    const std::size_t c_in = input.dim(0), len = input.dim(1);
    const std::size_t c_out = kernel.dim(0), kc_in = kernel.dim(1), k = kernel.dim(2);
    if (kc_in != c_in) {
      throw DimensionError("conv1d: kernel input channels " + std::to_string(kc_in) +
                           " do not match input channels " + std::to_string(c_in));
    }
    if (k % 2 == 0) {
      throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
      throw DimensionError("conv1d: bias shape " + shape_str(bias->shape()) +
                           " does not match output channels " + std::to_string(c_out));
    }
    const std::size_t pad = k / 2;
    Tensor out = Tensor::zeros({c_out, len});
    const double* pi = input.data().data();
    const double* pk = kernel.data().data();
    double* po = out.data().data();
    for (std::size_t o = 0; o < c_out; ++o) {
      const double b = bias ? bias->data()[o] : 0.0;
      double* orow = po + o * len;
      for (std::size_t t = 0; t < len; ++t) orow[t] = b;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* irow = pi + c * len;
        const double* krow = pk + (o * c_in + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const double kv = krow[j];
          if (kv == 0.0) continue;
          // out[t] += kv * in[t + j - pad]
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) -
                                       static_cast<std::ptrdiff_t>(pad);
          const std::size_t t_lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t t_hi = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
          for (std::size_t t = t_lo; t < t_hi; ++t)
            orow[t] += kv * irow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + shift)];
        }
      }
    }
    bool tracked;
    if (bias) {
      tracked = track(out, {input, kernel, *bias});
    } else {
      tracked = track(out, {input, kernel});
    }
    if (tracked) {
      NodePtr bn = bias ? bias->node_ptr() : nullptr;
      record([in = input.node_ptr(), kn = kernel.node_ptr(), bn, on = out.node_ptr(), c_in, c_out,
              len, k, pad] {
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* grow = on->adjoint.data() + o * len;
          if (bn && bn->requires_grad) {
            double acc = 0.0;
            for (std::size_t t = 0; t < len; ++t) acc += grow[t];
            bn->adjoint[o] += acc;
          }
          for (std::size_t c = 0; c < c_in; ++c) {
            const double* irow = in->data.data() + c * len;
            const double* krow = kn->data.data() + (o * c_in + c) * k;
            double* ia = in->requires_grad ? in->adjoint.data() + c * len : nullptr;
            double* ka = kn->requires_grad ? kn->adjoint.data() + (o * c_in + c) * k : nullptr;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) -
                                           static_cast<std::ptrdiff_t>(pad);
              const std::size_t t_lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
              const std::size_t t_hi = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
              if (ia) {
                const double kv = krow[j];
                if (kv != 0.0)
                  for (std::size_t t = t_lo; t < t_hi; ++t)
                    ia[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + shift)] +=
                        kv * grow[t];
              }
              if (ka) {
                double acc = 0.0;
                for (std::size_t t = t_lo; t < t_hi; ++t)
                  acc += grow[t] *
                         irow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + shift)];
                ka[j] += acc;
              }
            }
          }
        }
      });
    }
    return out;
  }

  bool recording_ = true;
  std::vector<Record> records_;
  std::vector<NodePtr> nodes_;
  std::uint64_t mark_ = next_mark();
};

}  // namespace topoformer
