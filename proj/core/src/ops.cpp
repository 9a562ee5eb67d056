#include "modwatch/ops.hpp"

#include <algorithm>
#include <cmath>

#include "modwatch/error.hpp"

namespace modwatch::nn {

namespace {

struct ConvGeometry {
  std::size_t batch, time, in_ch, out_ch, width, stride, out_time;
  std::ptrdiff_t pad_left;
};

ConvGeometry conv_geometry(const Dims& input, const Dims& kernel, std::size_t stride, Padding padding) {
  if (input.size() != 3) throw ShapeError("conv1d input must be batch x time x channels, got " + shape_string(input));
  if (kernel.size() != 3) throw ShapeError("conv1d kernel must be rank 3, got " + shape_string(kernel));
  if (stride == 0) throw ShapeError("conv1d stride must be positive");
  if (input[2] != kernel[1]) {
    throw ShapeError("conv1d channel mismatch: input has " + std::to_string(input[2]) + " channels, kernel expects " +
                     std::to_string(kernel[1]));
  }
  ConvGeometry g{input[0], input[1], input[2], kernel[0], kernel[2], stride, 0, 0};
  g.out_time = conv_output_length(g.time, g.width, stride, padding);
  if (padding == Padding::same) {
    const std::ptrdiff_t needed = static_cast<std::ptrdiff_t>((g.out_time - 1) * stride + g.width) -
                                  static_cast<std::ptrdiff_t>(g.time);
    g.pad_left = std::max<std::ptrdiff_t>(needed, 0) / 2;
  }
  return g;
}

// kernel[o][i][k] -> [k][i][o] so the innermost loop runs over output channels.
std::vector<float> transpose_kernel(const float* kernel, const ConvGeometry& g) {
  std::vector<float> kt(g.width * g.in_ch * g.out_ch);
  for (std::size_t o = 0; o < g.out_ch; ++o)
    for (std::size_t i = 0; i < g.in_ch; ++i)
      for (std::size_t k = 0; k < g.width; ++k)
        kt[(k * g.in_ch + i) * g.out_ch + o] = kernel[(o * g.in_ch + i) * g.width + k];
  return kt;
}

inline std::ptrdiff_t input_index(const ConvGeometry& g, std::size_t t, std::size_t k) {
  return static_cast<std::ptrdiff_t>(t * g.stride + k) - g.pad_left;
}

void conv_forward_raw(const float* x, const float* kernel, const float* bias, float* out, const ConvGeometry& g) {
  const auto kt = transpose_kernel(kernel, g);
  const std::size_t co = g.out_ch;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t t = 0; t < g.out_time; ++t) {
      float* row = out + (b * g.out_time + t) * co;
      std::copy(bias, bias + co, row);
      for (std::size_t k = 0; k < g.width; ++k) {
        const auto ti = input_index(g, t, k);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.time)) continue;
        const float* xr = x + (b * g.time + static_cast<std::size_t>(ti)) * g.in_ch;
        const float* kk = kt.data() + k * g.in_ch * co;
        for (std::size_t i = 0; i < g.in_ch; ++i) {
          const float xv = xr[i];
          if (xv == 0.0f) continue;
          const float* kr = kk + i * co;
#pragma omp simd
          for (std::size_t o = 0; o < co; ++o) row[o] += xv * kr[o];
        }
      }
    }
  }
}

void check_dense(const Dims& input, const Dims& kernel) {
  if (input.size() != 2) throw ShapeError("dense input must be batch x features, got " + shape_string(input));
  if (kernel.size() != 2) throw ShapeError("dense kernel must be rank 2, got " + shape_string(kernel));
  if (input[1] != kernel[1]) {
    throw ShapeError("dense dimension mismatch: input has " + std::to_string(input[1]) + " features, kernel expects " +
                     std::to_string(kernel[1]));
  }
}

void dense_forward_raw(const float* x, const float* w, const float* bias, float* out, std::size_t batch,
                       std::size_t in, std::size_t outs) {
  for (std::size_t b = 0; b < batch; ++b) {
    const float* xr = x + b * in;
    for (std::size_t o = 0; o < outs; ++o) {
      const float* wr = w + o * in;
      float s = 0.0f;
#pragma omp simd reduction(+ : s)
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      out[b * outs + o] = s + bias[o];
    }
  }
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(what) + ": dims mismatch " + shape_string(a.dims()) + " vs " +
                     shape_string(b.dims()));
  }
}

}  // namespace

std::size_t conv_output_length(std::size_t time, std::size_t width, std::size_t stride, Padding padding) {
  if (stride == 0) throw ShapeError("conv1d stride must be positive");
  if (padding == Padding::same) return (time + stride - 1) / stride;
  if (time < width) throw ShapeError("valid conv1d needs time >= kernel width");
  return (time - width) / stride + 1;
}

Tensor conv1d_forward(const Tensor& input, const LayerWeights& weights, std::size_t stride, Padding padding) {
  if (weights.kind != LayerKind::conv1d) throw ShapeError("conv1d_forward given non-conv weights");
  const auto g = conv_geometry(input.dims(), weights.kernel.dims(), stride, padding);
  Tensor out({g.batch, g.out_time, g.out_ch});
  conv_forward_raw(input.data(), weights.kernel.data(), weights.bias.data(), out.data(), g);
  return out;
}

Tensor dense_forward(const Tensor& input, const LayerWeights& weights) {
  if (weights.kind != LayerKind::dense) throw ShapeError("dense_forward given non-dense weights");
  check_dense(input.dims(), weights.kernel.dims());
  Tensor out({input.dim(0), weights.kernel.dim(0)});
  dense_forward_raw(input.data(), weights.kernel.data(), weights.bias.data(), out.data(), input.dim(0),
                    input.dim(1), weights.kernel.dim(0));
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Var conv1d(Tape& tape, Var input, Var kernel, Var bias, std::size_t stride, Padding padding) {
  const auto g = conv_geometry(tape.value(input).dims(), tape.value(kernel).dims(), stride, padding);
  if (tape.value(bias).size() != g.out_ch) throw ShapeError("conv1d bias length must equal output channels");
  Tensor out({g.batch, g.out_time, g.out_ch});
  conv_forward_raw(tape.value(input).data(), tape.value(kernel).data(), tape.value(bias).data(), out.data(), g);
  const bool rg = tape.requires_grad(input) || tape.requires_grad(kernel) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [=](Tape& tp, Var self) {
    const float* gout = tp.gradient(self).data();
    const float* x = tp.value(input).data();
    const std::size_t co = g.out_ch;
    const std::size_t ci = g.in_ch;
    if (tp.requires_grad(bias)) {
      std::vector<double> gb(co, 0.0);
      for (std::size_t r = 0; r < g.batch * g.out_time; ++r)
        for (std::size_t o = 0; o < co; ++o) gb[o] += gout[r * co + o];
      float* dst = tp.accumulate(bias).data();
      for (std::size_t o = 0; o < co; ++o) dst[o] += static_cast<float>(gb[o]);
    }
    const bool want_x = tp.requires_grad(input);
    const bool want_k = tp.requires_grad(kernel);
    if (!want_x && !want_k) return;
    const auto kt = transpose_kernel(tp.value(kernel).data(), g);
    std::vector<double> gk(want_k ? kt.size() : 0, 0.0);
    float* gx = want_x ? tp.accumulate(input).data() : nullptr;
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t t = 0; t < g.out_time; ++t) {
        const float* gr = gout + (b * g.out_time + t) * co;
        for (std::size_t k = 0; k < g.width; ++k) {
          const auto ti = input_index(g, t, k);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.time)) continue;
          const std::size_t row = (b * g.time + static_cast<std::size_t>(ti)) * ci;
          const float* kk = kt.data() + k * ci * co;
          if (want_x) {
            for (std::size_t i = 0; i < ci; ++i) {
              const float* kr = kk + i * co;
              float s = 0.0f;
#pragma omp simd reduction(+ : s)
              for (std::size_t o = 0; o < co; ++o) s += gr[o] * kr[o];
              gx[row + i] += s;
            }
          }
          if (want_k) {
            double* gkk = gk.data() + k * ci * co;
            for (std::size_t i = 0; i < ci; ++i) {
              const double xv = x[row + i];
              if (xv == 0.0) continue;
              double* gkr = gkk + i * co;
#pragma omp simd
              for (std::size_t o = 0; o < co; ++o) gkr[o] += xv * gr[o];
            }
          }
        }
      }
    }
    if (want_k) {
      float* dst = tp.accumulate(kernel).data();
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t k = 0; k < g.width; ++k)
            dst[(o * ci + i) * g.width + k] += static_cast<float>(gk[(k * ci + i) * co + o]);
    }
  });
}

Var dense(Tape& tape, Var input, Var kernel, Var bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(kernel);
  check_dense(x.dims(), w.dims());
  if (tape.value(bias).size() != w.dim(0)) throw ShapeError("dense bias length must equal output features");
  const std::size_t batch = x.dim(0), in = x.dim(1), outs = w.dim(0);
  Tensor out({batch, outs});
  dense_forward_raw(x.data(), w.data(), tape.value(bias).data(), out.data(), batch, in, outs);
  const bool rg = tape.requires_grad(input) || tape.requires_grad(kernel) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [=](Tape& tp, Var self) {
    const float* gout = tp.gradient(self).data();
    if (tp.requires_grad(bias)) {
      float* dst = tp.accumulate(bias).data();
      for (std::size_t o = 0; o < outs; ++o) {
        double s = 0.0;
        for (std::size_t b = 0; b < batch; ++b) s += gout[b * outs + o];
        dst[o] += static_cast<float>(s);
      }
    }
    if (tp.requires_grad(input)) {
      const float* wv = tp.value(kernel).data();
      float* gx = tp.accumulate(input).data();
      std::vector<double> acc(in);
      for (std::size_t b = 0; b < batch; ++b) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t o = 0; o < outs; ++o) {
          const double gv = gout[b * outs + o];
          if (gv == 0.0) continue;
          const float* wr = wv + o * in;
#pragma omp simd
          for (std::size_t i = 0; i < in; ++i) acc[i] += gv * wr[i];
        }
        for (std::size_t i = 0; i < in; ++i) gx[b * in + i] += static_cast<float>(acc[i]);
      }
    }
    if (tp.requires_grad(kernel)) {
      const float* xv = tp.value(input).data();
      float* gw = tp.accumulate(kernel).data();
      std::vector<double> acc(in);
      for (std::size_t o = 0; o < outs; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          const double gv = gout[b * outs + o];
          if (gv == 0.0) continue;
          const float* xr = xv + b * in;
#pragma omp simd
          for (std::size_t i = 0; i < in; ++i) acc[i] += gv * xr[i];
        }
        float* dst = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) dst[i] += static_cast<float>(acc[i]);
      }
    }
  });
}

Var relu(Tape& tape, Var input) {
  Tensor out = relu(tape.value(input));
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    const auto& x = tp.value(input);
    auto& dst = tp.accumulate(input);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0f) dst[i] += g[i];
    }
  });
}

Var reshape(Tape& tape, Var input, Dims dims) {
  Tensor out = tape.value(input).reshaped(std::move(dims));
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    auto& dst = tp.accumulate(input);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var concat_features(Tape& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
    throw ShapeError("concat_features needs two batch x features matrices with equal batch, got " +
                     shape_string(x.dims()) + " and " + shape_string(y.dims()));
  }
  const std::size_t batch = x.dim(0), p = x.dim(1), q = y.dim(1);
  Tensor out({batch, p + q});
  for (std::size_t r = 0; r < batch; ++r) {
    std::copy_n(x.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(y.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    if (tp.requires_grad(a)) {
      auto& dst = tp.accumulate(a);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < p; ++j) dst[r * p + j] += g[r * (p + q) + j];
    }
    if (tp.requires_grad(b)) {
      auto& dst = tp.accumulate(b);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < q; ++j) dst[r * q + j] += g[r * (p + q) + p + j];
    }
  });
}

Var upsample_time(Tape& tape, Var input, std::size_t factor) {
  const auto& x = tape.value(input);
  if (x.rank() != 3) throw ShapeError("upsample_time input must be batch x time x channels");
  if (factor == 0) throw ShapeError("upsample factor must be positive");
  const std::size_t batch = x.dim(0), time = x.dim(1), ch = x.dim(2);
  Tensor out({batch, time * factor, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < time; ++t)
      for (std::size_t r = 0; r < factor; ++r)
        std::copy_n(x.data() + (b * time + t) * ch, ch, out.data() + (b * time * factor + t * factor + r) * ch);
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    auto& dst = tp.accumulate(input);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < time; ++t)
        for (std::size_t r = 0; r < factor; ++r)
          for (std::size_t c = 0; c < ch; ++c)
            dst[(b * time + t) * ch + c] += g[(b * time * factor + t * factor + r) * ch + c];
  });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_dims(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  const auto& y = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& dst = tp.accumulate(v);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  require_same_dims(tape.value(a), tape.value(b), "mul");
  Tensor out = tape.value(a);
  const auto& y = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    if (tp.requires_grad(a)) {
      const auto& other = tp.value(b);
      auto& dst = tp.accumulate(a);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
    if (tp.requires_grad(b)) {
      const auto& other = tp.value(a);
      auto& dst = tp.accumulate(b);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

Var scale(Tape& tape, Var input, float factor) {
  Tensor out = tape.value(input);
  for (float& v : out.values()) v *= factor;
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    auto& dst = tp.accumulate(input);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

Var sum(Tape& tape, Var input) {
  double s = 0.0;
  for (float v : tape.value(input).values()) s += v;
  return tape.record(Tensor::scalar(static_cast<float>(s)), tape.requires_grad(input), [=](Tape& tp, Var self) {
    const float g = tp.gradient(self)[0];
    auto& dst = tp.accumulate(input);
    for (float& v : dst.values()) v += g;
  });
}

Var weighted_add(Tape& tape, Var a, Var b, float weight) {
  if (tape.value(a).size() != 1 || tape.value(b).size() != 1) throw ShapeError("weighted_add expects scalars");
  const double v = static_cast<double>(tape.value(a)[0]) + static_cast<double>(weight) * tape.value(b)[0];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(Tensor::scalar(static_cast<float>(v)), rg, [=](Tape& tp, Var self) {
    const float g = tp.gradient(self)[0];
    if (tp.requires_grad(a)) tp.accumulate(a)[0] += g;
    if (tp.requires_grad(b)) tp.accumulate(b)[0] += g * weight;
  });
}

Var mse(Tape& tape, Var x, Var reconstruction) {
  const auto& a = tape.value(x);
  const auto& b = tape.value(reconstruction);
  require_same_dims(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  const double n = static_cast<double>(a.size());
  const bool rg = tape.requires_grad(x) || tape.requires_grad(reconstruction);
  return tape.record(Tensor::scalar(static_cast<float>(s / n)), rg, [=](Tape& tp, Var self) {
    const double g = tp.gradient(self)[0];
    const auto& xa = tp.value(x);
    const auto& xb = tp.value(reconstruction);
    const double c = 2.0 * g / n;
    if (tp.requires_grad(x)) {
      auto& dst = tp.accumulate(x);
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += static_cast<float>(c * (static_cast<double>(xa[i]) - xb[i]));
    }
    if (tp.requires_grad(reconstruction)) {
      auto& dst = tp.accumulate(reconstruction);
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] -= static_cast<float>(c * (static_cast<double>(xa[i]) - xb[i]));
    }
  });
}

Var gaussian_kld(Tape& tape, Var mu, Var logvar, KldReduction reduction) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  require_same_dims(m, lv, "gaussian_kld");
  if (m.rank() != 2) throw ShapeError("gaussian_kld expects batch x latent tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double l = lv[i];
    s += -0.5 * (1.0 + l - static_cast<double>(m[i]) * m[i] - std::exp(l));
  }
  const double r = reduction == KldReduction::batch_mean ? 1.0 / static_cast<double>(m.dim(0)) : 1.0;
  const bool rg = tape.requires_grad(mu) || tape.requires_grad(logvar);
  return tape.record(Tensor::scalar(static_cast<float>(s * r)), rg, [=](Tape& tp, Var self) {
    const double g = tp.gradient(self)[0] * r;
    if (tp.requires_grad(mu)) {
      const auto& mv = tp.value(mu);
      auto& dst = tp.accumulate(mu);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<float>(g * mv[i]);
    }
    if (tp.requires_grad(logvar)) {
      const auto& lvv = tp.value(logvar);
      auto& dst = tp.accumulate(logvar);
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += static_cast<float>(g * 0.5 * (std::exp(static_cast<double>(lvv[i])) - 1.0));
    }
  });
}

Var reparameterize(Tape& tape, Var mu, Var logvar, const Tensor& eps) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  require_same_dims(m, lv, "reparameterize");
  require_same_dims(m, eps, "reparameterize epsilon");
  Tensor z = m;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += std::exp(0.5f * lv[i]) * eps[i];
  const bool rg = tape.requires_grad(mu) || tape.requires_grad(logvar);
  return tape.record(std::move(z), rg, [=](Tape& tp, Var self) {
    const auto& g = tp.gradient(self);
    if (tp.requires_grad(mu)) {
      auto& dst = tp.accumulate(mu);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (tp.requires_grad(logvar)) {
      const auto& lvv = tp.value(logvar);
      auto& dst = tp.accumulate(logvar);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * eps[i] * 0.5f * std::exp(0.5f * lvv[i]);
    }
  });
}

}  // namespace modwatch::nn
