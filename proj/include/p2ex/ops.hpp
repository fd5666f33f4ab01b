#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "p2ex/tensor.hpp"

namespace p2ex {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape));
  }
}

inline void require_axis(std::size_t got, std::size_t want, const char* op, const char* axis) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": " + axis + " axis mismatch (" + std::to_string(got) + " vs " +
                         std::to_string(want) + ")");
  }
}

inline void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

inline std::size_t row_width(const Tensor& t) { return t.size() / t.dim(0); }

}  // namespace detail

// --- shape plumbing -------------------------------------------------------

inline Var reshape(Var x, Shape shape) {
  const Tensor& in = x.value();
  Tensor out(std::move(shape), in.values);
  return x.tape().record(std::move(out), {x}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

/// Stride-1 windows of `len` steps over a [time, ch] sequence -> [windows, len, ch].
inline Var unfold(Var z, std::size_t len) {
  const Tensor& in = z.value();
  detail::require_rank(in, 2, "unfold", "input");
  const std::size_t steps = in.dim(0), ch = in.dim(1);
  if (len == 0 || steps < len) {
    throw PreconditionError("unfold: sequence length " + std::to_string(steps) + " shorter than window " +
                            std::to_string(len));
  }
  const std::size_t windows = steps - len + 1, width = len * ch;
  Tensor out({windows, len, ch});
  for (std::size_t q = 0; q < windows; ++q) {
    std::copy_n(in.values.begin() + static_cast<std::ptrdiff_t>(q * ch), width,
                out.values.begin() + static_cast<std::ptrdiff_t>(q * width));
  }
  return z.tape().record(std::move(out), {z}, [windows, width, ch](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t q = 0; q < windows; ++q) {
      for (std::size_t j = 0; j < width; ++j) gi[q * ch + j] += g[q * width + j];
    }
  });
}

// --- elementwise ----------------------------------------------------------

inline Var relu(Var x) {
  const Tensor& in = x.value();
  detail::require_finite(in, "relu");
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return x.tape().record(std::move(out), {x}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    const auto& v = ctx.input(0).values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0) gi[i] += g[i];
    }
  });
}

inline Var add(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  if (x.shape != y.shape) throw DimensionError("add: shapes " + shape_string(x.shape) + " and " + shape_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      auto gi = ctx.input_grad(k);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  if (x.shape != y.shape) throw DimensionError("sub: shapes " + shape_string(x.shape) + " and " + shape_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = ctx.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

inline Var mul(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  if (x.shape != y.shape) throw DimensionError("mul: shapes " + shape_string(x.shape) + " and " + shape_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    const auto &xv = ctx.input(0).values, &yv = ctx.input(1).values;
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * yv[i];
    auto gb = ctx.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * xv[i];
  });
}

inline Var add_scalar(Var x, double c) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + c;
  return x.tape().record(std::move(out), {x}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

inline Var scale(Var x, double c) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * c;
  return x.tape().record(std::move(out), {x}, [c](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += c * g[i];
  });
}

inline Var reciprocal(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == 0.0) throw NumericError("reciprocal: division by zero");
    out[i] = 1.0 / in[i];
  }
  return x.tape().record(std::move(out), {x}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    const auto& y = ctx.output().values;
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i] * y[i] * y[i];
  });
}

inline Var log(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!(in[i] > 0.0)) throw NumericError("log: non-positive argument");
    out[i] = std::log(in[i]);
  }
  return x.tape().record(std::move(out), {x}, [](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    const auto& v = ctx.input(0).values;
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] / v[i];
  });
}

// --- reductions -----------------------------------------------------------

inline Var sum(Var x) {
  const Tensor& in = x.value();
  double s = 0.0;
  for (double v : in.values) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](GradContext& ctx) {
    const double g = ctx.output_grad()[0];
    for (double& gi : ctx.input_grad(0)) gi += g;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Minimum of a rank-2 tensor along `axis` (0: over rows, 1: over columns).
/// Entries whose `mask` byte is 0 are skipped; the gradient flows only to the
/// first minimal entry.
inline Var reduce_min(Var x, std::size_t axis, const std::vector<std::uint8_t>* mask = nullptr) {
  const Tensor& in = x.value();
  detail::require_rank(in, 2, "reduce_min", "input");
  if (axis > 1) throw PreconditionError("reduce_min: axis must be 0 or 1");
  if (mask && mask->size() != in.size()) throw DimensionError("reduce_min: mask size does not match input");
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  const std::size_t outer = axis == 0 ? cols : rows;
  const std::size_t inner = axis == 0 ? rows : cols;
  Tensor out({outer});
  std::vector<std::size_t> argmin(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = in.size();
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t idx = axis == 0 ? i * cols + o : o * cols + i;
      if (mask && !(*mask)[idx]) continue;
      if (best_idx == in.size() || in[idx] < best) {
        best = in[idx];
        best_idx = idx;
      }
    }
    if (best_idx == in.size()) throw PreconditionError("reduce_min: minimum over an empty set");
    out[o] = best;
    argmin[o] = best_idx;
  }
  return x.tape().record(std::move(out), {x}, [argmin = std::move(argmin)](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t o = 0; o < g.size(); ++o) gi[argmin[o]] += g[o];
  });
}

// --- dense algebra --------------------------------------------------------

/// [n, in] x [in, out] -> [n, out]
inline Var matmul(Var a, Var b) {
  const Tensor &x = a.value(), &w = b.value();
  detail::require_rank(x, 2, "matmul", "lhs");
  detail::require_rank(w, 2, "matmul", "rhs");
  detail::require_axis(x.dim(1), w.dim(0), "matmul", "inner");
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double xv = x[r * k + j];
      for (std::size_t c = 0; c < m; ++c) out[r * m + c] += xv * w[j * m + c];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [n, k, m](GradContext& ctx) {
    auto g = ctx.output_grad();
    const auto &xv = ctx.input(0).values, &wv = ctx.input(1).values;
    auto gx = ctx.input_grad(0);
    auto gw = ctx.input_grad(1);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
          if (!gw.empty()) gw[j * m + c] += xv[r * k + j] * g[r * m + c];
          acc += g[r * m + c] * wv[j * m + c];
        }
        if (!gx.empty()) gx[r * k + j] += acc;
      }
    }
  });
}

/// Adds a [cols] bias to every row of an [n, cols] tensor.
inline Var add_bias(Var x, Var bias) {
  const Tensor &in = x.value(), &b = bias.value();
  detail::require_rank(b, 1, "add_bias", "bias");
  detail::require_axis(in.shape.back(), b.dim(0), "add_bias", "channel");
  const std::size_t cols = b.dim(0);
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + b[i % cols];
  return x.tape().record(std::move(out), {x, bias}, [cols](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto gb = ctx.input_grad(1);
    if (!gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
    }
  });
}

inline Var affine(Var x, Var weight, Var bias) {
  detail::require_finite(x.value(), "affine");
  return add_bias(matmul(x, weight), bias);
}

/// Row-wise softmax over the last axis, with max subtraction.
inline Var softmax(Var x) {
  const Tensor& in = x.value();
  detail::require_finite(in, "softmax");
  const std::size_t cols = in.shape.back(), rows = in.size() / cols;
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.values.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (out[r * cols + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return x.tape().record(std::move(out), {x}, [rows, cols](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    const auto& y = ctx.output().values;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

// --- sequence layers ------------------------------------------------------

/// 'same' zero-padded 1-D convolution. input [batch, time, ch_in],
/// kernel [k, ch_in, ch_out] with k odd, bias [ch_out].
inline Var conv1d(Var input, Var kernel, Var bias) {
  const Tensor &x = input.value(), &w = kernel.value(), &b = bias.value();
  detail::require_rank(x, 3, "conv1d", "input");
  detail::require_rank(w, 3, "conv1d", "kernel");
  detail::require_rank(b, 1, "conv1d", "bias");
  detail::require_axis(w.dim(1), x.dim(2), "conv1d", "ch_in");
  detail::require_axis(b.dim(0), w.dim(2), "conv1d", "ch_out");
  const std::size_t k = w.dim(0);
  if (k % 2 == 0) throw PreconditionError("conv1d: kernel width must be odd, got " + std::to_string(k));
  const std::size_t batch = x.dim(0), steps = x.dim(1), cin = x.dim(2), cout = w.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto T = static_cast<std::ptrdiff_t>(steps);

  Tensor out({batch, steps, cout});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      double* o = out.values.data() + (n * steps + static_cast<std::size_t>(t)) * cout;
      std::copy(b.values.begin(), b.values.end(), o);
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= T) continue;
        const double* xi = x.values.data() + (n * steps + static_cast<std::size_t>(src)) * cin;
        const double* wj = w.values.data() + j * cin * cout;
        for (std::size_t i = 0; i < cin; ++i) {
          const double xv = xi[i];
          const double* wr = wj + i * cout;
          for (std::size_t c = 0; c < cout; ++c) o[c] += xv * wr[c];
        }
      }
    }
  }
  return input.tape().record(
      std::move(out), {input, kernel, bias}, [batch, steps, cin, cout, k, half, T](GradContext& ctx) {
        auto g = ctx.output_grad();
        const auto &xv = ctx.input(0).values, &wv = ctx.input(1).values;
        auto gx = ctx.input_grad(0);
        auto gw = ctx.input_grad(1);
        auto gb = ctx.input_grad(2);
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::ptrdiff_t t = 0; t < T; ++t) {
            const double* go = g.data() + (n * steps + static_cast<std::size_t>(t)) * cout;
            if (!gb.empty()) {
              for (std::size_t c = 0; c < cout; ++c) gb[c] += go[c];
            }
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - half;
              if (src < 0 || src >= T) continue;
              const std::size_t xoff = (n * steps + static_cast<std::size_t>(src)) * cin;
              for (std::size_t i = 0; i < cin; ++i) {
                const std::size_t woff = (j * cin + i) * cout;
                double acc = 0.0;
                for (std::size_t c = 0; c < cout; ++c) {
                  acc += go[c] * wv[woff + c];
                  if (!gw.empty()) gw[woff + c] += xv[xoff + i] * go[c];
                }
                if (!gx.empty()) gx[xoff + i] += acc;
              }
            }
          }
        }
      });
}

/// Non-overlapping max over `stride` steps. Ties resolve to the earliest step.
inline Var maxpool1d(Var input, std::size_t stride) {
  const Tensor& x = input.value();
  detail::require_rank(x, 3, "maxpool1d", "input");
  if (stride == 0) throw PreconditionError("maxpool1d: stride must be >= 1");
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  if (steps % stride != 0) {
    throw PreconditionError("maxpool1d: time " + std::to_string(steps) + " not divisible by stride " +
                            std::to_string(stride));
  }
  const std::size_t pooled = steps / stride;
  Tensor out({batch, pooled, ch});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t p = 0; p < pooled; ++p) {
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = (n * steps + p * stride) * ch + c;
        for (std::size_t s = 1; s < stride; ++s) {
          const std::size_t idx = (n * steps + p * stride + s) * ch + c;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t o = (n * pooled + p) * ch + c;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return input.tape().record(std::move(out), {input}, [argmax = std::move(argmax)](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t o = 0; o < g.size(); ++o) gi[argmax[o]] += g[o];
  });
}

/// Nearest-neighbour repetition along time: [batch, time, ch] -> [batch, time*factor, ch].
inline Var upsample1d(Var input, std::size_t factor) {
  const Tensor& x = input.value();
  detail::require_rank(x, 3, "upsample1d", "input");
  if (factor < 1) throw PreconditionError("upsample1d: factor must be >= 1");
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  Tensor out({batch, steps * factor, ch});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < steps * factor; ++t) {
      for (std::size_t c = 0; c < ch; ++c) out[(n * steps * factor + t) * ch + c] = x[(n * steps + t / factor) * ch + c];
    }
  }
  return input.tape().record(std::move(out), {input}, [batch, steps, ch, factor](GradContext& ctx) {
    auto g = ctx.output_grad();
    auto gi = ctx.input_grad(0);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t t = 0; t < steps * factor; ++t) {
        for (std::size_t c = 0; c < ch; ++c) gi[(n * steps + t / factor) * ch + c] += g[(n * steps * factor + t) * ch + c];
      }
    }
  });
}

// --- distances and losses -------------------------------------------------

/// Euclidean norm of a - b. The gradient at a == b is taken as zero.
inline Var l2_distance(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  if (x.size() != y.size()) {
    throw DimensionError("l2_distance: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return a.tape().record(Tensor::scalar(std::sqrt(s)), {a, b}, [](GradContext& ctx) {
    const double d = ctx.output()[0];
    if (d == 0.0) return;
    const double g = ctx.output_grad()[0] / d;
    const auto &xv = ctx.input(0).values, &yv = ctx.input(1).values;
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (xv[i] - yv[i]);
    auto gb = ctx.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (xv[i] - yv[i]);
  });
}

/// All-pairs Euclidean distances between the rows of a [r, ...] and b [s, ...]
/// (trailing axes flattened) -> [r, s]. Zero distances carry zero gradient.
inline Var pairwise_l2(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  const std::size_t r = x.dim(0), s = y.dim(0), width = detail::row_width(x);
  if (detail::row_width(y) != width) {
    throw DimensionError("pairwise_l2: row widths " + std::to_string(width) + " and " +
                         std::to_string(detail::row_width(y)));
  }
  Tensor out({r, s});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t e = 0; e < width; ++e) {
        const double d = x[i * width + e] - y[j * width + e];
        acc += d * d;
      }
      out[i * s + j] = std::sqrt(acc);
    }
  }
  return a.tape().record(std::move(out), {a, b}, [r, s, width](GradContext& ctx) {
    auto g = ctx.output_grad();
    const auto &xv = ctx.input(0).values, &yv = ctx.input(1).values;
    const auto& dist = ctx.output().values;
    auto ga = ctx.input_grad(0);
    auto gb = ctx.input_grad(1);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        const double d = dist[i * s + j];
        if (d == 0.0 || g[i * s + j] == 0.0) continue;
        const double f = g[i * s + j] / d;
        for (std::size_t e = 0; e < width; ++e) {
          const double diff = f * (xv[i * width + e] - yv[j * width + e]);
          if (!ga.empty()) ga[i * width + e] += diff;
          if (!gb.empty()) gb[j * width + e] -= diff;
        }
      }
    }
  });
}

inline Var mse(Var a, Var b) {
  const Tensor &x = a.value(), &y = b.value();
  if (x.size() != y.size()) throw DimensionError("mse: shapes " + shape_string(x.shape) + " and " + shape_string(y.shape));
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return a.tape().record(Tensor::scalar(s / n), {a, b}, [n](GradContext& ctx) {
    const double g = 2.0 * ctx.output_grad()[0] / n;
    const auto &xv = ctx.input(0).values, &yv = ctx.input(1).values;
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (xv[i] - yv[i]);
    auto gb = ctx.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (xv[i] - yv[i]);
  });
}

/// -log softmax(logits)[label] for a flat logit vector.
inline Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  detail::require_finite(z, "cross_entropy");
  const std::size_t classes = z.size();
  if (label >= classes) {
    throw PreconditionError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(classes) + " classes");
  }
  const double mx = *std::max_element(z.values.begin(), z.values.end());
  double sum_exp = 0.0;
  for (double v : z.values) sum_exp += std::exp(v - mx);
  const double lse = mx + std::log(sum_exp);
  return logits.tape().record(Tensor::scalar(lse - z[label]), {logits}, [label, lse](GradContext& ctx) {
    const double g = ctx.output_grad()[0];
    const auto& zv = ctx.input(0).values;
    auto gi = ctx.input_grad(0);
    for (std::size_t c = 0; c < gi.size(); ++c) gi[c] += g * (std::exp(zv[c] - lse) - (c == label ? 1.0 : 0.0));
  });
}

}  // namespace p2ex
