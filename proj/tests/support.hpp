#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "p2ex/p2ex.hpp"

namespace p2ex::testing {

inline Tensor random_tensor(Shape shape, CounterRng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar function of a list of leaves, built on the given tape.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_scalar(const TapeFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
  return f(tape, leaves).value().item();
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients with central differences (step h) for every
/// element of every input. Relative error uses max(|a|, |n|, 1e-3) as the
/// denominator so exact zeros compare on an absolute scale.
inline GradCheck check_gradients(const TapeFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var out = f(tape, leaves);
    tape.backward(out);
    for (Var v : leaves) {
      const auto& g = tape.grad(v);
      analytic.push_back(g ? *g : std::vector<double>(v.value().size(), 0.0));
    }
  }
  GradCheck r;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].size(); ++j) {
      const double keep = probe[i][j];
      probe[i][j] = keep + h;
      const double up = eval_scalar(f, probe);
      probe[i][j] = keep - h;
      const double down = eval_scalar(f, probe);
      probe[i][j] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

// --- naive oracles ----------------------------------------------------------

/// 'same' zero-padded correlation, [batch, time, cin] x [k, cin, cout].
inline Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t B = x.dim(0), T = x.dim(1), ci = x.dim(2), k = w.dim(0), co = w.dim(2);
  const long half = static_cast<long>(k / 2);
  Tensor out({B, T, co});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t o = 0; o < co; ++o) {
        double acc = b[o];
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t) + static_cast<long>(j) - half;
          if (src < 0 || src >= static_cast<long>(T)) continue;
          for (std::size_t c = 0; c < ci; ++c) {
            acc += x[(n * T + static_cast<std::size_t>(src)) * ci + c] * w[(j * ci + c) * co + o];
          }
        }
        out[(n * T + t) * co + o] = acc;
      }
    }
  }
  return out;
}

inline Tensor maxpool_oracle(const Tensor& x, std::size_t stride) {
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  Tensor out({B, T / stride, C});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t t = 0; t < T / stride; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        double m = x[(n * T + t * stride) * C + c];
        for (std::size_t j = 1; j < stride; ++j) m = std::max(m, x[(n * T + t * stride + j) * C + c]);
        out[(n * T / stride + t) * C + c] = m;
      }
    }
  }
  return out;
}

inline Tensor upsample_oracle(const Tensor& x, std::size_t factor) {
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  Tensor out({B, T * factor, C});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t t = 0; t < T * factor; ++t) {
      for (std::size_t c = 0; c < C; ++c) out[(n * T * factor + t) * C + c] = x[(n * T + t / factor) * C + c];
    }
  }
  return out;
}

/// Euclidean distance between row i of a and row j of b, as one flat loop.
inline double row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t w = a.size() / a.dim(0);
  double s = 0.0;
  for (std::size_t e = 0; e < w; ++e) {
    const double d = a[i * w + e] - b[j * w + e];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace p2ex::testing
