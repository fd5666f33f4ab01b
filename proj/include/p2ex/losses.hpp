#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "p2ex/model.hpp"
#include "p2ex/ops.hpp"

namespace p2ex {

struct LossWeights {
  double lambda_c = 10.0;
  double lambda_mse = 1.0;
  double lambda_p2s = 1.0;
  double lambda_s2p = 1.0;
  double lambda_div = 1.0;
  double lambda_clst = 1.0;
  double lambda_sep = 1.0;
};

/// Unweighted components plus their weighted sum.
struct LossBreakdown {
  double cross_entropy = 0.0;
  double mse = 0.0;
  double l_p2s = 0.0;
  double l_s2p = 0.0;
  double l_div = 0.0;
  double l_clst = 0.0;
  double l_sep = 0.0;
  double total = 0.0;

  static constexpr std::array<const char*, 8> names = {"cross_entropy", "mse", "l_p2s", "l_s2p",
                                                       "l_div",         "l_clst", "l_sep", "total"};

  std::array<double, 8> as_array() const { return {cross_entropy, mse, l_p2s, l_s2p, l_div, l_clst, l_sep, total}; }

  double weighted_sum(const LossWeights& w) const {
    return w.lambda_c * cross_entropy + w.lambda_mse * mse + w.lambda_p2s * l_p2s + w.lambda_s2p * l_s2p +
           w.lambda_div * l_div + w.lambda_clst * l_clst + w.lambda_sep * l_sep;
  }

  void require_finite() const {
    const auto v = as_array();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) throw NumericError(std::string("patch loss: component ") + names[i] + " is not finite");
    }
  }

  /// Sign contract: everything non-negative except l_div and l_sep.
  bool signs_ok() const {
    return cross_entropy >= 0.0 && mse >= 0.0 && l_p2s >= 0.0 && l_s2p >= 0.0 && l_clst >= 0.0 && l_div <= 0.0 &&
           l_sep <= 0.0;
  }
};

namespace detail {

/// Row mask over a [K, Q] distance grid selecting prototypes of class y
/// (same_class) or of every other class.
inline std::vector<std::uint8_t> class_row_mask(const std::vector<std::size_t>& class_of, std::size_t y,
                                                std::size_t cols, bool same_class) {
  std::vector<std::uint8_t> mask(class_of.size() * cols, 0);
  bool any = false;
  for (std::size_t k = 0; k < class_of.size(); ++k) {
    if ((class_of[k] == y) != same_class) continue;
    any = true;
    for (std::size_t q = 0; q < cols; ++q) mask[k * cols + q] = 1;
  }
  if (!any) {
    throw PreconditionError(same_class ? "class partition: no prototype assigned to class " + std::to_string(y)
                                       : "class partition: no prototype outside class " + std::to_string(y));
  }
  return mask;
}

inline std::vector<std::uint8_t> off_diagonal_mask(std::size_t n) {
  std::vector<std::uint8_t> mask(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
  return mask;
}

inline Var as_rows(Tape& tape, const Tensor& t) {
  if (t.rank() == 1) return tape.constant(Tensor({1, t.dim(0)}, t.values));
  return tape.constant(t);
}

}  // namespace detail

// --- differentiable distance terms over a [K, Q] distance grid ------------

/// Per patch: min over all prototypes -> [Q].
inline Var d_s2p(Var distances) { return reduce_min(distances, 0); }
/// Per prototype: min over all patches -> [K].
inline Var d_p2s(Var distances) { return reduce_min(distances, 1); }

inline Var d_clst(Var distances, std::size_t y, const std::vector<std::size_t>& class_of) {
  auto mask = detail::class_row_mask(class_of, y, distances.shape()[1], true);
  return reduce_min(distances, 0, &mask);
}

inline Var d_sep(Var distances, std::size_t y, const std::vector<std::size_t>& class_of) {
  auto mask = detail::class_row_mask(class_of, y, distances.shape()[1], false);
  return reduce_min(distances, 0, &mask);
}

/// Per prototype: min distance to any other prototype -> [K].
inline Var d_p2p(Var protos) {
  const std::size_t K = protos.shape()[0];
  if (K < 2) throw PreconditionError("d_p2p: need at least 2 prototypes");
  auto mask = detail::off_diagonal_mask(K);
  return reduce_min(pairwise_l2(protos, protos), 1, &mask);
}

inline Var loss_p2s(Var distances) { return mean(d_p2s(distances)); }
inline Var loss_s2p(Var distances) { return mean(d_s2p(distances)); }

/// -log(1 + mean_k d_p2p(k)); <= 0 and decreasing in prototype spread.
inline Var loss_div(Var protos) { return scale(log(add_scalar(mean(d_p2p(protos)), 1.0)), -1.0); }

inline Var loss_clst(Var distances, std::size_t y, const std::vector<std::size_t>& class_of) {
  return mean(d_clst(distances, y, class_of));
}

inline Var loss_sep(Var distances, std::size_t y, const std::vector<std::size_t>& class_of) {
  return scale(mean(d_sep(distances, y, class_of)), -1.0);
}

// --- value-level distances on raw patches and prototypes ------------------
// A patch is any tensor of the prototype row width; sets are [n, ...].

inline double d_s2p(const Tensor& patch, const Tensor& protos) {
  Tape tape;
  if (protos.size() == 0) throw PreconditionError("d_s2p: empty prototype set");
  Var d = pairwise_l2(tape.constant(protos), detail::as_rows(tape, Tensor({1, patch.size()}, patch.values)));
  return d_s2p(d).value()[0];
}

inline double d_p2s(const Tensor& proto, const Tensor& patches) {
  Tape tape;
  Var d = pairwise_l2(detail::as_rows(tape, Tensor({1, proto.size()}, proto.values)), tape.constant(patches));
  return d_p2s(d).value()[0];
}

inline double d_p2p(std::size_t k, const Tensor& protos) {
  Tape tape;
  Tensor all = d_p2p(tape.constant(protos)).value();
  return all.values.at(k);
}

inline double d_clst(const Tensor& patch, std::size_t y, const PrototypeBank& bank) {
  Tape tape;
  Var d = pairwise_l2(tape.constant(bank.protos), detail::as_rows(tape, Tensor({1, patch.size()}, patch.values)));
  return d_clst(d, y, bank.class_of).value()[0];
}

inline double d_sep(const Tensor& patch, std::size_t y, const PrototypeBank& bank) {
  Tape tape;
  Var d = pairwise_l2(tape.constant(bank.protos), detail::as_rows(tape, Tensor({1, patch.size()}, patch.values)));
  return d_sep(d, y, bank.class_of).value()[0];
}

inline double loss_p2s(const PatchGrid& grid, const PrototypeBank& bank) {
  Tape tape;
  return loss_p2s(pairwise_l2(tape.constant(bank.protos), tape.constant(grid.patches))).value()[0];
}

inline double loss_s2p(const PatchGrid& grid, const PrototypeBank& bank) {
  Tape tape;
  return loss_s2p(pairwise_l2(tape.constant(bank.protos), tape.constant(grid.patches))).value()[0];
}

inline double loss_div(const PrototypeBank& bank) {
  Tape tape;
  return loss_div(tape.constant(bank.protos)).value()[0];
}

inline double loss_clst(const PatchGrid& grid, std::size_t y, const PrototypeBank& bank) {
  Tape tape;
  return loss_clst(pairwise_l2(tape.constant(bank.protos), tape.constant(grid.patches)), y, bank.class_of).value()[0];
}

inline double loss_sep(const PatchGrid& grid, std::size_t y, const PrototypeBank& bank) {
  Tape tape;
  return loss_sep(pairwise_l2(tape.constant(bank.protos), tape.constant(grid.patches)), y, bank.class_of).value()[0];
}

// --- combined loss --------------------------------------------------------

/// Per-sample terms of the combined loss (everything except diversity,
/// which depends on the prototypes alone).
struct SampleLossVars {
  Var cross_entropy;
  Var mse;
  Var l_p2s;
  Var l_s2p;
  Var l_clst;
  Var l_sep;
};

inline SampleLossVars sample_loss_terms(const P2ExForward& f, std::size_t y, const std::vector<std::size_t>& class_of) {
  return {cross_entropy(f.logits, y),
          mse(f.input, f.reconstruction),
          loss_p2s(f.distances),
          loss_s2p(f.distances),
          loss_clst(f.distances, y, class_of),
          loss_sep(f.distances, y, class_of)};
}

/// Weighted sum of the per-sample terms (no diversity term).
inline Var weighted_sample_total(const SampleLossVars& t, const LossWeights& w) {
  Var total = scale(t.cross_entropy, w.lambda_c);
  total = add(total, scale(t.mse, w.lambda_mse));
  total = add(total, scale(t.l_p2s, w.lambda_p2s));
  total = add(total, scale(t.l_s2p, w.lambda_s2p));
  total = add(total, scale(t.l_clst, w.lambda_clst));
  total = add(total, scale(t.l_sep, w.lambda_sep));
  return total;
}

inline LossBreakdown breakdown_of(const SampleLossVars& t) {
  LossBreakdown b;
  b.cross_entropy = t.cross_entropy.value()[0];
  b.mse = t.mse.value()[0];
  b.l_p2s = t.l_p2s.value()[0];
  b.l_s2p = t.l_s2p.value()[0];
  b.l_clst = t.l_clst.value()[0];
  b.l_sep = t.l_sep.value()[0];
  return b;
}

struct PatchLoss {
  Var total;
  LossBreakdown breakdown;
};

/// Full combined loss of a single sample, diversity included.
inline PatchLoss patch_loss(const P2ExForward& f, std::size_t y, const std::vector<std::size_t>& class_of,
                            const LossWeights& w) {
  auto terms = sample_loss_terms(f, y, class_of);
  Var div = loss_div(f.protos);
  Var total = add(weighted_sample_total(terms, w), scale(div, w.lambda_div));
  LossBreakdown b = breakdown_of(terms);
  b.l_div = div.value()[0];
  b.total = total.value()[0];
  b.require_finite();
  return {total, b};
}

}  // namespace p2ex
