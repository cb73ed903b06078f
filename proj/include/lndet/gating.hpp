#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lndet/grouping.hpp"

namespace lndet {

// One detection proposal as seen by the second-stage classifier: a shared
// LN/non-LN label, one logit per station head, and the station probability
// vector that gates the heads. `station_logits` keeps the raw pre-softmax
// station scores when the producer supplies them; `gate` is always the
// normalized probability vector.
struct Proposal {
  std::string proposal_id;
  std::string patient_id;
  int label = 0;  // 1 = lymph node
  bool is_true_positive = false;
  std::optional<std::string> true_station;
  std::vector<double> head_logits;     // s_i
  std::vector<double> gate;            // t_i, non-negative, sums to 1
  std::vector<double> station_logits;  // raw gate inputs; empty when not supplied
};

enum class GateMode { soft, hard, multiclass, pooled, uniform_ensemble };

inline const char* mode_name(GateMode m) {
  switch (m) {
    case GateMode::soft: return "soft";
    case GateMode::hard: return "hard";
    case GateMode::multiclass: return "multiclass";
    case GateMode::pooled: return "pooled";
    case GateMode::uniform_ensemble: return "uniform";
  }
  return "?";
}

inline GateMode parse_mode(const std::string& s) {
  if (s == "soft") return GateMode::soft;
  if (s == "hard") return GateMode::hard;
  if (s == "multiclass") return GateMode::multiclass;
  if (s == "pooled") return GateMode::pooled;
  if (s == "uniform" || s == "uniform_ensemble") return GateMode::uniform_ensemble;
  throw std::invalid_argument("unknown gate mode '" + s + "'");
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary cross-entropy of label y against logit s, evaluated in the
/// softplus form max(s,0) - y*s + log1p(exp(-|s|)). Finite for any
/// representable logit; never goes through sigmoid-then-log.
inline double bce_with_logit(int y, double s) {
  return std::max(s, 0.0) - y * s + std::log1p(std::exp(-std::abs(s)));
}

inline void validate_proposal(const Proposal& p) {
  if (p.label != 0 && p.label != 1)
    throw std::invalid_argument("Proposal: label must be 0 or 1");
  if (p.head_logits.empty())
    throw std::invalid_argument("Proposal: empty head_logits");
  if (p.gate.empty()) throw std::invalid_argument("Proposal: empty gate");
  double sum = 0.0;
  for (double g : p.gate) {
    if (!(g >= 0.0))
      throw std::invalid_argument("Proposal: negative or non-finite gate entry");
    sum += g;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("Proposal: gate does not sum to 1");
  for (double s : p.head_logits)
    if (!std::isfinite(s))
      throw std::invalid_argument("Proposal: non-finite head logit");
  if (!p.station_logits.empty() && p.station_logits.size() != p.gate.size())
    throw std::invalid_argument("Proposal: station_logits size != gate size");
}

namespace detail {
// Common batch checks for the gated ops: every proposal valid, one shared
// head count, |head_logits| == |gate|.
inline size_t checked_head_count(std::span<const Proposal> batch) {
  if (batch.empty()) throw std::invalid_argument("empty proposal batch");
  const size_t c = batch.front().gate.size();
  for (const Proposal& p : batch) {
    validate_proposal(p);
    if (p.gate.size() != c || p.head_logits.size() != c)
      throw std::invalid_argument("proposal batch mixes head counts");
  }
  return c;
}

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}
}  // namespace detail

/// Soft-gated detection loss: mean over the batch of the gate-weighted
/// per-head binary cross-entropies,
///   L = (1/n) sum_i sum_j t_ij * BCE(y_i, sigmoid(s_ij)).
/// Gates are constants here: the station branch is trained separately and
/// no gradient flows back into t (see gated_loss_grad).
inline double gated_loss(std::span<const Proposal> batch) {
  const size_t c = detail::checked_head_count(batch);
  double total = 0.0;
  for (const Proposal& p : batch)
    for (size_t j = 0; j < c; ++j)
      total += p.gate[j] * bce_with_logit(p.label, p.head_logits[j]);
  return total / static_cast<double>(batch.size());
}

/// Analytic gradient of gated_loss w.r.t. the head logits:
///   dL/ds_ij = (1/n) * t_ij * (sigmoid(s_ij) - y_i).
/// Returns one vector of length c per proposal. There is deliberately no
/// gradient output for the gates; the gate is a stopped input.
inline std::vector<std::vector<double>> gated_loss_grad(
    std::span<const Proposal> batch) {
  const size_t c = detail::checked_head_count(batch);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<double>> grad(batch.size(), std::vector<double>(c));
  for (size_t i = 0; i < batch.size(); ++i) {
    const Proposal& p = batch[i];
    for (size_t j = 0; j < c; ++j)
      grad[i][j] = inv_n * p.gate[j] * (sigmoid(p.head_logits[j]) - p.label);
  }
  return grad;
}

/// Inference score: the gate-weighted sum of head logits,
/// s_final = sum_j t_ij * s_ij. Logit scale; use sigmoid(final_score(p))
/// for a display probability.
inline double final_score(const Proposal& p) {
  validate_proposal(p);
  if (p.head_logits.size() != p.gate.size())
    throw std::invalid_argument("final_score: |head_logits| != |gate|");
  double s = 0.0;
  for (size_t j = 0; j < p.gate.size(); ++j) s += p.gate[j] * p.head_logits[j];
  return s;
}

/// Probability-weighted variant: sum_j t_ij * sigmoid(s_ij). Not the
/// published formula; offered for comparison behind a CLI flag.
inline double final_score_prob_weighted(const Proposal& p) {
  validate_proposal(p);
  if (p.head_logits.size() != p.gate.size())
    throw std::invalid_argument("final_score_prob_weighted: |head_logits| != |gate|");
  double s = 0.0;
  for (size_t j = 0; j < p.gate.size(); ++j)
    s += p.gate[j] * sigmoid(p.head_logits[j]);
  return s;
}

/// Hard gating: the logit of the head with the highest station probability.
/// Argmax ties break toward the lowest head index.
inline double hard_gate_score(const Proposal& p) {
  validate_proposal(p);
  if (p.head_logits.size() != p.gate.size())
    throw std::invalid_argument("hard_gate_score: |head_logits| != |gate|");
  size_t best = 0;
  for (size_t j = 1; j < p.gate.size(); ++j)
    if (p.gate[j] > p.gate[best]) best = j;
  return p.head_logits[best];
}

/// Single-head baseline score (the c=1 path).
inline double pooled_score(const Proposal& p) {
  validate_proposal(p);
  return p.head_logits[0];
}

/// Unweighted mean of the head logits (uniform stratification baseline).
inline double uniform_ensemble_score(const Proposal& p) {
  validate_proposal(p);
  double s = 0.0;
  for (double v : p.head_logits) s += v;
  return s / static_cast<double>(p.head_logits.size());
}

struct StationCeResult {
  double value = 0.0;
  int tp_count = 0;  // 0 means the loss was vacuously 0; callers may warn
};

/// Station-classification cross-entropy, computed on TP proposals only
/// (FPs have no station label and contribute nothing). Uses the raw
/// station logits when available, otherwise the log of the stored gate.
inline StationCeResult station_ce_loss(std::span<const Proposal> batch,
                                       const StationGrouping& grouping) {
  if (batch.empty()) throw std::invalid_argument("station_ce_loss: empty batch");
  const size_t c = static_cast<size_t>(grouping.num_heads());
  double total = 0.0;
  int tp = 0;
  for (const Proposal& p : batch) {
    validate_proposal(p);
    if (p.gate.size() != c)
      throw std::invalid_argument("station_ce_loss: gate size != grouping heads");
    if (!p.is_true_positive) continue;
    if (!p.true_station)
      throw std::invalid_argument("station_ce_loss: TP proposal without true_station");
    const int target = grouping.head_of(*p.true_station);
    if (!p.station_logits.empty()) {
      total += detail::log_sum_exp(p.station_logits) - p.station_logits[target];
    } else {
      total += -std::log(p.gate[target]);
    }
    ++tp;
  }
  if (tp == 0) return {0.0, 0};
  return {total / tp, tp};
}

namespace detail {
// Target class for the multiclass variant: LN proposals target their
// station head, everything else targets the appended background class c.
inline int multiclass_target(const Proposal& p, const StationGrouping& g) {
  if (p.label == 1) {
    if (!p.true_station)
      throw std::invalid_argument("multiclass: LN proposal without true_station");
    return g.head_of(*p.true_station);
  }
  return g.num_heads();
}

inline void check_multiclass_batch(std::span<const Proposal> batch,
                                   const StationGrouping& g) {
  if (batch.empty()) throw std::invalid_argument("multiclass: empty batch");
  const size_t width = static_cast<size_t>(g.num_heads()) + 1;
  for (const Proposal& p : batch) {
    validate_proposal(p);
    if (p.head_logits.size() != width)
      throw std::invalid_argument("multiclass: head_logits must have c+1 entries");
  }
}
}  // namespace detail

/// (c+1)-way softmax cross-entropy: c station classes plus an appended
/// background class for non-LN proposals.
inline double multiclass_loss(std::span<const Proposal> batch,
                              const StationGrouping& grouping) {
  detail::check_multiclass_batch(batch, grouping);
  double total = 0.0;
  for (const Proposal& p : batch) {
    const int target = detail::multiclass_target(p, grouping);
    total += detail::log_sum_exp(p.head_logits) - p.head_logits[target];
  }
  return total / static_cast<double>(batch.size());
}

/// Gradient of multiclass_loss w.r.t. the c+1 class logits:
/// (1/n) * (softmax(s_i) - onehot(target_i)).
inline std::vector<std::vector<double>> multiclass_loss_grad(
    std::span<const Proposal> batch, const StationGrouping& grouping) {
  detail::check_multiclass_batch(batch, grouping);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<double>> grad(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const Proposal& p = batch[i];
    const int target = detail::multiclass_target(p, grouping);
    const double lse = detail::log_sum_exp(p.head_logits);
    grad[i].resize(p.head_logits.size());
    for (size_t k = 0; k < p.head_logits.size(); ++k) {
      const double soft = std::exp(p.head_logits[k] - lse);
      grad[i][k] = inv_n * (soft - (static_cast<int>(k) == target ? 1.0 : 0.0));
    }
  }
  return grad;
}

/// Detection score of a multiclass proposal: 1 - softmax probability of the
/// background class (the last logit). Already a probability.
inline double multiclass_score(const Proposal& p) {
  validate_proposal(p);
  if (p.head_logits.size() < 2)
    throw std::invalid_argument("multiclass_score: need at least 2 class logits");
  const double lse = detail::log_sum_exp(p.head_logits);
  return 1.0 - std::exp(p.head_logits.back() - lse);
}

}  // namespace lndet
