#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lndet/detail/format.hpp"
#include "lndet/eval.hpp"
#include "lndet/gating.hpp"
#include "lndet/geometry.hpp"
#include "lndet/grouping.hpp"

namespace lndet::synth {

// Desk-scale generator for station-structured proposals. Each station gets
// its own context mean and its own discriminative axis (pairwise orthogonal
// standard-basis directions), so a single pooled linear head cannot separate
// LN from non-LN across stations while per-station heads can.
struct SynthConfig {
  int num_stations = 6;
  int feature_dim = 16;
  int proposals_per_station = 6;  // per patient
  int patients = 40;
  double station_noise = 0.1;  // probability a gate is corrupted toward a wrong station
  double margin = 3.0;         // LN vs non-LN separation along the station axis
  std::uint64_t seed = 42;

  // Generator shape knobs; the defaults match the study the tests pin down.
  double context_scale = 1.5;   // magnitude of the per-station context offsets
  double feature_noise = 0.5;   // isotropic feature noise sigma
};

inline void validate(const SynthConfig& cfg) {
  if (cfg.num_stations < 1) throw std::invalid_argument("SynthConfig: num_stations < 1");
  if (cfg.feature_dim < cfg.num_stations)
    throw std::invalid_argument(
        "SynthConfig: feature_dim < num_stations (orthogonal directions need one axis per station)");
  if (cfg.proposals_per_station < 1)
    throw std::invalid_argument("SynthConfig: proposals_per_station < 1");
  if (cfg.patients < 1) throw std::invalid_argument("SynthConfig: patients < 1");
  if (!(cfg.station_noise >= 0.0 && cfg.station_noise < 1.0))
    throw std::invalid_argument("SynthConfig: station_noise outside [0,1)");
  if (!(cfg.margin > 0.0)) throw std::invalid_argument("SynthConfig: margin <= 0");
  if (!(cfg.context_scale >= 0.0) || !(cfg.feature_noise >= 0.0))
    throw std::invalid_argument("SynthConfig: negative scale");
}

namespace detail {

// Deterministic sampler on top of the standard-specified mt19937_64 stream.
// std::*_distribution is implementation-defined, so the transforms live here
// and byte-identical reruns hold on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform01() { return (eng_() >> 11) * 0x1.0p-53; }

  double normal() {
    const double u1 = ((eng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = (eng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
  }

  int uniform_int(int n) {  // [0, n); modulo bias is irrelevant at these ranges
    return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace detail

struct Sample {
  std::string proposal_id;
  std::string patient_id;
  int station = 0;  // generating station
  int label = 0;    // 1 = LN
  std::vector<double> features;
  std::vector<double> gate;  // predicted-station stand-in, normalized
  Box3D location;            // disjoint per-sample stand-in box (score unused)
};

struct Dataset {
  SynthConfig cfg;
  std::vector<std::string> patient_ids;  // generation order
  std::vector<Sample> samples;
  std::vector<GroundTruthLesion> lesions;  // one per LN-labeled sample
};

/// Deterministic synthetic dataset. Per station j: context mean
/// mu_j = context_scale * (random +-1 on the other stations' axes, 0 on its
/// own axis and on extra dims); features x = mu_j +- (margin/2) e_j + noise,
/// sign by the LN label (labels alternate LN/non-LN inside each
/// patient-station block, so every patient has lesions). Gates start
/// one-hot at the true station and are blended to a probability vector;
/// with probability station_noise the argmax is pushed to a wrong station
/// while the true station keeps substantial mass.
inline Dataset generate(const SynthConfig& cfg) {
  validate(cfg);
  const int c = cfg.num_stations;
  const int d = cfg.feature_dim;
  detail::Rng rng(cfg.seed);

  // Per-station context offsets, drawn before any sample.
  std::vector<std::vector<double>> context(c, std::vector<double>(d, 0.0));
  for (int j = 0; j < c; ++j)
    for (int k = 0; k < c; ++k) {
      if (k == j) continue;
      context[j][k] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * cfg.context_scale;
    }

  // Gate mass split: clean gates put kClean on the true station; corrupted
  // gates put kWrong on a wrong station and kTrue on the true one, so hard
  // gating picks the wrong head while soft gating still sees the true one.
  constexpr double kSmooth = 0.1, kClean = 0.9, kWrong = 0.5, kTrue = 0.4;

  Dataset data;
  data.cfg = cfg;
  for (int p = 0; p < cfg.patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof(pid), "P%03d", p);
    data.patient_ids.emplace_back(pid);
    int ordinal = 0;
    for (int j = 0; j < c; ++j) {
      for (int k = 0; k < cfg.proposals_per_station; ++k, ++ordinal) {
        const int label = (k % 2 == 0) ? 1 : 0;

        std::vector<double> features = context[j];
        features[j] += (label == 1 ? 0.5 : -0.5) * cfg.margin;
        for (int m = 0; m < d; ++m) features[m] += cfg.feature_noise * rng.normal();

        std::vector<double> gate(c, kSmooth / c);
        if (c > 1 && rng.uniform01() < cfg.station_noise) {
          const int wrong = (j + 1 + rng.uniform_int(c - 1)) % c;
          gate[wrong] += kWrong;
          gate[j] += kTrue;
        } else {
          gate[j] += kClean;
        }

        const double x0 = 16.0 * ordinal;
        Sample s{std::string(pid) + "-s" + std::to_string(j) + "-" + std::to_string(k),
                 pid,
                 j,
                 label,
                 std::move(features),
                 std::move(gate),
                 Box3D(pid, x0, 0.0, x0 + 8.0, 8.0, 0, 1, 1.0)};
        if (s.label == 1)
          data.lesions.emplace_back(s.proposal_id, s.location, 10.0, 12.0,
                                    std::to_string(j));
        data.samples.push_back(std::move(s));
      }
    }
  }
  return data;
}

/// Keep only the samples/lesions of the named patients.
inline Dataset filter_patients(const Dataset& data, const std::set<std::string>& keep) {
  Dataset out;
  out.cfg = data.cfg;
  for (const auto& pid : data.patient_ids)
    if (keep.count(pid)) out.patient_ids.push_back(pid);
  for (const Sample& s : data.samples)
    if (keep.count(s.patient_id)) out.samples.push_back(s);
  for (const GroundTruthLesion& l : data.lesions)
    if (keep.count(l.patient_id())) out.lesions.push_back(l);
  return out;
}

// One linear probe per head: logit_h(x) = weights[h] . x + bias[h].
struct LinearHeads {
  std::vector<std::vector<double>> weights;
  std::vector<double> bias;

  int head_count() const { return static_cast<int>(weights.size()); }

  std::vector<double> logits(const std::vector<double>& x) const {
    std::vector<double> out(weights.size());
    for (size_t h = 0; h < weights.size(); ++h) {
      double s = bias[h];
      for (size_t m = 0; m < x.size(); ++m) s += weights[h][m] * x[m];
      out[h] = s;
    }
    return out;
  }
};

struct TrainResult {
  LinearHeads heads;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int epochs = 0;
};

namespace detail {

// The per-mode gate used for the training loss. Inference gates differ
// (they always come from the sample).
inline std::vector<double> training_gate(const Sample& s, GateMode mode, int c) {
  switch (mode) {
    case GateMode::soft:
    case GateMode::multiclass:  // unused by the multiclass loss; kept valid
      return s.gate;
    case GateMode::hard: {
      size_t best = 0;
      for (size_t j = 1; j < s.gate.size(); ++j)
        if (s.gate[j] > s.gate[best]) best = j;
      std::vector<double> g(s.gate.size(), 0.0);
      g[best] = 1.0;
      return g;
    }
    case GateMode::pooled:
      return {1.0};
    case GateMode::uniform_ensemble:
      return std::vector<double>(c, 1.0 / c);
  }
  throw std::invalid_argument("training_gate: bad mode");
}

inline int head_count_for(GateMode mode, int c) {
  if (mode == GateMode::pooled) return 1;
  if (mode == GateMode::multiclass) return c + 1;
  return c;
}

}  // namespace detail

/// Full-batch gradient descent of the mode's loss over linear probes that
/// start at zero. Throws if the loss ever turns non-finite (step size too
/// large). epochs = 0 returns the initial parameters.
inline TrainResult train_heads(const Dataset& data, GateMode mode, int epochs,
                               double step_size) {
  if (data.samples.empty()) throw std::invalid_argument("train_heads: no samples");
  if (epochs < 0) throw std::invalid_argument("train_heads: negative epochs");
  if (!(step_size > 0.0)) throw std::invalid_argument("train_heads: step_size <= 0");
  const int c = data.cfg.num_stations;
  const int d = data.cfg.feature_dim;
  const int heads = detail::head_count_for(mode, c);
  const StationGrouping grouping = StationGrouping::identity(c);

  std::vector<Proposal> batch;
  batch.reserve(data.samples.size());
  for (const Sample& s : data.samples) {
    Proposal p;
    p.proposal_id = s.proposal_id;
    p.patient_id = s.patient_id;
    p.label = s.label;
    p.is_true_positive = s.label == 1;
    p.true_station = std::to_string(s.station);
    p.gate = detail::training_gate(s, mode, c);
    p.head_logits.assign(heads, 0.0);
    batch.push_back(std::move(p));
  }

  TrainResult result;
  result.heads.weights.assign(heads, std::vector<double>(d, 0.0));
  result.heads.bias.assign(heads, 0.0);

  auto refresh_logits = [&] {
    for (size_t i = 0; i < batch.size(); ++i)
      batch[i].head_logits = result.heads.logits(data.samples[i].features);
  };
  auto loss_of = [&] {
    return mode == GateMode::multiclass ? multiclass_loss(batch, grouping)
                                        : gated_loss(batch);
  };

  refresh_logits();
  result.initial_loss = loss_of();
  result.final_loss = result.initial_loss;
  if (!std::isfinite(result.initial_loss))
    throw std::runtime_error("train_heads: non-finite loss");

  for (int e = 0; e < epochs; ++e) {
    const auto grad = mode == GateMode::multiclass
                          ? multiclass_loss_grad(batch, grouping)
                          : gated_loss_grad(batch);
    for (size_t i = 0; i < batch.size(); ++i) {
      const std::vector<double>& x = data.samples[i].features;
      for (int h = 0; h < heads; ++h) {
        const double g = grad[i][h];
        if (g == 0.0) continue;
        double* w = result.heads.weights[h].data();
        for (int m = 0; m < d; ++m) w[m] -= step_size * g * x[m];
        result.heads.bias[h] -= step_size * g;
      }
    }
    refresh_logits();
    result.final_loss = loss_of();
    result.epochs = e + 1;
    if (!std::isfinite(result.final_loss))
      throw std::runtime_error("train_heads: non-finite loss (step size too large)");
  }
  return result;
}

/// Detection probability of one sample under a trained head set.
inline double score_sample(const LinearHeads& heads, GateMode mode, const Sample& s) {
  Proposal p;
  p.proposal_id = s.proposal_id;
  p.patient_id = s.patient_id;
  p.head_logits = heads.logits(s.features);
  p.gate = (mode == GateMode::pooled) ? std::vector<double>{1.0} : s.gate;
  switch (mode) {
    case GateMode::soft: return sigmoid(final_score(p));
    case GateMode::hard: return sigmoid(hard_gate_score(p));
    case GateMode::pooled: return sigmoid(pooled_score(p));
    case GateMode::uniform_ensemble: return sigmoid(uniform_ensemble_score(p));
    case GateMode::multiclass: return multiclass_score(p);
  }
  throw std::invalid_argument("score_sample: bad mode");
}

struct ModeResult {
  GateMode mode = GateMode::soft;
  TrainResult train;
  std::vector<double> eval_scores;  // parallel to the held-out sample list
  FrocCurve curve;
};

struct StudyReport {
  SynthConfig cfg;
  int epochs = 0;
  double step_size = 0.0;
  int train_patient_count = 0;
  int eval_patient_count = 0;
  int eligible_lesions = 0;
  std::vector<ModeResult> modes;
};

/// Generate, split 60/40 by patient, train each requested mode on the
/// training patients, score the held-out proposals as point detections, and
/// evaluate each mode with the default FROC protocol.
inline StudyReport run_study(const SynthConfig& cfg, const std::vector<GateMode>& modes,
                             int epochs = 800, double step_size = 0.1) {
  validate(cfg);
  if (cfg.patients < 2)
    throw std::invalid_argument("run_study: need at least 2 patients to split");
  if (modes.empty()) throw std::invalid_argument("run_study: no modes requested");

  const Dataset data = generate(cfg);
  const int train_n = std::max(1, (3 * cfg.patients) / 5);
  std::set<std::string> train_ids(data.patient_ids.begin(),
                                  data.patient_ids.begin() + train_n);
  std::set<std::string> eval_ids(data.patient_ids.begin() + train_n,
                                 data.patient_ids.end());
  const Dataset train = filter_patients(data, train_ids);
  const Dataset eval = filter_patients(data, eval_ids);

  StudyReport report;
  report.cfg = cfg;
  report.epochs = epochs;
  report.step_size = step_size;
  report.train_patient_count = static_cast<int>(train.patient_ids.size());
  report.eval_patient_count = static_cast<int>(eval.patient_ids.size());
  report.eligible_lesions = static_cast<int>(eval.lesions.size());

  const EvalConfig eval_cfg;
  for (GateMode mode : modes) {
    ModeResult mr;
    mr.mode = mode;
    mr.train = train_heads(train, mode, epochs, step_size);

    std::vector<Box3D> preds;
    preds.reserve(eval.samples.size());
    for (const Sample& s : eval.samples) {
      const double prob = score_sample(mr.train.heads, mode, s);
      mr.eval_scores.push_back(prob);
      Box3D det = s.location;
      det.score = prob;
      preds.push_back(std::move(det));
    }
    mr.curve = froc(preds, eval.lesions, report.eval_patient_count, eval_cfg);
    report.modes.push_back(std::move(mr));
  }
  return report;
}

inline void write_summary_csv(std::ostream& os, const StudyReport& report) {
  os << "mode";
  if (!report.modes.empty())
    for (const auto& [f, s] : report.modes.front().curve.sens_at)
      os << ",sens_at_" << lndet::detail::format_g9(f);
  os << ",avg_sensitivity,initial_loss,final_loss,epochs\n";
  for (const ModeResult& mr : report.modes) {
    os << mode_name(mr.mode);
    for (const auto& [f, s] : mr.curve.sens_at) os << ',' << lndet::detail::format_g9(s);
    os << ',' << lndet::detail::format_g9(mr.curve.avg_sensitivity) << ','
       << lndet::detail::format_g9(mr.train.initial_loss) << ','
       << lndet::detail::format_g9(mr.train.final_loss) << ',' << mr.train.epochs
       << '\n';
  }
}

inline void write_report_text(std::ostream& os, const StudyReport& report) {
  const SynthConfig& cfg = report.cfg;
  auto fixed4 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  os << "synthetic station-stratification study\n";
  os << "stations=" << cfg.num_stations << " dim=" << cfg.feature_dim
     << " patients=" << cfg.patients << " proposals_per_station=" << cfg.proposals_per_station
     << " station_noise=" << lndet::detail::format_g9(cfg.station_noise)
     << " margin=" << lndet::detail::format_g9(cfg.margin) << " seed=" << cfg.seed << "\n";
  os << "split: " << report.train_patient_count << " train / " << report.eval_patient_count
     << " eval patients, " << report.eligible_lesions << " eligible lesions\n";
  os << "training: epochs=" << report.epochs
     << " step=" << lndet::detail::format_g9(report.step_size) << "\n\n";

  os << std::left << std::setw(12) << "mode";
  if (!report.modes.empty())
    for (const auto& [f, s] : report.modes.front().curve.sens_at)
      os << std::setw(10) << ("sens@" + lndet::detail::format_g9(f));
  os << std::setw(10) << "avg" << std::setw(12) << "final_loss" << "\n";
  for (const ModeResult& mr : report.modes) {
    os << std::left << std::setw(12) << mode_name(mr.mode);
    for (const auto& [f, s] : mr.curve.sens_at) os << std::setw(10) << fixed4(s);
    os << std::setw(10) << fixed4(mr.curve.avg_sensitivity) << std::setw(12)
       << fixed4(mr.train.final_loss) << "\n";
  }
}

}  // namespace lndet::synth
