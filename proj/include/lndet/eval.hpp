#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lndet/detail/format.hpp"
#include "lndet/geometry.hpp"

namespace lndet {

// Thrown for evaluation-domain failures (e.g. sensitivity undefined because
// no ground truth is eligible), as opposed to input/usage errors.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GroundTruthLesion {
  std::string lesion_id;
  Box3D box;  // box.score is unused for ground truth
  double short_axis_mm = 0.0;
  double long_axis_mm = 0.0;
  std::string station;

  GroundTruthLesion(std::string lesion, Box3D b, double short_mm, double long_mm,
                    std::string station_name)
      : lesion_id(std::move(lesion)),
        box(std::move(b)),
        short_axis_mm(short_mm),
        long_axis_mm(long_mm),
        station(std::move(station_name)) {
    if (!(short_axis_mm > 0.0) || !(long_axis_mm > 0.0))
      throw std::invalid_argument("GroundTruthLesion: axes must be positive");
    if (short_axis_mm > long_axis_mm)
      throw std::invalid_argument("GroundTruthLesion: short axis exceeds long axis");
  }

  const std::string& patient_id() const { return box.patient_id; }
};

struct EvalConfig {
  double iobb_threshold = 0.3;
  double min_short_axis_mm = 7.0;
  std::vector<double> fp_points = {0.5, 1.0, 2.0, 4.0};
};

inline void validate(const EvalConfig& cfg) {
  if (!(cfg.iobb_threshold > 0.0 && cfg.iobb_threshold < 1.0))
    throw std::invalid_argument("EvalConfig: iobb_threshold outside (0,1)");
  if (!(cfg.min_short_axis_mm >= 0.0))
    throw std::invalid_argument("EvalConfig: negative min_short_axis_mm");
  if (cfg.fp_points.empty())
    throw std::invalid_argument("EvalConfig: no fp_points");
  for (size_t i = 0; i < cfg.fp_points.size(); ++i) {
    if (!(cfg.fp_points[i] > 0.0))
      throw std::invalid_argument("EvalConfig: fp_points must be positive");
    if (i > 0 && !(cfg.fp_points[i] > cfg.fp_points[i - 1]))
      throw std::invalid_argument("EvalConfig: fp_points must be strictly increasing");
  }
}

enum class Verdict { TP, FP, Ignored };

struct MatchResult {
  std::vector<Verdict> verdicts;   // parallel to the prediction list
  std::vector<bool> gt_detected;   // parallel to the ground-truth list
  int eligible_gt_count = 0;
};

/// Greedy matching by descending prediction score. A prediction hitting an
/// undetected eligible GT (IoBB above threshold) is a TP and claims the GT
/// with the highest IoBB; a further hit on an already-detected GT is
/// Ignored rather than FP; a hit landing only on sub-threshold (too small)
/// GTs is Ignored; anything else is an FP. Eligible means
/// short_axis_mm >= cfg.min_short_axis_mm. A prediction overlapping both an
/// eligible and an ignored GT counts against the eligible one.
inline MatchResult match_detections(const std::vector<Box3D>& preds,
                                    const std::vector<GroundTruthLesion>& gts,
                                    const EvalConfig& cfg) {
  validate(cfg);
  std::map<std::string, std::vector<size_t>> gts_of_patient;
  for (size_t g = 0; g < gts.size(); ++g)
    gts_of_patient[gts[g].patient_id()].push_back(g);

  MatchResult res;
  res.verdicts.assign(preds.size(), Verdict::FP);
  res.gt_detected.assign(gts.size(), false);
  for (const GroundTruthLesion& gt : gts)
    if (gt.short_axis_mm >= cfg.min_short_axis_mm) ++res.eligible_gt_count;

  std::vector<size_t> order(preds.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return preds[a].score > preds[b].score;
  });

  for (size_t pi : order) {
    const Box3D& pred = preds[pi];
    auto it = gts_of_patient.find(pred.patient_id);
    if (it == gts_of_patient.end())
      throw std::invalid_argument("match_detections: prediction for unknown patient '" +
                                  pred.patient_id + "'");
    long claim = -1;
    double claim_iobb = 0.0;
    bool hit_detected_eligible = false;
    bool hit_ignored_gt = false;
    for (size_t g : it->second) {
      const GroundTruthLesion& gt = gts[g];
      const double overlap = iobb3d(pred, gt.box);
      if (overlap <= cfg.iobb_threshold) continue;
      if (gt.short_axis_mm >= cfg.min_short_axis_mm) {
        if (res.gt_detected[g]) {
          hit_detected_eligible = true;
        } else if (claim < 0 || overlap > claim_iobb) {
          claim = static_cast<long>(g);
          claim_iobb = overlap;
        }
      } else {
        hit_ignored_gt = true;
      }
    }
    if (claim >= 0) {
      res.verdicts[pi] = Verdict::TP;
      res.gt_detected[claim] = true;
    } else if (hit_detected_eligible || hit_ignored_gt) {
      res.verdicts[pi] = Verdict::Ignored;
    }  // else stays FP
  }
  return res;
}

struct FrocPoint {
  double threshold = 0.0;
  double fp_per_patient = 0.0;
  double sensitivity = 0.0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // one per distinct score, descending threshold
  std::vector<std::pair<double, double>> sens_at;  // (fp_point, sensitivity)
  double avg_sensitivity = 0.0;
};

namespace detail {

// Build the curve from per-prediction (score, verdict) outcomes. Scores
// sweep descending; each distinct score contributes one operating point
// after all predictions at that score are counted. sens_at picks, for each
// requested FP rate, the highest sensitivity among operating points whose
// FP rate does not exceed it (step function, no interpolation).
inline FrocCurve froc_from_outcomes(std::vector<std::pair<double, Verdict>> outcomes,
                                    int eligible_gts, int num_patients,
                                    const EvalConfig& cfg) {
  validate(cfg);
  if (num_patients < 1)
    throw std::invalid_argument("froc: num_patients must be >= 1");
  if (eligible_gts <= 0)
    throw EvaluationError("froc: no eligible ground-truth lesion; sensitivity undefined");

  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  FrocCurve curve;
  long tp = 0, fp = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    switch (outcomes[i].second) {
      case Verdict::TP: ++tp; break;
      case Verdict::FP: ++fp; break;
      case Verdict::Ignored: break;
    }
    const bool last_of_score =
        i + 1 == outcomes.size() || outcomes[i + 1].first != outcomes[i].first;
    if (last_of_score) {
      FrocPoint pt;
      pt.threshold = outcomes[i].first;
      pt.fp_per_patient = static_cast<double>(fp) / num_patients;
      pt.sensitivity = static_cast<double>(tp) / eligible_gts;
      curve.points.push_back(pt);
    }
  }

  double sens_sum = 0.0;
  for (double f : cfg.fp_points) {
    double best = 0.0;
    for (const FrocPoint& pt : curve.points)
      if (pt.fp_per_patient <= f) best = std::max(best, pt.sensitivity);
    curve.sens_at.emplace_back(f, best);
    sens_sum += best;
  }
  curve.avg_sensitivity = sens_sum / static_cast<double>(cfg.fp_points.size());
  return curve;
}

}  // namespace detail

/// FROC curve: sweep the score threshold through every distinct prediction
/// score and report (FPs per patient, sensitivity) at each, plus the
/// sensitivities at the configured FP rates and their mean.
inline FrocCurve froc(const std::vector<Box3D>& preds,
                      const std::vector<GroundTruthLesion>& gts, int num_patients,
                      const EvalConfig& cfg) {
  std::map<std::string, bool> patients;
  for (const GroundTruthLesion& gt : gts) patients[gt.patient_id()] = true;
  if (num_patients < static_cast<int>(patients.size()))
    throw std::invalid_argument("froc: num_patients below distinct ground-truth patients");

  const MatchResult match = match_detections(preds, gts, cfg);
  std::vector<std::pair<double, Verdict>> outcomes;
  outcomes.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i)
    outcomes.emplace_back(preds[i].score, match.verdicts[i]);
  return detail::froc_from_outcomes(std::move(outcomes), match.eligible_gt_count,
                                    num_patients, cfg);
}

/// One FROC per size band: band b repeats the evaluation with
/// min_short_axis_mm = b. The default bands {0, 5, 7, 10} mirror the usual
/// "All / >5mm / >7mm / >10mm" reporting rows.
inline std::vector<std::pair<double, FrocCurve>> size_banded_report(
    const std::vector<Box3D>& preds, const std::vector<GroundTruthLesion>& gts,
    int num_patients, const std::vector<double>& bands, const EvalConfig& base) {
  if (bands.empty()) throw std::invalid_argument("size_banded_report: no bands");
  std::vector<std::pair<double, FrocCurve>> out;
  for (double band : bands) {
    EvalConfig cfg = base;
    cfg.min_short_axis_mm = band;
    out.emplace_back(band, froc(preds, gts, num_patients, cfg));
  }
  return out;
}

inline std::vector<double> default_size_bands() { return {0.0, 5.0, 7.0, 10.0}; }

/// CSV layout: one row per swept threshold, then the summary block.
inline void write_froc_csv(std::ostream& os, const FrocCurve& curve) {
  os << "threshold,fp_per_patient,sensitivity\n";
  for (const FrocPoint& pt : curve.points)
    os << detail::format_g9(pt.threshold) << ',' << detail::format_g9(pt.fp_per_patient)
       << ',' << detail::format_g9(pt.sensitivity) << '\n';
  for (const auto& [f, s] : curve.sens_at)
    os << "sens_at," << detail::format_g9(f) << ',' << detail::format_g9(s) << '\n';
  os << "avg_sensitivity,," << detail::format_g9(curve.avg_sensitivity) << '\n';
}

/// Minimal standalone SVG rendering of the curve with the sens_at markers.
inline void write_froc_svg(std::ostream& os, const FrocCurve& curve) {
  const double w = 640, h = 480, ml = 60, mr = 20, mt = 20, mb = 50;
  double max_fp = 1.0;
  for (const FrocPoint& pt : curve.points) max_fp = std::max(max_fp, pt.fp_per_patient);
  for (const auto& [f, s] : curve.sens_at) max_fp = std::max(max_fp, f);
  max_fp *= 1.05;
  auto sx = [&](double fp) { return ml + (w - ml - mr) * fp / max_fp; };
  auto sy = [&](double sens) { return h - mb - (h - mt - mb) * sens; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = sy(i * 0.25);
    os << "<line x1=\"" << sx(0) << "\" y1=\"" << y << "\" x2=\"" << sx(max_fp)
       << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-size=\"12\">" << detail::format_g9(i * 0.25)
       << "</text>\n";
  }
  for (const auto& [f, s] : curve.sens_at) {
    os << "<line x1=\"" << sx(f) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(f)
       << "\" y2=\"" << sy(1) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << sx(f) << "\" y=\"" << h - mb + 16
       << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::format_g9(f)
       << "</text>\n";
  }
  if (!curve.points.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const FrocPoint& pt : curve.points)
      os << sx(pt.fp_per_patient) << ',' << sy(pt.sensitivity) << ' ';
    os << "\"/>\n";
  }
  for (const auto& [f, s] : curve.sens_at)
    os << "<circle cx=\"" << sx(f) << "\" cy=\"" << sy(s)
       << "\" r=\"4\" fill=\"#d62728\"/>\n";
  os << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-size=\"14\">false positives per patient</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 "
     << (mt + h - mb) / 2 << ")\">sensitivity</text>\n";
  os << "</svg>\n";
}

}  // namespace lndet
