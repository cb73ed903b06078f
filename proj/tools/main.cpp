// lndet: 2D-to-3D detection merging, gated scoring, FROC evaluation, and the
// synthetic station-stratification study, over JSONL record streams.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lndet/eval.hpp"
#include "lndet/gating.hpp"
#include "lndet/geometry.hpp"
#include "lndet/grouping.hpp"
#include "lndet/jsonl.hpp"
#include "lndet/merging.hpp"
#include "lndet/synth.hpp"

namespace fs = std::filesystem;
using lndet::detail::format_g9;

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open input file '" + path + "'");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open output file '" + path + "'");
  return out;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("bad ") + what + " value '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string("empty ") + what + " list");
  return out;
}

lndet::StationGrouping load_grouping(const std::string& spec) {
  if (spec == "1" || spec == "6" || spec == "14")
    return lndet::StationGrouping::iaslc_preset(std::stoi(spec));
  std::ifstream in = open_input(spec);
  return lndet::parse_grouping(in);
}

// ---------------------------------------------------------------------------
// merge

struct MergeArgs {
  std::string input, output;
  double iou = 0.7;
  std::string mode = "lesion-centric";
};

int cmd_merge(const MergeArgs& args) {
  lndet::MergeConfig cfg;
  cfg.iou_threshold = args.iou;
  if (args.mode == "lesion-centric") {
    cfg.mode = lndet::MergeConfig::Mode::lesion_centric;
  } else if (args.mode == "slice-wise") {
    cfg.mode = lndet::MergeConfig::Mode::slice_wise;
  } else {
    throw std::invalid_argument("unknown merge mode '" + args.mode + "'");
  }
  lndet::validate(cfg);

  std::ifstream in = open_input(args.input);
  std::ofstream out = open_output(args.output);

  // Input records must be grouped (contiguous) by patient; each group is
  // merged independently, keeping memory bounded by the largest patient.
  std::vector<lndet::Box2D> group;
  std::set<std::string> seen;
  auto flush = [&] {
    if (group.empty()) return;
    for (const lndet::Box3D& b : lndet::merge_boxes(group, cfg))
      out << lndet::jsonl::to_line(b) << '\n';
    group.clear();
  };
  lndet::jsonl::read_jsonl(in, [&](size_t line_no, const lndet::jsonl::json& rec) {
    lndet::Box2D box = lndet::jsonl::parse_box2d(rec);
    if (group.empty() || group.back().patient_id != box.patient_id) {
      flush();
      if (!seen.insert(box.patient_id).second)
        throw lndet::jsonl::LineError(
            line_no, "input not grouped by patient: '" + box.patient_id + "' reappears");
    }
    group.push_back(std::move(box));
  });
  flush();
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred, gt, out, plot;
  double iobb = 0.3;
  double min_short_axis = 7.0;
  std::string fp_points = "0.5,1,2,4";
  int num_patients = 0;  // 0 = distinct patients in the GT file
  std::string size_bands;
};

void print_sens_table(std::ostream& os, const lndet::FrocCurve& curve) {
  os << std::left << std::setw(14) << "FPs/patient" << "sensitivity\n";
  for (const auto& [f, s] : curve.sens_at)
    os << std::left << std::setw(14) << format_g9(f) << format_g9(s) << '\n';
  os << std::left << std::setw(14) << "avg" << format_g9(curve.avg_sensitivity) << '\n';
}

int cmd_eval(const EvalArgs& args) {
  lndet::EvalConfig cfg;
  cfg.iobb_threshold = args.iobb;
  cfg.min_short_axis_mm = args.min_short_axis;
  cfg.fp_points = parse_double_list(args.fp_points, "fp-points");
  lndet::validate(cfg);

  std::vector<double> bands;
  if (!args.size_bands.empty()) {
    bands = parse_double_list(args.size_bands, "size-bands");
    for (double b : bands)
      if (!(b >= 0.0)) throw std::invalid_argument("size bands must be >= 0");
  }

  // Ground truth is loaded up front (it is the small side); predictions are
  // streamed per contiguous patient group.
  std::map<std::string, std::vector<lndet::GroundTruthLesion>> gt_by_patient;
  {
    std::ifstream gt_in = open_input(args.gt);
    lndet::jsonl::read_jsonl(gt_in, [&](size_t, const lndet::jsonl::json& rec) {
      lndet::GroundTruthLesion gt = lndet::jsonl::parse_gt(rec);
      gt_by_patient[gt.patient_id()].push_back(std::move(gt));
    });
  }
  int num_patients = args.num_patients;
  if (num_patients == 0) num_patients = static_cast<int>(gt_by_patient.size());
  if (num_patients < static_cast<int>(gt_by_patient.size()))
    throw std::invalid_argument("--num-patients below distinct ground-truth patients");

  struct BandState {
    lndet::EvalConfig cfg;
    std::vector<std::pair<double, lndet::Verdict>> outcomes;
    int eligible = 0;
  };
  std::vector<BandState> states;
  states.push_back({cfg, {}, 0});
  for (double b : bands) {
    lndet::EvalConfig band_cfg = cfg;
    band_cfg.min_short_axis_mm = b;
    states.push_back({band_cfg, {}, 0});
  }
  for (const auto& [pid, lesions] : gt_by_patient)
    for (const lndet::GroundTruthLesion& gt : lesions)
      for (BandState& st : states)
        if (gt.short_axis_mm >= st.cfg.min_short_axis_mm) ++st.eligible;

  std::ifstream pred_in = open_input(args.pred);
  std::vector<lndet::Box3D> group;
  std::set<std::string> seen;
  auto flush = [&] {
    if (group.empty()) return;
    auto it = gt_by_patient.find(group.front().patient_id);
    if (it == gt_by_patient.end())
      throw std::invalid_argument("prediction for unknown patient '" +
                                  group.front().patient_id + "'");
    for (BandState& st : states) {
      const lndet::MatchResult m = lndet::match_detections(group, it->second, st.cfg);
      for (size_t i = 0; i < group.size(); ++i)
        st.outcomes.emplace_back(group[i].score, m.verdicts[i]);
    }
    group.clear();
  };
  lndet::jsonl::read_jsonl(pred_in, [&](size_t line_no, const lndet::jsonl::json& rec) {
    lndet::Box3D box = lndet::jsonl::parse_box3d(rec);
    if (group.empty() || group.back().patient_id != box.patient_id) {
      flush();
      if (!seen.insert(box.patient_id).second)
        throw lndet::jsonl::LineError(
            line_no, "input not grouped by patient: '" + box.patient_id + "' reappears");
    }
    group.push_back(std::move(box));
  });
  flush();

  const lndet::FrocCurve curve = lndet::detail::froc_from_outcomes(
      std::move(states[0].outcomes), states[0].eligible, num_patients, states[0].cfg);
  {
    std::ofstream csv = open_output(args.out);
    lndet::write_froc_csv(csv, curve);
  }
  if (!args.plot.empty()) {
    std::ofstream svg = open_output(args.plot);
    lndet::write_froc_svg(svg, curve);
  }
  print_sens_table(std::cout, curve);

  for (size_t bi = 0; bi < bands.size(); ++bi) {
    BandState& st = states[bi + 1];
    const lndet::FrocCurve band_curve = lndet::detail::froc_from_outcomes(
        std::move(st.outcomes), st.eligible, num_patients, st.cfg);
    const fs::path base(args.out);
    fs::path band_path = base.parent_path() /
                         (base.stem().string() + "_band" + format_g9(bands[bi]) +
                          base.extension().string());
    std::ofstream csv = open_output(band_path.string());
    lndet::write_froc_csv(csv, band_curve);
    std::cout << "\nsize band >= " << format_g9(bands[bi]) << "mm ("
              << st.eligible << " eligible)\n";
    print_sens_table(std::cout, band_curve);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gate

struct GateArgs {
  std::string proposals, out, grouping, mode = "soft";
  bool report_loss = false;
  bool prob_weighted = false;
};

int cmd_gate(const GateArgs& args) {
  const lndet::GateMode mode = lndet::parse_mode(args.mode);
  std::optional<lndet::StationGrouping> grouping;
  if (!args.grouping.empty()) grouping = load_grouping(args.grouping);
  if (mode == lndet::GateMode::multiclass && !grouping)
    throw std::invalid_argument("multiclass mode needs --grouping to fix the class count");

  std::ifstream in = open_input(args.proposals);
  std::ofstream out = open_output(args.out);

  size_t gate_size = 0;  // fixed by the first record when no grouping given
  size_t n = 0, tp_count = 0;
  double loss_sum = 0.0, station_ce_sum = 0.0;

  lndet::jsonl::read_jsonl(in, [&](size_t, const lndet::jsonl::json& rec) {
    lndet::Proposal p = lndet::jsonl::parse_proposal(rec);
    lndet::validate_proposal(p);
    if (gate_size == 0) {
      gate_size = grouping ? static_cast<size_t>(grouping->num_heads()) : p.gate.size();
    }
    if (p.gate.size() != gate_size)
      throw std::invalid_argument("gate length " + std::to_string(p.gate.size()) +
                                  " does not match expected " + std::to_string(gate_size));
    const size_t want_logits =
        mode == lndet::GateMode::multiclass ? gate_size + 1 : gate_size;
    if (p.head_logits.size() != want_logits)
      throw std::invalid_argument("logits length " + std::to_string(p.head_logits.size()) +
                                  " does not match expected " + std::to_string(want_logits));

    double score = 0.0, prob = 0.0;
    switch (mode) {
      case lndet::GateMode::soft:
        score = args.prob_weighted ? lndet::final_score_prob_weighted(p)
                                   : lndet::final_score(p);
        prob = args.prob_weighted ? score : lndet::sigmoid(score);
        break;
      case lndet::GateMode::hard:
        score = lndet::hard_gate_score(p);
        prob = lndet::sigmoid(score);
        break;
      case lndet::GateMode::pooled:
        score = lndet::pooled_score(p);
        prob = lndet::sigmoid(score);
        break;
      case lndet::GateMode::uniform_ensemble:
        score = lndet::uniform_ensemble_score(p);
        prob = lndet::sigmoid(score);
        break;
      case lndet::GateMode::multiclass:
        score = lndet::multiclass_score(p);
        prob = score;
        break;
    }

    if (args.report_loss) {
      const std::span<const lndet::Proposal> single(&p, 1);
      if (mode == lndet::GateMode::multiclass) {
        loss_sum += lndet::multiclass_loss(single, *grouping);
      } else {
        loss_sum += lndet::gated_loss(single);
      }
      if (grouping && p.is_true_positive) {
        station_ce_sum += lndet::station_ce_loss(single, *grouping).value;
        ++tp_count;
      }
    }
    ++n;

    std::string line = lndet::jsonl::to_line(p);
    line.pop_back();  // re-open the record to append the scores
    line += ",\"score\":" + format_g9(score) + ",\"prob\":" + format_g9(prob) + "}";
    out << line << '\n';
  });

  if (args.report_loss) {
    if (n == 0) throw std::invalid_argument("--report-loss on an empty proposal file");
    const char* loss_name =
        mode == lndet::GateMode::multiclass ? "multiclass_loss" : "gated_loss";
    std::cout << loss_name << " = " << format_g9(loss_sum / static_cast<double>(n))
              << " (n=" << n << ")\n";
    if (!grouping) {
      std::cout << "station_ce_loss skipped: no --grouping given\n";
    } else if (tp_count == 0) {
      std::cout << "station_ce_loss = 0 (warning: no TP proposals)\n";
    } else {
      std::cout << "station_ce_loss = "
                << format_g9(station_ce_sum / static_cast<double>(tp_count))
                << " (tp=" << tp_count << ")\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  int stations = 6, dim = 16, patients = 40, pps = 6;
  double noise = 0.1, margin = 3.0;
  std::uint64_t seed = 42;
  int epochs = 800;
  double step = 0.1;
  std::string modes = "soft,hard,pooled,uniform,multiclass";
  std::string out = "report";
};

int cmd_synth(const SynthArgs& args) {
  lndet::synth::SynthConfig cfg;
  cfg.num_stations = args.stations;
  cfg.feature_dim = args.dim;
  cfg.patients = args.patients;
  cfg.proposals_per_station = args.pps;
  cfg.station_noise = args.noise;
  cfg.margin = args.margin;
  cfg.seed = args.seed;

  std::vector<lndet::GateMode> modes;
  std::stringstream ss(args.modes);
  std::string item;
  while (std::getline(ss, item, ',')) modes.push_back(lndet::parse_mode(item));

  const lndet::synth::StudyReport report =
      lndet::synth::run_study(cfg, modes, args.epochs, args.step);

  fs::create_directories(args.out);
  {
    std::ofstream txt = open_output((fs::path(args.out) / "report.txt").string());
    lndet::synth::write_report_text(txt, report);
  }
  {
    std::ofstream csv = open_output((fs::path(args.out) / "summary.csv").string());
    lndet::synth::write_summary_csv(csv, report);
  }
  for (const lndet::synth::ModeResult& mr : report.modes) {
    std::ofstream csv = open_output(
        (fs::path(args.out) / (std::string("froc_") + lndet::mode_name(mr.mode) + ".csv"))
            .string());
    lndet::write_froc_csv(csv, mr.curve);
  }
  lndet::synth::write_report_text(std::cout, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lymph-node detection post-processing and evaluation toolkit"};
  app.require_subcommand(1);

  MergeArgs margs;
  CLI::App* merge = app.add_subcommand("merge", "merge per-slice 2D boxes into 3D boxes");
  merge->add_option("--input", margs.input, "Box2D JSONL, grouped by patient")->required();
  merge->add_option("--output", margs.output, "Box3D JSONL to write")->required();
  merge->add_option("--iou", margs.iou, "IoU threshold theta (default 0.7)");
  merge->add_option("--mode", margs.mode, "lesion-centric|slice-wise");

  EvalArgs eargs;
  CLI::App* eval = app.add_subcommand("eval", "FROC evaluation of 3D detections");
  eval->add_option("--pred", eargs.pred, "prediction Box3D JSONL")->required();
  eval->add_option("--gt", eargs.gt, "ground-truth lesion JSONL")->required();
  eval->add_option("--out", eargs.out, "FROC CSV to write")->required();
  eval->add_option("--iobb", eargs.iobb, "IoBB hit threshold (default 0.3)");
  eval->add_option("--min-short-axis", eargs.min_short_axis,
                   "ignore GTs below this short axis in mm (default 7)");
  eval->add_option("--fp-points", eargs.fp_points, "FP/patient operating points");
  eval->add_option("--num-patients", eargs.num_patients,
                   "patient count for FP rates (default: distinct GT patients)");
  eval->add_option("--plot", eargs.plot, "also write an SVG of the curve");
  eval->add_option("--size-bands", eargs.size_bands,
                   "extra per-band evaluations, e.g. 0,5,7,10");

  GateArgs gargs;
  CLI::App* gate = app.add_subcommand("gate", "score proposals with a gating strategy");
  gate->add_option("--proposals", gargs.proposals, "proposal JSONL")->required();
  gate->add_option("--out", gargs.out, "scored JSONL to write")->required();
  gate->add_option("--mode", gargs.mode, "soft|hard|multiclass|pooled|uniform");
  gate->add_option("--grouping", gargs.grouping,
                   "grouping file, or preset head count 1|6|14");
  gate->add_flag("--report-loss", gargs.report_loss, "print batch losses");
  gate->add_flag("--prob-weighted", gargs.prob_weighted,
                 "soft mode: weight sigmoids instead of logits");

  SynthArgs sargs;
  CLI::App* synth = app.add_subcommand("synth", "run the synthetic stratification study");
  synth->add_option("--stations", sargs.stations, "number of stations");
  synth->add_option("--dim", sargs.dim, "feature dimension");
  synth->add_option("--patients", sargs.patients, "number of synthetic patients");
  synth->add_option("--pps", sargs.pps, "proposals per station per patient");
  synth->add_option("--noise", sargs.noise, "station gate corruption probability");
  synth->add_option("--margin", sargs.margin, "LN/non-LN feature margin");
  synth->add_option("--seed", sargs.seed, "RNG seed");
  synth->add_option("--epochs", sargs.epochs, "training epochs");
  synth->add_option("--step", sargs.step, "gradient-descent step size");
  synth->add_option("--modes", sargs.modes, "comma-separated gate modes");
  synth->add_option("--out", sargs.out, "report output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*merge) return cmd_merge(margs);
    if (*eval) return cmd_eval(eargs);
    if (*gate) return cmd_gate(gargs);
    if (*synth) return cmd_synth(sargs);
  } catch (const lndet::EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
