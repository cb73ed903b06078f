#pragma once

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "lndet/detail/format.hpp"
#include "lndet/eval.hpp"
#include "lndet/gating.hpp"
#include "lndet/geometry.hpp"

namespace lndet::jsonl {

using nlohmann::json;

// Parse/validation failure tagged with the 1-based input line number.
struct LineError : std::runtime_error {
  size_t line;
  LineError(size_t line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what),
        line(line_no) {}
};

/// Feed every non-blank line of a JSONL stream, parsed, to `fn(line_no, json)`.
/// Unknown keys are left for the per-record parsers to ignore. Parse and
/// validation errors are rethrown as LineError.
template <class Fn>
void read_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw LineError(line_no, e.what());
    }
    try {
      fn(line_no, rec);
    } catch (const LineError&) {
      throw;
    } catch (const std::exception& e) {
      throw LineError(line_no, e.what());
    }
  }
}

namespace detail {

inline const json& require(const json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end())
    throw std::invalid_argument(std::string("missing key '") + key + "'");
  return *it;
}

inline double as_number(const json& rec, const char* key) {
  const json& v = require(rec, key);
  if (!v.is_number())
    throw std::invalid_argument(std::string("key '") + key + "' is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d))
    throw std::invalid_argument(std::string("key '") + key + "' is not finite");
  return d;
}

inline int as_int(const json& rec, const char* key) {
  const json& v = require(rec, key);
  if (!v.is_number_integer())
    throw std::invalid_argument(std::string("key '") + key + "' is not an integer");
  return v.get<int>();
}

inline std::string as_string(const json& rec, const char* key) {
  const json& v = require(rec, key);
  if (!v.is_string())
    throw std::invalid_argument(std::string("key '") + key + "' is not a string");
  return v.get<std::string>();
}

inline std::vector<double> as_number_array(const json& v, const char* key) {
  if (!v.is_array())
    throw std::invalid_argument(std::string("key '") + key + "' is not an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number())
      throw std::invalid_argument(std::string("key '") + key + "' has a non-number entry");
    const double d = e.get<double>();
    if (!std::isfinite(d))
      throw std::invalid_argument(std::string("key '") + key + "' has a non-finite entry");
    out.push_back(d);
  }
  return out;
}

inline std::string quoted(const std::string& s) { return json(s).dump(); }

inline std::string num(double v) { return lndet::detail::format_g9(v); }

inline void append_array(std::string& out, const char* key,
                         const std::vector<double>& v) {
  out += '"';
  out += key;
  out += "\":[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += num(v[i]);
  }
  out += ']';
}

}  // namespace detail

inline Box2D parse_box2d(const json& rec) {
  return Box2D(detail::as_string(rec, "patient"), detail::as_int(rec, "slice"),
               detail::as_number(rec, "x1"), detail::as_number(rec, "y1"),
               detail::as_number(rec, "x2"), detail::as_number(rec, "y2"),
               detail::as_number(rec, "score"));
}

inline Box3D parse_box3d(const json& rec) {
  return Box3D(detail::as_string(rec, "patient"), detail::as_number(rec, "x1"),
               detail::as_number(rec, "y1"), detail::as_number(rec, "x2"),
               detail::as_number(rec, "y2"), detail::as_int(rec, "z1"),
               detail::as_int(rec, "z2"), detail::as_number(rec, "score"));
}

// Ground-truth records carry no score; the stored box gets 1.0.
inline GroundTruthLesion parse_gt(const json& rec) {
  Box3D box(detail::as_string(rec, "patient"), detail::as_number(rec, "x1"),
            detail::as_number(rec, "y1"), detail::as_number(rec, "x2"),
            detail::as_number(rec, "y2"), detail::as_int(rec, "z1"),
            detail::as_int(rec, "z2"), 1.0);
  return GroundTruthLesion(detail::as_string(rec, "lesion"), std::move(box),
                           detail::as_number(rec, "short_axis_mm"),
                           detail::as_number(rec, "long_axis_mm"),
                           detail::as_string(rec, "station"));
}

/// Proposal records supply either a normalized "gate" or raw
/// "station_logits" (softmax-normalized at ingestion; the raw values are
/// kept for the station cross-entropy). "tp" defaults to false and
/// "station" to null when absent.
inline Proposal parse_proposal(const json& rec) {
  Proposal p;
  p.proposal_id = detail::as_string(rec, "id");
  p.patient_id = detail::as_string(rec, "patient");
  const int label = detail::as_int(rec, "label");
  if (label != 0 && label != 1)
    throw std::invalid_argument("key 'label' must be 0 or 1");
  p.label = label;
  if (auto it = rec.find("tp"); it != rec.end() && !it->is_null()) {
    if (!it->is_boolean()) throw std::invalid_argument("key 'tp' is not a boolean");
    p.is_true_positive = it->get<bool>();
  }
  if (auto it = rec.find("station"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw std::invalid_argument("key 'station' is not a string");
    p.true_station = it->get<std::string>();
  }
  p.head_logits = detail::as_number_array(detail::require(rec, "logits"), "logits");
  if (auto it = rec.find("gate"); it != rec.end()) {
    p.gate = detail::as_number_array(*it, "gate");
  } else if (auto sl = rec.find("station_logits"); sl != rec.end()) {
    p.station_logits = detail::as_number_array(*sl, "station_logits");
    if (p.station_logits.empty())
      throw std::invalid_argument("key 'station_logits' is empty");
    const double lse = lndet::detail::log_sum_exp(p.station_logits);
    p.gate.reserve(p.station_logits.size());
    for (double s : p.station_logits) p.gate.push_back(std::exp(s - lse));
  } else {
    throw std::invalid_argument("proposal needs 'gate' or 'station_logits'");
  }
  return p;
}

inline std::string to_line(const Box2D& b) {
  std::string out = "{\"patient\":" + detail::quoted(b.patient_id);
  out += ",\"slice\":" + std::to_string(b.slice_index);
  out += ",\"x1\":" + detail::num(b.x1) + ",\"y1\":" + detail::num(b.y1);
  out += ",\"x2\":" + detail::num(b.x2) + ",\"y2\":" + detail::num(b.y2);
  out += ",\"score\":" + detail::num(b.score) + "}";
  return out;
}

inline std::string to_line(const Box3D& b) {
  std::string out = "{\"patient\":" + detail::quoted(b.patient_id);
  out += ",\"x1\":" + detail::num(b.x1) + ",\"y1\":" + detail::num(b.y1);
  out += ",\"x2\":" + detail::num(b.x2) + ",\"y2\":" + detail::num(b.y2);
  out += ",\"z1\":" + std::to_string(b.z1) + ",\"z2\":" + std::to_string(b.z2);
  out += ",\"score\":" + detail::num(b.score) + "}";
  return out;
}

inline std::string to_line(const GroundTruthLesion& gt) {
  std::string out = "{\"patient\":" + detail::quoted(gt.patient_id());
  out += ",\"lesion\":" + detail::quoted(gt.lesion_id);
  out += ",\"x1\":" + detail::num(gt.box.x1) + ",\"y1\":" + detail::num(gt.box.y1);
  out += ",\"x2\":" + detail::num(gt.box.x2) + ",\"y2\":" + detail::num(gt.box.y2);
  out += ",\"z1\":" + std::to_string(gt.box.z1) + ",\"z2\":" + std::to_string(gt.box.z2);
  out += ",\"short_axis_mm\":" + detail::num(gt.short_axis_mm);
  out += ",\"long_axis_mm\":" + detail::num(gt.long_axis_mm);
  out += ",\"station\":" + detail::quoted(gt.station) + "}";
  return out;
}

inline std::string to_line(const Proposal& p) {
  std::string out = "{\"id\":" + detail::quoted(p.proposal_id);
  out += ",\"patient\":" + detail::quoted(p.patient_id);
  out += ",\"label\":" + std::to_string(p.label);
  out += std::string(",\"tp\":") + (p.is_true_positive ? "true" : "false");
  out += ",\"station\":" + (p.true_station ? detail::quoted(*p.true_station) : "null");
  out += ',';
  detail::append_array(out, "gate", p.gate);
  if (!p.station_logits.empty()) {
    out += ',';
    detail::append_array(out, "station_logits", p.station_logits);
  }
  out += ',';
  detail::append_array(out, "logits", p.head_logits);
  out += '}';
  return out;
}

}  // namespace lndet::jsonl
