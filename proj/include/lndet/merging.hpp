#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include "lndet/geometry.hpp"

namespace lndet {

struct MergeConfig {
  enum class Mode { lesion_centric, slice_wise };
  double iou_threshold = 0.7;
  Mode mode = Mode::lesion_centric;
};

inline void validate(const MergeConfig& cfg) {
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold < 1.0))
    throw std::invalid_argument("MergeConfig: iou_threshold outside (0,1)");
}

namespace detail {

inline void check_single_patient(const std::vector<Box2D>& boxes) {
  for (const Box2D& b : boxes)
    if (b.patient_id != boxes.front().patient_id)
      throw std::invalid_argument("merge: boxes mix patient ids");
}

// Indices grouped by slice, preserving input order within a slice.
inline std::map<int, std::vector<size_t>> group_by_slice(
    const std::vector<Box2D>& boxes) {
  std::map<int, std::vector<size_t>> by_slice;
  for (size_t i = 0; i < boxes.size(); ++i)
    by_slice[boxes[i].slice_index].push_back(i);
  return by_slice;
}

struct Hull {
  double x1, y1, x2, y2;
  int z1, z2;
  explicit Hull(const Box2D& b)
      : x1(b.x1), y1(b.y1), x2(b.x2), y2(b.y2),
        z1(b.slice_index), z2(b.slice_index) {}
  void add(const Box2D& b) {
    x1 = std::min(x1, b.x1);
    y1 = std::min(y1, b.y1);
    x2 = std::max(x2, b.x2);
    y2 = std::max(y2, b.y2);
    z1 = std::min(z1, b.slice_index);
    z2 = std::max(z2, b.slice_index);
  }
};

}  // namespace detail

/// Lesion-centric 2D-to-3D merging. Repeatedly seed a chain at the
/// unconsumed box with the highest score, grow it slice-by-slice upward
/// then downward while an adjacent slice holds an unconsumed box whose IoU
/// with the seed exceeds the threshold, and emit the chain's enclosing box
/// with the seed's score. Every input box ends up in exactly one output.
///
/// Deterministic choices the pseudocode leaves open: among several
/// qualifying boxes on a slice, take the one with the highest IoU against
/// the seed, then the higher score, then input order; score ties between
/// seeds resolve in input order.
inline std::vector<Box3D> merge_lesion_centric(const std::vector<Box2D>& boxes,
                                               const MergeConfig& cfg) {
  validate(cfg);
  if (cfg.mode != MergeConfig::Mode::lesion_centric)
    throw std::invalid_argument("merge_lesion_centric: wrong mode in config");
  if (boxes.empty()) return {};
  detail::check_single_patient(boxes);

  const double theta = cfg.iou_threshold;
  auto by_slice = detail::group_by_slice(boxes);

  std::vector<size_t> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return boxes[a].score > boxes[b].score;
  });

  std::vector<bool> consumed(boxes.size(), false);

  // Best unconsumed neighbour of the seed on one slice, nullptr-like -1 if
  // none qualifies.
  auto pick_on_slice = [&](const Box2D& seed, int slice) -> long {
    auto it = by_slice.find(slice);
    if (it == by_slice.end()) return -1;
    long best = -1;
    double best_iou = 0.0;
    for (size_t idx : it->second) {
      if (consumed[idx]) continue;
      const double v = iou2d(seed, boxes[idx]);
      if (v <= theta) continue;
      if (best < 0 || v > best_iou ||
          (v == best_iou && boxes[idx].score > boxes[best].score)) {
        best = static_cast<long>(idx);
        best_iou = v;
      }
    }
    return best;
  };

  std::vector<Box3D> out;
  for (size_t seed_idx : order) {
    if (consumed[seed_idx]) continue;
    const Box2D& seed = boxes[seed_idx];
    consumed[seed_idx] = true;
    detail::Hull hull(seed);
    for (int dir : {+1, -1}) {
      for (int slice = seed.slice_index + dir;; slice += dir) {
        if (slice < 0) break;
        const long pick = pick_on_slice(seed, slice);
        if (pick < 0) break;
        consumed[pick] = true;
        hull.add(boxes[pick]);
      }
    }
    out.emplace_back(seed.patient_id, hull.x1, hull.y1, hull.x2, hull.y2,
                     hull.z1, hull.z2, seed.score);
  }
  // Seeds were taken in descending-score order, so `out` already is too.
  return out;
}

/// Slice-wise baseline: scan slices in ascending order keeping open tracks.
/// A box joins the open track whose most recent box (one slice below) it
/// overlaps above the threshold, otherwise it opens a new track; a track
/// with no continuation closes. Each emitted box is a track's enclosing
/// extent with its maximum score.
inline std::vector<Box3D> merge_slice_wise(const std::vector<Box2D>& boxes,
                                           const MergeConfig& cfg) {
  validate(cfg);
  if (cfg.mode != MergeConfig::Mode::slice_wise)
    throw std::invalid_argument("merge_slice_wise: wrong mode in config");
  if (boxes.empty()) return {};
  detail::check_single_patient(boxes);

  const double theta = cfg.iou_threshold;
  auto by_slice = detail::group_by_slice(boxes);

  struct Track {
    size_t last_idx;
    int last_slice;
    detail::Hull hull;
    double max_score;
  };
  std::vector<Track> tracks;

  for (const auto& [slice, idxs] : by_slice) {
    // Boxes on this slice, most confident first.
    std::vector<size_t> slice_order(idxs);
    std::stable_sort(slice_order.begin(), slice_order.end(),
                     [&](size_t a, size_t b) { return boxes[a].score > boxes[b].score; });
    std::vector<bool> extended(tracks.size(), false);
    for (size_t idx : slice_order) {
      long best = -1;
      double best_iou = 0.0;
      for (size_t t = 0; t < tracks.size(); ++t) {
        if (extended[t] || tracks[t].last_slice != slice - 1) continue;
        const double v = iou2d(boxes[tracks[t].last_idx], boxes[idx]);
        if (v > theta && (best < 0 || v > best_iou)) {
          best = static_cast<long>(t);
          best_iou = v;
        }
      }
      if (best >= 0) {
        Track& t = tracks[best];
        t.hull.add(boxes[idx]);
        t.max_score = std::max(t.max_score, boxes[idx].score);
        t.last_idx = idx;
        t.last_slice = slice;
        extended[best] = true;
      } else {
        tracks.push_back(Track{idx, slice, detail::Hull(boxes[idx]), boxes[idx].score});
        extended.push_back(true);
      }
    }
  }

  std::vector<Box3D> out;
  out.reserve(tracks.size());
  for (const Track& t : tracks)
    out.emplace_back(boxes.front().patient_id, t.hull.x1, t.hull.y1, t.hull.x2,
                     t.hull.y2, t.hull.z1, t.hull.z2, t.max_score);
  std::stable_sort(out.begin(), out.end(),
                   [](const Box3D& a, const Box3D& b) { return a.score > b.score; });
  return out;
}

inline std::vector<Box3D> merge_boxes(const std::vector<Box2D>& boxes,
                                      const MergeConfig& cfg) {
  return cfg.mode == MergeConfig::Mode::lesion_centric
             ? merge_lesion_centric(boxes, cfg)
             : merge_slice_wise(boxes, cfg);
}

}  // namespace lndet
