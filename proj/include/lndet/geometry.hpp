#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>

namespace lndet {

// Axial-slice detection rectangle. In-plane coordinates are continuous
// (sub-pixel); the slice index is the discrete z position.
struct Box2D {
  std::string patient_id;
  int slice_index = 0;
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double score = 0.0;

  Box2D(std::string patient, int slice, double x1_, double y1_, double x2_,
        double y2_, double score_)
      : patient_id(std::move(patient)),
        slice_index(slice),
        x1(x1_),
        y1(y1_),
        x2(x2_),
        y2(y2_),
        score(score_) {
    if (!(x2 > x1) || !(y2 > y1))
      throw std::invalid_argument("Box2D: degenerate in-plane extent");
    if (slice_index < 0)
      throw std::invalid_argument("Box2D: negative slice index");
    if (!(score >= 0.0 && score <= 1.0))
      throw std::invalid_argument("Box2D: score outside [0,1]");
  }

  double area() const { return (x2 - x1) * (y2 - y1); }
};

// Volumetric box: continuous in-plane extent, inclusive slice range [z1, z2].
// Depth counts slices, so a single-slice box has volume area() * 1.
struct Box3D {
  std::string patient_id;
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  int z1 = 0, z2 = 0;
  double score = 0.0;

  Box3D(std::string patient, double x1_, double y1_, double x2_, double y2_,
        int z1_, int z2_, double score_)
      : patient_id(std::move(patient)),
        x1(x1_),
        y1(y1_),
        x2(x2_),
        y2(y2_),
        z1(z1_),
        z2(z2_),
        score(score_) {
    if (!(x2 > x1) || !(y2 > y1))
      throw std::invalid_argument("Box3D: degenerate in-plane extent");
    if (z2 < z1) throw std::invalid_argument("Box3D: z2 < z1");
    if (!(score >= 0.0 && score <= 1.0))
      throw std::invalid_argument("Box3D: score outside [0,1]");
  }

  double area() const { return (x2 - x1) * (y2 - y1); }
  int depth() const { return z2 - z1 + 1; }
  double volume() const { return area() * depth(); }
};

/// In-plane intersection-over-union. Slice indices and patient ids are
/// ignored; callers that care about them must check before calling.
inline double iou2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

inline double intersection_volume(const Box3D& a, const Box3D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const int id = std::min(a.z2, b.z2) - std::max(a.z1, b.z1) + 1;
  if (iw <= 0.0 || ih <= 0.0 || id <= 0) return 0.0;
  return iw * ih * id;
}

inline double iou3d(const Box3D& a, const Box3D& b) {
  const double inter = intersection_volume(a, b);
  return inter / (a.volume() + b.volume() - inter);
}

/// Intersection over detected-box volume. Asymmetric by design: a detection
/// fully inside a larger ground-truth box scores 1 even when its IoU is low.
inline double iobb3d(const Box3D& det, const Box3D& gt) {
  if (det.patient_id != gt.patient_id)
    throw std::invalid_argument("iobb3d: boxes from different patients");
  return intersection_volume(det, gt) / det.volume();
}

}  // namespace lndet
