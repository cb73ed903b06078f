#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "lndet/merging.hpp"
#include "merging_oracle.hpp"

using lndet::Box2D;
using lndet::Box3D;
using lndet::MergeConfig;

namespace {

MergeConfig lesion_cfg(double theta = 0.7) {
  return MergeConfig{theta, MergeConfig::Mode::lesion_centric};
}

MergeConfig slice_cfg(double theta = 0.7) {
  return MergeConfig{theta, MergeConfig::Mode::slice_wise};
}

Box2D b2(int slice, double x1, double y1, double x2, double y2, double score) {
  return Box2D("p", slice, x1, y1, x2, y2, score);
}

void expect_box_eq(const Box3D& got, const Box3D& want) {
  EXPECT_EQ(got.patient_id, want.patient_id);
  EXPECT_DOUBLE_EQ(got.x1, want.x1);
  EXPECT_DOUBLE_EQ(got.y1, want.y1);
  EXPECT_DOUBLE_EQ(got.x2, want.x2);
  EXPECT_DOUBLE_EQ(got.y2, want.y2);
  EXPECT_EQ(got.z1, want.z1);
  EXPECT_EQ(got.z2, want.z2);
  EXPECT_DOUBLE_EQ(got.score, want.score);
}

void expect_same_boxes(const std::vector<Box3D>& got, const std::vector<Box3D>& want) {
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) expect_box_eq(got[i], want[i]);
}

}  // namespace

TEST(MergeLesionCentric, SingleBoxMakesOneSliceChain) {
  const std::vector<Box2D> in = {b2(5, 0, 0, 10, 10, 0.8)};
  const auto out = lndet::merge_lesion_centric(in, lesion_cfg());
  ASSERT_EQ(out.size(), 1u);
  expect_box_eq(out[0], Box3D("p", 0, 0, 10, 10, 5, 5, 0.8));
}

TEST(MergeLesionCentric, ThreeSliceHandTrace) {
  // Seed on slice 3; both neighbours overlap the seed at IoU 0.9 > 0.7.
  const std::vector<Box2D> in = {
      b2(3, 0, 0, 10, 10, 0.9),
      b2(2, 0, 0, 10, 9, 0.5),
      b2(4, 1, 0, 10, 10, 0.4),
  };
  EXPECT_NEAR(lndet::iou2d(in[0], in[1]), 0.9, 1e-12);
  EXPECT_NEAR(lndet::iou2d(in[0], in[2]), 0.9, 1e-12);
  const auto out = lndet::merge_lesion_centric(in, lesion_cfg(0.7));
  ASSERT_EQ(out.size(), 1u);
  expect_box_eq(out[0], Box3D("p", 0, 0, 10, 10, 2, 4, 0.9));
}

TEST(MergeLesionCentric, TwoIndependentSeedsOnOneSlice) {
  const std::vector<Box2D> lesion_a = {b2(5, 0, 0, 10, 10, 0.9), b2(6, 0, 0, 10, 10, 0.5)};
  const std::vector<Box2D> lesion_b = {b2(5, 30, 0, 40, 10, 0.8), b2(6, 30, 0, 40, 10, 0.4)};
  std::vector<Box2D> both = lesion_a;
  both.insert(both.end(), lesion_b.begin(), lesion_b.end());

  const auto out = lndet::merge_lesion_centric(both, lesion_cfg());
  ASSERT_EQ(out.size(), 2u);
  expect_box_eq(out[0], Box3D("p", 0, 0, 10, 10, 5, 6, 0.9));
  expect_box_eq(out[1], Box3D("p", 30, 0, 40, 10, 5, 6, 0.8));

  // Removing the lower-score lesion leaves the first output unchanged.
  const auto only_a = lndet::merge_lesion_centric(lesion_a, lesion_cfg());
  ASSERT_EQ(only_a.size(), 1u);
  expect_box_eq(out[0], only_a[0]);
}

TEST(MergeLesionCentric, CandidateTieBreaksByIouThenScoreThenOrder) {
  // Both slice-1 candidates overlap the seed at IoU 0.9; the higher score wins.
  const std::vector<Box2D> in = {
      b2(0, 0, 0, 10, 10, 0.9),
      b2(1, 0, 0, 10, 9, 0.3),
      b2(1, 0, 0, 9, 10, 0.8),
  };
  const auto out = lndet::merge_lesion_centric(in, lesion_cfg());
  ASSERT_EQ(out.size(), 2u);
  expect_box_eq(out[0], Box3D("p", 0, 0, 10, 10, 0, 1, 0.9));
  expect_box_eq(out[1], Box3D("p", 0, 0, 10, 9, 1, 1, 0.3));

  // Same IoU and same score: input order decides, the later box is left over.
  const std::vector<Box2D> tie = {
      b2(0, 0, 0, 10, 10, 0.9),
      b2(1, 0, 0, 10, 9, 0.3),
      b2(1, 0, 1, 10, 10, 0.3),
  };
  const auto out2 = lndet::merge_lesion_centric(tie, lesion_cfg());
  ASSERT_EQ(out2.size(), 2u);
  EXPECT_DOUBLE_EQ(out2[1].y1, 1.0);  // second input box consumed first
}

TEST(MergeLesionCentric, SeedScoreTieUsesInputOrder) {
  // Two equal-score seeds compete for the middle box; the first input wins.
  const std::vector<Box2D> in = {
      b2(0, 0, 0, 10, 10, 0.8),
      b2(0, 4, 0, 14, 10, 0.8),
      b2(1, 2, 0, 12, 10, 0.6),
  };
  const auto out = lndet::merge_lesion_centric(in, lesion_cfg(0.5));
  ASSERT_EQ(out.size(), 2u);
  expect_box_eq(out[0], Box3D("p", 0, 0, 12, 10, 0, 1, 0.8));
  expect_box_eq(out[1], Box3D("p", 4, 0, 14, 10, 0, 0, 0.8));
}

TEST(MergeSliceWise, SingleBoxMatchesLesionCentric) {
  const std::vector<Box2D> in = {b2(5, 0, 0, 10, 10, 0.8)};
  expect_same_boxes(lndet::merge_slice_wise(in, slice_cfg()),
                    lndet::merge_lesion_centric(in, lesion_cfg()));
}

TEST(MergeSliceWise, NonAdjacentSlicesStayApart) {
  const std::vector<Box2D> in = {b2(0, 0, 0, 10, 10, 0.8), b2(2, 0, 0, 10, 10, 0.7)};
  const auto sw = lndet::merge_slice_wise(in, slice_cfg());
  ASSERT_EQ(sw.size(), 2u);
  const auto lc = lndet::merge_lesion_centric(in, lesion_cfg());
  expect_same_boxes(sw, lc);
}

TEST(MergeSliceWise, DivergesFromLesionCentricOnDriftedTopSlice) {
  // The lesion's topmost slice holds a drifted low-score box. Slice-wise
  // starts there and absorbs the whole stack; lesion-centric seeds at the
  // best box and rejects the drifted one (IoU with the seed below theta).
  const std::vector<Box2D> in = {
      b2(1, 2, 0, 12, 10, 0.2),  // drifted top box
      b2(2, 1, 0, 11, 10, 0.5),
      b2(3, 0, 0, 10, 10, 0.9),  // seed
      b2(4, 0, 0, 10, 10, 0.4),
  };
  EXPECT_GT(lndet::iou2d(in[0], in[1]), 0.7);   // adjacent-slice link holds
  EXPECT_LT(lndet::iou2d(in[2], in[0]), 0.7);   // seed-anchored link fails

  const auto lc = lndet::merge_lesion_centric(in, lesion_cfg(0.7));
  ASSERT_EQ(lc.size(), 2u);
  expect_box_eq(lc[0], Box3D("p", 0, 0, 11, 10, 2, 4, 0.9));
  expect_box_eq(lc[1], Box3D("p", 2, 0, 12, 10, 1, 1, 0.2));

  const auto sw = lndet::merge_slice_wise(in, slice_cfg(0.7));
  ASSERT_EQ(sw.size(), 1u);
  expect_box_eq(sw[0], Box3D("p", 0, 0, 12, 10, 1, 4, 0.9));
}

TEST(Merging, EmptyInputGivesEmptyOutput) {
  EXPECT_TRUE(lndet::merge_lesion_centric({}, lesion_cfg()).empty());
  EXPECT_TRUE(lndet::merge_slice_wise({}, slice_cfg()).empty());
}

TEST(Merging, MixedPatientsThrow) {
  const std::vector<Box2D> in = {b2(0, 0, 0, 10, 10, 0.8),
                                 Box2D("q", 0, 0, 0, 10, 10, 0.7)};
  EXPECT_THROW(lndet::merge_lesion_centric(in, lesion_cfg()), std::invalid_argument);
  EXPECT_THROW(lndet::merge_slice_wise(in, slice_cfg()), std::invalid_argument);
}

TEST(Merging, BadConfigThrows) {
  EXPECT_THROW(lndet::merge_lesion_centric({}, lesion_cfg(0.0)), std::invalid_argument);
  EXPECT_THROW(lndet::merge_lesion_centric({}, lesion_cfg(1.0)), std::invalid_argument);
  EXPECT_THROW(lndet::merge_lesion_centric({}, slice_cfg()), std::invalid_argument);
  EXPECT_THROW(lndet::merge_slice_wise({}, lesion_cfg()), std::invalid_argument);
}

TEST(Merging, LesionCentricMatchesBruteForceOracle) {
  std::mt19937 rng(42);
  for (int it = 0; it < 200; ++it) {
    const auto boxes = oracle::random_instance(rng);
    for (double theta : {0.3, 0.5, 0.7}) {
      const auto chains = oracle::lesion_centric_chains(boxes, theta);
      const auto expected = oracle::merge_via_chains(boxes, chains, false);
      const auto got = lndet::merge_lesion_centric(boxes, lesion_cfg(theta));
      ASSERT_EQ(got.size(), expected.size()) << "instance " << it << " theta " << theta;
      for (size_t i = 0; i < got.size(); ++i) expect_box_eq(got[i], expected[i]);
    }
  }
}

TEST(Merging, SliceWiseMatchesBruteForceOracle) {
  std::mt19937 rng(43);
  for (int it = 0; it < 200; ++it) {
    const auto boxes = oracle::random_instance(rng);
    for (double theta : {0.3, 0.5, 0.7}) {
      const auto chains = oracle::slice_wise_chains(boxes, theta);
      const auto expected = oracle::merge_via_chains(boxes, chains, true);
      const auto got = lndet::merge_slice_wise(boxes, slice_cfg(theta));
      ASSERT_EQ(got.size(), expected.size());
      for (size_t i = 0; i < got.size(); ++i) expect_box_eq(got[i], expected[i]);
    }
  }
}

TEST(Merging, PartitionScoreLawAndChainValidity) {
  std::mt19937 rng(44);
  for (int it = 0; it < 150; ++it) {
    const auto boxes = oracle::random_instance(rng);
    for (double theta : {0.3, 0.5, 0.7}) {
      for (const bool lesion_mode : {true, false}) {
        const auto chains = lesion_mode ? oracle::lesion_centric_chains(boxes, theta)
                                        : oracle::slice_wise_chains(boxes, theta);
        // Partition: every input box in exactly one chain.
        std::set<size_t> seen;
        for (const auto& c : chains)
          for (size_t idx : c.members) EXPECT_TRUE(seen.insert(idx).second);
        EXPECT_EQ(seen.size(), boxes.size());

        for (const auto& c : chains) {
          const lndet::Box3D merged = oracle::chain_to_box(boxes, c);
          double max_score = 0.0;
          std::set<int> slices;
          for (size_t idx : c.members) {
            max_score = std::max(max_score, boxes[idx].score);
            slices.insert(boxes[idx].slice_index);
          }
          EXPECT_DOUBLE_EQ(merged.score, max_score);  // score law
          // One box per slice, contiguous slice range.
          EXPECT_EQ(slices.size(), c.members.size());
          EXPECT_EQ(static_cast<int>(slices.size()), *slices.rbegin() - *slices.begin() + 1);
          if (lesion_mode) {
            // Seed dominance and seed-anchored chain validity.
            const lndet::Box2D& seed = boxes[c.members.front()];
            EXPECT_DOUBLE_EQ(merged.score, seed.score);
            for (size_t idx : c.members) {
              if (idx != c.members.front()) {
                EXPECT_GT(lndet::iou2d(seed, boxes[idx]), theta);
              }
            }
          }
        }
        // Lesion-centric emission order is non-increasing in score.
        if (lesion_mode) {
          const auto out = lndet::merge_lesion_centric(
              boxes, lesion_cfg(theta));
          for (size_t i = 1; i < out.size(); ++i)
            EXPECT_GE(out[i - 1].score, out[i].score);
        }
      }
    }
  }
}
