#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lndet/gating.hpp"

using lndet::GateMode;
using lndet::Proposal;
using lndet::StationGrouping;

namespace {

Proposal make(int label, std::vector<double> logits, std::vector<double> gate) {
  Proposal p;
  p.proposal_id = "x";
  p.patient_id = "p";
  p.label = label;
  p.head_logits = std::move(logits);
  p.gate = std::move(gate);
  return p;
}

// Central finite difference of gated_loss w.r.t. one head logit.
double fd_gated(std::vector<Proposal> batch, size_t i, size_t j, double h) {
  batch[i].head_logits[j] += h;
  const double up = lndet::gated_loss(batch);
  batch[i].head_logits[j] -= 2.0 * h;
  const double down = lndet::gated_loss(batch);
  return (up - down) / (2.0 * h);
}

double fd_multiclass(std::vector<Proposal> batch, size_t i, size_t j, double h,
                     const StationGrouping& g) {
  batch[i].head_logits[j] += h;
  const double up = lndet::multiclass_loss(batch, g);
  batch[i].head_logits[j] -= 2.0 * h;
  const double down = lndet::multiclass_loss(batch, g);
  return (up - down) / (2.0 * h);
}

std::vector<double> random_gate(std::mt19937& rng, int c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> logits(c);
  for (double& v : logits) v = u(rng);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) { v = std::exp(v - m); sum += v; }
  for (double& v : logits) v /= sum;
  return logits;
}

std::vector<Proposal> random_batch(std::mt19937& rng, int n, int c) {
  std::uniform_real_distribution<double> s(-2.5, 2.5);
  std::uniform_int_distribution<int> y(0, 1);
  std::vector<Proposal> batch;
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(c);
    for (double& v : logits) v = s(rng);
    batch.push_back(make(y(rng), std::move(logits), random_gate(rng, c)));
  }
  return batch;
}

constexpr double kLn2 = 0.6931471805599453;

}  // namespace

TEST(GatedLoss, SingleHeadZeroLogitIsLn2) {
  const std::vector<Proposal> batch = {make(1, {0.0}, {1.0})};
  EXPECT_DOUBLE_EQ(lndet::gated_loss(batch), kLn2);
}

TEST(GatedLoss, SymmetricHalvesIsLn2) {
  const std::vector<Proposal> batch = {make(1, {0.0, 0.0}, {0.5, 0.5})};
  EXPECT_DOUBLE_EQ(lndet::gated_loss(batch), kLn2);
}

TEST(GatedLoss, OneHotGateUsesOnlyThatHead) {
  // ln(1 + e^-2): the second head's huge loss is weighted by exactly zero.
  const std::vector<Proposal> batch = {make(1, {2.0, -5.0}, {1.0, 0.0})};
  EXPECT_NEAR(lndet::gated_loss(batch), 0.12692801104297249, 1e-15);
}

TEST(GatedLoss, EmptyOrMixedBatchThrows) {
  EXPECT_THROW(lndet::gated_loss(std::vector<Proposal>{}), std::invalid_argument);
  const std::vector<Proposal> mixed = {make(1, {0.0}, {1.0}),
                                       make(0, {0.0, 0.0}, {0.5, 0.5})};
  EXPECT_THROW(lndet::gated_loss(mixed), std::invalid_argument);
}

TEST(GatedLoss, InvalidGateRejected) {
  EXPECT_THROW(lndet::gated_loss(std::vector<Proposal>{make(1, {0.0, 0.0}, {0.7, 0.7})}),
               std::invalid_argument);
  EXPECT_THROW(lndet::gated_loss(std::vector<Proposal>{make(1, {0.0, 0.0}, {1.5, -0.5})}),
               std::invalid_argument);
}

TEST(GatedLoss, FiniteForExtremeLogits) {
  for (double s : {500.0, -500.0}) {
    const std::vector<Proposal> batch = {make(1, {s}, {1.0}), make(0, {s}, {1.0})};
    EXPECT_TRUE(std::isfinite(lndet::gated_loss(batch)));
  }
}

TEST(GatedLoss, GateConvexityForSingleProposal) {
  std::mt19937 rng(3);
  for (int it = 0; it < 50; ++it) {
    const auto batch = random_batch(rng, 1, 6);
    double lo = 1e300, hi = -1e300;
    for (double s : batch[0].head_logits) {
      const double b = lndet::bce_with_logit(batch[0].label, s);
      lo = std::min(lo, b);
      hi = std::max(hi, b);
    }
    const double loss = lndet::gated_loss(batch);
    EXPECT_GE(loss, lo - 1e-12);
    EXPECT_LE(loss, hi + 1e-12);
  }
}

TEST(GatedLoss, ReducesToScalarBceForSingleHead) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> s(-10.0, 10.0);
  std::uniform_int_distribution<int> y(0, 1);
  for (int it = 0; it < 1000; ++it) {
    const int label = y(rng);
    const double logit = s(rng);
    // Reference: textbook BCE evaluated in long double.
    const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(logit)));
    const long double ref = -(label * std::log(p) + (1 - label) * std::log(1.0L - p));
    const double loss = lndet::gated_loss(std::vector<Proposal>{make(label, {logit}, {1.0})});
    EXPECT_NEAR(loss, static_cast<double>(ref), 1e-12);
  }
}

TEST(GatedLossGrad, TrivialValues) {
  const std::vector<Proposal> batch = {make(1, {0.0}, {1.0})};
  const auto grad = lndet::gated_loss_grad(batch);
  ASSERT_EQ(grad.size(), 1u);
  ASSERT_EQ(grad[0].size(), 1u);
  EXPECT_DOUBLE_EQ(grad[0][0], -0.5);  // sigmoid(0) - 1

  const std::vector<Proposal> zero_weight = {make(1, {3.0, -1.0}, {1.0, 0.0})};
  EXPECT_DOUBLE_EQ(lndet::gated_loss_grad(zero_weight)[0][1], 0.0);
}

TEST(GatedLossGrad, MatchesFiniteDifferences) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> nn(1, 16);
  for (int it = 0; it < 20; ++it) {
    for (int c : {1, 6, 14}) {
      const auto batch = random_batch(rng, nn(rng), c);
      const auto grad = lndet::gated_loss_grad(batch);
      for (size_t i = 0; i < batch.size(); ++i)
        for (int j = 0; j < c; ++j) {
          const double fd = fd_gated(batch, i, j, 1e-5);
          const double denom = std::max({std::abs(fd), std::abs(grad[i][j]), 1e-12});
          EXPECT_LT(std::abs(fd - grad[i][j]) / denom, 1e-5);
        }
    }
  }
}

TEST(GatedLossGrad, GateIsAStoppedInput) {
  // Perturbing the gate changes the loss, but the gradient interface has no
  // gate component: one entry per head logit and nothing else.
  std::vector<Proposal> batch = {make(1, {1.0, -2.0}, {0.7, 0.3})};
  const double before = lndet::gated_loss(batch);
  const auto grad = lndet::gated_loss_grad(batch);
  ASSERT_EQ(grad[0].size(), batch[0].head_logits.size());
  batch[0].gate = {0.3, 0.7};
  EXPECT_NE(lndet::gated_loss(batch), before);
  // Same logits, different gates: the per-logit gradient scales by t only.
  const auto grad2 = lndet::gated_loss_grad(batch);
  EXPECT_DOUBLE_EQ(grad2[0][0] / 0.3, grad[0][0] / 0.7);
}

TEST(FinalScore, WeightedSumOfLogits) {
  EXPECT_DOUBLE_EQ(lndet::final_score(make(0, {3.2, -7.0}, {1.0, 0.0})), 3.2);
  EXPECT_NEAR(lndet::final_score(make(0, {2.0, -1.0}, {0.3, 0.7})), -0.1, 1e-12);
  EXPECT_DOUBLE_EQ(
      lndet::final_score(make(0, {1.0, 1.0, 1.0, 1.0}, {0.25, 0.25, 0.25, 0.25})), 1.0);
}

TEST(FinalScore, ConstantShiftPreservesRanking) {
  std::mt19937 rng(6);
  auto batch = random_batch(rng, 32, 6);
  std::vector<double> base;
  for (const Proposal& p : batch) base.push_back(lndet::final_score(p));
  const double shift = 3.75;
  for (Proposal& p : batch)
    for (double& s : p.head_logits) s += shift;
  for (size_t i = 0; i < batch.size(); ++i)
    EXPECT_NEAR(lndet::final_score(batch[i]), base[i] + shift, 1e-9);
}

TEST(HardGateScore, PicksArgmaxHead) {
  EXPECT_DOUBLE_EQ(lndet::hard_gate_score(make(0, {2.0, -1.0}, {0.3, 0.7})), -1.0);
  // One-hot gate: hard and soft scores agree.
  const Proposal p = make(0, {2.0, -1.0}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(lndet::hard_gate_score(p), lndet::final_score(p));
  // Tie at 0.5/0.5: the lowest head index wins.
  EXPECT_DOUBLE_EQ(lndet::hard_gate_score(make(0, {4.0, 9.0}, {0.5, 0.5})), 4.0);
}

TEST(PooledAndUniform, BaselineScores) {
  const Proposal single = make(0, {1.7}, {1.0});
  EXPECT_DOUBLE_EQ(lndet::pooled_score(single), lndet::final_score(single));
  EXPECT_DOUBLE_EQ(lndet::uniform_ensemble_score(make(0, {2.0, -2.0}, {0.5, 0.5})), 0.0);
  const Proposal uniform = make(0, {1.0, 2.0, 6.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  EXPECT_NEAR(lndet::uniform_ensemble_score(uniform), lndet::final_score(uniform), 1e-12);
}

TEST(StationCeLoss, UniformLogitsGiveLnC) {
  const StationGrouping g = StationGrouping::identity(3);
  Proposal p = make(1, {0.0, 0.0, 0.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  p.is_true_positive = true;
  p.true_station = "2";
  p.station_logits = {0.0, 0.0, 0.0};
  const auto res = lndet::station_ce_loss(std::vector<Proposal>{p}, g);
  EXPECT_NEAR(res.value, std::log(3.0), 1e-12);
  EXPECT_EQ(res.tp_count, 1);
  // Same answer when only the normalized gate is available.
  p.station_logits.clear();
  EXPECT_NEAR(lndet::station_ce_loss(std::vector<Proposal>{p}, g).value, std::log(3.0),
              1e-12);
}

TEST(StationCeLoss, AllFpBatchIsZeroWithFlag) {
  const StationGrouping g = StationGrouping::identity(2);
  const std::vector<Proposal> batch = {make(0, {0.0, 0.0}, {0.5, 0.5}),
                                       make(0, {1.0, 1.0}, {0.5, 0.5})};
  const auto res = lndet::station_ce_loss(batch, g);
  EXPECT_DOUBLE_EQ(res.value, 0.0);
  EXPECT_EQ(res.tp_count, 0);
}

TEST(StationCeLoss, SaturatedLogitsVanish) {
  const StationGrouping g = StationGrouping::identity(2);
  Proposal p = make(1, {0.0, 0.0}, {0.5, 0.5});
  p.is_true_positive = true;
  p.true_station = "0";
  p.station_logits = {20.0, 0.0};
  p.gate = {1.0 / (1.0 + std::exp(-20.0)), 1.0 - 1.0 / (1.0 + std::exp(-20.0))};
  EXPECT_LT(lndet::station_ce_loss(std::vector<Proposal>{p}, g).value, 1e-8);
}

TEST(StationCeLoss, TpWithoutStationThrows) {
  const StationGrouping g = StationGrouping::identity(2);
  Proposal p = make(1, {0.0, 0.0}, {0.5, 0.5});
  p.is_true_positive = true;
  EXPECT_THROW(lndet::station_ce_loss(std::vector<Proposal>{p}, g),
               std::invalid_argument);
}

TEST(MulticlassLoss, UniformLogitsSingleFp) {
  const StationGrouping g = StationGrouping::identity(2);
  // c+1 = 3 classes, all logits zero, background target: ln 3.
  const std::vector<Proposal> batch = {make(0, {0.0, 0.0, 0.0}, {0.5, 0.5})};
  EXPECT_NEAR(lndet::multiclass_loss(batch, g), std::log(3.0), 1e-12);
}

TEST(MulticlassLoss, SaturatedTrueHeadVanishes) {
  const StationGrouping g = StationGrouping::identity(2);
  Proposal p = make(1, {40.0, 0.0, 0.0}, {0.5, 0.5});
  p.true_station = "0";
  EXPECT_LT(lndet::multiclass_loss(std::vector<Proposal>{p}, g), 1e-12);
  EXPECT_NEAR(lndet::multiclass_score(p), 1.0, 1e-12);
}

TEST(MulticlassLoss, GradMatchesFiniteDifferences) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> s(-2.5, 2.5);
  std::uniform_int_distribution<int> y(0, 1);
  const StationGrouping g = StationGrouping::identity(4);
  for (int it = 0; it < 10; ++it) {
    std::vector<Proposal> batch;
    for (int i = 0; i < 8; ++i) {
      std::vector<double> logits(5);
      for (double& v : logits) v = s(rng);
      Proposal p = make(y(rng), std::move(logits), {0.25, 0.25, 0.25, 0.25});
      if (p.label == 1) p.true_station = std::to_string(i % 4);
      batch.push_back(std::move(p));
    }
    const auto grad = lndet::multiclass_loss_grad(batch, g);
    for (size_t i = 0; i < batch.size(); ++i)
      for (size_t j = 0; j < 5; ++j) {
        const double fd = fd_multiclass(batch, i, j, 1e-5, g);
        const double denom = std::max({std::abs(fd), std::abs(grad[i][j]), 1e-12});
        EXPECT_LT(std::abs(fd - grad[i][j]) / denom, 1e-4);
      }
  }
}

TEST(MulticlassLoss, WrongLogitWidthThrows) {
  const StationGrouping g = StationGrouping::identity(2);
  const std::vector<Proposal> batch = {make(0, {0.0, 0.0}, {0.5, 0.5})};
  EXPECT_THROW(lndet::multiclass_loss(batch, g), std::invalid_argument);
}

TEST(Grouping, PresetMaps) {
  const StationGrouping c6 = StationGrouping::iaslc_preset(6);
  EXPECT_EQ(c6.head_of("1R"), 0);  // supraclavicular
  EXPECT_EQ(c6.head_of("1L"), 0);
  EXPECT_EQ(c6.head_of("2L"), 1);
  EXPECT_EQ(c6.head_of("4R"), 1);
  EXPECT_EQ(c6.head_of("5"), 2);
  EXPECT_EQ(c6.head_of("7"), 3);
  EXPECT_EQ(c6.head_of("9"), 4);
  EXPECT_EQ(c6.head_of("10-14"), 5);

  const StationGrouping c1 = StationGrouping::iaslc_preset(1);
  for (const auto& name : StationGrouping::iaslc_stations())
    EXPECT_EQ(c1.head_of(name), 0);

  const StationGrouping c14 = StationGrouping::iaslc_preset(14);
  const auto& names = StationGrouping::iaslc_stations();
  for (size_t i = 0; i < names.size(); ++i)
    EXPECT_EQ(c14.head_of(names[i]), static_cast<int>(i));

  EXPECT_THROW(StationGrouping::iaslc_preset(8), std::invalid_argument);
  EXPECT_THROW(c6.head_of("nonexistent"), std::invalid_argument);
}

TEST(Grouping, RejectsGapsAndBadIndices) {
  EXPECT_THROW(StationGrouping(2, {{"a", 0}}), std::invalid_argument);   // head 1 empty
  EXPECT_THROW(StationGrouping(2, {{"a", 2}, {"b", 0}}), std::invalid_argument);
  EXPECT_THROW(StationGrouping(0, {}), std::invalid_argument);
  EXPECT_NO_THROW(StationGrouping(2, {{"a", 0}, {"b", 1}, {"c", 0}}));
}
