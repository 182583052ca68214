#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "promptclr/gradcheck.hpp"
#include "promptclr/losses.hpp"
#include "promptclr/testing.hpp"

using namespace promptclr;

namespace {

// Straight transcription of the loss in long double, positives chosen by a
// caller-supplied predicate. Kept separate from both library implementations.
template <class IsPositive>
double reference_loss(const ContrastiveBatch& b, IsPositive is_positive) {
  long double total = 0;
  int anchors = 0;
  const auto n = b.size();
  for (std::size_t i = 0; i < n; ++i) {
    long double denom = 0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += std::exp(static_cast<long double>(b.features[i].dot(b.features[a])) / b.temperature);
    long double sum = 0;
    int count = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || !is_positive(i, p)) continue;
      sum += std::log(std::exp(static_cast<long double>(b.features[i].dot(b.features[p])) / b.temperature) / denom);
      ++count;
    }
    if (count == 0) continue;
    total += -sum / count;
    ++anchors;
  }
  return anchors ? static_cast<double>(total / anchors) : 0.0;
}

double reference_supcon(const ContrastiveBatch& b) {
  return reference_loss(b, [&](std::size_t i, std::size_t p) { return b.labels[i] == b.labels[p]; });
}

double reference_simclr(const ContrastiveBatch& b) {
  return reference_loss(b, [&](std::size_t i, std::size_t p) { return b.view_of[i] == b.view_of[p]; });
}

Vector unit(int dim, int axis) {
  Vector v = Vector::Zero(dim);
  v(axis) = 1.0;
  return v;
}

}  // namespace

TEST(MlmLoss, KnownValues) {
  Vector sure(2);
  sure << 0.0, 1.0;
  EXPECT_NEAR(mlm_loss({sure}, {1}), 0.0, 1e-12);
  Vector even(2);
  even << 0.5, 0.5;
  EXPECT_NEAR(mlm_loss({even}, {0}), std::log(2.0), 1e-12);
  EXPECT_NEAR(mlm_loss({even}, {0}), 0.6931, 1e-4);
  Vector lean(2);
  lean << 0.7311, 0.2689;
  EXPECT_NEAR(mlm_loss({lean}, {0}), 0.3133, 1e-4);
  // Mean over the batch.
  EXPECT_NEAR(mlm_loss({sure, even}, {1, 0}), std::log(2.0) / 2, 1e-12);
}

TEST(MlmLoss, RejectsBadInput) {
  Vector bad(2);
  bad << 0.5, 0.6;
  EXPECT_THROW(mlm_loss({bad}, {0}), ArgumentError);
  Vector ok(2);
  ok << 0.5, 0.5;
  EXPECT_THROW(mlm_loss({ok}, {2}), ArgumentError);
  EXPECT_THROW(mlm_loss({ok}, {0, 1}), ArgumentError);
}

TEST(MlmLoss, FromLogitsAgreesWithProbabilities) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<Vector> logits, probs;
    std::vector<int> golds;
    const int n = 1 + static_cast<int>(rng.index(5));
    for (int i = 0; i < n; ++i) {
      Vector l(3);
      for (int k = 0; k < 3; ++k) l(k) = rng.normal(0.0, 3.0);
      Vector e = l.array().exp();
      probs.push_back(e / e.sum());
      logits.push_back(l);
      golds.push_back(static_cast<int>(rng.index(3)));
    }
    EXPECT_NEAR(mlm_loss_from_logits(logits, golds).loss, mlm_loss(probs, golds), 1e-10);
  }
}

TEST(MlmLoss, LogitGradient) {
  Rng rng(2);
  std::vector<Vector> logits{Vector::Random(4), Vector::Random(4)};
  const std::vector<int> golds{3, 0};
  const auto res = mlm_loss_from_logits(logits, golds);
  Vector flat(8), analytic(8);
  flat << logits[0], logits[1];
  analytic << res.dlogits[0], res.dlogits[1];
  const auto f = [&](const Vector& x) {
    return mlm_loss_from_logits({x.head(4), x.tail(4)}, golds).loss;
  };
  EXPECT_LT(relative_error(analytic, numeric_gradient(f, flat)), 1e-6);
}

TEST(SupCon, TwoIdenticalViewsGiveZero) {
  Vector z = unit(3, 0);
  const auto b = ContrastiveBatch::from_views({z}, {z}, {0}, 0.1);
  const auto r = supcon_loss(b);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_FALSE(r.degenerate);
}

TEST(SupCon, NoPositivesIsDegenerate) {
  ContrastiveBatch b;
  b.features = {unit(2, 0), unit(2, 1)};
  b.labels = {0, 1};
  b.view_of = {0, 0};
  const auto r = supcon_loss(b);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.loss, 0.0);
  for (const auto& g : r.gradient) EXPECT_EQ(g.norm(), 0.0);
}

TEST(SupCon, OrthogonalPairsClosedForm) {
  // Two anchors, two identical views each, orthogonal across anchors, t = 1.
  const auto b = ContrastiveBatch::from_views({unit(2, 0), unit(2, 1)}, {unit(2, 0), unit(2, 1)}, {0, 1}, 1.0);
  const double expect = std::log(1.0 + 2.0 / std::exp(1.0));
  EXPECT_NEAR(expect, 0.5514, 1e-4);
  EXPECT_NEAR(reference_supcon(b), expect, 1e-12);
  EXPECT_NEAR(supcon_loss(b).loss, expect, 1e-12);
  EXPECT_NEAR(supcon_bruteforce(b), expect, 1e-12);
  // With distinct labels per anchor the two rules coincide.
  EXPECT_NEAR(simclr_loss(b).loss, expect, 1e-12);
}

TEST(SupCon, MatchesReferenceOnRandomBatches) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto b = promptclr::testing::random_contrastive_batch(rng);
    const double ref = reference_supcon(b);
    EXPECT_NEAR(supcon_loss(b, false).loss, ref, 1e-9 * std::max(1.0, std::abs(ref)));
    EXPECT_NEAR(supcon_bruteforce(b), ref, 1e-9 * std::max(1.0, std::abs(ref)));
    const double ref_simclr = reference_simclr(b);
    EXPECT_NEAR(simclr_loss(b, false).loss, ref_simclr, 1e-9 * std::max(1.0, std::abs(ref_simclr)));
  }
}

TEST(SupCon, StableAtLowTemperature) {
  Rng rng(4);
  auto b = promptclr::testing::random_contrastive_batch(rng);
  b.temperature = 1e-3;
  const auto r = supcon_loss(b);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (const auto& g : r.gradient) EXPECT_TRUE(g.allFinite());
}

TEST(SupCon, PermutationInvariant) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto b = promptclr::testing::random_contrastive_batch(rng);
    std::vector<std::size_t> order(b.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    ContrastiveBatch p;
    p.temperature = b.temperature;
    for (const auto k : order) {
      p.features.push_back(b.features[k]);
      p.labels.push_back(b.labels[k]);
      p.view_of.push_back(b.view_of[k]);
    }
    EXPECT_NEAR(supcon_loss(p, false).loss, supcon_loss(b, false).loss, 1e-9);
    EXPECT_NEAR(simclr_loss(p, false).loss, simclr_loss(b, false).loss, 1e-9);
  }
}

TEST(SupCon, HalvingTemperatureSpreadsLogProbabilities) {
  Rng rng(6);
  int sharper = 0, total = 0;
  while (total < 100) {
    auto b = promptclr::testing::random_contrastive_batch(rng);
    const auto base = within_anchor_dispersion(supcon_loss(b, false));
    if (!base) continue;
    b.temperature /= 2;
    // Within one anchor the log-probabilities are similarities / t minus a
    // shared constant, so their spread grows by exactly 4.
    const auto sharp = within_anchor_dispersion(supcon_loss(b, false));
    EXPECT_NEAR(*sharp, 4 * *base, 1e-8 * std::max(1.0, *sharp));
    sharper += *sharp > *base ? 1 : 0;
    ++total;
  }
  EXPECT_GE(sharper, 95);
}

TEST(SupCon, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (auto kind : {ContrastiveKind::supcon, ContrastiveKind::simclr}) {
    for (int t = 0; t < 20; ++t) {
      auto b = promptclr::testing::random_contrastive_batch(rng, 5, 6, {0.1, 0.5, 1.0});
      const auto dim = b.features.front().size();
      const auto n = static_cast<Eigen::Index>(b.size());
      Vector flat(n * dim), analytic(n * dim);
      const auto r = contrastive_loss(b, kind);
      for (Eigen::Index i = 0; i < n; ++i) {
        flat.segment(i * dim, dim) = b.features[static_cast<std::size_t>(i)];
        analytic.segment(i * dim, dim) = r.gradient[static_cast<std::size_t>(i)];
      }
      // Features are treated as free variables here (no renormalization).
      const auto f = [&](const Vector& x) {
        auto c = b;
        for (Eigen::Index i = 0; i < n; ++i) c.features[static_cast<std::size_t>(i)] = x.segment(i * dim, dim);
        return contrastive_loss(c, kind, false, false).loss;
      };
      EXPECT_LT(relative_error(analytic, numeric_gradient(f, flat), kGradientFloor), 1e-4);
    }
  }
}

TEST(SupCon, RejectsInvalidBatches) {
  Vector z = unit(2, 0);
  auto b = ContrastiveBatch::from_views({z}, {z}, {0}, 0.1);
  b.temperature = 0.0;
  EXPECT_THROW(supcon_loss(b), ArgumentError);
  b.temperature = -0.1;
  EXPECT_THROW(supcon_loss(b), ArgumentError);
  ContrastiveBatch one;
  one.features = {z};
  one.labels = {0};
  one.view_of = {0};
  EXPECT_THROW(supcon_loss(one), ArgumentError);
  auto scaled = ContrastiveBatch::from_views({2.0 * z}, {z}, {0}, 0.1);
  EXPECT_THROW(supcon_loss(scaled), ArgumentError);
  ContrastiveBatch orphan;
  orphan.features = {z, z, z};
  orphan.labels = {0, 0, 0};
  orphan.view_of = {0, 0, 1};
  EXPECT_THROW(supcon_loss(orphan), ArgumentError);
}

TEST(LossMode, Parse) {
  EXPECT_EQ(parse_loss_mode("supcon"), LossMode::supcon);
  EXPECT_EQ(parse_loss_mode("simclr"), LossMode::simclr);
  EXPECT_EQ(parse_loss_mode("none"), LossMode::none);
  EXPECT_THROW(parse_loss_mode("triplet"), ConfigError);
}
