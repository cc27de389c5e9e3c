#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pommix/metrics.hpp"

using namespace pommix::eval;

namespace {

// O(n^2) pair-counting tau-b with tie corrections
double tau_b_oracle(const std::vector<double>& y,
                    const std::vector<double>& h) {
  const std::size_t n = y.size();
  double nc = 0, nd = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dy = y[i] - y[j], dh = h[i] - h[j];
      if (dy == 0 && dh == 0) continue;
      if (dy == 0) {
        tx += 1;
      } else if (dh == 0) {
        ty += 1;
      } else if (dy * dh > 0) {
        nc += 1;
      } else {
        nd += 1;
      }
    }
  const double n0 = double(n) * (n - 1) / 2;
  // tx counts pairs tied only in y-axis variable naming per Kendall: careful
  // n1 = ties in first argument, n2 = ties in second
  double n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (y[i] == y[j]) n1 += 1;
      if (h[i] == h[j]) n2 += 1;
    }
  return (nc - nd) / std::sqrt((n0 - n1) * (n0 - n2));
}

// threshold-sweep AUROC oracle (trapezoid over the ROC curve)
double auroc_oracle(const std::vector<int>& labels,
                    const std::vector<double>& scores) {
  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end(), std::greater<>());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  double pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  double area = 0, prev_fpr = 0, prev_tpr = 0;
  for (double t : uniq) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] ? tp : fp) += 1;
    const double tpr = tp / pos, fpr = fp / neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  area += (1 - prev_fpr) * (1 + prev_tpr) / 2;
  return area;
}

}  // namespace

TEST(Metrics, MonotoneLinearGivesPerfectScores) {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(i);
    y.push_back(2.0 * i + 1.0);
  }
  EXPECT_NEAR(pearson(y, x), 1.0, 1e-12);
  EXPECT_NEAR(kendall_tau_b(y, x), 1.0, 1e-12);
}

TEST(Metrics, ReversedRankingGivesMinusOne) {
  std::vector<double> x, y;
  for (int i = 0; i < 15; ++i) {
    x.push_back(i);
    y.push_back(-3.0 * i);
  }
  EXPECT_NEAR(kendall_tau_b(x, y), -1.0, 1e-12);
}

TEST(Metrics, TauBMatchesBruteForceWithTies) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(0, 9);  // discrete values force ties
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> y(50), h(50);
    for (auto& v : y) v = d(rng);
    for (auto& v : h) v = d(rng);
    EXPECT_NEAR(kendall_tau_b(y, h), tau_b_oracle(y, h), 1e-10);
  }
}

TEST(Metrics, PearsonMatchesCovarianceOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> d(-2, 2);
  std::vector<double> y(50), h(50);
  for (auto& v : y) v = d(rng);
  for (auto& v : h) v = d(rng);
  double my = 0, mh = 0;
  for (int i = 0; i < 50; ++i) {
    my += y[i] / 50;
    mh += h[i] / 50;
  }
  double cov = 0, vy = 0, vh = 0;
  for (int i = 0; i < 50; ++i) {
    cov += (y[i] - my) * (h[i] - mh);
    vy += (y[i] - my) * (y[i] - my);
    vh += (h[i] - mh) * (h[i] - mh);
  }
  EXPECT_NEAR(pearson(y, h), cov / std::sqrt(vy * vh), 1e-10);
}

TEST(Metrics, AurocMatchesThresholdSweep) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> d(0, 1);
  std::uniform_int_distribution<int> label(0, 1);
  std::uniform_int_distribution<int> coarse(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> labels(50);
    std::vector<double> scores(50);
    bool pos = false, neg = false;
    for (int i = 0; i < 50; ++i) {
      labels[i] = label(rng);
      // mix of continuous and tied scores
      scores[i] = trial % 2 ? d(rng) : 0.25 * coarse(rng);
      (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    EXPECT_NEAR(auroc(labels, scores), auroc_oracle(labels, scores), 1e-10);
  }
}

TEST(Metrics, ErrorsOnDegenerateInput) {
  EXPECT_THROW(pearson({1, 1, 1}, {1, 2, 3}), MetricError);
  EXPECT_THROW(pearson({1, 2}, {1, 2, 3}), MetricError);
  EXPECT_THROW(rmse({1}, {1}), MetricError);
  EXPECT_THROW(auroc({1, 1}, {0.1, 0.2}), MetricError);
}

TEST(Metrics, RmseBasic) {
  EXPECT_NEAR(rmse({0, 0, 0, 0}, {1, 1, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(rmse({1, 2}, {1, 2}), 0.0, 1e-12);
}

TEST(Metrics, MacroAurocSkipsSingleClassLabels) {
  // label 0 has both classes, label 1 is constant and must be skipped
  std::vector<std::vector<int>> labels = {{1, 0}, {0, 0}, {1, 0}, {0, 0}};
  std::vector<std::vector<double>> scores = {
      {0.9, 0.5}, {0.1, 0.5}, {0.8, 0.5}, {0.2, 0.5}};
  std::vector<int> skipped;
  const double m = macro_auroc(labels, scores, &skipped);
  EXPECT_NEAR(m, 1.0, 1e-12);
  ASSERT_EQ(skipped.size(), 1u);
  EXPECT_EQ(skipped[0], 1);
}
