#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sumfeat/stats.hpp"

using namespace sumfeat;

namespace {

// statsmodels 0.14 lowess(frac=2/3, delta=0) on the same points.
const std::vector<double> kX = {3.162444, 6.380423, 1.651926, 1.005145, 3.40472,  1.63823,  9.117004,
                                9.519582, 6.100069, 7.183609, 1.77465,  7.59218,  6.549048, 8.597609,
                                3.883754, 6.406352, 5.658814, 4.260047, 1.973935, 5.338909};
const std::vector<double> kY = {0.575043, 0.946253, 0.527478, 0.576976, 1.310072, 0.226147, 0.866516,
                                0.027435, 1.377318, 1.12229,  0.821432, 0.716154, 1.354257, 0.781129,
                                1.328196, 0.641435, 1.118302, 1.379546, 0.328554, 0.59233};
const std::vector<double> kFitIt0 = {
    0.8883242722484843, 1.0029946305274766, 0.5328665179413894, 0.36821414292046,
    0.9397633380665409, 0.5294025665442553, 0.5453717644194536, 0.466471336102593,
    1.0273375534818099, 0.9130805058121756, 0.5637994308602077, 0.8363807575760138,
    0.9905829541474956, 0.6451698934804662, 1.055306384021597,  1.001048798092282,
    1.0677703628159356, 1.0810347593597511, 0.6135390699025056, 1.0748137983063508};
const std::vector<double> kFitIt3 = {
    0.8923493894739472, 1.0065650204008763, 0.5336040337240799, 0.3686443717932415,
    0.9445831865897574, 0.5301282236550212, 0.556887621659332,  0.47965021590871976,
    1.0325800621252688, 0.916693735798413,  0.5646552055128449, 0.8422505220271634,
    0.9930076417691438, 0.6547234641195686, 1.0608392830642535, 1.0044693054053846,
    1.073863137233232,  1.0873912226701778, 0.6146353990466763, 1.0799940422569654};

}  // namespace

TEST(Lowess, ConstantInputGivesConstantOutput) {
  const std::vector<double> x = {5, 1, 4, 2, 3, 3, 9, 7};
  const std::vector<double> y(x.size(), 3.25);
  for (int it : {0, 1, 3}) {
    for (double f : {0.3, 2.0 / 3.0, 1.0}) {
      for (double v : lowess(x, y, f, it)) EXPECT_EQ(v, 3.25);
    }
  }
}

TEST(Lowess, LinearInputFullSpanIsOls) {
  oracle::SplitMix64 rng(3);
  std::vector<double> x, y;
  for (int i = 0; i < 40; ++i) {
    x.push_back(rng.uniform() * 10.0);
    y.push_back(2.0 - 0.7 * x.back());
  }
  const auto fit = lowess(x, y, 1.0, 0);
  const auto ols = oracle::ols_fit(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(fit[i], ols[i], 1e-6);
}

TEST(Lowess, MatchesStatsmodels) {
  const auto it0 = lowess(kX, kY, 2.0 / 3.0, 0);
  const auto it3 = lowess(kX, kY, 2.0 / 3.0, 3);
  for (std::size_t i = 0; i < kX.size(); ++i) {
    EXPECT_NEAR(it0[i], kFitIt0[i], 1e-9) << i;
    EXPECT_NEAR(it3[i], kFitIt3[i], 1e-9) << i;
  }
}

TEST(Lowess, PermutationInvariant) {
  const auto base = lowess(kX, kY);
  oracle::SplitMix64 rng(17);
  std::vector<std::size_t> perm(kX.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int round = 0; round < 20; ++round) {
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> px, py;
    for (auto p : perm) {
      px.push_back(kX[p]);
      py.push_back(kY[p]);
    }
    const auto fit = lowess(px, py);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(fit[i], base[perm[i]]);
  }
}

TEST(Lowess, TiedXValuesArePermutationInvariant) {
  const std::vector<double> x = {1, 1, 2, 2, 2, 3, 4, 4, 5, 5};
  const std::vector<double> y = {3, 1, 2, 5, 4, 3, 2, 5, 1, 4};
  const auto base = lowess(x, y, 0.5, 2);
  std::vector<double> rx(x.rbegin(), x.rend()), ry(y.rbegin(), y.rend());
  const auto rev = lowess(rx, ry, 0.5, 2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(rev[i], base[x.size() - 1 - i]);
}

TEST(Lowess, RobustnessDownweightsOutlier) {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(i);
    y.push_back(0.5 * i + ((i * 7) % 5 - 2) * 0.1);
  }
  y[10] = 40.0;
  const auto plain = lowess(x, y, 0.5, 0);
  const auto robust = lowess(x, y, 0.5, 3);
  EXPECT_LT(std::abs(robust[9] - 4.5), std::abs(plain[9] - 4.5));
  EXPECT_NEAR(robust[9], 4.5, 0.3);
}

TEST(Lowess, InputErrors) {
  const std::vector<double> four = {1, 2, 3, 4};
  EXPECT_THROW(lowess(four, four), StatsError);
  const std::vector<double> x = {1, 2, 3, 4, 5};
  EXPECT_THROW(lowess(x, four), StatsError);
  EXPECT_THROW(lowess(x, x, 0.0, 1), StatsError);
  EXPECT_THROW(lowess(x, x, 1.5, 1), StatsError);
  EXPECT_THROW(lowess(x, x, 1.0, -1), StatsError);
}

TEST(QuantileBins, EqualCountMeans) {
  const std::vector<double> x = {4, 1, 3, 2, 6, 5};
  const std::vector<double> y = {40, 10, 30, 20, 60, 50};
  const auto [bx, by] = quantile_bins(x, y, 3);
  EXPECT_EQ(bx, (std::vector<double>{1.5, 3.5, 5.5}));
  EXPECT_EQ(by, (std::vector<double>{15, 35, 55}));
  EXPECT_THROW(quantile_bins(x, y, 0), StatsError);
}
