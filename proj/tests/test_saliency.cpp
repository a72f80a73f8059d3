// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.


#include "saeflow/saliency.hpp"
#include "saeflow/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace saeflow;

namespace {

auto codes_from(std::size_t t, std::size_t n, std::size_t d, const std::vector<float>& v) -> SparseCodeTensor
{
    return SparseCodeTensor {Dims {t, n, d}, v};
}

auto random_codes(std::size_t t, std::size_t n, std::size_t d, std::uint64_t seed) -> SparseCodeTensor
{
    Rng rng {seed};
    SparseCodeTensor c {Dims {t, n, d}};
    for (float& x : c.values()) {
        x = rng.uniform() < 0.4 ? static_cast<float>(rng.uniform(0.0, 3.0)) : 0.0F;
    }
    return c;
}

// Naive per-dimension statistics over frames [t0, t1), written separately
// from the library.
auto naive_variance(const SparseCodeTensor& c, std::size_t k, std::size_t t0, std::size_t t1) -> double
{
    long double s = 0.0L;
    long double s2 = 0.0L;
    std::size_t m = 0;
    for (std::size_t t = t0; t < t1; ++t) {
        for (std::size_t n = 0; n < c.dims().n; ++n) {
            const long double x = c.at(t, n, k);
            s += x;
            s2 += x * x;
            ++m;
        }
    }
    const long double mean = s / m;
    return static_cast<double>(s2 / m - mean * mean);
}

auto naive_entropy(const SparseCodeTensor& c, std::size_t k, std::size_t t0, std::size_t t1) -> double
{
    double lo = 1e300;
    double hi = -1e300;
    for (std::size_t t = 0; t < c.dims().t; ++t) {
        for (std::size_t n = 0; n < c.dims().n; ++n) {
            lo = std::min(lo, static_cast<double>(c.at(t, n, k)));
            hi = std::max(hi, static_cast<double>(c.at(t, n, k)));
        }
    }
    if (hi == lo) {
        return 0.0;
    }
    std::vector<double> hist(32, 0.0);
    double m = 0.0;
    for (std::size_t t = t0; t < t1; ++t) {
        for (std::size_t n = 0; n < c.dims().n; ++n) {
            int b = static_cast<int>(std::floor((c.at(t, n, k) - lo) / (hi - lo) * 32.0));
            b = std::clamp(b, 0, 31);
            hist[static_cast<std::size_t>(b)] += 1.0;
            m += 1.0;
        }
    }
    double h = 0.0;
    for (const double cnt : hist) {
        if (cnt > 0.0) {
            h -= cnt / m * std::log(cnt / m);
        }
    }
    return h;
}

} // namespace

TEST(Scores, ConstantDimension)
{
    const auto c = codes_from(1, 3, 1, {1, 1, 1});
    EXPECT_DOUBLE_EQ(score_dimensions(c, Criterion::variance).scores[0], 0.0);
    EXPECT_DOUBLE_EQ(score_dimensions(c, Criterion::mean_abs).scores[0], 1.0);
    EXPECT_DOUBLE_EQ(score_dimensions(c, Criterion::entropy).scores[0], 0.0);
}

TEST(Scores, TwoValues)
{
    const auto c = codes_from(2, 1, 1, {0, 2});
    EXPECT_DOUBLE_EQ(score_dimensions(c, Criterion::variance).scores[0], 1.0);
    EXPECT_DOUBLE_EQ(score_dimensions(c, Criterion::mean_abs).scores[0], 1.0);
}

TEST(Scores, UniformOverFourBins)
{
    // Range [0, 32] gives unit-width bins; these land in bins 0, 10, 20, 31.
    const auto c = codes_from(1, 4, 1, {0, 10.5F, 20.5F, 32});
    EXPECT_NEAR(score_dimensions(c, Criterion::entropy).scores[0], std::log(4.0), 1e-12);
    EXPECT_NEAR(score_dimensions(c, Criterion::entropy).scores[0], 1.386294, 1e-6);
}

TEST(Scores, MatchNaiveOracle)
{
    const auto c = random_codes(6, 40, 5, 11);
    const auto var = score_dimensions(c, Criterion::variance);
    const auto ent = score_dimensions(c, Criterion::entropy);
    const auto var3 = score_dimensions(c, Criterion::variance, 3);
    const auto ent3 = score_dimensions(c, Criterion::entropy, 3);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_NEAR(var.scores[k], naive_variance(c, k, 0, 6), 1e-10);
        EXPECT_NEAR(var3.scores[k], naive_variance(c, k, 3, 4), 1e-10);
        EXPECT_NEAR(ent.scores[k], naive_entropy(c, k, 0, 6), 1e-12);
        EXPECT_NEAR(ent3.scores[k], naive_entropy(c, k, 3, 4), 1e-12);
        EXPECT_LE(ent.scores[k], std::log(32.0) + 1e-12);
    }
    EXPECT_FALSE(var.time.has_value());
    EXPECT_EQ(var3.time, std::optional<std::size_t> {3});
}

TEST(Scores, AllSnapshotsMatchesSingleSnapshot)
{
    const auto c = random_codes(5, 30, 4, 12);
    for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
        const auto all = score_all_snapshots(c, cr);
        ASSERT_EQ(all.size(), 5U);
        for (std::size_t t = 0; t < 5; ++t) {
            EXPECT_EQ(all[t].scores, score_dimensions(c, cr, t).scores);
        }
    }
}

TEST(Scores, Errors)
{
    EXPECT_THROW(score_dimensions(SparseCodeTensor {}, Criterion::variance), ShapeError);
    const auto c = random_codes(2, 3, 2, 1);
    EXPECT_THROW(score_dimensions(c, Criterion::variance, 2), ShapeError);
}

TEST(Scores, VarianceTranslationAndScaling)
{
    const auto c = random_codes(4, 50, 6, 13);
    SparseCodeTensor shifted = c;
    SparseCodeTensor scaled = c;
    for (float& x : shifted.values()) {
        x += 2.0F;
    }
    for (float& x : scaled.values()) {
        x *= 4.0F;
    }
    const auto base = score_dimensions(c, Criterion::variance).scores;
    const auto sh = score_dimensions(shifted, Criterion::variance).scores;
    const auto sc = score_dimensions(scaled, Criterion::variance).scores;
    for (std::size_t k = 0; k < base.size(); ++k) {
        // float storage of x + 2 rounds; compare at single-precision level.
        EXPECT_NEAR(sh[k], base[k], 1e-5 * base[k] + 1e-6);
        EXPECT_NEAR(sc[k], 16.0 * base[k], 1e-10 * std::max(1.0, sc[k]));
    }
}

TEST(Scores, CriterionNames)
{
    for (const Criterion c : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
        EXPECT_EQ(parse_criterion(to_string(c)), c);
    }
    EXPECT_FALSE(parse_criterion("kurtosis").has_value());
}

TEST(TopK, Examples)
{
    EXPECT_EQ(top_k(ScoreVector {{0.1, 0.9, 0.5}, Criterion::variance, {}}, 2).indices, (std::vector<std::uint32_t> {1, 2}));
    EXPECT_EQ(top_k(ScoreVector {{1, 1, 1, 1}, Criterion::variance, {}}, 3).indices, (std::vector<std::uint32_t> {0, 1, 2}));
    EXPECT_EQ(top_k(ScoreVector {{3, 1, 2}, Criterion::variance, {}}, 3).indices, (std::vector<std::uint32_t> {0, 1, 2}));
    EXPECT_THROW(top_k(ScoreVector {{3, 1, 2}, Criterion::variance, {}}, 0), ConfigError);
    EXPECT_THROW(top_k(ScoreVector {{3, 1, 2}, Criterion::variance, {}}, 4), ConfigError);
}

TEST(TopK, InvariantUnderIncreasingTransform)
{
    Rng rng {21};
    for (int trial = 0; trial < 50; ++trial) {
        ScoreVector s;
        for (int k = 0; k < 40; ++k) {
            // Coarse values so ties occur.
            s.scores.push_back(std::floor(rng.uniform(0.0, 10.0)));
        }
        ScoreVector t = s;
        for (double& x : t.scores) {
            x = std::exp(0.5 * x) + 3.0;
        }
        for (const std::size_t k : {1UL, 7UL, 20UL, 40UL}) {
            EXPECT_EQ(top_k(s, k).indices, top_k(t, k).indices);
        }
    }
}

TEST(TopK, SelectsLargest)
{
    Rng rng {22};
    ScoreVector s;
    for (int k = 0; k < 64; ++k) {
        s.scores.push_back(rng.uniform());
    }
    const auto set = top_k(s, 10);
    ASSERT_EQ(set.size(), 10U);
    EXPECT_TRUE(std::is_sorted(set.indices.begin(), set.indices.end()));
    double worst_in = 1e9;
    for (const auto i : set.indices) {
        worst_in = std::min(worst_in, s.scores[i]);
    }
    const std::set<std::uint32_t> in(set.indices.begin(), set.indices.end());
    for (std::uint32_t k = 0; k < 64; ++k) {
        if (!in.count(k)) {
            EXPECT_LE(s.scores[k], worst_in);
        }
    }
}

TEST(Jaccard, Examples)
{
    const std::vector<std::uint32_t> a {1, 4, 7};
    EXPECT_DOUBLE_EQ(jaccard(a, a), 1.0);
    EXPECT_DOUBLE_EQ(jaccard(a, {0, 2, 3}), 0.0);
    EXPECT_DOUBLE_EQ(jaccard({}, {}), 1.0);
    std::vector<std::uint32_t> x(50);
    std::vector<std::uint32_t> y(50);
    for (std::uint32_t i = 0; i < 50; ++i) {
        x[i] = i;
        y[i] = i + 20;
    }
    EXPECT_NEAR(jaccard(x, y), 30.0 / 70.0, 1e-15);
    EXPECT_NEAR(jaccard(x, y), 0.428571, 1e-6);
}

TEST(Jaccard, RangeAndEqualityProperty)
{
    Rng rng {23};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::uint32_t> a;
        std::vector<std::uint32_t> b;
        for (std::uint32_t i = 0; i < 30; ++i) {
            if (rng.uniform() < 0.3) {
                a.push_back(i);
            }
            if (rng.uniform() < 0.3) {
                b.push_back(i);
            }
        }
        const double j = jaccard(a, b);
        EXPECT_GE(j, 0.0);
        EXPECT_LE(j, 1.0);
        EXPECT_EQ(j == 1.0, a == b);
    }
}

TEST(Jaccard, SeriesAllowsMismatchedSizes)
{
    const TopKSet g {{0, 1, 2, 3}, Criterion::variance, {}};
    const std::vector<TopKSet> local {{{0, 1}, Criterion::variance, 0}, {{5, 6, 7}, Criterion::variance, 1}};
    const auto j = jaccard_series(g, local);
    ASSERT_EQ(j.size(), 2U);
    EXPECT_DOUBLE_EQ(j[0], 0.5);
    EXPECT_DOUBLE_EQ(j[1], 0.0);
    EXPECT_DOUBLE_EQ(mean_of(j), 0.25);
}

TEST(Periodicity, PeriodicCodesGivePeriodicSelections)
{
    const std::size_t period = 7;
    const std::size_t frames = 4 * period;
    const auto base = random_codes(period, 25, 60, 24);
    SparseCodeTensor c {Dims {frames, 25, 60}};
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t n = 0; n < 25; ++n) {
            for (std::size_t k = 0; k < 60; ++k) {
                c.at(t, n, k) = base.at(t % period, n, k);
            }
        }
    }
    for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
        const auto global = top_k(score_dimensions(c, cr), 20);
        std::vector<TopKSet> local;
        for (const auto& s : score_all_snapshots(c, cr)) {
            local.push_back(top_k(s, 20));
        }
        const auto j = jaccard_series(global, local);
        for (std::size_t t = 0; t + period < frames; ++t) {
            EXPECT_EQ(local[t].indices, local[t + period].indices);
            EXPECT_EQ(j[t], j[t + period]);
        }
    }
}

TEST(Export, ScoresCsv)
{
    const ScoreVector s {{0.5, 2.0, 1.0}, Criterion::variance, {}};
    EXPECT_EQ(scores_csv(s), "dimension,score,rank\n0,0.5,3\n1,2,1\n2,1,2\n");
    EXPECT_EQ(jaccard_csv({1.0, 0.25}), "t,J\n0,1\n1,0.25\n");
}

TEST(Scores, ConfigurableBinCount)
{
    const auto c = codes_from(1, 4, 1, {0, 1, 2, 3});
    EXPECT_NEAR(score_dimensions(c, Criterion::entropy, std::nullopt, 4).scores[0], std::log(4.0), 1e-12);
    EXPECT_NEAR(score_dimensions(c, Criterion::entropy, std::nullopt, 1).scores[0], 0.0, 1e-15);
    EXPECT_THROW(score_dimensions(c, Criterion::entropy, std::nullopt, 0), ConfigError);
}
