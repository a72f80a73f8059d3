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


#include "saeflow/spatial.hpp"
#include "saeflow/synthgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace saeflow;

namespace {

auto random_codes(std::size_t t, std::size_t n, std::size_t d, std::uint64_t seed) -> SparseCodeTensor
{
    Rng rng {seed};
    SparseCodeTensor c {Dims {t, n, d}};
    for (float& x : c.values()) {
        x = rng.uniform() < 0.3 ? static_cast<float>(rng.uniform(0.0, 2.0)) : 0.0F;
    }
    return c;
}

auto count_of(const std::string& text, const std::string& needle) -> std::size_t
{
    std::size_t count = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
        ++count;
    }
    return count;
}

auto small_mesh() -> Mesh
{
    return Mesh {{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}, {NodeType::fluid, NodeType::wall, NodeType::fluid}, {{0, 1}, {1, 2}}};
}

} // namespace

TEST(Aggregate, ZeroCodesGiveZeroField)
{
    const SparseCodeTensor c {Dims {3, 10, 8}};
    const auto f = aggregate_node_scores(c, TopKSet {{0, 3, 5}, Criterion::variance, {}});
    EXPECT_TRUE(std::all_of(f.values.begin(), f.values.end(), [](double x) { return x == 0.0; }));
}

TEST(Aggregate, SingletonIsActivationSlice)
{
    const auto c = random_codes(3, 10, 8, 1);
    const auto f = aggregate_node_scores(c, TopKSet {{4}, Criterion::variance, {}});
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t n = 0; n < 10; ++n) {
            EXPECT_EQ(f.at(t, n), static_cast<double>(c.at(t, n, 4)));
        }
    }
}

TEST(Aggregate, SumOverSetAndSupersetMonotone)
{
    const auto c = random_codes(4, 20, 12, 2);
    const TopKSet small {{1, 5}, Criterion::variance, {}};
    const TopKSet big {{1, 5, 9}, Criterion::variance, {}};
    const auto fs = aggregate_node_scores(c, small);
    const auto fb = aggregate_node_scores(c, big);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t n = 0; n < 20; ++n) {
            EXPECT_DOUBLE_EQ(fs.at(t, n), static_cast<double>(c.at(t, n, 1)) + static_cast<double>(c.at(t, n, 5)));
            EXPECT_GE(fb.at(t, n), fs.at(t, n));
            EXPECT_GE(fs.at(t, n), 0.0);
        }
    }
}

TEST(Aggregate, PerSnapshotSets)
{
    const auto c = random_codes(2, 5, 4, 3);
    const std::vector<TopKSet> sets {{{0}, Criterion::variance, 0}, {{3}, Criterion::variance, 1}};
    const auto f = aggregate_node_scores(c, sets);
    for (std::size_t n = 0; n < 5; ++n) {
        EXPECT_EQ(f.at(0, n), static_cast<double>(c.at(0, n, 0)));
        EXPECT_EQ(f.at(1, n), static_cast<double>(c.at(1, n, 3)));
    }
    EXPECT_THROW(aggregate_node_scores(c, std::vector<TopKSet>(3)), ShapeError);
}

TEST(Aggregate, InvalidDimension)
{
    const auto c = random_codes(2, 5, 4, 4);
    EXPECT_THROW(aggregate_node_scores(c, TopKSet {{4}, Criterion::variance, {}}), ConfigError);
}

TEST(TopEta, Examples)
{
    NodeScoreField f {1, 6, {0, 0, 0, 2.5, 0, 0}};
    EXPECT_EQ(top_eta_nodes(f, 1).per_t[0], (std::vector<std::uint32_t> {3}));
    EXPECT_EQ(top_eta_nodes(f, 3).per_t[0], (std::vector<std::uint32_t> {0, 1, 3}));
    EXPECT_EQ(top_eta_nodes(f, 6).per_t[0], (std::vector<std::uint32_t> {0, 1, 2, 3, 4, 5}));
    EXPECT_THROW(top_eta_nodes(f, 0), ConfigError);
    EXPECT_THROW(top_eta_nodes(f, 7), ConfigError);
}

TEST(TopEta, FigureBudgetsAccepted)
{
    const auto c = random_codes(2, 400, 6, 5);
    const auto f = aggregate_node_scores(c, TopKSet {{0, 1, 2}, Criterion::variance, {}});
    for (const std::size_t eta : {20UL, 85UL, 300UL}) {
        const auto sel = top_eta_nodes(f, eta);
        for (const auto& s : sel.per_t) {
            EXPECT_EQ(s.size(), eta);
            EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
            EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
        }
    }
}

TEST(TopEta, NestedInEta)
{
    const auto c = random_codes(5, 80, 6, 6);
    const auto f = aggregate_node_scores(c, TopKSet {{2, 3}, Criterion::variance, {}});
    for (std::size_t e1 = 1; e1 <= 80; e1 += 9) {
        for (std::size_t e2 = e1; e2 <= 80; e2 += 13) {
            const auto a = top_eta_nodes(f, e1);
            const auto b = top_eta_nodes(f, e2);
            for (std::size_t t = 0; t < 5; ++t) {
                EXPECT_TRUE(std::includes(b.per_t[t].begin(), b.per_t[t].end(), a.per_t[t].begin(), a.per_t[t].end()));
            }
        }
    }
}

TEST(Footprint, EqualsSingletonAggregate)
{
    const auto c = random_codes(3, 150, 10, 7);
    const auto fp = dimension_footprint(c, 6, 100);
    EXPECT_EQ(fp, top_eta_nodes(aggregate_node_scores(c, TopKSet {{6}, Criterion::variance, {}}), 100));
    EXPECT_EQ(fp.per_t[0].size(), 100U);
}

TEST(Footprint, DisjointSupportGivesDisjointFootprints)
{
    SparseCodeTensor c {Dims {2, 40, 2}};
    Rng rng {8};
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t n = 0; n < 40; ++n) {
            c.at(t, n, n < 20 ? 0 : 1) = static_cast<float>(rng.uniform(0.1, 1.0));
        }
    }
    const auto a = dimension_footprint(c, 0, 15);
    const auto b = dimension_footprint(c, 1, 15);
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<std::uint32_t> common;
        std::set_intersection(a.per_t[t].begin(), a.per_t[t].end(), b.per_t[t].begin(), b.per_t[t].end(),
                              std::back_inserter(common));
        EXPECT_TRUE(common.empty());
    }
}

TEST(Footprint, WakeBandDimensionStaysInBand)
{
    WakeConfig wc;
    wc.frames = 8;
    const Mesh mesh = generate_mesh(wc);
    const FlowSequence flow = generate_flow(wc, mesh);
    const auto oracle = synthesize_oracle_embeddings(OracleConfig {}, wc, mesh, flow);
    // Atom 3 is the wake band indicator, zero upstream of the cylinder.
    const Tensor& truth = oracle.truth.codes;
    const auto codes = SparseCodeTensor::from(truth);
    for (std::size_t t = 0; t < wc.frames; ++t) {
        std::size_t support = 0;
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            support += codes.at(t, n, 3) > 0.0F ? 1 : 0;
        }
        ASSERT_GT(support, 10U);
        const auto fp = dimension_footprint(codes, 3, std::min<std::size_t>(support, 100));
        for (const std::uint32_t n : fp.per_t[t]) {
            EXPECT_GT(mesh.positions()[n].x, wc.cylinder_x + wc.cylinder_radius);
        }
    }
}

TEST(Periodicity, GlobalSelectionOnPeriodicCodes)
{
    const std::size_t period = 5;
    const auto base = random_codes(period, 30, 8, 9);
    SparseCodeTensor c {Dims {3 * period, 30, 8}};
    for (std::size_t t = 0; t < 3 * period; ++t) {
        for (std::size_t n = 0; n < 30; ++n) {
            for (std::size_t k = 0; k < 8; ++k) {
                c.at(t, n, k) = base.at(t % period, n, k);
            }
        }
    }
    const auto sel = top_eta_nodes(aggregate_node_scores(c, TopKSet {{1, 2, 6}, Criterion::variance, {}}), 7);
    for (std::size_t t = 0; t + period < 3 * period; ++t) {
        EXPECT_EQ(sel.per_t[t], sel.per_t[t + period]);
    }
}

TEST(Export, CsvRowCount)
{
    const Mesh mesh = small_mesh();
    const NodeSelection sel {3, {{1}, {}, {0, 2}}};
    const std::string csv = selection_csv(mesh, sel);
    EXPECT_EQ(count_of(csv, "\n"), 1U + 3U * 3U);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,node,x,y,selected");
    EXPECT_NE(csv.find("0,1,1,0,1\n"), std::string::npos);
    EXPECT_NE(csv.find("2,2,0,1,1\n"), std::string::npos);
    EXPECT_NE(csv.find("1,0,0,0,0\n"), std::string::npos);
}

TEST(Export, SvgEmptySelectionAndDeterminism)
{
    const Mesh mesh = small_mesh();
    const NodeSelection sel {3, {{}, {0, 2}}};
    const Circle cyl {{0.5, 0.5}, 0.1};
    const std::string svg = selection_svg(mesh, sel, {0, 1}, cyl);
    EXPECT_EQ(svg.rfind("<svg", 0), 0U);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_EQ(count_of(svg, "#d62728"), 2U);
    EXPECT_EQ(count_of(svg, "#b0b0b0"), 3U + 1U);
    EXPECT_EQ(count_of(svg, "stroke=\"black\""), 2U);
    EXPECT_EQ(svg, selection_svg(mesh, sel, {0, 1}, cyl));

    const std::string empty = selection_svg(mesh, sel, {0}, cyl);
    EXPECT_EQ(count_of(empty, "#d62728"), 0U);
    EXPECT_THROW(selection_svg(mesh, sel, {2}, cyl), ShapeError);
    EXPECT_THROW(selection_csv(mesh, NodeSelection {4, {}}), ShapeError);
}
