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

#include "saeflow/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace saeflow;

namespace {

auto small_wake() -> WakeConfig
{
    WakeConfig c;
    c.width = 0.8;
    c.spacing = 0.04;
    c.frames = 40;
    return c;
}

auto degree(const Mesh& mesh, std::size_t n) -> std::size_t { return mesh.adjacency()[n].size(); }

} // namespace

TEST(WakeConfig, DefaultsAreValid) { EXPECT_TRUE(check(WakeConfig {}).empty()); }

TEST(WakeConfig, ReportsEveryViolation)
{
    WakeConfig c;
    c.cylinder_radius = 0.2;
    c.dt = 0.0;
    c.shed_period = -1.0;
    const auto errors = check(c);
    auto has = [&](const std::string& s) {
        return std::any_of(errors.begin(), errors.end(), [&](const std::string& e) { return e.starts_with(s); });
    };
    EXPECT_TRUE(has("wake.cylinder_radius must be < min(width, height) / 4"));
    EXPECT_TRUE(has("wake.dt must be > 0"));
    EXPECT_TRUE(has("wake.shed_period must be > 0"));
}

TEST(WakeConfig, SpacingLargerThanDomainIsRejected)
{
    WakeConfig c;
    c.spacing = 1.0;
    EXPECT_THROW(generate_mesh(c), ConfigError);
}

TEST(GenerateMesh, UnjitteredInteriorNodesHaveSixNeighbors)
{
    WakeConfig c;
    c.jitter = 0.0;
    const Mesh mesh = generate_mesh(c);
    std::size_t interior = 0;
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        const Point p = mesh.positions()[n];
        const double margin = 3.0 * c.spacing;
        const bool far_from_walls = p.x > margin && p.x < c.width - margin && p.y > margin && p.y < c.height - margin;
        const bool far_from_cylinder = std::hypot(p.x - c.cylinder_x, p.y - c.cylinder_y) > c.cylinder_radius + margin;
        if (far_from_walls && far_from_cylinder) {
            EXPECT_EQ(degree(mesh, n), 6U) << "node " << n << " at (" << p.x << ", " << p.y << ")";
            ++interior;
        }
    }
    EXPECT_GT(interior, 100U);
}

TEST(GenerateMesh, NoNodeInsideTheCylinder)
{
    const WakeConfig c;
    const Mesh mesh = generate_mesh(c);
    for (const Point p : mesh.positions()) {
        EXPECT_GE(std::hypot(p.x - c.cylinder_x, p.y - c.cylinder_y), c.cylinder_radius);
    }
}

TEST(GenerateMesh, NodeTypesFollowGeometry)
{
    const WakeConfig c;
    const Mesh mesh = generate_mesh(c);
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        const Point p = mesh.positions()[n];
        const double gap = std::hypot(p.x - c.cylinder_x, p.y - c.cylinder_y) - c.cylinder_radius;
        const NodeType type = mesh.node_types()[n];
        if (gap <= 1.5 * c.spacing) {
            EXPECT_EQ(type, NodeType::wall);
        } else if (p.x == 0.0) {
            EXPECT_EQ(type, NodeType::inflow);
        } else if (p.x == c.width) {
            EXPECT_EQ(type, NodeType::outflow);
        } else if (p.y == 0.0 || p.y == c.height) {
            EXPECT_EQ(type, NodeType::wall);
        } else {
            EXPECT_EQ(type, NodeType::fluid);
        }
    }
    for (const NodeType t : {NodeType::fluid, NodeType::wall, NodeType::inflow, NodeType::outflow}) {
        EXPECT_GT(mesh.count(t), 0U);
    }
}

TEST(GenerateMesh, DeskScaleSizeAndDeterminism)
{
    const WakeConfig c;
    const Mesh a = generate_mesh(c);
    const Mesh b = generate_mesh(c);
    EXPECT_EQ(a, b);
    EXPECT_GT(a.size(), 450U);
    EXPECT_LT(a.size(), 750U);
    WakeConfig other = c;
    other.seed = 99;
    EXPECT_NE(generate_mesh(other).positions(), a.positions());
}

TEST(GenerateMesh, EveryNodeHasAtLeastSixNeighbors)
{
    const Mesh mesh = generate_mesh(WakeConfig {});
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        EXPECT_GE(degree(mesh, n), 6U);
    }
}

TEST(Oseen, FarFieldMatchesPointVortex)
{
    const double gamma = 0.3;
    const double rc = 0.04;
    const double r = 3.0 * rc;
    const double point_vortex = gamma / (2.0 * std::numbers::pi * r);
    EXPECT_NEAR(oseen_tangential_speed(gamma, rc, r), point_vortex, 0.05 * point_vortex);
}

TEST(Oseen, SingleVortexVelocityIsTangential)
{
    WakeConfig c;
    c.u_max = 0.0;
    const std::vector<Vortex> vortices {{{0.5, 0.2}, 0.3}};
    const double r = 3.0 * c.core_radius;
    const auto [u, v] = wake_velocity(c, vortices, {0.5 + r, 0.2});
    EXPECT_NEAR(u, 0.0, 1e-15);
    const double expected = 0.3 / (2.0 * std::numbers::pi * r) * (1.0 - std::exp(-9.0));
    EXPECT_NEAR(v, expected, 1e-12);
}

TEST(Oseen, VorticityIntegratesToCirculation)
{
    // Radial integral of 2*pi*r*omega(r) dr, midpoint rule.
    const double gamma = 0.3;
    const double rc = 0.04;
    double total = 0.0;
    const double dr = rc / 2000.0;
    for (double r = dr / 2.0; r < 10.0 * rc; r += dr) {
        total += 2.0 * std::numbers::pi * r * oseen_vorticity(gamma, rc, r) * dr;
    }
    EXPECT_NEAR(total, gamma, 1e-6);
}

TEST(GenerateFlow, ZeroCirculationGivesParabolicProfile)
{
    WakeConfig c = small_wake();
    c.circulation = 0.0;
    const Mesh mesh = generate_mesh(c);
    const FlowSequence flow = generate_flow(c, mesh);
    for (std::size_t t = 0; t < flow.frames(); t += 7) {
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            EXPECT_EQ(flow.v(t, n), 0.0F);
            if (mesh.node_types()[n] != NodeType::wall) {
                const double y = mesh.positions()[n].y;
                const double expected = c.u_max * 4.0 * y * (c.height - y) / (c.height * c.height);
                EXPECT_NEAR(flow.u(t, n), expected, 1e-6);
            }
        }
    }
}

TEST(GenerateFlow, WallNodesAreAtRest)
{
    const WakeConfig c;
    const Mesh mesh = generate_mesh(c);
    const FlowSequence flow = generate_flow(c, mesh);
    for (std::size_t t = 0; t < flow.frames(); ++t) {
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            if (mesh.node_types()[n] == NodeType::wall) {
                ASSERT_EQ(flow.u(t, n), 0.0F);
                ASSERT_EQ(flow.v(t, n), 0.0F);
            }
        }
    }
}

TEST(GenerateFlow, RepeatsAfterOneSheddingPeriod)
{
    const WakeConfig c;
    const Mesh mesh = generate_mesh(c);
    const FlowSequence flow = generate_flow(c, mesh);
    const auto period = static_cast<std::size_t>(std::lround(c.shed_period / c.dt));
    ASSERT_LT(period, flow.frames());
    for (std::size_t t = 0; t + period < flow.frames(); t += 5) {
        double diff = 0.0;
        double norm = 0.0;
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            if (mesh.positions()[n].x <= c.cylinder_x + c.cylinder_radius) {
                continue;
            }
            for (std::size_t ch = 0; ch < 2; ++ch) {
                const double a = flow.state().at(t, n, ch);
                const double b = flow.state().at(t + period, n, ch);
                diff += (a - b) * (a - b);
                norm += a * a;
            }
        }
        EXPECT_LE(std::sqrt(diff), 0.05 * std::sqrt(norm)) << "t=" << t;
    }
}

TEST(GenerateFlow, VorticesAlternateSign)
{
    const WakeConfig c;
    const auto vortices = vortices_at(c, 10);
    ASSERT_GE(vortices.size(), 3U);
    for (std::size_t k = 1; k < vortices.size(); ++k) {
        EXPECT_LT(vortices[k].circulation * vortices[k - 1].circulation, 0.0);
        EXPECT_GT(vortices[k].center.x, vortices[k - 1].center.x);
    }
}

TEST(GenerateFlow, Deterministic)
{
    const WakeConfig c = small_wake();
    const Mesh mesh = generate_mesh(c);
    EXPECT_EQ(generate_flow(c, mesh).state(), generate_flow(c, mesh).state());
}

class OracleTest : public ::testing::Test
{
protected:
    static void SetUpTestSuite()
    {
        wake_ = new WakeConfig {small_wake()};
        mesh_ = new Mesh {generate_mesh(*wake_)};
        flow_ = new FlowSequence {generate_flow(*wake_, *mesh_)};
    }
    static void TearDownTestSuite()
    {
        delete flow_;
        delete mesh_;
        delete wake_;
    }
    static WakeConfig* wake_;
    static Mesh* mesh_;
    static FlowSequence* flow_;
};

WakeConfig* OracleTest::wake_ = nullptr;
Mesh* OracleTest::mesh_ = nullptr;
FlowSequence* OracleTest::flow_ = nullptr;

TEST_F(OracleTest, AtomsAreUnitAndIncoherent)
{
    const auto out = synthesize_oracle_embeddings(OracleConfig {}, *wake_, *mesh_, *flow_);
    const Matrix& atoms = out.truth.atoms;
    for (std::size_t k = 0; k < atoms.rows(); ++k) {
        double norm = 0.0;
        for (const double v : atoms.row(k)) {
            norm += v * v;
        }
        EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
        for (std::size_t q = 0; q < k; ++q) {
            double dot = 0.0;
            for (std::size_t j = 0; j < atoms.cols(); ++j) {
                dot += atoms(k, j) * atoms(q, j);
            }
            EXPECT_LE(std::abs(dot), 0.5);
        }
    }
}

TEST_F(OracleTest, NoiselessEmbeddingsAreExactMixtures)
{
    OracleConfig oc;
    oc.noise_std = 0.0;
    const auto out = synthesize_oracle_embeddings(oc, *wake_, *mesh_, *flow_);
    std::size_t zero_rows = 0;
    const Dims dims = out.embeddings.dims();
    for (std::size_t t = 0; t < dims.t; ++t) {
        for (std::size_t n = 0; n < dims.n; ++n) {
            const auto code = out.truth.codes.row(t, n);
            const bool silent = std::all_of(code.begin(), code.end(), [](float v) { return v == 0.0F; });
            for (std::size_t j = 0; j < dims.d; ++j) {
                double expected = 0.0;
                for (std::size_t k = 0; k < oc.n_atoms; ++k) {
                    expected += static_cast<double>(code[k]) * out.truth.atoms(k, j);
                }
                ASSERT_NEAR(out.embeddings.at(t, n, j), expected, 1e-6);
                if (silent) {
                    ASSERT_EQ(out.embeddings.at(t, n, j), 0.0F);
                }
            }
            zero_rows += silent ? 1 : 0;
        }
    }
    EXPECT_GT(zero_rows, 0U);
}

TEST_F(OracleTest, ResidualRmsMatchesNoiseLevel)
{
    OracleConfig oc;
    oc.noise_std = 0.05;
    const auto out = synthesize_oracle_embeddings(oc, *wake_, *mesh_, *flow_);
    double sum = 0.0;
    const Dims dims = out.embeddings.dims();
    for (std::size_t t = 0; t < dims.t; ++t) {
        for (std::size_t n = 0; n < dims.n; ++n) {
            const auto code = out.truth.codes.row(t, n);
            for (std::size_t j = 0; j < dims.d; ++j) {
                double clean = 0.0;
                for (std::size_t k = 0; k < oc.n_atoms; ++k) {
                    clean += static_cast<double>(code[k]) * out.truth.atoms(k, j);
                }
                const double r = out.embeddings.at(t, n, j) - clean;
                sum += r * r;
            }
        }
    }
    const double rms = std::sqrt(sum / static_cast<double>(dims.size()));
    EXPECT_NEAR(rms, oc.noise_std, 0.05 * oc.noise_std);
}

TEST_F(OracleTest, CodesAreNonnegativeWithConfiguredSparsity)
{
    for (const double sparsity : {1.0, 2.0, 3.0}) {
        OracleConfig oc;
        oc.sparsity = sparsity;
        const auto out = synthesize_oracle_embeddings(oc, *wake_, *mesh_, *flow_);
        std::size_t active = 0;
        for (const float v : out.truth.codes.values()) {
            ASSERT_GE(v, 0.0F);
            active += v > 0.0F ? 1 : 0;
        }
        const double rows = static_cast<double>(out.truth.codes.dims().t * out.truth.codes.dims().n);
        const double mean_active = static_cast<double>(active) / rows;
        EXPECT_NEAR(mean_active, sparsity, 0.2 * sparsity);
    }
}

TEST_F(OracleTest, ShapesAndDeterminism)
{
    const OracleConfig oc;
    const auto a = synthesize_oracle_embeddings(oc, *wake_, *mesh_, *flow_);
    const auto b = synthesize_oracle_embeddings(oc, *wake_, *mesh_, *flow_);
    EXPECT_EQ(a.embeddings.dims(), (Dims {flow_->frames(), mesh_->size(), oc.d_in}));
    EXPECT_EQ(a.truth.codes.dims(), (Dims {flow_->frames(), mesh_->size(), oc.n_atoms}));
    EXPECT_EQ(a.embeddings, b.embeddings);
    EXPECT_EQ(a.truth.atoms, b.truth.atoms);
}

TEST(Oracle, ImpossibleIncoherenceIsAConfigError)
{
    Rng rng {5};
    EXPECT_THROW(incoherent_atoms(12, 2, rng), ConfigError);
}
