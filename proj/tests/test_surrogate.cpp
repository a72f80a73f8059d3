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

#include "saeflow/surrogate.hpp"
#include "saeflow/synthgen.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

using namespace saeflow;

namespace {

// Random points with 3-nearest-neighbor edges and a mix of node types.
auto random_graph(std::size_t n, std::uint64_t seed) -> Mesh
{
    Rng rng {seed};
    std::vector<Point> pts;
    std::vector<NodeType> types;
    for (std::size_t i = 0; i < n; ++i) {
        pts.push_back({rng.uniform(), rng.uniform()});
        types.push_back(static_cast<NodeType>(rng.below(node_type_count)));
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (const std::uint32_t j : detail::nearest_neighbors(pts, i, 3)) {
            const auto a = static_cast<std::uint32_t>(i);
            edges.push_back({std::min(a, j), std::max(a, j)});
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return Mesh {std::move(pts), std::move(types), std::move(edges)};
}

auto random_flow(std::size_t frames, std::size_t nodes, std::uint64_t seed) -> FlowSequence
{
    Rng rng {seed};
    Tensor state {Dims {frames, nodes, 3}};
    for (float& v : state.values()) {
        v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return FlowSequence {std::move(state), 0.1};
}

auto constant_flow(std::size_t frames, std::size_t nodes, std::uint64_t seed) -> FlowSequence
{
    const FlowSequence first = random_flow(1 + 1, nodes, seed);
    Tensor state {Dims {frames, nodes, 3}};
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t n = 0; n < nodes; ++n) {
            for (std::size_t c = 0; c < 3; ++c) {
                state.at(t, n, c) = first.state().at(0, n, c);
            }
        }
    }
    return FlowSequence {std::move(state), 0.1};
}

auto small_config() -> SurrogateConfig
{
    SurrogateConfig c;
    c.message_passing_steps = 2;
    c.latent = 8;
    return c;
}

} // namespace

TEST(SurrogateFeatures, ZeroVelocityFluidNode)
{
    const Mesh mesh {{{0.0, 0.0}, {3.0, 4.0}}, {NodeType::fluid, NodeType::wall}, {{0, 1}}};
    const FlowSequence flow {Tensor {Dims {2, 2, 3}}, 0.1};
    const GraphFeatures f = build_features(mesh, flow, 0);
    ASSERT_EQ(f.nodes.cols(), 6U);
    EXPECT_EQ(f.nodes, (Matrix {2, 6, {0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0}}));
}

TEST(SurrogateFeatures, EdgesInBothDirections)
{
    const Mesh mesh {{{0.0, 0.0}, {3.0, 4.0}}, {NodeType::fluid, NodeType::fluid}, {{0, 1}}};
    const FlowSequence flow {Tensor {Dims {2, 2, 3}}, 0.1};
    const GraphFeatures f = build_features(mesh, flow, 0);
    EXPECT_EQ(f.edges, (Matrix {2, 3, {3, 4, 5, -3, -4, 5}}));
    EXPECT_EQ(*f.owner, (std::vector<std::uint32_t> {0, 1}));
    EXPECT_EQ(*f.other, (std::vector<std::uint32_t> {1, 0}));
}

TEST(SurrogateFeatures, VelocityIsCopiedAndSizesAreChecked)
{
    const Mesh mesh = random_graph(10, 1);
    const FlowSequence flow = random_flow(3, 10, 2);
    const GraphFeatures f = build_features(mesh, flow, 2);
    for (std::size_t n = 0; n < 10; ++n) {
        EXPECT_EQ(f.nodes(n, 0), flow.u(2, n));
        EXPECT_EQ(f.nodes(n, 1), flow.v(2, n));
    }
    EXPECT_THROW(build_features(mesh, random_flow(3, 11, 2), 0), ShapeError);
    EXPECT_THROW(build_features(mesh, flow, 3), ShapeError);
}

TEST(SurrogateForward, IsolatedNodeIsFine)
{
    const Mesh mesh {{{0.0, 0.0}, {1.0, 0.0}, {5.0, 5.0}}, {NodeType::fluid, NodeType::fluid, NodeType::wall},
                     {{0, 1}}};
    const auto params = init_surrogate(2, 8, 4);
    const auto out = surrogate_forward(params, build_features(mesh, random_flow(2, 3, 5), 0));
    EXPECT_EQ(out.embeddings.rows(), 3U);
    EXPECT_EQ(out.embeddings.cols(), 8U);
    for (const double v : out.embeddings.values()) {
        EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(SurrogateForward, RejectsWrongFeatureWidth)
{
    const Mesh mesh = random_graph(6, 3);
    GraphFeatures f = build_features(mesh, random_flow(2, 6, 1), 0);
    f.nodes = Matrix {6, 5};
    EXPECT_THROW(surrogate_forward(init_surrogate(1, 4, 1), f), ShapeError);
}

TEST(SurrogateForward, PermutationEquivariance)
{
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const std::size_t n = 20;
        const Mesh mesh = random_graph(n, seed);
        const FlowSequence flow = random_flow(2, n, seed + 100);
        std::vector<std::uint32_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0U);
        Rng rng {seed};
        rng.shuffle(perm.begin(), perm.end());
        // Node perm[i] of the new mesh is node i of the old one.
        std::vector<Point> pts(n);
        std::vector<NodeType> types(n);
        Tensor state {Dims {2, n, 3}};
        for (std::size_t i = 0; i < n; ++i) {
            pts[perm[i]] = mesh.positions()[i];
            types[perm[i]] = mesh.node_types()[i];
            for (std::size_t t = 0; t < 2; ++t) {
                for (std::size_t c = 0; c < 3; ++c) {
                    state.at(t, perm[i], c) = flow.state().at(t, i, c);
                }
            }
        }
        std::vector<Edge> edges;
        for (const Edge& e : mesh.edges()) {
            edges.push_back({perm[e.second], perm[e.first]});
        }
        std::reverse(edges.begin(), edges.end());
        const Mesh permuted {std::move(pts), std::move(types), std::move(edges)};
        const FlowSequence permuted_flow {std::move(state), 0.1};

        const auto params = init_surrogate(3, 8, seed);
        const auto a = surrogate_forward(params, build_features(mesh, flow, 0));
        const auto b = surrogate_forward(params, build_features(permuted, permuted_flow, 0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 8; ++c) {
                ASSERT_EQ(a.embeddings(i, c), b.embeddings(perm[i], c)) << "seed " << seed << " node " << i;
            }
            for (std::size_t c = 0; c < 2; ++c) {
                ASSERT_EQ(a.increment(i, c), b.increment(perm[i], c));
            }
        }
    }
}

TEST(SurrogateForward, RepeatedCallsAreBitwiseEqual)
{
    const Mesh mesh = random_graph(15, 7);
    const auto f = build_features(mesh, random_flow(2, 15, 8), 0);
    const auto params = init_surrogate(3, 8, 9);
    const auto a = surrogate_forward(params, f);
    const auto b = surrogate_forward(params, f);
    EXPECT_EQ(a.embeddings, b.embeddings);
    EXPECT_EQ(a.increment, b.increment);
}

// Desk architecture on a small graph, fourth-order stencil: stacked layer
// norms make the loss curved enough that the two-point stencil's truncation
// error sits near the tolerance.
TEST(SurrogateGradients, MatchFiniteDifferences)
{
    const Mesh mesh = random_graph(20, 21);
    const FlowSequence flow = random_flow(2, 20, 22);
    const auto features = build_features(mesh, flow, 0);
    SurrogateGraph graph {init_surrogate(3, 16, 23), features};
    Rng rng {24};
    Matrix target {20, 2};
    for (double& v : target.values()) {
        v = rng.uniform(-1.0, 1.0);
    }
    graph.set_inputs(features.nodes, target);
    const auto report = grad::finite_difference_check(graph.tape(), graph.loss(), 1e-4, 1e-4, graph.param_ids(), 4);
    EXPECT_TRUE(report.passed) << report.max_rel_err << " at " << report.worst_leaf << "[" << report.worst_index
                               << "], checked " << report.checked << " skipped " << report.skipped;
    EXPECT_GT(report.checked, 7000U);
}

TEST(SurrogateTraining, ConstantFlowIsLearnedExactly)
{
    const Mesh mesh = random_graph(12, 31);
    SurrogateConfig c = small_config();
    c.epochs = 4000;
    const auto result = train_surrogate(c, mesh, constant_flow(3, 12, 32));
    ASSERT_EQ(result.loss_history.size(), c.epochs);
    EXPECT_LT(result.loss_history.back(), 1e-6);
}

TEST(SurrogateTraining, ZeroLearningRateKeepsLossConstant)
{
    const Mesh mesh = random_graph(12, 33);
    SurrogateConfig c = small_config();
    c.epochs = 4;
    c.learning_rate = 0.0;
    const auto result = train_surrogate(c, mesh, random_flow(5, 12, 34));
    for (const double l : result.loss_history) {
        EXPECT_EQ(l, result.loss_history.front());
    }
    EXPECT_EQ(result.params.tensors, init_surrogate(c.message_passing_steps, c.latent, c.seed).tensors);
}

TEST(SurrogateTraining, SameSeedSameHistory)
{
    const Mesh mesh = random_graph(12, 35);
    SurrogateConfig c = small_config();
    c.epochs = 3;
    c.noise_std = 0.01;
    const FlowSequence flow = random_flow(6, 12, 36);
    const auto a = train_surrogate(c, mesh, flow);
    const auto b = train_surrogate(c, mesh, flow);
    EXPECT_EQ(a.loss_history, b.loss_history);
    EXPECT_EQ(a.params, b.params);
}

TEST(SurrogateTraining, RejectsInvalidConfig)
{
    const Mesh mesh = random_graph(5, 1);
    SurrogateConfig c = small_config();
    c.epochs = 0;
    EXPECT_THROW(train_surrogate(c, mesh, random_flow(3, 5, 1)), ConfigError);
    EXPECT_FALSE(check(SurrogateConfig::full_scale_preset()).size() > 0);
    EXPECT_EQ(SurrogateConfig::full_scale_preset().message_passing_steps, 9U);
    EXPECT_EQ(SurrogateConfig::full_scale_preset().latent, 128U);
}

TEST(SurrogateTraining, NonFiniteLossIsReported)
{
    const Mesh mesh = random_graph(6, 2);
    SurrogateConfig c = small_config();
    c.learning_rate = 1e300;
    c.epochs = 3;
    try {
        train_surrogate(c, mesh, random_flow(4, 6, 3));
        FAIL() << "expected a numerical error";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string {e.what()}.find("epoch"), std::string::npos);
        EXPECT_NE(std::string {e.what()}.find("lr"), std::string::npos);
    }
}

TEST(SurrogateTraining, DeskWakeLossHalves)
{
    const WakeConfig w;
    const Mesh mesh = generate_mesh(w);
    const FlowSequence flow = generate_flow(w, mesh);
    const auto result = train_surrogate(SurrogateConfig {}, mesh, flow);
    ASSERT_EQ(result.loss_history.size(), SurrogateConfig {}.epochs);
    for (const double l : result.loss_history) {
        EXPECT_TRUE(std::isfinite(l));
    }
    EXPECT_NO_THROW(validate(extract_embeddings(result.params, mesh, flow)));
    EXPECT_LE(result.loss_history.back(), 0.5 * result.loss_history.front());
}

TEST(SurrogateExtraction, ShapeDeterminismAndFiniteness)
{
    const Mesh mesh = random_graph(10, 41);
    const FlowSequence flow = random_flow(4, 10, 42);
    const auto params = init_surrogate(2, 8, 43);
    const auto before = params;
    const EmbeddingTensor a = extract_embeddings(params, mesh, flow);
    const EmbeddingTensor b = extract_embeddings(params, mesh, flow);
    EXPECT_EQ(a.dims(), (Dims {4, 10, 8}));
    EXPECT_EQ(a, b);
    EXPECT_EQ(params, before);
    EXPECT_NO_THROW(validate(a));
    const auto f = build_features(mesh, flow, 3);
    const auto direct = surrogate_forward(params, f);
    for (std::size_t n = 0; n < 10; ++n) {
        for (std::size_t c = 0; c < 8; ++c) {
            EXPECT_EQ(a.at(3, n, c), static_cast<float>(direct.embeddings(n, c)));
        }
    }
}

TEST(SurrogateCheckpoint, RoundTripRoundsToFloat)
{
    const auto dir = std::filesystem::temp_directory_path() / "saeflow_test_surrogate_ckpt";
    std::filesystem::remove_all(dir);
    auto params = init_surrogate(2, 8, 51);
    params.target_scale = Matrix {1, 2, {0.25, 0.5}};
    save_surrogate(params, dir);
    const auto loaded = load_surrogate(dir);
    EXPECT_EQ(loaded.names, params.names);
    EXPECT_EQ(loaded.target_scale, params.target_scale);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        for (std::size_t i = 0; i < params.tensors[k].size(); ++i) {
            ASSERT_EQ(loaded.tensors[k][i], static_cast<double>(static_cast<float>(params.tensors[k][i])));
        }
    }
    save_surrogate(loaded, dir);
    EXPECT_EQ(load_surrogate(dir), loaded);
    std::filesystem::remove_all(dir);
}

TEST(SurrogateCheckpoint, MissingOrMismatchedFilesAreErrors)
{
    const auto dir = std::filesystem::temp_directory_path() / "saeflow_test_surrogate_bad";
    std::filesystem::remove_all(dir);
    EXPECT_THROW(load_surrogate(dir), IoError);
    save_surrogate(init_surrogate(1, 4, 1), dir);
    save_tensor(Tensor {Dims {1, 3, 3}}, dir / "decoder.w1.nten");
    EXPECT_THROW(load_surrogate(dir), FormatError);
    std::filesystem::remove_all(dir);
}
