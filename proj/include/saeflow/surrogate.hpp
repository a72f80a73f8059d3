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

#pragma once

// Encoder-process-decoder graph surrogate.
//
//   h0_i  = f_n(x_i)                  e0_ij = f_e(x_ij)
//   (velocities standardized, edge geometry divided by the mean edge length)
//   e_ij' = e_ij + LN(f_e^l([e_ij, h_i, h_j]))
//   h_i'  = h_i  + LN(f_n^l([h_i, sum_j e_ij]))     (previous-step edges)
//   dv_i  = g_n(h^L_i) * target_scale
//
// Every MLP has two hidden layers of the latent width with relu. The
// post-processor node states h^L are what the decoder consumes and what
// extract_embeddings returns.

#include "saeflow/error.hpp"
#include "saeflow/flow.hpp"
#include "saeflow/gradengine.hpp"
#include "saeflow/matrix.hpp"
#include "saeflow/mesh.hpp"
#include "saeflow/optim.hpp"
#include "saeflow/rng.hpp"
#include "saeflow/tensor.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace saeflow {

inline constexpr std::size_t node_feature_width = 2 + node_type_count;
inline constexpr std::size_t edge_feature_width = 3;
inline constexpr std::size_t surrogate_output_width = 2;

struct SurrogateConfig
{
    std::size_t message_passing_steps {3};
    std::size_t latent {16};
    double learning_rate {1e-3};
    // Learning rate is multiplied by this after every epoch.
    double lr_decay {1.0};
    std::size_t epochs {6};
    std::size_t batch {1};
    std::uint64_t seed {3};
    double noise_std {0.0};
    // Restrict the loss to fluid nodes instead of all nodes.
    bool fluid_only_loss {false};

    // Scale used by the original MeshGraphNet setup.
    static auto full_scale_preset() -> SurrogateConfig
    {
        SurrogateConfig c;
        c.message_passing_steps = 9;
        c.latent = 128;
        return c;
    }
};

inline auto check(const SurrogateConfig& c, const std::string& prefix = "surrogate.") -> std::vector<std::string>
{
    std::vector<std::string> errors;
    if (c.message_passing_steps < 1) {
        errors.push_back(prefix + "message_passing_steps must be >= 1");
    }
    if (c.latent < 2) {
        errors.push_back(prefix + "latent must be >= 2");
    }
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
        errors.push_back(prefix + "learning_rate must be >= 0");
    }
    if (!(c.lr_decay > 0.0) || c.lr_decay > 1.0) {
        errors.push_back(prefix + "lr_decay must be in (0, 1]");
    }
    if (c.epochs < 1) {
        errors.push_back(prefix + "epochs must be >= 1");
    }
    if (c.batch < 1) {
        errors.push_back(prefix + "batch must be >= 1");
    }
    if (!(c.noise_std >= 0.0)) {
        errors.push_back(prefix + "noise_std must be >= 0");
    }
    return errors;
}

/// Named weight matrices in a fixed order, plus the per-channel scale that
/// maps decoder outputs to velocity increments.
struct SurrogateParams
{
    std::size_t message_passing_steps {};
    std::size_t latent {};
    std::vector<std::string> names;
    std::vector<Matrix> tensors;
    Matrix target_scale {1, surrogate_output_width, 1.0};
    // Input normalization fitted on the training data.
    Matrix input_shift {1, 2, 0.0};
    Matrix input_scale {1, 2, 1.0};
    Matrix edge_scale {1, 1, 1.0};

    [[nodiscard]] auto get(std::string_view name) const -> const Matrix&
    {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) {
                return tensors[i];
            }
        }
        throw ConfigError {"surrogate has no parameter \"" + std::string {name} + "\""};
    }

    auto operator==(const SurrogateParams&) const -> bool = default;
};

/// Node and edge inputs for one snapshot. Each undirected mesh edge becomes
/// two directed edges i->j, carrying pos_j - pos_i and its length, owned by
/// node i.
struct GraphFeatures
{
    Matrix nodes;  // N x 6: u, v, one-hot node type
    Matrix edges;  // 2E x 3: dx, dy, |d|
    grad::IndexList owner;
    grad::IndexList other;
};

inline auto build_edge_features(const Mesh& mesh) -> GraphFeatures
{
    GraphFeatures f;
    auto owner = std::make_shared<std::vector<std::uint32_t>>();
    auto other = std::make_shared<std::vector<std::uint32_t>>();
    f.edges = Matrix {2 * mesh.edges().size(), edge_feature_width};
    std::size_t row = 0;
    for (const Edge& e : mesh.edges()) {
        for (const auto& [i, j] : {std::pair {e.first, e.second}, std::pair {e.second, e.first}}) {
            const Point pi = mesh.positions()[i];
            const Point pj = mesh.positions()[j];
            f.edges(row, 0) = pj.x - pi.x;
            f.edges(row, 1) = pj.y - pi.y;
            f.edges(row, 2) = std::hypot(pj.x - pi.x, pj.y - pi.y);
            owner->push_back(i);
            other->push_back(j);
            ++row;
        }
    }
    f.owner = std::move(owner);
    f.other = std::move(other);
    f.nodes = Matrix {mesh.size(), node_feature_width};
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        f.nodes(n, 2 + static_cast<std::size_t>(mesh.node_types()[n])) = 1.0;
    }
    return f;
}

inline void set_node_velocity(GraphFeatures& f, const FlowSequence& flow, std::size_t t)
{
    for (std::size_t n = 0; n < flow.nodes(); ++n) {
        f.nodes(n, 0) = flow.u(t, n);
        f.nodes(n, 1) = flow.v(t, n);
    }
}

/// Features for snapshot t of `flow` on `mesh`.
inline auto build_features(const Mesh& mesh, const FlowSequence& flow, std::size_t t) -> GraphFeatures
{
    if (flow.nodes() != mesh.size()) {
        throw ShapeError {"flow has " + std::to_string(flow.nodes()) + " nodes but mesh has "
                          + std::to_string(mesh.size())};
    }
    if (t >= flow.frames()) {
        throw ShapeError {"snapshot " + std::to_string(t) + " out of range (" + std::to_string(flow.frames())
                          + " frames)"};
    }
    GraphFeatures f = build_edge_features(mesh);
    set_node_velocity(f, flow, t);
    return f;
}

namespace detail {

struct MlpShape
{
    std::string prefix;
    std::size_t in;
    std::size_t hidden;
    std::size_t out;
};

inline auto surrogate_layout(std::size_t steps, std::size_t latent) -> std::vector<MlpShape>
{
    std::vector<MlpShape> mlps {{"node_encoder", node_feature_width, latent, latent},
                                {"edge_encoder", edge_feature_width, latent, latent}};
    for (std::size_t l = 0; l < steps; ++l) {
        mlps.push_back({"edge_processor" + std::to_string(l), 3 * latent, latent, latent});
        mlps.push_back({"node_processor" + std::to_string(l), 2 * latent, latent, latent});
    }
    mlps.push_back({"decoder", latent, latent, surrogate_output_width});
    return mlps;
}

inline auto mlp_param_shapes(const MlpShape& m) -> std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
{
    return {{m.prefix + ".w1", {m.in, m.hidden}},     {m.prefix + ".b1", {1, m.hidden}},
            {m.prefix + ".w2", {m.hidden, m.hidden}}, {m.prefix + ".b2", {1, m.hidden}},
            {m.prefix + ".w3", {m.hidden, m.out}},    {m.prefix + ".b3", {1, m.out}}};
}

} // namespace detail

/// He-initialized weights, zero biases.
inline auto init_surrogate(std::size_t steps, std::size_t latent, std::uint64_t seed) -> SurrogateParams
{
    SurrogateParams p;
    p.message_passing_steps = steps;
    p.latent = latent;
    Rng rng {derive_seed(seed, "surrogate-init")};
    for (const auto& mlp : detail::surrogate_layout(steps, latent)) {
        for (const auto& [name, shape] : detail::mlp_param_shapes(mlp)) {
            Matrix m {shape.first, shape.second};
            if (name[name.size() - 2] == 'w') {
                const double sd = std::sqrt(2.0 / static_cast<double>(shape.first));
                for (double& v : m.values()) {
                    v = rng.normal(0.0, sd);
                }
            }
            p.names.push_back(name);
            p.tensors.push_back(std::move(m));
        }
    }
    return p;
}

/// The surrogate as a replayable tape for one mesh topology.
class SurrogateGraph
{
public:
    SurrogateGraph(const SurrogateParams& params, const GraphFeatures& topology, bool fluid_only_loss = false,
                   const Mesh* mesh = nullptr)
        : steps_ {params.message_passing_steps}, latent_ {params.latent}, nodes_ {topology.nodes.rows()}
    {
        if (steps_ < 1 || latent_ < 2) {
            throw ConfigError {"surrogate needs at least 1 step and latent width >= 2"};
        }
        node_x_ = tape_.leaf("node_features");
        edge_x_ = tape_.leaf("edge_features");
        target_ = tape_.leaf("target");
        for (const auto& mlp : detail::surrogate_layout(steps_, latent_)) {
            for (const auto& [name, shape] : detail::mlp_param_shapes(mlp)) {
                param_ids_.push_back(tape_.leaf(name));
            }
        }
        std::size_t next = 0;
        auto mlp = [&](grad::ValueId x) {
            const grad::ValueId* p = &param_ids_[next];
            next += 6;
            auto h = tape_.relu(tape_.affine(x, p[0], p[1]));
            h = tape_.relu(tape_.affine(h, p[2], p[3]));
            return tape_.affine(h, p[4], p[5]);
        };
        auto h = mlp(node_x_);
        auto e = mlp(edge_x_);
        for (std::size_t l = 0; l < steps_; ++l) {
            const auto hi = tape_.gather_rows(h, topology.owner);
            const auto hj = tape_.gather_rows(h, topology.other);
            const auto e_next = tape_.residual_add(e, tape_.layernorm(mlp(tape_.concat({e, hi, hj}))));
            const auto agg = tape_.neighbor_sum(e, topology.owner, nodes_);
            h = tape_.residual_add(h, tape_.layernorm(mlp(tape_.concat({h, agg}))));
            e = e_next;
        }
        embeddings_ = h;
        prediction_ = mlp(h);
        if (fluid_only_loss && mesh != nullptr) {
            auto rows = std::make_shared<std::vector<std::uint32_t>>();
            for (std::size_t n = 0; n < mesh->size(); ++n) {
                if (mesh->node_types()[n] == NodeType::fluid) {
                    rows->push_back(static_cast<std::uint32_t>(n));
                }
            }
            loss_ = tape_.mse(tape_.gather_rows(prediction_, rows), tape_.gather_rows(target_, rows));
        } else {
            loss_ = tape_.mse(prediction_, target_);
        }
        load(params);
        set_edge_features(topology.edges);
    }

    void load(const SurrogateParams& params)
    {
        if (params.tensors.size() != param_ids_.size()) {
            throw ShapeError {"surrogate parameter count " + std::to_string(params.tensors.size()) + ", expected "
                              + std::to_string(param_ids_.size())};
        }
        for (std::size_t k = 0; k < param_ids_.size(); ++k) {
            if (params.names[k] != tape_.name(param_ids_[k])) {
                throw ConfigError {"surrogate parameter " + std::to_string(k) + " is \"" + params.names[k]
                                   + "\", expected \"" + tape_.name(param_ids_[k]) + "\""};
            }
            tape_.bind(param_ids_[k], params.tensors[k]);
        }
        input_shift_ = params.input_shift;
        input_scale_ = params.input_scale;
        edge_scale_ = params.edge_scale;
    }

    void set_inputs(const Matrix& node_features, const Matrix& target)
    {
        if (node_features.rows() != nodes_ || node_features.cols() != node_feature_width) {
            throw ShapeError {"node features " + shape_string(node_features) + ", expected "
                              + std::to_string(nodes_) + "x" + std::to_string(node_feature_width)};
        }
        Matrix x = node_features;
        for (std::size_t n = 0; n < nodes_; ++n) {
            for (std::size_t c = 0; c < 2; ++c) {
                x(n, c) = (x(n, c) - input_shift_(0, c)) / input_scale_(0, c);
            }
        }
        tape_.bind(node_x_, std::move(x));
        tape_.bind(target_, target);
    }

    void set_edge_features(const Matrix& edge_features)
    {
        Matrix x = edge_features;
        for (double& v : x.values()) {
            v /= edge_scale_(0, 0);
        }
        tape_.bind(edge_x_, std::move(x));
    }

    auto tape() -> grad::Tape& { return tape_; }
    [[nodiscard]] auto param_ids() const -> const std::vector<grad::ValueId>& { return param_ids_; }
    [[nodiscard]] auto embeddings() const -> grad::ValueId { return embeddings_; }
    [[nodiscard]] auto prediction() const -> grad::ValueId { return prediction_; }
    [[nodiscard]] auto loss() const -> grad::ValueId { return loss_; }
    [[nodiscard]] auto nodes() const -> std::size_t { return nodes_; }

    // Current parameter values read back from the tape.
    [[nodiscard]] auto params(const Matrix& target_scale) const -> SurrogateParams
    {
        SurrogateParams p;
        p.message_passing_steps = steps_;
        p.latent = latent_;
        p.target_scale = target_scale;
        p.input_shift = input_shift_;
        p.input_scale = input_scale_;
        p.edge_scale = edge_scale_;
        for (const grad::ValueId id : param_ids_) {
            p.names.push_back(tape_.name(id));
            p.tensors.push_back(tape_.value(id));
        }
        return p;
    }

private:
    grad::Tape tape_;
    std::size_t steps_;
    std::size_t latent_;
    std::size_t nodes_;
    Matrix input_shift_ {1, 2, 0.0};
    Matrix input_scale_ {1, 2, 1.0};
    Matrix edge_scale_ {1, 1, 1.0};
    grad::ValueId node_x_ {};
    grad::ValueId edge_x_ {};
    grad::ValueId target_ {};
    std::vector<grad::ValueId> param_ids_;
    grad::ValueId embeddings_ {};
    grad::ValueId prediction_ {};
    grad::ValueId loss_ {};
};

struct SurrogateOutput
{
    Matrix embeddings;  // N x latent
    Matrix increment;   // N x 2, velocity change to the next snapshot
};

inline auto surrogate_forward(const SurrogateParams& params, const GraphFeatures& features) -> SurrogateOutput
{
    if (features.nodes.cols() != node_feature_width || features.edges.cols() != edge_feature_width) {
        throw ShapeError {"feature widths " + std::to_string(features.nodes.cols()) + "/"
                          + std::to_string(features.edges.cols()) + ", expected 6/3"};
    }
    SurrogateGraph graph {params, features};
    graph.set_inputs(features.nodes, Matrix {features.nodes.rows(), surrogate_output_width});
    graph.tape().forward();
    SurrogateOutput out {graph.tape().value(graph.embeddings()), graph.tape().value(graph.prediction())};
    for (std::size_t n = 0; n < out.increment.rows(); ++n) {
        for (std::size_t c = 0; c < surrogate_output_width; ++c) {
            out.increment(n, c) *= params.target_scale(0, c);
        }
    }
    return out;
}

struct SurrogateTraining
{
    SurrogateParams params;
    std::vector<double> loss_history;
};

/// Per-channel RMS of velocity increments over all snapshot pairs; 1 where
/// the increments vanish.
inline auto increment_scale(const FlowSequence& flow) -> Matrix
{
    Matrix scale {1, surrogate_output_width};
    const double count = static_cast<double>((flow.frames() - 1) * flow.nodes());
    for (std::size_t c = 0; c < surrogate_output_width; ++c) {
        double sum = 0.0;
        for (std::size_t t = 0; t + 1 < flow.frames(); ++t) {
            for (std::size_t n = 0; n < flow.nodes(); ++n) {
                const double d = static_cast<double>(flow.state().at(t + 1, n, c)) - flow.state().at(t, n, c);
                sum += d * d;
            }
        }
        const double rms = std::sqrt(sum / count);
        scale(0, c) = rms > 1e-12 ? rms : 1.0;
    }
    return scale;
}

/// Fits the input normalization: per-channel mean and standard deviation
/// of u and v over the whole sequence, and the mean edge length.
inline void fit_input_normalization(SurrogateParams& params, const Mesh& mesh, const FlowSequence& flow)
{
    const double count = static_cast<double>(flow.frames() * flow.nodes());
    for (std::size_t c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (std::size_t t = 0; t < flow.frames(); ++t) {
            for (std::size_t n = 0; n < flow.nodes(); ++n) {
                sum += flow.state().at(t, n, c);
            }
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t t = 0; t < flow.frames(); ++t) {
            for (std::size_t n = 0; n < flow.nodes(); ++n) {
                const double d = flow.state().at(t, n, c) - mean;
                sq += d * d;
            }
        }
        const double sd = std::sqrt(sq / count);
        params.input_shift(0, c) = mean;
        params.input_scale(0, c) = sd > 1e-12 ? sd : 1.0;
    }
    double length = 0.0;
    for (const Edge& e : mesh.edges()) {
        const Point a = mesh.positions()[e.first];
        const Point b = mesh.positions()[e.second];
        length += std::hypot(b.x - a.x, b.y - a.y);
    }
    params.edge_scale(0, 0) = mesh.edges().empty() ? 1.0 : length / static_cast<double>(mesh.edges().size());
}

/// Trains on every (t, t+1) pair with Adam. The loss is the mean squared
/// increment error in units of `increment_scale`. loss_history holds the
/// mean pair loss of each epoch.
inline auto train_surrogate(const SurrogateConfig& config, const Mesh& mesh, const FlowSequence& flow)
    -> SurrogateTraining
{
    if (const auto errors = check(config); !errors.empty()) {
        throw ConfigError {errors.front()};
    }
    if (flow.frames() < 2) {
        throw ConfigError {"surrogate training needs at least 2 snapshots"};
    }
    GraphFeatures features = build_features(mesh, flow, 0);
    const Matrix scale = increment_scale(flow);
    SurrogateParams initial = init_surrogate(config.message_passing_steps, config.latent, config.seed);
    fit_input_normalization(initial, mesh, flow);
    SurrogateGraph graph {initial, features, config.fluid_only_loss, &mesh};
    grad::Tape& tape = graph.tape();

    const auto& ids = graph.param_ids();
    std::vector<Matrix> grad_sum;
    for (const auto id : ids) {
        grad_sum.emplace_back(tape.value(id).rows(), tape.value(id).cols());
    }
    std::vector<ParamRef> refs;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        refs.push_back({&tape.leaf_value(ids[k]), &grad_sum[k]});
    }
    Adam adam {AdamConfig {config.learning_rate}};

    const std::size_t pairs = flow.frames() - 1;
    std::vector<std::size_t> order(pairs);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> pair_loss(pairs, 0.0);
    Matrix target {mesh.size(), surrogate_output_width};
    Rng rng {derive_seed(config.seed, "surrogate-train")};
    SurrogateTraining result;
    double lr = config.learning_rate;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        adam.set_learning_rate(lr);
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < pairs; start += config.batch) {
            const std::size_t stop = std::min(pairs, start + config.batch);
            for (Matrix& g : grad_sum) {
                g.fill(0.0);
            }
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t t = order[b];
                set_node_velocity(features, flow, t);
                for (std::size_t n = 0; n < mesh.size(); ++n) {
                    if (config.noise_std > 0.0) {
                        features.nodes(n, 0) += rng.normal(0.0, config.noise_std);
                        features.nodes(n, 1) += rng.normal(0.0, config.noise_std);
                    }
                    target(n, 0) = (flow.u(t + 1, n) - features.nodes(n, 0)) / scale(0, 0);
                    target(n, 1) = (flow.v(t + 1, n) - features.nodes(n, 1)) / scale(0, 1);
                }
                graph.set_inputs(features.nodes, target);
                tape.forward();
                const double loss = tape.value(graph.loss())[0];
                if (!std::isfinite(loss)) {
                    throw NumericalError {"surrogate loss is " + std::to_string(loss) + " at epoch "
                                          + std::to_string(epoch) + " (lr " + std::to_string(lr) + ")"};
                }
                pair_loss[t] = loss;
                tape.backward(graph.loss());
                for (std::size_t k = 0; k < ids.size(); ++k) {
                    const Matrix& g = tape.grad(ids[k]);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        grad_sum[k][i] += g[i];
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (Matrix& g : grad_sum) {
                for (double& v : g.values()) {
                    v *= inv;
                }
            }
            // Leaf references can move when the tape rebinds; refresh them.
            for (std::size_t k = 0; k < ids.size(); ++k) {
                refs[k].value = &tape.leaf_value(ids[k]);
            }
            adam.step(refs);
        }
        double epoch_loss = 0.0;
        for (const double l : pair_loss) {
            epoch_loss += l;
        }
        epoch_loss /= static_cast<double>(pairs);
        result.loss_history.push_back(epoch_loss);
        spdlog::debug("surrogate epoch {} loss {:.6g} lr {:.3g}", epoch, epoch_loss, lr);
        lr *= config.lr_decay;
    }
    result.params = graph.params(scale);
    return result;
}

/// Post-processor node states for every snapshot, T x N x latent.
inline auto extract_embeddings(const SurrogateParams& params, const Mesh& mesh, const FlowSequence& flow)
    -> EmbeddingTensor
{
    GraphFeatures features = build_features(mesh, flow, 0);
    SurrogateGraph graph {params, features};
    const Matrix zero_target {mesh.size(), surrogate_output_width};
    EmbeddingTensor out {Dims {flow.frames(), mesh.size(), params.latent}};
    for (std::size_t t = 0; t < flow.frames(); ++t) {
        set_node_velocity(features, flow, t);
        graph.set_inputs(features.nodes, zero_target);
        graph.tape().forward();
        const Matrix& h = graph.tape().value(graph.embeddings());
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            auto row = out.row(t, n);
            for (std::size_t c = 0; c < params.latent; ++c) {
                const double v = h(n, c);
                if (!std::isfinite(v)) {
                    throw NumericalError {"non-finite embedding at (t=" + std::to_string(t) + ", n="
                                          + std::to_string(n) + ", d=" + std::to_string(c) + ")"};
                }
                row[c] = static_cast<float>(v);
            }
        }
    }
    return out;
}

/// Checkpoint directory: manifest.txt plus one NTEN file per tensor.
inline void save_surrogate(const SurrogateParams& params, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "saeflow-surrogate 1\n";
    manifest << "message_passing_steps " << params.message_passing_steps << "\n";
    manifest << "latent " << params.latent << "\n";
    auto write = [&](const std::string& name, const Matrix& m) {
        const std::string file = name + ".nten";
        Tensor t {Dims {1, m.rows(), m.cols()}};
        for (std::size_t i = 0; i < m.size(); ++i) {
            t.values()[i] = static_cast<float>(m[i]);
        }
        save_tensor(t, dir / file);
        manifest << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << file << "\n";
    };
    write("target_scale", params.target_scale);
    write("input_shift", params.input_shift);
    write("input_scale", params.input_scale);
    write("edge_scale", params.edge_scale);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        write(params.names[k], params.tensors[k]);
    }
    std::ofstream out {dir / "manifest.txt", std::ios::trunc};
    if (!out) {
        throw IoError {"cannot write " + (dir / "manifest.txt").string()};
    }
    out << manifest.str();
}

namespace detail {

inline auto read_matrix_nten(const std::filesystem::path& path, std::size_t rows, std::size_t cols) -> Matrix
{
    const Tensor t = load_tensor<PlainTag>(path);
    if (t.dims() != Dims {1, rows, cols}) {
        throw FormatError {path.string() + ": dims " + to_string(t.dims()) + " disagree with manifest"};
    }
    Matrix m {rows, cols};
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = t.values()[i];
    }
    return m;
}

} // namespace detail

inline auto load_surrogate(const std::filesystem::path& dir) -> SurrogateParams
{
    std::ifstream in {dir / "manifest.txt"};
    if (!in) {
        throw IoError {"missing surrogate manifest in " + dir.string()};
    }
    SurrogateParams p;
    std::string line;
    std::getline(in, line);
    if (line != "saeflow-surrogate 1") {
        throw FormatError {dir.string() + ": not a surrogate checkpoint"};
    }
    while (std::getline(in, line)) {
        std::istringstream ls {line};
        std::string key;
        ls >> key;
        if (key == "message_passing_steps") {
            ls >> p.message_passing_steps;
        } else if (key == "latent") {
            ls >> p.latent;
        } else if (key == "tensor") {
            std::string name;
            std::string file;
            std::size_t rows = 0;
            std::size_t cols = 0;
            ls >> name >> rows >> cols >> file;
            if (!ls) {
                throw FormatError {dir.string() + ": malformed manifest line \"" + line + "\""};
            }
            Matrix m = detail::read_matrix_nten(dir / file, rows, cols);
            if (name == "target_scale") {
                p.target_scale = std::move(m);
            } else if (name == "input_shift") {
                p.input_shift = std::move(m);
            } else if (name == "input_scale") {
                p.input_scale = std::move(m);
            } else if (name == "edge_scale") {
                p.edge_scale = std::move(m);
            } else {
                p.names.push_back(name);
                p.tensors.push_back(std::move(m));
            }
        } else if (!key.empty()) {
            throw FormatError {dir.string() + ": unknown manifest key \"" + key + "\""};
        }
    }
    const Matrix two {1, 2};
    if (!p.target_scale.same_shape(two) || !p.input_shift.same_shape(two) || !p.input_scale.same_shape(two)
        || !p.edge_scale.same_shape(Matrix {1, 1})) {
        throw FormatError {dir.string() + ": normalization tensors have unexpected shapes"};
    }
    const auto expected = init_surrogate(p.message_passing_steps, p.latent, 0);
    if (expected.names != p.names) {
        throw FormatError {dir.string() + ": tensor list does not match a surrogate with "
                           + std::to_string(p.message_passing_steps) + " steps and latent " + std::to_string(p.latent)};
    }
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
        if (!p.tensors[k].same_shape(expected.tensors[k])) {
            throw FormatError {dir.string() + ": tensor " + p.names[k] + " has shape " + shape_string(p.tensors[k])};
        }
    }
    return p;
}

} // namespace saeflow
