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

// Synthetic cylinder-wake data.
//
// The mesh is a jittered triangular lattice on a channel with a cylinder
// cut out. The flow is a parabolic channel profile plus an analytic street
// of Oseen vortices shed behind the cylinder and carried downstream at a
// fixed speed. When the shedding period is a whole number of frames, frame
// t and frame t + period are computed from the same phase and are bitwise
// equal.

#include "saeflow/error.hpp"
#include "saeflow/flow.hpp"
#include "saeflow/matrix.hpp"
#include "saeflow/mesh.hpp"
#include "saeflow/rng.hpp"
#include "saeflow/tensor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace saeflow {

struct WakeConfig
{
    double width {1.6};
    double height {0.41};
    double cylinder_x {0.3};
    double cylinder_y {0.2};
    double cylinder_radius {0.05};
    double u_max {1.0};
    double circulation {0.3};
    double core_radius {0.04};
    double shed_period {0.75};
    double convection_speed {0.6};
    double spacing {0.037};
    double jitter {0.2};
    std::size_t frames {120};
    double dt {0.025};
    std::uint64_t seed {1};
};

/// Returns one message per violated invariant, each prefixed with `prefix`.
inline auto check(const WakeConfig& c, const std::string& prefix = "wake.") -> std::vector<std::string>
{
    std::vector<std::string> errors;
    auto require = [&](bool ok, const std::string& key, const std::string& why) {
        if (!ok) {
            errors.push_back(prefix + key + " " + why);
        }
    };
    require(c.width > 0.0, "width", "must be > 0");
    require(c.height > 0.0, "height", "must be > 0");
    require(c.cylinder_radius > 0.0, "cylinder_radius", "must be > 0");
    require(c.cylinder_radius < std::min(c.width, c.height) / 4.0, "cylinder_radius",
            "must be < min(width, height) / 4");
    require(c.cylinder_x - c.cylinder_radius > 0.0 && c.cylinder_x + c.cylinder_radius < c.width, "cylinder_x",
            "must keep the cylinder inside the domain");
    require(c.cylinder_y - c.cylinder_radius > 0.0 && c.cylinder_y + c.cylinder_radius < c.height, "cylinder_y",
            "must keep the cylinder inside the domain");
    require(c.core_radius > 0.0, "core_radius", "must be > 0");
    require(c.shed_period > 0.0, "shed_period", "must be > 0");
    require(c.dt > 0.0, "dt", "must be > 0");
    require(c.frames >= 2, "frames", "must be >= 2");
    require(c.spacing > 0.0, "spacing", "must be > 0");
    require(c.spacing < std::min(c.width, c.height), "spacing", "must be smaller than the domain");
    require(c.jitter >= 0.0 && c.jitter < 1.0, "jitter", "must be in [0, 1)");
    require(std::isfinite(c.u_max) && std::isfinite(c.circulation) && std::isfinite(c.convection_speed), "u_max",
            "and circulation, convection_speed must be finite");
    return errors;
}

inline void require_valid(const WakeConfig& c)
{
    const auto errors = check(c);
    if (!errors.empty()) {
        throw ConfigError {errors.front()};
    }
}

/// Tangential speed of an Oseen vortex at radius r.
inline auto oseen_tangential_speed(double circulation, double core_radius, double r) -> double
{
    if (r == 0.0) {
        return 0.0;
    }
    return circulation / (2.0 * std::numbers::pi * r) * (1.0 - std::exp(-(r * r) / (core_radius * core_radius)));
}

/// Analytic vorticity of an Oseen vortex at radius r.
inline auto oseen_vorticity(double circulation, double core_radius, double r) -> double
{
    const double rc2 = core_radius * core_radius;
    return circulation / (std::numbers::pi * rc2) * std::exp(-(r * r) / rc2);
}

struct Vortex
{
    Point center;
    double circulation {};
};

/// Number of frames in one shedding period, if the period is a whole number
/// of frames.
inline auto period_frames(const WakeConfig& c) -> std::optional<std::size_t>
{
    const double ratio = c.shed_period / c.dt;
    const double rounded = std::round(ratio);
    if (rounded >= 1.0 && std::abs(ratio - rounded) <= 1e-9 * ratio) {
        return static_cast<std::size_t>(rounded);
    }
    return std::nullopt;
}

/// Vortices alive at frame t. Vortex k was shed k half-periods before the
/// current phase, alternates sign and side, and ramps its circulation up
/// over its first half-period so it enters the field continuously.
inline auto vortices_at(const WakeConfig& c, std::size_t t) -> std::vector<Vortex>
{
    double phase = 0.0;
    if (const auto period = period_frames(c)) {
        phase = static_cast<double>(t % *period) * c.dt;
    } else {
        phase = std::fmod(static_cast<double>(t) * c.dt, c.shed_period);
    }
    const double half = c.shed_period / 2.0;
    const double x_shed = c.cylinder_x + c.cylinder_radius + c.core_radius;
    const double x_exit = c.width + 3.0 * c.core_radius;
    std::vector<Vortex> out;
    for (std::size_t k = 0;; ++k) {
        const double age = phase + static_cast<double>(k) * half;
        const double x = x_shed + c.convection_speed * age;
        if (x > x_exit || (c.convection_speed <= 0.0 && k > 0)) {
            break;
        }
        const bool upper = k % 2 == 0;
        const double ramp = std::min(1.0, age / half);
        // Upper vortices turn clockwise, lower ones counterclockwise.
        out.push_back({{x, c.cylinder_y + (upper ? c.core_radius : -c.core_radius)},
                       (upper ? -1.0 : 1.0) * c.circulation * ramp});
    }
    return out;
}

inline auto parabolic_inflow(const WakeConfig& c, double y) -> double
{
    return c.u_max * 4.0 * y * (c.height - y) / (c.height * c.height);
}

/// Velocity of the analytic field at a point, ignoring the no-slip override.
inline auto wake_velocity(const WakeConfig& c, const std::vector<Vortex>& vortices, Point p) -> std::pair<double, double>
{
    double u = parabolic_inflow(c, p.y);
    double v = 0.0;
    for (const Vortex& vx : vortices) {
        const double dx = p.x - vx.center.x;
        const double dy = p.y - vx.center.y;
        const double r = std::hypot(dx, dy);
        if (r == 0.0) {
            continue;
        }
        const double speed = oseen_tangential_speed(vx.circulation, c.core_radius, r);
        u += -speed * dy / r;
        v += speed * dx / r;
    }
    return {u, v};
}

/// Analytic vorticity of the same field (channel shear plus vortex cores).
inline auto wake_vorticity(const WakeConfig& c, const std::vector<Vortex>& vortices, Point p) -> double
{
    double omega = -c.u_max * 4.0 * (c.height - 2.0 * p.y) / (c.height * c.height);
    for (const Vortex& vx : vortices) {
        omega += oseen_vorticity(vx.circulation, c.core_radius, std::hypot(p.x - vx.center.x, p.y - vx.center.y));
    }
    return omega;
}

namespace detail {

// Indices of the k nearest other nodes, ties broken by index.
inline auto nearest_neighbors(const std::vector<Point>& pts, std::size_t i, std::size_t k) -> std::vector<std::uint32_t>
{
    std::vector<std::pair<double, std::uint32_t>> cand;
    cand.reserve(pts.size());
    for (std::size_t j = 0; j < pts.size(); ++j) {
        if (j != i) {
            const double dx = pts[j].x - pts[i].x;
            const double dy = pts[j].y - pts[i].y;
            cand.emplace_back(dx * dx + dy * dy, static_cast<std::uint32_t>(j));
        }
    }
    const std::size_t take = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    std::vector<std::uint32_t> out;
    for (std::size_t m = 0; m < take; ++m) {
        out.push_back(cand[m].second);
    }
    return out;
}

} // namespace detail

inline constexpr std::size_t mesh_neighbor_count = 6;

/// Jittered triangular lattice with the cylinder removed. Connectivity is
/// the symmetrized 6-nearest-neighbor graph.
inline auto generate_mesh(const WakeConfig& c) -> Mesh
{
    require_valid(c);
    const auto nx = static_cast<std::size_t>(std::max(1.0, std::round(c.width / c.spacing)));
    const auto ny = static_cast<std::size_t>(std::max(1.0, std::round(c.height / (c.spacing * std::sqrt(3.0) / 2.0))));
    const double hx = c.width / static_cast<double>(nx);
    const double hy = c.height / static_cast<double>(ny);
    Rng rng {derive_seed(c.seed, "mesh-jitter")};

    std::vector<Point> pts;
    std::vector<NodeType> types;
    for (std::size_t r = 0; r <= ny; ++r) {
        const double y = r == ny ? c.height : static_cast<double>(r) * hy;
        std::vector<double> xs;
        if (r % 2 == 0) {
            for (std::size_t i = 0; i <= nx; ++i) {
                xs.push_back(i == nx ? c.width : static_cast<double>(i) * hx);
            }
        } else {
            xs.push_back(0.0);
            for (std::size_t i = 0; i < nx; ++i) {
                xs.push_back((static_cast<double>(i) + 0.5) * hx);
            }
            xs.push_back(c.width);
        }
        for (const double x0 : xs) {
            const double jx = rng.uniform(-0.5, 0.5) * c.jitter * c.spacing;
            const double jy = rng.uniform(-0.5, 0.5) * c.jitter * c.spacing;
            const bool on_x_boundary = x0 == 0.0 || x0 == c.width;
            const bool on_y_boundary = r == 0 || r == ny;
            Point p {x0, y};
            if (!on_x_boundary) {
                p.x += jx;
            }
            if (!on_y_boundary) {
                p.y += jy;
            }
            const double dist = std::hypot(p.x - c.cylinder_x, p.y - c.cylinder_y);
            if (dist < c.cylinder_radius) {
                continue;
            }
            NodeType type = NodeType::fluid;
            if (dist - c.cylinder_radius <= 1.5 * c.spacing) {
                type = NodeType::wall;
            } else if (x0 == 0.0) {
                type = NodeType::inflow;
            } else if (x0 == c.width) {
                type = NodeType::outflow;
            } else if (on_y_boundary) {
                type = NodeType::wall;
            }
            pts.push_back(p);
            types.push_back(type);
        }
    }

    std::vector<Edge> edges;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (const std::uint32_t j : detail::nearest_neighbors(pts, i, mesh_neighbor_count)) {
            const auto a = static_cast<std::uint32_t>(i);
            edges.push_back({std::min(a, j), std::max(a, j)});
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    Mesh mesh {std::move(pts), std::move(types), std::move(edges)};
    for (const NodeType t : {NodeType::fluid, NodeType::wall, NodeType::inflow, NodeType::outflow}) {
        if (mesh.count(t) == 0) {
            throw ConfigError {"generated mesh has no " + std::string {to_string(t)} + " nodes; spacing too coarse"};
        }
    }
    return mesh;
}

/// Parabolic channel flow plus the vortex street, sampled at the mesh nodes.
/// Wall nodes are held at zero velocity; pressure is zero-filled.
inline auto generate_flow(const WakeConfig& c, const Mesh& mesh) -> FlowSequence
{
    require_valid(c);
    Tensor state {Dims {c.frames, mesh.size(), FlowSequence::channels}};
    for (std::size_t t = 0; t < c.frames; ++t) {
        const auto vortices = vortices_at(c, t);
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            if (mesh.node_types()[n] == NodeType::wall) {
                continue;
            }
            const auto [u, v] = wake_velocity(c, vortices, mesh.positions()[n]);
            state.at(t, n, 0) = static_cast<float>(u);
            state.at(t, n, 1) = static_cast<float>(v);
        }
    }
    return FlowSequence {std::move(state), c.dt};
}

struct OracleConfig
{
    std::size_t n_atoms {12};
    std::size_t d_in {16};
    double noise_std {0.01};
    double sparsity {2.0};
    std::uint64_t seed {2};
};

inline auto check(const OracleConfig& c, const std::string& prefix = "oracle.") -> std::vector<std::string>
{
    std::vector<std::string> errors;
    if (c.n_atoms < 4) {
        errors.push_back(prefix + "n_atoms must be >= 4 (four physical atoms)");
    }
    if (c.d_in < 2) {
        errors.push_back(prefix + "d_in must be >= 2");
    }
    if (!(c.noise_std >= 0.0)) {
        errors.push_back(prefix + "noise_std must be >= 0");
    }
    if (!(c.sparsity > 0.0) || c.sparsity > static_cast<double>(c.n_atoms)) {
        errors.push_back(prefix + "sparsity must be in (0, n_atoms]");
    }
    return errors;
}

/// Known dictionary behind oracle embeddings: unit atom rows and the
/// nonnegative codes that mix them.
struct TruthBundle
{
    Matrix atoms;  // n_atoms x d_in
    Tensor codes;  // T x N x n_atoms
};

struct OracleEmbeddings
{
    EmbeddingTensor embeddings;
    TruthBundle truth;
};

inline constexpr double max_atom_coherence = 0.5;
inline constexpr int atom_resample_limit = 1000;

/// Random unit rows with pairwise |cos| <= 0.5. Each new row is redrawn
/// until it is incoherent with the rows before it.
inline auto incoherent_atoms(std::size_t count, std::size_t dim, Rng& rng) -> Matrix
{
    Matrix atoms {count, dim};
    for (std::size_t k = 0; k < count; ++k) {
        bool accepted = false;
        for (int attempt = 0; attempt < atom_resample_limit && !accepted; ++attempt) {
            double norm = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                atoms(k, j) = rng.normal();
                norm += atoms(k, j) * atoms(k, j);
            }
            norm = std::sqrt(norm);
            for (std::size_t j = 0; j < dim; ++j) {
                atoms(k, j) /= norm;
            }
            accepted = true;
            for (std::size_t q = 0; q < k && accepted; ++q) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    dot += atoms(k, j) * atoms(q, j);
                }
                accepted = std::abs(dot) <= max_atom_coherence;
            }
        }
        if (!accepted) {
            throw ConfigError {"could not draw atom " + std::to_string(k) + " with |cos| <= 0.5 against the others in "
                               + std::to_string(atom_resample_limit) + " tries; lower n_atoms or raise d_in"};
        }
    }
    return atoms;
}

/// Embeddings with a planted dictionary. Codes come from four physical
/// indicators (vorticity magnitude, wall proximity, inlet proximity, wake
/// band) and n_atoms - 4 random smooth bumps. Each indicator is cut at the
/// pooled quantile that leaves sparsity / n_atoms of its values active, so
/// a node carries about `sparsity` active atoms on average.
inline auto synthesize_oracle_embeddings(const OracleConfig& oc, const WakeConfig& wc, const Mesh& mesh,
                                         const FlowSequence& flow) -> OracleEmbeddings
{
    if (const auto errors = check(oc); !errors.empty()) {
        throw ConfigError {errors.front()};
    }
    require_valid(wc);
    if (flow.nodes() != mesh.size()) {
        throw ShapeError {"flow has " + std::to_string(flow.nodes()) + " nodes, mesh has "
                          + std::to_string(mesh.size())};
    }
    if (oc.n_atoms > oc.d_in) {
        spdlog::warn("oracle: n_atoms={} exceeds d_in={}; atoms cannot be linearly independent", oc.n_atoms, oc.d_in);
    }
    const std::size_t frames = flow.frames();
    const std::size_t nodes = mesh.size();
    const std::size_t atoms_n = oc.n_atoms;
    Rng rng {derive_seed(oc.seed, "oracle")};

    struct Bump
    {
        Point center;
        double sigma;
    };
    // One bump per vertical strip of the domain, so no two bumps share
    // most of their support.
    std::vector<Bump> bumps;
    const double strip = wc.width / static_cast<double>(std::max<std::size_t>(1, atoms_n - std::min<std::size_t>(atoms_n, 4)));
    for (std::size_t k = 4; k < atoms_n; ++k) {
        const double x0 = static_cast<double>(k - 4) * strip;
        bumps.push_back({{rng.uniform(x0, x0 + strip), rng.uniform(0.0, wc.height)}, rng.uniform(2.0, 4.0) * wc.spacing});
    }

    // Raw indicator values, T x N x n_atoms.
    std::vector<double> raw(frames * nodes * atoms_n, 0.0);
    double omega_max = 0.0;
    std::vector<double> omega(frames * nodes, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
        const auto vortices = vortices_at(wc, t);
        for (std::size_t n = 0; n < nodes; ++n) {
            omega[t * nodes + n] = std::abs(wake_vorticity(wc, vortices, mesh.positions()[n]));
            omega_max = std::max(omega_max, omega[t * nodes + n]);
        }
    }
    const double wake_half_width = 2.0 * wc.cylinder_radius;
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t n = 0; n < nodes; ++n) {
            const Point p = mesh.positions()[n];
            double* out = &raw[(t * nodes + n) * atoms_n];
            out[0] = omega_max > 0.0 ? omega[t * nodes + n] / omega_max : 0.0;
            const double wall_dist = std::max(
                0.0, std::min({std::hypot(p.x - wc.cylinder_x, p.y - wc.cylinder_y) - wc.cylinder_radius, p.y,
                               wc.height - p.y}));
            out[1] = std::exp(-wall_dist / (2.0 * wc.spacing));
            out[2] = std::exp(-p.x / (3.0 * wc.spacing));
            const double behind = p.x - (wc.cylinder_x + wc.cylinder_radius);
            const double lateral = (p.y - wc.cylinder_y) / wake_half_width;
            out[3] = behind > 0.0 ? std::exp(-lateral * lateral) * (1.0 - std::exp(-behind / (4.0 * wc.spacing))) : 0.0;
            for (std::size_t k = 4; k < atoms_n; ++k) {
                const Bump& b = bumps[k - 4];
                const double r2 = (p.x - b.center.x) * (p.x - b.center.x) + (p.y - b.center.y) * (p.y - b.center.y);
                out[k] = std::exp(-r2 / (2.0 * b.sigma * b.sigma));
            }
        }
    }

    // Quantile cut per atom, then rescale the surviving excess to [0, 1].
    const double active_fraction = std::min(1.0, oc.sparsity / static_cast<double>(atoms_n));
    Tensor codes {Dims {frames, nodes, atoms_n}};
    std::vector<double> column(frames * nodes);
    for (std::size_t k = 0; k < atoms_n; ++k) {
        for (std::size_t i = 0; i < frames * nodes; ++i) {
            column[i] = raw[i * atoms_n + k];
        }
        std::vector<double> sorted = column;
        std::sort(sorted.begin(), sorted.end());
        const auto cut_index = static_cast<std::size_t>(
            std::floor((1.0 - active_fraction) * static_cast<double>(sorted.size())));
        const double threshold = sorted[std::min(cut_index, sorted.size() - 1)];
        const double top = sorted.back();
        const double span = top - threshold;
        for (std::size_t i = 0; i < frames * nodes; ++i) {
            const double excess = column[i] - threshold;
            const double code = (excess > 0.0 && span > 0.0) ? excess / span : 0.0;
            codes.values()[i * atoms_n + k] = static_cast<float>(code);
        }
    }

    Matrix atoms = incoherent_atoms(atoms_n, oc.d_in, rng);

    Rng noise_rng {derive_seed(oc.seed, "oracle-noise")};
    EmbeddingTensor embeddings {Dims {frames, nodes, oc.d_in}};
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t n = 0; n < nodes; ++n) {
            const auto code = codes.row(t, n);
            auto out = embeddings.row(t, n);
            for (std::size_t j = 0; j < oc.d_in; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < atoms_n; ++k) {
                    acc += static_cast<double>(code[k]) * atoms(k, j);
                }
                if (oc.noise_std > 0.0) {
                    acc += noise_rng.normal(0.0, oc.noise_std);
                }
                out[j] = static_cast<float>(acc);
            }
        }
    }
    return {std::move(embeddings), {std::move(atoms), std::move(codes)}};
}

} // namespace saeflow
