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

// Vorticity ground truth, alignment metrics between node selections and
// the high-vorticity mask, the comparison baselines, and dictionary
// recovery against a planted dictionary.

#include "saeflow/error.hpp"
#include "saeflow/flow.hpp"
#include "saeflow/linalg.hpp"
#include "saeflow/matrix.hpp"
#include "saeflow/mesh.hpp"
#include "saeflow/rng.hpp"
#include "saeflow/spatial.hpp"
#include "saeflow/tensor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace saeflow {

struct VorticityField
{
    std::vector<double> omega;
    // Nodes whose neighborhood did not span two directions; omega is 0 there.
    std::vector<std::uint32_t> degenerate;
};

/// omega = dv/dx - du/dy at each node from a least-squares affine fit of
/// (u, v) over the node and its mesh neighbors. Positions are centered on
/// the neighborhood mean, which reduces the fit to a 2x2 normal system.
inline auto compute_vorticity(const Mesh& mesh, std::span<const double> u, std::span<const double> v)
    -> VorticityField
{
    if (u.size() != mesh.size() || v.size() != mesh.size()) {
        throw ShapeError {"velocity has " + std::to_string(u.size()) + "/" + std::to_string(v.size())
                          + " entries, mesh has " + std::to_string(mesh.size()) + " nodes"};
    }
    VorticityField out {std::vector<double>(mesh.size(), 0.0), {}};
    const auto& pos = mesh.positions();
    std::vector<std::uint32_t> hood;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        hood.assign(1, static_cast<std::uint32_t>(i));
        hood.insert(hood.end(), mesh.adjacency()[i].begin(), mesh.adjacency()[i].end());
        const auto m = static_cast<double>(hood.size());
        double cx = 0.0;
        double cy = 0.0;
        double mu = 0.0;
        double mv = 0.0;
        for (const std::uint32_t j : hood) {
            cx += pos[j].x - pos[i].x;
            cy += pos[j].y - pos[i].y;
            mu += u[j];
            mv += v[j];
        }
        cx /= m;
        cy /= m;
        mu /= m;
        mv /= m;
        double sxx = 0.0;
        double sxy = 0.0;
        double syy = 0.0;
        double sxu = 0.0;
        double syu = 0.0;
        double sxv = 0.0;
        double syv = 0.0;
        for (const std::uint32_t j : hood) {
            const double dx = pos[j].x - pos[i].x - cx;
            const double dy = pos[j].y - pos[i].y - cy;
            const double du = u[j] - mu;
            const double dv = v[j] - mv;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
            sxu += dx * du;
            syu += dy * du;
            sxv += dx * dv;
            syv += dy * dv;
        }
        const double det = sxx * syy - sxy * sxy;
        const double trace = sxx + syy;
        if (!(det > 1e-12 * trace * trace)) {
            out.degenerate.push_back(static_cast<std::uint32_t>(i));
            continue;
        }
        const double du_dy = (sxx * syu - sxy * sxu) / det;
        const double dv_dx = (syy * sxv - sxy * syv) / det;
        out.omega[i] = dv_dx - du_dy;
    }
    if (!out.degenerate.empty()) {
        spdlog::warn("vorticity: {} node(s) with a degenerate neighborhood set to 0 (first: {})",
                     out.degenerate.size(), out.degenerate.front());
    }
    return out;
}

/// Vorticity of snapshot t of a stored flow.
inline auto compute_vorticity(const Mesh& mesh, const FlowSequence& flow, std::size_t t) -> VorticityField
{
    if (flow.nodes() != mesh.size()) {
        throw ShapeError {"flow has " + std::to_string(flow.nodes()) + " nodes, mesh has "
                          + std::to_string(mesh.size())};
    }
    std::vector<double> u(mesh.size());
    std::vector<double> v(mesh.size());
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        u[n] = flow.u(t, n);
        v[n] = flow.v(t, n);
    }
    return compute_vorticity(mesh, u, v);
}

struct VortexMask
{
    double fraction {};
    std::size_t eligible {};
    // Masked node ids per snapshot, ascending.
    NodeSelection nodes;
};

/// Top round(fraction * N_eligible) nodes per snapshot by |omega|, ties by
/// node index. Wall nodes are ineligible unless `include_walls`.
inline auto vortex_mask(const Mesh& mesh, const FlowSequence& flow, double fraction, bool include_walls = false)
    -> VortexMask
{
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError {"mask fraction must be in (0, 1)"};
    }
    std::vector<std::uint32_t> eligible;
    for (std::size_t n = 0; n < mesh.size(); ++n) {
        if (include_walls || mesh.node_types()[n] != NodeType::wall) {
            eligible.push_back(static_cast<std::uint32_t>(n));
        }
    }
    const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(eligible.size())));
    VortexMask mask {fraction, eligible.size(), NodeSelection {mesh.size(), {}}};
    std::vector<std::uint32_t> order;
    for (std::size_t t = 0; t < flow.frames(); ++t) {
        const auto omega = compute_vorticity(mesh, flow, t).omega;
        order = eligible;
        std::stable_sort(order.begin(), order.end(), [&omega](std::uint32_t a, std::uint32_t b) {
            return std::abs(omega[a]) > std::abs(omega[b]);
        });
        if (count > 0 && count < order.size() && std::abs(omega[order[count - 1]]) == std::abs(omega[order[count]])) {
            spdlog::debug("vortex mask at t={} has ties at the cutoff; broken by node index", t);
        }
        std::vector<std::uint32_t> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(top.begin(), top.end());
        mask.nodes.per_t.push_back(std::move(top));
    }
    return mask;
}

struct Alignment
{
    double precision {};
    double recall {};
    double f1 {};
    double jaccard {};
};

/// Metrics of one selected set against one mask set (both ascending).
inline auto set_alignment(const std::vector<std::uint32_t>& selected, const std::vector<std::uint32_t>& mask)
    -> Alignment
{
    std::vector<std::uint32_t> hit;
    std::set_intersection(selected.begin(), selected.end(), mask.begin(), mask.end(), std::back_inserter(hit));
    const auto h = static_cast<double>(hit.size());
    Alignment a;
    if (selected.empty()) {
        spdlog::debug("alignment of an empty selection: precision taken as 0");
    } else {
        a.precision = h / static_cast<double>(selected.size());
    }
    a.recall = mask.empty() ? 0.0 : h / static_cast<double>(mask.size());
    a.f1 = a.precision + a.recall > 0.0 ? 2.0 * a.precision * a.recall / (a.precision + a.recall) : 0.0;
    const double uni = static_cast<double>(selected.size() + mask.size()) - h;
    a.jaccard = uni > 0.0 ? h / uni : 1.0;
    return a;
}

struct AlignmentSeries
{
    std::string method;
    std::vector<Alignment> per_t;
    Alignment mean;
};

inline auto alignment_metrics(const std::string& method, const NodeSelection& selection, const VortexMask& mask)
    -> AlignmentSeries
{
    if (selection.per_t.size() != mask.nodes.per_t.size()) {
        throw ShapeError {"selection has " + std::to_string(selection.per_t.size()) + " snapshots, mask has "
                          + std::to_string(mask.nodes.per_t.size())};
    }
    AlignmentSeries s {method, {}, {}};
    for (std::size_t t = 0; t < selection.per_t.size(); ++t) {
        s.per_t.push_back(set_alignment(selection.per_t[t], mask.nodes.per_t[t]));
    }
    const auto n = static_cast<double>(std::max<std::size_t>(1, s.per_t.size()));
    for (const Alignment& a : s.per_t) {
        s.mean.precision += a.precision / n;
        s.mean.recall += a.recall / n;
        s.mean.f1 += a.f1 / n;
        s.mean.jaccard += a.jaccard / n;
    }
    return s;
}

/// Default selection size: round(0.075 N).
inline auto default_eta(std::size_t nodes) -> std::size_t
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.075 * static_cast<double>(nodes))));
}

/// Ranks nodes by the Euclidean norm of their embedding.
inline auto baseline_embedding_norm(const EmbeddingTensor& embeddings, std::size_t eta) -> NodeSelection
{
    const Dims d = embeddings.dims();
    NodeScoreField f {d.t, d.n, std::vector<double>(d.t * d.n)};
    for (std::size_t t = 0; t < d.t; ++t) {
        for (std::size_t n = 0; n < d.n; ++n) {
            double s = 0.0;
            for (const float x : embeddings.row(t, n)) {
                s += static_cast<double>(x) * x;
            }
            f.at(t, n) = std::sqrt(s);
        }
    }
    return top_eta_nodes(f, eta);
}

struct PcaModel
{
    Matrix mean;        // 1 x d
    Matrix components;  // d x m, columns are principal directions
    std::vector<double> variances;
};

/// Principal directions of the pooled, mean-centered embeddings.
inline auto fit_pca(const EmbeddingTensor& embeddings, std::size_t m) -> PcaModel
{
    const Dims d = embeddings.dims();
    if (m < 1 || m > d.d) {
        throw ConfigError {"PCA needs 1 <= m <= " + std::to_string(d.d) + ", got m=" + std::to_string(m)};
    }
    const auto count = static_cast<double>(d.t * d.n);
    Matrix mean {1, d.d};
    for (std::size_t r = 0; r < d.t * d.n; ++r) {
        for (std::size_t k = 0; k < d.d; ++k) {
            mean[k] += embeddings.values()[r * d.d + k];
        }
    }
    for (double& x : mean.values()) {
        x /= count;
    }
    Matrix cov {d.d, d.d};
    std::vector<double> c(d.d);
    for (std::size_t r = 0; r < d.t * d.n; ++r) {
        for (std::size_t k = 0; k < d.d; ++k) {
            c[k] = embeddings.values()[r * d.d + k] - mean[k];
        }
        for (std::size_t a = 0; a < d.d; ++a) {
            for (std::size_t b = a; b < d.d; ++b) {
                cov(a, b) += c[a] * c[b];
            }
        }
    }
    for (std::size_t a = 0; a < d.d; ++a) {
        for (std::size_t b = a; b < d.d; ++b) {
            cov(a, b) /= count;
            cov(b, a) = cov(a, b);
        }
    }
    const Eigensystem eig = jacobi_eigen(cov, 1e-10);
    PcaModel model {mean, Matrix {d.d, m}, {eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(m)}};
    for (std::size_t k = 0; k < d.d; ++k) {
        for (std::size_t j = 0; j < m; ++j) {
            model.components(k, j) = eig.vectors(k, j);
        }
    }
    return model;
}

/// m = floor(K / kappa); zero is a configuration error.
inline auto pca_components(std::size_t k, std::size_t kappa) -> std::size_t
{
    if (kappa == 0 || k / kappa == 0) {
        throw ConfigError {"PCA baseline needs K >= kappa (m = floor(K/kappa) = 0 for K=" + std::to_string(k)
                           + ", kappa=" + std::to_string(kappa) + ")"};
    }
    return k / kappa;
}

/// Ranks nodes by the norm of their centered embedding projected on the
/// first m = floor(K / kappa) principal components.
inline auto baseline_pca(const EmbeddingTensor& embeddings, std::size_t k, std::size_t kappa, std::size_t eta)
    -> NodeSelection
{
    const std::size_t m = std::min(pca_components(k, kappa), embeddings.dims().d);
    const PcaModel model = fit_pca(embeddings, m);
    const Dims d = embeddings.dims();
    NodeScoreField f {d.t, d.n, std::vector<double>(d.t * d.n)};
    std::vector<double> c(d.d);
    for (std::size_t t = 0; t < d.t; ++t) {
        for (std::size_t n = 0; n < d.n; ++n) {
            const auto row = embeddings.row(t, n);
            for (std::size_t q = 0; q < d.d; ++q) {
                c[q] = row[q] - model.mean[q];
            }
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                double proj = 0.0;
                for (std::size_t q = 0; q < d.d; ++q) {
                    proj += c[q] * model.components(q, j);
                }
                s += proj * proj;
            }
            f.at(t, n) = std::sqrt(s);
        }
    }
    return top_eta_nodes(f, eta);
}

/// eta nodes per snapshot drawn uniformly without replacement.
inline auto baseline_random(std::size_t nodes, std::size_t frames, std::size_t eta, std::uint64_t seed)
    -> NodeSelection
{
    if (eta < 1 || eta > nodes) {
        throw ConfigError {"eta=" + std::to_string(eta) + " outside [1, " + std::to_string(nodes) + "]"};
    }
    Rng rng {seed};
    NodeSelection sel {nodes, {}};
    std::vector<std::uint32_t> pool(nodes);
    for (std::size_t t = 0; t < frames; ++t) {
        std::iota(pool.begin(), pool.end(), 0U);
        for (std::size_t i = 0; i < eta; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(nodes - i));
            std::swap(pool[i], pool[j]);
        }
        std::vector<std::uint32_t> pick(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(eta));
        std::sort(pick.begin(), pick.end());
        sel.per_t.push_back(std::move(pick));
    }
    return sel;
}

struct AtomMatch
{
    std::size_t truth {};
    std::size_t learned {};
    double abs_cos {};
};

struct RecoveryScore
{
    double mean_max_cos {};
    // One entry per truth atom, in truth order.
    std::vector<AtomMatch> matches;
};

/// Matches each truth atom to a distinct learned row, greedily by
/// descending |cos|, and averages the matched |cos|.
inline auto dictionary_recovery_score(const Matrix& learned_rows, const Matrix& truth_atoms) -> RecoveryScore
{
    if (learned_rows.cols() != truth_atoms.cols()) {
        throw ShapeError {"learned rows have width " + std::to_string(learned_rows.cols()) + ", atoms "
                          + std::to_string(truth_atoms.cols())};
    }
    if (learned_rows.rows() < truth_atoms.rows()) {
        throw ShapeError {"fewer learned rows than truth atoms"};
    }
    auto norm = [](std::span<const double> r) {
        double s = 0.0;
        for (const double x : r) {
            s += x * x;
        }
        return std::sqrt(s);
    };
    struct Pair
    {
        double c;
        std::size_t a;
        std::size_t l;
    };
    std::vector<Pair> pairs;
    for (std::size_t a = 0; a < truth_atoms.rows(); ++a) {
        const auto ra = truth_atoms.row(a);
        const double na = norm(ra);
        for (std::size_t l = 0; l < learned_rows.rows(); ++l) {
            const auto rl = learned_rows.row(l);
            double dot = 0.0;
            for (std::size_t i = 0; i < ra.size(); ++i) {
                dot += ra[i] * rl[i];
            }
            const double denom = na * norm(rl);
            pairs.push_back({denom > 0.0 ? std::abs(dot) / denom : 0.0, a, l});
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.c > y.c; });
    std::vector<char> atom_done(truth_atoms.rows(), 0);
    std::vector<char> row_used(learned_rows.rows(), 0);
    RecoveryScore score;
    score.matches.resize(truth_atoms.rows());
    std::size_t assigned = 0;
    for (const Pair& p : pairs) {
        if (atom_done[p.a] || row_used[p.l]) {
            continue;
        }
        atom_done[p.a] = 1;
        row_used[p.l] = 1;
        score.matches[p.a] = {p.a, p.l, p.c};
        if (++assigned == truth_atoms.rows()) {
            break;
        }
    }
    for (const AtomMatch& m : score.matches) {
        score.mean_max_cos += m.abs_cos;
    }
    score.mean_max_cos /= static_cast<double>(std::max<std::size_t>(1, truth_atoms.rows()));
    return score;
}

/// Table-style CSV: method,precision,recall,f1,jaccard.
inline auto alignment_report_csv(const std::vector<AlignmentSeries>& rows) -> std::string
{
    std::ostringstream out;
    out.precision(17);
    out << "method,precision,recall,f1,jaccard\n";
    for (const AlignmentSeries& s : rows) {
        out << s.method << ',' << s.mean.precision << ',' << s.mean.recall << ',' << s.mean.f1 << ','
            << s.mean.jaccard << '\n';
    }
    return out.str();
}

inline auto alignment_series_csv(const std::vector<AlignmentSeries>& rows) -> std::string
{
    std::ostringstream out;
    out.precision(17);
    out << "method,t,precision,recall,f1,jaccard\n";
    for (const AlignmentSeries& s : rows) {
        for (std::size_t t = 0; t < s.per_t.size(); ++t) {
            const Alignment& a = s.per_t[t];
            out << s.method << ',' << t << ',' << a.precision << ',' << a.recall << ',' << a.f1 << ',' << a.jaccard
                << '\n';
        }
    }
    return out.str();
}

} // namespace saeflow
