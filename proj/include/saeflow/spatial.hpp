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

// Mapping selected latent dimensions back onto the mesh: per-node
// cumulative scores, top-eta node sets, and CSV/SVG export.

#include "saeflow/error.hpp"
#include "saeflow/mesh.hpp"
#include "saeflow/saliency.hpp"
#include "saeflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace saeflow {

/// a(t, i) over T snapshots and N nodes.
struct NodeScoreField
{
    std::size_t frames {};
    std::size_t nodes {};
    std::vector<double> values;

    [[nodiscard]] auto at(std::size_t t, std::size_t i) const -> double { return values[t * nodes + i]; }
    auto at(std::size_t t, std::size_t i) -> double& { return values[t * nodes + i]; }
};

/// Per-snapshot node sets, each sorted ascending.
struct NodeSelection
{
    std::size_t nodes {};
    std::vector<std::vector<std::uint32_t>> per_t;

    auto operator==(const NodeSelection&) const -> bool = default;
};

namespace detail {

inline void check_dimensions(const TopKSet& set, std::size_t d_hid)
{
    for (const std::uint32_t d : set.indices) {
        if (d >= d_hid) {
            throw ConfigError {"dimension " + std::to_string(d) + " out of range (codes have "
                               + std::to_string(d_hid) + ")"};
        }
    }
}

} // namespace detail

/// a(t, i) = sum of z(t, i, d) over d in the set for snapshot t, summed in
/// ascending d.
inline auto aggregate_node_scores(const SparseCodeTensor& codes, const std::vector<TopKSet>& per_t) -> NodeScoreField
{
    const Dims d = codes.dims();
    if (per_t.size() != d.t) {
        throw ShapeError {"got " + std::to_string(per_t.size()) + " dimension sets for " + std::to_string(d.t)
                          + " snapshots"};
    }
    NodeScoreField f {d.t, d.n, std::vector<double>(d.t * d.n, 0.0)};
    for (std::size_t t = 0; t < d.t; ++t) {
        detail::check_dimensions(per_t[t], d.d);
        for (std::size_t n = 0; n < d.n; ++n) {
            const auto row = codes.row(t, n);
            double sum = 0.0;
            for (const std::uint32_t k : per_t[t].indices) {
                sum += row[k];
            }
            f.at(t, n) = sum;
        }
    }
    return f;
}

/// Same dimension set for every snapshot.
inline auto aggregate_node_scores(const SparseCodeTensor& codes, const TopKSet& set) -> NodeScoreField
{
    return aggregate_node_scores(codes, std::vector<TopKSet>(codes.dims().t, set));
}

/// Top-eta nodes of each snapshot by score, ties by ascending node index.
inline auto top_eta_nodes(const NodeScoreField& field, std::size_t eta) -> NodeSelection
{
    if (eta < 1 || eta > field.nodes) {
        throw ConfigError {"eta=" + std::to_string(eta) + " outside [1, " + std::to_string(field.nodes) + "]"};
    }
    NodeSelection sel {field.nodes, {}};
    std::vector<std::uint32_t> order(field.nodes);
    for (std::size_t t = 0; t < field.frames; ++t) {
        std::iota(order.begin(), order.end(), 0U);
        const double* row = &field.values[t * field.nodes];
        std::stable_sort(order.begin(), order.end(), [row](std::uint32_t a, std::uint32_t b) { return row[a] > row[b]; });
        std::vector<std::uint32_t> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(eta));
        std::sort(top.begin(), top.end());
        sel.per_t.push_back(std::move(top));
    }
    return sel;
}

/// Top-eta nodes by the activation of a single dimension.
inline auto dimension_footprint(const SparseCodeTensor& codes, std::size_t dim, std::size_t eta) -> NodeSelection
{
    return top_eta_nodes(aggregate_node_scores(codes, TopKSet {{static_cast<std::uint32_t>(dim)}, {}, {}}), eta);
}

/// Dense CSV: one row per (t, node) with the node position and a 0/1 flag.
inline auto selection_csv(const Mesh& mesh, const NodeSelection& sel) -> std::string
{
    if (sel.nodes != mesh.size()) {
        throw ShapeError {"selection covers " + std::to_string(sel.nodes) + " nodes, mesh has "
                          + std::to_string(mesh.size())};
    }
    std::ostringstream out;
    out.precision(17);
    out << "t,node,x,y,selected\n";
    std::vector<char> flag(mesh.size());
    for (std::size_t t = 0; t < sel.per_t.size(); ++t) {
        std::fill(flag.begin(), flag.end(), 0);
        for (const std::uint32_t n : sel.per_t[t]) {
            flag[n] = 1;
        }
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            out << t << ',' << n << ',' << mesh.positions()[n].x << ',' << mesh.positions()[n].y << ','
                << static_cast<int>(flag[n]) << '\n';
        }
    }
    return out.str();
}

struct Circle
{
    Point center;
    double radius {};
};

/// SVG with one panel per requested snapshot, stacked vertically. Mesh
/// nodes are gray, selected nodes red, and the cylinder is outlined.
inline auto selection_svg(const Mesh& mesh, const NodeSelection& sel, const std::vector<std::size_t>& times,
                          const Circle& cylinder) -> std::string
{
    if (sel.nodes != mesh.size()) {
        throw ShapeError {"selection covers " + std::to_string(sel.nodes) + " nodes, mesh has "
                          + std::to_string(mesh.size())};
    }
    double xmin = cylinder.center.x - cylinder.radius;
    double xmax = cylinder.center.x + cylinder.radius;
    double ymin = cylinder.center.y - cylinder.radius;
    double ymax = cylinder.center.y + cylinder.radius;
    for (const Point p : mesh.positions()) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const double width_px = 800.0;
    const double scale = width_px / std::max(xmax - xmin, 1e-12);
    const double margin = 10.0;
    const double title = 16.0;
    const double panel_h = (ymax - ymin) * scale + 2.0 * margin + title;
    const double total_w = width_px + 2.0 * margin;
    const double total_h = panel_h * static_cast<double>(times.size());

    std::string out;
    char buf[256];
    auto emit = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        out += buf;
    };
    emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.1f\" height=\"%.1f\" viewBox=\"0 0 %.1f %.1f\">\n",
         total_w, total_h, total_w, total_h);
    emit("<rect width=\"%.1f\" height=\"%.1f\" fill=\"white\"/>\n", total_w, total_h);
    std::vector<char> flag(mesh.size());
    for (std::size_t p = 0; p < times.size(); ++p) {
        const std::size_t t = times[p];
        if (t >= sel.per_t.size()) {
            throw ShapeError {"snapshot " + std::to_string(t) + " not in selection (" + std::to_string(sel.per_t.size())
                              + " frames)"};
        }
        const double y0 = static_cast<double>(p) * panel_h;
        auto px = [&](double x) { return margin + (x - xmin) * scale; };
        auto py = [&](double y) { return y0 + title + margin + (ymax - y) * scale; };
        emit("<g id=\"t%zu\">\n", t);
        emit("<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">t = %zu, %zu selected</text>\n",
             margin, y0 + 13.0, t, sel.per_t[t].size());
        std::fill(flag.begin(), flag.end(), 0);
        for (const std::uint32_t n : sel.per_t[t]) {
            flag[n] = 1;
        }
        for (std::size_t n = 0; n < mesh.size(); ++n) {
            if (!flag[n]) {
                emit("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.5\" fill=\"#b0b0b0\"/>\n", px(mesh.positions()[n].x),
                     py(mesh.positions()[n].y));
            }
        }
        for (const std::uint32_t n : sel.per_t[t]) {
            emit("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"#d62728\"/>\n", px(mesh.positions()[n].x),
                 py(mesh.positions()[n].y));
        }
        emit("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
             px(cylinder.center.x), py(cylinder.center.y), cylinder.radius * scale);
        out += "</g>\n";
    }
    out += "</svg>\n";
    return out;
}

} // namespace saeflow
