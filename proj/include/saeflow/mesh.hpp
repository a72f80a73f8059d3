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

#include "saeflow/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace saeflow {

enum class NodeType : std::uint8_t
{
    fluid = 0,
    wall = 1,
    inflow = 2,
    outflow = 3,
};

inline constexpr std::size_t node_type_count = 4;

inline auto to_string(NodeType type) -> std::string_view
{
    switch (type) {
    case NodeType::fluid:
        return "fluid";
    case NodeType::wall:
        return "wall";
    case NodeType::inflow:
        return "inflow";
    case NodeType::outflow:
        return "outflow";
    }
    return "fluid";
}

inline auto parse_node_type(std::string_view name) -> NodeType
{
    for (const NodeType t : {NodeType::fluid, NodeType::wall, NodeType::inflow, NodeType::outflow}) {
        if (to_string(t) == name) {
            return t;
        }
    }
    throw FormatError {"unknown node type \"" + std::string {name} + "\""};
}

struct Point
{
    double x {};
    double y {};
    auto operator==(const Point&) const -> bool = default;
};

/// Undirected edge, stored with first < second.
struct Edge
{
    std::uint32_t first {};
    std::uint32_t second {};
    auto operator==(const Edge&) const -> bool = default;
    auto operator<=>(const Edge&) const = default;
};

/// Fixed 2D simulation mesh. Construction validates every invariant, so a
/// Mesh object is always well formed.
class Mesh
{
public:
    Mesh() = default;

    Mesh(std::vector<Point> positions, std::vector<NodeType> node_types, std::vector<Edge> edges)
        : positions_ {std::move(positions)}, node_types_ {std::move(node_types)}, edges_ {std::move(edges)}
    {
        if (positions_.size() != node_types_.size()) {
            throw FormatError {"mesh has " + std::to_string(positions_.size()) + " positions but "
                               + std::to_string(node_types_.size()) + " node types"};
        }
        for (std::size_t i = 0; i < positions_.size(); ++i) {
            if (!std::isfinite(positions_[i].x) || !std::isfinite(positions_[i].y)) {
                throw FormatError {"non-finite position at node " + std::to_string(i)};
            }
        }
        const auto n = static_cast<std::uint32_t>(positions_.size());
        for (std::size_t k = 0; k < edges_.size(); ++k) {
            Edge& e = edges_[k];
            if (e.first >= n || e.second >= n) {
                throw FormatError {"edge " + std::to_string(k) + " [" + std::to_string(e.first) + ","
                                   + std::to_string(e.second) + "] references invalid node index (mesh has "
                                   + std::to_string(n) + " nodes)"};
            }
            if (e.first == e.second) {
                throw FormatError {"edge " + std::to_string(k) + " is a self-loop on node "
                                   + std::to_string(e.first)};
            }
            if (e.first > e.second) {
                std::swap(e.first, e.second);
            }
        }
        std::vector<Edge> sorted = edges_;
        std::sort(sorted.begin(), sorted.end());
        const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
        if (dup != sorted.end()) {
            throw FormatError {"duplicate edge [" + std::to_string(dup->first) + ","
                               + std::to_string(dup->second) + "]"};
        }
        adjacency_.assign(positions_.size(), {});
        for (const Edge& e : edges_) {
            adjacency_[e.first].push_back(e.second);
            adjacency_[e.second].push_back(e.first);
        }
        for (auto& nbrs : adjacency_) {
            std::sort(nbrs.begin(), nbrs.end());
        }
    }

    [[nodiscard]] auto size() const -> std::size_t { return positions_.size(); }
    [[nodiscard]] auto positions() const -> const std::vector<Point>& { return positions_; }
    [[nodiscard]] auto node_types() const -> const std::vector<NodeType>& { return node_types_; }
    [[nodiscard]] auto edges() const -> const std::vector<Edge>& { return edges_; }
    // Sorted neighbor lists; symmetric by construction.
    [[nodiscard]] auto adjacency() const -> const std::vector<std::vector<std::uint32_t>>& { return adjacency_; }

    [[nodiscard]] auto count(NodeType type) const -> std::size_t
    {
        return static_cast<std::size_t>(std::count(node_types_.begin(), node_types_.end(), type));
    }

    // Structural equality: same nodes, same types, same edge set.
    auto operator==(const Mesh& other) const -> bool
    {
        if (positions_ != other.positions_ || node_types_ != other.node_types_) {
            return false;
        }
        auto a = edges_;
        auto b = other.edges_;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        return a == b;
    }

private:
    std::vector<Point> positions_;
    std::vector<NodeType> node_types_;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::uint32_t>> adjacency_;
};

namespace detail {

inline auto format_double17(double x) -> std::string
{
    std::array<char, 40> buf {};
    std::snprintf(buf.data(), buf.size(), "%.17g", x);
    return buf.data();
}

} // namespace detail

/// Mesh document: {"positions": [[x,y],...], "node_type": [...], "edges": [[i,j],...]}.
/// Coordinates carry 17 significant digits, so load(save(m)) is exact.
inline auto mesh_to_json_text(const Mesh& mesh) -> std::string
{
    std::ostringstream out;
    out << "{\n  \"positions\": [";
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        const Point& p = mesh.positions()[i];
        out << (i == 0 ? "\n    " : ",\n    ") << '[' << detail::format_double17(p.x) << ", "
            << detail::format_double17(p.y) << ']';
    }
    out << "\n  ],\n  \"node_type\": [";
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        out << (i == 0 ? "" : ", ") << '"' << to_string(mesh.node_types()[i]) << '"';
    }
    out << "],\n  \"edges\": [";
    for (std::size_t k = 0; k < mesh.edges().size(); ++k) {
        const Edge& e = mesh.edges()[k];
        out << (k == 0 ? "\n    " : ",\n    ") << '[' << e.first << ", " << e.second << ']';
    }
    out << "\n  ]\n}\n";
    return out.str();
}

inline auto mesh_from_json_text(std::string_view text) -> Mesh
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError {std::string {"malformed mesh document: "} + e.what()};
    }
    for (const char* key : {"positions", "node_type", "edges"}) {
        if (!doc.contains(key) || !doc[key].is_array()) {
            throw FormatError {std::string {"mesh document: missing array \""} + key + "\""};
        }
    }
    std::vector<Point> positions;
    positions.reserve(doc["positions"].size());
    for (std::size_t i = 0; i < doc["positions"].size(); ++i) {
        const auto& p = doc["positions"][i];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
            throw FormatError {"mesh document: positions[" + std::to_string(i) + "] is not [x, y]"};
        }
        positions.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    std::vector<NodeType> types;
    types.reserve(doc["node_type"].size());
    for (std::size_t i = 0; i < doc["node_type"].size(); ++i) {
        const auto& t = doc["node_type"][i];
        if (!t.is_string()) {
            throw FormatError {"mesh document: node_type[" + std::to_string(i) + "] is not a string"};
        }
        types.push_back(parse_node_type(t.get<std::string>()));
    }
    std::vector<Edge> edges;
    edges.reserve(doc["edges"].size());
    for (std::size_t k = 0; k < doc["edges"].size(); ++k) {
        const auto& e = doc["edges"][k];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned()) {
            throw FormatError {"mesh document: edges[" + std::to_string(k) + "] is not [i, j]"};
        }
        const auto i = e[0].get<std::uint64_t>();
        const auto j = e[1].get<std::uint64_t>();
        if (i > std::numeric_limits<std::uint32_t>::max() || j > std::numeric_limits<std::uint32_t>::max()) {
            throw FormatError {"mesh document: edges[" + std::to_string(k) + "] index out of range"};
        }
        edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
    }
    return Mesh {std::move(positions), std::move(types), std::move(edges)};
}

inline void save_mesh(const Mesh& mesh, const std::filesystem::path& path)
{
    std::ofstream out {path, std::ios::trunc};
    if (!out) {
        throw IoError {"cannot open " + path.string() + " for writing"};
    }
    out << mesh_to_json_text(mesh);
    if (!out) {
        throw IoError {"write failed: " + path.string()};
    }
}

inline auto load_mesh(const std::filesystem::path& path) -> Mesh
{
    std::ifstream in {path};
    if (!in) {
        throw IoError {"cannot open " + path.string()};
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return mesh_from_json_text(buf.str());
    } catch (const FormatError& e) {
        throw FormatError {path.string() + ": " + e.what()};
    }
}

} // namespace saeflow
