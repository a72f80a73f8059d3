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
#include "saeflow/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

namespace saeflow {

/// T snapshots of per-node (u, v, p) on one mesh, stored as a T x N x 3
/// float tensor. Pressure is zero-filled when the source has none.
class FlowSequence
{
public:
    static constexpr std::size_t channels = 3;

    FlowSequence() = default;

    FlowSequence(Tensor state, double dt) : state_ {std::move(state)}, dt_ {dt}
    {
        if (state_.dims().d != channels) {
            throw FormatError {"flow tensor must have 3 channels (u, v, p), got "
                               + std::to_string(state_.dims().d)};
        }
        if (state_.dims().t < 2) {
            throw FormatError {"flow needs at least 2 snapshots, got " + std::to_string(state_.dims().t)};
        }
        if (!(dt_ > 0.0) || !std::isfinite(dt_)) {
            throw FormatError {"flow dt must be positive and finite"};
        }
        validate(state_);
    }

    [[nodiscard]] auto frames() const -> std::size_t { return state_.dims().t; }
    [[nodiscard]] auto nodes() const -> std::size_t { return state_.dims().n; }
    [[nodiscard]] auto dt() const -> double { return dt_; }
    [[nodiscard]] auto state() const -> const Tensor& { return state_; }

    [[nodiscard]] auto u(std::size_t t, std::size_t n) const -> float { return state_.at(t, n, 0); }
    [[nodiscard]] auto v(std::size_t t, std::size_t n) const -> float { return state_.at(t, n, 1); }
    [[nodiscard]] auto p(std::size_t t, std::size_t n) const -> float { return state_.at(t, n, 2); }

    auto operator==(const FlowSequence&) const -> bool = default;

private:
    Tensor state_;
    double dt_ {1.0};
};

inline auto flow_sidecar_path(const std::filesystem::path& path) -> std::filesystem::path
{
    auto sidecar = path;
    sidecar += ".meta.json";
    return sidecar;
}

/// Writes the NTEN state tensor plus "<path>.meta.json" carrying dt.
inline void save_flow(const FlowSequence& flow, const std::filesystem::path& path)
{
    save_tensor(flow.state(), path);
    std::ofstream meta {flow_sidecar_path(path), std::ios::trunc};
    if (!meta) {
        throw IoError {"cannot write " + flow_sidecar_path(path).string()};
    }
    meta << nlohmann::json {{"dt", flow.dt()}, {"channels", {"u", "v", "p"}}}.dump(2) << '\n';
}

inline auto load_flow(const std::filesystem::path& path) -> FlowSequence
{
    auto state = load_tensor<PlainTag>(path);
    std::ifstream meta {flow_sidecar_path(path)};
    if (!meta) {
        throw IoError {"missing flow metadata " + flow_sidecar_path(path).string()};
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError {flow_sidecar_path(path).string() + ": " + e.what()};
    }
    if (!doc.contains("dt") || !doc["dt"].is_number()) {
        throw FormatError {flow_sidecar_path(path).string() + ": missing numeric \"dt\""};
    }
    return FlowSequence {std::move(state), doc["dt"].get<double>()};
}

} // namespace saeflow
