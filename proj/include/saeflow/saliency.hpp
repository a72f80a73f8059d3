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

// Ranking of latent dimensions by activation statistics, pooled over the
// whole rollout (global) or per snapshot (time-local), and the overlap
// series between the two selections.

#include "saeflow/error.hpp"
#include "saeflow/tensor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace saeflow {

enum class Criterion : std::uint8_t
{
    variance,
    mean_abs,
    entropy,
};

inline auto to_string(Criterion c) -> std::string_view
{
    switch (c) {
    case Criterion::variance:
        return "variance";
    case Criterion::mean_abs:
        return "mean_abs";
    case Criterion::entropy:
        return "entropy";
    }
    return "?";
}

inline auto parse_criterion(std::string_view s) -> std::optional<Criterion>
{
    for (const Criterion c : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
        if (to_string(c) == s) {
            return c;
        }
    }
    return std::nullopt;
}

inline constexpr std::size_t entropy_bins = 32;

/// Scores for every latent dimension. `time` is empty for the global scope.
struct ScoreVector
{
    std::vector<double> scores;
    Criterion criterion {};
    std::optional<std::size_t> time;
};

/// Indices of the selected dimensions, ascending.
struct TopKSet
{
    std::vector<std::uint32_t> indices;
    Criterion criterion {};
    std::optional<std::size_t> time;

    [[nodiscard]] auto size() const -> std::size_t { return indices.size(); }
    auto operator==(const TopKSet&) const -> bool = default;
};

namespace detail {

struct BinEdges
{
    std::vector<double> lo;
    std::vector<double> hi;
};

inline void check_bins(std::size_t bins)
{
    if (bins < 1) {
        throw ConfigError {"entropy needs at least one bin"};
    }
}

// Pooled [min, max] of each dimension over every snapshot and node.
inline auto pooled_ranges(const SparseCodeTensor& codes) -> BinEdges
{
    const Dims d = codes.dims();
    BinEdges e {std::vector<double>(d.d, std::numeric_limits<double>::infinity()),
                std::vector<double>(d.d, -std::numeric_limits<double>::infinity())};
    for (std::size_t t = 0; t < d.t; ++t) {
        for (std::size_t n = 0; n < d.n; ++n) {
            const auto row = codes.row(t, n);
            for (std::size_t k = 0; k < d.d; ++k) {
                e.lo[k] = std::min(e.lo[k], static_cast<double>(row[k]));
                e.hi[k] = std::max(e.hi[k], static_cast<double>(row[k]));
            }
        }
    }
    return e;
}

inline auto bin_of(double x, double lo, double hi, std::size_t bins) -> std::size_t
{
    const double pos = (x - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(pos > 0.0)) {
        return 0;
    }
    return std::min(bins - 1, static_cast<std::size_t>(pos));
}

// Scores over frames [t0, t1).
inline auto score_range(const SparseCodeTensor& codes, Criterion criterion, std::size_t t0, std::size_t t1,
                        const BinEdges& edges, std::size_t bins) -> std::vector<double>
{
    const Dims d = codes.dims();
    const auto m = static_cast<double>((t1 - t0) * d.n);
    std::vector<double> out(d.d, 0.0);
    switch (criterion) {
    case Criterion::mean_abs:
    case Criterion::variance: {
        std::vector<double> mean(d.d, 0.0);
        for (std::size_t t = t0; t < t1; ++t) {
            for (std::size_t n = 0; n < d.n; ++n) {
                const auto row = codes.row(t, n);
                for (std::size_t k = 0; k < d.d; ++k) {
                    mean[k] += criterion == Criterion::mean_abs ? std::abs(static_cast<double>(row[k])) : row[k];
                }
            }
        }
        for (double& v : mean) {
            v /= m;
        }
        if (criterion == Criterion::mean_abs) {
            return mean;
        }
        for (std::size_t t = t0; t < t1; ++t) {
            for (std::size_t n = 0; n < d.n; ++n) {
                const auto row = codes.row(t, n);
                for (std::size_t k = 0; k < d.d; ++k) {
                    const double dev = row[k] - mean[k];
                    out[k] += dev * dev;
                }
            }
        }
        for (double& v : out) {
            v /= m;
        }
        return out;
    }
    case Criterion::entropy: {
        std::vector<std::size_t> counts(d.d * bins, 0);
        for (std::size_t t = t0; t < t1; ++t) {
            for (std::size_t n = 0; n < d.n; ++n) {
                const auto row = codes.row(t, n);
                for (std::size_t k = 0; k < d.d; ++k) {
                    if (edges.hi[k] > edges.lo[k]) {
                        ++counts[k * bins + bin_of(row[k], edges.lo[k], edges.hi[k], bins)];
                    }
                }
            }
        }
        for (std::size_t k = 0; k < d.d; ++k) {
            if (!(edges.hi[k] > edges.lo[k])) {
                continue;
            }
            double h = 0.0;
            for (std::size_t b = 0; b < bins; ++b) {
                const std::size_t c = counts[k * bins + b];
                if (c > 0) {
                    const double p = static_cast<double>(c) / m;
                    h -= p * std::log(p);
                }
            }
            out[k] = std::max(0.0, h);
        }
        return out;
    }
    }
    return out;
}

} // namespace detail

/// Scores each dimension over the pooled rollout, or over snapshot `time`
/// when given. Entropy uses `bins` equal-width bins over the pooled range of
/// the dimension in both scopes.
inline auto score_dimensions(const SparseCodeTensor& codes, Criterion criterion,
                             std::optional<std::size_t> time = std::nullopt, std::size_t bins = entropy_bins)
    -> ScoreVector
{
    detail::check_bins(bins);
    const Dims d = codes.dims();
    if (d.size() == 0) {
        throw ShapeError {"cannot score an empty code tensor"};
    }
    if (time && *time >= d.t) {
        throw ShapeError {"snapshot " + std::to_string(*time) + " out of range (" + std::to_string(d.t)
                          + " frames)"};
    }
    const detail::BinEdges edges = criterion == Criterion::entropy ? detail::pooled_ranges(codes) : detail::BinEdges {};
    const std::size_t t0 = time.value_or(0);
    const std::size_t t1 = time ? *time + 1 : d.t;
    return {detail::score_range(codes, criterion, t0, t1, edges, bins), criterion, time};
}

/// Time-local scores for every snapshot.
inline auto score_all_snapshots(const SparseCodeTensor& codes, Criterion criterion, std::size_t bins = entropy_bins)
    -> std::vector<ScoreVector>
{
    detail::check_bins(bins);
    const Dims d = codes.dims();
    if (d.size() == 0) {
        throw ShapeError {"cannot score an empty code tensor"};
    }
    const detail::BinEdges edges = criterion == Criterion::entropy ? detail::pooled_ranges(codes) : detail::BinEdges {};
    std::vector<ScoreVector> out;
    out.reserve(d.t);
    for (std::size_t t = 0; t < d.t; ++t) {
        out.push_back({detail::score_range(codes, criterion, t, t + 1, edges, bins), criterion, t});
    }
    return out;
}

/// Dimension ids ordered by descending score, ties by ascending id.
inline auto rank_order(const std::vector<double>& scores) -> std::vector<std::uint32_t>
{
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
    return order;
}

inline auto top_k(const ScoreVector& s, std::size_t k) -> TopKSet
{
    if (k < 1 || k > s.scores.size()) {
        throw ConfigError {"K=" + std::to_string(k) + " outside [1, " + std::to_string(s.scores.size()) + "]"};
    }
    auto order = rank_order(s.scores);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return {std::move(order), s.criterion, s.time};
}

/// |A n B| / |A u B|, with 1 for two empty sets.
inline auto jaccard(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) -> double
{
    std::vector<std::uint32_t> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    const std::size_t uni = a.size() + b.size() - common.size();
    if (uni == 0) {
        spdlog::debug("jaccard of two empty sets taken as 1");
        return 1.0;
    }
    return static_cast<double>(common.size()) / static_cast<double>(uni);
}

inline auto jaccard_series(const TopKSet& global, const std::vector<TopKSet>& local) -> std::vector<double>
{
    std::vector<double> out;
    out.reserve(local.size());
    for (const TopKSet& s : local) {
        out.push_back(jaccard(global.indices, s.indices));
    }
    return out;
}

inline auto mean_of(const std::vector<double>& v) -> double
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// CSV with one row per dimension: dimension,score,rank (rank 1 = highest).
inline auto scores_csv(const ScoreVector& s) -> std::string
{
    const auto order = rank_order(s.scores);
    std::vector<std::size_t> rank(s.scores.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        rank[order[r]] = r + 1;
    }
    std::ostringstream out;
    out.precision(17);
    out << "dimension,score,rank\n";
    for (std::size_t k = 0; k < s.scores.size(); ++k) {
        out << k << ',' << s.scores[k] << ',' << rank[k] << '\n';
    }
    return out.str();
}

inline auto jaccard_csv(const std::vector<double>& series) -> std::string
{
    std::ostringstream out;
    out.precision(17);
    out << "t,J\n";
    for (std::size_t t = 0; t < series.size(); ++t) {
        out << t << ',' << series[t] << '\n';
    }
    return out.str();
}

} // namespace saeflow
