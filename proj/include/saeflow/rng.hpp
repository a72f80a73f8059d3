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

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>

namespace saeflow {

/// splitmix64 finalizer. Used to fan a single seed out into independent
/// stage seeds.
constexpr auto splitmix64(std::uint64_t x) -> std::uint64_t
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
}

constexpr auto derive_seed(std::uint64_t seed, std::string_view stage) -> std::uint64_t
{
    // FNV-1a over the stage name, then mixed with the parent seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : stage) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ splitmix64(h));
}

/// Seeded generator with platform-independent uniform and normal draws.
///
/// std::normal_distribution is implementation defined, so the conversions
/// from raw mt19937_64 output are done here.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_{seed} {}

    auto next_u64() -> std::uint64_t { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    auto uniform() -> double
    {
        return static_cast<double>(engine_() >> 11U) * 0x1.0p-53;
    }

    auto uniform(double lo, double hi) -> double { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection.
    auto below(std::uint64_t n) -> std::uint64_t
    {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max()
                                    - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % n;
    }

    // Box-Muller; the second variate is cached.
    auto normal() -> double
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    auto normal(double mean, double stddev) -> double { return mean + stddev * normal(); }

    template <typename It>
    void shuffle(It first, It last)
    {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ {};
    bool has_spare_ {false};
};

} // namespace saeflow
