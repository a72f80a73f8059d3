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

// Dense T x N x D tensors and the NTEN binary format.
//
// Layout is row-major with the snapshot index outermost, then node, then
// channel, so every snapshot is one contiguous slice.
//
// NTEN: "NTEN" | version u32 = 1 | T u32 | N u32 | D u32 | reserved u32 = 0
//       | T*N*D float32, all little-endian.

#include "saeflow/error.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace saeflow {

struct Dims
{
    std::size_t t {};
    std::size_t n {};
    std::size_t d {};

    [[nodiscard]] auto size() const -> std::size_t { return t * n * d; }
    auto operator==(const Dims&) const -> bool = default;
};

inline auto to_string(const Dims& dims) -> std::string
{
    return std::to_string(dims.t) + "x" + std::to_string(dims.n) + "x" + std::to_string(dims.d);
}

struct PlainTag
{};
struct EmbeddingTag
{};
struct SparseCodeTag
{};

/// Float tensor with a phantom tag so embeddings and sparse codes cannot be
/// swapped by accident.
template <typename Tag>
class Tensor3
{
public:
    Tensor3() = default;

    explicit Tensor3(Dims dims) : dims_ {dims}, data_(dims.size(), 0.0F) {}

    Tensor3(Dims dims, std::vector<float> data) : dims_ {dims}, data_ {std::move(data)}
    {
        if (data_.size() != dims_.size()) {
            throw ShapeError {"tensor payload has " + std::to_string(data_.size())
                              + " values, dims " + to_string(dims_) + " need "
                              + std::to_string(dims_.size())};
        }
    }

    // Re-tag a tensor of another kind; contents are copied unchanged.
    template <typename Other>
    static auto from(const Tensor3<Other>& other) -> Tensor3
    {
        return Tensor3 {other.dims(), {other.values().begin(), other.values().end()}};
    }

    [[nodiscard]] auto dims() const -> const Dims& { return dims_; }
    [[nodiscard]] auto values() const -> std::span<const float> { return data_; }
    auto values() -> std::span<float> { return data_; }

    [[nodiscard]] auto index(std::size_t t, std::size_t n, std::size_t d) const -> std::size_t
    {
        return (t * dims_.n + n) * dims_.d + d;
    }

    [[nodiscard]] auto at(std::size_t t, std::size_t n, std::size_t d) const -> float
    {
        return data_[index(t, n, d)];
    }
    auto at(std::size_t t, std::size_t n, std::size_t d) -> float& { return data_[index(t, n, d)]; }

    [[nodiscard]] auto row(std::size_t t, std::size_t n) const -> std::span<const float>
    {
        return std::span<const float> {data_}.subspan(index(t, n, 0), dims_.d);
    }
    auto row(std::size_t t, std::size_t n) -> std::span<float>
    {
        return std::span<float> {data_}.subspan(index(t, n, 0), dims_.d);
    }

    [[nodiscard]] auto frame(std::size_t t) const -> std::span<const float>
    {
        return std::span<const float> {data_}.subspan(index(t, 0, 0), dims_.n * dims_.d);
    }

    auto operator==(const Tensor3& other) const -> bool
    {
        return dims_ == other.dims_
               && std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
    }

private:
    Dims dims_ {};
    std::vector<float> data_;
};

using Tensor = Tensor3<PlainTag>;
using EmbeddingTensor = Tensor3<EmbeddingTag>;
using SparseCodeTensor = Tensor3<SparseCodeTag>;

/// Checks the per-kind invariants. Errors name the offending (t, n, d).
template <typename Tag>
void validate(const Tensor3<Tag>& tensor)
{
    const Dims& dims = tensor.dims();
    if constexpr (!std::is_same_v<Tag, PlainTag>) {
        if (dims.t == 0 || dims.n == 0 || dims.d == 0) {
            throw FormatError {"tensor dims must be positive, got " + to_string(dims)};
        }
    }
    const auto values = tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float x = values[i];
        const bool bad = !std::isfinite(x) || (std::is_same_v<Tag, SparseCodeTag> && x < 0.0F);
        if (bad) {
            const std::size_t d = i % dims.d;
            const std::size_t n = (i / dims.d) % dims.n;
            const std::size_t t = i / (dims.d * dims.n);
            throw FormatError {std::string {std::isfinite(x) ? "negative code" : "non-finite value"}
                               + " at (t=" + std::to_string(t) + ", n=" + std::to_string(n)
                               + ", d=" + std::to_string(d) + ")"};
        }
    }
}

namespace detail {

inline constexpr std::array<char, 4> nten_magic {'N', 'T', 'E', 'N'};
inline constexpr std::uint32_t nten_version = 1;
inline constexpr std::size_t nten_header_bytes = 24;

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t x)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xFFU));
    }
}

inline auto get_u32(const unsigned char* p) -> std::uint32_t
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8U)
           | (static_cast<std::uint32_t>(p[2]) << 16U) | (static_cast<std::uint32_t>(p[3]) << 24U);
}

inline auto checked_u32(std::size_t x, const char* what) -> std::uint32_t
{
    if (x > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError {std::string {"tensor dimension "} + what + " = " + std::to_string(x)
                           + " does not fit in 32 bits"};
    }
    return static_cast<std::uint32_t>(x);
}

} // namespace detail

/// Serializes to NTEN bytes. Identical tensors give identical bytes.
template <typename Tag>
auto encode_nten(const Tensor3<Tag>& tensor) -> std::vector<unsigned char>
{
    const Dims& dims = tensor.dims();
    std::vector<unsigned char> out;
    out.reserve(detail::nten_header_bytes + 4 * dims.size());
    out.insert(out.end(), detail::nten_magic.begin(), detail::nten_magic.end());
    detail::put_u32(out, detail::nten_version);
    detail::put_u32(out, detail::checked_u32(dims.t, "T"));
    detail::put_u32(out, detail::checked_u32(dims.n, "N"));
    detail::put_u32(out, detail::checked_u32(dims.d, "D"));
    detail::put_u32(out, 0);
    for (const float x : tensor.values()) {
        detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
    }
    return out;
}

template <typename Tag>
auto decode_nten(std::span<const unsigned char> bytes) -> Tensor3<Tag>
{
    if (bytes.size() < detail::nten_header_bytes) {
        throw FormatError {"truncated header: " + std::to_string(bytes.size()) + " bytes"};
    }
    if (std::memcmp(bytes.data(), detail::nten_magic.data(), 4) != 0) {
        throw FormatError {"bad magic"};
    }
    const std::uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != detail::nten_version) {
        throw FormatError {"unsupported version " + std::to_string(version)};
    }
    const Dims dims {detail::get_u32(bytes.data() + 8), detail::get_u32(bytes.data() + 12),
                     detail::get_u32(bytes.data() + 16)};
    const std::size_t payload = bytes.size() - detail::nten_header_bytes;
    if (payload != 4 * dims.size()) {
        throw FormatError {"truncated payload: header claims " + to_string(dims) + " ("
                           + std::to_string(dims.size()) + " floats) but payload holds "
                           + std::to_string(payload / 4) + " floats"};
    }
    std::vector<float> data(dims.size());
    const unsigned char* p = bytes.data() + detail::nten_header_bytes;
    for (std::size_t i = 0; i < data.size(); ++i, p += 4) {
        data[i] = std::bit_cast<float>(detail::get_u32(p));
    }
    Tensor3<Tag> tensor {dims, std::move(data)};
    validate(tensor);
    return tensor;
}

inline auto read_file_bytes(const std::filesystem::path& path) -> std::vector<unsigned char>
{
    std::ifstream in {path, std::ios::binary};
    if (!in) {
        throw IoError {"cannot open " + path.string()};
    }
    return {std::istreambuf_iterator<char> {in}, std::istreambuf_iterator<char> {}};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes)
{
    std::ofstream out {path, std::ios::binary | std::ios::trunc};
    if (!out) {
        throw IoError {"cannot open " + path.string() + " for writing"};
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError {"write failed: " + path.string()};
    }
}

inline auto read_text_file(const std::filesystem::path& path) -> std::string
{
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text)
{
    write_file_bytes(path, std::span {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

template <typename Tag>
void save_tensor(const Tensor3<Tag>& tensor, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_nten(tensor));
}

template <typename Tag>
auto load_tensor(const std::filesystem::path& path) -> Tensor3<Tag>
{
    const auto bytes = read_file_bytes(path);
    try {
        return decode_nten<Tag>(bytes);
    } catch (const FormatError& e) {
        throw FormatError {path.string() + ": " + e.what()};
    }
}

} // namespace saeflow
