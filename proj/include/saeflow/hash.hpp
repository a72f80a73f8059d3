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

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace saeflow {

/// Lowercase hex SHA-256 of a byte range.
inline auto sha256_hex(std::span<const unsigned char> bytes) -> std::string
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest {};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error {"SHA-256 digest failed"};
    }
    static constexpr std::string_view hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4U];
        out += hex[digest[i] & 0xFU];
    }
    return out;
}

inline auto sha256_hex(std::string_view text) -> std::string
{
    return sha256_hex(std::span {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline auto sha256_file(const std::filesystem::path& path) -> std::string
{
    return sha256_hex(std::span<const unsigned char> {read_file_bytes(path)});
}

} // namespace saeflow
