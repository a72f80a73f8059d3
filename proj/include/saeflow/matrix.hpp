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

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace saeflow {

/// Row-major dense matrix of doubles.
class Matrix
{
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_ {rows}, cols_ {cols}, data_(rows * cols, fill)
    {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_ {rows}, cols_ {cols}, data_ {std::move(data)}
    {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError {"matrix data has " + std::to_string(data_.size()) + " entries, expected "
                              + std::to_string(rows_ * cols_)};
        }
    }

    static auto scalar(double x) -> Matrix { return Matrix {1, 1, x}; }

    static auto identity(std::size_t n) -> Matrix
    {
        Matrix m {n, n};
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    [[nodiscard]] auto rows() const -> std::size_t { return rows_; }
    [[nodiscard]] auto cols() const -> std::size_t { return cols_; }
    [[nodiscard]] auto size() const -> std::size_t { return data_.size(); }
    [[nodiscard]] auto empty() const -> bool { return data_.empty(); }

    auto operator()(std::size_t r, std::size_t c) -> double& { return data_[r * cols_ + c]; }
    auto operator()(std::size_t r, std::size_t c) const -> double { return data_[r * cols_ + c]; }
    auto operator[](std::size_t i) -> double& { return data_[i]; }
    auto operator[](std::size_t i) const -> double { return data_[i]; }

    auto row(std::size_t r) -> std::span<double> { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] auto row(std::size_t r) const -> std::span<const double>
    {
        return {data_.data() + r * cols_, cols_};
    }

    auto values() -> std::span<double> { return data_; }
    [[nodiscard]] auto values() const -> std::span<const double> { return data_; }

    void fill(double x) { std::fill(data_.begin(), data_.end(), x); }

    [[nodiscard]] auto same_shape(const Matrix& other) const -> bool
    {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    auto operator==(const Matrix&) const -> bool = default;

private:
    std::size_t rows_ {};
    std::size_t cols_ {};
    std::vector<double> data_;
};

inline auto shape_string(const Matrix& m) -> std::string
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace saeflow
