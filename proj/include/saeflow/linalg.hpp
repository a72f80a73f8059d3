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
#include "saeflow/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace saeflow {

struct Eigensystem
{
    // Descending eigenvalues.
    std::vector<double> values;
    // Column k is the unit eigenvector for values[k].
    Matrix vectors;
    int sweeps {};
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps until the
/// off-diagonal Frobenius norm drops below `tolerance`.
inline auto jacobi_eigen(Matrix a, double tolerance = 1e-10, int max_sweeps = 100) -> Eigensystem
{
    const std::size_t n = a.rows();
    if (a.cols() != n) {
        throw ShapeError {"jacobi_eigen needs a square matrix, got " + shape_string(a)};
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double scale = std::max({std::abs(a(i, j)), std::abs(a(j, i)), 1.0});
            if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale) {
                throw ConfigError {"jacobi_eigen: matrix is not symmetric"};
            }
        }
    }
    Matrix v = Matrix::identity(n);
    auto off_norm = [&a, n] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) {
                    s += a(i, j) * a(i, j);
                }
            }
        }
        return std::sqrt(s);
    };
    int sweep = 0;
    for (; sweep < max_sweeps && off_norm() > tolerance; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                // Rotation angle from the stable tan formula.
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (off_norm() > tolerance) {
        throw NumericalError {"jacobi_eigen did not converge in " + std::to_string(max_sweeps) + " sweeps"};
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&a](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    Eigensystem out;
    out.values.resize(n);
    out.vectors = Matrix {n, n};
    out.sweeps = sweep;
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) {
            out.vectors(i, k) = v(i, order[k]);
        }
    }
    return out;
}

} // namespace saeflow
