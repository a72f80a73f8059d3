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

#include <cmath>
#include <span>
#include <vector>

namespace saeflow {

struct AdamConfig
{
    double learning_rate {1e-3};
    double beta1 {0.9};
    double beta2 {0.999};
    double epsilon {1e-8};
};

struct ParamRef
{
    Matrix* value {};
    const Matrix* grad {};
};

/// Bias-corrected Adam. Moment buffers are allocated on the first step and
/// keyed by position in the parameter list, which must stay fixed.
class Adam
{
public:
    explicit Adam(AdamConfig config = {}) : config_ {config} {}

    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    [[nodiscard]] auto config() const -> const AdamConfig& { return config_; }
    [[nodiscard]] auto steps() const -> long { return step_; }

    void step(std::span<const ParamRef> params)
    {
        if (first_.empty()) {
            for (const ParamRef& p : params) {
                first_.emplace_back(p.value->rows(), p.value->cols());
                second_.emplace_back(p.value->rows(), p.value->cols());
            }
        }
        if (first_.size() != params.size()) {
            throw ConfigError {"Adam: parameter list changed between steps"};
        }
        ++step_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Matrix& w = *params[k].value;
            const Matrix& g = *params[k].grad;
            if (!w.same_shape(g) || !w.same_shape(first_[k])) {
                throw ShapeError {"Adam: parameter " + std::to_string(k) + " is " + shape_string(w)
                                  + " but gradient is " + shape_string(g)};
            }
            Matrix& m = first_[k];
            Matrix& v = second_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                const double m_hat = m[i] / c1;
                const double v_hat = v[i] / c2;
                w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            }
        }
    }

private:
    AdamConfig config_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    long step_ {0};
};

} // namespace saeflow
