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

// Reverse-mode differentiation over a fixed primitive set.
//
// A Tape is built once as a static graph of records, each producing one
// value. Leaves are bound to matrices before forward(); forward() replays
// the records in order and backward() walks them in reverse. Rebinding a
// leaf and calling forward() again reuses the graph, which is what training
// loops and finite-difference probes do.

#include "saeflow/error.hpp"
#include "saeflow/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace saeflow::grad {

enum class OpKind : std::uint8_t
{
    leaf,
    affine,
    relu,
    layernorm,
    residual_add,
    neighbor_sum,
    gather_rows,
    concat,
    mse,
    l1_penalty,
    scalar_add,
    scalar_scale,
};

inline auto to_string(OpKind kind) -> std::string_view
{
    switch (kind) {
    case OpKind::leaf:
        return "leaf";
    case OpKind::affine:
        return "affine";
    case OpKind::relu:
        return "relu";
    case OpKind::layernorm:
        return "layernorm";
    case OpKind::residual_add:
        return "residual_add";
    case OpKind::neighbor_sum:
        return "neighbor_sum";
    case OpKind::gather_rows:
        return "gather_rows";
    case OpKind::concat:
        return "concat";
    case OpKind::mse:
        return "mse";
    case OpKind::l1_penalty:
        return "l1_penalty";
    case OpKind::scalar_add:
        return "scalar_add";
    case OpKind::scalar_scale:
        return "scalar_scale";
    }
    return "?";
}

struct ValueId
{
    std::uint32_t index {};
    auto operator<=>(const ValueId&) const = default;
};

using IndexList = std::shared_ptr<const std::vector<std::uint32_t>>;

class Tape
{
public:
    static constexpr double layernorm_epsilon = 1e-5;

    // Free input or trainable parameter; must be bound before forward().
    auto leaf(std::string name) -> ValueId
    {
        Record rec {OpKind::leaf, {}};
        rec.name = std::move(name);
        return push(std::move(rec));
    }

    void bind(ValueId id, Matrix value)
    {
        Record& rec = records_.at(id.index);
        if (rec.kind != OpKind::leaf) {
            throw ConfigError {"cannot bind non-leaf value #" + std::to_string(id.index)};
        }
        values_[id.index] = std::move(value);
        rec.bound = true;
        forwarded_ = false;
    }

    // Mutable access to a bound leaf, used by optimizers and probes.
    auto leaf_value(ValueId id) -> Matrix&
    {
        if (records_.at(id.index).kind != OpKind::leaf) {
            throw ConfigError {"value #" + std::to_string(id.index) + " is not a leaf"};
        }
        forwarded_ = false;
        return values_[id.index];
    }

    [[nodiscard]] auto find(std::string_view name) const -> ValueId
    {
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (records_[i].kind == OpKind::leaf && records_[i].name == name) {
                return ValueId {static_cast<std::uint32_t>(i)};
            }
        }
        throw ConfigError {"no leaf named \"" + std::string {name} + "\""};
    }

    // x (M x in) * w (in x out) + b (1 x out)
    auto affine(ValueId x, ValueId w, ValueId b) -> ValueId { return push(Record {OpKind::affine, {x, w, b}}); }

    auto relu(ValueId x) -> ValueId { return push(Record {OpKind::relu, {x}}); }

    // Per-row normalization to zero mean and unit variance, no gain or bias.
    auto layernorm(ValueId x) -> ValueId { return push(Record {OpKind::layernorm, {x}}); }

    // a + b; b may also be a single row broadcast over the rows of a.
    auto residual_add(ValueId a, ValueId b) -> ValueId { return push(Record {OpKind::residual_add, {a, b}}); }

    // out[r] = sum of edge rows e with receivers[e] == r. Each node sums its
    // incoming rows in lexicographic order of their values, so the result
    // does not depend on how edges are numbered.
    auto neighbor_sum(ValueId edge_values, IndexList receivers, std::size_t num_nodes) -> ValueId
    {
        Record rec {OpKind::neighbor_sum, {edge_values}};
        rec.count = num_nodes;
        rec.offsets.assign(num_nodes + 1, 0);
        for (const std::uint32_t r : *receivers) {
            if (r >= num_nodes) {
                throw ShapeError {"neighbor_sum receiver " + std::to_string(r) + " >= node count "
                                  + std::to_string(num_nodes)};
            }
            ++rec.offsets[r + 1];
        }
        std::partial_sum(rec.offsets.begin(), rec.offsets.end(), rec.offsets.begin());
        rec.order.resize(receivers->size());
        std::vector<std::uint32_t> fill(rec.offsets.begin(), rec.offsets.end() - 1);
        for (std::uint32_t e = 0; e < receivers->size(); ++e) {
            rec.order[fill[(*receivers)[e]]++] = e;
        }
        rec.indices = std::move(receivers);
        return push(std::move(rec));
    }

    // out[r] = x[indices[r]]
    auto gather_rows(ValueId x, IndexList indices) -> ValueId
    {
        Record rec {OpKind::gather_rows, {x}};
        rec.indices = std::move(indices);
        return push(std::move(rec));
    }

    // Column-wise concatenation of equally tall blocks.
    auto concat(std::vector<ValueId> parts) -> ValueId
    {
        if (parts.empty()) {
            throw ShapeError {"concat of zero blocks"};
        }
        return push(Record {OpKind::concat, std::move(parts)});
    }

    // Mean over rows of the squared row error: (1/M) sum_r ||p_r - t_r||^2.
    auto mse(ValueId prediction, ValueId target) -> ValueId { return push(Record {OpKind::mse, {prediction, target}}); }

    // lambda * (1/M) sum_r ||x_r||_1
    auto l1_penalty(ValueId x, double lambda) -> ValueId
    {
        Record rec {OpKind::l1_penalty, {x}};
        rec.scalar = lambda;
        return push(std::move(rec));
    }

    auto scalar_add(ValueId a, ValueId b) -> ValueId { return push(Record {OpKind::scalar_add, {a, b}}); }

    auto scalar_scale(ValueId x, double c) -> ValueId
    {
        Record rec {OpKind::scalar_scale, {x}};
        rec.scalar = c;
        return push(std::move(rec));
    }

    void forward()
    {
        kink_hash_ = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            run_forward(i);
        }
        forwarded_ = true;
    }

    // Gradients of the scalar `seed` w.r.t. every value on the tape.
    // Values the seed does not depend on keep a zero gradient.
    void backward(ValueId seed)
    {
        if (!forwarded_) {
            throw ConfigError {"backward called before forward"};
        }
        const Matrix& out = values_.at(seed.index);
        if (out.rows() != 1 || out.cols() != 1) {
            throw ShapeError {"backward seed #" + std::to_string(seed.index) + " is not scalar (shape "
                              + shape_string(out) + ")"};
        }
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (grads_[i].same_shape(values_[i])) {
                grads_[i].fill(0.0);
            } else {
                grads_[i] = Matrix {values_[i].rows(), values_[i].cols()};
            }
        }
        grads_[seed.index](0, 0) = 1.0;
        for (std::size_t i = seed.index + 1; i-- > 0;) {
            run_backward(i);
        }
    }

    [[nodiscard]] auto value(ValueId id) const -> const Matrix& { return values_.at(id.index); }
    [[nodiscard]] auto grad(ValueId id) const -> const Matrix& { return grads_.at(id.index); }
    [[nodiscard]] auto kind(ValueId id) const -> OpKind { return records_.at(id.index).kind; }
    [[nodiscard]] auto name(ValueId id) const -> const std::string& { return records_.at(id.index).name; }
    [[nodiscard]] auto size() const -> std::size_t { return records_.size(); }

    [[nodiscard]] auto leaves() const -> std::vector<ValueId>
    {
        std::vector<ValueId> out;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (records_[i].kind == OpKind::leaf) {
                out.push_back(ValueId {static_cast<std::uint32_t>(i)});
            }
        }
        return out;
    }

    // Hash of every relu mask and l1 sign pattern seen in the last forward.
    // Two evaluations with equal signatures lie on the same smooth piece.
    [[nodiscard]] auto kink_signature() const -> std::uint64_t { return kink_hash_; }

private:
    struct Record
    {
        OpKind kind {};
        std::vector<ValueId> inputs;
        std::string name;
        double scalar {};
        std::size_t count {};
        IndexList indices;
        std::vector<std::uint32_t> offsets;
        std::vector<std::uint32_t> order;
        std::vector<double> saved;
        bool bound {false};

        Record(OpKind k, std::vector<ValueId> in = {}) : kind {k}, inputs {std::move(in)} {}
    };

    auto push(Record rec) -> ValueId
    {
        const auto id = static_cast<std::uint32_t>(records_.size());
        for (const ValueId in : rec.inputs) {
            if (in.index >= id) {
                throw ConfigError {"op #" + std::to_string(id) + " (" + std::string {to_string(rec.kind)}
                                   + ") uses value #" + std::to_string(in.index) + " defined later"};
            }
        }
        records_.push_back(std::move(rec));
        values_.emplace_back();
        grads_.emplace_back();
        forwarded_ = false;
        return ValueId {id};
    }

    [[noreturn]] void shape_fail(std::size_t op, const std::string& detail) const
    {
        throw ShapeError {"op #" + std::to_string(op) + " (" + std::string {to_string(records_[op].kind)}
                          + "): " + detail};
    }

    void mix_kink(std::uint64_t bits)
    {
        kink_hash_ ^= bits;
        kink_hash_ *= 0x100000001b3ULL;
    }

    auto in(std::size_t op, std::size_t k) const -> const Matrix& { return values_[records_[op].inputs[k].index]; }
    auto gin(std::size_t op, std::size_t k) -> Matrix& { return grads_[records_[op].inputs[k].index]; }

    void run_forward(std::size_t op)
    {
        Record& rec = records_[op];
        Matrix& y = values_[op];
        switch (rec.kind) {
        case OpKind::leaf:
            if (!rec.bound) {
                throw ConfigError {"leaf \"" + rec.name + "\" (#" + std::to_string(op) + ") is unbound"};
            }
            return;
        case OpKind::affine: {
            const Matrix& x = in(op, 0);
            const Matrix& w = in(op, 1);
            const Matrix& b = in(op, 2);
            if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
                shape_fail(op, "x " + shape_string(x) + ", W " + shape_string(w) + ", b " + shape_string(b));
            }
            y = Matrix {x.rows(), w.cols()};
            for (std::size_t r = 0; r < x.rows(); ++r) {
                auto yr = y.row(r);
                std::copy(b.values().begin(), b.values().end(), yr.begin());
                for (std::size_t k = 0; k < x.cols(); ++k) {
                    const double xv = x(r, k);
                    const auto wk = w.row(k);
                    for (std::size_t c = 0; c < yr.size(); ++c) {
                        yr[c] += xv * wk[c];
                    }
                }
            }
            return;
        }
        case OpKind::relu: {
            const Matrix& x = in(op, 0);
            y = Matrix {x.rows(), x.cols()};
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const bool on = x[i] > 0.0;
                y[i] = on ? x[i] : 0.0;
                bits = (bits << 1U) | static_cast<std::uint64_t>(on);
                if ((i & 63U) == 63U) {
                    mix_kink(bits);
                    bits = 0;
                }
            }
            mix_kink(bits);
            return;
        }
        case OpKind::layernorm: {
            const Matrix& x = in(op, 0);
            y = Matrix {x.rows(), x.cols()};
            rec.saved.assign(x.rows(), 0.0);
            const auto n = static_cast<double>(x.cols());
            for (std::size_t r = 0; r < x.rows(); ++r) {
                const auto xr = x.row(r);
                double mean = 0.0;
                for (const double v : xr) {
                    mean += v;
                }
                mean /= n;
                double var = 0.0;
                for (const double v : xr) {
                    var += (v - mean) * (v - mean);
                }
                var /= n;
                const double inv_std = 1.0 / std::sqrt(var + layernorm_epsilon);
                rec.saved[r] = inv_std;
                auto yr = y.row(r);
                for (std::size_t c = 0; c < xr.size(); ++c) {
                    yr[c] = (xr[c] - mean) * inv_std;
                }
            }
            return;
        }
        case OpKind::residual_add: {
            const Matrix& a = in(op, 0);
            const Matrix& b = in(op, 1);
            const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
            if (!a.same_shape(b) && !broadcast) {
                shape_fail(op, "a " + shape_string(a) + ", b " + shape_string(b));
            }
            y = a;
            for (std::size_t r = 0; r < a.rows(); ++r) {
                auto yr = y.row(r);
                const auto br = b.row(broadcast ? 0 : r);
                for (std::size_t c = 0; c < yr.size(); ++c) {
                    yr[c] += br[c];
                }
            }
            return;
        }
        case OpKind::neighbor_sum: {
            const Matrix& x = in(op, 0);
            if (x.rows() != rec.indices->size()) {
                shape_fail(op, "edge values " + shape_string(x) + " vs " + std::to_string(rec.indices->size())
                                   + " receivers");
            }
            y = Matrix {rec.count, x.cols()};
            for (std::size_t node = 0; node < rec.count; ++node) {
                const auto first = rec.order.begin() + rec.offsets[node];
                const auto last = rec.order.begin() + rec.offsets[node + 1];
                std::sort(first, last, [&x](std::uint32_t a, std::uint32_t b) {
                    const auto ra = x.row(a);
                    const auto rb = x.row(b);
                    if (std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end())) {
                        return true;
                    }
                    if (std::lexicographical_compare(rb.begin(), rb.end(), ra.begin(), ra.end())) {
                        return false;
                    }
                    return a < b;
                });
                auto yr = y.row(node);
                for (auto it = first; it != last; ++it) {
                    const auto xr = x.row(*it);
                    for (std::size_t c = 0; c < yr.size(); ++c) {
                        yr[c] += xr[c];
                    }
                }
            }
            return;
        }
        case OpKind::gather_rows: {
            const Matrix& x = in(op, 0);
            y = Matrix {rec.indices->size(), x.cols()};
            for (std::size_t r = 0; r < rec.indices->size(); ++r) {
                const std::uint32_t src = (*rec.indices)[r];
                if (src >= x.rows()) {
                    shape_fail(op, "row index " + std::to_string(src) + " out of range for " + shape_string(x));
                }
                const auto xr = x.row(src);
                std::copy(xr.begin(), xr.end(), y.row(r).begin());
            }
            return;
        }
        case OpKind::concat: {
            const std::size_t rows = in(op, 0).rows();
            std::size_t cols = 0;
            for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
                if (in(op, k).rows() != rows) {
                    shape_fail(op, "block 0 has " + std::to_string(rows) + " rows, block " + std::to_string(k)
                                       + " is " + shape_string(in(op, k)));
                }
                cols += in(op, k).cols();
            }
            y = Matrix {rows, cols};
            for (std::size_t r = 0; r < rows; ++r) {
                auto yr = y.row(r);
                std::size_t at = 0;
                for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
                    const auto xr = in(op, k).row(r);
                    std::copy(xr.begin(), xr.end(), yr.begin() + static_cast<std::ptrdiff_t>(at));
                    at += xr.size();
                }
            }
            return;
        }
        case OpKind::mse: {
            const Matrix& p = in(op, 0);
            const Matrix& t = in(op, 1);
            if (!p.same_shape(t) || p.rows() == 0) {
                shape_fail(op, "prediction " + shape_string(p) + ", target " + shape_string(t));
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double d = p[i] - t[i];
                sum += d * d;
            }
            y = Matrix::scalar(sum / static_cast<double>(p.rows()));
            return;
        }
        case OpKind::l1_penalty: {
            const Matrix& x = in(op, 0);
            if (x.rows() == 0) {
                shape_fail(op, "empty input");
            }
            double sum = 0.0;
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                sum += std::abs(x[i]);
                bits = (bits << 2U) | (x[i] > 0.0 ? 1U : (x[i] < 0.0 ? 2U : 0U));
                if ((i & 31U) == 31U) {
                    mix_kink(bits);
                    bits = 0;
                }
            }
            mix_kink(bits);
            y = Matrix::scalar(rec.scalar * sum / static_cast<double>(x.rows()));
            return;
        }
        case OpKind::scalar_add: {
            const Matrix& a = in(op, 0);
            const Matrix& b = in(op, 1);
            if (a.size() != 1 || b.size() != 1) {
                shape_fail(op, "operands " + shape_string(a) + ", " + shape_string(b) + " are not scalars");
            }
            y = Matrix::scalar(a[0] + b[0]);
            return;
        }
        case OpKind::scalar_scale: {
            y = in(op, 0);
            for (double& v : y.values()) {
                v *= rec.scalar;
            }
            return;
        }
        }
    }

    void run_backward(std::size_t op)
    {
        const Record& rec = records_[op];
        const Matrix& gy = grads_[op];
        switch (rec.kind) {
        case OpKind::leaf:
            return;
        case OpKind::affine: {
            const Matrix& x = in(op, 0);
            const Matrix& w = in(op, 1);
            Matrix& gx = gin(op, 0);
            Matrix& gw = gin(op, 1);
            Matrix& gb = gin(op, 2);
            for (std::size_t r = 0; r < x.rows(); ++r) {
                const auto gr = gy.row(r);
                for (std::size_t c = 0; c < gr.size(); ++c) {
                    gb[c] += gr[c];
                }
                for (std::size_t k = 0; k < x.cols(); ++k) {
                    const auto wk = w.row(k);
                    const double xv = x(r, k);
                    auto gwk = gw.row(k);
                    double acc = 0.0;
                    for (std::size_t c = 0; c < gr.size(); ++c) {
                        acc += gr[c] * wk[c];
                        gwk[c] += xv * gr[c];
                    }
                    gx(r, k) += acc;
                }
            }
            return;
        }
        case OpKind::relu: {
            const Matrix& x = in(op, 0);
            Matrix& gx = gin(op, 0);
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] > 0.0) {
                    gx[i] += gy[i];
                }
            }
            return;
        }
        case OpKind::layernorm: {
            const Matrix& y = values_[op];
            Matrix& gx = gin(op, 0);
            const auto n = static_cast<double>(y.cols());
            for (std::size_t r = 0; r < y.rows(); ++r) {
                const auto yr = y.row(r);
                const auto gr = gy.row(r);
                double mean_g = 0.0;
                double mean_gy = 0.0;
                for (std::size_t c = 0; c < yr.size(); ++c) {
                    mean_g += gr[c];
                    mean_gy += gr[c] * yr[c];
                }
                mean_g /= n;
                mean_gy /= n;
                auto gxr = gx.row(r);
                for (std::size_t c = 0; c < yr.size(); ++c) {
                    gxr[c] += rec.saved[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                }
            }
            return;
        }
        case OpKind::residual_add: {
            Matrix& ga = gin(op, 0);
            Matrix& gb = gin(op, 1);
            const bool broadcast = !ga.same_shape(gb);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                ga[i] += gy[i];
            }
            if (broadcast) {
                for (std::size_t r = 0; r < gy.rows(); ++r) {
                    const auto gr = gy.row(r);
                    for (std::size_t c = 0; c < gr.size(); ++c) {
                        gb[c] += gr[c];
                    }
                }
            } else {
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    gb[i] += gy[i];
                }
            }
            return;
        }
        case OpKind::neighbor_sum: {
            Matrix& gx = gin(op, 0);
            for (std::size_t e = 0; e < rec.indices->size(); ++e) {
                const auto gr = gy.row((*rec.indices)[e]);
                auto gxr = gx.row(e);
                for (std::size_t c = 0; c < gr.size(); ++c) {
                    gxr[c] += gr[c];
                }
            }
            return;
        }
        case OpKind::gather_rows: {
            Matrix& gx = gin(op, 0);
            for (std::size_t r = 0; r < rec.indices->size(); ++r) {
                const auto gr = gy.row(r);
                auto gxr = gx.row((*rec.indices)[r]);
                for (std::size_t c = 0; c < gr.size(); ++c) {
                    gxr[c] += gr[c];
                }
            }
            return;
        }
        case OpKind::concat: {
            std::size_t at = 0;
            for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
                Matrix& gx = gin(op, k);
                for (std::size_t r = 0; r < gx.rows(); ++r) {
                    const auto gr = gy.row(r);
                    auto gxr = gx.row(r);
                    for (std::size_t c = 0; c < gxr.size(); ++c) {
                        gxr[c] += gr[at + c];
                    }
                }
                at += gx.cols();
            }
            return;
        }
        case OpKind::mse: {
            const Matrix& p = in(op, 0);
            const Matrix& t = in(op, 1);
            Matrix& gp = gin(op, 0);
            Matrix& gt = gin(op, 1);
            const double scale = 2.0 * gy[0] / static_cast<double>(p.rows());
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = scale * (p[i] - t[i]);
                gp[i] += g;
                gt[i] -= g;
            }
            return;
        }
        case OpKind::l1_penalty: {
            const Matrix& x = in(op, 0);
            Matrix& gx = gin(op, 0);
            const double scale = gy[0] * rec.scalar / static_cast<double>(x.rows());
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] > 0.0) {
                    gx[i] += scale;
                } else if (x[i] < 0.0) {
                    gx[i] -= scale;
                }
            }
            return;
        }
        case OpKind::scalar_add:
            gin(op, 0)[0] += gy[0];
            gin(op, 1)[0] += gy[0];
            return;
        case OpKind::scalar_scale: {
            Matrix& gx = gin(op, 0);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gx[i] += rec.scalar * gy[i];
            }
            return;
        }
        }
    }

    std::vector<Record> records_;
    std::vector<Matrix> values_;
    std::vector<Matrix> grads_;
    std::uint64_t kink_hash_ {};
    bool forwarded_ {false};
};

struct GradCheckReport
{
    double max_rel_err {};
    std::string worst_leaf;
    std::size_t worst_index {};
    std::size_t checked {};
    // Coordinates whose +/- probes crossed a relu or l1 kink.
    std::size_t skipped {};
    bool passed {};
};

/// Compares backward() against central differences on every coordinate of
/// the given leaves (all leaves when `leaves` is empty). Relative error per
/// coordinate is |a - b| / max(|a|, |b|, 1e-8). Probes whose perturbation
/// moves the evaluation across a non-differentiable point are skipped.
/// `passed` means at least one coordinate was checked and every one was
/// below `tolerance`.
///
/// `stencil` is 2 for the usual (f(x+e) - f(x-e)) / 2e or 4 for the
/// fourth-order (8[f(x+e) - f(x-e)] - [f(x+2e) - f(x-2e)]) / 12e, which
/// suits strongly curved losses such as stacked layer norms.
inline auto finite_difference_check(Tape& tape, ValueId loss, double epsilon, double tolerance,
                                    std::span<const ValueId> leaves = {}, int stencil = 2) -> GradCheckReport
{
    if (!(epsilon > 0.0)) {
        throw ConfigError {"finite_difference_check: epsilon must be > 0"};
    }
    if (stencil != 2 && stencil != 4) {
        throw ConfigError {"finite_difference_check: stencil must be 2 or 4"};
    }
    std::vector<ValueId> targets(leaves.begin(), leaves.end());
    if (targets.empty()) {
        targets = tape.leaves();
    }
    tape.forward();
    tape.backward(loss);
    const std::uint64_t base_signature = tape.kink_signature();
    std::vector<Matrix> analytic;
    analytic.reserve(targets.size());
    for (const ValueId id : targets) {
        analytic.push_back(tape.grad(id));
    }

    GradCheckReport report;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const ValueId id = targets[k];
        const std::size_t count = tape.value(id).size();
        for (std::size_t i = 0; i < count; ++i) {
            const double original = tape.value(id)[i];
            bool smooth = true;
            auto probe = [&](double offset) {
                tape.leaf_value(id)[i] = original + offset;
                tape.forward();
                smooth = smooth && tape.kink_signature() == base_signature;
                return tape.value(loss)[0];
            };
            double numeric = (probe(epsilon) - probe(-epsilon)) / (2.0 * epsilon);
            if (stencil == 4) {
                const double wide = (probe(2.0 * epsilon) - probe(-2.0 * epsilon)) / (4.0 * epsilon);
                numeric = (4.0 * numeric - wide) / 3.0;
            }
            tape.leaf_value(id)[i] = original;
            if (!smooth) {
                ++report.skipped;
                continue;
            }
            const double a = analytic[k][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++report.checked;
            if (rel > report.max_rel_err || report.checked == 1) {
                report.max_rel_err = rel;
                report.worst_leaf = tape.name(id);
                report.worst_index = i;
            }
        }
    }
    tape.forward();
    report.passed = report.checked > 0 && report.max_rel_err < tolerance;
    return report;
}

} // namespace saeflow::grad
