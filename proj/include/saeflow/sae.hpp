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

// Sparse autoencoder over frozen node embeddings.
//
//   z = relu((h - b_dec) W_enc + b_enc)
//   h_hat = z W_dec + b_dec
//   loss = mean_batch ||h_hat - h||^2 + lambda * mean_batch ||z||_1
//
// Decoder rows are kept at unit norm: after initialization and after every
// optimizer step.

#include "saeflow/error.hpp"
#include "saeflow/gradengine.hpp"
#include "saeflow/matrix.hpp"
#include "saeflow/optim.hpp"
#include "saeflow/rng.hpp"
#include "saeflow/tensor.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace saeflow {

struct SaeConfig
{
    std::size_t kappa {8};
    double lambda {3e-4};
    std::size_t batch {128};
    double learning_rate {1e-3};
    double beta1 {0.9};
    double beta2 {0.999};
    double adam_epsilon {1e-8};
    std::size_t max_epochs {200};
    std::size_t patience {5};
    double min_delta {1e-6};
    double val_fraction {0.1};
    std::uint64_t seed {4};
};

inline auto check(const SaeConfig& c, const std::string& prefix = "sae.") -> std::vector<std::string>
{
    std::vector<std::string> errors;
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) {
            errors.push_back(prefix + msg);
        }
    };
    require(c.kappa > 1, "kappa must be > 1");
    require(c.lambda >= 0.0 && std::isfinite(c.lambda), "lambda must be >= 0");
    require(c.batch >= 1, "batch must be >= 1");
    require(c.learning_rate >= 0.0 && std::isfinite(c.learning_rate), "learning_rate must be >= 0");
    require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1 must be in [0, 1)");
    require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2 must be in [0, 1)");
    require(c.adam_epsilon > 0.0, "adam_epsilon must be > 0");
    require(c.max_epochs >= 1, "max_epochs must be >= 1");
    require(c.patience >= 1, "patience must be >= 1");
    require(c.min_delta >= 0.0, "min_delta must be >= 0");
    require(c.val_fraction > 0.0 && c.val_fraction < 1.0, "val_fraction must be in (0, 1)");
    return errors;
}

struct SaeParams
{
    Matrix w_enc;  // d_in x d_hid
    Matrix b_enc;  // 1 x d_hid
    Matrix w_dec;  // d_hid x d_in
    Matrix b_dec;  // 1 x d_in

    [[nodiscard]] auto d_in() const -> std::size_t { return w_enc.rows(); }
    [[nodiscard]] auto d_hid() const -> std::size_t { return w_enc.cols(); }

    auto operator==(const SaeParams&) const -> bool = default;
};

inline void check_shapes(const SaeParams& p)
{
    const std::size_t d = p.w_enc.rows();
    const std::size_t k = p.w_enc.cols();
    if (p.b_enc.rows() != 1 || p.b_enc.cols() != k || p.w_dec.rows() != k || p.w_dec.cols() != d
        || p.b_dec.rows() != 1 || p.b_dec.cols() != d) {
        throw ShapeError {"inconsistent SAE parameters: W_enc " + shape_string(p.w_enc) + ", b_enc "
                          + shape_string(p.b_enc) + ", W_dec " + shape_string(p.w_dec) + ", b_dec "
                          + shape_string(p.b_dec)};
    }
}

inline auto sae_encode(const SaeParams& p, std::span<const double> h) -> std::vector<double>
{
    if (h.size() != p.d_in()) {
        throw ShapeError {"SAE input has " + std::to_string(h.size()) + " entries, expected "
                          + std::to_string(p.d_in())};
    }
    std::vector<double> z(p.b_enc.values().begin(), p.b_enc.values().end());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double x = h[i] - p.b_dec[i];
        const auto wi = p.w_enc.row(i);
        for (std::size_t k = 0; k < z.size(); ++k) {
            z[k] += x * wi[k];
        }
    }
    for (double& v : z) {
        v = v > 0.0 ? v : 0.0;
    }
    return z;
}

inline auto sae_decode(const SaeParams& p, std::span<const double> z) -> std::vector<double>
{
    if (z.size() != p.d_hid()) {
        throw ShapeError {"SAE code has " + std::to_string(z.size()) + " entries, expected "
                          + std::to_string(p.d_hid())};
    }
    std::vector<double> h(p.b_dec.values().begin(), p.b_dec.values().end());
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (z[k] == 0.0) {
            continue;
        }
        const auto wk = p.w_dec.row(k);
        for (std::size_t i = 0; i < h.size(); ++i) {
            h[i] += z[k] * wk[i];
        }
    }
    return h;
}

struct SaeLossTerms
{
    double reconstruction {};  // mean squared row error
    double sparsity {};        // mean row L1 of the codes, without lambda
    double mean_l0 {};         // mean count of codes > 1e-8
    [[nodiscard]] auto total(double lambda) const -> double { return reconstruction + lambda * sparsity; }
};

inline constexpr double active_code_threshold = 1e-8;

/// Loss terms over the rows of `batch` (M x d_in).
inline auto sae_loss_terms(const SaeParams& p, const Matrix& batch) -> SaeLossTerms
{
    if (batch.rows() == 0) {
        throw ShapeError {"SAE loss over an empty batch"};
    }
    SaeLossTerms out;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        const auto h = batch.row(r);
        const auto z = sae_encode(p, h);
        const auto h_hat = sae_decode(p, z);
        for (std::size_t i = 0; i < h.size(); ++i) {
            out.reconstruction += (h_hat[i] - h[i]) * (h_hat[i] - h[i]);
        }
        for (const double v : z) {
            out.sparsity += v;
            out.mean_l0 += v > active_code_threshold ? 1.0 : 0.0;
        }
    }
    const auto m = static_cast<double>(batch.rows());
    out.reconstruction /= m;
    out.sparsity /= m;
    out.mean_l0 /= m;
    return out;
}

inline auto sae_loss(const SaeParams& p, const Matrix& batch, double lambda) -> double
{
    return sae_loss_terms(p, batch).total(lambda);
}

namespace detail {

inline void random_unit_row(std::span<double> row, Rng& rng)
{
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& v : row) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (double& v : row) {
        v /= norm;
    }
}

} // namespace detail

inline constexpr double dead_row_norm = 1e-12;

/// Divides each decoder row by its norm. Rows with norm below 1e-12 are
/// replaced by fresh random unit vectors. Returns the number replaced.
inline auto renormalize_decoder(SaeParams& p, Rng& rng) -> std::size_t
{
    std::size_t replaced = 0;
    for (std::size_t k = 0; k < p.w_dec.rows(); ++k) {
        auto row = p.w_dec.row(k);
        double norm = 0.0;
        for (const double v : row) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (!(norm >= dead_row_norm)) {
            detail::random_unit_row(row, rng);
            spdlog::info("sae: decoder row {} had norm {:.3g}; resampled", k, norm);
            ++replaced;
            continue;
        }
        for (double& v : row) {
            v /= norm;
        }
    }
    return replaced;
}

inline auto max_decoder_norm_deviation(const SaeParams& p) -> double
{
    double worst = 0.0;
    for (std::size_t k = 0; k < p.w_dec.rows(); ++k) {
        double norm = 0.0;
        for (const double v : p.w_dec.row(k)) {
            norm += v * v;
        }
        worst = std::max(worst, std::abs(std::sqrt(norm) - 1.0));
    }
    return worst;
}

/// W_enc ~ N(0, 1/sqrt(d_in)), unit random decoder rows, b_enc = 0,
/// b_dec = `mean`.
inline auto init_sae(std::size_t d_in, std::size_t d_hid, const Matrix& mean, Rng& rng) -> SaeParams
{
    if (mean.rows() != 1 || mean.cols() != d_in) {
        throw ShapeError {"SAE b_dec init is " + shape_string(mean) + ", expected 1x" + std::to_string(d_in)};
    }
    SaeParams p {Matrix {d_in, d_hid}, Matrix {1, d_hid}, Matrix {d_hid, d_in}, mean};
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (double& v : p.w_enc.values()) {
        v = rng.normal(0.0, sd);
    }
    for (std::size_t k = 0; k < d_hid; ++k) {
        detail::random_unit_row(p.w_dec.row(k), rng);
    }
    renormalize_decoder(p, rng);
    return p;
}

/// The loss as a tape over one batch; used for training and gradient checks.
class SaeGraph
{
public:
    explicit SaeGraph(double lambda)
    {
        h_ = tape_.leaf("h");
        w_enc_ = tape_.leaf("W_enc");
        b_enc_ = tape_.leaf("b_enc");
        w_dec_ = tape_.leaf("W_dec");
        b_dec_ = tape_.leaf("b_dec");
        const auto centered = tape_.residual_add(h_, tape_.scalar_scale(b_dec_, -1.0));
        codes_ = tape_.relu(tape_.affine(centered, w_enc_, b_enc_));
        const auto h_hat = tape_.affine(codes_, w_dec_, b_dec_);
        reconstruction_ = tape_.mse(h_hat, h_);
        loss_ = tape_.scalar_add(reconstruction_, tape_.l1_penalty(codes_, lambda));
    }

    void load(const SaeParams& p)
    {
        tape_.bind(w_enc_, p.w_enc);
        tape_.bind(b_enc_, p.b_enc);
        tape_.bind(w_dec_, p.w_dec);
        tape_.bind(b_dec_, p.b_dec);
    }

    void set_batch(Matrix batch) { tape_.bind(h_, std::move(batch)); }

    [[nodiscard]] auto params() const -> SaeParams
    {
        return {tape_.value(w_enc_), tape_.value(b_enc_), tape_.value(w_dec_), tape_.value(b_dec_)};
    }

    // Views into the tape's parameter storage, in W_enc, b_enc, W_dec, b_dec order.
    auto param_refs() -> std::vector<ParamRef>
    {
        std::vector<ParamRef> refs;
        for (const auto id : {w_enc_, b_enc_, w_dec_, b_dec_}) {
            refs.push_back({&tape_.leaf_value(id), &tape_.grad(id)});
        }
        return refs;
    }

    auto tape() -> grad::Tape& { return tape_; }
    [[nodiscard]] auto loss() const -> grad::ValueId { return loss_; }
    [[nodiscard]] auto codes() const -> grad::ValueId { return codes_; }
    [[nodiscard]] auto decoder() const -> grad::ValueId { return w_dec_; }

private:
    grad::Tape tape_;
    grad::ValueId h_ {}, w_enc_ {}, b_enc_ {}, w_dec_ {}, b_dec_ {};
    grad::ValueId codes_ {}, reconstruction_ {}, loss_ {};
};

struct SaeHistory
{
    std::vector<double> train_loss;
    std::vector<double> val_recon_loss;
    std::vector<double> mean_l0;
};

struct SaeTraining
{
    SaeParams params;
    SaeHistory history;
    std::size_t best_epoch {};
};

// Called after each optimizer step with the renormalized parameters.
using SaeStepObserver = std::function<void(const SaeParams&, std::size_t step)>;

inline auto flatten(const EmbeddingTensor& e) -> Matrix
{
    const Dims d = e.dims();
    Matrix m {d.t * d.n, d.d};
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = e.values()[i];
    }
    return m;
}

namespace detail {

inline auto take_rows(const Matrix& all, std::span<const std::size_t> rows) -> Matrix
{
    Matrix out {rows.size(), all.cols()};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = all.row(rows[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

} // namespace detail

/// Trains on a seeded train/validation split of all T*N embedding rows and
/// returns the parameters with the best validation reconstruction loss.
/// Stops once that loss has not improved by `min_delta` for `patience`
/// epochs, or after `max_epochs`.
inline auto train_sae(const SaeConfig& config, const EmbeddingTensor& embeddings, const SaeStepObserver& observer = {})
    -> SaeTraining
{
    if (const auto errors = check(config); !errors.empty()) {
        throw ConfigError {errors.front()};
    }
    const Matrix samples = flatten(embeddings);
    const std::size_t total = samples.rows();
    const auto val_count = static_cast<std::size_t>(std::round(config.val_fraction * static_cast<double>(total)));
    if (val_count < 1 || total - val_count <= config.batch) {
        throw ConfigError {"SAE needs more than batch=" + std::to_string(config.batch)
                           + " training samples and at least one validation sample; got "
                           + std::to_string(total) + " samples"};
    }
    Rng rng {derive_seed(config.seed, "sae")};
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t {0});
    rng.shuffle(order.begin(), order.end());
    std::vector<std::size_t> train_rows(order.begin(), order.end() - static_cast<std::ptrdiff_t>(val_count));
    const std::vector<std::size_t> val_rows(order.end() - static_cast<std::ptrdiff_t>(val_count), order.end());
    const Matrix validation = detail::take_rows(samples, val_rows);

    const std::size_t d_in = samples.cols();
    Matrix mean {1, d_in};
    for (const std::size_t r : train_rows) {
        for (std::size_t i = 0; i < d_in; ++i) {
            mean[i] += samples(r, i);
        }
    }
    for (double& v : mean.values()) {
        v /= static_cast<double>(train_rows.size());
    }

    SaeGraph graph {config.lambda};
    graph.load(init_sae(d_in, config.kappa * d_in, mean, rng));
    graph.set_batch(detail::take_rows(samples, std::span {train_rows}.first(1)));
    graph.tape().forward();
    graph.tape().backward(graph.loss());
    auto refs = graph.param_refs();
    Adam adam {AdamConfig {config.learning_rate, config.beta1, config.beta2, config.adam_epsilon}};

    SaeTraining result;
    result.params = graph.params();
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(train_rows.begin(), train_rows.end());
        double loss_sum = 0.0;
        double l0_sum = 0.0;
        for (std::size_t start = 0; start < train_rows.size(); start += config.batch) {
            const std::size_t stop = std::min(train_rows.size(), start + config.batch);
            const auto rows = std::span {train_rows}.subspan(start, stop - start);
            graph.set_batch(detail::take_rows(samples, rows));
            graph.tape().forward();
            const double loss = graph.tape().value(graph.loss())[0];
            if (!std::isfinite(loss)) {
                throw NumericalError {"SAE loss is " + std::to_string(loss) + " at epoch " + std::to_string(epoch)
                                      + ", step " + std::to_string(step)};
            }
            const Matrix& z = graph.tape().value(graph.codes());
            double active = 0.0;
            for (const double v : z.values()) {
                active += v > active_code_threshold ? 1.0 : 0.0;
            }
            loss_sum += loss * static_cast<double>(rows.size());
            l0_sum += active;
            graph.tape().backward(graph.loss());
            adam.step(refs);
            SaeParams current = graph.params();
            renormalize_decoder(current, rng);
            graph.load(current);
            ++step;
            if (observer) {
                observer(current, step);
            }
        }
        const SaeParams current = graph.params();
        const double val = sae_loss_terms(current, validation).reconstruction;
        if (!std::isfinite(val)) {
            throw NumericalError {"SAE validation loss is " + std::to_string(val) + " at epoch "
                                  + std::to_string(epoch)};
        }
        const auto n_train = static_cast<double>(train_rows.size());
        result.history.train_loss.push_back(loss_sum / n_train);
        result.history.val_recon_loss.push_back(val);
        result.history.mean_l0.push_back(l0_sum / n_train);
        spdlog::debug("sae epoch {} train {:.6g} val {:.6g} l0 {:.3g}", epoch, loss_sum / n_train, val,
                      l0_sum / n_train);
        if (val < best - config.min_delta) {
            best = val;
            stale = 0;
            result.params = current;
            result.best_epoch = epoch;
        } else if (++stale >= config.patience) {
            break;
        }
    }
    return result;
}

inline auto encode_all(const SaeParams& p, const EmbeddingTensor& embeddings) -> SparseCodeTensor
{
    const Dims d = embeddings.dims();
    if (d.d != p.d_in()) {
        throw ShapeError {"embeddings have width " + std::to_string(d.d) + ", SAE expects "
                          + std::to_string(p.d_in())};
    }
    SparseCodeTensor out {Dims {d.t, d.n, p.d_hid()}};
    std::vector<double> h(d.d);
    for (std::size_t t = 0; t < d.t; ++t) {
        for (std::size_t n = 0; n < d.n; ++n) {
            const auto row = embeddings.row(t, n);
            std::copy(row.begin(), row.end(), h.begin());
            const auto z = sae_encode(p, h);
            auto dst = out.row(t, n);
            for (std::size_t k = 0; k < z.size(); ++k) {
                dst[k] = static_cast<float>(z[k]);
            }
        }
    }
    return out;
}

/// Decodes every code row back to embedding space.
inline auto decode_all(const SaeParams& p, const SparseCodeTensor& codes) -> EmbeddingTensor
{
    const Dims d = codes.dims();
    EmbeddingTensor out {Dims {d.t, d.n, p.d_in()}};
    std::vector<double> z(d.d);
    for (std::size_t t = 0; t < d.t; ++t) {
        for (std::size_t n = 0; n < d.n; ++n) {
            const auto row = codes.row(t, n);
            std::copy(row.begin(), row.end(), z.begin());
            const auto h = sae_decode(p, z);
            auto dst = out.row(t, n);
            for (std::size_t i = 0; i < h.size(); ++i) {
                dst[i] = static_cast<float>(h[i]);
            }
        }
    }
    return out;
}

// Checkpoint directory: manifest.txt (with config echo), one NTEN per tensor
// stored as 1 x rows x cols, and history.csv.

namespace detail {

inline void save_matrix(const Matrix& m, const std::filesystem::path& path)
{
    Tensor t {Dims {1, m.rows(), m.cols()}};
    for (std::size_t i = 0; i < m.size(); ++i) {
        t.values()[i] = static_cast<float>(m[i]);
    }
    save_tensor(t, path);
}

inline auto load_matrix(const std::filesystem::path& path) -> Matrix
{
    const Tensor t = load_tensor<PlainTag>(path);
    if (t.dims().t != 1) {
        throw FormatError {path.string() + ": expected a 1 x rows x cols tensor, got " + to_string(t.dims())};
    }
    Matrix m {t.dims().n, t.dims().d};
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = t.values()[i];
    }
    return m;
}

} // namespace detail

inline auto history_csv(const SaeHistory& h) -> std::string
{
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_loss,val_recon_loss,mean_l0\n";
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        out << e << ',' << h.train_loss[e] << ',' << h.val_recon_loss[e] << ',' << h.mean_l0[e] << '\n';
    }
    return out.str();
}

inline void save_sae(const SaeParams& p, const SaeConfig& config, const SaeHistory& history,
                     const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    detail::save_matrix(p.w_enc, dir / "W_enc.nten");
    detail::save_matrix(p.b_enc, dir / "b_enc.nten");
    detail::save_matrix(p.w_dec, dir / "W_dec.nten");
    detail::save_matrix(p.b_dec, dir / "b_dec.nten");
    std::ostringstream m;
    m.precision(17);
    m << "saeflow-sae 1\n"
      << "d_in " << p.d_in() << "\n"
      << "d_hid " << p.d_hid() << "\n"
      << "config kappa " << config.kappa << "\n"
      << "config lambda " << config.lambda << "\n"
      << "config batch " << config.batch << "\n"
      << "config learning_rate " << config.learning_rate << "\n"
      << "config max_epochs " << config.max_epochs << "\n"
      << "config patience " << config.patience << "\n"
      << "config val_fraction " << config.val_fraction << "\n"
      << "config seed " << config.seed << "\n";
    write_text_file(dir / "manifest.txt", m.str());
    write_text_file(dir / "history.csv", history_csv(history));
}

inline auto load_sae(const std::filesystem::path& dir) -> SaeParams
{
    if (!std::filesystem::exists(dir / "manifest.txt")) {
        throw IoError {"missing SAE manifest in " + dir.string()};
    }
    const std::string text = read_text_file(dir / "manifest.txt");
    if (!text.starts_with("saeflow-sae 1\n")) {
        throw FormatError {dir.string() + ": not an SAE checkpoint"};
    }
    SaeParams p {detail::load_matrix(dir / "W_enc.nten"), detail::load_matrix(dir / "b_enc.nten"),
                 detail::load_matrix(dir / "W_dec.nten"), detail::load_matrix(dir / "b_dec.nten")};
    check_shapes(p);
    return p;
}

} // namespace saeflow
