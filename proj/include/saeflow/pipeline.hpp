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

// Config-driven pipeline: document validation, stage keys, artifact
// directories with manifests, and the subcommand runner behind the CLI.

#include "saeflow/error.hpp"
#include "saeflow/eval.hpp"
#include "saeflow/flow.hpp"
#include "saeflow/hash.hpp"
#include "saeflow/mesh.hpp"
#include "saeflow/rng.hpp"
#include "saeflow/sae.hpp"
#include "saeflow/saliency.hpp"
#include "saeflow/spatial.hpp"
#include "saeflow/surrogate.hpp"
#include "saeflow/synthgen.hpp"
#include "saeflow/tensor.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace saeflow {

#ifdef SAEFLOW_VERSION
inline constexpr std::string_view version = SAEFLOW_VERSION;
#else
inline constexpr std::string_view version = "0.1.0";
#endif

struct SaliencyConfig
{
    Criterion criterion {Criterion::variance};
    std::size_t k {50};
    std::size_t bins {entropy_bins};
};

struct SpatialConfig
{
    std::vector<std::size_t> eta {20, 85, 300};
    std::vector<std::size_t> times {0, 15, 30};
    std::size_t footprint_eta {100};
    std::size_t footprint_dims {4};
};

struct EvalConfig
{
    double fraction {0.10};
    // 0 selects round(0.075 N).
    std::size_t eta {0};
    std::size_t random_seeds {100};
    bool include_walls {false};
};

struct PipelineConfig
{
    std::uint64_t seed {0};
    std::string out {"runs"};
    WakeConfig wake;
    SurrogateConfig surrogate;
    SaeConfig sae;
    OracleConfig oracle;
    SaliencyConfig saliency;
    SpatialConfig spatial;
    EvalConfig eval;
};

/// Missing or unreadable output of an earlier stage.
class MissingArtifactError : public Error
{
public:
    using Error::Error;
};

namespace detail {

// Field tables shared by parsing and echoing. Section seeds are not listed:
// they are derived from the global seed.
template <typename V>
void visit_fields(WakeConfig& c, V&& v)
{
    v("width", c.width);
    v("height", c.height);
    v("cylinder_x", c.cylinder_x);
    v("cylinder_y", c.cylinder_y);
    v("cylinder_radius", c.cylinder_radius);
    v("u_max", c.u_max);
    v("circulation", c.circulation);
    v("core_radius", c.core_radius);
    v("shed_period", c.shed_period);
    v("convection_speed", c.convection_speed);
    v("spacing", c.spacing);
    v("jitter", c.jitter);
    v("frames", c.frames);
    v("dt", c.dt);
}

template <typename V>
void visit_fields(SurrogateConfig& c, V&& v)
{
    v("message_passing_steps", c.message_passing_steps);
    v("latent", c.latent);
    v("learning_rate", c.learning_rate);
    v("lr_decay", c.lr_decay);
    v("epochs", c.epochs);
    v("batch", c.batch);
    v("noise_std", c.noise_std);
    v("fluid_only_loss", c.fluid_only_loss);
}

template <typename V>
void visit_fields(SaeConfig& c, V&& v)
{
    v("kappa", c.kappa);
    v("lambda", c.lambda);
    v("batch", c.batch);
    v("learning_rate", c.learning_rate);
    v("beta1", c.beta1);
    v("beta2", c.beta2);
    v("adam_epsilon", c.adam_epsilon);
    v("max_epochs", c.max_epochs);
    v("patience", c.patience);
    v("min_delta", c.min_delta);
    v("val_fraction", c.val_fraction);
}

template <typename V>
void visit_fields(OracleConfig& c, V&& v)
{
    v("n_atoms", c.n_atoms);
    v("d_in", c.d_in);
    v("noise_std", c.noise_std);
    v("sparsity", c.sparsity);
}

template <typename V>
void visit_fields(SaliencyConfig& c, V&& v)
{
    v("criterion", c.criterion);
    v("k", c.k);
    v("bins", c.bins);
}

template <typename V>
void visit_fields(SpatialConfig& c, V&& v)
{
    v("eta", c.eta);
    v("times", c.times);
    v("footprint_eta", c.footprint_eta);
    v("footprint_dims", c.footprint_dims);
}

template <typename V>
void visit_fields(EvalConfig& c, V&& v)
{
    v("fraction", c.fraction);
    v("eta", c.eta);
    v("random_seeds", c.random_seeds);
    v("include_walls", c.include_walls);
}

// Non-negative integer, whether stored signed or unsigned.
inline auto is_count(const nlohmann::json& j) -> bool
{
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

struct JsonWriter
{
    nlohmann::json& out;

    void operator()(const char* key, const double& x) const { out[key] = x; }
    void operator()(const char* key, const std::size_t& x) const { out[key] = x; }
    void operator()(const char* key, const bool& x) const { out[key] = x; }
    void operator()(const char* key, const Criterion& x) const { out[key] = std::string {to_string(x)}; }
    void operator()(const char* key, const std::vector<std::size_t>& x) const { out[key] = x; }
};

struct JsonReader
{
    const nlohmann::json& in;
    std::string path;
    std::vector<std::string>& errors;
    std::set<std::string>& known;

    auto fetch(const char* key) const -> const nlohmann::json*
    {
        known.insert(key);
        const auto it = in.find(key);
        return it == in.end() ? nullptr : &*it;
    }
    void fail(const char* key, const char* what) const { errors.push_back(path + key + " must be " + what); }

    void operator()(const char* key, double& x) const
    {
        if (const auto* j = fetch(key)) {
            if (j->is_number()) {
                x = j->get<double>();
            } else {
                fail(key, "a number");
            }
        }
    }
    void operator()(const char* key, std::size_t& x) const
    {
        if (const auto* j = fetch(key)) {
            if (is_count(*j)) {
                x = j->get<std::size_t>();
            } else {
                fail(key, "a non-negative integer");
            }
        }
    }
    void operator()(const char* key, bool& x) const
    {
        if (const auto* j = fetch(key)) {
            if (j->is_boolean()) {
                x = j->get<bool>();
            } else {
                fail(key, "true or false");
            }
        }
    }
    void operator()(const char* key, Criterion& x) const
    {
        if (const auto* j = fetch(key)) {
            const auto parsed = j->is_string() ? parse_criterion(j->get<std::string>()) : std::nullopt;
            if (parsed) {
                x = *parsed;
            } else {
                fail(key, "one of \"variance\", \"mean_abs\", \"entropy\"");
            }
        }
    }
    void operator()(const char* key, std::vector<std::size_t>& x) const
    {
        if (const auto* j = fetch(key)) {
            const bool ok = j->is_array()
                            && std::all_of(j->begin(), j->end(), [](const nlohmann::json& e) { return is_count(e); });
            if (ok) {
                x = j->get<std::vector<std::size_t>>();
            } else {
                fail(key, "an array of non-negative integers");
            }
        }
    }
};

template <typename Section>
void read_section(const nlohmann::json& doc, const char* name, Section& section, std::vector<std::string>& errors)
{
    const auto it = doc.find(name);
    if (it == doc.end()) {
        return;
    }
    const std::string path = std::string {name} + ".";
    if (!it->is_object()) {
        errors.push_back(std::string {name} + " must be an object");
        return;
    }
    std::set<std::string> known;
    visit_fields(section, JsonReader {*it, path, errors, known});
    for (const auto& [key, value] : it->items()) {
        if (!known.count(key)) {
            errors.push_back(path + key + ": unknown key");
        }
    }
}

template <typename Section>
auto section_json(Section section) -> nlohmann::json
{
    nlohmann::json out = nlohmann::json::object();
    visit_fields(section, JsonWriter {out});
    return out;
}

} // namespace detail

/// Normalized echo of a configuration; every field is present.
inline auto config_to_json(const PipelineConfig& c) -> nlohmann::json
{
    return {
        {"seed", c.seed},
        {"out", c.out},
        {"wake", detail::section_json(c.wake)},
        {"surrogate", detail::section_json(c.surrogate)},
        {"sae", detail::section_json(c.sae)},
        {"oracle", detail::section_json(c.oracle)},
        {"saliency", detail::section_json(c.saliency)},
        {"spatial", detail::section_json(c.spatial)},
        {"eval", detail::section_json(c.eval)},
    };
}

/// Gives every section its own seed from the global one.
inline void derive_section_seeds(PipelineConfig& c)
{
    c.wake.seed = derive_seed(c.seed, "wake");
    c.surrogate.seed = derive_seed(c.seed, "surrogate");
    c.sae.seed = derive_seed(c.seed, "sae");
    c.oracle.seed = derive_seed(c.seed, "oracle");
}

struct ConfigValidation
{
    PipelineConfig config;
    std::vector<std::string> errors;

    [[nodiscard]] auto ok() const -> bool { return errors.empty(); }
};

/// Parses and checks a configuration document. Every problem is collected
/// with its path; nothing is thrown.
inline auto validate_config(const nlohmann::json& doc) -> ConfigValidation
{
    ConfigValidation v;
    auto& errors = v.errors;
    PipelineConfig& c = v.config;
    if (!doc.is_object()) {
        errors.emplace_back("config document must be an object");
        return v;
    }
    static const std::set<std::string> top {"seed", "out", "wake", "surrogate", "sae", "oracle", "saliency", "spatial", "eval"};
    for (const auto& [key, value] : doc.items()) {
        if (!top.count(key)) {
            errors.push_back(key + ": unknown key");
        }
    }
    if (const auto it = doc.find("seed"); it != doc.end()) {
        if (detail::is_count(*it)) {
            c.seed = it->get<std::uint64_t>();
        } else {
            errors.emplace_back("seed must be a non-negative integer");
        }
    }
    if (const auto it = doc.find("out"); it != doc.end()) {
        if (it->is_string() && !it->get<std::string>().empty()) {
            c.out = it->get<std::string>();
        } else {
            errors.emplace_back("out must be a non-empty string");
        }
    }
    detail::read_section(doc, "wake", c.wake, errors);
    detail::read_section(doc, "surrogate", c.surrogate, errors);
    detail::read_section(doc, "sae", c.sae, errors);
    detail::read_section(doc, "oracle", c.oracle, errors);
    detail::read_section(doc, "saliency", c.saliency, errors);
    detail::read_section(doc, "spatial", c.spatial, errors);
    detail::read_section(doc, "eval", c.eval, errors);
    derive_section_seeds(c);

    auto append = [&errors](const std::vector<std::string>& more) { errors.insert(errors.end(), more.begin(), more.end()); };
    append(check(c.wake));
    append(check(c.surrogate));
    append(check(c.sae));
    append(check(c.oracle));
    const std::size_t d_hid = c.sae.kappa * c.surrogate.latent;
    if (c.saliency.k < 1 || c.saliency.k > d_hid) {
        errors.push_back("saliency.k must be in [1, sae.kappa * surrogate.latent = " + std::to_string(d_hid) + "]");
    }
    if (c.saliency.bins < 1) {
        errors.emplace_back("saliency.bins must be >= 1");
    }
    if (c.eval.fraction <= 0.0 || c.eval.fraction >= 1.0) {
        errors.emplace_back("eval.fraction must be in (0, 1)");
    }
    if (c.eval.random_seeds < 1) {
        errors.emplace_back("eval.random_seeds must be >= 1");
    }
    if (c.sae.kappa > 0 && c.saliency.k / c.sae.kappa == 0) {
        errors.emplace_back("saliency.k must be >= sae.kappa so the PCA baseline keeps a component");
    }
    for (const std::size_t t : c.spatial.times) {
        if (t >= c.wake.frames) {
            errors.push_back("spatial.times entry " + std::to_string(t) + " must be < wake.frames");
        }
    }
    for (const std::size_t e : c.spatial.eta) {
        if (e < 1) {
            errors.emplace_back("spatial.eta entries must be >= 1");
        }
    }
    if (c.spatial.footprint_eta < 1) {
        errors.emplace_back("spatial.footprint_eta must be >= 1");
    }
    if (c.spatial.footprint_dims > d_hid) {
        errors.emplace_back("spatial.footprint_dims must be <= sae.kappa * surrogate.latent");
    }
    return v;
}

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError {"override \"" + std::string {assignment} + "\" is not key=value"};
    }
    const std::string key {assignment.substr(0, eq)};
    const std::string text {assignment.substr(eq + 1)};
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ConfigError {"override key \"" + key + "\" has an empty component"};
        }
        if (!node->is_object()) {
            throw ConfigError {"override key \"" + key + "\" descends into a non-object"};
        }
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) {
            *node = nlohmann::json::object();
        }
        start = dot + 1;
    }
}

// ---------------------------------------------------------------------------
// Stages

enum class Stage : std::uint8_t
{
    mesh,
    flow,
    surrogate,
    embeddings,
    sae,
    oracle,
    score,
    topk,
    jaccard,
    localize,
    vorticity,
    evaluate,
    recover,
};

inline constexpr std::array all_stages {Stage::mesh,     Stage::flow,    Stage::surrogate, Stage::embeddings, Stage::sae,
                                        Stage::oracle,   Stage::score,   Stage::topk,      Stage::jaccard,    Stage::localize,
                                        Stage::vorticity, Stage::evaluate, Stage::recover};

inline auto stage_name(Stage s) -> std::string_view
{
    switch (s) {
    case Stage::mesh: return "mesh";
    case Stage::flow: return "flow";
    case Stage::surrogate: return "surrogate";
    case Stage::embeddings: return "embeddings";
    case Stage::sae: return "sae";
    case Stage::oracle: return "oracle";
    case Stage::score: return "score";
    case Stage::topk: return "topk";
    case Stage::jaccard: return "jaccard";
    case Stage::localize: return "localize";
    case Stage::vorticity: return "vorticity";
    case Stage::evaluate: return "evaluate";
    case Stage::recover: return "recover";
    }
    return "?";
}

/// CLI subcommand that produces a stage.
inline auto stage_command(Stage s) -> std::string_view
{
    switch (s) {
    case Stage::mesh: return "gen-mesh";
    case Stage::flow: return "gen-flow";
    case Stage::surrogate: return "train-surrogate";
    case Stage::embeddings: return "extract";
    case Stage::sae: return "train-sae";
    case Stage::oracle: return "oracle-embed";
    default: return stage_name(s);
    }
}

inline auto stage_from_command(std::string_view command) -> std::optional<Stage>
{
    for (const Stage s : all_stages) {
        if (stage_command(s) == command) {
            return s;
        }
    }
    return std::nullopt;
}

inline auto upstream_of(Stage s) -> std::vector<Stage>
{
    switch (s) {
    case Stage::mesh: return {};
    case Stage::flow: return {Stage::mesh};
    case Stage::surrogate: return {Stage::mesh, Stage::flow};
    case Stage::embeddings: return {Stage::mesh, Stage::flow, Stage::surrogate};
    case Stage::sae: return {Stage::embeddings};
    case Stage::oracle: return {Stage::mesh, Stage::flow};
    case Stage::score:
    case Stage::topk:
    case Stage::jaccard: return {Stage::sae};
    case Stage::localize: return {Stage::mesh, Stage::sae};
    case Stage::vorticity: return {Stage::mesh, Stage::flow};
    case Stage::evaluate: return {Stage::mesh, Stage::embeddings, Stage::sae, Stage::vorticity};
    case Stage::recover: return {Stage::oracle};
    }
    return {};
}

/// Configuration that determines a stage's outputs (upstream keys aside).
inline auto stage_config(Stage s, const PipelineConfig& c) -> nlohmann::json
{
    const nlohmann::json full = config_to_json(c);
    nlohmann::json out = nlohmann::json::object();
    switch (s) {
    case Stage::mesh:
    case Stage::flow:
        out["wake"] = full["wake"];
        out["wake_seed"] = c.wake.seed;
        break;
    case Stage::surrogate:
        out["surrogate"] = full["surrogate"];
        out["surrogate_seed"] = c.surrogate.seed;
        break;
    case Stage::embeddings: break;
    case Stage::sae:
    case Stage::recover:
        out["sae"] = full["sae"];
        out["sae_seed"] = c.sae.seed;
        break;
    case Stage::oracle:
        out["oracle"] = full["oracle"];
        out["oracle_seed"] = c.oracle.seed;
        out["wake"] = full["wake"];
        break;
    case Stage::score:
    case Stage::topk:
    case Stage::jaccard: out["saliency"] = full["saliency"]; break;
    case Stage::localize:
        out["saliency"] = full["saliency"];
        out["spatial"] = full["spatial"];
        out["cylinder"] = {c.wake.cylinder_x, c.wake.cylinder_y, c.wake.cylinder_radius};
        break;
    case Stage::vorticity:
        out["fraction"] = c.eval.fraction;
        out["include_walls"] = c.eval.include_walls;
        break;
    case Stage::evaluate:
        out["saliency"] = full["saliency"];
        out["eval"] = full["eval"];
        out["kappa"] = c.sae.kappa;
        out["random_seed"] = derive_seed(c.seed, "random-baseline");
        break;
    }
    return out;
}

/// 16-hex content key: hash of stage name, version, stage config, and the
/// keys of every upstream stage.
inline auto stage_key(Stage s, const PipelineConfig& c) -> std::string
{
    nlohmann::json doc {{"stage", stage_name(s)}, {"version", version}, {"config", stage_config(s, c)}};
    nlohmann::json up = nlohmann::json::object();
    for (const Stage u : upstream_of(s)) {
        up[std::string {stage_name(u)}] = stage_key(u, c);
    }
    doc["upstream"] = up;
    return sha256_hex(doc.dump()).substr(0, 16);
}

inline auto stage_dir(Stage s, const PipelineConfig& c) -> std::filesystem::path
{
    return std::filesystem::path {c.out} / (std::string {stage_name(s)} + "-" + stage_key(s, c));
}

inline auto manifest_path(Stage s, const PipelineConfig& c) -> std::filesystem::path
{
    return stage_dir(s, c) / "manifest.json";
}

namespace detail {

inline auto require_stage(Stage s, const PipelineConfig& c) -> std::filesystem::path
{
    const auto manifest = manifest_path(s, c);
    if (!std::filesystem::exists(manifest)) {
        throw MissingArtifactError {"missing upstream artifact '" + std::string {stage_name(s)} + "' ("
                                    + manifest.string() + "); run `saeflow " + std::string {stage_command(s)}
                                    + "` first"};
    }
    return stage_dir(s, c);
}

inline auto relative_to_out(const std::filesystem::path& p, const PipelineConfig& c) -> std::string
{
    return std::filesystem::relative(p, c.out).generic_string();
}

// Every regular file under dir except the manifest, sorted by path.
inline auto listed_files(const std::filesystem::path& dir) -> std::vector<std::filesystem::path>
{
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator {dir}) {
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline void write_manifest(Stage s, const PipelineConfig& c, const std::vector<std::filesystem::path>& inputs)
{
    const auto dir = stage_dir(s, c);
    nlohmann::json in = nlohmann::json::array();
    for (const auto& p : inputs) {
        in.push_back({{"path", relative_to_out(p, c)}, {"sha256", sha256_file(p)}});
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : listed_files(dir)) {
        out.push_back({{"path", relative_to_out(p, c)}, {"sha256", sha256_file(p)}});
    }
    nlohmann::json upstream = nlohmann::json::object();
    for (const Stage u : upstream_of(s)) {
        upstream[std::string {stage_name(u)}] = stage_key(u, c);
    }
    const nlohmann::json doc {
        {"stage", stage_name(s)},   {"key", stage_key(s, c)}, {"version", version},  {"seed", c.seed},
        {"config", stage_config(s, c)}, {"upstream", upstream}, {"inputs", in},       {"outputs", out},
    };
    write_text_file(dir / "manifest.json", doc.dump(2) + "\n");
}

inline auto fresh_dir(Stage s, const PipelineConfig& c) -> std::filesystem::path
{
    const auto dir = stage_dir(s, c);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline auto load_codes(const PipelineConfig& c) -> SparseCodeTensor
{
    return load_tensor<SparseCodeTag>(require_stage(Stage::sae, c) / "codes.nten");
}

inline auto loss_csv(const std::vector<double>& loss) -> std::string
{
    std::ostringstream out;
    out.precision(17);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < loss.size(); ++e) {
        out << e << ',' << loss[e] << '\n';
    }
    return out.str();
}

inline auto topk_row(const TopKSet& s) -> std::string
{
    std::string out {to_string(s.criterion)};
    out += ',';
    out += s.time ? std::to_string(*s.time) : std::string {"global"};
    out += ',';
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
        out += (i ? " " : "") + std::to_string(s.indices[i]);
    }
    return out + '\n';
}

inline auto sae_selection(const SparseCodeTensor& codes, Criterion criterion, const PipelineConfig& c, std::size_t eta)
    -> NodeSelection
{
    const TopKSet global = top_k(score_dimensions(codes, criterion, std::nullopt, c.saliency.bins), c.saliency.k);
    return top_eta_nodes(aggregate_node_scores(codes, global), eta);
}

inline auto mask_from_csv(const std::filesystem::path& path, std::size_t frames, std::size_t nodes, double fraction)
    -> VortexMask
{
    VortexMask mask {fraction, 0, NodeSelection {nodes, std::vector<std::vector<std::uint32_t>>(frames)}};
    std::istringstream in {read_text_file(path)};
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        const auto t = std::stoul(line.substr(0, comma));
        const auto n = std::stoul(line.substr(comma + 1));
        if (t >= frames || n >= nodes) {
            throw FormatError {path.string() + ": entry (" + line + ") out of range"};
        }
        mask.nodes.per_t[t].push_back(static_cast<std::uint32_t>(n));
    }
    return mask;
}

} // namespace detail

/// Runs one stage, reading upstream artifacts from disk and writing its
/// own directory and manifest.
inline void run_stage(Stage s, const PipelineConfig& c)
{
    using detail::require_stage;
    namespace fs = std::filesystem;
    const auto started = std::chrono::steady_clock::now();
    std::vector<fs::path> inputs;
    auto input = [&inputs](const fs::path& p) {
        if (!fs::exists(p)) {
            throw MissingArtifactError {"missing upstream artifact file " + p.string()};
        }
        inputs.push_back(p);
        return p;
    };
    auto load_mesh_in = [&] { return load_mesh(input(require_stage(Stage::mesh, c) / "mesh.json")); };
    auto load_flow_in = [&] {
        const auto p = input(require_stage(Stage::flow, c) / "flow.nten");
        input(flow_sidecar_path(p));
        return load_flow(p);
    };
    auto load_codes_in = [&] { return load_tensor<SparseCodeTag>(input(require_stage(Stage::sae, c) / "codes.nten")); };

    // Upstream checks come first so a missing artifact never leaves a
    // half-written directory behind.
    for (const Stage u : upstream_of(s)) {
        require_stage(u, c);
    }

    switch (s) {
    case Stage::mesh: {
        const auto dir = detail::fresh_dir(s, c);
        save_mesh(generate_mesh(c.wake), dir / "mesh.json");
        break;
    }
    case Stage::flow: {
        const Mesh mesh = load_mesh_in();
        const auto dir = detail::fresh_dir(s, c);
        save_flow(generate_flow(c.wake, mesh), dir / "flow.nten");
        break;
    }
    case Stage::surrogate: {
        const Mesh mesh = load_mesh_in();
        const FlowSequence flow = load_flow_in();
        auto trained = train_surrogate(c.surrogate, mesh, flow);
        const auto dir = detail::fresh_dir(s, c);
        save_surrogate(trained.params, dir / "checkpoint");
        write_text_file(dir / "loss.csv", detail::loss_csv(trained.loss_history));
        break;
    }
    case Stage::embeddings: {
        const Mesh mesh = load_mesh_in();
        const FlowSequence flow = load_flow_in();
        const auto ckpt = require_stage(Stage::surrogate, c) / "checkpoint";
        for (const auto& p : detail::listed_files(ckpt)) {
            input(p);
        }
        const auto embeddings = extract_embeddings(load_surrogate(ckpt), mesh, flow);
        const auto dir = detail::fresh_dir(s, c);
        save_tensor(embeddings, dir / "embeddings.nten");
        break;
    }
    case Stage::sae: {
        const auto embeddings = load_tensor<EmbeddingTag>(input(require_stage(Stage::embeddings, c) / "embeddings.nten"));
        const auto trained = train_sae(c.sae, embeddings);
        const auto dir = detail::fresh_dir(s, c);
        save_sae(trained.params, c.sae, trained.history, dir / "checkpoint");
        save_tensor(encode_all(trained.params, embeddings), dir / "codes.nten");
        break;
    }
    case Stage::oracle: {
        const Mesh mesh = load_mesh_in();
        const FlowSequence flow = load_flow_in();
        const auto oracle = synthesize_oracle_embeddings(c.oracle, c.wake, mesh, flow);
        const auto dir = detail::fresh_dir(s, c);
        save_tensor(oracle.embeddings, dir / "embeddings.nten");
        const Matrix& atoms = oracle.truth.atoms;
        save_tensor(Tensor {Dims {1, atoms.rows(), atoms.cols()},
                            std::vector<float>(atoms.values().begin(), atoms.values().end())},
                    dir / "atoms.nten");
        save_tensor(oracle.truth.codes, dir / "codes.nten");
        break;
    }
    case Stage::score: {
        const auto codes = load_codes_in();
        const auto dir = detail::fresh_dir(s, c);
        for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
            write_text_file(dir / ("scores_" + std::string {to_string(cr)} + ".csv"),
                            scores_csv(score_dimensions(codes, cr, std::nullopt, c.saliency.bins)));
        }
        break;
    }
    case Stage::topk: {
        const auto codes = load_codes_in();
        std::string csv = "criterion,scope,dimensions\n";
        for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
            csv += detail::topk_row(top_k(score_dimensions(codes, cr, std::nullopt, c.saliency.bins), c.saliency.k));
            for (const auto& local : score_all_snapshots(codes, cr, c.saliency.bins)) {
                csv += detail::topk_row(top_k(local, c.saliency.k));
            }
        }
        const auto dir = detail::fresh_dir(s, c);
        write_text_file(dir / "topk.csv", csv);
        break;
    }
    case Stage::jaccard: {
        const auto codes = load_codes_in();
        const auto dir = detail::fresh_dir(s, c);
        for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
            const TopKSet global = top_k(score_dimensions(codes, cr, std::nullopt, c.saliency.bins), c.saliency.k);
            std::vector<TopKSet> local;
            for (const auto& sv : score_all_snapshots(codes, cr, c.saliency.bins)) {
                local.push_back(top_k(sv, c.saliency.k));
            }
            const auto series = jaccard_series(global, local);
            spdlog::info("jaccard {}: mean J = {:.4f}", to_string(cr), mean_of(series));
            write_text_file(dir / ("jaccard_" + std::string {to_string(cr)} + ".csv"), jaccard_csv(series));
        }
        break;
    }
    case Stage::localize: {
        const Mesh mesh = load_mesh_in();
        const auto codes = load_codes_in();
        if (codes.dims().n != mesh.size()) {
            throw ShapeError {"codes cover " + std::to_string(codes.dims().n) + " nodes, mesh has "
                              + std::to_string(mesh.size())};
        }
        const Circle cylinder {{c.wake.cylinder_x, c.wake.cylinder_y}, c.wake.cylinder_radius};
        const ScoreVector scores = score_dimensions(codes, c.saliency.criterion, std::nullopt, c.saliency.bins);
        const TopKSet global = top_k(scores, c.saliency.k);
        const NodeScoreField field = aggregate_node_scores(codes, global);
        const auto dir = detail::fresh_dir(s, c);
        for (const std::size_t eta : c.spatial.eta) {
            const auto sel = top_eta_nodes(field, std::min(eta, mesh.size()));
            const std::string stem = "nodes_eta" + std::to_string(eta);
            write_text_file(dir / (stem + ".csv"), selection_csv(mesh, sel));
            write_text_file(dir / (stem + ".svg"), selection_svg(mesh, sel, c.spatial.times, cylinder));
        }
        const auto order = rank_order(scores.scores);
        for (std::size_t i = 0; i < c.spatial.footprint_dims; ++i) {
            const auto sel = dimension_footprint(codes, order[i], std::min(c.spatial.footprint_eta, mesh.size()));
            const std::string stem = "footprint_d" + std::to_string(order[i]);
            write_text_file(dir / (stem + ".csv"), selection_csv(mesh, sel));
            write_text_file(dir / (stem + ".svg"), selection_svg(mesh, sel, c.spatial.times, cylinder));
        }
        break;
    }
    case Stage::vorticity: {
        const Mesh mesh = load_mesh_in();
        const FlowSequence flow = load_flow_in();
        Tensor omega {Dims {flow.frames(), mesh.size(), 1}};
        for (std::size_t t = 0; t < flow.frames(); ++t) {
            const auto w = compute_vorticity(mesh, flow, t);
            for (std::size_t n = 0; n < mesh.size(); ++n) {
                omega.at(t, n, 0) = static_cast<float>(w.omega[n]);
            }
        }
        const auto mask = vortex_mask(mesh, flow, c.eval.fraction, c.eval.include_walls);
        std::string csv = "t,node\n";
        for (std::size_t t = 0; t < mask.nodes.per_t.size(); ++t) {
            for (const auto n : mask.nodes.per_t[t]) {
                csv += std::to_string(t) + ',' + std::to_string(n) + '\n';
            }
        }
        const auto dir = detail::fresh_dir(s, c);
        save_tensor(omega, dir / "vorticity.nten");
        write_text_file(dir / "mask.csv", csv);
        break;
    }
    case Stage::evaluate: {
        const Mesh mesh = load_mesh_in();
        const auto embeddings = load_tensor<EmbeddingTag>(input(require_stage(Stage::embeddings, c) / "embeddings.nten"));
        const auto codes = load_codes_in();
        const Dims d = codes.dims();
        const VortexMask mask = detail::mask_from_csv(input(require_stage(Stage::vorticity, c) / "mask.csv"), d.t,
                                                      mesh.size(), c.eval.fraction);
        const std::size_t eta = c.eval.eta > 0 ? c.eval.eta : default_eta(mesh.size());
        std::vector<AlignmentSeries> rows;
        for (const Criterion cr : {Criterion::variance, Criterion::mean_abs, Criterion::entropy}) {
            rows.push_back(alignment_metrics("sae_" + std::string {to_string(cr)},
                                             detail::sae_selection(codes, cr, c, eta), mask));
        }
        rows.push_back(alignment_metrics("embedding_norm", baseline_embedding_norm(embeddings, eta), mask));
        rows.push_back(alignment_metrics("pca", baseline_pca(embeddings, c.saliency.k, c.sae.kappa, eta), mask));
        // Random row: per-snapshot metrics averaged over the seeds.
        AlignmentSeries random {"random", std::vector<Alignment>(d.t), {}};
        const std::uint64_t base = derive_seed(c.seed, "random-baseline");
        const auto seeds = static_cast<double>(c.eval.random_seeds);
        for (std::size_t k = 0; k < c.eval.random_seeds; ++k) {
            const auto one = alignment_metrics("random", baseline_random(mesh.size(), d.t, eta, derive_seed(base, std::to_string(k))), mask);
            for (std::size_t t = 0; t < d.t; ++t) {
                random.per_t[t].precision += one.per_t[t].precision / seeds;
                random.per_t[t].recall += one.per_t[t].recall / seeds;
                random.per_t[t].f1 += one.per_t[t].f1 / seeds;
                random.per_t[t].jaccard += one.per_t[t].jaccard / seeds;
            }
        }
        for (const Alignment& a : random.per_t) {
            random.mean.precision += a.precision / static_cast<double>(d.t);
            random.mean.recall += a.recall / static_cast<double>(d.t);
            random.mean.f1 += a.f1 / static_cast<double>(d.t);
            random.mean.jaccard += a.jaccard / static_cast<double>(d.t);
        }
        rows.push_back(std::move(random));
        for (const auto& r : rows) {
            spdlog::info("evaluate {:>15}: P {:.3f} R {:.3f} F1 {:.3f} J {:.3f}", r.method, r.mean.precision,
                         r.mean.recall, r.mean.f1, r.mean.jaccard);
        }
        const auto dir = detail::fresh_dir(s, c);
        write_text_file(dir / "alignment.csv", alignment_report_csv(rows));
        write_text_file(dir / "alignment_series.csv", alignment_series_csv(rows));
        break;
    }
    case Stage::recover: {
        const auto odir = require_stage(Stage::oracle, c);
        const auto embeddings = load_tensor<EmbeddingTag>(input(odir / "embeddings.nten"));
        const Tensor atoms_t = load_tensor<PlainTag>(input(odir / "atoms.nten"));
        const Matrix atoms {atoms_t.dims().n, atoms_t.dims().d,
                            std::vector<double>(atoms_t.values().begin(), atoms_t.values().end())};
        const auto trained = train_sae(c.sae, embeddings);
        const auto score = dictionary_recovery_score(trained.params.w_dec, atoms);
        spdlog::info("recover: mean max |cos| = {:.4f}", score.mean_max_cos);
        std::ostringstream csv;
        csv.precision(17);
        csv << "atom,learned_row,abs_cos\n";
        for (const AtomMatch& m : score.matches) {
            csv << m.truth << ',' << m.learned << ',' << m.abs_cos << '\n';
        }
        const auto dir = detail::fresh_dir(s, c);
        save_sae(trained.params, c.sae, trained.history, dir / "checkpoint");
        write_text_file(dir / "recovery.csv", csv.str());
        nlohmann::json summary {{"mean_max_cos", score.mean_max_cos}, {"atoms", atoms.rows()}};
        write_text_file(dir / "recovery.json", summary.dump(2) + "\n");
        break;
    }
    }
    detail::write_manifest(s, c, inputs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("{} -> {} ({:.1f} s)", stage_command(s), stage_dir(s, c).string(), secs);
}

/// Stage order used by `pipeline`.
inline constexpr std::array pipeline_order {Stage::mesh,   Stage::flow,     Stage::vorticity, Stage::surrogate, Stage::embeddings,
                                            Stage::sae,    Stage::score,    Stage::topk,      Stage::jaccard,   Stage::localize,
                                            Stage::evaluate, Stage::oracle, Stage::recover};

/// Runs every stage and writes <out>/pipeline.json indexing the manifests.
inline void run_pipeline(const PipelineConfig& c)
{
    nlohmann::json index = nlohmann::json::array();
    for (const Stage s : pipeline_order) {
        run_stage(s, c);
        index.push_back({{"stage", stage_name(s)},
                         {"dir", detail::relative_to_out(stage_dir(s, c), c)},
                         {"manifest_sha256", sha256_file(manifest_path(s, c))}});
    }
    write_text_file(std::filesystem::path {c.out} / "pipeline.json",
                    nlohmann::json {{"version", version}, {"seed", c.seed}, {"stages", index}}.dump(2) + "\n");
}

enum ExitCode : int
{
    exit_ok = 0,
    exit_invalid_config = 1,
    exit_missing_artifact = 2,
    exit_numerical = 3,
    exit_other = 4,
};

struct RunRequest
{
    std::string command;
    std::optional<std::filesystem::path> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
};

/// Builds the effective config: file (if any), then --set overrides, then
/// --seed and --out.
inline auto resolve_config(const RunRequest& req) -> ConfigValidation
{
    nlohmann::json doc = nlohmann::json::object();
    if (req.config_path) {
        const auto parsed = nlohmann::json::parse(read_text_file(*req.config_path), nullptr, false);
        if (parsed.is_discarded()) {
            return {PipelineConfig {}, {"config file " + req.config_path->string() + " is not valid JSON"}};
        }
        doc = parsed;
    }
    for (const auto& o : req.overrides) {
        try {
            apply_override(doc, o);
        } catch (const ConfigError& e) {
            return {PipelineConfig {}, {e.what()}};
        }
    }
    if (req.seed) {
        doc["seed"] = *req.seed;
    }
    if (req.out) {
        doc["out"] = *req.out;
    }
    return validate_config(doc);
}

/// Runs a subcommand and maps failures to exit codes.
inline auto run_subcommand(const RunRequest& req) -> int
{
    try {
        const ConfigValidation v = resolve_config(req);
        if (!v.ok()) {
            for (const auto& e : v.errors) {
                spdlog::error("invalid config: {}", e);
            }
            return exit_invalid_config;
        }
        if (req.command == "pipeline") {
            run_pipeline(v.config);
        } else if (req.command == "validate") {
            std::printf("%s\n", config_to_json(v.config).dump(2).c_str());
        } else if (const auto stage = stage_from_command(req.command)) {
            run_stage(*stage, v.config);
        } else {
            spdlog::error("unknown subcommand '{}'", req.command);
            return exit_invalid_config;
        }
        return exit_ok;
    } catch (const ConfigError& e) {
        spdlog::error("invalid config: {}", e.what());
        return exit_invalid_config;
    } catch (const MissingArtifactError& e) {
        spdlog::error("{}", e.what());
        return exit_missing_artifact;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return exit_numerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_other;
    }
}

} // namespace saeflow
