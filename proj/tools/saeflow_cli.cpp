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


#include "saeflow/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <string>
#include <vector>

namespace {

struct Descr
{
    const char* name;
    const char* help;
};

constexpr Descr commands[] = {
    {"gen-mesh", "Generate the synthetic cylinder mesh"},
    {"gen-flow", "Generate the vortex-street flow on the mesh"},
    {"train-surrogate", "Train the graph network surrogate"},
    {"extract", "Extract per-node embeddings from the trained surrogate"},
    {"train-sae", "Train the sparse autoencoder and encode all embeddings"},
    {"oracle-embed", "Synthesize embeddings with a planted dictionary"},
    {"score", "Score latent dimensions by every criterion"},
    {"topk", "Select global and per-snapshot top-K dimensions"},
    {"jaccard", "Overlap between global and per-snapshot selections over time"},
    {"localize", "Map selected dimensions onto mesh nodes (CSV and SVG)"},
    {"vorticity", "Vorticity field and high-vorticity mask"},
    {"evaluate", "Alignment of SAE and baseline selections with the vorticity mask"},
    {"recover", "Train an SAE on oracle embeddings and score dictionary recovery"},
    {"pipeline", "Run every stage in order"},
    {"validate", "Check a configuration and print its normalized form"},
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app {"Sparse-autoencoder analysis of mesh-based flow surrogates"};
    app.set_version_flag("--version", std::string {saeflow::version});
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    saeflow::RunRequest req;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    bool include_walls = false;
    for (const Descr& d : commands) {
        CLI::App* sub = app.add_subcommand(d.name, d.help);
        sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Global seed; overrides the config");
        sub->add_option("--out", out, "Output directory; overrides the config");
        sub->add_option("--set", req.overrides, "Override a config value, e.g. --set sae.lambda=1e-3")
            ->type_name("KEY=VALUE");
        sub->add_flag("--include-walls", include_walls, "Let wall nodes enter the vorticity mask");
        sub->callback([&req, sub] { req.command = sub->get_name(); });
    }
    CLI11_PARSE(app, argc, argv);

    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    const CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--config") > 0) {
        req.config_path = config_path;
    }
    if (sub->count("--seed") > 0) {
        req.seed = seed;
    }
    if (sub->count("--out") > 0) {
        req.out = out;
    }
    if (include_walls) {
        req.overrides.emplace_back("eval.include_walls=true");
    }
    return saeflow::run_subcommand(req);
}
