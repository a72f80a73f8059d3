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

// Trains a sparse autoencoder on synthetic embeddings with a known
// dictionary and reports how well the learned decoder recovers it.
//
//   sample_dictionary_recovery [oracle_seed] [sae_seed]

#include "saeflow/eval.hpp"
#include "saeflow/sae.hpp"
#include "saeflow/synthgen.hpp"

#include <cstdio>
#include <cstdlib>
#include <exception>

int main(int argc, char** argv)
{
    using namespace saeflow;
    try {
        const WakeConfig wake;
        OracleConfig oracle;
        SaeConfig sae;
        if (argc > 1) {
            oracle.seed = std::strtoull(argv[1], nullptr, 10);
        }
        if (argc > 2) {
            sae.seed = std::strtoull(argv[2], nullptr, 10);
        }
        const Mesh mesh = generate_mesh(wake);
        const auto data = synthesize_oracle_embeddings(oracle, wake, mesh, generate_flow(wake, mesh));
        const auto dims = data.embeddings.dims();
        std::printf("oracle: %zu atoms in %zu dims, %zu x %zu rows\n", oracle.n_atoms, oracle.d_in, dims.t, dims.n);

        const auto trained = train_sae(sae, data.embeddings);
        std::printf("sae: %zu latents, best epoch %zu\n", sae.kappa * oracle.d_in, trained.best_epoch);

        const auto score = dictionary_recovery_score(trained.params.w_dec, data.truth.atoms);
        for (const AtomMatch& m : score.matches) {
            std::printf("  atom %2zu -> latent %3zu  |cos| %.4f\n", m.truth, m.learned, m.abs_cos);
        }
        std::printf("mean max |cos|: %.4f\n", score.mean_max_cos);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
