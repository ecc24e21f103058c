#pragma once
// Gradient checks over model-level composites and the named suite run by
// `rmsd gradcheck`.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rmsd/gradcheck.hpp"
#include "rmsd/layers.hpp"

namespace rmsd {

/// Scalar-valued function of a graph and taped inputs.
using GraphFunction = std::function<Var(Graph<double>&, std::span<const Var>)>;

/// Checks d f / d(inputs, every trainable parameter). Each evaluation runs on
/// a private copy of `params`, so running statistics never leak between probes.
GradcheckReport gradcheck_model(const ModelParams<double>& params, const GraphFunction& f,
                                const std::vector<Tensord>& inputs, Mode mode, const GradcheckOptions& options);

struct SuiteCase {
    std::string name;
    GradcheckReport report;
};

enum class SuiteScale {
    Toy,    // primitives, losses, blocks over a few seeds, full base-4 model
    Smoke,  // one seed per block, no full model
};

struct SuiteOptions {
    SuiteScale scale = SuiteScale::Toy;
    std::uint64_t seed = 0;
    int block_seeds = 20;
    std::size_t model_coordinates = 200;
};

/// Runs every case; `on_case` (if set) sees each result as it finishes.
std::vector<SuiteCase> run_gradcheck_suite(const SuiteOptions& options,
                                           const std::function<void(const SuiteCase&)>& on_case = {});

}  // namespace rmsd
