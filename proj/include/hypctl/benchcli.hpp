// CLI front end: flat sectioned key-value experiment configs, the kernel
// timing harness behind the solver-vs-operator comparison tables, and the
// subcommand dispatcher.
//
// Conventions: every run resolves its configuration (file, then --set
// overrides), writes the resolved text and a JSON manifest next to its data
// outputs, and is bit-reproducible from that resolved config.  Messages go
// to stderr, data to files.  Exit codes: 0 success, 1 configuration or usage
// error, 2 numerical failure.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hypctl/arz.hpp"
#include "hypctl/dataset.hpp"
#include "hypctl/estimates.hpp"
#include "hypctl/gainkernel.hpp"
#include "hypctl/noperator.hpp"
#include "hypctl/numerics.hpp"

namespace hypctl {

// Everything a run needs, with the desk-scale benchmark values as defaults.
struct ExperimentConfig {
    // [plant]
    double lambda = 1.0, mu = 1.0;
    CoeffSpec c1 = CoeffSpec::chebyshev(4.0);
    CoeffSpec c2 = CoeffSpec::chebyshev(0.9);
    CoeffSpec c3 = CoeffSpec::sin_shift(20.1);
    CoeffSpec c4 = CoeffSpec::cos_scale(10.1);
    double r = 4.0;
    int plant_points = 81;
    double dt = 0.005, T = 10.0;
    double u0_omega = 2.0;  // u0 = sin(u0_omega pi x); m0 is fixed to x

    // [adapt]
    AdaptBounds bounds{1.5, 1.5, 2.5, 1.5, 5.0};
    AdaptGains gains{1.0, 1.0, 1.0, 30.0, 1.0, 10.0, 2.5};
    int recompute_every = 1;

    // [kernel]
    int kernel_points = 21;
    KernelSolveOptions kernel_opts;

    // [operator]
    int n_s = 21, p = 64;
    std::vector<int> branch_hidden{256, 256}, trunk_hidden{128, 128};
    TrainConfig train;  // seed is overridden by [run] seed

    // [dataset]
    SamplingRanges ranges;  // seed is overridden by [run] seed

    // [arz]
    ArzParams arz;
    double arz_T = 300.0, arz_dt = 0.12;
    double arz_c_bar = 0.025, arz_gamma = 1.0, arz_g3 = 1.0, arz_rho = 1.0;
    ArzDatasetRanges arz_ranges;  // seed is overridden by [run] seed
    std::vector<double> arz_probes{150.0, 300.0, 450.0};

    // [run]
    std::uint64_t seed = 1;
};

// Parse the sectioned key-value text; `origin` labels error messages.
// Unknown sections or keys are errors, not warnings: a typo must not
// silently fall back to a default.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin);
ExperimentConfig load_config(const std::string& path);

// One "section.key=value" override, same setters as the file parser.
void apply_override(ExperimentConfig& cfg, const std::string& dotted_kv);

// Canonical resolved text: parsing it reproduces the config exactly (doubles
// are printed round-trip precise), so a dumped config replays a run
// bit-identically.
std::string dump_config(const ExperimentConfig& cfg);

// FNV-1a 64-bit hash of the canonical dump, hex-encoded; the manifest's
// config identity.
std::string config_hash(const ExperimentConfig& cfg);

// One row of the solver-vs-operator timing table.
struct BenchRow {
    double dx_kernel = 0.0;  // triangle spacing
    double solver_ms = 0.0;  // exact successive-approximation solve
    double no_ms = 0.0;      // operator inference with a prebuilt trunk cache
    double speedup = 0.0;    // solver_ms / no_ms
    double error = 0.0;      // kernel_error between the two results
};

// Median-of-11 wall times after 2 warmups per resolution, on the same
// estimate sample and the same triangle nodes; rows sorted by decreasing dx.
// The trunk cache is built once per resolution before timing: in deployment
// the grid is fixed for the whole run, so the per-step cost is one branch
// pass plus inner products, and that is the quantity the table compares.
std::vector<BenchRow> bench_kernels(const OperatorModel& model,
                                    const EstimateState& est,
                                    const std::vector<double>& resolutions,
                                    double lambda, double mu,
                                    const KernelSolveOptions& opts);

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path);

// The deterministic estimate sample used by eval-kernel and bench: the
// configured true coefficients clamped into the projection bounds, with the
// true reflection likewise clamped.
EstimateState bench_estimate(const ExperimentConfig& cfg);

// Subcommands: simulate, arz, gen-dataset, train, eval-kernel, bench,
// dataset-info.
int cli_dispatch(int argc, char** argv);

} // namespace hypctl
