// Closed-loop training data for the kernel operator: estimate snapshots paired
// with the exact kernels solved from them (same step, so input and target are
// consistent by construction), plus the "KDS1" on-disk container and the
// seeded train/test split.
//
// A record's est_vector is the model input layout: the four coefficient
// estimates sampled at n_s equispaced points each, then the reflection
// estimate, 4*n_s + 1 entries in channel order c1, c2, c3, c4, r.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypctl/adaptloop.hpp"
#include "hypctl/estimates.hpp"
#include "hypctl/numerics.hpp"

namespace hypctl {

// Uniform-draw ranges for the trajectory parameters (the coefficient shape
// parameters and the reflection), plus the generation protocol knobs.
struct SamplingRanges {
    double s1_lo = 3.5, s1_hi = 4.5;    // c1 = cos(s1 arccos x)
    double s2_lo = 0.8, s2_hi = 1.0;    // c2 = cos(s2 arccos x)
    double s3_lo = 20.0, s3_hi = 21.0;  // c3 = sin(1 - s3 x) + 1
    double s4_lo = 10.0, s4_hi = 11.0;  // c4 = cos(s4 x)
    double r_lo = 2.0, r_hi = 5.0;
    int n_traj = 4;
    int stride = 4;   // snapshot every stride-th step
    std::uint64_t seed = 0;
};

struct DatasetRecord {
    std::vector<double> est_vector;  // 4*n_s + 1
    Field ku, km;                    // flat triangle storage on kernel_grid
    double t_snapshot = 0.0;
    int traj_id = 0;
};

struct Dataset {
    int n_s = 21;
    TriGrid kernel_grid{2};
    SamplingRanges ranges;
    std::uint64_t seed = 0;
    std::vector<DatasetRecord> records;
};

// Simulation protocol for generation: each trajectory draws (s1..s4, r), runs
// the exact-kernel adaptive loop from the standard initial data
// u0 = sin(2 pi x), m0 = x, and snapshots (estimates, solved kernels) every
// `stride` steps.  Defaults are the desk-scale benchmark configuration.
struct DatasetSimParams {
    Grid1D plant_grid{81};
    double lambda = 1.0, mu = 1.0;
    double dt = 0.005;
    double T = 10.0;
    TriGrid kernel_grid{21};
    KernelSolveOptions kernel_opts;
    AdaptBounds bounds{1.5, 1.5, 2.5, 1.5, 5.0};
    AdaptGains gains{1.0, 1.0, 1.0, 30.0, 1.0, 10.0, 2.5};
    int recompute_every = 1;
    int n_s = 21;
};

// The model input vector for an estimate state: each coefficient sampled by
// linear interpolation at x_k = k/(n_s-1), then rh.
std::vector<double> estimate_vector(const EstimateState& est, int n_s);

// Runs ranges.n_traj closed-loop trajectories (per-trajectory derived seeds)
// and collects the snapshot records.  Deterministic for a fixed seed.
Dataset generate_dataset(const SamplingRanges& ranges,
                         const DatasetSimParams& sim);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Seeded permutation partition; n_test = floor(fraction * n), the rest train.
// No record lands in both halves.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction,
                                          std::uint64_t seed);

// Generic named-array tensor container ("KTN1"), used for kernel dumps and
// estimate snapshots.  Arrays are stored in the given order.
using NamedArrays = std::vector<std::pair<std::string, std::vector<double>>>;
void save_tensors(const std::string& path, const NamedArrays& arrays);
NamedArrays load_tensors(const std::string& path);

} // namespace hypctl
