// Branch/trunk operator network mapping a sampled estimate state to kernel
// values at triangle query points, trained on closed-loop snapshot datasets.
//
// Architecture: a fully connected branch on the flattened (4 n_s + 1) input
// and a fully connected trunk on the query (x, xi), ReLU hidden layers,
// linear outputs of shared width 2p.  The prediction splits the basis:
//
//   Ku(x,xi) = sum_{i<p}  b_i t_i + beta_u
//   Km(x,xi) = sum_{i>=p} b_i t_i + beta_m
//
// with learned scalar biases beta_u, beta_m.  Branch inputs are standardized
// per channel with statistics from the training split; trunk inputs are the
// raw coordinates (already in [0,1]).
//
// The trunk depends only on coordinates, so for a fixed triangle grid its
// outputs are a reusable basis: per-estimate inference is then one branch
// pass plus inner products (build_trunk_cache / predict_kernels).  Training
// exploits the same structure: every record in a batch shares the dataset's
// triangle nodes as queries, so the trunk runs once per batch.
//
// Everything is hand-written and deterministic: forward, backward
// (verified against central finite differences by grad_check), Adam, and the
// "KNO1" serialization.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypctl/dataset.hpp"
#include "hypctl/gainkernel.hpp"
#include "hypctl/numerics.hpp"

namespace hypctl {

// One fully connected layer, W row-major [out][in].
struct Dense {
    int in = 0, out = 0;
    std::vector<double> W;
    std::vector<double> b;
};

struct OperatorModel {
    int n_s = 21;  // samples per coefficient channel
    int p = 64;    // split-basis width; branch and trunk both end at 2p
    std::vector<int> branch_sizes;  // e.g. {85, 256, 256, 128}
    std::vector<int> trunk_sizes;   // e.g. {2, 128, 128, 128}
    std::vector<Dense> branch, trunk;
    double beta_u = 0.0, beta_m = 0.0;
    std::vector<double> norm_mean, norm_scale;  // per branch-input channel
    std::uint64_t seed = 0;

    int input_width() const { return 4 * n_s + 1; }
    void check_shapes() const;  // throws on any inconsistency
};

// He-initialized model (normal weights scaled by sqrt(2/fan_in), zero
// biases), identity normalization until training fills the statistics.
// Hidden widths exclude the input and the 2p output.
OperatorModel make_operator_model(int n_s, int p,
                                  const std::vector<int>& branch_hidden,
                                  const std::vector<int>& trunk_hidden,
                                  std::uint64_t seed);

// The default desk-scale architecture: branch {4n_s+1, 256, 256, 2p},
// trunk {2, 128, 128, 2p}, p = 64.
OperatorModel default_operator_model(int n_s = 21, std::uint64_t seed = 1);

// Pointwise inference.  Queries must lie in the closed triangle
// 0 <= xi <= x <= 1; anything else throws.
std::vector<std::pair<double, double>> forward(
    const OperatorModel& m, const std::vector<double>& est_vector,
    const std::vector<std::pair<double, double>>& queries);

// Trunk outputs for every node of a triangle grid, flat [node][2p].
struct TrunkCache {
    TriGrid grid{2};
    std::vector<double> t;
};
TrunkCache build_trunk_cache(const OperatorModel& m, const TriGrid& tg);

// Kernel prediction on a triangle grid; the cached overload skips the trunk.
KernelPair predict_kernels(const OperatorModel& m, const EstimateState& est,
                           const TriGrid& tg);
KernelPair predict_kernels(const OperatorModel& m, const EstimateState& est,
                           const TrunkCache& cache);

// Mean over batch of (Ku_hat - Ku)^2 + (Km_hat - Km)^2.
struct OperatorSample {
    std::vector<double> est_vector;
    double x = 0.0, xi = 0.0;
    double ku = 0.0, km = 0.0;
};
double loss_mse(const OperatorModel& m, const std::vector<OperatorSample>& batch);

// Central-finite-difference check of the hand-written backward pass on the
// first n_records records of ds: returns the max relative error over
// n_coords randomly selected weight coordinates.  eps_fd in [1e-7, 1e-4].
double grad_check(const OperatorModel& m, const Dataset& ds, int n_records,
                  double eps_fd, int n_coords = 200, std::uint64_t seed = 7);

struct TrainConfig {
    double lr = 1e-3;      // Adam base rate, cosine-annealed to 0 over the
                           // epoch budget; betas (0.9, 0.999), eps 1e-8
    int epochs = 600;
    int batch = 256;       // records per batch (each record contributes all
                           // triangle nodes as queries)
    double split = 0.1;    // test fraction (floor rule, see split_dataset)
    std::uint64_t seed = 1;
    bool shuffle = true;
};

struct TrainHistory {
    std::vector<double> train_loss;  // per epoch, running mean over batches
    std::vector<double> test_loss;   // per epoch, full test set
};

// Adam optimization of loss_mse over the dataset; deterministic for a fixed
// config.  Throws a training-divergence error naming the epoch if the loss
// goes non-finite.  By default the model is default_operator_model(ds.n_s,
// cfg.seed); pass `init` to start from a custom architecture or checkpoint
// (its n_s must match the dataset).
OperatorModel train_operator(const Dataset& ds, const TrainConfig& cfg,
                             TrainHistory& hist,
                             const OperatorModel* init = nullptr);

// Mean over records of ||K_hat - K||_2 / ||K||_2 with the plain vector
// 2-norm over all triangle nodes, both kernels stacked (the accuracy metric
// quoted for the trained model).
double mean_relative_l2(const OperatorModel& m, const Dataset& ds);

// Window-averaged loss curve (rolling mean over `window` epochs), the
// smoothed series used by the monotone-decrease checks.
std::vector<double> smoothed_losses(const std::vector<double>& loss, int window);

// "KNO1" container round-trip; load validates magic, version, shapes, and
// exact file size before returning.
void save_model(const OperatorModel& m, const std::string& path);
OperatorModel load_model(const std::string& path);

} // namespace hypctl
