// Passive identifier, projection-based parameter update laws, and the
// adaptive closed loop that re-solves the gain kernels as estimates drift.
//
// Loop order per step (first-order in dt throughout):
//   1. U = int Ku(1,xi) uh dxi + int Km(1,xi) mh dxi  (current kernel rows,
//      parity-filtered and interpolated onto the plant grid)
//   2. plant step (explicit upwind, old-time sources)
//   3. identifier step: upwind transport + estimate-weighted plant sources;
//      the injection term rho e ||varpi||^2 is treated implicitly in e
//      (e_new = e_candidate / (1 + dt rho ||varpi||^2)); m-hat(1) <- U.
//      The explicit form of the injection term is unstable at the gains the
//      convergence runs need (rho ~ 2.5 drives dt rho ||varpi||^2 past the
//      explicit stability margin during the transient); the implicit form is
//      unconditionally stable in that term and still first-order in dt.
//   4. update laws: forward Euler + projection + hard clamp, driven by the
//      old-time errors; then the reflection estimate law
//   5. u-hat(0) boundary from the just-updated reflection estimate
//   6. kernel re-solve (warm started) every recompute_every steps
//   7. V1 bookkeeping
#pragma once

#include <functional>

#include "hypctl/estimates.hpp"
#include "hypctl/gainkernel.hpp"
#include "hypctl/plant.hpp"

namespace hypctl {

// The identifier's copy of the plant state.
struct IdentifierState {
    Field uh, mh;
};

// Projection operator: zeroes the update rate when the estimate sits on (or
// beyond) its bound and the rate points outward; passes it through otherwise.
double project(double tau, double omega_hat, double omega_bar);

// ||varpi||^2 = ||u||^2 + ||m||^2 (trapezoid), the injection weight.
double varpi_norm_sq(const Field& u, const Field& m, const Grid1D& g);

// One identifier update.  The transport speeds are the known lambda, mu (only
// the coefficients and the reflection are uncertain).  Needs the plant state
// at both time levels: the sources are old-time, the implicit injection
// relaxes toward the new plant state.  The left boundary uses est.rh as
// given; run_adaptive re-applies it after the update laws so it sees the
// freshly updated reflection estimate.
IdentifierState identifier_step(const IdentifierState& id,
                                const PlantState& plant_old,
                                const PlantState& plant_new,
                                const EstimateState& est, double lambda,
                                double mu, double U, double dt,
                                const Grid1D& g);

// Forward-Euler update laws with projection and a post-step hard clamp;
// driven by the old-time identifier errors and plant state.
EstimateState update_estimates(const EstimateState& est,
                               const PlantState& plant,
                               const IdentifierState& id, double dt,
                               const Grid1D& g);

// V1 = int e^{-gamma x} e1^2 + int e^{gamma x} e2^2
//    + sum_{gamma_i > 0} ||c_i - c_i hat||^2 / gamma_i
//    + lambda / (2 gamma_5) (r - rh)^2.
// True parameters come from the simulation harness; gains and weights from
// est.gains.  Terms whose gain is zero are excluded (frozen estimates).
double lyapunov_v1(const PlantState& plant, const IdentifierState& id,
                   const EstimateState& est, const PlantParams& truth,
                   const Grid1D& g);

// Gamma(t) = -int Kt_u(1,xi) uh dxi - int Kt_m(1,xi) mh dxi with
// Kt = approx - exact: the boundary perturbation a kernel approximation
// injects.  bound = eps (||uh||_1 + ||mh||_1) with eps the sup over both
// x=1 rows of |Kt|; the same row samples and quadrature weights enter Gamma
// and the bound, so |gamma| <= bound holds exactly by construction.
struct GammaPerturbation {
    double gamma = 0.0;
    double bound = 0.0;
};
GammaPerturbation gamma_perturbation(const KernelPair& exact,
                                     const KernelPair& approx,
                                     const IdentifierState& id,
                                     const Grid1D& g);

// x = 1 rows of a kernel pair (the raw control-law gains), independent of
// how the pair was produced.
Field kernel_row_u(const KernelPair& k);
Field kernel_row_m(const KernelPair& k);

// Control rows as the loop actually applies them: [1/4, 1/2, 1/4] filtered
// (the conjugate filter for the solver's parity-staggered sampling; see
// gainkernel.hpp) then linearly interpolated onto the plant grid.
std::pair<Field, Field> control_rows(const KernelPair& k, const Grid1D& g);

// Where run_adaptive gets its kernels.  Default: warm-started KernelSolver
// on kernel_grid.  Setting approximate_kernels switches the control path to
// the supplied map (e.g. a trained operator surrogate); the exact solver
// then still runs alongside to evaluate the Gamma diagnostics.
struct AdaptiveRunConfig {
    double T = 1.0;
    double dt = 0.005;
    int recompute_every = 1;
    TriGrid kernel_grid{2};
    KernelSolveOptions kernel_opts;
    std::function<KernelPair(const EstimateState&)> approximate_kernels;
    bool track_gamma = true;  // only used with approximate_kernels
    int log_every = 1;        // thin the log; the final step is always kept
    // Called after every kernel recompute with the estimates that produced
    // the pair (dataset generation hooks in here).  step is 1-based.
    std::function<void(int step, const EstimateState&, const KernelPair&)>
        on_kernel_update;
    // Called after every completed step with the updated states (trajectory
    // comparison hooks in here).  step is 1-based.
    std::function<void(int step, const PlantState&, const IdentifierState&)>
        on_step;
};

struct AdaptiveRunResult {
    TrajectoryLog log;
    EstimateState final_est;
    IdentifierState final_id;
    KernelPair final_kernels;
    int v1_violations = 0;   // steps exceeding the 1e-3 (1 + V1) allowance
    bool bounds_ok = true;   // estimates inside bounds at every step
};

AdaptiveRunResult run_adaptive(const PlantParams& truth, const Field& u0,
                               const Field& m0, const EstimateState& est0,
                               const IdentifierState& id0,
                               const AdaptiveRunConfig& cfg, const Grid1D& g);

} // namespace hypctl
