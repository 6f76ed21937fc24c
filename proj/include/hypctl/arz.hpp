// Aw-Rascle-Zhang freeway specialization: Greenshields equilibrium and
// characteristic-speed derivation, the Riemann-coordinate change that
// decouples the linearized model, and the single-unknown adaptive loop where
// only the relaxation-time coefficient c(x) = -(1/tau) exp(-x/(tau v*)) is
// estimated.
//
// Linearizing the ARZ model about the uniform congested equilibrium
// (rho*, v*) and passing to the characteristic variables
//
//   m1 = v~,   u1(x) = exp(x/(tau v*)) (v~ + (gamma p*/rho*) rho~)
//
// gives the one-way coupled transport system
//
//   u1_t + v* u1_x          = 0
//   m1_t - (gamma p* - v*) m1_x = c(x) u1
//   u1(0) = r0 m1(0),  r0 = (v* - gamma p*)/v*,   m1(1) = U(t)
//
// which is the general plant with c1 = c2 = c4 = 0 and a known reflection,
// so the kernel solver and control rows are reused unchanged.  Internally x
// is rescaled to [0,1] and the speeds divided by L; source coefficients are
// rates (1/s) and are unchanged by the rescaling.
//
// The controller never reads tau: the simulator hides it inside the true
// c(x), and the (rho, v) panels in the logs are reconstructions performed by
// the simulation-side reporting.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypctl/dataset.hpp"
#include "hypctl/estimates.hpp"
#include "hypctl/gainkernel.hpp"
#include "hypctl/noperator.hpp"
#include "hypctl/numerics.hpp"
#include "hypctl/plant.hpp"

namespace hypctl {

struct ArzParams {
    double vf = 40.0;         // free-flow speed (m/s)
    double rho_m = 160.0;     // maximum density (veh/km)
    double rho_star = 120.0;  // equilibrium density (veh/km)
    double tau = 60.0;        // relaxation time (s); simulation truth, hidden
                              // from the controller
    double gamma_exp = 1.0;   // pressure exponent
    double L = 600.0;         // road length (m)
    double c0 = std::nan(""); // pressure coefficient; NaN -> vf / rho_m^gamma,
                              // the Greenshields choice V(rho) = vf - p(rho)
    int n_points = 201;       // road grid nodes

    double pressure_coeff() const {
        return std::isnan(c0) ? vf / std::pow(rho_m, gamma_exp) : c0;
    }
    Grid1D road_grid() const { return Grid1D(n_points, L); }
};

struct ArzDerived {
    double v_star = 0.0;   // V(rho*) = vf (1 - (rho*/rho_m)^gamma)
    double p_star = 0.0;   // c0 rho*^gamma
    double q_star = 0.0;   // rho* v*
    double lambda = 0.0;   // = v*, physical u1 speed (m/s)
    double mu = 0.0;       // = gamma p* - v*, physical m1 speed (m/s)
    double r0 = 0.0;       // (v* - gamma p*)/v*, known boundary reflection
    Field c_field;         // c(x) on the road grid (values shared with the
                           // unit grid: the rescaling moves nodes, not values)
};

// Greenshields equilibrium and Eq.-2 coefficients.  Requires the congested
// regime gamma p* > v*; otherwise mu <= 0 and the configuration is rejected.
ArzDerived derive_equilibrium(const ArzParams& p);

// Characteristic coordinates from physical perturbations (rho~, v~) and back.
// physical_from_riemann returns absolute fields (rho* + rho~, v* + v~).
std::pair<Field, Field> riemann_from_physical(const Field& rho_pert,
                                              const Field& v_pert,
                                              const ArzDerived& d,
                                              const ArzParams& p,
                                              const Grid1D& g);
std::pair<Field, Field> physical_from_riemann(const Field& u1, const Field& m1,
                                              const ArzDerived& d,
                                              const ArzParams& p,
                                              const Grid1D& g);

// The stop-and-go benchmark perturbation rho~ = 0.1 sin(3 pi x / L) rho*,
// v~ = -0.01 sin(3 pi x / L) v*.
std::pair<Field, Field> arz_initial_perturbation(const ArzParams& p,
                                                 const Grid1D& g);

enum class ArzController { open_loop, exact_adaptive, neural_adaptive };

struct ArzRunConfig {
    ArzController controller = ArzController::exact_adaptive;
    const OperatorModel* model = nullptr;  // required for neural_adaptive
    double T = 300.0;
    double dt = 0.12;
    TriGrid kernel_grid{21};
    KernelSolveOptions kernel_opts;
    int recompute_every = 1;
    double c_bar = 0.025;   // projection bound: covers 1/tau for tau >= 40
    double gamma = 1.0;     // spatial weight exp(gamma x) in the update law
    double g3 = 1.0;        // update-law gain
    double rho_gain = 1.0;  // identifier injection gain
    std::vector<double> probes;  // physical positions logged as rho/v columns
    int log_every = 1;
    // Dataset hook, as in AdaptiveRunConfig: estimates (on the unit grid,
    // rh = r0) and the kernels solved from them after each recompute.
    std::function<void(int step, const EstimateState&, const KernelPair&)>
        on_kernel_update;
};

struct ArzRunResult {
    TrajectoryLog log;       // norm_u/norm_m are Riemann-state L2 norms on the
                             // unit grid; extra columns are the probes
    Field chat;              // final estimate of c on the unit grid
    Field rho, v;            // final reconstructed physical fields
    bool chat_in_bounds = true;     // |chat| <= c_bar at every step
    double u10_consistency = 0.0;   // max |u1(0) - r0 m1(0)| over all steps
};

// Open-loop (zero-gradient outflow, the unmetered road) or adaptive
// closed-loop simulation of the linearized Riemann system from the
// stop-and-go initial data.
ArzRunResult run_arz(const ArzParams& p, const ArzRunConfig& cfg);

// Closed-loop snapshot dataset over relaxation-time draws, the ARZ mirror of
// generate_dataset: each trajectory runs exact_adaptive at a hidden tau ~
// U[tau_lo, tau_hi] and records (estimate vector, solved kernels) every
// stride-th step.
struct ArzDatasetRanges {
    double tau_lo = 50.0, tau_hi = 70.0;
    int n_traj = 4;
    int stride = 5;
    int n_s = 21;  // samples per coefficient channel in the estimate vector
    std::uint64_t seed = 0;
};
Dataset generate_arz_dataset(const ArzParams& base,
                             const ArzDatasetRanges& ranges,
                             const ArzRunConfig& sim);

} // namespace hypctl
