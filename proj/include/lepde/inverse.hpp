#pragma once

// Gradient-based design of smoke-box boundary positions through the latent
// dynamics: differentiable masks, temperature annealing, the outlet-fraction
// objective and ground-truth evaluation of a design.

#include <array>
#include <functional>
#include <vector>

#include "lepde/boundary.hpp"
#include "lepde/data.hpp"
#include "lepde/model.hpp"
#include "lepde/solvers.hpp"

namespace lepde {

/// Which boundary coordinates are design variables: inlet_y, outlet_lo_y, outlet_hi_y.
using DesignMask = std::array<bool, 3>;

struct AnnealSchedule {
    double beta0 = 0.1;
    double beta1 = 0.05;
    int iters = 100;

    void validate() const;
};

/// beta0 + (beta1 - beta0) * iter / (iters - 1); beta0 when iters == 1.
double anneal_schedule(const AnnealSchedule& sched, int iter);

struct FractionResult {
    double loss = 0.0;
    double lower = 0.0;  ///< fraction through outlet 1
    double upper = 0.0;  ///< fraction through outlet 2
    double total = 0.0;  ///< K before flooring
};

inline constexpr double kFractionFloor = 1e-8;

/// frames[m] is the smoke field at frame m (flattened). Sums <o_i, frame>
/// over m in [k_s, k_e], normalizes by the total over both outlets and
/// scores the squared distance to the targets.
FractionResult smoke_fraction_objective(const std::vector<std::vector<double>>& frames, const std::vector<double>& o1,
                                        const std::vector<double>& o2, std::array<double, 2> targets, int k_s, int k_e);

/// Graph form: smoke is [T, cells] holding the frames already restricted to
/// [k_s, k_e]. Returns the scalar loss; fractions go to *out when non-null.
ag::Var smoke_fraction_loss(const ag::Var& smoke, const std::vector<double>& o1, const std::vector<double>& o2,
                            std::array<double, 2> targets, FractionResult* out = nullptr);

std::vector<double> design_vector(const BoundaryParams& p, const DesignMask& free);
BoundaryParams with_design_vector(BoundaryParams p, const DesignMask& free, const std::vector<double>& theta);

/// Continuous smoke-box mask [1, n*n] as a function of the free coordinates
/// theta, differentiable in theta.
ag::Var boundary_mask_var(const ag::Var& theta, const BoundaryParams& base, const DesignMask& free, double beta);

/// Outlet masks for the objective: 1 - mask on the right-wall cells of each
/// outlet's segment at temperature beta (beta <= 0 uses the rasterized voids).
std::pair<std::vector<double>, std::vector<double>> outlet_masks(const BoundaryParams& p, double beta);

/// Projects p into the box where every void stays inside its wall with
/// `margin` to spare and the outlets do not overlap. Only free outlet
/// coordinates move to resolve an overlap.
BoundaryParams project_boundary(BoundaryParams p, double margin = 1e-3, const DesignMask& free = {true, true, true});

struct DesignProblem {
    std::array<double, 2> targets{0.3, 0.7};
    int k_s = 50;
    int k_e = 79;
    BoundaryParams p0;
    DesignMask free{true, true, false};
    std::vector<double> smoke_init;  ///< n*n initial smoke
    double inflow_speed = 1.0;
    SmokeOptions solver;
    double lr = 0.1;
    int iters = 100;
    double margin = 1e-3;
    bool clamp_negative = true;  ///< clip decoded smoke at 0 before the inner products

    void validate() const;
};

/// Solver frames [0, S) for p: the model's input bundle, physical units [S, C, n, n].
Tensor smoke_initial_bundle(const BoundaryParams& p, const DesignProblem& problem, int S);

struct DesignIteration {
    int iter = 0;
    double beta = 0.0;
    double loss = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::array<double, 3> p{};  ///< (inlet_y, outlet_lo_y, outlet_hi_y) before the update
    std::vector<double> grad;
};

struct DesignResult {
    BoundaryParams p0;
    BoundaryParams p;  ///< final parameters
    std::vector<DesignIteration> history;
    FractionResult model;  ///< model estimate at p with the final temperature
    json to_json() const;
};

/// Model-side objective at p: the rollout latents and the fractions.
struct DesignForward {
    FractionResult fractions;
    Tensor latents;  ///< [m + 1, d_z]
};
DesignForward model_fractions(const LatentDynamics& model, const NormStats& stats, const BoundaryParams& p,
                              const DesignProblem& problem, double beta);

/// Adam on x with projection after each step. f returns the loss and fills
/// the gradient. on_iter (optional) sees each iteration before the update.
using LossGradFn = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;
using ProjectFn = std::function<std::vector<double>(const std::vector<double>&)>;
std::vector<double> projected_adam(std::vector<double> x0, const LossGradFn& f, const ProjectFn& project, double lr,
                                   int steps, const std::function<void(int, const std::vector<double>&, double,
                                                                       const std::vector<double>&)>& on_iter = {});

DesignResult optimize_boundary(const LatentDynamics& model, const NormStats& stats, const DesignProblem& problem,
                               const AnnealSchedule& sched);

struct DesignEvaluation {
    double solver_lower = 0.0;  ///< mask-based fraction on solver states
    double solver_upper = 0.0;
    double tally_lower = 0.0;   ///< from the solver's exit tallies over [k_s, k_e]
    double tally_upper = 0.0;
    double solver_error = 0.0;  ///< |solver_lower - t1|
    double model_lower = 0.0;
    double model_error = 0.0;   ///< |model_lower - t1|
    double gap = 0.0;           ///< |model_lower - solver_lower|
    json to_json() const;
};

/// Runs the solver on the rasterized p. model_lower < 0 skips the model fields.
DesignEvaluation evaluate_design(const BoundaryParams& p, const DesignProblem& problem, double model_lower = -1.0);

/// A design start drawn from the discrete grid of inlet/outlet positions and
/// smoke offsets, scaled to an n-cell box.
struct DesignStart {
    BoundaryParams p;
    double blob_x = 0.0;
    double blob_y = 0.0;
};
DesignStart sample_design_start(int n, std::uint64_t seed);

}  // namespace lepde
