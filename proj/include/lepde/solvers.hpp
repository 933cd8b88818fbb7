#pragma once

// Ground-truth solvers for the three PDE families:
//  - the 1D forced advection/diffusion/dispersion family (finite volume, RK4),
//  - 2D incompressible Navier-Stokes in vorticity form (pseudo-spectral),
//  - a 2D smoke box with one inlet and two outlets (stable-fluids style).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lepde/boundary.hpp"
#include "lepde/tensor.hpp"

namespace lepde {

struct Grid1D {
    int n_x = 200;
    double length = 16.0;
    bool periodic = true;

    double dx() const { return length / n_x; }
    void validate() const;
};

struct Grid2D {
    int n = 64;
    double length = 1.0;
    bool periodic = true;

    double dx() const { return length / n; }
    void validate() const;
};

using GridSpec = std::variant<Grid1D, Grid2D>;

struct PDEParams1D {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
};

struct ForcingTerm {
    double amplitude = 0.0;
    double omega = 0.0;
    int mode = 1;
    double phase = 0.0;
};

/// delta(t, x) = sum_j A_j sin(omega_j t + 2 pi l_j x / L + phi_j)
struct ForcingSpec1D {
    std::vector<ForcingTerm> terms;
    double length = 16.0;

    double operator()(double t, double x) const;
};

/// Five terms with A ~ U[-0.5, 0.5], omega ~ U[-0.4, 0.4], l in {1,2,3},
/// phi ~ U[0, 2 pi). Deterministic in the seed.
ForcingSpec1D sample_forcing(std::uint64_t seed, double length = 16.0, int n_terms = 5);

struct Viscosity {
    double nu = 1e-3;
};

/// Designable boundary of the smoke box: centers of the inlet void on the left
/// wall and of the two outlet voids on the right wall, in cell-center units.
struct BoundaryParams {
    int n = 32;
    int wall = 2;
    double width = 4.0;
    double inlet_y = 16.0;
    double outlet_lo_y = 10.0;
    double outlet_hi_y = 22.0;

    /// Throws InvalidArgument when a void leaves its wall or the outlets overlap.
    void validate() const;
    std::array<double, 3> as_array() const { return {inlet_y, outlet_lo_y, outlet_hi_y}; }
};

using StaticParams = std::variant<PDEParams1D, Viscosity, BoundaryParams>;

/// Time-major solution array [n_t, C, spatial...] stored as 32-bit floats.
struct Trajectory {
    Shape shape;
    std::vector<float> states;
    double dt = 0.0;
    GridSpec grid;
    StaticParams params;
    std::uint64_t seed = 0;
    std::vector<std::string> channels;
    /// Per-frame side outputs (e.g. smoke exit tallies).
    std::map<std::string, std::vector<double>> series;

    int n_t() const { return shape.at(0); }
    int n_channels() const { return shape.at(1); }
    std::size_t frame_size() const;
    std::size_t spatial_size() const;
    std::span<const float> frame(int t) const;
    std::span<const float> channel(int t, int c) const;
    bool all_finite() const;
};

// ---------------------------------------------------------------------------
// 1D family

struct Burgers1DOptions {
    double cfl = 0.4;
    /// Upper bound on the internal step; rejected if it exceeds the linear
    /// stability limit of the diffusion/dispersion terms.
    std::optional<double> max_internal_dt;
};

/// Linear (state-independent) stability limit for the internal RK4 step.
double burgers_linear_dt_limit(const PDEParams1D& params, const Grid1D& grid, double cfl);

/// Integrates u_t + (alpha u^2 - beta u_x + gamma u_xx)_x = delta(t, x) on a
/// periodic grid and stores n_t frames spaced dt apart. u0 defaults to delta(0, x).
Trajectory simulate_burgers1d(const PDEParams1D& params, const ForcingSpec1D& forcing, const Grid1D& grid, int n_t,
                              double dt, std::optional<std::vector<double>> u0 = std::nullopt,
                              const Burgers1DOptions& options = {});

// ---------------------------------------------------------------------------
// 2D Navier-Stokes, vorticity form on the periodic unit torus

struct NS2DOptions {
    double cfl = 0.5;
    double max_internal_dt = 1e-2;
};

/// 0.1 (sin 2pi(x+y) + cos 2pi(x+y)), sampled at grid points.
std::vector<double> default_ns_forcing(const Grid2D& grid);

/// Smooth random zero-mean initial vorticity (Gaussian spectrum), deterministic in seed.
std::vector<double> random_vorticity(const Grid2D& grid, std::uint64_t seed, double amplitude = 1.0);

/// w_t + u . grad w = nu lap w + f, with u recovered from the streamfunction.
/// Frames are vorticity, layout [n_t, 1, n, n]; frame 0 is w0 (mean removed).
Trajectory simulate_ns2d(double nu, const Grid2D& grid, const std::vector<double>& w0, const std::vector<double>& forcing,
                         int n_t, double dt, const NS2DOptions& options = {});

/// Max |k . u_hat| over modes of the velocity reconstructed from w.
double ns_velocity_divergence(const Grid2D& grid, const std::vector<double>& w);

// ---------------------------------------------------------------------------
// 2D smoke box

/// Segments of the box walls: solid top/bottom walls, an inlet void on the left
/// wall, and the right wall split between the lower and upper outlet voids.
std::vector<SegmentSpec> smoke_box_segments(const BoundaryParams& p);

/// Index of the right-wall segment rows where the lower outlet's segment ends.
int smoke_box_outlet_split(const BoundaryParams& p);

struct SmokeGeometry {
    int n = 0;
    std::vector<int> solid;         ///< 1 = solid
    std::vector<int> inlet_rows;    ///< rows with an open left edge
    std::vector<int> lower_rows;    ///< rows with an open right edge, lower outlet
    std::vector<int> upper_rows;    ///< rows with an open right edge, upper outlet
    std::vector<double> lower_mask; ///< 1 on lower-outlet void cells
    std::vector<double> upper_mask; ///< 1 on upper-outlet void cells
};

/// Rasterizes the boundary at the beta -> 0 limit.
SmokeGeometry smoke_geometry(const BoundaryParams& p);

struct SmokeOptions {
    double frame_dt = 1.0;
    int jacobi_iterations = 40;
    double cfl = 0.3;
    int min_substeps = 1;
    /// Replace outlet voids with solid wall (for the closed-box check).
    bool close_outlets = false;
};

/// Channels (smoke, v_x, v_y) on an n x n grid in cell units. Series
/// "exit_lower" and "exit_upper" hold smoke leaving through each outlet during
/// the interval ending at each frame; "clamped" counts negative-smoke clamps.
Trajectory simulate_smoke2d(const BoundaryParams& boundary, const std::vector<double>& smoke_init,
                            double inflow_speed, int n_t, const SmokeOptions& options = {});

/// Gaussian blob of smoke at (cx, cy) in cell units.
std::vector<double> smoke_blob(int n, double cx, double cy, double radius, double amount = 1.0);

// ---------------------------------------------------------------------------

/// Strided subsampling in time and space; dt and dx scale with the factors.
Trajectory downsample_trajectory(const Trajectory& traj, int t_factor, int x_factor);

}  // namespace lepde
