#include "lepde/solvers.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "lepde/error.hpp"

namespace lepde {

namespace {

constexpr double kPi = std::numbers::pi;

void append_frame(Trajectory& traj, const std::vector<double>& frame) {
    traj.states.insert(traj.states.end(), frame.begin(), frame.end());
}

bool finite_all(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Common types

void Grid1D::validate() const {
    if (n_x < 4) throw InvalidArgument("Grid1D: n_x must be >= 4");
    if (!(length > 0.0)) throw InvalidArgument("Grid1D: length must be positive");
}

void Grid2D::validate() const {
    if (n < 8) throw InvalidArgument("Grid2D: n must be >= 8");
    if (!(length > 0.0)) throw InvalidArgument("Grid2D: length must be positive");
}

double ForcingSpec1D::operator()(double t, double x) const {
    double s = 0.0;
    for (const auto& term : terms)
        s += term.amplitude * std::sin(term.omega * t + 2.0 * kPi * term.mode * x / length + term.phase);
    return s;
}

ForcingSpec1D sample_forcing(std::uint64_t seed, double length, int n_terms) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(-0.5, 0.5);
    std::uniform_real_distribution<double> omega(-0.4, 0.4);
    std::uniform_int_distribution<int> mode(1, 3);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    ForcingSpec1D spec;
    spec.length = length;
    for (int j = 0; j < n_terms; ++j) {
        ForcingTerm t;
        t.amplitude = amp(rng);
        t.omega = omega(rng);
        t.mode = mode(rng);
        t.phase = phase(rng);
        spec.terms.push_back(t);
    }
    return spec;
}

void BoundaryParams::validate() const {
    if (n < 8) throw InvalidArgument("BoundaryParams: grid too small");
    if (wall < 1 || 2 * wall >= n) throw InvalidArgument("BoundaryParams: bad wall thickness");
    if (!(width > 0.0)) throw InvalidArgument("BoundaryParams: void width must be positive");
    const double lo = wall, hi = n - wall;
    auto inside = [&](double c, const char* name) {
        if (!(c - width / 2 > lo && c + width / 2 < hi))
            throw InvalidArgument(std::string("BoundaryParams: ") + name + " void leaves its wall");
    };
    inside(inlet_y, "inlet");
    inside(outlet_lo_y, "lower outlet");
    inside(outlet_hi_y, "upper outlet");
    if (outlet_lo_y + width / 2 > outlet_hi_y - width / 2)
        throw InvalidArgument("BoundaryParams: outlet voids overlap");
}

std::size_t Trajectory::spatial_size() const {
    std::size_t s = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) s *= static_cast<std::size_t>(shape[i]);
    return s;
}

std::size_t Trajectory::frame_size() const { return spatial_size() * static_cast<std::size_t>(n_channels()); }

std::span<const float> Trajectory::frame(int t) const {
    return std::span<const float>(states).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size());
}

std::span<const float> Trajectory::channel(int t, int c) const {
    return frame(t).subspan(static_cast<std::size_t>(c) * spatial_size(), spatial_size());
}

bool Trajectory::all_finite() const {
    return std::all_of(states.begin(), states.end(), [](float x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// 1D family

double burgers_linear_dt_limit(const PDEParams1D& p, const Grid1D& grid, double cfl) {
    const double dx = grid.dx();
    double limit = std::numeric_limits<double>::infinity();
    // Centered second difference: spectral radius 4 beta / dx^2, RK4 real-axis bound ~2.78.
    if (p.beta > 0.0) limit = std::min(limit, cfl * dx * dx / (2.0 * p.beta));
    // Centered third difference: spectral radius ~2.6 |gamma| / dx^3, RK4 imaginary bound ~2.83.
    if (p.gamma != 0.0) limit = std::min(limit, cfl * dx * dx * dx / std::abs(p.gamma));
    return limit;
}

namespace {

double minmod(double a, double b) {
    if (a * b <= 0.0) return 0.0;
    return std::abs(a) < std::abs(b) ? a : b;
}

class BurgersRhs {
public:
    BurgersRhs(const PDEParams1D& p, const ForcingSpec1D& forcing, const Grid1D& grid)
        : p_(p), forcing_(forcing), n_(grid.n_x), dx_(grid.dx()), slope_(n_), flux_(n_) {}

    void operator()(const std::vector<double>& u, double t, std::vector<double>& out) {
        const int n = n_;
        auto at = [&](int i) { return u[static_cast<std::size_t>((i % n + n) % n)]; };
        for (int i = 0; i < n; ++i) slope_[i] = minmod(at(i) - at(i - 1), at(i + 1) - at(i));
        // flux_[i] lives on the face between cells i and i+1.
        for (int i = 0; i < n; ++i) {
            const int ip = (i + 1) % n;
            const double ul = u[i] + 0.5 * slope_[i];
            const double ur = u[ip] - 0.5 * slope_[ip];
            const double a = std::max(std::abs(2.0 * p_.alpha * ul), std::abs(2.0 * p_.alpha * ur));
            const double adv = 0.5 * p_.alpha * (ul * ul + ur * ur) - 0.5 * a * (ur - ul);
            const double diff = -p_.beta * (u[ip] - u[i]) / dx_;
            const double disp = p_.gamma * (at(i + 2) - at(i + 1) - at(i) + at(i - 1)) / (2.0 * dx_ * dx_);
            flux_[i] = adv + diff + disp;
        }
        for (int i = 0; i < n; ++i) {
            const int im = (i + n - 1) % n;
            out[i] = -(flux_[i] - flux_[im]) / dx_ + forcing_(t, i * dx_);
        }
    }

private:
    PDEParams1D p_;
    const ForcingSpec1D& forcing_;
    int n_;
    double dx_;
    std::vector<double> slope_, flux_;
};

}  // namespace

Trajectory simulate_burgers1d(const PDEParams1D& params, const ForcingSpec1D& forcing, const Grid1D& grid, int n_t,
                              double dt, std::optional<std::vector<double>> u0, const Burgers1DOptions& options) {
    grid.validate();
    if (n_t < 2) throw InvalidArgument("simulate_burgers1d: n_t must be >= 2");
    if (!(dt > 0.0)) throw InvalidArgument("simulate_burgers1d: dt must be positive");
    const double linear_limit = burgers_linear_dt_limit(params, grid, options.cfl);
    if (options.max_internal_dt && *options.max_internal_dt > linear_limit) {
        std::ostringstream os;
        os << "simulate_burgers1d: internal step " << *options.max_internal_dt << " exceeds stability limit "
           << linear_limit;
        throw InvalidArgument(os.str());
    }

    const int n = grid.n_x;
    const double dx = grid.dx();
    std::vector<double> u(n);
    if (u0) {
        if (static_cast<int>(u0->size()) != n) throw ShapeMismatch("simulate_burgers1d: u0 size != n_x");
        u = *u0;
    } else {
        for (int i = 0; i < n; ++i) u[i] = forcing(0.0, i * dx);
    }

    Trajectory traj;
    traj.shape = {n_t, 1, n};
    traj.dt = dt;
    traj.grid = grid;
    traj.params = params;
    traj.channels = {"u"};
    traj.states.reserve(static_cast<std::size_t>(n_t) * n);
    append_frame(traj, u);

    BurgersRhs rhs(params, forcing, grid);
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    double t = 0.0;
    for (int frame = 1; frame < n_t; ++frame) {
        double umax = 0.0;
        for (double v : u) umax = std::max(umax, std::abs(v));
        double step = std::min(linear_limit, dt);
        if (params.alpha != 0.0 && umax > 0.0) step = std::min(step, options.cfl * dx / (2.0 * std::abs(params.alpha) * umax));
        if (options.max_internal_dt) step = std::min(step, *options.max_internal_dt);
        const int substeps = std::max(1, static_cast<int>(std::ceil(dt / step - 1e-12)));
        const double h = dt / substeps;
        for (int s = 0; s < substeps; ++s) {
            rhs(u, t, k1);
            for (int i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k1[i];
            rhs(tmp, t + 0.5 * h, k2);
            for (int i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k2[i];
            rhs(tmp, t + 0.5 * h, k3);
            for (int i = 0; i < n; ++i) tmp[i] = u[i] + h * k3[i];
            rhs(tmp, t + h, k4);
            for (int i = 0; i < n; ++i) u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            t += h;
        }
        if (!finite_all(u)) {
            std::ostringstream os;
            os << "simulate_burgers1d: non-finite state at frame " << frame << " (internal step " << h << ")";
            throw NonFiniteError(os.str());
        }
        t = frame * dt;
        append_frame(traj, u);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// 2D Navier-Stokes

namespace {

using cplx = std::complex<double>;

// Real <-> half-complex 2D transforms of an n x n field, unnormalized forward.
class Fft2D {
public:
    explicit Fft2D(int n) : n_(n), nh_(n / 2 + 1) {
        real_ = fftw_alloc_real(static_cast<std::size_t>(n) * n);
        spec_ = fftw_alloc_complex(static_cast<std::size_t>(n) * nh_);
        fwd_ = fftw_plan_dft_r2c_2d(n, n, real_, spec_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_2d(n, n, spec_, real_, FFTW_ESTIMATE);
    }
    ~Fft2D() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(spec_);
    }
    Fft2D(const Fft2D&) = delete;
    Fft2D& operator=(const Fft2D&) = delete;

    int modes() const { return n_ * nh_; }

    void forward(const std::vector<double>& in, std::vector<cplx>& out) {
        std::copy(in.begin(), in.end(), real_);
        fftw_execute(fwd_);
        out.resize(static_cast<std::size_t>(modes()));
        for (int i = 0; i < modes(); ++i) out[i] = {spec_[i][0], spec_[i][1]};
    }

    // Includes the 1/n^2 normalization.
    void inverse(const std::vector<cplx>& in, std::vector<double>& out) {
        for (int i = 0; i < modes(); ++i) {
            spec_[i][0] = in[i].real();
            spec_[i][1] = in[i].imag();
        }
        fftw_execute(inv_);
        out.resize(static_cast<std::size_t>(n_) * n_);
        const double norm = 1.0 / (static_cast<double>(n_) * n_);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = real_[i] * norm;
    }

private:
    int n_, nh_;
    double* real_;
    fftw_complex* spec_;
    fftw_plan fwd_, inv_;
};

struct Wavenumbers {
    std::vector<double> kx, ky, k2;
    std::vector<double> dealias;
};

// Row-major spectral layout: row = y index (full), column = x index (half).
Wavenumbers make_wavenumbers(const Grid2D& g) {
    const int n = g.n, nh = n / 2 + 1;
    Wavenumbers w;
    const std::size_t m = static_cast<std::size_t>(n) * nh;
    w.kx.resize(m);
    w.ky.resize(m);
    w.k2.resize(m);
    w.dealias.resize(m);
    const double base = 2.0 * kPi / g.length;
    const double cut = (2.0 / 3.0) * (n / 2.0);
    for (int j = 0; j < n; ++j) {
        const int jy = j <= n / 2 ? j : j - n;
        for (int i = 0; i < nh; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j) * nh + i;
            w.kx[idx] = base * i;
            w.ky[idx] = base * jy;
            w.k2[idx] = w.kx[idx] * w.kx[idx] + w.ky[idx] * w.ky[idx];
            w.dealias[idx] = (std::abs(i) <= cut && std::abs(jy) <= cut) ? 1.0 : 0.0;
        }
    }
    return w;
}

class VorticityRhs {
public:
    VorticityRhs(const Grid2D& g, const std::vector<cplx>& forcing_hat)
        : fft_(g.n), wn_(make_wavenumbers(g)), f_hat_(forcing_hat) {}

    const Wavenumbers& wavenumbers() const { return wn_; }
    Fft2D& fft() { return fft_; }

    // Nonlinear part: -FFT(u . grad w) (dealiased) + f_hat.
    void nonlinear(const std::vector<cplx>& w_hat, std::vector<cplx>& out) {
        const std::size_t m = w_hat.size();
        buf_.resize(m);
        const cplx I(0.0, 1.0);
        auto to_phys = [&](auto coef, std::vector<double>& dst) {
            for (std::size_t i = 0; i < m; ++i) buf_[i] = coef(i);
            fft_.inverse(buf_, dst);
        };
        to_phys([&](std::size_t i) { return wn_.k2[i] > 0 ? I * wn_.ky[i] * w_hat[i] / wn_.k2[i] : cplx{}; }, u_);
        to_phys([&](std::size_t i) { return wn_.k2[i] > 0 ? -I * wn_.kx[i] * w_hat[i] / wn_.k2[i] : cplx{}; }, v_);
        to_phys([&](std::size_t i) { return I * wn_.kx[i] * w_hat[i]; }, wx_);
        to_phys([&](std::size_t i) { return I * wn_.ky[i] * w_hat[i]; }, wy_);
        adv_.resize(u_.size());
        for (std::size_t i = 0; i < u_.size(); ++i) adv_[i] = u_[i] * wx_[i] + v_[i] * wy_[i];
        fft_.forward(adv_, out);
        for (std::size_t i = 0; i < m; ++i) out[i] = -out[i] * wn_.dealias[i] + f_hat_[i];
    }

    double max_speed(const std::vector<cplx>& w_hat) {
        nonlinear_velocity(w_hat);
        double s = 0.0;
        for (std::size_t i = 0; i < u_.size(); ++i) s = std::max(s, std::hypot(u_[i], v_[i]));
        return s;
    }

private:
    void nonlinear_velocity(const std::vector<cplx>& w_hat) {
        const std::size_t m = w_hat.size();
        buf_.resize(m);
        const cplx I(0.0, 1.0);
        for (std::size_t i = 0; i < m; ++i) buf_[i] = wn_.k2[i] > 0 ? I * wn_.ky[i] * w_hat[i] / wn_.k2[i] : cplx{};
        fft_.inverse(buf_, u_);
        for (std::size_t i = 0; i < m; ++i) buf_[i] = wn_.k2[i] > 0 ? -I * wn_.kx[i] * w_hat[i] / wn_.k2[i] : cplx{};
        fft_.inverse(buf_, v_);
    }

    Fft2D fft_;
    Wavenumbers wn_;
    std::vector<cplx> f_hat_;
    std::vector<cplx> buf_;
    std::vector<double> u_, v_, wx_, wy_, adv_;
};

}  // namespace

std::vector<double> default_ns_forcing(const Grid2D& grid) {
    const int n = grid.n;
    std::vector<double> f(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const double x = i * grid.dx(), y = j * grid.dx();
            const double a = 2.0 * kPi * (x + y) / grid.length;
            f[static_cast<std::size_t>(j) * n + i] = 0.1 * (std::sin(a) + std::cos(a));
        }
    return f;
}

std::vector<double> random_vorticity(const Grid2D& grid, std::uint64_t seed, double amplitude) {
    grid.validate();
    const int n = grid.n;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> white(static_cast<std::size_t>(n) * n);
    for (auto& v : white) v = normal(rng);
    Fft2D fft(n);
    std::vector<cplx> spec;
    fft.forward(white, spec);
    const auto wn = make_wavenumbers(grid);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        if (wn.k2[i] == 0.0) {
            spec[i] = 0.0;
            continue;
        }
        const double k2 = wn.k2[i] * grid.length * grid.length / (4.0 * kPi * kPi);
        spec[i] *= std::pow(k2 + 9.0, -1.25);
    }
    std::vector<double> w;
    fft.inverse(spec, w);
    double rms = 0.0;
    for (double v : w) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(w.size()));
    if (rms > 0.0)
        for (auto& v : w) v *= amplitude / rms;
    return w;
}

Trajectory simulate_ns2d(double nu, const Grid2D& grid, const std::vector<double>& w0_in,
                         const std::vector<double>& forcing, int n_t, double dt, const NS2DOptions& options) {
    grid.validate();
    if (!(nu > 0.0)) throw InvalidArgument("simulate_ns2d: nu must be positive");
    if (!grid.periodic) throw InvalidArgument("simulate_ns2d: grid must be periodic");
    if (n_t < 2) throw InvalidArgument("simulate_ns2d: n_t must be >= 2");
    if (!(dt > 0.0)) throw InvalidArgument("simulate_ns2d: dt must be positive");
    const int n = grid.n;
    const std::size_t cells = static_cast<std::size_t>(n) * n;
    if (w0_in.size() != cells) throw ShapeMismatch("simulate_ns2d: w0 has wrong size");
    if (!forcing.empty() && forcing.size() != cells) throw ShapeMismatch("simulate_ns2d: forcing has wrong size");

    std::vector<double> w0 = w0_in;
    double mean = 0.0;
    for (double v : w0) mean += v;
    mean /= static_cast<double>(cells);
    if (std::abs(mean) > 1e-10) warn("simulate_ns2d: initial vorticity has nonzero mean; subtracting it");
    for (auto& v : w0) v -= mean;

    Fft2D fft(n);
    std::vector<cplx> f_hat(static_cast<std::size_t>(n) * (n / 2 + 1), cplx{});
    if (!forcing.empty()) fft.forward(forcing, f_hat);
    f_hat[0] = 0.0;

    VorticityRhs rhs(grid, f_hat);
    const auto& wn = rhs.wavenumbers();
    std::vector<cplx> w_hat;
    fft.forward(w0, w_hat);
    w_hat[0] = 0.0;

    Trajectory traj;
    traj.shape = {n_t, 1, n, n};
    traj.dt = dt;
    traj.grid = grid;
    traj.params = Viscosity{nu};
    traj.channels = {"vorticity"};
    traj.states.reserve(static_cast<std::size_t>(n_t) * cells);
    append_frame(traj, w0);

    const std::size_t m = w_hat.size();
    std::vector<cplx> a(m), b(m), c(m), d(m), tmp(m);
    std::vector<double> e_full(m), e_half(m);
    std::vector<double> w_phys;
    for (int frame = 1; frame < n_t; ++frame) {
        const double speed = rhs.max_speed(w_hat);
        double step = std::min(dt, options.max_internal_dt);
        if (speed > 0.0) step = std::min(step, options.cfl * grid.dx() / speed);
        const int substeps = std::max(1, static_cast<int>(std::ceil(dt / step - 1e-12)));
        const double h = dt / substeps;
        for (std::size_t i = 0; i < m; ++i) {
            e_full[i] = std::exp(-nu * wn.k2[i] * h);
            e_half[i] = std::exp(-nu * wn.k2[i] * h * 0.5);
        }
        // Integrating-factor RK4: diffusion is integrated exactly.
        for (int s = 0; s < substeps; ++s) {
            rhs.nonlinear(w_hat, a);
            for (std::size_t i = 0; i < m; ++i) tmp[i] = e_half[i] * (w_hat[i] + 0.5 * h * a[i]);
            rhs.nonlinear(tmp, b);
            for (std::size_t i = 0; i < m; ++i) tmp[i] = e_half[i] * w_hat[i] + 0.5 * h * b[i];
            rhs.nonlinear(tmp, c);
            for (std::size_t i = 0; i < m; ++i) tmp[i] = e_full[i] * w_hat[i] + h * e_half[i] * c[i];
            rhs.nonlinear(tmp, d);
            for (std::size_t i = 0; i < m; ++i)
                w_hat[i] = e_full[i] * w_hat[i] +
                           h / 6.0 * (e_full[i] * a[i] + 2.0 * e_half[i] * (b[i] + c[i]) + d[i]);
            w_hat[0] = 0.0;
        }
        fft.inverse(w_hat, w_phys);
        if (!finite_all(w_phys)) {
            std::ostringstream os;
            os << "simulate_ns2d: non-finite vorticity at frame " << frame << " (internal step " << h << ")";
            throw NonFiniteError(os.str());
        }
        append_frame(traj, w_phys);
    }
    return traj;
}

double ns_velocity_divergence(const Grid2D& grid, const std::vector<double>& w) {
    Fft2D fft(grid.n);
    std::vector<cplx> w_hat;
    fft.forward(w, w_hat);
    const auto wn = make_wavenumbers(grid);
    const cplx I(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < w_hat.size(); ++i) {
        if (wn.k2[i] == 0.0) continue;
        const cplx u = I * wn.ky[i] * w_hat[i] / wn.k2[i];
        const cplx v = -I * wn.kx[i] * w_hat[i] / wn.k2[i];
        const cplx div = I * wn.kx[i] * u + I * wn.ky[i] * v;
        worst = std::max(worst, std::abs(div) / (static_cast<double>(grid.n) * grid.n));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Smoke box

int smoke_box_outlet_split(const BoundaryParams& p) {
    const double mid = 0.5 * ((p.outlet_lo_y + p.width / 2) + (p.outlet_hi_y - p.width / 2));
    return static_cast<int>(std::lround(mid));
}

std::vector<SegmentSpec> smoke_box_segments(const BoundaryParams& p) {
    const int n = p.n, w = p.wall;
    const int split = smoke_box_outlet_split(p);
    std::vector<SegmentSpec> segs;
    segs.push_back({Orientation::Horizontal, 0, w, 0, n, false, 0.0, 0.0});
    segs.push_back({Orientation::Horizontal, n - w, n, 0, n, false, 0.0, 0.0});
    segs.push_back({Orientation::Vertical, 0, w, 0, n, true, p.inlet_y - p.width / 2, p.inlet_y + p.width / 2});
    segs.push_back(
        {Orientation::Vertical, n - w, n, 0, split, true, p.outlet_lo_y - p.width / 2, p.outlet_lo_y + p.width / 2});
    segs.push_back(
        {Orientation::Vertical, n - w, n, split, n, true, p.outlet_hi_y - p.width / 2, p.outlet_hi_y + p.width / 2});
    return segs;
}

SmokeGeometry smoke_geometry(const BoundaryParams& p) {
    p.validate();
    const int n = p.n;
    SmokeGeometry g;
    g.n = n;
    g.solid = rasterize_boundary(smoke_box_segments(p), n, n);
    const int split = smoke_box_outlet_split(p);
    g.lower_mask.assign(static_cast<std::size_t>(n) * n, 0.0);
    g.upper_mask.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int j = 0; j < n; ++j) {
        if (!g.solid[static_cast<std::size_t>(j) * n]) g.inlet_rows.push_back(j);
        if (!g.solid[static_cast<std::size_t>(j) * n + n - 1]) (j < split ? g.lower_rows : g.upper_rows).push_back(j);
        for (int i = n - p.wall; i < n; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j) * n + i;
            if (g.solid[idx]) continue;
            (j < split ? g.lower_mask : g.upper_mask)[idx] = 1.0;
        }
    }
    return g;
}

std::vector<double> smoke_blob(int n, double cx, double cy, double radius, double amount) {
    std::vector<double> s(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const double dx = i + 0.5 - cx, dy = j + 0.5 - cy;
            s[static_cast<std::size_t>(j) * n + i] = amount * std::exp(-(dx * dx + dy * dy) / (radius * radius));
        }
    return s;
}

namespace {

class SmokeBox {
public:
    SmokeBox(const BoundaryParams& b, double inflow, const SmokeOptions& opt)
        : n_(b.n), inflow_(inflow), opt_(opt), geo_(smoke_geometry(b)) {
        const std::size_t cells = static_cast<std::size_t>(n_) * n_;
        if (opt.close_outlets) {
            for (int j : geo_.lower_rows)
                for (int i = n_ - b.wall; i < n_; ++i) geo_.solid[idx(i, j)] = 1;
            for (int j : geo_.upper_rows)
                for (int i = n_ - b.wall; i < n_; ++i) geo_.solid[idx(i, j)] = 1;
            geo_.lower_rows.clear();
            geo_.upper_rows.clear();
        }
        inlet_.assign(static_cast<std::size_t>(n_), 0);
        for (int j : geo_.inlet_rows) inlet_[j] = 1;
        outlet_.assign(static_cast<std::size_t>(n_), 0);
        for (int j : geo_.lower_rows) outlet_[j] = 1;
        for (int j : geo_.upper_rows) outlet_[j] = 2;
        // Inlet void cells span the left wall columns.
        inlet_cell_.assign(cells, 0);
        for (int j : geo_.inlet_rows)
            for (int i = 0; i < b.wall; ++i) inlet_cell_[idx(i, j)] = 1;
        u_.assign(cells, 0.0);
        v_.assign(cells, 0.0);
        p_.assign(cells, 0.0);
        uf_.assign(static_cast<std::size_t>(n_) * (n_ + 1), 0.0);
        vf_.assign(static_cast<std::size_t>(n_ + 1) * n_, 0.0);
        apply_velocity_bc();
    }

    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(j) * n_ + i; }
    bool fluid(int i, int j) const { return i >= 0 && i < n_ && j >= 0 && j < n_ && !geo_.solid[idx(i, j)]; }
    const std::vector<int>& solid() const { return geo_.solid; }
    const std::vector<double>& u() const { return u_; }
    const std::vector<double>& v() const { return v_; }

    double max_speed() const {
        double s = std::abs(inflow_);
        for (std::size_t k = 0; k < u_.size(); ++k) s = std::max({s, std::abs(u_[k]), std::abs(v_[k])});
        return s;
    }

    // One substep of length h; returns smoke exited through (lower, upper).
    std::pair<double, double> step(std::vector<double>& smoke, double h, long& clamped) {
        advect_velocity(h);
        apply_velocity_bc();
        build_faces();
        project();
        update_cell_velocity();
        apply_velocity_bc();
        return advect_smoke(smoke, h, clamped);
    }

private:
    double sample(const std::vector<double>& f, double x, double y) const {
        x = std::clamp(x, 0.0, n_ - 1.0);
        y = std::clamp(y, 0.0, n_ - 1.0);
        const int i0 = std::min(static_cast<int>(std::floor(x)), n_ - 2);
        const int j0 = std::min(static_cast<int>(std::floor(y)), n_ - 2);
        const double fx = x - i0, fy = y - j0;
        auto val = [&](int i, int j) { return geo_.solid[idx(i, j)] ? 0.0 : f[idx(i, j)]; };
        return (1 - fx) * (1 - fy) * val(i0, j0) + fx * (1 - fy) * val(i0 + 1, j0) + (1 - fx) * fy * val(i0, j0 + 1) +
               fx * fy * val(i0 + 1, j0 + 1);
    }

    void advect_velocity(double h) {
        std::vector<double> nu(u_.size(), 0.0), nv(v_.size(), 0.0);
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i) {
                if (!fluid(i, j)) continue;
                const double x = i - h * u_[idx(i, j)];
                const double y = j - h * v_[idx(i, j)];
                nu[idx(i, j)] = sample(u_, x, y);
                nv[idx(i, j)] = sample(v_, x, y);
            }
        u_.swap(nu);
        v_.swap(nv);
    }

    void apply_velocity_bc() {
        for (std::size_t k = 0; k < u_.size(); ++k) {
            if (geo_.solid[k]) {
                u_[k] = 0.0;
                v_[k] = 0.0;
            } else if (inlet_cell_[k]) {
                u_[k] = inflow_;
                v_[k] = 0.0;
            }
        }
    }

    // uf_[j*(n+1) + i]: face between cells (i-1, j) and (i, j).
    // vf_[j*n + i]: face between cells (i, j-1) and (i, j).
    void build_faces() {
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i <= n_; ++i) {
                double f = 0.0;
                if (i == 0) {
                    if (inlet_[j] && fluid(0, j)) f = inflow_;
                } else if (i == n_) {
                    if (outlet_[j] && fluid(n_ - 1, j)) f = std::max(u_[idx(n_ - 1, j)], 0.0);
                } else if (fluid(i - 1, j) && fluid(i, j)) {
                    f = 0.5 * (u_[idx(i - 1, j)] + u_[idx(i, j)]);
                }
                uf_[static_cast<std::size_t>(j) * (n_ + 1) + i] = f;
            }
        for (int j = 0; j <= n_; ++j)
            for (int i = 0; i < n_; ++i) {
                double f = 0.0;
                if (j > 0 && j < n_ && fluid(i, j - 1) && fluid(i, j)) f = 0.5 * (v_[idx(i, j - 1)] + v_[idx(i, j)]);
                vf_[static_cast<std::size_t>(j) * n_ + i] = f;
            }
    }

    double& uf(int i, int j) { return uf_[static_cast<std::size_t>(j) * (n_ + 1) + i]; }
    double& vf(int i, int j) { return vf_[static_cast<std::size_t>(j) * n_ + i]; }

    void project() {
        const std::size_t cells = static_cast<std::size_t>(n_) * n_;
        std::vector<double> div(cells, 0.0);
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i)
                if (fluid(i, j)) div[idx(i, j)] = uf(i + 1, j) - uf(i, j) + vf(i, j + 1) - vf(i, j);
        std::vector<double> next(cells, 0.0);
        for (int it = 0; it < opt_.jacobi_iterations; ++it) {
            for (int j = 0; j < n_; ++j)
                for (int i = 0; i < n_; ++i) {
                    if (!fluid(i, j)) continue;
                    double sum = 0.0;
                    int cnt = 0;
                    auto nb = [&](int ii, int jj) {
                        if (fluid(ii, jj)) {
                            sum += p_[idx(ii, jj)];
                            ++cnt;
                        }
                    };
                    nb(i - 1, j);
                    nb(i + 1, j);
                    nb(i, j - 1);
                    nb(i, j + 1);
                    if (i == n_ - 1 && outlet_[j]) ++cnt;  // Dirichlet p = 0 beyond the outlet
                    next[idx(i, j)] = cnt ? (sum - div[idx(i, j)]) / cnt : 0.0;
                }
            p_.swap(next);
        }
        for (int j = 0; j < n_; ++j)
            for (int i = 1; i < n_; ++i)
                if (fluid(i - 1, j) && fluid(i, j)) uf(i, j) -= p_[idx(i, j)] - p_[idx(i - 1, j)];
        for (int j = 0; j < n_; ++j)
            if (outlet_[j] && fluid(n_ - 1, j)) uf(n_, j) += p_[idx(n_ - 1, j)];
        for (int j = 1; j < n_; ++j)
            for (int i = 0; i < n_; ++i)
                if (fluid(i, j - 1) && fluid(i, j)) vf(i, j) -= p_[idx(i, j)] - p_[idx(i, j - 1)];
    }

    void update_cell_velocity() {
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i) {
                if (!fluid(i, j)) continue;
                u_[idx(i, j)] = 0.5 * (uf(i, j) + uf(i + 1, j));
                v_[idx(i, j)] = 0.5 * (vf(i, j) + vf(i, j + 1));
            }
    }

    std::pair<double, double> advect_smoke(std::vector<double>& s, double h, long& clamped) {
        const std::size_t cells = static_cast<std::size_t>(n_) * n_;
        std::vector<double> fx(static_cast<std::size_t>(n_) * (n_ + 1), 0.0);
        std::vector<double> fy(static_cast<std::size_t>(n_ + 1) * n_, 0.0);
        auto cell_or_ghost = [&](int i, int j) { return (i >= 0 && i < n_ && j >= 0 && j < n_) ? s[idx(i, j)] : 0.0; };
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i <= n_; ++i) {
                const double vel = uf(i, j);
                const double up = vel > 0.0 ? cell_or_ghost(i - 1, j) : cell_or_ghost(i, j);
                fx[static_cast<std::size_t>(j) * (n_ + 1) + i] = h * vel * up;
            }
        for (int j = 0; j <= n_; ++j)
            for (int i = 0; i < n_; ++i) {
                const double vel = vf(i, j);
                const double up = vel > 0.0 ? cell_or_ghost(i, j - 1) : cell_or_ghost(i, j);
                fy[static_cast<std::size_t>(j) * n_ + i] = h * vel * up;
            }
        std::vector<double> out(cells, 0.0);
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i) {
                const std::size_t k = idx(i, j);
                double val = s[k] - (fx[static_cast<std::size_t>(j) * (n_ + 1) + i + 1] -
                                     fx[static_cast<std::size_t>(j) * (n_ + 1) + i]) -
                             (fy[static_cast<std::size_t>(j + 1) * n_ + i] - fy[static_cast<std::size_t>(j) * n_ + i]);
                if (val < 0.0) {
                    if (val < -1e-14) ++clamped;
                    val = 0.0;
                }
                out[k] = val;
            }
        s.swap(out);
        double lower = 0.0, upper = 0.0;
        for (int j = 0; j < n_; ++j) {
            const double f = fx[static_cast<std::size_t>(j) * (n_ + 1) + n_];
            if (outlet_[j] == 1) lower += f;
            if (outlet_[j] == 2) upper += f;
        }
        return {lower, upper};
    }

    int n_;
    double inflow_;
    SmokeOptions opt_;
    SmokeGeometry geo_;
    std::vector<int> inlet_, outlet_, inlet_cell_;
    std::vector<double> u_, v_, p_, uf_, vf_;
};

}  // namespace

Trajectory simulate_smoke2d(const BoundaryParams& boundary, const std::vector<double>& smoke_init, double inflow_speed,
                            int n_t, const SmokeOptions& options) {
    boundary.validate();
    const int n = boundary.n;
    const std::size_t cells = static_cast<std::size_t>(n) * n;
    if (smoke_init.size() != cells) throw ShapeMismatch("simulate_smoke2d: smoke_init has wrong size");
    if (std::any_of(smoke_init.begin(), smoke_init.end(), [](double v) { return v < 0.0; }))
        throw InvalidArgument("simulate_smoke2d: smoke_init must be non-negative");
    if (n_t < 1) throw InvalidArgument("simulate_smoke2d: n_t must be >= 1");

    SmokeBox box(boundary, inflow_speed, options);
    std::vector<double> smoke = smoke_init;
    for (std::size_t k = 0; k < cells; ++k)
        if (box.solid()[k]) smoke[k] = 0.0;

    Trajectory traj;
    traj.shape = {n_t, 3, n, n};
    traj.dt = options.frame_dt;
    traj.grid = Grid2D{n, static_cast<double>(n), false};
    traj.params = boundary;
    traj.channels = {"smoke", "v_x", "v_y"};
    traj.states.reserve(static_cast<std::size_t>(n_t) * 3 * cells);
    auto push = [&] {
        append_frame(traj, smoke);
        append_frame(traj, box.u());
        append_frame(traj, box.v());
    };
    push();
    std::vector<double> exit_lower{0.0}, exit_upper{0.0}, clamped_series{0.0};
    long clamped = 0;
    for (int frame = 1; frame < n_t; ++frame) {
        const double speed = box.max_speed();
        const int substeps =
            std::max(options.min_substeps, static_cast<int>(std::ceil(options.frame_dt * speed / options.cfl - 1e-12)));
        const double h = options.frame_dt / substeps;
        double lo = 0.0, hi = 0.0;
        for (int s = 0; s < substeps; ++s) {
            const auto [a, b] = box.step(smoke, h, clamped);
            lo += a;
            hi += b;
        }
        if (!finite_all(smoke) || !finite_all(box.u()) || !finite_all(box.v())) {
            std::ostringstream os;
            os << "simulate_smoke2d: non-finite state at frame " << frame << " (internal step " << h << ")";
            throw NonFiniteError(os.str());
        }
        exit_lower.push_back(lo);
        exit_upper.push_back(hi);
        clamped_series.push_back(static_cast<double>(clamped));
        push();
    }
    traj.series["exit_lower"] = std::move(exit_lower);
    traj.series["exit_upper"] = std::move(exit_upper);
    traj.series["clamped"] = std::move(clamped_series);
    return traj;
}

// ---------------------------------------------------------------------------

Trajectory downsample_trajectory(const Trajectory& traj, int t_factor, int x_factor) {
    if (t_factor < 1 || x_factor < 1) throw InvalidArgument("downsample_trajectory: factors must be >= 1");
    if (traj.n_t() % t_factor != 0)
        throw InvalidArgument("downsample_trajectory: time factor does not divide n_t");
    for (std::size_t a = 2; a < traj.shape.size(); ++a)
        if (traj.shape[a] % x_factor != 0)
            throw InvalidArgument("downsample_trajectory: space factor does not divide the grid");

    Trajectory out = traj;
    out.shape[0] = traj.n_t() / t_factor;
    for (std::size_t a = 2; a < out.shape.size(); ++a) out.shape[a] = traj.shape[a] / x_factor;
    out.dt = traj.dt * t_factor;
    std::visit(
        [&](auto& g) {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, Grid1D>) g.n_x /= x_factor;
            else g.n /= x_factor;
        },
        out.grid);
    out.states.clear();
    out.states.reserve(static_cast<std::size_t>(out.n_t()) * out.frame_size());
    const int c = traj.n_channels();
    const bool two_d = traj.shape.size() == 4;
    const int h_in = two_d ? traj.shape[2] : 1;
    const int w_in = two_d ? traj.shape[3] : traj.shape[2];
    const int h_stride = two_d ? x_factor : 1;
    for (int t = 0; t < traj.n_t(); t += t_factor) {
        const auto fr = traj.frame(t);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h_in; y += h_stride)
                for (int x = 0; x < w_in; x += x_factor)
                    out.states.push_back(fr[(static_cast<std::size_t>(ch) * h_in + y) * w_in + x]);
    }
    for (auto& [name, series] : out.series) {
        if (static_cast<int>(series.size()) != traj.n_t()) continue;
        // per-interval tallies are summed over the merged intervals, running totals sampled
        const bool per_interval = name.rfind("exit_", 0) == 0;
        std::vector<double> s;
        for (int t = 0; t < traj.n_t(); t += t_factor) {
            double v = series[t];
            if (per_interval)
                for (int k = std::max(0, t - t_factor + 1); k < t; ++k) v += series[k];
            s.push_back(v);
        }
        series = std::move(s);
    }
    return out;
}

}  // namespace lepde
