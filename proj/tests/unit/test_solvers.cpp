#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

#include "lepde/error.hpp"
#include "lepde/solvers.hpp"

using namespace lepde;
using std::numbers::pi;

namespace {

double frame_mean(const Trajectory& t, int f) {
    const auto fr = t.frame(f);
    return std::accumulate(fr.begin(), fr.end(), 0.0) / static_cast<double>(fr.size());
}

// Projection of frame f (channel 0) onto sin(2 pi k x / L) sampled at x_i = i dx.
double sine_coefficient(const Trajectory& t, int f, int n, double dx, double L) {
    const auto fr = t.frame(f);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += fr[i] * std::sin(2 * pi * i * dx / L);
    return 2.0 * s / n;
}

}  // namespace

TEST_CASE("forcing sampling is deterministic and within its ranges") {
    const auto a = sample_forcing(11), b = sample_forcing(11);
    REQUIRE(a.terms.size() == 5);
    for (std::size_t j = 0; j < a.terms.size(); ++j) {
        CHECK(a.terms[j].amplitude == b.terms[j].amplitude);
        CHECK(a.terms[j].omega == b.terms[j].omega);
        CHECK(a.terms[j].mode == b.terms[j].mode);
        CHECK(a.terms[j].phase == b.terms[j].phase);
    }
    double sum = 0.0;
    int count = 0;
    for (std::uint64_t s = 0; s < 20000; ++s)
        for (const auto& t : sample_forcing(s).terms) {
            CHECK(std::abs(t.amplitude) <= 0.5);
            CHECK(std::abs(t.omega) <= 0.4);
            CHECK((t.mode >= 1 && t.mode <= 3));
            CHECK((t.phase >= 0.0 && t.phase < 2 * pi));
            sum += t.amplitude;
            ++count;
        }
    CHECK(count == 100000);
    CHECK(std::abs(sum / count) < 0.01);
}

TEST_CASE("constant forcing integrates exactly") {
    ForcingSpec1D f;
    f.terms = {{0.5, 0.0, 0, pi / 2}};  // delta = 0.5 everywhere
    Grid1D g{64, 16.0, true};
    const auto t = simulate_burgers1d({0.0, 0.0, 0.0}, f, g, 11, 0.1, std::vector<double>(64, 0.25));
    for (int k = 0; k < t.n_t(); ++k)
        for (float v : t.frame(k)) CHECK(v == Catch::Approx(0.25 + 0.5 * 0.1 * k).margin(1e-6));
}

TEST_CASE("heat mode decays at the analytic rate") {
    const double L = 16.0, beta = 0.1;
    Grid1D g{200, L, true};
    std::vector<double> u0(200);
    for (int i = 0; i < 200; ++i) u0[i] = std::sin(2 * pi * i * g.dx() / L);
    const auto t = simulate_burgers1d({0.0, beta, 0.0}, ForcingSpec1D{}, g, 2, 1.0, u0);
    const double ratio = sine_coefficient(t, 1, 200, g.dx(), L) / sine_coefficient(t, 0, 200, g.dx(), L);
    const double expected = std::exp(-beta * std::pow(2 * pi / L, 2));
    CHECK(expected == Catch::Approx(0.98470).margin(1e-5));
    CHECK(std::abs(ratio / expected - 1.0) < 0.01);
}

TEST_CASE("unforced family conserves the spatial mean") {
    Grid1D g{100, 16.0, true};
    std::vector<double> u0(100);
    for (int i = 0; i < 100; ++i) u0[i] = 1.0 + 0.5 * std::sin(2 * pi * i / 100.0) + 0.2 * std::cos(6 * pi * i / 100.0);
    const auto t = simulate_burgers1d({1.0, 0.3, 0.2}, ForcingSpec1D{}, g, 250, 4.0 / 249, u0);
    REQUIRE(t.all_finite());
    const double m0 = frame_mean(t, 0);
    for (int k = 1; k < t.n_t(); ++k) CHECK(std::abs(frame_mean(t, k) - m0) / std::abs(m0) < 1e-6);
}

TEST_CASE("internal step above the linear limit is rejected") {
    Grid1D g{100, 16.0, true};
    const PDEParams1D p{0.0, 0.4, 1.0};
    Burgers1DOptions o;
    o.max_internal_dt = 10.0 * burgers_linear_dt_limit(p, g, o.cfl);
    CHECK_THROWS_AS(simulate_burgers1d(p, ForcingSpec1D{}, g, 3, 0.1, std::nullopt, o), InvalidArgument);
}

TEST_CASE("zero vorticity stays zero") {
    Grid2D g{32, 1.0, true};
    const std::vector<double> zero(32 * 32, 0.0);
    const auto t = simulate_ns2d(1e-3, g, zero, zero, 5, 0.5);
    for (float v : t.states) CHECK(v == 0.0f);
}

TEST_CASE("single vorticity eigenmode decays at the analytic rate") {
    const int n = 64;
    Grid2D g{n, 1.0, true};
    std::vector<double> w0(n * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) w0[j * n + i] = std::cos(2 * pi * (i + j) / static_cast<double>(n));
    const double nu = 1e-3;
    const auto t = simulate_ns2d(nu, g, w0, std::vector<double>(n * n, 0.0), 2, 1.0);
    double num = 0.0, den = 0.0;
    const auto f1 = t.frame(1);
    for (int k = 0; k < n * n; ++k) {
        num += f1[k] * w0[k];
        den += w0[k] * w0[k];
    }
    const double expected = std::exp(-nu * 8 * pi * pi);
    CHECK(expected == Catch::Approx(0.92408).margin(1e-5));
    CHECK(std::abs(num / den / expected - 1.0) < 0.01);
}

TEST_CASE("unforced vorticity loses enstrophy and stays divergence free") {
    Grid2D g{32, 1.0, true};
    const auto w0 = random_vorticity(g, 3);
    const auto t = simulate_ns2d(1e-3, g, w0, std::vector<double>(32 * 32, 0.0), 10, 0.5);
    double prev = 1e300;
    for (int k = 0; k < t.n_t(); ++k) {
        double e = 0.0;
        for (float v : t.frame(k)) e += static_cast<double>(v) * v;
        CHECK(e <= prev * (1 + 1e-6));
        prev = e;
    }
    const auto last = t.frame(t.n_t() - 1);
    CHECK(ns_velocity_divergence(g, std::vector<double>(last.begin(), last.end())) < 1e-10);
}

TEST_CASE("overlapping outlets are rejected") {
    BoundaryParams p;
    p.outlet_lo_y = 19.0;
    p.outlet_hi_y = 21.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = BoundaryParams{};
    p.inlet_y = 2.5;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("mirror-symmetric smoke box splits the smoke evenly") {
    BoundaryParams p;  // inlet at 16, outlets at 10 and 22 on a 32 grid
    const auto blob = smoke_blob(p.n, 6.0, 16.0, 2.5);
    const auto t = simulate_smoke2d(p, blob, 1.0, 60);
    const auto& lo = t.series.at("exit_lower");
    const auto& hi = t.series.at("exit_upper");
    const double a = std::accumulate(lo.begin(), lo.end(), 0.0), b = std::accumulate(hi.begin(), hi.end(), 0.0);
    REQUIRE(a + b > 1e-3);
    CHECK(std::abs(a / (a + b) - 0.5) < 1e-3);
}

TEST_CASE("smoke mass budget holds over 100 frames") {
    BoundaryParams p;
    p.inlet_y = 18.3;
    p.outlet_lo_y = 11.6;
    SmokeOptions o;
    o.frame_dt = 2.0;
    const auto blob = smoke_blob(p.n, 5.0, 18.0, 2.5);
    const auto t = simulate_smoke2d(p, blob, 1.0, 100, o);
    const auto s0 = t.channel(0, 0);
    const double m0 = std::accumulate(s0.begin(), s0.end(), 0.0);
    double exited = 0.0;
    for (int k = 0; k < t.n_t(); ++k) {
        exited += t.series.at("exit_lower")[k] + t.series.at("exit_upper")[k];
        const auto s = t.channel(k, 0);
        double inside = 0.0;
        for (float v : s) {
            CHECK(v >= 0.0f);
            inside += v;
        }
        CHECK(std::abs(inside + exited - m0) / m0 < 1e-3);
    }
    CHECK(exited > 0.1 * m0);
}

TEST_CASE("closed outlets let nothing out") {
    BoundaryParams p;
    SmokeOptions o;
    o.close_outlets = true;
    const auto t = simulate_smoke2d(p, smoke_blob(p.n, 6.0, 16.0, 2.5), 1.0, 60, o);
    for (double v : t.series.at("exit_lower")) CHECK(v == 0.0);
    for (double v : t.series.at("exit_upper")) CHECK(v == 0.0);
}

TEST_CASE("smoke geometry rasterizes the voids") {
    BoundaryParams p;  // width 4 centered on integers opens four rows each
    const auto g = smoke_geometry(p);
    CHECK(g.inlet_rows == std::vector<int>{14, 15, 16, 17});
    CHECK(g.lower_rows == std::vector<int>{8, 9, 10, 11});
    CHECK(g.upper_rows == std::vector<int>{20, 21, 22, 23});
}

TEST_CASE("downsampling") {
    ForcingSpec1D f = sample_forcing(4);
    const auto t = simulate_burgers1d({1.0, 0.0, 0.0}, f, Grid1D{200, 16.0, true}, 250, 4.0 / 249);
    SECTION("identity factors") {
        const auto d = downsample_trajectory(t, 1, 1);
        CHECK(d.shape == t.shape);
        CHECK(d.states == t.states);
    }
    SECTION("spatial factor 2 halves n_x and doubles dx") {
        const auto d = downsample_trajectory(t, 1, 2);
        CHECK(d.shape == Shape{250, 1, 100});
        CHECK(std::get<Grid1D>(d.grid).dx() == Catch::Approx(2 * std::get<Grid1D>(t.grid).dx()));
    }
    SECTION("two halvings equal one quartering") {
        const auto a = downsample_trajectory(downsample_trajectory(t, 1, 2), 1, 2);
        const auto b = downsample_trajectory(t, 1, 4);
        CHECK(a.shape == b.shape);
        CHECK(a.states == b.states);
        const auto c = downsample_trajectory(downsample_trajectory(t, 5, 1), 5, 1);
        const auto d = downsample_trajectory(t, 25, 1);
        CHECK(c.states == d.states);
    }
    SECTION("bad factors") {
        CHECK_THROWS_AS(downsample_trajectory(t, 1, 3), InvalidArgument);
        CHECK_THROWS_AS(downsample_trajectory(t, 0, 1), InvalidArgument);
    }
}

TEST_CASE("downsampling in time sums per-interval exit tallies") {
    BoundaryParams p;
    const auto t = simulate_smoke2d(p, smoke_blob(p.n, 6.0, 16.0, 2.5), 1.0, 60);
    const auto d = downsample_trajectory(t, 3, 1);
    const auto& a = t.series.at("exit_lower");
    const auto& b = d.series.at("exit_lower");
    CHECK(std::accumulate(a.begin() + 1, a.end() - 2, 0.0) == Catch::Approx(std::accumulate(b.begin() + 1, b.end(), 0.0)));
}
