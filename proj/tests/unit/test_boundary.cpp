#include <catch_amalgamated.hpp>

#include <cmath>

#include "lepde/boundary.hpp"
#include "lepde/error.hpp"
#include "lepde/solvers.hpp"

using namespace lepde;

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

SegmentSpec lone_void(double x1, double x2) {
    return {Orientation::Vertical, 0, 2, 0, 32, true, x1, x2};
}

}  // namespace

TEST_CASE("sigmoid_segment at an edge is one half") {
    for (double beta : {0.01, 0.3, 1.0, 5.0}) {
        CHECK(sigmoid_segment(4.0, 4.0, 9.0, beta) == Catch::Approx(0.5).margin(1e-15));
        CHECK(sigmoid_segment(9.0, 4.0, 9.0, beta) == Catch::Approx(0.5).margin(1e-15));
    }
}

TEST_CASE("sigmoid_segment outside the interval") {
    const double v = sigmoid_segment(0.0, 31.5, 91.3, 5.0);
    CHECK(v == Catch::Approx(logistic(-6.3)).epsilon(1e-12));
    CHECK(v == Catch::Approx(0.00183).margin(5e-6));
    CHECK(sigmoid_segment(100.0, 31.5, 91.3, 5.0) == Catch::Approx(logistic((91.3 - 100.0) / 5.0)));
}

TEST_CASE("sigmoid_segment uses the harmonic mean inside") {
    // |i - x1| = 2, |i - x2| = 6, harmonic mean 3
    CHECK(sigmoid_segment(12.0, 10.0, 18.0, 1.0) == Catch::Approx(logistic(3.0)).epsilon(1e-12));
    CHECK(logistic(3.0) == Catch::Approx(0.9526).margin(1e-4));
}

TEST_CASE("sigmoid_segment rejects bad arguments") {
    CHECK_THROWS_AS(sigmoid_segment(0.0, 1.0, 2.0, 0.0), InvalidArgument);
    CHECK_THROWS_AS(sigmoid_segment(0.0, 2.0, 2.0, 1.0), InvalidArgument);
}

TEST_CASE("sigmoid_segment is monotone toward the interval and stays in (0,1)") {
    const double x1 = 10.2, x2 = 20.7, beta = 0.7;
    double prev = 0.0;
    for (double i = -5.0; i <= 15.45; i += 0.1) {
        const double v = sigmoid_segment(i, x1, x2, beta);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        CHECK(v >= prev - 1e-15);
        prev = v;
    }
    prev = 0.0;
    for (double i = 35.0; i >= 15.5; i -= 0.1) {
        const double v = sigmoid_segment(i, x1, x2, beta);
        CHECK(v >= prev - 1e-15);
        prev = v;
    }
}

TEST_CASE("sigmoid_segment partials match central differences") {
    const double h = 1e-6;
    for (double i : {3.0, 11.3, 14.0, 19.9, 25.0}) {
        const auto g = sigmoid_segment_grad(i, 10.2, 20.7, 0.8);
        const double n1 = (sigmoid_segment(i, 10.2 + h, 20.7, 0.8) - sigmoid_segment(i, 10.2 - h, 20.7, 0.8)) / (2 * h);
        const double n2 = (sigmoid_segment(i, 10.2, 20.7 + h, 0.8) - sigmoid_segment(i, 10.2, 20.7 - h, 0.8)) / (2 * h);
        CHECK(g.d_x1 == Catch::Approx(n1).margin(1e-8));
        CHECK(g.d_x2 == Catch::Approx(n2).margin(1e-8));
    }
}

TEST_CASE("smoke box mask: open interior, open void centers") {
    BoundaryParams p;
    const auto segs = smoke_box_segments(p);
    const auto m = continuous_boundary_mask(segs, 0.01, p.n, p.n);
    CHECK(m.at(16, 16) == 0.0);
    CHECK(m.at(0, 10) == 1.0);
    // inlet centered at y = 16 spans [14, 18]; the cell with center 15.5 is
    // 1.5 from the nearest edge, the one with center 16.5 likewise
    CHECK(m.at(15, 0) < 1e-3);
    CHECK(m.at(16, 1) < 1e-3);
    for (double v : m.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("tiny temperature gives a near-binary mask") {
    BoundaryParams p;
    p.inlet_y = 15.3;
    p.outlet_lo_y = 9.8;
    const auto m = continuous_boundary_mask(smoke_box_segments(p), 1e-4, p.n, p.n);
    int near = 0;
    for (double v : m.values) near += (v < 1e-3 || v > 1.0 - 1e-3) ? 1 : 0;
    CHECK(near >= 0.99 * static_cast<double>(m.values.size()));
    const auto r = rasterize_boundary(smoke_box_segments(p), p.n, p.n);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == (m.values[i] > 0.5 ? 1 : 0));
}

TEST_CASE("mask converges to binary away from edges") {
    const double x1 = 10.37, x2 = 17.62;
    const std::vector<SegmentSpec> segs{lone_void(x1, x2)};
    for (double beta : {0.05, 0.01, 0.001}) {
        const auto m = continuous_boundary_mask(segs, beta, 32, 32);
        for (int r = 0; r < 32; ++r) {
            const double y = r + 0.5;
            const double dist = std::min(std::abs(y - x1), std::abs(y - x2));
            if (dist <= beta * std::log(1e3)) continue;
            const double limit = (y > x1 && y < x2) ? 0.0 : 1.0;
            CHECK(std::abs(m.at(r, 0) - limit) < 1e-3);
        }
    }
}

TEST_CASE("analytic mask jacobian matches finite differences") {
    const double beta = 0.05, h = 1e-6;
    const double x1 = 10.47, x2 = 16.58;
    const std::vector<SegmentSpec> segs{lone_void(x1, x2)};
    MaskJacobian jac;
    continuous_boundary_mask(segs, beta, 32, 32, &jac);
    auto at = [&](double a, double b) {
        return continuous_boundary_mask({lone_void(a, b)}, beta, 32, 32).values;
    };
    const auto p1 = at(x1 + h, x2), m1 = at(x1 - h, x2);
    const auto p2 = at(x1, x2 + h), m2 = at(x1, x2 - h);
    double worst = 0.0;
    for (std::size_t c = 0; c < p1.size(); ++c) {
        const double n1 = (p1[c] - m1[c]) / (2 * h), n2 = (p2[c] - m2[c]) / (2 * h);
        worst = std::max(worst, std::abs(n1 - jac.d_x1[0][c]) / std::max(std::abs(n1), 1e-6));
        worst = std::max(worst, std::abs(n2 - jac.d_x2[0][c]) / std::max(std::abs(n2), 1e-6));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("solid segments contribute their wall indicator") {
    const std::vector<SegmentSpec> segs{{Orientation::Horizontal, 0, 2, 0, 8, false, 0.0, 0.0}};
    const auto m = continuous_boundary_mask(segs, 0.1, 8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(m.at(r, c) == (r < 2 ? 1.0 : 0.0));
}
