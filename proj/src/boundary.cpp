#include "lepde/boundary.hpp"

#include <cmath>

#include "lepde/error.hpp"

namespace lepde {

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

namespace {

void check_segment_args(double x1, double x2, double beta) {
    if (!(beta > 0.0)) throw InvalidArgument("sigmoid_segment: beta must be positive");
    if (!(x1 < x2)) throw InvalidArgument("sigmoid_segment: requires x1 < x2");
}

}  // namespace

SegmentDerivative sigmoid_segment_grad(double i, double x1, double x2, double beta) {
    check_segment_args(x1, x2, beta);
    if (i <= x1) {
        const double s = sigmoid((i - x1) / beta);
        return {s, -s * (1.0 - s) / beta, 0.0};
    }
    if (i >= x2) {
        const double s = sigmoid((x2 - i) / beta);
        return {s, 0.0, s * (1.0 - s) / beta};
    }
    const double a = i - x1;
    const double b = x2 - i;
    const double h = 2.0 * a * b / (a + b);  // harmonic mean of a and b
    const double s = sigmoid(h / beta);
    const double ds = s * (1.0 - s) / beta;
    const double denom = (a + b) * (a + b);
    return {s, -ds * 2.0 * b * b / denom, ds * 2.0 * a * a / denom};
}

double sigmoid_segment(double i, double x1, double x2, double beta) {
    return sigmoid_segment_grad(i, x1, x2, beta).value;
}

double sigmoid_segment_limit(double i, double x1, double x2) {
    if (i == x1 || i == x2) return 0.5;
    return (i > x1 && i < x2) ? 1.0 : 0.0;
}

bool SegmentSpec::contains(int row, int col) const {
    const int t = orientation == Orientation::Vertical ? col : row;
    const int a = orientation == Orientation::Vertical ? row : col;
    return t >= transverse_lo && t < transverse_hi && a >= along_lo && a < along_hi;
}

double SegmentSpec::along_coordinate(int row, int col) const {
    return (orientation == Orientation::Vertical ? row : col) + 0.5;
}

MaskField continuous_boundary_mask(const std::vector<SegmentSpec>& segments, double beta, int rows, int cols,
                                   MaskJacobian* jacobian) {
    if (!(beta > 0.0)) throw InvalidArgument("continuous_boundary_mask: beta must be positive");
    MaskField mask{rows, cols, beta, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0)};
    const std::size_t cells = mask.values.size();
    if (jacobian) {
        jacobian->d_x1.assign(segments.size(), std::vector<double>(cells, 0.0));
        jacobian->d_x2.assign(segments.size(), std::vector<double>(cells, 0.0));
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
            double best = 0.0;
            int best_seg = -1;
            double best_d1 = 0.0, best_d2 = 0.0;
            for (std::size_t s = 0; s < segments.size(); ++s) {
                const auto& seg = segments[s];
                if (!seg.contains(r, c)) continue;
                double v = 1.0, d1 = 0.0, d2 = 0.0;
                if (seg.is_void) {
                    const auto g = sigmoid_segment_grad(seg.along_coordinate(r, c), seg.x1, seg.x2, beta);
                    v = 1.0 - g.value;
                    d1 = -g.d_x1;
                    d2 = -g.d_x2;
                }
                if (best_seg < 0 || v > best) {
                    best = v;
                    best_seg = static_cast<int>(s);
                    best_d1 = d1;
                    best_d2 = d2;
                }
            }
            mask.values[idx] = best;
            if (jacobian && best_seg >= 0) {
                jacobian->d_x1[best_seg][idx] = best_d1;
                jacobian->d_x2[best_seg][idx] = best_d2;
            }
        }
    }
    return mask;
}

std::vector<int> rasterize_boundary(const std::vector<SegmentSpec>& segments, int rows, int cols) {
    std::vector<int> solid(static_cast<std::size_t>(rows) * cols, 0);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double best = 0.0;
            for (const auto& seg : segments) {
                if (!seg.contains(r, c)) continue;
                const double v =
                    seg.is_void ? 1.0 - sigmoid_segment_limit(seg.along_coordinate(r, c), seg.x1, seg.x2) : 1.0;
                best = std::max(best, v);
            }
            solid[static_cast<std::size_t>(r) * cols + c] = best > 0.5 ? 1 : 0;
        }
    }
    return solid;
}

}  // namespace lepde
