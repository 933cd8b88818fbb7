#pragma once

// Continuous boundary masks: sigmoid interpolation of wall segments whose
// void edges are real-valued, so a mask can be differentiated with respect
// to the edge positions.

#include <vector>

namespace lepde {

/// Logistic sigmoid of t, stable for large |t|.
double sigmoid(double t);

/// Soft indicator of coordinate i lying inside [x1, x2] at temperature beta.
/// Inside the interval the distance to the nearest edge is softened with the
/// harmonic mean of |i - x1| and |i - x2|. Throws InvalidArgument if beta <= 0
/// or x1 >= x2.
double sigmoid_segment(double i, double x1, double x2, double beta);

struct SegmentDerivative {
    double value;
    double d_x1;
    double d_x2;
};

/// sigmoid_segment together with its partials in x1 and x2.
SegmentDerivative sigmoid_segment_grad(double i, double x1, double x2, double beta);

/// The beta -> 0 limit: 1 strictly inside, 0 strictly outside, 0.5 on an edge.
double sigmoid_segment_limit(double i, double x1, double x2);

enum class Orientation {
    Horizontal,  ///< runs along x; the coordinate along it is the column
    Vertical,    ///< runs along y; the coordinate along it is the row
};

/// A straight wall piece on a [rows, cols] grid. Cells in the transverse band
/// [transverse_lo, transverse_hi) and the longitudinal range [along_lo, along_hi)
/// belong to it. A void segment carries an opening with edges (x1, x2) in
/// cell-center coordinates along the segment (cell k has center k + 0.5).
struct SegmentSpec {
    Orientation orientation = Orientation::Vertical;
    int transverse_lo = 0;
    int transverse_hi = 0;
    int along_lo = 0;
    int along_hi = 0;
    bool is_void = false;
    double x1 = 0.0;
    double x2 = 0.0;

    bool contains(int row, int col) const;
    /// Coordinate of the cell center along the segment.
    double along_coordinate(int row, int col) const;
};

/// Values in [0, 1] with 1 meaning solid. Row-major [rows][cols].
struct MaskField {
    int rows = 0;
    int cols = 0;
    double beta = 0.0;
    std::vector<double> values;

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * cols + col]; }
};

/// Per-segment partial derivatives of the mask with respect to each edge.
/// d_x1[s] and d_x2[s] are grid-shaped (zero for solid segments).
struct MaskJacobian {
    std::vector<std::vector<double>> d_x1;
    std::vector<std::vector<double>> d_x2;
};

/// Solid segments contribute 1 on their cells; void segments contribute
/// 1 - CB; the mask is the cell-wise maximum. Cells outside all segments are 0.
/// With jacobian non-null the partials of the maximizing contribution are filled.
MaskField continuous_boundary_mask(const std::vector<SegmentSpec>& segments, double beta, int rows, int cols,
                                   MaskJacobian* jacobian = nullptr);

/// The same composition at beta -> 0, thresholded: 1 where the limit mask > 0.5.
std::vector<int> rasterize_boundary(const std::vector<SegmentSpec>& segments, int rows, int cols);

}  // namespace lepde
