#include "lepde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lepde/error.hpp"

namespace lepde {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw InvalidArgument("negative extent in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_numel(shape_))
        throw ShapeMismatch("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                            shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape_inplace(std::move(shape));
    return t;
}

void Tensor::reshape_inplace(Shape shape) {
    if (shape_numel(shape) != data_.size())
        throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_inplace(const Tensor& other) {
    if (other.numel() != numel())
        throw ShapeMismatch("add: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace lepde
