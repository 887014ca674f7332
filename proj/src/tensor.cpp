#include "gradreg/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace gradreg {

std::string to_string(const Shape& s) { return std::to_string(s.channels) + "@" + to_string(s.dims); }

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
    if (shape.channels <= 0 || !shape.dims.positive()) {
        throw std::invalid_argument("invalid tensor shape " + to_string(shape));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (shape.channels <= 0 || !shape.dims.positive() || data_.size() != shape.size()) {
        throw std::invalid_argument("tensor data does not match shape " + to_string(shape));
    }
}

Tensor Tensor::from_volume(const Volume& v) { return Tensor(Shape{1, v.dims()}, v.data()); }

std::span<double> Tensor::channel(int c) {
    const std::size_t n = shape_.dims.size();
    return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<const double> Tensor::channel(int c) const {
    const std::size_t n = shape_.dims.size();
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace gradreg
