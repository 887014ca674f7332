#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradreg/volume.hpp"

namespace gradreg {

struct Shape {
    int channels = 1;
    Dims dims{1, 1, 1};

    std::size_t size() const { return static_cast<std::size_t>(channels) * dims.size(); }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Channel-major, x-fastest dense array of doubles. Also used for conv kernels,
/// which are stored as (out*in) channels over a k^3 grid.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor from_volume(const Volume& v);

    const Shape& shape() const { return shape_; }
    int channels() const { return shape_.channels; }
    const Dims& dims() const { return shape_.dims; }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> channel(int c);
    std::span<const double> channel(int c) const;

    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<double> data_ = std::vector<double>(1, 0.0);
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gradreg
