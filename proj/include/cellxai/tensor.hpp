#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cellxai/errors.hpp"

namespace cellxai::tensornet {

/// Dense row-major tensor over a contiguous buffer.
template <typename S>
class Tensor {
public:
    using value_type = S;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, S fill = S{0})
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != element_count(shape_))
            throw UsageError("tensor data size " + std::to_string(data_.size()) + " does not match shape");
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    S* data() noexcept { return data_.data(); }
    const S* data() const noexcept { return data_.data(); }
    std::span<S> values() noexcept { return data_; }
    std::span<const S> values() const noexcept { return data_; }
    const std::vector<S>& buffer() const noexcept { return data_; }

    S& operator[](std::size_t i) noexcept { return data_[i]; }
    const S& operator[](std::size_t i) const noexcept { return data_[i]; }

    S& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const S& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    S& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    const S& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    void fill(S value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
    }

    template <typename T>
    Tensor<T> cast() const {
        return Tensor<T>(shape_, std::vector<T>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<S> data_;
};

}  // namespace cellxai::tensornet
