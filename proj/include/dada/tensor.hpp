#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dada {

/// Dense row-major tensor. Feature maps are [C, H, W]; conv weights are
/// [Cout, Cin, K, K]; scalars are shape {1}.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != count(shape_))
            throw std::invalid_argument("tensor data size does not match shape " + shape_string());
    }

    static Tensor scalar(T v) { return Tensor({1}, v); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // [C, H, W] accessors
    std::int64_t channels() const { return shape_.at(0); }
    std::int64_t height() const { return shape_.at(1); }
    std::int64_t width() const { return shape_.at(2); }
    T& at(std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }
    const T& at(std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    static std::int64_t count(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

}  // namespace dada
