#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "felab/errors.hpp"

namespace felab {

inline std::string shape_to_string(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. The only invariant is numel == product(shape);
// everything else (views, broadcasting, autograd) is deliberately absent,
// the kernels below own all the math.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor is for float/double data");

public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    Tensor(std::vector<size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_)) {
            throw ValueError("Tensor: data size " + std::to_string(data_.size()) + " does not match shape " +
                             shape_to_string(shape_));
        }
    }

    static Tensor full(std::vector<size_t> shape, T value) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = value;
        return t;
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t numel() const { return data_.size(); }
    size_t dim(size_t i) const {
        if (i >= shape_.size()) throw ValueError("Tensor::dim: axis out of range");
        return shape_[i];
    }

    // 2-D convenience accessors; rank is checked so a silent reshape bug
    // cannot masquerade as a matrix.
    size_t rows() const { require_rank(2); return shape_[0]; }
    size_t cols() const { require_rank(2); return shape_[1]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    const T& operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(size_t i, size_t j) {
        require_rank(2);
        if (i >= shape_[0] || j >= shape_[1]) throw ValueError("Tensor::at: index out of range");
        return data_[i * shape_[1] + j];
    }

    void fill(T value) { for (auto& x : data_) x = value; }

    bool all_finite() const {
        for (const T x : data_) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    void require_finite(const char* what) const {
        if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool operator==(const Tensor& other) const {
        // Bitwise comparison, used by the selectivity and round-trip tests.
        return shape_ == other.shape_ && data_.size() == other.data_.size() &&
               std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0;
    }

private:
    size_t require_rank(size_t r) const {
        if (shape_.size() != r) {
            throw ValueError("Tensor: expected rank " + std::to_string(r) + ", have shape " + shape_to_string(shape_));
        }
        return r;
    }

    static size_t checked_numel(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) {
            if (d == 0) throw ValueError("Tensor: zero-sized dimension in shape " + shape_to_string(shape));
            n *= d;
        }
        return n;
    }

    std::vector<size_t> shape_;
    std::vector<T> data_;
};

}  // namespace felab
