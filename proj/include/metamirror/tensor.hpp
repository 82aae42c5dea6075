#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "metamirror/errors.hpp"

namespace metamirror {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

// Dense multi-dimensional array with row-major flat storage. The scalar is
// a template parameter; the engine instantiates double throughout.
template <typename Scalar>
class DenseTensor {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    DenseTensor() = default;

    DenseTensor(Shape shape, Storage data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
    }

    static DenseTensor zeros(const Shape& shape) {
        return DenseTensor(shape, Storage::Zero(shape_numel(shape)));
    }

    static DenseTensor ones(const Shape& shape) {
        return full(shape, Scalar(1));
    }

    static DenseTensor full(const Shape& shape, Scalar v) {
        return DenseTensor(shape, Storage::Constant(shape_numel(shape), v));
    }

    static DenseTensor scalar(Scalar v) { return full({1}, v); }

    static DenseTensor from_values(const Shape& shape,
                                   std::initializer_list<Scalar> values) {
        Storage s(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values) s[i++] = v;
        return DenseTensor(shape, std::move(s));
    }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
    Index numel() const { return data_.size(); }
    bool is_scalar() const { return numel() == 1; }

    Storage& array() { return data_; }
    const Storage& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    bool all_finite() const {
        for (Index i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) return false;
        }
        return true;
    }

    bool same_shape(const DenseTensor& other) const {
        return shape_ == other.shape_;
    }

private:
    void check_shape() const {
        if (shape_.empty()) {
            throw ShapeError("tensor shape must have at least one dimension");
        }
        for (Index d : shape_) {
            if (d <= 0) {
                throw ShapeError("tensor dimensions must be positive, got " +
                                 shape_to_string(shape_));
            }
        }
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
        }
    }

    Shape shape_;
    Storage data_;
};

using Tensor = DenseTensor<double>;

// Row-major matrix views over flat tensor storage, for the matmul-family
// kernels. Rank-2 tensors only.
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatMap = Eigen::Map<RowMat>;
using ConstRowMatMap = Eigen::Map<const RowMat>;

inline ConstRowMatMap as_matrix(const Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError("expected a rank-2 tensor, got " +
                         shape_to_string(t.shape()));
    }
    return ConstRowMatMap(t.data(), t.dim(0), t.dim(1));
}

inline RowMatMap as_matrix(Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError("expected a rank-2 tensor, got " +
                         shape_to_string(t.shape()));
    }
    return RowMatMap(t.data(), t.dim(0), t.dim(1));
}

}  // namespace metamirror
