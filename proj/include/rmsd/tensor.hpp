#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rmsd {

/// Raised whenever operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates a precondition that is not about shapes.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Batch, channels, height, width.
struct Shape {
    int b = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    constexpr std::size_t size() const {
        return static_cast<std::size_t>(b) * c * h * w;
    }
    constexpr std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    constexpr bool valid() const { return b >= 1 && c >= 1 && h >= 1 && w >= 1; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense 4-D array in B, C, H, W row-major order.
///
/// A default-constructed tensor is the "unset" value (empty(), shape all zero);
/// every tensor built from a shape has all four dimensions >= 1.
template <typename Scalar>
class Tensor {
public:
    using value_type = Scalar;

    Tensor() = default;

    explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape) {
        if (!shape.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
        data_.assign(shape.size(), fill);
    }

    Tensor(Shape shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
        if (!shape.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
        if (data_.size() != shape.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape.str());
    }

    static Tensor zeros(Shape s) { return Tensor(s, Scalar(0)); }
    static Tensor ones(Shape s) { return Tensor(s, Scalar(1)); }
    static Tensor full(Shape s, Scalar v) { return Tensor(s, v); }
    static Tensor scalar(Scalar v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int batch() const { return shape_.b; }
    int channels() const { return shape_.c; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }

    std::span<Scalar> data() & { return data_; }
    std::span<const Scalar> data() const& { return data_; }
    // A span into a temporary would dangle, e.g. `for (v : f().data())`.
    std::span<const Scalar> data() && = delete;
    Scalar* raw() { return data_.data(); }
    const Scalar* raw() const { return data_.data(); }

    std::size_t index(int b, int c, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    Scalar& operator()(int b, int c, int y, int x) { return data_[index(b, c, y, x)]; }
    Scalar operator()(int b, int c, int y, int x) const { return data_[index(b, c, y, x)]; }
    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the (H, W) plane of batch b, channel c.
    Scalar* plane(int b, int c) { return data_.data() + index(b, c, 0, 0); }
    const Scalar* plane(int b, int c) const { return data_.data() + index(b, c, 0, 0); }

    /// Flat view as an Eigen column vector.
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vec() {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vec() const {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    /// Value of a 1x1x1x1 tensor.
    Scalar item() const {
        if (shape_ != Shape{1, 1, 1, 1}) throw ContractError("item() on non-scalar tensor " + shape_.str());
        return data_[0];
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<Scalar> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Largest absolute elementwise difference; shapes must match.
template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Channel range [begin, end) of t as a new tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, int begin, int end);

}  // namespace rmsd
