#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace availnet {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool all_finite() const noexcept;
    /// Throws ValidationError naming `where` on NaN/Inf.
    void require_finite(std::string_view where) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

void require_shape(const Tensor& t, const Shape& expected, std::string_view what);

// Row-major GEMM kernels, all accumulating into C.
// nn: C[MxN] += A[MxK] B[KxN]; nt: C += A[MxK] B[NxK]^T; tn: C += A[KxM]^T B[KxN].
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace availnet
