#include "availnet/tensor.hpp"

#include <cmath>

#include "availnet/error.hpp"

namespace availnet {

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_))
        throw ShapeError("tensor of shape " + to_string(shape_) + " given " + std::to_string(data_.size()) +
                         " values");
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + to_string(shape_));
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size())
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const noexcept {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::require_finite(std::string_view where) const {
    if (!all_finite()) throw ValidationError("non-finite value in " + std::string(where));
}

void require_shape(const Tensor& t, const Shape& expected, std::string_view what) {
    if (t.shape() != expected)
        throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                         to_string(t.shape()));
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace availnet
