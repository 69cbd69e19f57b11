#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "pxe/error.hpp"

namespace pxe {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Plain storage; all arithmetic in
/// this toolkit runs over explicit loops so reduction order is fixed and
/// runs are bit-reproducible.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) {
        return {data.data() + r * cols, cols};
    }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return Vector(s.begin(), s.end());
    }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

/// Cached forward state consumed by the matching backward pass.
/// For l2_normalize only input_norm is meaningful; layer_norm fills
/// mean/variance/epsilon.
struct NormContext {
    double input_norm = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    double epsilon = 0.0;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// v / ||v||. Throws ZeroVectorError when ||v|| <= 1e-30 (a degenerate
/// embedding, not a rounding artifact).
std::pair<Vector, NormContext> l2_normalize(std::span<const double> v);

/// Pullback through l2_normalize: (grad_out - (u.grad_out) u) / ||v||
/// with u = v/||v||. The result is orthogonal to v.
Vector l2_normalize_backward(std::span<const double> v,
                             std::span<const double> grad_out,
                             const NormContext& ctx);

/// (v - mean) / sqrt(var + epsilon), population variance, no affine
/// parameters. Requires dimension >= 2.
std::pair<Vector, NormContext> layer_norm(std::span<const double> v, double epsilon);

Vector layer_norm_backward(std::span<const double> v,
                           std::span<const double> grad_out,
                           const NormContext& ctx);

/// d(a, b) = 1 - a.b for unit vectors. Inputs are checked to be
/// L2-normalized within 1e-6.
double cosine_distance(std::span<const double> a, std::span<const double> b);

}  // namespace pxe
