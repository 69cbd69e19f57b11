#include "pxe/linalg.hpp"

#include <cmath>

namespace pxe {

namespace {

constexpr double kZeroNormThreshold = 1e-30;
constexpr double kContextTolerance = 1e-9;
constexpr double kUnitTolerance = 1e-6;

bool close_rel(double a, double b, double tol) {
    const double scale = std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
    return std::fabs(a - b) <= tol * scale;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeMismatchError("dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

std::pair<Vector, NormContext> l2_normalize(std::span<const double> v) {
    const double n = norm2(v);
    if (!(n > kZeroNormThreshold))
        throw ZeroVectorError("l2_normalize: input norm below 1e-30");
    Vector unit(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) unit[i] = v[i] / n;
    NormContext ctx;
    ctx.input_norm = n;
    return {std::move(unit), ctx};
}

Vector l2_normalize_backward(std::span<const double> v,
                             std::span<const double> grad_out,
                             const NormContext& ctx) {
    if (v.size() != grad_out.size())
        throw ShapeMismatchError("l2_normalize_backward: dimension mismatch");
    const double n = norm2(v);
    if (!close_rel(n, ctx.input_norm, kContextTolerance))
        throw ContextMismatchError("l2_normalize_backward: context norm does not match input");
    // (I - u u^T) / ||v|| applied to grad_out.
    Vector unit(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) unit[i] = v[i] / ctx.input_norm;
    const double radial = dot(unit, grad_out);
    Vector grad(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        grad[i] = (grad_out[i] - radial * unit[i]) / ctx.input_norm;
    return grad;
}

std::pair<Vector, NormContext> layer_norm(std::span<const double> v, double epsilon) {
    const std::size_t d = v.size();
    if (d < 2)
        throw DimensionTooSmallError("layer_norm: dimension must be >= 2");
    if (epsilon < 0.0)
        throw InvalidParamsError("layer_norm: epsilon must be >= 0");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;  // population variance (divide by D)
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    const double scale = std::sqrt(var + epsilon);
    Vector out(d);
    if (scale > 0.0) {
        for (std::size_t i = 0; i < d; ++i) out[i] = (v[i] - mean) / scale;
    }
    // scale == 0 only when epsilon == 0 and the input is constant; the
    // centered vector is exactly zero either way.
    NormContext ctx;
    ctx.mean = mean;
    ctx.variance = var;
    ctx.epsilon = epsilon;
    return {std::move(out), ctx};
}

Vector layer_norm_backward(std::span<const double> v,
                           std::span<const double> grad_out,
                           const NormContext& ctx) {
    const std::size_t d = v.size();
    if (d != grad_out.size())
        throw ShapeMismatchError("layer_norm_backward: dimension mismatch");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    if (!close_rel(mean, ctx.mean, kContextTolerance) ||
        !close_rel(var, ctx.variance, kContextTolerance))
        throw ContextMismatchError("layer_norm_backward: context does not match input");

    const double scale = std::sqrt(ctx.variance + ctx.epsilon);
    Vector grad(d, 0.0);
    if (scale == 0.0) return grad;  // constant input at epsilon 0, flat output

    // With y = (v - mean)/scale:
    //   dL/dv_j = (g_j - mean(g) - y_j * mean(g .* y)) / scale
    double g_mean = 0.0;
    double gy_mean = 0.0;
    Vector y(d);
    for (std::size_t i = 0; i < d; ++i) {
        y[i] = (v[i] - mean) / scale;
        g_mean += grad_out[i];
        gy_mean += grad_out[i] * y[i];
    }
    g_mean /= static_cast<double>(d);
    gy_mean /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i)
        grad[i] = (grad_out[i] - g_mean - y[i] * gy_mean) / scale;
    return grad;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeMismatchError("cosine_distance: dimension mismatch");
    if (std::fabs(norm2(a) - 1.0) > kUnitTolerance ||
        std::fabs(norm2(b) - 1.0) > kUnitTolerance)
        throw NotNormalizedError("cosine_distance: inputs must be unit vectors");
    return 1.0 - dot(a, b);
}

}  // namespace pxe
