#include "pxe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pxe {

namespace {

constexpr double kUnitTolerance = 1e-6;

void check_unit_embedding(const Vector& x) {
    if (std::fabs(norm2(x) - 1.0) > kUnitTolerance)
        throw NotNormalizedError("loss: embedding must be a unit vector");
}

struct UnitProxies {
    Matrix rows;   // normalized copies
    Vector norms;  // raw row norms
};

UnitProxies normalize_proxies(const ProxyMatrix& proxies) {
    UnitProxies out;
    out.rows = Matrix(proxies.class_count(), proxies.dim());
    out.norms.resize(proxies.class_count());
    for (std::size_t z = 0; z < proxies.class_count(); ++z) {
        auto [unit, ctx] = l2_normalize(proxies.weights.row(z));
        std::copy(unit.begin(), unit.end(), out.rows.row(z).begin());
        out.norms[z] = ctx.input_norm;
    }
    return out;
}

/// Project onto the tangent space of the unit embedding: the x-side
/// L2-normalization Jacobian evaluated at unit norm.
Vector project_tangential(const Vector& x, const Vector& grad) {
    const double radial = dot(x, grad);
    Vector out(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] - radial * x[i];
    return out;
}

/// Shared softmax cross-entropy core over a class subset.
///
/// logit_z = factor * cos_z, with `margin` subtracted from the target
/// cosine first. Gradients are pulled back through the proxy-row
/// normalization; the embedding gradient is tangential.
LossResult softmax_core(const Vector& x, std::size_t y, const ProxyMatrix& proxies,
                        const std::vector<std::size_t>& active, double factor,
                        double margin) {
    const std::size_t zn = proxies.class_count();
    const UnitProxies unit = normalize_proxies(proxies);

    Vector cosines(active.size());
    Vector logits(active.size());
    std::size_t target_pos = active.size();
    for (std::size_t k = 0; k < active.size(); ++k) {
        const std::size_t z = active[k];
        cosines[k] = dot(x, unit.rows.row(z));
        double c = cosines[k];
        if (z == y) {
            target_pos = k;
            c -= margin;
        }
        logits[k] = factor * c;
    }

    // Log-sum-exp with max shift; with temperature 0.05 the logits reach
    // +-20 and the shift is required, not cosmetic.
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum_exp = 0.0;
    Vector probs(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
        probs[k] = std::exp(logits[k] - max_logit);
        sum_exp += probs[k];
    }
    for (auto& p : probs) p /= sum_exp;

    LossResult result;
    result.loss = std::log(sum_exp) + max_logit - logits[target_pos];

    result.probabilities.assign(zn, 0.0);
    result.grad_proxies = Matrix(zn, proxies.dim());
    Vector grad_xhat(x.size(), 0.0);
    for (std::size_t k = 0; k < active.size(); ++k) {
        const std::size_t z = active[k];
        result.probabilities[z] = probs[k];
        const double dlogit = probs[k] - (k == target_pos ? 1.0 : 0.0);
        const double dcos = dlogit * factor;
        auto p_hat = unit.rows.row(z);
        for (std::size_t i = 0; i < x.size(); ++i) grad_xhat[i] += dcos * p_hat[i];
        // d cos / d raw row, through the row normalization:
        // (x - cos * p_hat) / ||row||
        auto grad_row = result.grad_proxies.row(z);
        for (std::size_t i = 0; i < x.size(); ++i)
            grad_row[i] = dcos * (x[i] - cosines[k] * p_hat[i]) / unit.norms[z];
    }
    result.grad_embedding = project_tangential(x, grad_xhat);
    return result;
}

std::vector<std::size_t> all_classes(std::size_t zn) {
    std::vector<std::size_t> active(zn);
    for (std::size_t z = 0; z < zn; ++z) active[z] = z;
    return active;
}

}  // namespace

LossVariant loss_variant_from_string(const std::string& name) {
    if (name == "nca" || name == "proxy_nca") return LossVariant::kNca;
    if (name == "norm_softmax" || name == "softmax") return LossVariant::kNormSoftmax;
    if (name == "lmcl") return LossVariant::kLmcl;
    throw InvalidParamsError("unknown loss variant: " + name);
}

std::string loss_variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::kNca: return "nca";
        case LossVariant::kNormSoftmax: return "norm_softmax";
        case LossVariant::kLmcl: return "lmcl";
    }
    return "?";
}

ProxyMatrix ProxyMatrix::random_unit(std::size_t classes, std::size_t dim, SeededRng& rng) {
    ProxyMatrix p;
    p.weights = Matrix(classes, dim);
    for (std::size_t z = 0; z < classes; ++z) {
        Vector row(dim);
        for (auto& v : row) v = rng.normal();
        auto unit = l2_normalize(row).first;
        std::copy(unit.begin(), unit.end(), p.weights.row(z).begin());
    }
    return p;
}

LossResult nca_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies) {
    const std::size_t zn = proxies.class_count();
    if (zn < 2) throw SingleClassError("nca_loss: needs at least two classes");
    if (y >= zn) throw InvalidClassError("nca_loss: target class out of range");
    if (x.size() != proxies.dim()) throw ShapeMismatchError("nca_loss: dimension mismatch");
    check_unit_embedding(x);

    const UnitProxies unit = normalize_proxies(proxies);
    Vector cosines(zn);
    for (std::size_t z = 0; z < zn; ++z) cosines[z] = dot(x, unit.rows.row(z));

    // loss = d(x, p_y) + log sum_{z != y} exp(-d(x, p_z)), d = 1 - cos
    double max_neg = -std::numeric_limits<double>::infinity();
    for (std::size_t z = 0; z < zn; ++z)
        if (z != y) max_neg = std::max(max_neg, cosines[z] - 1.0);
    double sum_exp = 0.0;
    Vector weights(zn, 0.0);
    for (std::size_t z = 0; z < zn; ++z) {
        if (z == y) continue;
        weights[z] = std::exp((cosines[z] - 1.0) - max_neg);
        sum_exp += weights[z];
    }
    for (auto& w : weights) w /= sum_exp;

    LossResult result;
    result.loss = (1.0 - cosines[y]) + std::log(sum_exp) + max_neg;
    result.probabilities = weights;  // q over the dissimilar set, zero at y

    result.grad_proxies = Matrix(zn, proxies.dim());
    Vector grad_xhat(x.size(), 0.0);
    for (std::size_t z = 0; z < zn; ++z) {
        const double dcos = (z == y) ? -1.0 : weights[z];
        auto p_hat = unit.rows.row(z);
        for (std::size_t i = 0; i < x.size(); ++i) grad_xhat[i] += dcos * p_hat[i];
        auto grad_row = result.grad_proxies.row(z);
        for (std::size_t i = 0; i < x.size(); ++i)
            grad_row[i] = dcos * (x[i] - cosines[z] * p_hat[i]) / unit.norms[z];
    }
    result.grad_embedding = project_tangential(x, grad_xhat);
    return result;
}

LossResult normalized_softmax_loss(const Vector& x, std::size_t y,
                                   const ProxyMatrix& proxies, double temperature) {
    if (!(temperature > 0.0))
        throw InvalidParamsError("normalized_softmax_loss: temperature must be > 0");
    if (y >= proxies.class_count())
        throw InvalidClassError("normalized_softmax_loss: target class out of range");
    if (x.size() != proxies.dim())
        throw ShapeMismatchError("normalized_softmax_loss: dimension mismatch");
    check_unit_embedding(x);
    return softmax_core(x, y, proxies, all_classes(proxies.class_count()),
                        1.0 / temperature, 0.0);
}

LossResult lmcl_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies,
                     double scale, double margin) {
    if (!(scale > 0.0)) throw InvalidParamsError("lmcl_loss: scale must be > 0");
    if (margin < 0.0 || margin >= 1.0)
        throw InvalidMarginError("lmcl_loss: margin must be in [0, 1)");
    if (y >= proxies.class_count())
        throw InvalidClassError("lmcl_loss: target class out of range");
    if (x.size() != proxies.dim())
        throw ShapeMismatchError("lmcl_loss: dimension mismatch");
    check_unit_embedding(x);
    return softmax_core(x, y, proxies, all_classes(proxies.class_count()), scale, margin);
}

LossResult subsampled_softmax_loss(const Vector& x, std::size_t y,
                                   const ProxyMatrix& proxies,
                                   const std::vector<std::size_t>& active,
                                   double temperature) {
    if (!(temperature > 0.0))
        throw InvalidParamsError("subsampled_softmax_loss: temperature must be > 0");
    if (active.empty())
        throw InvalidParamsError("subsampled_softmax_loss: empty active set");
    std::vector<std::size_t> sorted(active);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.back() >= proxies.class_count())
        throw InvalidClassError("subsampled_softmax_loss: active class out of range");
    if (!std::binary_search(sorted.begin(), sorted.end(), y))
        throw TargetNotActiveError("subsampled_softmax_loss: target class not in active set");
    if (x.size() != proxies.dim())
        throw ShapeMismatchError("subsampled_softmax_loss: dimension mismatch");
    check_unit_embedding(x);
    return softmax_core(x, y, proxies, sorted, 1.0 / temperature, 0.0);
}

LossResult single_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies,
                       const LossConfig& config, const std::vector<std::size_t>* active) {
    switch (config.variant) {
        case LossVariant::kNca:
            return nca_loss(x, y, proxies);
        case LossVariant::kNormSoftmax:
            if (active != nullptr)
                return subsampled_softmax_loss(x, y, proxies, *active, config.temperature);
            return normalized_softmax_loss(x, y, proxies, config.temperature);
        case LossVariant::kLmcl:
            return lmcl_loss(x, y, proxies, config.scale, config.margin);
    }
    throw InvalidParamsError("single_loss: unknown variant");
}

BatchLossResult batch_loss(const Matrix& embeddings, const std::vector<std::size_t>& labels,
                           const ProxyMatrix& proxies, const LossConfig& config,
                           const std::vector<std::size_t>* active) {
    if (labels.size() != embeddings.rows)
        throw ShapeMismatchError("batch_loss: one label per embedding row required");
    if (embeddings.rows == 0)
        throw ShapeMismatchError("batch_loss: empty batch");
    if (embeddings.cols != proxies.dim())
        throw ShapeMismatchError("batch_loss: embedding dim does not match proxies");

    const std::size_t batch = embeddings.rows;
    BatchLossResult out;
    out.grad_embeddings = Matrix(batch, embeddings.cols);
    out.grad_proxies = Matrix(proxies.class_count(), proxies.dim());
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        LossResult r = single_loss(embeddings.row_vector(i), labels[i], proxies, config, active);
        loss_sum += r.loss;
        std::copy(r.grad_embedding.begin(), r.grad_embedding.end(),
                  out.grad_embeddings.row(i).begin());
        for (std::size_t j = 0; j < out.grad_proxies.data.size(); ++j)
            out.grad_proxies.data[j] += r.grad_proxies.data[j];
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    out.mean_loss = loss_sum * inv_batch;
    for (auto& g : out.grad_proxies.data) g *= inv_batch;
    return out;
}

}  // namespace pxe
