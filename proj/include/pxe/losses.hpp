#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pxe/linalg.hpp"
#include "pxe/rng.hpp"

namespace pxe {

enum class LossVariant { kNca, kNormSoftmax, kLmcl };

LossVariant loss_variant_from_string(const std::string& name);
std::string loss_variant_name(LossVariant v);

struct LossConfig {
    LossVariant variant = LossVariant::kNormSoftmax;
    double temperature = 0.05;  // sigma, softmax variants
    double scale = 30.0;        // s, LMCL
    double margin = 0.35;       // m, LMCL
};

/// The class proxies: the bias-free final-layer weight matrix, one row per
/// class. Rows are stored raw and re-normalized inside every loss forward,
/// so gradients flow through the normalization.
struct ProxyMatrix {
    Matrix weights;  // |Z| x D

    std::size_t class_count() const { return weights.rows; }
    std::size_t dim() const { return weights.cols; }

    /// Rows drawn from a standard normal, then L2-normalized.
    static ProxyMatrix random_unit(std::size_t classes, std::size_t dim, SeededRng& rng);
};

struct LossResult {
    double loss = 0.0;
    Vector grad_embedding;  // w.r.t. the unit embedding; tangential to it
    Matrix grad_proxies;    // w.r.t. the raw proxy rows
    Vector probabilities;   // per class; zero on classes outside the denominator
};

/// NCA loss over proxies with cosine distance; the denominator runs over
/// the dissimilar classes only (the positive term is excluded), so the
/// loss can be negative. Requires at least two classes.
LossResult nca_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies);

/// Softmax cross entropy over cosine logits x.p_z / temperature, the
/// target class included in the denominator.
LossResult normalized_softmax_loss(const Vector& x, std::size_t y,
                                   const ProxyMatrix& proxies, double temperature);

/// Large-margin variant: the target logit is scale*(cos - margin), all
/// others scale*cos. margin = 0 reduces to normalized_softmax_loss with
/// temperature 1/scale.
LossResult lmcl_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies,
                     double scale, double margin);

/// normalized_softmax_loss restricted to the rows listed in `active`.
/// Proxy gradients and probabilities are exactly zero outside the active
/// set. The target class must be active.
LossResult subsampled_softmax_loss(const Vector& x, std::size_t y,
                                   const ProxyMatrix& proxies,
                                   const std::vector<std::size_t>& active,
                                   double temperature);

/// Dispatch on config.variant; `active` applies to the softmax variant only.
LossResult single_loss(const Vector& x, std::size_t y, const ProxyMatrix& proxies,
                       const LossConfig& config,
                       const std::vector<std::size_t>* active = nullptr);

struct BatchLossResult {
    double mean_loss = 0.0;
    Matrix grad_embeddings;  // B x D, one row per sample
    Matrix grad_proxies;     // |Z| x D, summed over the batch then / B
};

/// Arithmetic mean of per-sample losses, reduced in row order.
BatchLossResult batch_loss(const Matrix& embeddings, const std::vector<std::size_t>& labels,
                           const ProxyMatrix& proxies, const LossConfig& config,
                           const std::vector<std::size_t>* active = nullptr);

}  // namespace pxe
