#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pxe/error.hpp"
#include "pxe/linalg.hpp"
#include "pxe/losses.hpp"
#include "pxe/rng.hpp"
#include "pxe/sampling.hpp"

namespace pxe {

enum class TrunkKind : std::uint8_t { kIdentity = 0, kAffineTanh = 1 };

TrunkKind trunk_kind_from_string(const std::string& name);
std::string trunk_kind_name(TrunkKind k);

/// feature -> trunk -> (layer norm) -> bias-free projection -> L2 norm.
/// The forward output is always unit length; the projection carries no bias.
struct EmbeddingModel {
    TrunkKind trunk_kind = TrunkKind::kIdentity;
    bool use_layer_norm = true;
    double layer_norm_epsilon = 1e-5;
    Matrix trunk_weight;  // H x F, empty for the identity trunk
    Vector trunk_bias;    // H, empty for the identity trunk
    Matrix projection;    // H x D (F x D for the identity trunk)

    std::size_t feature_dim() const {
        return trunk_kind == TrunkKind::kIdentity ? projection.rows : trunk_weight.cols;
    }
    std::size_t hidden_dim() const { return projection.rows; }
    std::size_t embed_dim() const { return projection.cols; }

    /// Random init: trunk weights N(0, 1/F), projection N(0, 1/H), zero bias.
    static EmbeddingModel create(TrunkKind kind, std::size_t feature_dim,
                                 std::size_t hidden_dim, std::size_t embed_dim,
                                 bool use_layer_norm, double layer_norm_epsilon,
                                 SeededRng& rng);
};

Vector embed(const EmbeddingModel& model, std::span<const double> features);
Matrix embed_all(const EmbeddingModel& model, const Matrix& features);

/// Gradients for every learnable tensor, shapes matching the model.
struct ModelGrads {
    Matrix trunk_weight;
    Vector trunk_bias;
    Matrix projection;

    static ModelGrads zeros_like(const EmbeddingModel& model);
};

/// Momentum buffers, zero initialized, shapes matching model + proxies.
struct OptimizerState {
    Matrix trunk_weight;
    Vector trunk_bias;
    Matrix projection;
    Matrix proxies;

    static OptimizerState zeros_like(const EmbeddingModel& model, const ProxyMatrix& proxies);
};

/// Classical momentum with coupled L2 decay:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
void sgd_step(std::span<double> param, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum,
              double weight_decay);

struct TrainConfig {
    std::size_t epochs = 30;
    bool class_balanced = true;
    BatchSpec batch;                      // used when class_balanced
    std::size_t sequential_batch_size = 75;  // used otherwise
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t lr_step_epoch = 15;
    double lr_gamma = 0.1;
    LossConfig loss;
    double subsample_ratio = 1.0;
    std::size_t warmstart_epochs = 1;
    std::uint64_t seed = 0;

    std::size_t batch_size() const {
        return class_balanced ? batch.batch_size() : sequential_batch_size;
    }
};

double lr_at(std::size_t epoch, const TrainConfig& config);

struct EpochStats {
    double mean_loss = 0.0;
    double max_batch_loss = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    /// Mean loss of the very first batch, recorded before any update. NaN
    /// when no batch ran.
    double initial_loss;
    std::vector<EpochStats> epochs;

    TrainHistory();
};

struct TrainResult {
    EmbeddingModel model;
    ProxyMatrix proxies;
    TrainHistory history;
};

/// Full training loop. For the first warmstart_epochs only the projection and
/// proxies move (the trunk and its velocity stay untouched); afterwards all
/// parameters update. Deterministic given the config seed, wall times aside.
TrainResult fit(const Dataset& dataset, EmbeddingModel model, ProxyMatrix proxies,
                const TrainConfig& config);

/// Identifies the parameter coordinate with the largest relative error in a
/// gradient check, with both sides of the comparison.
struct GradCheckWorst {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

/// Central-difference check of the full pipeline gradient on one batch.
/// Perturbs every parameter coordinate when there are at most max_coords of
/// them, otherwise a random subsample of max_coords. Returns the worst
/// relative error; fills worst_out with the offending coordinate when given.
double grad_check(const EmbeddingModel& model, const ProxyMatrix& proxies,
                  const Matrix& batch_features, const std::vector<std::size_t>& batch_labels,
                  const LossConfig& loss_config, double h,
                  const std::vector<std::size_t>* active_classes = nullptr,
                  std::size_t max_coords = 200, GradCheckWorst* worst_out = nullptr);

}  // namespace pxe
