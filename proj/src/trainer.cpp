#include "pxe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace pxe {

TrunkKind trunk_kind_from_string(const std::string& name) {
    if (name == "identity") return TrunkKind::kIdentity;
    if (name == "affine_tanh" || name == "tanh") return TrunkKind::kAffineTanh;
    throw InvalidParamsError("unknown trunk kind: " + name);
}

std::string trunk_kind_name(TrunkKind k) {
    return k == TrunkKind::kIdentity ? "identity" : "affine_tanh";
}

EmbeddingModel EmbeddingModel::create(TrunkKind kind, std::size_t feature_dim,
                                      std::size_t hidden_dim, std::size_t embed_dim,
                                      bool use_layer_norm, double layer_norm_epsilon,
                                      SeededRng& rng) {
    if (feature_dim < 2 || embed_dim < 2)
        throw InvalidParamsError("model: feature and embed dims must be >= 2");
    if (layer_norm_epsilon < 0.0) throw InvalidParamsError("model: negative epsilon");

    EmbeddingModel m;
    m.trunk_kind = kind;
    m.use_layer_norm = use_layer_norm;
    m.layer_norm_epsilon = layer_norm_epsilon;

    std::size_t width = feature_dim;
    if (kind == TrunkKind::kAffineTanh) {
        if (hidden_dim < 2) throw InvalidParamsError("model: hidden dim must be >= 2");
        width = hidden_dim;
        m.trunk_weight = Matrix(hidden_dim, feature_dim);
        const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
        for (auto& w : m.trunk_weight.data) w = scale * rng.normal();
        m.trunk_bias.assign(hidden_dim, 0.0);
    }

    m.projection = Matrix(width, embed_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    for (auto& w : m.projection.data) w = scale * rng.normal();
    return m;
}

namespace {

struct ForwardCache {
    Vector input;
    Vector hidden;
    Vector ln_out;
    NormContext ln_ctx;
    Vector u;
    NormContext l2_ctx;
    Vector x;
};

void forward(const EmbeddingModel& model, std::span<const double> features,
             ForwardCache& cache) {
    if (features.size() != model.feature_dim())
        throw ShapeMismatchError("embed: feature dimension mismatch");

    cache.input.assign(features.begin(), features.end());
    if (model.trunk_kind == TrunkKind::kAffineTanh) {
        const std::size_t h = model.hidden_dim();
        cache.hidden.resize(h);
        for (std::size_t i = 0; i < h; ++i)
            cache.hidden[i] = std::tanh(dot(model.trunk_weight.row(i), features) +
                                        model.trunk_bias[i]);
    } else {
        cache.hidden = cache.input;
    }

    if (model.use_layer_norm) {
        auto [y, ctx] = layer_norm(cache.hidden, model.layer_norm_epsilon);
        cache.ln_out = std::move(y);
        cache.ln_ctx = ctx;
    } else {
        cache.ln_out = cache.hidden;
    }

    const std::size_t d = model.embed_dim();
    cache.u.assign(d, 0.0);
    for (std::size_t i = 0; i < model.hidden_dim(); ++i) {
        const double v = cache.ln_out[i];
        auto row = model.projection.row(i);
        for (std::size_t j = 0; j < d; ++j) cache.u[j] += v * row[j];
    }

    auto [x, ctx] = l2_normalize(cache.u);
    cache.x = std::move(x);
    cache.l2_ctx = ctx;
}

void backward(const EmbeddingModel& model, const ForwardCache& cache,
              std::span<const double> grad_x, ModelGrads& grads, bool include_trunk) {
    Vector grad_u = l2_normalize_backward(cache.u, grad_x, cache.l2_ctx);

    const std::size_t d = model.embed_dim();
    Vector grad_ln(model.hidden_dim(), 0.0);
    for (std::size_t i = 0; i < model.hidden_dim(); ++i) {
        auto prow = model.projection.row(i);
        auto grow = grads.projection.row(i);
        const double v = cache.ln_out[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            grow[j] += v * grad_u[j];
            acc += prow[j] * grad_u[j];
        }
        grad_ln[i] = acc;
    }

    Vector grad_hidden = model.use_layer_norm
                             ? layer_norm_backward(cache.hidden, grad_ln, cache.ln_ctx)
                             : std::move(grad_ln);

    if (model.trunk_kind == TrunkKind::kAffineTanh && include_trunk) {
        for (std::size_t i = 0; i < model.hidden_dim(); ++i) {
            const double t = cache.hidden[i];
            const double g = grad_hidden[i] * (1.0 - t * t);
            grads.trunk_bias[i] += g;
            auto wrow = grads.trunk_weight.row(i);
            for (std::size_t j = 0; j < cache.input.size(); ++j)
                wrow[j] += g * cache.input[j];
        }
    }
}

}  // namespace

Vector embed(const EmbeddingModel& model, std::span<const double> features) {
    ForwardCache cache;
    forward(model, features, cache);
    return cache.x;
}

Matrix embed_all(const EmbeddingModel& model, const Matrix& features) {
    Matrix out(features.rows, model.embed_dim());
    ForwardCache cache;
    for (std::size_t i = 0; i < features.rows; ++i) {
        forward(model, features.row(i), cache);
        std::copy(cache.x.begin(), cache.x.end(), out.row(i).begin());
    }
    return out;
}

ModelGrads ModelGrads::zeros_like(const EmbeddingModel& model) {
    ModelGrads g;
    g.trunk_weight = Matrix(model.trunk_weight.rows, model.trunk_weight.cols);
    g.trunk_bias.assign(model.trunk_bias.size(), 0.0);
    g.projection = Matrix(model.projection.rows, model.projection.cols);
    return g;
}

OptimizerState OptimizerState::zeros_like(const EmbeddingModel& model,
                                          const ProxyMatrix& proxies) {
    OptimizerState s;
    s.trunk_weight = Matrix(model.trunk_weight.rows, model.trunk_weight.cols);
    s.trunk_bias.assign(model.trunk_bias.size(), 0.0);
    s.projection = Matrix(model.projection.rows, model.projection.cols);
    s.proxies = Matrix(proxies.weights.rows, proxies.weights.cols);
    return s;
}

void sgd_step(std::span<double> param, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum,
              double weight_decay) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw ShapeMismatchError("sgd_step: tensor sizes differ");
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
        param[i] -= lr * velocity[i];
    }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
    return epoch >= config.lr_step_epoch ? config.lr * config.lr_gamma : config.lr;
}

TrainHistory::TrainHistory()
    : initial_loss(std::numeric_limits<double>::quiet_NaN()) {}

namespace {

void validate_config(const TrainConfig& c) {
    if (!(c.lr > 0.0)) throw InvalidParamsError("fit: lr must be positive");
    if (c.momentum < 0.0 || c.momentum >= 1.0)
        throw InvalidParamsError("fit: momentum must be in [0, 1)");
    if (c.weight_decay < 0.0) throw InvalidParamsError("fit: negative weight decay");
    if (!(c.lr_gamma > 0.0)) throw InvalidParamsError("fit: lr gamma must be positive");
    if (!(c.subsample_ratio > 0.0) || c.subsample_ratio > 1.0)
        throw InvalidParamsError("fit: subsample ratio must be in (0, 1]");
    if (c.batch_size() == 0) throw InvalidParamsError("fit: zero batch size");
}

/// Mean batch loss plus gradients for every parameter tensor. Shared by fit
/// and grad_check so both sides of the finite-difference comparison see the
/// exact same function.
double batch_gradients(const EmbeddingModel& model, const ProxyMatrix& proxies,
                       const Matrix& batch_features,
                       const std::vector<std::size_t>& batch_labels,
                       const LossConfig& loss_config,
                       const std::vector<std::size_t>* active, bool include_trunk,
                       ModelGrads& grads, Matrix& proxy_grads) {
    const std::size_t b = batch_features.rows;
    std::vector<ForwardCache> caches(b);
    Matrix embeddings(b, model.embed_dim());
    for (std::size_t i = 0; i < b; ++i) {
        forward(model, batch_features.row(i), caches[i]);
        std::copy(caches[i].x.begin(), caches[i].x.end(), embeddings.row(i).begin());
    }

    BatchLossResult loss = batch_loss(embeddings, batch_labels, proxies, loss_config, active);

    grads = ModelGrads::zeros_like(model);
    proxy_grads = loss.grad_proxies;
    const double inv_b = 1.0 / static_cast<double>(b);
    Vector grad_x(model.embed_dim());
    for (std::size_t i = 0; i < b; ++i) {
        auto row = loss.grad_embeddings.row(i);
        for (std::size_t j = 0; j < grad_x.size(); ++j) grad_x[j] = inv_b * row[j];
        backward(model, caches[i], grad_x, grads, include_trunk);
    }
    return loss.mean_loss;
}

double batch_loss_only(const EmbeddingModel& model, const ProxyMatrix& proxies,
                       const Matrix& batch_features,
                       const std::vector<std::size_t>& batch_labels,
                       const LossConfig& loss_config,
                       const std::vector<std::size_t>* active) {
    Matrix embeddings = embed_all(model, batch_features);
    return batch_loss(embeddings, batch_labels, proxies, loss_config, active).mean_loss;
}

}  // namespace

TrainResult fit(const Dataset& dataset, EmbeddingModel model, ProxyMatrix proxies,
                const TrainConfig& config) {
    dataset.validate();
    validate_config(config);
    if (dataset.feature_dim() != model.feature_dim())
        throw ShapeMismatchError("fit: dataset feature dim does not match the model");
    if (proxies.dim() != model.embed_dim())
        throw ShapeMismatchError("fit: proxy dim does not match the embed dim");
    if (proxies.class_count() != dataset.class_count)
        throw ShapeMismatchError("fit: proxy count does not match the class count");

    TrainResult result{std::move(model), std::move(proxies), TrainHistory{}};
    if (config.epochs == 0) return result;

    SeededRng rng(config.seed);
    OptimizerState state = OptimizerState::zeros_like(result.model, result.proxies);
    ModelGrads grads;
    Matrix proxy_grads;
    Matrix batch_features;
    std::vector<std::size_t> batch_labels;
    std::size_t iteration = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, config);
        const bool warm = epoch < config.warmstart_epochs;

        auto batches = config.class_balanced
                           ? class_balanced_batches(dataset.labels, config.batch, rng)
                           : sequential_batches(dataset.labels,
                                                config.sequential_batch_size, rng);

        double loss_sum = 0.0;
        double max_batch = 0.0;
        std::size_t samples = 0;
        for (const auto& batch : batches) {
            batch_features = Matrix(batch.size(), dataset.feature_dim());
            batch_labels.resize(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                auto src = dataset.features.row(batch[i]);
                std::copy(src.begin(), src.end(), batch_features.row(i).begin());
                batch_labels[i] = dataset.labels[batch[i]];
            }

            std::vector<std::size_t> active;
            const std::vector<std::size_t>* active_ptr = nullptr;
            if (config.subsample_ratio < 1.0 &&
                config.loss.variant == LossVariant::kNormSoftmax) {
                active = subsample_classes(batch_labels, dataset.class_count,
                                           config.subsample_ratio, rng);
                active_ptr = &active;
            }

            const bool include_trunk =
                !warm && result.model.trunk_kind == TrunkKind::kAffineTanh;
            double loss = 0.0;
            // A zero or non-unit embedding mid-training means the parameters
            // went non-finite; report it as a divergence with its iteration.
            try {
                loss = batch_gradients(result.model, result.proxies, batch_features,
                                       batch_labels, config.loss, active_ptr,
                                       include_trunk, grads, proxy_grads);
            } catch (const ZeroVectorError& e) {
                throw NonFiniteLossError(
                    iteration, "fit: diverged at iteration " +
                                   std::to_string(iteration) + ": " + e.what());
            } catch (const NotNormalizedError& e) {
                throw NonFiniteLossError(
                    iteration, "fit: diverged at iteration " +
                                   std::to_string(iteration) + ": " + e.what());
            }
            if (!std::isfinite(loss))
                throw NonFiniteLossError(
                    iteration, "fit: non-finite batch loss at iteration " +
                                   std::to_string(iteration));
            if (iteration == 0) result.history.initial_loss = loss;

            if (include_trunk) {
                sgd_step(result.model.trunk_weight.data, grads.trunk_weight.data,
                         state.trunk_weight.data, lr, config.momentum,
                         config.weight_decay);
                sgd_step(result.model.trunk_bias, grads.trunk_bias, state.trunk_bias,
                         lr, config.momentum, config.weight_decay);
            }
            sgd_step(result.model.projection.data, grads.projection.data,
                     state.projection.data, lr, config.momentum, config.weight_decay);
            sgd_step(result.proxies.weights.data, proxy_grads.data, state.proxies.data,
                     lr, config.momentum, config.weight_decay);

            loss_sum += loss * static_cast<double>(batch.size());
            max_batch = std::max(max_batch, loss);
            samples += batch.size();
            ++iteration;
        }

        EpochStats stats;
        stats.mean_loss = loss_sum / static_cast<double>(samples);
        stats.max_batch_loss = max_batch;
        stats.lr = lr;
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        result.history.epochs.push_back(stats);
    }
    return result;
}

double grad_check(const EmbeddingModel& model, const ProxyMatrix& proxies,
                  const Matrix& batch_features, const std::vector<std::size_t>& batch_labels,
                  const LossConfig& loss_config, double h,
                  const std::vector<std::size_t>* active_classes, std::size_t max_coords,
                  GradCheckWorst* worst_out) {
    if (h < 1e-7 || h > 1e-3) throw InvalidParamsError("grad_check: h out of range");

    ModelGrads grads;
    Matrix proxy_grads;
    batch_gradients(model, proxies, batch_features, batch_labels, loss_config,
                    active_classes, true, grads, proxy_grads);

    // Tensor order: trunk weight, trunk bias, projection, proxies.
    std::vector<double*> param_ptrs;
    std::vector<double> analytic;
    std::vector<std::pair<std::string, std::size_t>> names;
    EmbeddingModel m = model;
    ProxyMatrix p = proxies;
    auto collect = [&](const char* name, std::vector<double>& tensor,
                       const std::vector<double>& grad) {
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            param_ptrs.push_back(&tensor[i]);
            analytic.push_back(grad[i]);
            names.emplace_back(name, i);
        }
    };
    collect("trunk_weight", m.trunk_weight.data, grads.trunk_weight.data);
    collect("trunk_bias", m.trunk_bias, grads.trunk_bias);
    collect("projection", m.projection.data, grads.projection.data);
    collect("proxies", p.weights.data, proxy_grads.data);

    std::vector<std::size_t> coords(param_ptrs.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
        SeededRng rng(derive_seed(0x67726164u, coords.size()));
        coords = rng.sample_indices(coords.size(), max_coords);
    }

    double worst = 0.0;
    bool have_worst = false;
    for (std::size_t c : coords) {
        double* slot = param_ptrs[c];
        const double saved = *slot;
        *slot = saved + h;
        const double up = batch_loss_only(m, p, batch_features, batch_labels,
                                          loss_config, active_classes);
        *slot = saved - h;
        const double down = batch_loss_only(m, p, batch_features, batch_labels,
                                            loss_config, active_classes);
        *slot = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic[c])});
        const double err = std::fabs(numeric - analytic[c]) / denom;
        if (worst_out != nullptr && (!have_worst || err > worst)) {
            *worst_out = {names[c].first, names[c].second, analytic[c], numeric, err};
            have_worst = true;
        }
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace pxe
