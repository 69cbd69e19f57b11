#pragma once

#include <cstddef>
#include <vector>

#include "pxe/error.hpp"
#include "pxe/linalg.hpp"
#include "pxe/rng.hpp"

namespace pxe {

/// In-memory dataset: raw features, one dense class label per row.
/// Labels are dense: every value in [0, class_count) occurs at least once.
struct Dataset {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.cols; }

    /// Throws InvalidParamsError if the invariants above do not hold.
    void validate() const;
};

struct BatchSpec {
    std::size_t classes_per_batch = 3;
    std::size_t samples_per_class = 25;

    std::size_t batch_size() const { return classes_per_batch * samples_per_class; }
};

/// Gaussian blobs around per-class random unit centers. Class c occupies rows
/// [c*per_class, (c+1)*per_class). Draw order is fixed: center for class c,
/// then all of its samples, then the next class.
Dataset generate_synthetic(std::size_t class_count, std::size_t per_class,
                           std::size_t feature_dim, double center_scale,
                           double noise_sigma, SeededRng& rng);

/// One epoch of C-classes-by-S-samples batches: ceil(N / (C*S)) batches,
/// classes drawn without replacement per batch (they may repeat across
/// batches), indices within a class drawn without replacement unless the
/// class holds fewer than S samples, in which case slots repeat.
std::vector<std::vector<std::size_t>> class_balanced_batches(
    const std::vector<std::size_t>& labels, const BatchSpec& spec, SeededRng& rng);

/// One random permutation of all indices, chunked; the last chunk may be
/// short.
std::vector<std::vector<std::size_t>> sequential_batches(
    const std::vector<std::size_t>& labels, std::size_t batch_size, SeededRng& rng);

/// Active class set for the subsampled softmax: all batch labels plus enough
/// uniformly drawn extras to reach max(|batch_labels|, round(ratio *
/// class_count)). Returned sorted ascending.
std::vector<std::size_t> subsample_classes(const std::vector<std::size_t>& batch_labels,
                                           std::size_t class_count, double ratio,
                                           SeededRng& rng);

}  // namespace pxe
