#include "pxe/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace pxe {

void Dataset::validate() const {
    if (features.rows != labels.size())
        throw InvalidParamsError("dataset: feature rows and label count differ");
    if (class_count == 0) throw InvalidParamsError("dataset: class_count is zero");
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t label : labels) {
        if (label >= class_count) throw InvalidParamsError("dataset: label out of range");
        ++counts[label];
    }
    for (std::size_t c = 0; c < class_count; ++c)
        if (counts[c] == 0) throw InvalidParamsError("dataset: class with no samples");
}

Dataset generate_synthetic(std::size_t class_count, std::size_t per_class,
                           std::size_t feature_dim, double center_scale,
                           double noise_sigma, SeededRng& rng) {
    if (class_count < 2) throw InvalidParamsError("generate_synthetic: need >= 2 classes");
    if (per_class < 2) throw InvalidParamsError("generate_synthetic: need >= 2 per class");
    if (feature_dim < 2) throw InvalidParamsError("generate_synthetic: need dim >= 2");
    if (noise_sigma < 0.0) throw InvalidParamsError("generate_synthetic: negative noise");

    Dataset ds;
    ds.class_count = class_count;
    ds.features = Matrix(class_count * per_class, feature_dim);
    ds.labels.resize(class_count * per_class);

    Vector center(feature_dim);
    for (std::size_t c = 0; c < class_count; ++c) {
        for (auto& v : center) v = rng.normal();
        center = l2_normalize(center).first;
        for (auto& v : center) v *= center_scale;
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t row = c * per_class + s;
            ds.labels[row] = c;
            auto out = ds.features.row(row);
            for (std::size_t j = 0; j < feature_dim; ++j)
                out[j] = center[j] + noise_sigma * rng.normal();
        }
    }
    return ds;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(
    const std::vector<std::size_t>& labels) {
    std::size_t max_label = 0;
    for (std::size_t label : labels) max_label = std::max(max_label, label);
    std::vector<std::vector<std::size_t>> by_class(labels.empty() ? 0 : max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    return by_class;
}

}  // namespace

std::vector<std::vector<std::size_t>> class_balanced_batches(
    const std::vector<std::size_t>& labels, const BatchSpec& spec, SeededRng& rng) {
    if (spec.classes_per_batch == 0 || spec.samples_per_class == 0)
        throw InvalidParamsError("class_balanced_batches: zero batch spec");
    if (labels.empty()) throw InvalidParamsError("class_balanced_batches: empty labels");

    auto by_class = indices_by_class(labels);
    for (const auto& members : by_class)
        if (members.empty())
            throw InvalidParamsError("class_balanced_batches: class with no samples");
    if (spec.classes_per_batch > by_class.size())
        throw SpecInfeasibleError("class_balanced_batches: more classes per batch than classes");

    const std::size_t batch_size = spec.batch_size();
    const std::size_t n_batches = (labels.size() + batch_size - 1) / batch_size;

    std::vector<std::vector<std::size_t>> batches(n_batches);
    for (auto& batch : batches) {
        batch.reserve(batch_size);
        auto classes = rng.sample_indices(by_class.size(), spec.classes_per_batch);
        for (std::size_t c : classes) {
            const auto& members = by_class[c];
            if (members.size() >= spec.samples_per_class) {
                for (std::size_t k : rng.sample_indices(members.size(), spec.samples_per_class))
                    batch.push_back(members[k]);
            } else {
                for (std::size_t s = 0; s < spec.samples_per_class; ++s)
                    batch.push_back(members[rng.uniform_index(members.size())]);
            }
        }
    }
    return batches;
}

std::vector<std::vector<std::size_t>> sequential_batches(
    const std::vector<std::size_t>& labels, std::size_t batch_size, SeededRng& rng) {
    if (batch_size == 0) throw InvalidParamsError("sequential_batches: zero batch size");
    std::vector<std::size_t> perm(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, perm.size());
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::vector<std::size_t> subsample_classes(const std::vector<std::size_t>& batch_labels,
                                           std::size_t class_count, double ratio,
                                           SeededRng& rng) {
    if (!(ratio > 0.0) || ratio > 1.0)
        throw InvalidParamsError("subsample_classes: ratio must be in (0, 1]");

    std::vector<std::size_t> active(batch_labels);
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    for (std::size_t label : active)
        if (label >= class_count) throw InvalidClassError("subsample_classes: label out of range");

    const auto quota = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(class_count)));
    const std::size_t target = std::max(active.size(), quota);
    if (target > active.size()) {
        std::vector<std::size_t> complement;
        complement.reserve(class_count - active.size());
        std::size_t next = 0;
        for (std::size_t c = 0; c < class_count; ++c) {
            if (next < active.size() && active[next] == c) {
                ++next;
                continue;
            }
            complement.push_back(c);
        }
        for (std::size_t k : rng.sample_indices(complement.size(), target - active.size()))
            active.push_back(complement[k]);
        std::sort(active.begin(), active.end());
    }
    return active;
}

}  // namespace pxe
