#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pxe/error.hpp"
#include "pxe/linalg.hpp"
#include "pxe/rng.hpp"

namespace pxe {

/// Unit-norm embeddings with one class label per row.
struct EmbeddingSet {
    Matrix embeddings;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return embeddings.cols; }

    /// N >= 2, label count matches rows, every row unit within 1e-6.
    void validate() const;
};

using IndexMatrix = std::vector<std::vector<std::size_t>>;

/// Top-K gallery rows per query by cosine similarity, the query itself
/// excluded, descending similarity, ties broken by smaller index.
IndexMatrix knn_cosine(const EmbeddingSet& set, std::size_t k);

/// R@K over the set itself with self-exclusion: the fraction of queries
/// whose top-K list contains at least one row sharing the query label.
std::map<std::size_t, double> recall_at_k(const EmbeddingSet& set,
                                          const std::vector<std::size_t>& ks);

/// Query/gallery split: queries retrieve from a separate gallery, no
/// self-exclusion.
std::map<std::size_t, double> recall_at_k_split(const EmbeddingSet& queries,
                                                const EmbeddingSet& gallery,
                                                const std::vector<std::size_t>& ks);

/// Sign patterns packed 64 dimensions per word. Bit j of a row lives in
/// word j/64 at bit position j%64; padding bits past dim_bits stay zero.
struct BinaryCodeMatrix {
    std::size_t n = 0;
    std::size_t dim_bits = 0;
    std::vector<std::uint64_t> words;

    std::size_t words_per_row() const { return (dim_bits + 63) / 64; }
    std::span<const std::uint64_t> row(std::size_t i) const {
        return {words.data() + i * words_per_row(), words_per_row()};
    }
    std::span<std::uint64_t> row(std::size_t i) {
        return {words.data() + i * words_per_row(), words_per_row()};
    }
    bool bit(std::size_t i, std::size_t j) const {
        return (row(i)[j / 64] >> (j % 64)) & 1u;
    }
};

/// bit j = 1 iff embedding[i][j] >= 0 (exact zero maps to 1).
BinaryCodeMatrix binarize(const EmbeddingSet& set);

std::size_t hamming_distance(std::span<const std::uint64_t> a,
                             std::span<const std::uint64_t> b);

/// Top-K by Hamming distance, self excluded, ascending distance, ties by
/// smaller index.
IndexMatrix hamming_knn(const BinaryCodeMatrix& codes, std::size_t k);

/// Lloyd's algorithm with D^2-weighted seeding, squared Euclidean metric.
/// Runs to an assignment fixpoint or max_iters passes; empty clusters are
/// re-seeded from the point farthest from its current centroid.
std::vector<std::size_t> kmeans(const EmbeddingSet& set, std::size_t k, SeededRng& rng,
                                std::size_t max_iters = 100);

enum class NmiNorm { kArithmetic, kGeometric };

/// Normalized mutual information from the contingency table, natural
/// logs. Default normalization 2I/(H_A + H_L); the geometric-mean form
/// I/sqrt(H_A H_L) is available behind the flag. Two single-cluster
/// partitions score 1. Result clamped to [0, 1].
double nmi(const std::vector<std::size_t>& assignments,
           const std::vector<std::size_t>& labels,
           NmiNorm norm = NmiNorm::kArithmetic);

enum class EvalMode { kFloat, kBinary };

struct EvalReport {
    std::map<std::size_t, double> recall_at;
    double nmi = 0.0;
    EvalMode mode = EvalMode::kFloat;
};

struct EvalOutcome {
    EvalReport float_report;
    std::optional<EvalReport> binary_report;
};

/// Full protocol: float-mode R@K + k-means NMI, and when with_binary is
/// set, the same protocol over the binarized codes (Hamming retrieval,
/// k-means on the unit-scaled sign vectors).
EvalOutcome evaluate(const EmbeddingSet& set, const std::vector<std::size_t>& ks,
                     bool with_binary, std::size_t k_for_nmi, SeededRng& rng,
                     NmiNorm nmi_norm = NmiNorm::kArithmetic);

}  // namespace pxe
