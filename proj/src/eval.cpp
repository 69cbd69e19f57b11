#include "pxe/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace pxe {

void EmbeddingSet::validate() const {
    if (labels.size() != embeddings.rows)
        throw ShapeMismatchError("embedding set: row and label counts differ");
    if (size() < 2) throw InvalidParamsError("embedding set: need at least two rows");
    for (std::size_t i = 0; i < embeddings.rows; ++i)
        if (std::fabs(norm2(embeddings.row(i)) - 1.0) > 1e-6)
            throw NotNormalizedError("embedding set: row is not unit length");
}

namespace {

/// Select the k best gallery candidates for one query under `better`,
/// ties already folded into the comparator via the index.
template <typename Score>
std::vector<std::size_t> select_top_k(std::size_t gallery_size, std::size_t skip,
                                      std::size_t k, const std::vector<Score>& scores,
                                      bool ascending) {
    std::vector<std::size_t> order;
    order.reserve(gallery_size);
    for (std::size_t j = 0; j < gallery_size; ++j)
        if (j != skip) order.push_back(j);
    auto cmp = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b])
            return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(order.begin(),
                      order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), cmp);
    order.resize(k);
    return order;
}

std::map<std::size_t, double> recall_from_neighbors(
    const IndexMatrix& neighbors, const std::vector<std::size_t>& query_labels,
    const std::vector<std::size_t>& gallery_labels, const std::vector<std::size_t>& ks) {
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < neighbors.size(); ++i) {
            const auto& row = neighbors[i];
            for (std::size_t r = 0; r < k && r < row.size(); ++r) {
                if (gallery_labels[row[r]] == query_labels[i]) {
                    ++hits;
                    break;
                }
            }
        }
        out[k] = static_cast<double>(hits) / static_cast<double>(neighbors.size());
    }
    return out;
}

std::size_t max_of(const std::vector<std::size_t>& ks) {
    if (ks.empty()) throw InvalidParamsError("recall: empty K list");
    return *std::max_element(ks.begin(), ks.end());
}

}  // namespace

IndexMatrix knn_cosine(const EmbeddingSet& set, std::size_t k) {
    set.validate();
    if (k == 0 || k > set.size() - 1)
        throw KTooLargeError("knn_cosine: K must be in [1, N-1]");

    IndexMatrix out(set.size());
    std::vector<double> sims(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto qi = set.embeddings.row(i);
        for (std::size_t j = 0; j < set.size(); ++j)
            sims[j] = dot(qi, set.embeddings.row(j));
        out[i] = select_top_k(set.size(), i, k, sims, false);
    }
    return out;
}

std::map<std::size_t, double> recall_at_k(const EmbeddingSet& set,
                                          const std::vector<std::size_t>& ks) {
    auto neighbors = knn_cosine(set, max_of(ks));
    return recall_from_neighbors(neighbors, set.labels, set.labels, ks);
}

std::map<std::size_t, double> recall_at_k_split(const EmbeddingSet& queries,
                                                const EmbeddingSet& gallery,
                                                const std::vector<std::size_t>& ks) {
    queries.validate();
    gallery.validate();
    if (queries.dim() != gallery.dim())
        throw ShapeMismatchError("recall split: query and gallery dims differ");
    const std::size_t kmax = max_of(ks);
    if (kmax == 0 || kmax > gallery.size())
        throw KTooLargeError("recall split: K must be in [1, gallery size]");

    IndexMatrix neighbors(queries.size());
    std::vector<double> sims(gallery.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto qi = queries.embeddings.row(i);
        for (std::size_t j = 0; j < gallery.size(); ++j)
            sims[j] = dot(qi, gallery.embeddings.row(j));
        neighbors[i] = select_top_k(gallery.size(), gallery.size(), kmax, sims, false);
    }
    return recall_from_neighbors(neighbors, queries.labels, gallery.labels, ks);
}

BinaryCodeMatrix binarize(const EmbeddingSet& set) {
    BinaryCodeMatrix codes;
    codes.n = set.size();
    codes.dim_bits = set.dim();
    codes.words.assign(codes.n * codes.words_per_row(), 0);
    for (std::size_t i = 0; i < codes.n; ++i) {
        auto row = set.embeddings.row(i);
        auto out = codes.row(i);
        for (std::size_t j = 0; j < codes.dim_bits; ++j)
            if (row[j] >= 0.0) out[j / 64] |= std::uint64_t{1} << (j % 64);
    }
    return codes;
}

std::size_t hamming_distance(std::span<const std::uint64_t> a,
                             std::span<const std::uint64_t> b) {
    std::size_t d = 0;
    for (std::size_t w = 0; w < a.size(); ++w)
        d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
    return d;
}

IndexMatrix hamming_knn(const BinaryCodeMatrix& codes, std::size_t k) {
    if (codes.n < 2) throw InvalidParamsError("hamming_knn: need at least two rows");
    if (k == 0 || k > codes.n - 1)
        throw KTooLargeError("hamming_knn: K must be in [1, N-1]");

    IndexMatrix out(codes.n);
    std::vector<std::size_t> dists(codes.n);
    for (std::size_t i = 0; i < codes.n; ++i) {
        for (std::size_t j = 0; j < codes.n; ++j)
            dists[j] = hamming_distance(codes.row(i), codes.row(j));
        out[i] = select_top_k(codes.n, i, k, dists, true);
    }
    return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
    }
    return acc;
}

}  // namespace

std::vector<std::size_t> kmeans(const EmbeddingSet& set, std::size_t k, SeededRng& rng,
                                std::size_t max_iters) {
    set.validate();
    if (k == 0) throw InvalidParamsError("kmeans: k must be positive");
    if (k > set.size()) throw KTooLargeError("kmeans: k exceeds the point count");

    const std::size_t n = set.size();
    const std::size_t d = set.dim();

    // D^2-weighted seeding.
    Matrix centers(k, d);
    std::vector<double> best_sq(n, 0.0);
    {
        const std::size_t first = rng.uniform_index(n);
        auto src = set.embeddings.row(first);
        std::copy(src.begin(), src.end(), centers.row(0).begin());
        for (std::size_t i = 0; i < n; ++i)
            best_sq[i] = sq_dist(set.embeddings.row(i), centers.row(0));
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (double w : best_sq) total += w;
            std::size_t pick;
            if (total > 0.0) {
                const double r = rng.uniform_double() * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += best_sq[i];
                    if (r < acc) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.uniform_index(n);
            }
            auto row = set.embeddings.row(pick);
            std::copy(row.begin(), row.end(), centers.row(c).begin());
            for (std::size_t i = 0; i < n; ++i)
                best_sq[i] = std::min(best_sq[i], sq_dist(set.embeddings.row(i),
                                                          centers.row(c)));
        }
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<std::size_t> prev(n, k);  // sentinel, differs from any cluster
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        // Assignment pass: nearest center, ties to the smaller index.
        for (std::size_t i = 0; i < n; ++i) {
            auto row = set.embeddings.row(i);
            double best = sq_dist(row, centers.row(0));
            std::size_t best_c = 0;
            for (std::size_t c = 1; c < k; ++c) {
                const double dist = sq_dist(row, centers.row(c));
                if (dist < best) {
                    best = dist;
                    best_c = c;
                }
            }
            assign[i] = best_c;
        }
        if (assign == prev) break;
        prev = assign;

        // Update pass.
        std::fill(centers.data.begin(), centers.data.end(), 0.0);
        std::fill(sizes.begin(), sizes.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = set.embeddings.row(i);
            auto ctr = centers.row(assign[i]);
            for (std::size_t j = 0; j < d; ++j) ctr[j] += row[j];
            ++sizes[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;
            auto ctr = centers.row(c);
            for (std::size_t j = 0; j < d; ++j) ctr[j] /= static_cast<double>(sizes[c]);
        }

        // Re-seed empty clusters from the farthest point.
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] != 0) continue;
            double worst = -1.0;
            std::size_t far = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[assign[i]] <= 1) continue;
                const double dist = sq_dist(set.embeddings.row(i),
                                            centers.row(assign[i]));
                if (dist > worst) {
                    worst = dist;
                    far = i;
                }
            }
            auto row = set.embeddings.row(far);
            std::copy(row.begin(), row.end(), centers.row(c).begin());
            --sizes[assign[far]];
            assign[far] = c;
            sizes[c] = 1;
        }
    }
    return assign;
}

double nmi(const std::vector<std::size_t>& assignments,
           const std::vector<std::size_t>& labels, NmiNorm norm) {
    if (assignments.size() != labels.size())
        throw LengthMismatchError("nmi: partition lengths differ");
    if (assignments.empty()) throw InvalidParamsError("nmi: empty partitions");

    const double n = static_cast<double>(assignments.size());
    std::map<std::size_t, std::size_t> a_ids, l_ids;
    for (std::size_t v : assignments) a_ids.emplace(v, a_ids.size());
    for (std::size_t v : labels) l_ids.emplace(v, l_ids.size());

    Matrix table(a_ids.size(), l_ids.size());
    for (std::size_t i = 0; i < assignments.size(); ++i)
        table.at(a_ids[assignments[i]], l_ids[labels[i]]) += 1.0;

    std::vector<double> row_sum(table.rows, 0.0), col_sum(table.cols, 0.0);
    for (std::size_t a = 0; a < table.rows; ++a)
        for (std::size_t l = 0; l < table.cols; ++l) {
            row_sum[a] += table.at(a, l);
            col_sum[l] += table.at(a, l);
        }

    double h_a = 0.0, h_l = 0.0, info = 0.0;
    for (double s : row_sum)
        if (s > 0.0) h_a -= (s / n) * std::log(s / n);
    for (double s : col_sum)
        if (s > 0.0) h_l -= (s / n) * std::log(s / n);
    for (std::size_t a = 0; a < table.rows; ++a)
        for (std::size_t l = 0; l < table.cols; ++l) {
            const double c = table.at(a, l);
            if (c > 0.0)
                info += (c / n) * std::log(n * c / (row_sum[a] * col_sum[l]));
        }

    const double denom = norm == NmiNorm::kArithmetic ? 0.5 * (h_a + h_l)
                                                      : std::sqrt(h_a * h_l);
    if (denom == 0.0) return h_a == 0.0 && h_l == 0.0 ? 1.0 : 0.0;
    return std::clamp(info / denom, 0.0, 1.0);
}

EvalOutcome evaluate(const EmbeddingSet& set, const std::vector<std::size_t>& ks,
                     bool with_binary, std::size_t k_for_nmi, SeededRng& rng,
                     NmiNorm nmi_norm) {
    EvalOutcome out;
    out.float_report.mode = EvalMode::kFloat;
    out.float_report.recall_at = recall_at_k(set, ks);
    out.float_report.nmi = nmi(kmeans(set, k_for_nmi, rng), set.labels, nmi_norm);

    if (with_binary) {
        EvalReport rep;
        rep.mode = EvalMode::kBinary;
        auto codes = binarize(set);
        auto neighbors = hamming_knn(codes, max_of(ks));
        rep.recall_at = recall_from_neighbors(neighbors, set.labels, set.labels, ks);

        // NMI over the sign patterns, rescaled to unit vectors so the same
        // k-means applies.
        EmbeddingSet signs;
        signs.labels = set.labels;
        signs.embeddings = Matrix(set.size(), set.dim());
        const double unit = 1.0 / std::sqrt(static_cast<double>(set.dim()));
        for (std::size_t i = 0; i < set.size(); ++i)
            for (std::size_t j = 0; j < set.dim(); ++j)
                signs.embeddings.at(i, j) = codes.bit(i, j) ? unit : -unit;
        rep.nmi = nmi(kmeans(signs, k_for_nmi, rng), signs.labels, nmi_norm);
        out.binary_report = rep;
    }
    return out;
}

}  // namespace pxe
