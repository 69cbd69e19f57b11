#include "pxe/eval.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace pxe;

namespace {

EmbeddingSet random_unit_set(SeededRng& rng, std::size_t n, std::size_t d,
                             std::size_t classes) {
    EmbeddingSet set;
    set.embeddings = Matrix(n, d);
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto v = test::random_unit_vector(rng, d);
        std::copy(v.begin(), v.end(), set.embeddings.row(i).begin());
        set.labels[i] = rng.uniform_index(classes);
    }
    return set;
}

EmbeddingSet set_from_angles(const std::vector<double>& degrees,
                             const std::vector<std::size_t>& labels) {
    EmbeddingSet set;
    set.embeddings = Matrix(degrees.size(), 2);
    set.labels = labels;
    for (std::size_t i = 0; i < degrees.size(); ++i) {
        const double rad = degrees[i] * M_PI / 180.0;
        set.embeddings.at(i, 0) = std::cos(rad);
        set.embeddings.at(i, 1) = std::sin(rad);
    }
    return set;
}

/// Exhaustive oracle: full sort of all gallery indices per query.
IndexMatrix brute_knn_cosine(const EmbeddingSet& set, std::size_t k) {
    IndexMatrix out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t j = 0; j < set.size(); ++j) {
            if (j == i) continue;
            scored.emplace_back(dot(set.embeddings.row(i), set.embeddings.row(j)), j);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t r = 0; r < k; ++r) out[i].push_back(scored[r].second);
    }
    return out;
}

std::size_t brute_hamming(const std::vector<bool>& a, const std::vector<bool>& b) {
    std::size_t d = 0;
    for (std::size_t j = 0; j < a.size(); ++j) d += a[j] != b[j];
    return d;
}

IndexMatrix brute_hamming_knn(const std::vector<std::vector<bool>>& bits, std::size_t k) {
    IndexMatrix out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        std::vector<std::pair<std::size_t, std::size_t>> scored;
        for (std::size_t j = 0; j < bits.size(); ++j) {
            if (j == i) continue;
            scored.emplace_back(brute_hamming(bits[i], bits[j]), j);
        }
        std::sort(scored.begin(), scored.end());
        for (std::size_t r = 0; r < k; ++r) out[i].push_back(scored[r].second);
    }
    return out;
}

long double oracle_nmi_arith(const std::vector<std::vector<long double>>& table) {
    long double n = 0.0L;
    std::vector<long double> rows(table.size(), 0.0L), cols(table[0].size(), 0.0L);
    for (std::size_t a = 0; a < table.size(); ++a)
        for (std::size_t l = 0; l < table[0].size(); ++l) {
            rows[a] += table[a][l];
            cols[l] += table[a][l];
            n += table[a][l];
        }
    long double ha = 0.0L, hl = 0.0L, info = 0.0L;
    for (long double s : rows)
        if (s > 0) ha -= s / n * std::log(s / n);
    for (long double s : cols)
        if (s > 0) hl -= s / n * std::log(s / n);
    for (std::size_t a = 0; a < table.size(); ++a)
        for (std::size_t l = 0; l < table[0].size(); ++l) {
            const long double c = table[a][l];
            if (c > 0) info += c / n * std::log(n * c / (rows[a] * cols[l]));
        }
    if (ha == 0.0L && hl == 0.0L) return 1.0L;
    return 2.0L * info / (ha + hl);
}

double objective(const EmbeddingSet& set, const std::vector<std::size_t>& assign) {
    const std::size_t k = *std::max_element(assign.begin(), assign.end()) + 1;
    Matrix centers(k, set.dim());
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto row = set.embeddings.row(i);
        for (std::size_t j = 0; j < set.dim(); ++j) centers.at(assign[i], j) += row[j];
        ++sizes[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < set.dim(); ++j)
            if (sizes[c] > 0) centers.at(c, j) /= static_cast<double>(sizes[c]);
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto row = set.embeddings.row(i);
        for (std::size_t j = 0; j < set.dim(); ++j) {
            const double d = row[j] - centers.at(assign[i], j);
            total += d * d;
        }
    }
    return total;
}

}  // namespace

TEST_CASE("knn_cosine retrieves duplicates first") {
    EmbeddingSet set;
    set.embeddings = Matrix(3, 2);
    set.embeddings.at(0, 0) = 1.0;
    set.embeddings.at(1, 1) = 1.0;
    set.embeddings.at(2, 0) = 1.0;
    set.labels = {0, 1, 0};
    auto nn = knn_cosine(set, 1);
    CHECK(nn[0][0] == 2);
    CHECK(nn[1][0] == 0);  // tie between 0 and 2, smaller index wins
    CHECK(nn[2][0] == 0);
}

TEST_CASE("knn_cosine with K of N-1 permutes the other indices") {
    SeededRng rng(31);
    auto set = random_unit_set(rng, 12, 5, 3);
    auto nn = knn_cosine(set, 11);
    for (std::size_t i = 0; i < set.size(); ++i) {
        std::vector<std::size_t> sorted(nn[i]);
        std::sort(sorted.begin(), sorted.end());
        std::size_t expect = 0;
        for (std::size_t j = 0; j < 11; ++j) {
            if (expect == i) ++expect;
            CHECK(sorted[j] == expect);
            ++expect;
        }
    }
}

TEST_CASE("knn_cosine equals the exhaustive oracle") {
    SeededRng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        auto set = random_unit_set(rng, 50, 4 + rng.uniform_index(5), 5);
        const std::size_t k = 1 + rng.uniform_index(8);
        CHECK(knn_cosine(set, k) == brute_knn_cosine(set, k));
    }
}

TEST_CASE("knn_cosine rejects out-of-range K and bad sets") {
    SeededRng rng(33);
    auto set = random_unit_set(rng, 5, 4, 2);
    CHECK_THROWS_AS(knn_cosine(set, 5), KTooLargeError);
    CHECK_THROWS_AS(knn_cosine(set, 0), KTooLargeError);
    set.embeddings.at(0, 0) *= 2.0;
    CHECK_THROWS_AS(knn_cosine(set, 1), NotNormalizedError);
}

TEST_CASE("recall_at_k on duplicated pairs is perfect") {
    EmbeddingSet set;
    set.embeddings = Matrix(6, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        set.embeddings.at(2 * c, c) = 1.0;
        set.embeddings.at(2 * c + 1, c) = 1.0;
    }
    set.labels = {0, 0, 1, 1, 2, 2};
    auto r = recall_at_k(set, {1});
    CHECK(r.at(1) == 1.0);
}

TEST_CASE("recall_at_k with singleton labels is zero") {
    SeededRng rng(34);
    auto set = random_unit_set(rng, 8, 6, 8);
    for (std::size_t i = 0; i < 8; ++i) set.labels[i] = i;
    auto r = recall_at_k(set, {1, 3, 7});
    CHECK(r.at(1) == 0.0);
    CHECK(r.at(3) == 0.0);
    CHECK(r.at(7) == 0.0);
}

TEST_CASE("recall_at_k matches the hand-enumerated six-point oracle") {
    // Angles 0, 12, 30 carry label 0; angles 40, 140, 200 carry label 1.
    // Enumerating neighbors by angular distance: queries 2 and 3 miss at
    // K=1, query 3 keeps missing until K=4.
    auto set = set_from_angles({0, 12, 30, 40, 140, 200}, {0, 0, 0, 1, 1, 1});
    auto r = recall_at_k(set, {1, 2, 4});
    CHECK(r.at(1) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
    CHECK(r.at(2) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(r.at(4) == 1.0);
}

TEST_CASE("recall_at_k is monotone in K") {
    SeededRng rng(35);
    for (int trial = 0; trial < 10; ++trial) {
        auto set = random_unit_set(rng, 40, 6, 4);
        auto r = recall_at_k(set, {1, 2, 5, 10, 20, 39});
        double prev = 0.0;
        for (const auto& [k, v] : r) {
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("recall_at_k_split retrieves without self-exclusion") {
    EmbeddingSet gallery;
    gallery.embeddings = Matrix(2, 2);
    gallery.embeddings.at(0, 0) = 1.0;
    gallery.embeddings.at(1, 1) = 1.0;
    gallery.labels = {0, 1};
    EmbeddingSet queries = gallery;
    auto r = recall_at_k_split(queries, gallery, {1});
    CHECK(r.at(1) == 1.0);
    CHECK_THROWS_AS(recall_at_k_split(queries, gallery, {3}), KTooLargeError);
}

TEST_CASE("binarize packs the documented bit layout") {
    EmbeddingSet set;
    set.embeddings = Matrix(2, 2);
    set.embeddings.at(0, 0) = 0.3;
    set.embeddings.at(0, 1) = -0.2;
    set.embeddings.at(1, 0) = -0.5;
    set.embeddings.at(1, 1) = -0.1;
    set.labels = {0, 1};
    auto codes = binarize(set);
    CHECK(codes.words_per_row() == 1);
    CHECK(codes.row(0)[0] == 0b01u);
    CHECK(codes.row(1)[0] == 0u);
}

TEST_CASE("binarize maps exact zero to bit one") {
    EmbeddingSet set;
    set.embeddings = Matrix(2, 2);
    set.embeddings.at(0, 0) = 0.0;
    set.embeddings.at(0, 1) = -1.0;
    set.embeddings.at(1, 0) = 1.0;
    set.labels = {0, 1};
    auto codes = binarize(set);
    CHECK(codes.bit(0, 0));
    CHECK_FALSE(codes.bit(0, 1));
}

TEST_CASE("binarize unpacks to the sign pattern with zero padding") {
    SeededRng rng(36);
    auto set = random_unit_set(rng, 10, 70, 2);
    auto codes = binarize(set);
    CHECK(codes.words_per_row() == 2);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = 0; j < 70; ++j)
            CHECK(codes.bit(i, j) == (set.embeddings.at(i, j) >= 0.0));
        for (std::size_t pad = 70; pad < 128; ++pad) {
            const bool pad_bit = (codes.row(i)[pad / 64] >> (pad % 64)) & 1u;
            CHECK_FALSE(pad_bit);
        }
    }
}

TEST_CASE("hamming_distance counts differing bits") {
    BinaryCodeMatrix codes;
    codes.n = 2;
    codes.dim_bits = 4;
    codes.words = {0b0000u, 0b1111u};
    CHECK(hamming_distance(codes.row(0), codes.row(1)) == 4);
    CHECK(hamming_distance(codes.row(0), codes.row(0)) == 0);
}

TEST_CASE("hamming_knn pairs identical codes") {
    BinaryCodeMatrix codes;
    codes.n = 4;
    codes.dim_bits = 8;
    codes.words = {0xF0u, 0x0Fu, 0xF0u, 0xFFu};
    auto nn = hamming_knn(codes, 1);
    CHECK(nn[0][0] == 2);
    CHECK(nn[2][0] == 0);
}

TEST_CASE("hamming_knn equals the unpacked oracle") {
    SeededRng rng(37);
    for (std::size_t dim : {256u, 70u, 64u}) {
        auto set = random_unit_set(rng, 64, dim, 4);
        auto codes = binarize(set);
        std::vector<std::vector<bool>> bits(codes.n, std::vector<bool>(dim));
        for (std::size_t i = 0; i < codes.n; ++i)
            for (std::size_t j = 0; j < dim; ++j) bits[i][j] = codes.bit(i, j);
        CHECK(hamming_knn(codes, 3) == brute_hamming_knn(bits, 3));
    }
}

TEST_CASE("kmeans with one cluster is constant") {
    SeededRng rng(38);
    auto set = random_unit_set(rng, 10, 4, 2);
    auto assign = kmeans(set, 1, rng);
    for (std::size_t a : assign) CHECK(a == 0);
}

TEST_CASE("kmeans co-clusters duplicate pairs") {
    EmbeddingSet set;
    set.embeddings = Matrix(4, 2);
    set.embeddings.at(0, 0) = 1.0;
    set.embeddings.at(1, 0) = 1.0;
    set.embeddings.at(2, 1) = 1.0;
    set.embeddings.at(3, 1) = 1.0;
    set.labels = {0, 0, 1, 1};
    SeededRng rng(39);
    auto assign = kmeans(set, 2, rng);
    CHECK(assign[0] == assign[1]);
    CHECK(assign[2] == assign[3]);
    CHECK(assign[0] != assign[2]);
}

TEST_CASE("kmeans recovers three tight clusters") {
    SeededRng rng(40);
    EmbeddingSet set;
    set.embeddings = Matrix(60, 8);
    set.labels.resize(60);
    Matrix centers(3, 8);
    for (std::size_t c = 0; c < 3; ++c) {
        auto ctr = test::random_unit_vector(rng, 8);
        std::copy(ctr.begin(), ctr.end(), centers.row(c).begin());
    }
    for (std::size_t i = 0; i < 60; ++i) {
        const std::size_t c = i / 20;
        Vector v = centers.row_vector(c);
        for (auto& x : v) x += 0.02 * rng.normal();
        v = l2_normalize(v).first;
        std::copy(v.begin(), v.end(), set.embeddings.row(i).begin());
        set.labels[i] = c;
    }

    auto assign = kmeans(set, 3, rng);
    // Nearest-true-center oracle, compared up to cluster relabeling.
    std::map<std::size_t, std::size_t> mapping;
    for (std::size_t i = 0; i < 60; ++i) {
        auto [it, inserted] = mapping.emplace(assign[i], set.labels[i]);
        CHECK(it->second == set.labels[i]);
    }
    CHECK(mapping.size() == 3);
}

TEST_CASE("kmeans objective is non-increasing in the iteration budget") {
    SeededRng seed_rng(41);
    auto set = random_unit_set(seed_rng, 50, 6, 5);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t iters = 1; iters <= 8; ++iters) {
        SeededRng rng(42);
        const double j = objective(set, kmeans(set, 5, rng, iters));
        CHECK(j <= prev + 1e-12);
        prev = j;
    }
}

TEST_CASE("kmeans is deterministic and validates k") {
    SeededRng rng(43);
    auto set = random_unit_set(rng, 20, 5, 4);
    SeededRng a(7), b(7);
    CHECK(kmeans(set, 4, a) == kmeans(set, 4, b));
    SeededRng c(8);
    CHECK_THROWS_AS(kmeans(set, 21, c), KTooLargeError);
    CHECK_THROWS_AS(kmeans(set, 0, c), InvalidParamsError);
}

TEST_CASE("nmi of identical partitions is one") {
    std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2, 2};
    CHECK(nmi(labels, labels) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<std::size_t> relabeled{5, 5, 9, 9, 1, 1, 1};
    CHECK(nmi(relabeled, labels) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nmi of a constant assignment is zero") {
    std::vector<std::size_t> assign(10, 3);
    std::vector<std::size_t> labels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(nmi(assign, labels) == 0.0);
}

TEST_CASE("nmi matches the high-precision oracle on the 2x2 table") {
    std::vector<std::size_t> assign, labels;
    auto add = [&](std::size_t a, std::size_t l, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            assign.push_back(a);
            labels.push_back(l);
        }
    };
    add(0, 0, 5);
    add(0, 1, 1);
    add(1, 0, 1);
    add(1, 1, 5);
    const double expect = static_cast<double>(
        oracle_nmi_arith({{5.0L, 1.0L}, {1.0L, 5.0L}}));
    CHECK(nmi(assign, labels) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("nmi matches the oracle on random partitions") {
    SeededRng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 10 + rng.uniform_index(40);
        const std::size_t ka = 2 + rng.uniform_index(4);
        const std::size_t kl = 2 + rng.uniform_index(4);
        std::vector<std::size_t> assign(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = rng.uniform_index(ka);
            labels[i] = rng.uniform_index(kl);
        }
        std::vector<std::vector<long double>> table(ka,
                                                    std::vector<long double>(kl, 0.0L));
        for (std::size_t i = 0; i < n; ++i) table[assign[i]][labels[i]] += 1.0L;
        const double expect =
            std::clamp(static_cast<double>(oracle_nmi_arith(table)), 0.0, 1.0);
        CHECK(std::fabs(nmi(assign, labels) - expect) < 1e-12);
        CHECK(std::fabs(nmi(assign, labels) - nmi(labels, assign)) < 1e-12);
        CHECK(nmi(assign, labels) >= 0.0);
        CHECK(nmi(assign, labels) <= 1.0);
    }
}

TEST_CASE("nmi single-cluster conventions and errors") {
    std::vector<std::size_t> ones(5, 0);
    CHECK(nmi(ones, ones) == 1.0);
    CHECK_THROWS_AS(nmi({0, 1}, {0, 1, 2}), LengthMismatchError);
}

TEST_CASE("nmi geometric normalization differs on skewed tables") {
    std::vector<std::size_t> assign{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    std::vector<std::size_t> labels{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    const double arith = nmi(assign, labels, NmiNorm::kArithmetic);
    const double geom = nmi(assign, labels, NmiNorm::kGeometric);
    CHECK(arith != geom);
    CHECK(geom >= arith);  // geometric mean of entropies <= arithmetic mean
}

TEST_CASE("evaluate bundles float and binary reports") {
    SeededRng rng(45);
    EmbeddingSet set;
    set.embeddings = Matrix(8, 8);
    set.labels.resize(8);
    for (std::size_t c = 0; c < 4; ++c) {
        set.embeddings.at(2 * c, c) = 1.0;
        set.embeddings.at(2 * c + 1, c) = 1.0;
        set.labels[2 * c] = c;
        set.labels[2 * c + 1] = c;
    }
    auto out = evaluate(set, {1, 3}, true, 4, rng);
    CHECK(out.float_report.recall_at.at(1) == 1.0);
    CHECK(out.float_report.nmi == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(out.binary_report.has_value());
    CHECK(out.binary_report->mode == EvalMode::kBinary);
    CHECK(out.binary_report->recall_at.at(1) >= 0.0);

    SeededRng rng2(46);
    auto no_bin = evaluate(set, {1}, false, 4, rng2);
    CHECK_FALSE(no_bin.binary_report.has_value());
}

TEST_CASE("evaluate sits at chance level for random labels") {
    double total = 0.0;
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        SeededRng rng(100 + s);
        auto set = random_unit_set(rng, 500, 16, 10);
        total += recall_at_k(set, {1}).at(1);
    }
    CHECK(total / seeds == doctest::Approx(0.1).epsilon(0.5));  // 0.1 +- 0.05
}
