#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "cadet/errors.hpp"
#include "cadet/metrics.hpp"
#include "cadet/mmd.hpp"
#include "oracles.hpp"

using namespace cadet;
using namespace cadet::mmd;

namespace {

EmbeddingSet gaussian_set(std::size_t n, std::size_t d, std::uint64_t seed, double shift = 0.0) {
    // Offset the mean so that cosine geometry is informative.
    Matrix m = oracle::gaussian(n, d, seed, shift);
    m.col(1).array() += 3.0;
    return EmbeddingSet::from_double(m);
}

}  // namespace

TEST_SUITE("mmd") {

TEST_CASE("identical sets give zero") {
    const auto s = gaussian_set(12, 5, 1);
    CHECK(std::abs(mmd2_unbiased(s, s)) < 1e-12);
}

TEST_CASE("estimator matches the double-loop oracle") {
    for (int t = 0; t < 40; ++t) {
        const std::size_t n = 2 + t % 20, d = 1 + (t * 7) % 30;
        const auto p = gaussian_set(n, d, 1000 + t), q = gaussian_set(n, d, 2000 + t, 0.5);
        const double est = mmd2_unbiased(p, q);
        CHECK(oracle::rel_err(est, oracle::mmd2(oracle::rows_of(p), oracle::rows_of(q))) < 1e-12);
        CHECK(est == doctest::Approx(mmd2_unbiased(q, p)).epsilon(1e-14));
    }
}

TEST_CASE("six samples in dim four") {
    const auto p = gaussian_set(6, 4, 5), q = gaussian_set(6, 4, 6);
    CHECK(std::abs(mmd2_unbiased(p, q) - oracle::mmd2(oracle::rows_of(p), oracle::rows_of(q))) < 1e-12);
}

TEST_CASE("estimator preconditions") {
    const auto a = gaussian_set(5, 3, 1);
    CHECK_THROWS_AS(mmd2_unbiased(a, gaussian_set(4, 3, 2)), ShapeError);
    CHECK_THROWS_AS(mmd2_unbiased(a, gaussian_set(5, 4, 2)), ShapeError);
    CHECK_THROWS_AS(mmd2_unbiased(gaussian_set(1, 3, 1), gaussian_set(1, 3, 2)), InsufficientSamplesError);
    CHECK_THROWS_AS(mmd2_unbiased(a, EmbeddingSet(MatrixF::Zero(5, 3))), DegenerateInputError);
}

TEST_CASE("corrected p-value bounds") {
    const std::vector<double> perms{0.1, 0.2, 0.3};
    CHECK(corrected_p_value(0.0, perms) == 1.0);
    CHECK(corrected_p_value(1.0, perms) == 0.25);
    CHECK(corrected_p_value(0.2, perms) == 0.75);
}

TEST_CASE("every permutation estimate is the estimator on some equal split") {
    // n = 3: the cross terms skip i == j, so the value depends on the order
    // within each half. Enumerate all 6! arrangements with the oracle.
    const auto p = gaussian_set(3, 3, 10), q = gaussian_set(3, 3, 11, 1.0);
    auto pooled = oracle::rows_of(p);
    for (const auto& r : oracle::rows_of(q)) pooled.push_back(r);
    std::vector<double> split_values;
    std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
    do {
        const oracle::Rows x{pooled[order[0]], pooled[order[1]], pooled[order[2]]};
        const oracle::Rows y{pooled[order[3]], pooled[order[4]], pooled[order[5]]};
        split_values.push_back(oracle::mmd2(x, y));
    } while (std::next_permutation(order.begin(), order.end()));
    const auto r = permutation_test(p, q, 200, 99);
    CHECK(r.n_perm() == 200);
    CHECK(r.n == 3);
    CHECK(r.est == mmd2_unbiased(p, q));
    CHECK(r.p_value == corrected_p_value(r.est, r.perm_estimates));
    std::set<std::size_t> seen;
    for (double e : r.perm_estimates) {
        std::size_t hit = split_values.size();
        for (std::size_t k = 0; k < split_values.size(); ++k)
            if (std::abs(split_values[k] - e) < 1e-12) hit = k;
        CHECK(hit < split_values.size());
        seen.insert(hit);
    }
    CHECK(seen.size() >= 20);
}

TEST_CASE("same seed reproduces the test bitwise") {
    const auto p = gaussian_set(8, 3, 10), q = gaussian_set(8, 3, 11, 1.0);
    const auto r = permutation_test(p, q, 50, 99);
    const auto again = permutation_test(p, q, 50, 99);
    CHECK(again.perm_estimates == r.perm_estimates);
    CHECK(again.p_value == r.p_value);
    CHECK(permutation_test(p, q, 50, 100).perm_estimates != r.perm_estimates);
}

TEST_CASE("strong shift reaches the minimum p-value") {
    const auto p = gaussian_set(50, 8, 20), q = gaussian_set(50, 8, 21, 10.0);
    CHECK(permutation_test(p, q, 100, 3).p_value == doctest::Approx(1.0 / 101));
    const auto p2 = gaussian_set(50, 8, 22);
    const auto cc = mmd_cc_test(p, p2, q, 100, 3);
    CHECK(cc.p_value == doctest::Approx(1.0 / 101));
    CHECK(cc.est == mmd2_unbiased(p, q));
}

TEST_CASE("p-value is never zero and equals one when est is below every permutation") {
    const auto p = gaussian_set(10, 4, 30);
    const auto r = permutation_test(p, p, 30, 4);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);
    const double below = *std::min_element(r.perm_estimates.begin(), r.perm_estimates.end()) - 1.0;
    CHECK(corrected_p_value(below, r.perm_estimates) == 1.0);
}

TEST_CASE("mmd-cc null uses only the clean pool") {
    // Replacing S_Q changes est but not the null sample.
    const auto p1 = gaussian_set(10, 4, 40), p2 = gaussian_set(10, 4, 41);
    const auto a = mmd_cc_test(p1, p2, gaussian_set(10, 4, 42), 40, 8);
    const auto b = mmd_cc_test(p1, p2, gaussian_set(10, 4, 43, 5.0), 40, 8);
    CHECK(a.perm_estimates == b.perm_estimates);
    CHECK(a.est != b.est);
    CHECK_THROWS_AS(mmd_cc_test(p1, gaussian_set(9, 4, 41), p1, 10, 1), ShapeError);
    CHECK_THROWS_AS(permutation_test(p1, p2, 0, 1), Error);
}

TEST_CASE("results do not depend on the thread count") {
    const auto p = gaussian_set(30, 6, 50), q = gaussian_set(30, 6, 51, 0.3);
    const auto a = permutation_test(p, q, 64, 5, {64, 1});
    const auto b = permutation_test(p, q, 64, 5, {64, 3});
    CHECK(a.perm_estimates == b.perm_estimates);
    const auto c = mmd_cc_test(p, q, p, 64, 5, {64, 1});
    const auto d = mmd_cc_test(p, q, p, 64, 5, {64, 4});
    CHECK(c.perm_estimates == d.perm_estimates);
}

TEST_CASE("null p-values are roughly uniform") {
    std::vector<double> pv;
    for (std::uint64_t t = 0; t < 200; ++t) {
        const auto p = gaussian_set(20, 4, 10000 + 2 * t), q = gaussian_set(20, 4, 10001 + 2 * t);
        pv.push_back(permutation_test(p, q, 99, t).p_value);
    }
    CHECK(metrics::ks_uniform_distance(pv) <= 0.1);
}

TEST_CASE("report lines") {
    TwoSampleResult r;
    r.est = 0.5;
    r.p_value = 0.25;
    r.perm_estimates = {0.1, 0.2, 0.3};
    r.n = 4;
    r.seed = 9;
    std::ostringstream out;
    write_report(out, r);
    CHECK(out.str().find("p_value=0.25") != std::string::npos);
    CHECK(out.str().find("n_perm=3") != std::string::npos);
    std::ostringstream perms;
    write_perm_estimates(perms, r);
    const auto text = perms.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("few-shot detection") {
    auto pool_rows = [](std::uint64_t seed, std::size_t n, double shift) { return gaussian_set(n, 6, seed, shift); };
    const auto pool = pool_rows(1, 400, 0.0);
    std::vector<EmbeddingSet> in, out, same;
    for (std::uint64_t g = 0; g < 40; ++g) {
        in.push_back(pool_rows(100 + g, 20, 0.0));
        out.push_back(pool_rows(200 + g, 20, 10.0));
        same.push_back(pool_rows(300 + g, 20, 0.0));
    }
    FewShotConfig cfg;
    cfg.n_null = 300;
    cfg.seed = 4;
    SUBCASE("strong shift separates groups") {
        const auto r = few_shot_detection(pool, in, out, cfg);
        CHECK(r.null_estimates.size() == 300);
        CHECK(r.in_p_values.size() == 40);
        CHECK(r.auroc >= 0.99);
    }
    SUBCASE("same source gives no signal") {
        std::vector<EmbeddingSet> in100, same100;
        for (std::uint64_t g = 0; g < 100; ++g) {
            in100.push_back(pool_rows(1000 + g, 20, 0.0));
            same100.push_back(pool_rows(2000 + g, 20, 0.0));
        }
        const auto r = few_shot_detection(pool, in100, same100, cfg);
        CHECK(r.auroc >= 0.4);
        CHECK(r.auroc <= 0.6);
    }
    SUBCASE("larger groups detect a moderate shift better") {
        auto groups = [&](std::size_t n, std::uint64_t base, double shift) {
            std::vector<EmbeddingSet> g;
            for (std::uint64_t k = 0; k < 100; ++k) g.push_back(pool_rows(base + k, n, shift));
            return g;
        };
        double a[2];
        int i = 0;
        for (std::size_t n : {3, 20}) {
            cfg.n_samples = n;
            a[i++] = few_shot_detection(pool, groups(n, 5000, 0.0), groups(n, 6000, 1.0), cfg).auroc;
        }
        CHECK(a[0] < a[1]);
    }
    SUBCASE("plain mmd variant with fixed reference") {
        cfg.variant = Variant::mmd;
        cfg.reference = ReferenceProtocol::fixed;
        cfg.n_perm = 50;
        const auto r = few_shot_detection(pool, in, out, cfg);
        CHECK(r.auroc >= 0.99);
    }
    SUBCASE("deterministic") {
        const auto a = few_shot_detection(pool, in, out, cfg);
        const auto b = few_shot_detection(pool, in, out, cfg);
        CHECK(a.in_p_values == b.in_p_values);
        CHECK(a.null_estimates == b.null_estimates);
    }
    SUBCASE("errors") {
        std::vector<EmbeddingSet> wrong{pool_rows(5, 19, 0.0)};
        CHECK_THROWS_AS(few_shot_detection(pool, wrong, out, cfg), Error);
        CHECK_THROWS_AS(few_shot_detection(pool_rows(1, 30, 0.0), in, out, cfg), InsufficientSamplesError);
    }
}

}
