#include "cadet/mmd.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>

#include "cadet/errors.hpp"
#include "cadet/metrics.hpp"
#include "cadet/parallel.hpp"
#include "cadet/rng.hpp"

namespace cadet::mmd {

namespace {

void check_pair(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.count() != b.count()) {
        throw ShapeError("two-sample sets must have equal size (" + std::to_string(a.count()) + " vs " +
                         std::to_string(b.count()) + ")");
    }
    if (a.dim() != b.dim()) {
        throw ShapeError("two-sample sets must have equal dim (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
    }
    if (a.count() < 2) throw InsufficientSamplesError("MMD estimator needs n >= 2 samples per set");
}

/// Normalized rows of the given sets stacked in order.
Matrix pooled_unit_rows(std::initializer_list<const EmbeddingSet*> sets) {
    Eigen::Index rows = 0;
    for (const auto* s : sets) rows += static_cast<Eigen::Index>(s->count());
    Matrix out(rows, static_cast<Eigen::Index>((*sets.begin())->dim()));
    Eigen::Index at = 0;
    for (const auto* s : sets) {
        out.middleRows(at, static_cast<Eigen::Index>(s->count())) = kernels::normalized_rows(*s);
        at += static_cast<Eigen::Index>(s->count());
    }
    return out;
}

std::vector<std::size_t> iota_indices(std::size_t first, std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), first);
    return v;
}

/// Pre-draws all split index vectors serially, then evaluates them in
/// parallel; the result is independent of the worker count.
std::vector<double> permutation_estimates(const Matrix& gram, std::size_t pool_first, std::size_t n,
                                          std::size_t n_perm, std::uint64_t seed, unsigned threads) {
    auto rng = make_rng(seed, {0x5045524dULL});  // "PERM"
    std::vector<std::size_t> order = iota_indices(pool_first, 2 * n);
    std::vector<std::vector<std::size_t>> splits(n_perm);
    for (auto& s : splits) {
        std::shuffle(order.begin(), order.end(), rng);
        s = order;
    }
    std::vector<double> out(n_perm);
    parallel_for(n_perm, threads, [&](std::size_t i) {
        const std::span<const std::size_t> all(splits[i]);
        out[i] = mmd2_from_gram(gram, all.first(n), all.subspan(n, n));
    });
    return out;
}

}  // namespace

double mmd2_from_gram(const Matrix& gram, std::span<const std::size_t> x, std::span<const std::size_t> y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw ShapeError("mmd2_from_gram: index sets differ in size");
    if (n < 2) throw InsufficientSamplesError("MMD estimator needs n >= 2 samples per set");
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = static_cast<Eigen::Index>(x[i]);
        const auto yi = static_cast<Eigen::Index>(y[i]);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto xj = static_cast<Eigen::Index>(x[j]);
            const auto yj = static_cast<Eigen::Index>(y[j]);
            sxx += gram(xi, xj);
            syy += gram(yi, yj);
            sxy += gram(xi, yj);
        }
    }
    // With a symmetric kernel sum_{i!=j} k(Y_i, X_j) equals sxy.
    return (sxx + syy - 2.0 * sxy) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double mmd2_unbiased(const EmbeddingSet& sp, const EmbeddingSet& sq, const KernelConfig& kernel) {
    check_pair(sp, sq);
    const Matrix u = pooled_unit_rows({&sp, &sq});
    const Matrix gram = kernels::gram_of_normalized(u, u, kernel);
    const auto n = sp.count();
    const auto x = iota_indices(0, n);
    const auto y = iota_indices(n, n);
    return mmd2_from_gram(gram, x, y);
}

double corrected_p_value(double est, std::span<const double> perm_estimates) {
    const auto hits = std::count_if(perm_estimates.begin(), perm_estimates.end(), [est](double p) { return p >= est; });
    return (1.0 + static_cast<double>(hits)) / (static_cast<double>(perm_estimates.size()) + 1.0);
}

TwoSampleResult permutation_test(const EmbeddingSet& sp, const EmbeddingSet& sq, std::size_t n_perm,
                                 std::uint64_t seed, const KernelConfig& kernel) {
    check_pair(sp, sq);
    if (n_perm < 1) throw ConfigError("n_perm must be >= 1");
    const std::size_t n = sp.count();
    const Matrix u = pooled_unit_rows({&sp, &sq});
    const Matrix gram = kernels::gram_of_normalized(u, u, kernel);

    TwoSampleResult r;
    r.n = n;
    r.seed = seed;
    const auto x = iota_indices(0, n);
    const auto y = iota_indices(n, n);
    r.est = mmd2_from_gram(gram, x, y);
    r.perm_estimates = permutation_estimates(gram, 0, n, n_perm, seed, kernel.threads);
    r.p_value = corrected_p_value(r.est, r.perm_estimates);
    return r;
}

TwoSampleResult mmd_cc_test(const EmbeddingSet& sp1, const EmbeddingSet& sp2, const EmbeddingSet& sq,
                            std::size_t n_perm, std::uint64_t seed, const KernelConfig& kernel) {
    check_pair(sp1, sq);
    check_pair(sp1, sp2);
    if (n_perm < 1) throw ConfigError("n_perm must be >= 1");
    const std::size_t n = sp1.count();
    // Pool layout: [S_P1 | S_Q | S_P2]; est uses the first two blocks, the
    // null splits index into S_P1 u S_P2.
    const Matrix u = pooled_unit_rows({&sp1, &sq, &sp2});
    const Matrix gram = kernels::gram_of_normalized(u, u, kernel);

    TwoSampleResult r;
    r.n = n;
    r.seed = seed;
    const auto x = iota_indices(0, n);
    const auto y = iota_indices(n, n);
    r.est = mmd2_from_gram(gram, x, y);

    // Reorder so S_P1 u S_P2 is contiguous for the shared split routine.
    Matrix clean(2 * n, 2 * n);
    std::vector<Eigen::Index> map(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = static_cast<Eigen::Index>(i);
        map[n + i] = static_cast<Eigen::Index>(2 * n + i);
    }
    for (std::size_t i = 0; i < 2 * n; ++i)
        for (std::size_t j = 0; j < 2 * n; ++j) clean(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gram(map[i], map[j]);

    r.perm_estimates = permutation_estimates(clean, 0, n, n_perm, seed, kernel.threads);
    r.p_value = corrected_p_value(r.est, r.perm_estimates);
    return r;
}

FewShotDetectionReport few_shot_detection(const EmbeddingSet& pool_in, const std::vector<EmbeddingSet>& groups_in,
                                          const std::vector<EmbeddingSet>& groups_out, const FewShotConfig& config) {
    const std::size_t n = config.n_samples;
    if (n < 2) throw InsufficientSamplesError("few-shot groups need n_samples >= 2");
    if (pool_in.count() < 2 * n) {
        throw InsufficientSamplesError("pool of " + std::to_string(pool_in.count()) +
                                       " rows cannot supply two disjoint sets of " + std::to_string(n));
    }
    if (config.n_null < 1) throw ConfigError("n_null must be >= 1");
    if (groups_in.empty() || groups_out.empty()) throw InsufficientSamplesError("need in- and out-groups to score");
    for (const auto* groups : {&groups_in, &groups_out}) {
        for (const auto& g : *groups) {
            if (g.count() != n) throw ShapeError("every scored group must have n_samples rows");
            if (g.dim() != pool_in.dim()) throw ShapeError("group dim differs from pool dim");
        }
    }

    auto rng = make_rng(config.seed, {0x46455753ULL});  // "FEWS"
    std::vector<std::size_t> order(pool_in.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first k entries become a uniform draw
    // without replacement.
    auto draw = [&](std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        return std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    };

    FewShotDetectionReport rep;
    rep.n_samples = n;
    rep.n_null = config.n_null;
    rep.null_estimates.reserve(config.n_null);
    for (std::size_t t = 0; t < config.n_null; ++t) {
        const auto idx = draw(2 * n);
        const auto sp1 = pool_in.select({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n)});
        const auto sp2 = pool_in.select({idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end()});
        rep.null_estimates.push_back(mmd2_unbiased(sp1, sp2, config.kernel));
    }

    std::optional<EmbeddingSet> fixed_ref;
    if (config.reference == ReferenceProtocol::fixed) fixed_ref.emplace(pool_in.select(draw(n)));

    std::uint64_t group_counter = 0;
    auto score = [&](const EmbeddingSet& g, std::vector<double>& ests, std::vector<double>& ps) {
        const EmbeddingSet ref = fixed_ref ? *fixed_ref : pool_in.select(draw(n));
        const std::uint64_t group_seed = derive_seed(config.seed, {0x47525550ULL, group_counter++});
        if (config.variant == Variant::mmd_cc) {
            const double est = mmd2_unbiased(ref, g, config.kernel);
            ests.push_back(est);
            ps.push_back(corrected_p_value(est, rep.null_estimates));
        } else {
            const auto r = permutation_test(ref, g, config.n_perm, group_seed, config.kernel);
            ests.push_back(r.est);
            ps.push_back(r.p_value);
        }
    };
    for (const auto& g : groups_in) score(g, rep.in_estimates, rep.in_p_values);
    for (const auto& g : groups_out) score(g, rep.out_estimates, rep.out_p_values);

    rep.auroc = metrics::auroc(rep.in_p_values, rep.out_p_values, metrics::Direction::lower_is_anomalous).auroc;
    return rep;
}

void write_report(std::ostream& out, const TwoSampleResult& r) {
    const auto old = out.precision(17);
    out << "est=" << r.est << '\n'
        << "p_value=" << r.p_value << '\n'
        << "n_perm=" << r.n_perm() << '\n'
        << "n=" << r.n << '\n'
        << "seed=" << r.seed << '\n';
    out.precision(old);
}

void write_perm_estimates(std::ostream& out, const TwoSampleResult& r) {
    const auto old = out.precision(17);
    for (double p : r.perm_estimates) out << p << '\n';
    out.precision(old);
}

}  // namespace cadet::mmd
