#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cadet/embeddings_io.hpp"
#include "cadet/kernels.hpp"

namespace cadet::mmd {

using kernels::KernelConfig;

struct TwoSampleResult {
    double est = 0.0;
    std::vector<double> perm_estimates;
    double p_value = 1.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;

    std::size_t n_perm() const { return perm_estimates.size(); }
};

/// Unbiased MMD^2 under the cosine kernel; pairs (i, j) with i == j are
/// excluded from all four sums, cross terms included.
double mmd2_unbiased(const EmbeddingSet& sp, const EmbeddingSet& sq, const KernelConfig& kernel = {});

/// Same estimator evaluated on a precomputed Gram matrix over a pooled set:
/// X_i = pooled[x[i]], Y_i = pooled[y[i]].
double mmd2_from_gram(const Matrix& gram, std::span<const std::size_t> x, std::span<const std::size_t> y);

/// (1 + #{p_i >= est}) / (n_perm + 1). Never zero.
double corrected_p_value(double est, std::span<const double> perm_estimates);

/// Standard permutation test: the null is drawn from equal random splits of
/// S_P u S_Q.
TwoSampleResult permutation_test(const EmbeddingSet& sp, const EmbeddingSet& sq, std::size_t n_perm,
                                 std::uint64_t seed, const KernelConfig& kernel = {});

/// Clean-calibration variant: est compares S_P1 with S_Q, the null is drawn
/// from equal random splits of S_P1 u S_P2. Callers must supply disjoint
/// S_P1 and S_P2 (not checked).
TwoSampleResult mmd_cc_test(const EmbeddingSet& sp1, const EmbeddingSet& sp2, const EmbeddingSet& sq,
                            std::size_t n_perm, std::uint64_t seed, const KernelConfig& kernel = {});

enum class Variant { mmd, mmd_cc };

/// How the reference set for each scored group is drawn.
enum class ReferenceProtocol {
    fresh,  // a new S_P1 from the pool for every scored group
    fixed,  // one S_P1 drawn once and shared by all groups
};

struct FewShotConfig {
    std::size_t n_samples = 20;
    std::size_t n_null = 5000;
    Variant variant = Variant::mmd_cc;
    ReferenceProtocol reference = ReferenceProtocol::fresh;
    /// Permutations per scored group for the plain MMD variant.
    std::size_t n_perm = 100;
    std::uint64_t seed = 0;
    KernelConfig kernel{};
};

struct FewShotDetectionReport {
    std::vector<double> null_estimates;
    std::vector<double> in_estimates;
    std::vector<double> out_estimates;
    std::vector<double> in_p_values;
    std::vector<double> out_p_values;
    double auroc = 0.5;
    std::size_t n_samples = 0;
    std::size_t n_null = 0;
};

/// Group-level detection. The null bank holds n_null estimates between
/// pairs of disjoint sets drawn from pool_in. Each scored group gets an
/// estimate against a reference draw and a p-value: against the null bank
/// for mmd_cc, from a per-group permutation test for mmd. AUROC treats
/// out-groups as positives with lower p-values more anomalous.
FewShotDetectionReport few_shot_detection(const EmbeddingSet& pool_in, const std::vector<EmbeddingSet>& groups_in,
                                          const std::vector<EmbeddingSet>& groups_out, const FewShotConfig& config);

void write_report(std::ostream& out, const TwoSampleResult& r);
void write_perm_estimates(std::ostream& out, const TwoSampleResult& r);

}  // namespace cadet::mmd
