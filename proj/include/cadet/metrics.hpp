#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "cadet/cadet.hpp"
#include "cadet/embeddings_io.hpp"
#include "cadet/mmd.hpp"

namespace cadet::metrics {

enum class Direction { higher_is_anomalous, lower_is_anomalous };

Direction parse_direction(const std::string& s);

/// Points run from (0, 0) to (1, 1); one point per distinct threshold.
struct RocCurve {
    std::vector<double> thresholds;
    std::vector<double> tpr;
    std::vector<double> fpr;
    double auroc = 0.5;
};

/// AUROC as the normalized Mann-Whitney U statistic with ties counted 0.5,
/// positives being the anomalies. The curve is built for reporting.
RocCurve auroc(std::span<const double> scores_negative, std::span<const double> scores_positive,
               Direction direction = Direction::higher_is_anomalous);

/// Trapezoidal area under a curve's (fpr, tpr) points.
double trapezoid_area(const RocCurve& curve);

/// Draws an EmbeddingSet of n rows from a distribution, keyed by seed.
using Sampler = std::function<EmbeddingSet(std::uint64_t seed, std::size_t n)>;

struct TrialRecord {
    std::uint64_t seed = 0;
    double est = 0.0;
    double p_value = 1.0;
};

struct HarnessReport {
    double rate = 0.0;
    std::vector<TrialRecord> trials;
};

struct HarnessConfig {
    std::size_t n = 50;
    std::size_t n_trials = 100;
    std::size_t n_perm = 500;
    double alpha = 0.05;
    mmd::Variant variant = mmd::Variant::mmd;
    std::uint64_t seed = 0;
    kernels::KernelConfig kernel{};
};

/// Runs n_trials independent two-sample tests and reports the fraction with
/// p < alpha. Trial t draws every set and its permutations from its own
/// seed substream, so each trial is reproducible on its own.
HarnessReport rejection_rate_harness(const Sampler& source_p, const Sampler& source_q, const HarnessConfig& config);

/// One JSON object per line: {"trial", "seed", "est", "p_value"}.
void write_trials_jsonl(std::ostream& out, const HarnessReport& report);

/// Fixed inputs for a CADet sweep: an encoder, the evaluation transform and
/// raw validation / test inputs.
struct DetectorSetup {
    detector::Encoder encoder;
    detector::ViewTransform transform;
    Matrix x_val1;
    Matrix x_val2;
    std::uint64_t seed = 0;
    detector::IntraNorm norm = detector::IntraNorm::pair_count;
    unsigned threads = 0;
};

struct Benchmark {
    Matrix in_test;
    Matrix out_test;
};

struct SweepRow {
    std::size_t n_trs = 0;
    double auroc = 0.5;
};

/// Calibrates and tests CADet once per n_trs with shared seeds and reports
/// the in-vs-out AUROC (lower p-value is anomalous).
std::vector<SweepRow> ntrs_sweep(const DetectorSetup& setup, std::span<const std::size_t> n_trs_values,
                                 const Benchmark& benchmark);

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and
/// Uniform(0, 1).
double ks_uniform_distance(std::vector<double> values);

}  // namespace cadet::metrics
