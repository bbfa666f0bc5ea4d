#include "cadet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "cadet/errors.hpp"
#include "cadet/parallel.hpp"
#include "cadet/rng.hpp"

namespace cadet::metrics {

Direction parse_direction(const std::string& s) {
    if (s == "higher" || s == "higher_is_anomalous") return Direction::higher_is_anomalous;
    if (s == "lower" || s == "lower_is_anomalous") return Direction::lower_is_anomalous;
    throw ConfigError("unknown direction '" + s + "' (expected higher or lower)");
}

RocCurve auroc(std::span<const double> scores_negative, std::span<const double> scores_positive, Direction direction) {
    if (scores_negative.empty() || scores_positive.empty()) {
        throw InsufficientSamplesError("AUROC needs at least one negative and one positive score");
    }
    const double sign = direction == Direction::higher_is_anomalous ? 1.0 : -1.0;
    struct Item {
        double s;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(scores_negative.size() + scores_positive.size());
    for (double s : scores_negative) items.push_back({sign * s, false});
    for (double s : scores_positive) items.push_back({sign * s, true});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.s < b.s; });

    const auto n_neg = static_cast<double>(scores_negative.size());
    const auto n_pos = static_cast<double>(scores_positive.size());

    // Mann-Whitney: sum of midranks of the positives (ranks start at 1).
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        std::size_t pos_in_tie = 0;
        while (j < items.size() && items[j].s == items[i].s) pos_in_tie += items[j++].positive ? 1 : 0;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        pos_rank_sum += midrank * static_cast<double>(pos_in_tie);
        i = j;
    }

    RocCurve c;
    c.auroc = (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    // Sweep thresholds from most to least anomalous.
    c.thresholds.push_back(std::numeric_limits<double>::infinity());
    c.tpr.push_back(0.0);
    c.fpr.push_back(0.0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = items.size(); i > 0;) {
        std::size_t j = i;
        const double s = items[i - 1].s;
        while (j > 0 && items[j - 1].s == s) {
            (items[j - 1].positive ? tp : fp) += 1;
            --j;
        }
        c.thresholds.push_back(sign * s);
        c.tpr.push_back(static_cast<double>(tp) / n_pos);
        c.fpr.push_back(static_cast<double>(fp) / n_neg);
        i = j;
    }
    return c;
}

double trapezoid_area(const RocCurve& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.fpr.size(); ++i) {
        area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0;
    }
    return area;
}

HarnessReport rejection_rate_harness(const Sampler& source_p, const Sampler& source_q, const HarnessConfig& config) {
    if (config.n_trials < 1) throw ConfigError("n_trials must be >= 1");
    if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");

    HarnessReport rep;
    rep.trials.resize(config.n_trials);
    kernels::KernelConfig inner = config.kernel;
    inner.threads = 1;
    parallel_for(config.n_trials, config.kernel.threads, [&](std::size_t t) {
        const std::uint64_t trial_seed = derive_seed(config.seed, {t});
        const auto sp = source_p(derive_seed(trial_seed, {1}), config.n);
        const auto sq = source_q(derive_seed(trial_seed, {2}), config.n);
        const std::uint64_t perm_seed = derive_seed(trial_seed, {4});
        mmd::TwoSampleResult r;
        if (config.variant == mmd::Variant::mmd_cc) {
            const auto sp2 = source_p(derive_seed(trial_seed, {3}), config.n);
            r = mmd::mmd_cc_test(sp, sp2, sq, config.n_perm, perm_seed, inner);
        } else {
            r = mmd::permutation_test(sp, sq, config.n_perm, perm_seed, inner);
        }
        rep.trials[t] = {trial_seed, r.est, r.p_value};
    });
    const auto rejected = std::count_if(rep.trials.begin(), rep.trials.end(),
                                        [&](const TrialRecord& r) { return r.p_value < config.alpha; });
    rep.rate = static_cast<double>(rejected) / static_cast<double>(config.n_trials);
    return rep;
}

void write_trials_jsonl(std::ostream& out, const HarnessReport& report) {
    for (std::size_t t = 0; t < report.trials.size(); ++t) {
        const auto& r = report.trials[t];
        nlohmann::json j{{"trial", t}, {"seed", r.seed}, {"est", r.est}, {"p_value", r.p_value}};
        out << j.dump() << '\n';
    }
}

std::vector<SweepRow> ntrs_sweep(const DetectorSetup& setup, std::span<const std::size_t> n_trs_values,
                                 const Benchmark& benchmark) {
    std::vector<SweepRow> rows;
    for (const auto n_trs : n_trs_values) {
        if (n_trs < 2) throw ConfigError("n_trs values must be >= 2");
        const auto calib = detector::calibrate(setup.x_val1, setup.x_val2, setup.encoder, setup.transform, n_trs,
                                               setup.seed, setup.norm, setup.threads);
        const auto in = detector::test_samples(benchmark.in_test, calib, setup.encoder, setup.transform,
                                               derive_seed(setup.seed, {0x494eULL}), setup.threads);
        const auto out = detector::test_samples(benchmark.out_test, calib, setup.encoder, setup.transform,
                                                derive_seed(setup.seed, {0x4f5554ULL}), setup.threads);
        std::vector<double> p_in, p_out;
        for (const auto& r : in) p_in.push_back(r.p_value);
        for (const auto& r : out) p_out.push_back(r.p_value);
        rows.push_back({n_trs, auroc(p_in, p_out, Direction::lower_is_anomalous).auroc});
    }
    return rows;
}

double ks_uniform_distance(std::vector<double> values) {
    if (values.empty()) throw InsufficientSamplesError("KS distance of an empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    double d = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = std::clamp(values[i], 0.0, 1.0);
        d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
    }
    return d;
}

}  // namespace cadet::metrics
