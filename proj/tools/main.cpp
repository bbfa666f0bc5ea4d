// cadet: command-line front end for the toolkit.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadet/augment.hpp"
#include "cadet/cadet.hpp"
#include "cadet/contrastive.hpp"
#include "cadet/embeddings_io.hpp"
#include "cadet/errors.hpp"
#include "cadet/metrics.hpp"
#include "cadet/mmd.hpp"
#include "cadet/synthetic.hpp"
#include "cadet/version.hpp"
#include "manifest.hpp"

using namespace cadet;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageExit = 2;
constexpr int kValidationExit = 1;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Shared state of one invocation.
struct Run {
    cli::RunManifest manifest;
    std::string manifest_path;

    EmbeddingSet load(const std::string& path) {
        manifest.inputs.push_back(path);
        return load_embeddings(path, format_from_extension(path));
    }
    void input(const std::string& path) { manifest.inputs.push_back(path); }
    void output(const std::string& path) { manifest.outputs.push_back(path); }
};

std::ofstream open_out(const std::string& path, Run& run) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    run.output(path);
    return f;
}

void add_common(CLI::App* sub, std::uint64_t& seed, std::string& manifest) {
    sub->add_option("--seed", seed, "Master seed for all randomness")->required();
    sub->add_option("--manifest", manifest, "Where to write the run manifest")
        ->default_str("cadet-" + sub->get_name() + ".manifest.json");
}

void add_augmentation(CLI::App* sub, synthetic::AugmentationSpec& a) {
    a = {0.0, 0.5, 1.5, 0.5, 0.0};
    sub->add_option("--aug-noise", a.noise_sigma, "Additive Gaussian noise sigma")->capture_default_str();
    sub->add_option("--aug-scale-lo", a.scale_lo, "Lower bound of the random scale")->capture_default_str();
    sub->add_option("--aug-scale-hi", a.scale_hi, "Upper bound of the random scale")->capture_default_str();
    sub->add_option("--aug-dropout", a.dropout_prob, "Per-coordinate dropout probability")->capture_default_str();
    sub->add_option("--aug-rotation", a.rotation_angle_max, "Max plane rotation angle (radians)")->capture_default_str();
}

detector::Encoder model_encoder(const std::string& path, Run& run) {
    run.input(path);
    return contrastive::feature_encoder(contrastive::load_model(path));
}

/// Transformation distribution stored in a calibration.
detector::ViewTransform transform_of(const detector::CadetCalibration& calib) {
    if (calib.transform_spec == "{}" || calib.transform_spec.empty())
        throw ConfigError("calibration was built from pre-embedded banks; raw inputs need a transform");
    return synthetic::make_view_transform(synthetic::AugmentationSpec::from_json(calib.transform_spec));
}

std::vector<EmbeddingSet> split_groups(const EmbeddingSet& s, std::size_t n) {
    if (n == 0 || s.count() < n)
        throw InsufficientSamplesError("group file has " + std::to_string(s.count()) + " rows, need >= " +
                                       std::to_string(n));
    std::vector<EmbeddingSet> out;
    for (std::size_t g = 0; g + n <= s.count(); g += n) out.push_back(s.slice(g, n));
    return out;
}

/// Numbers, one per line. Lines of key=value tokens (as printed by the test
/// commands) contribute the value of `field`.
std::vector<double> read_scores(const std::string& path, const std::string& field, Run& run) {
    run.input(path);
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string text = line;
        if (line.find('=') != std::string::npos) {
            std::istringstream tokens(line);
            std::string tok;
            text.clear();
            while (tokens >> tok)
                if (tok.rfind(field + "=", 0) == 0) text = tok.substr(field.size() + 1);
            if (text.empty()) throw FormatError(path + ":" + std::to_string(lineno) + ": no field '" + field + "'");
        }
        try {
            std::size_t used = 0;
            out.push_back(std::stod(text, &used));
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": not a number");
        }
    }
    if (out.empty()) throw InsufficientSamplesError(path + " holds no scores");
    return out;
}

mmd::Variant parse_variant(const std::string& s) {
    if (s == "mmd") return mmd::Variant::mmd;
    if (s == "mmd-cc") return mmd::Variant::mmd_cc;
    throw ConfigError("unknown variant '" + s + "' (mmd | mmd-cc)");
}

mmd::ReferenceProtocol parse_reference(const std::string& s) {
    if (s == "fresh") return mmd::ReferenceProtocol::fresh;
    if (s == "fixed") return mmd::ReferenceProtocol::fixed;
    throw ConfigError("unknown reference protocol '" + s + "' (fresh | fixed)");
}

std::pair<std::string, std::string> named_path(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
        throw ConfigError("expected name=path, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

/// Options of every subcommand; only the selected one is read.
struct Options {
    std::uint64_t seed = 0;
    std::string manifest;

    // gen-synthetic
    std::size_t n = 0;
    synthetic::SyntheticSpec spec{5, 16, 10.0, 1.0, 0, 0.0, 0, 0.0};
    std::uint64_t stream = 0;
    std::optional<std::size_t> cluster;
    double shift = 0.0;
    std::vector<std::int64_t> keep_clusters;
    std::string format;

    // train-toy
    contrastive::TrainConfig train;
    synthetic::AugmentationSpec aug;

    // shared paths
    std::string data, out, report, model, calib, input, val1, val2, bank1, bank2, pool, groups_in, groups_out;
    std::string p, q, p1, p2, perm_out, neg, pos, field = "p", roc_out, in_test, out_test;
    std::vector<std::string> banks, inputs;

    // tests
    std::size_t n_perm = 500;
    double alpha = 0.05;
    std::size_t n_samples = 20;
    std::size_t n_null = 5000;
    std::string variant = "mmd-cc";
    std::string reference = "fresh";
    std::optional<std::size_t> n_trs;
    std::string intra_norm = "pair_count";
    std::string direction = "lower";
    std::vector<std::size_t> n_trs_list{2, 5, 10, 20, 50};
};

using Handler = std::function<void(Options&, Run&)>;

void gen_synthetic(Options& o, Run& run) {
    o.spec.seed = o.seed;
    auto draw = [&](std::size_t m) {
        return o.cluster ? synthetic::generate_cluster(o.spec, *o.cluster, m, o.stream)
             : o.shift != 0.0 ? synthetic::generate_shifted(o.spec, m, o.shift, o.stream)
                              : synthetic::generate(o.spec, m, o.stream);
    };
    auto kept = [&](std::int64_t label) {
        return o.keep_clusters.empty() ||
               std::find(o.keep_clusters.begin(), o.keep_clusters.end(), label) != o.keep_clusters.end();
    };
    if (!o.keep_clusters.empty() && !o.cluster) {
        for (auto c : o.keep_clusters)
            if (c < 0 || static_cast<std::size_t>(c) >= o.spec.n_clusters)
                throw ConfigError("--keep-clusters names a cluster outside [0, n_clusters)");
    }
    // Draws are a stable prefix in their count, so growing the draw until
    // n rows survive the filter keeps the output deterministic.
    synthetic::Dataset d;
    std::vector<std::size_t> keep;
    for (std::size_t m = o.n;; m *= 2) {
        d = draw(m);
        keep.clear();
        for (std::size_t i = 0; i < d.labels.size() && keep.size() < o.n; ++i)
            if (kept(d.labels[i])) keep.push_back(i);
        if (keep.size() == o.n) break;
        if (o.cluster && keep.empty()) throw InsufficientSamplesError("--cluster is excluded by --keep-clusters");
    }
    std::vector<std::int64_t> labels;
    for (auto i : keep) labels.push_back(d.labels[i]);
    const auto set = EmbeddingSet::from_double(d.x, std::nullopt, "gen-synthetic").select(keep);
    const auto fmt = o.format.empty() ? format_from_extension(o.out) : parse_format(o.format);
    save_embeddings(set, o.out, fmt);
    run.output(o.out);
    save_labels(labels, o.out + ".labels");
    run.output(o.out + ".labels");
    run.manifest.config["spec"] = nlohmann::json::parse(o.spec.to_json());
    std::cout << "rows=" << set.count() << " dim=" << set.dim() << '\n';
}

void train_toy(Options& o, Run& run) {
    const Matrix x = run.load(o.data).to_double();
    o.train.seed = o.seed;
    o.train.augmentation = o.aug;
    const auto r = contrastive::train(x, o.train);
    contrastive::save_model(r.model, o.out);
    run.output(o.out);
    std::cout << "loss=" << num(r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back())
              << " probe_loss_start=" << num(r.probe_loss_start) << " probe_loss_end=" << num(r.probe_loss_end) << '\n';
}

void finish_two_sample(const mmd::TwoSampleResult& r, Options& o, Run& run) {
    if (!o.report.empty()) {
        auto f = open_out(o.report, run);
        mmd::write_report(f, r);
        f << "alpha=" << o.alpha << '\n' << "reject=" << (r.p_value < o.alpha ? 1 : 0) << '\n';
    }
    if (!o.perm_out.empty()) {
        auto f = open_out(o.perm_out, run);
        mmd::write_perm_estimates(f, r);
    }
    std::cout << "est=" << num(r.est) << " p=" << num(r.p_value) << '\n';
}

void mmd_test(Options& o, Run& run) {
    const auto p = run.load(o.p), q = run.load(o.q);
    finish_two_sample(mmd::permutation_test(p, q, o.n_perm, o.seed), o, run);
}

void mmd_cc_test(Options& o, Run& run) {
    const auto p1 = run.load(o.p1), p2 = run.load(o.p2), q = run.load(o.q);
    finish_two_sample(mmd::mmd_cc_test(p1, p2, q, o.n_perm, o.seed), o, run);
}

void few_shot(Options& o, Run& run) {
    const auto pool = run.load(o.pool);
    const auto in = split_groups(run.load(o.groups_in), o.n_samples);
    const auto out = split_groups(run.load(o.groups_out), o.n_samples);
    mmd::FewShotConfig c;
    c.n_samples = o.n_samples;
    c.n_null = o.n_null;
    c.variant = parse_variant(o.variant);
    c.reference = parse_reference(o.reference);
    c.n_perm = o.n_perm;
    c.seed = o.seed;
    const auto r = mmd::few_shot_detection(pool, in, out, c);
    if (!o.report.empty()) {
        auto f = open_out(o.report, run);
        f << nlohmann::json{{"auroc", r.auroc},
                            {"n_samples", r.n_samples},
                            {"n_null", r.n_null},
                            {"in_estimates", r.in_estimates},
                            {"out_estimates", r.out_estimates},
                            {"in_p_values", r.in_p_values},
                            {"out_p_values", r.out_p_values}}
                 .dump(2)
          << '\n';
    }
    std::cout << "auroc=" << num(r.auroc) << " groups_in=" << in.size() << " groups_out=" << out.size() << '\n';
}

void cadet_calibrate(Options& o, Run& run) {
    const auto norm = detector::parse_intra_norm(o.intra_norm);
    const std::size_t n_trs = o.n_trs.value_or(50);
    std::optional<detector::CadetCalibration> calib;
    if (!o.model.empty()) {
        if (o.val1.empty() || o.val2.empty()) throw ConfigError("--model needs --val1 and --val2");
        const auto enc = model_encoder(o.model, run);
        const Matrix v1 = run.load(o.val1).to_double(), v2 = run.load(o.val2).to_double();
        calib = detector::calibrate(v1, v2, enc, synthetic::make_view_transform(o.aug), n_trs, o.seed, norm);
    } else {
        if (o.bank1.empty() || o.bank2.empty()) throw ConfigError("give --model with raw inputs or --bank1 and --bank2");
        detector::TransformBank b1(run.load(o.bank1), n_trs, "{}", o.seed);
        const detector::TransformBank b2(run.load(o.bank2), n_trs, "{}", o.seed);
        calib = detector::calibrate_from_banks(std::move(b1), b2, norm);
    }
    detector::save_calibration(*calib, o.out);
    run.output(o.out);
    std::cout << "gamma=" << num(calib->gamma) << " n_val=" << calib->val_scores.size() << " n_trs=" << calib->n_trs
              << '\n';
}

void cadet_test(Options& o, Run& run) {
    run.input(o.calib);
    const auto calib = detector::load_calibration(o.calib);
    const std::size_t n_trs = o.n_trs.value_or(calib.n_trs);
    if (n_trs != calib.n_trs) {
        throw ConfigError("--n-trs " + std::to_string(n_trs) + " differs from the calibration's n_trs " +
                          std::to_string(calib.n_trs) + "; p-values need matching view counts");
    }
    std::vector<detector::CadetResult> results;
    if (!o.model.empty()) {
        const auto enc = model_encoder(o.model, run);
        results = detector::test_samples(run.load(o.input).to_double(), calib, enc, transform_of(calib), o.seed);
    } else {
        results = detector::test_bank(detector::TransformBank(run.load(o.input), n_trs, "{}", o.seed), calib);
    }
    if (!o.out.empty()) {
        auto f = open_out(o.out, run);
        f << "index,m_in,m_out,score,p_value\n";
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            f << i << ',' << num(r.parts.m_in) << ',' << num(r.parts.m_out) << ',' << num(r.parts.score) << ','
              << num(r.p_value) << '\n';
        }
    }
    for (const auto& r : results) std::cout << "est=" << num(r.parts.score) << " p=" << num(r.p_value) << '\n';
}

void eval_auroc(Options& o, Run& run) {
    const auto neg = read_scores(o.neg, o.field, run);
    const auto pos = read_scores(o.pos, o.field, run);
    const auto curve = metrics::auroc(neg, pos, metrics::parse_direction(o.direction));
    if (!o.roc_out.empty()) {
        auto f = open_out(o.roc_out, run);
        f << "threshold,fpr,tpr\n";
        for (std::size_t i = 0; i < curve.fpr.size(); ++i)
            f << (i < curve.thresholds.size() ? num(curve.thresholds[i]) : "") << ',' << num(curve.fpr[i]) << ','
              << num(curve.tpr[i]) << '\n';
    }
    std::cout << "auroc=" << num(curve.auroc) << " n_neg=" << neg.size() << " n_pos=" << pos.size() << '\n';
}

void ntrs_sweep(Options& o, Run& run) {
    metrics::DetectorSetup setup{model_encoder(o.model, run), synthetic::make_view_transform(o.aug),
                                 run.load(o.val1).to_double(), run.load(o.val2).to_double(), o.seed,
                                 detector::parse_intra_norm(o.intra_norm)};
    const metrics::Benchmark bench{run.load(o.in_test).to_double(), run.load(o.out_test).to_double()};
    const auto rows = metrics::ntrs_sweep(setup, o.n_trs_list, bench);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        std::cout << "n_trs=" << r.n_trs << " auroc=" << num(r.auroc) << '\n';
        j.push_back({{"n_trs", r.n_trs}, {"auroc", r.auroc}});
    }
    if (!o.report.empty()) open_out(o.report, run) << j.dump(2) << '\n';
}

void report_similarity(Options& o, Run& run) {
    run.input(o.calib);
    const auto calib = detector::load_calibration(o.calib);
    std::vector<std::pair<std::string, detector::TransformBank>> banks;
    for (const auto& spec : o.banks) {
        const auto [name, path] = named_path(spec);
        banks.emplace_back(name, detector::TransformBank(run.load(path), calib.n_trs, "{}", o.seed));
    }
    if (!o.inputs.empty()) {
        if (o.model.empty()) throw ConfigError("--input needs --model");
        const auto enc = model_encoder(o.model, run);
        const auto t = transform_of(calib);
        std::uint64_t k = 0;
        for (const auto& spec : o.inputs) {
            const auto [name, path] = named_path(spec);
            const Matrix x = run.load(path).to_double();
            banks.emplace_back(name, detector::build_bank(x, enc, t, calib.n_trs, derive_seed(o.seed, {k++}),
                                                          detector::Stream::test));
        }
    }
    if (banks.empty()) throw ConfigError("give at least one --bank or --input");
    const auto rows = detector::similarity_report(calib, banks);
    detector::write_similarity_report(std::cout, rows);
    if (!o.report.empty()) {
        auto f = open_out(o.report, run);
        detector::write_similarity_report(f, rows);
    }
}

int dispatch(std::vector<std::string> args) {
    CLI::App app{"Distribution-shift and anomaly detection with MMD and CADet", "cadet"};
    app.set_version_flag("--version", kToolkitVersion);
    app.require_subcommand(1, 1);
    Options o;
    std::map<CLI::App*, Handler> handlers;

    auto sub = [&](const char* name, const char* about, Handler h) {
        auto* s = app.add_subcommand(name, about);
        add_common(s, o.seed, o.manifest);
        handlers[s] = std::move(h);
        return s;
    };

    auto* gen = sub("gen-synthetic", "Sample the synthetic Gaussian mixture", gen_synthetic);
    gen->add_option("--n", o.n, "Rows to write (after --keep-clusters)")->required();
    gen->add_option("--out", o.out, "Output embedding file (.emb or .csv)")->required();
    gen->add_option("--format", o.format, "binary | csv (default: from extension)");
    gen->add_option("--n-clusters", o.spec.n_clusters)->capture_default_str();
    gen->add_option("--dim", o.spec.dim)->capture_default_str();
    gen->add_option("--separation", o.spec.cluster_separation, "Neighbouring mean distance in sigmas")
        ->capture_default_str();
    gen->add_option("--sigma", o.spec.within_sigma)->capture_default_str();
    gen->add_option("--center-offset", o.spec.center_offset)->capture_default_str();
    gen->add_option("--intrinsic-dim", o.spec.intrinsic_dim)->capture_default_str();
    gen->add_option("--ambient-sigma", o.spec.ambient_sigma)->capture_default_str();
    gen->add_option("--stream", o.stream, "Independent draw index for the same mixture")->capture_default_str();
    gen->add_option("--cluster", o.cluster, "Draw from this cluster only");
    gen->add_option("--shift", o.shift, "Mean shift in sigmas")->capture_default_str();
    gen->add_option("--keep-clusters", o.keep_clusters, "Keep only draws from these clusters")->delimiter(',');

    auto* train = sub("train-toy", "Train the toy contrastive model", train_toy);
    train->add_option("--data", o.data, "Raw training vectors")->required();
    train->add_option("--out", o.out, "Model checkpoint")->required();
    train->add_option("--epochs", o.train.epochs)->capture_default_str();
    train->add_option("--lr", o.train.learning_rate)->capture_default_str();
    train->add_option("--batch-size", o.train.batch_size)->capture_default_str();
    train->add_option("--tau", o.train.tau)->capture_default_str();
    train->add_option("--hidden", o.train.dims.hidden)->capture_default_str();
    train->add_option("--feature", o.train.dims.feature)->capture_default_str();
    train->add_option("--head-hidden", o.train.dims.head_hidden)->capture_default_str();
    train->add_option("--projection", o.train.dims.projection)->capture_default_str();
    add_augmentation(train, o.aug);

    auto two_sample_flags = [&](CLI::App* s) {
        s->add_option("--n-perm", o.n_perm)->capture_default_str();
        s->add_option("--alpha", o.alpha, "Level used in the report file")->capture_default_str();
        s->add_option("--report", o.report, "Write a key=value report");
        s->add_option("--perm-out", o.perm_out, "Write the permutation estimates");
    };
    auto* m = sub("mmd-test", "MMD permutation test", mmd_test);
    m->add_option("--p", o.p)->required();
    m->add_option("--q", o.q)->required();
    two_sample_flags(m);
    auto* cc = sub("mmd-cc-test", "MMD test with a clean calibration set", mmd_cc_test);
    cc->add_option("--p1", o.p1, "Reference sample")->required();
    cc->add_option("--p2", o.p2, "Clean calibration sample, disjoint from --p1")->required();
    cc->add_option("--q", o.q)->required();
    two_sample_flags(cc);

    auto* fs = sub("few-shot", "Group-level detection AUROC", few_shot);
    fs->add_option("--pool", o.pool, "In-distribution pool")->required();
    fs->add_option("--groups-in", o.groups_in, "In-distribution rows, consecutive groups of --n-samples")->required();
    fs->add_option("--groups-out", o.groups_out, "Shifted rows, consecutive groups of --n-samples")->required();
    fs->add_option("--n-samples", o.n_samples)->capture_default_str();
    fs->add_option("--n-null", o.n_null)->capture_default_str();
    fs->add_option("--variant", o.variant, "mmd-cc | mmd")->capture_default_str();
    fs->add_option("--reference", o.reference, "fresh | fixed")->capture_default_str();
    fs->add_option("--n-perm", o.n_perm, "Permutations per group for --variant mmd")->capture_default_str();
    fs->add_option("--report", o.report, "Write a JSON report");

    auto* cal = sub("cadet-calibrate", "Build a CADet calibration", cadet_calibrate);
    cal->add_option("--out", o.out, "Calibration file")->required();
    cal->add_option("--model", o.model, "Model checkpoint (raw inputs)");
    cal->add_option("--val1", o.val1, "Raw X_val^(1)");
    cal->add_option("--val2", o.val2, "Raw X_val^(2)");
    cal->add_option("--bank1", o.bank1, "Pre-embedded views of X_val^(1)");
    cal->add_option("--bank2", o.bank2, "Pre-embedded views of X_val^(2)");
    cal->add_option("--n-trs", o.n_trs, "Views per sample [50]");
    cal->add_option("--intra-norm", o.intra_norm, "pair_count | printed")->capture_default_str();
    add_augmentation(cal, o.aug);

    auto* test = sub("cadet-test", "Score samples against a calibration", cadet_test);
    test->add_option("--calib", o.calib)->required();
    test->add_option("--input", o.input, "Raw inputs with --model, else pre-embedded views")->required();
    test->add_option("--model", o.model);
    test->add_option("--n-trs", o.n_trs, "Views per sample (must match the calibration)");
    test->add_option("--out", o.out, "Per-sample CSV");

    auto* ev = sub("eval-auroc", "AUROC between two score files", eval_auroc);
    ev->add_option("--neg", o.neg, "Scores of normal samples")->required();
    ev->add_option("--pos", o.pos, "Scores of anomalies")->required();
    ev->add_option("--direction", o.direction, "lower | higher: which end is anomalous")->capture_default_str();
    ev->add_option("--field", o.field, "Key to read from key=value lines")->capture_default_str();
    ev->add_option("--roc-out", o.roc_out, "ROC curve CSV");

    auto* sw = sub("ntrs-sweep", "AUROC as a function of n_trs", ntrs_sweep);
    sw->add_option("--model", o.model)->required();
    sw->add_option("--val1", o.val1)->required();
    sw->add_option("--val2", o.val2)->required();
    sw->add_option("--in", o.in_test, "In-distribution test inputs")->required();
    sw->add_option("--ood", o.out_test, "Anomalous test inputs")->required();
    sw->add_option("--n-trs-list", o.n_trs_list)->delimiter(',')->capture_default_str();
    sw->add_option("--intra-norm", o.intra_norm)->capture_default_str();
    sw->add_option("--report", o.report, "JSON report");
    add_augmentation(sw, o.aug);

    auto* rs = sub("report-similarity", "Mean and variance of m_in and m_out per distribution", report_similarity);
    rs->add_option("--calib", o.calib)->required();
    rs->add_option("--bank", o.banks, "name=path of pre-embedded views");
    rs->add_option("--input", o.inputs, "name=path of raw inputs (needs --model)");
    rs->add_option("--model", o.model);
    rs->add_option("--report", o.report, "Also write the table here");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageExit;
    }

    CLI::App* chosen = app.get_subcommands().front();
    Run run;
    run.manifest.command = chosen->get_name();
    run.manifest.argv = args;
    run.manifest.seed = o.seed;
    run.manifest.config = cli::echo_config(*chosen);
    run.manifest_path = o.manifest.empty() ? "cadet-" + chosen->get_name() + ".manifest.json" : o.manifest;
    handlers.at(chosen)(o, run);
    cli::write_manifest(run.manifest, run.manifest_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (!args.empty() && args.front() == "--replay") {
            if (args.size() != 2) {
                std::cerr << "usage: cadet --replay <manifest.json>\n";
                return kUsageExit;
            }
            args = cli::read_manifest(args[1]).argv;
        }
        return dispatch(args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidationExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidationExit;
    }
}
