#include "cadet/cadet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "cadet/errors.hpp"
#include "cadet/kernels.hpp"
#include "cadet/parallel.hpp"

namespace cadet::detector {

namespace {

constexpr char kCalibMagic[4] = {'C', 'A', 'D', '1'};
constexpr std::uint32_t kCalibVersion = 1;

void check_group(const Matrix& group) {
    if (group.rows() < 2) {
        throw InsufficientSamplesError("intra-similarity needs n_trs >= 2 views, got " + std::to_string(group.rows()));
    }
}

double mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double intra_denominator(std::size_t n_trs, IntraNorm norm) {
    const auto n = static_cast<double>(n_trs);
    return norm == IntraNorm::pair_count ? n * (n - 1.0) : n * (n + 1.0);
}

std::string to_string(IntraNorm norm) { return norm == IntraNorm::pair_count ? "pair_count" : "printed"; }

IntraNorm parse_intra_norm(const std::string& s) {
    if (s == "pair_count" || s == "pairs") return IntraNorm::pair_count;
    if (s == "printed") return IntraNorm::printed;
    throw ConfigError("unknown intra-similarity normalization '" + s + "' (expected pair_count or printed)");
}

TransformBank::TransformBank(EmbeddingSet views_, std::size_t n_trs_, std::string transform_spec_,
                             std::uint64_t seed_)
    : views(std::move(views_)), n_trs(n_trs_), transform_spec(std::move(transform_spec_)), seed(seed_) {
    if (n_trs == 0) throw ConfigError("n_trs must be >= 1");
    if (views.count() % n_trs != 0) {
        throw ShapeError("bank of " + std::to_string(views.count()) + " views is not a whole number of groups of " +
                         std::to_string(n_trs));
    }
}

Matrix TransformBank::group(std::size_t s) const {
    if (s >= n_samples()) throw ShapeError("bank sample index out of range");
    return views.data()
        .middleRows(static_cast<Eigen::Index>(s * n_trs), static_cast<Eigen::Index>(n_trs))
        .cast<double>();
}

Matrix embed_views(const Vector& x, const Encoder& encoder, const ViewTransform& transform, std::size_t n_trs,
                   std::uint64_t seed, Stream stream, std::uint64_t index) {
    Matrix out;
    for (std::size_t k = 0; k < n_trs; ++k) {
        auto rng = make_rng(seed, {static_cast<std::uint64_t>(stream), index, k});
        const Vector e = encoder(transform.apply(x, rng));
        if (k == 0) out.resize(static_cast<Eigen::Index>(n_trs), e.size());
        if (!e.allFinite()) throw DegenerateInputError("sample " + std::to_string(index) + ": non-finite embedding");
        if (e.norm() < kernels::kZeroNormThreshold) {
            throw DegenerateInputError("sample " + std::to_string(index) + ": zero-norm embedding for view " +
                                       std::to_string(k));
        }
        // Views are stored as f32; round here too so freshly embedded test
        // views and persisted bank views are scored identically.
        out.row(static_cast<Eigen::Index>(k)) = e.cast<float>().cast<double>();
    }
    return out;
}

TransformBank build_bank(const Matrix& samples, const Encoder& encoder, const ViewTransform& transform,
                         std::size_t n_trs, std::uint64_t seed, Stream stream, unsigned threads) {
    if (n_trs < 2) throw ConfigError("n_trs must be >= 2");
    if (samples.rows() < 1) throw InsufficientSamplesError("bank needs at least one sample");
    const auto n = static_cast<std::size_t>(samples.rows());
    std::vector<Matrix> groups(n);
    parallel_for(n, threads, [&](std::size_t i) {
        groups[i] = embed_views(samples.row(static_cast<Eigen::Index>(i)).transpose(), encoder, transform, n_trs, seed,
                                stream, i);
    });
    const auto dim = groups.front().cols();
    MatrixF views(static_cast<Eigen::Index>(n * n_trs), dim);
    for (std::size_t i = 0; i < n; ++i) {
        if (groups[i].cols() != dim) throw ShapeError("encoder output dim changed between samples");
        views.middleRows(static_cast<Eigen::Index>(i * n_trs), static_cast<Eigen::Index>(n_trs)) =
            groups[i].cast<float>();
    }
    return TransformBank(EmbeddingSet(std::move(views), std::nullopt, "bank"), n_trs, transform.spec_json, seed);
}

double intra_similarity(const Matrix& group, IntraNorm norm) {
    check_group(group);
    const Matrix u = kernels::normalized_rows(group, "view");
    const Matrix g = u * u.transpose();
    double total = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j)
            if (i != j) total += g(i, j);
    return total / intra_denominator(static_cast<std::size_t>(group.rows()), norm);
}

BankSummary summarize(const TransformBank& bank) {
    const Matrix u = kernels::normalized_rows(bank.views);
    return {u.colwise().sum().transpose(), static_cast<std::size_t>(u.rows()), bank.n_trs};
}

double cross_similarity(const Matrix& group, const BankSummary& summary) {
    if (group.rows() < 1) throw InsufficientSamplesError("cross-similarity needs at least one view");
    if (group.cols() != summary.unit_sum.size()) {
        throw ShapeError("cross-similarity: view dim " + std::to_string(group.cols()) + " vs bank dim " +
                         std::to_string(summary.unit_sum.size()));
    }
    if (summary.n_views == 0) throw InsufficientSamplesError("empty bank");
    const Vector t = kernels::normalized_rows(group, "view").colwise().sum().transpose();
    return t.dot(summary.unit_sum) / (static_cast<double>(group.rows()) * static_cast<double>(summary.n_views));
}

double cross_similarity(const Matrix& group, const TransformBank& bank) {
    if (group.cols() != static_cast<Eigen::Index>(bank.dim())) {
        throw ShapeError("cross-similarity: view dim " + std::to_string(group.cols()) + " vs bank dim " +
                         std::to_string(bank.dim()));
    }
    return cross_similarity(group, summarize(bank));
}

double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw InsufficientSamplesError("variance needs at least 2 values");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

double calibrate_gamma(std::span<const double> m_in, std::span<const double> m_out) {
    const double var_in = sample_variance(m_in);
    const double var_out = sample_variance(m_out);
    if (!(var_out > 0.0)) {
        throw DegenerateCalibrationError("Var(m_out) over X_val^(2) is zero; gamma is undefined");
    }
    return std::sqrt(var_in / var_out);
}

double rank_p_value(double score, std::span<const double> val_scores) {
    const auto below = std::count_if(val_scores.begin(), val_scores.end(), [score](double s) { return s < score; });
    return (static_cast<double>(below) + 1.0) / (static_cast<double>(val_scores.size()) + 1.0);
}

CadetCalibration calibrate_from_banks(TransformBank bank1, const TransformBank& bank2, IntraNorm norm) {
    if (bank1.n_trs != bank2.n_trs) throw ConfigError("calibration banks disagree on n_trs");
    if (bank1.dim() != bank2.dim()) throw ShapeError("calibration banks disagree on dim");
    if (bank2.n_samples() < 2) throw InsufficientSamplesError("|X_val^(2)| must be >= 2");

    CadetCalibration c{.gamma = 0.0,
                       .val_scores = {},
                       .bank = std::move(bank1),
                       .n_trs = bank2.n_trs,
                       .transform_spec = bank2.transform_spec,
                       .seed = bank2.seed,
                       .norm = norm,
                       .summary = {},
                       .val_parts = {}};
    c.summary = summarize(c.bank);

    const std::size_t n = bank2.n_samples();
    std::vector<double> m_in(n), m_out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Matrix g = bank2.group(k);
        m_in[k] = intra_similarity(g, norm);
        m_out[k] = cross_similarity(g, c.summary);
    }
    c.gamma = calibrate_gamma(m_in, m_out);
    c.val_scores.resize(n);
    c.val_parts.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        c.val_scores[k] = m_in[k] + c.gamma * m_out[k];
        c.val_parts[k] = {m_in[k], m_out[k], c.val_scores[k]};
    }
    return c;
}

CadetCalibration calibrate(const Matrix& x_val1, const Matrix& x_val2, const Encoder& encoder,
                           const ViewTransform& transform, std::size_t n_trs, std::uint64_t seed, IntraNorm norm,
                           unsigned threads) {
    if (x_val1.rows() < 1) throw InsufficientSamplesError("|X_val^(1)| must be >= 1");
    if (x_val2.rows() < 2) throw InsufficientSamplesError("|X_val^(2)| must be >= 2");
    auto bank1 = build_bank(x_val1, encoder, transform, n_trs, seed, Stream::val1, threads);
    const auto bank2 = build_bank(x_val2, encoder, transform, n_trs, seed, Stream::val2, threads);
    return calibrate_from_banks(std::move(bank1), bank2, norm);
}

CadetScoreParts score_parts(const Matrix& group, const CadetCalibration& calib) {
    CadetScoreParts p;
    p.m_in = intra_similarity(group, calib.norm);
    p.m_out = cross_similarity(group, calib.summary);
    p.score = p.m_in + calib.gamma * p.m_out;
    return p;
}

CadetResult test_group(const Matrix& group, const CadetCalibration& calib) {
    if (static_cast<std::size_t>(group.rows()) != calib.n_trs) {
        throw ConfigError("test sample has " + std::to_string(group.rows()) + " views, calibration expects n_trs=" +
                          std::to_string(calib.n_trs));
    }
    CadetResult r;
    r.parts = score_parts(group, calib);
    r.p_value = rank_p_value(r.parts.score, calib.val_scores);
    return r;
}

CadetResult test_sample(const Vector& x, const CadetCalibration& calib, const Encoder& encoder,
                        const ViewTransform& transform, std::size_t n_trs, std::uint64_t seed) {
    if (n_trs != calib.n_trs) {
        throw ConfigError("n_trs=" + std::to_string(n_trs) + " does not match calibration n_trs=" +
                          std::to_string(calib.n_trs));
    }
    return test_group(embed_views(x, encoder, transform, n_trs, seed, Stream::test, 0), calib);
}

std::vector<CadetResult> test_samples(const Matrix& samples, const CadetCalibration& calib, const Encoder& encoder,
                                      const ViewTransform& transform, std::uint64_t seed, unsigned threads) {
    std::vector<CadetResult> out(static_cast<std::size_t>(samples.rows()));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        out[i] = test_group(embed_views(samples.row(static_cast<Eigen::Index>(i)).transpose(), encoder, transform,
                                        calib.n_trs, seed, Stream::test, i),
                            calib);
    });
    return out;
}

std::vector<CadetResult> test_bank(const TransformBank& bank, const CadetCalibration& calib, unsigned threads) {
    std::vector<CadetResult> out(bank.n_samples());
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = test_group(bank.group(i), calib); });
    return out;
}

std::vector<SimilarityRow> similarity_report(const CadetCalibration& calib,
                                             const std::vector<std::pair<std::string, TransformBank>>& banks) {
    std::vector<SimilarityRow> rows;
    for (const auto& [name, bank] : banks) {
        const auto n = bank.n_samples();
        if (n < 2) throw InsufficientSamplesError("similarity report needs >= 2 samples for '" + name + "'");
        std::vector<double> m_in(n), m_out(n), gm_out(n);
        for (std::size_t k = 0; k < n; ++k) {
            const auto p = score_parts(bank.group(k), calib);
            m_in[k] = p.m_in;
            m_out[k] = p.m_out;
            gm_out[k] = calib.gamma * p.m_out;
        }
        rows.push_back({name, n, mean(m_in), mean(m_out), mean(gm_out), sample_variance(m_in), sample_variance(m_out)});
    }
    return rows;
}

void write_similarity_report(std::ostream& out, const std::vector<SimilarityRow>& rows) {
    out << std::left << std::setw(16) << "distribution" << std::right << std::setw(8) << "n" << std::setw(14)
        << "mean_m_in" << std::setw(14) << "mean_m_out" << std::setw(16) << "mean_g*m_out" << std::setw(14)
        << "var_m_in" << std::setw(14) << "var_m_out" << '\n';
    out << std::fixed;
    for (const auto& r : rows) {
        out << std::left << std::setw(16) << r.name << std::right << std::setw(8) << r.n << std::setprecision(6)
            << std::setw(14) << r.mean_m_in << std::setw(14) << r.mean_m_out << std::setw(16) << r.mean_gamma_m_out
            << std::scientific << std::setprecision(4) << std::setw(14) << r.var_m_in << std::setw(14) << r.var_m_out
            << std::fixed << '\n';
    }
    out << std::defaultfloat;
}

void save_calibration(const CadetCalibration& calib, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kCalibMagic, 4);
    le::put_u32(out, kCalibVersion);
    le::put_f64(out, calib.gamma);
    le::put_u64(out, calib.val_scores.size());
    for (double s : calib.val_scores) le::put_f64(out, s);
    write_emb1(out, calib.bank.views.data());
    le::put_u32(out, static_cast<std::uint32_t>(calib.n_trs));

    nlohmann::json meta;
    meta["transform"] = nlohmann::json::parse(calib.transform_spec, nullptr, false);
    if (meta["transform"].is_discarded()) meta["transform"] = calib.transform_spec;
    meta["seed"] = calib.seed;
    meta["intra_norm"] = to_string(calib.norm);
    const std::string text = meta.dump();
    le::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

CadetCalibration load_calibration(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCalibMagic, 4) != 0) throw FormatError("bad magic, expected CAD1");
    const auto version = le::get_u32(in);
    if (version != kCalibVersion) throw FormatError("unsupported calibration version " + std::to_string(version));
    const double gamma = le::get_f64(in);
    const auto n = le::get_u64(in);
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec || n > size / 8) throw FormatError("calibration score count exceeds file size");
    std::vector<double> scores(n);
    for (auto& s : scores) s = le::get_f64(in);
    MatrixF views = read_emb1(in);
    const auto n_trs = le::get_u32(in);
    const auto len = le::get_u32(in);
    if (len > size) throw FormatError("calibration metadata length exceeds file size");
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw FormatError("calibration metadata truncated");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after calibration metadata");

    const auto meta = nlohmann::json::parse(text, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw FormatError("calibration metadata is not a JSON object");
    const std::string spec = meta.contains("transform") ? meta["transform"].dump() : "{}";
    const std::uint64_t seed = meta.value("seed", std::uint64_t{0});
    const IntraNorm norm = parse_intra_norm(meta.value("intra_norm", std::string("pair_count")));

    if (n < 2) throw FormatError("calibration holds fewer than 2 validation scores");
    if (!std::isfinite(gamma) || gamma < 0.0) throw FormatError("calibration gamma is not a finite non-negative value");

    CadetCalibration c{.gamma = gamma,
                       .val_scores = std::move(scores),
                       .bank = TransformBank(EmbeddingSet(std::move(views), std::nullopt, path.string()), n_trs, spec,
                                             seed),
                       .n_trs = n_trs,
                       .transform_spec = spec,
                       .seed = seed,
                       .norm = norm,
                       .summary = {},
                       .val_parts = {}};
    c.summary = summarize(c.bank);
    return c;
}

}  // namespace cadet::detector
