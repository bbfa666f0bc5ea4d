#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cadet/embeddings_io.hpp"
#include "cadet/rng.hpp"

namespace cadet::detector {

/// Normalization of the intra-similarity sum over ordered pairs i != j.
enum class IntraNorm {
    pair_count,  // n_trs * (n_trs - 1): a true mean, m_in in [-1, 1]
    printed,     // n_trs * (n_trs + 1)
};

double intra_denominator(std::size_t n_trs, IntraNorm norm);
std::string to_string(IntraNorm norm);
IntraNorm parse_intra_norm(const std::string& s);

/// Maps one raw input to its embedding.
using Encoder = std::function<Vector(const Vector&)>;

/// A random transformation distribution. `apply` draws one transformation
/// from rng and applies it; `spec_json` records the parameters.
struct ViewTransform {
    std::function<Vector(const Vector&, Rng&)> apply;
    std::string spec_json = "{}";
};

/// n_trs embedded views per sample, stored contiguously: rows
/// [s * n_trs, (s + 1) * n_trs) belong to sample s.
struct TransformBank {
    EmbeddingSet views;
    std::size_t n_trs = 0;
    std::string transform_spec = "{}";
    std::uint64_t seed = 0;

    TransformBank(EmbeddingSet views, std::size_t n_trs, std::string transform_spec, std::uint64_t seed);

    std::size_t n_samples() const { return views.count() / n_trs; }
    std::size_t dim() const { return views.dim(); }
    /// The n_trs views of sample s in double precision.
    Matrix group(std::size_t s) const;
};

/// Stream tags used to split one master seed into per-sample,
/// per-transformation streams.
enum class Stream : std::uint64_t { val1 = 1, val2 = 2, test = 3 };

/// Draws n_trs transformations per sample, applies and embeds them. Sample i
/// transformation k uses the stream derive_seed(seed, {stream, i, k}).
TransformBank build_bank(const Matrix& samples, const Encoder& encoder, const ViewTransform& transform,
                         std::size_t n_trs, std::uint64_t seed, Stream stream = Stream::val1,
                         unsigned threads = 0);

/// Views of a single input, drawn on stream `test` with sample index `index`.
Matrix embed_views(const Vector& x, const Encoder& encoder, const ViewTransform& transform, std::size_t n_trs,
                   std::uint64_t seed, Stream stream, std::uint64_t index);

/// Mean cosine similarity over ordered pairs of distinct views.
double intra_similarity(const Matrix& group, IntraNorm norm = IntraNorm::pair_count);

/// Mean cosine similarity between every test view and every view of every
/// bank sample: n_trs^2 * |bank| terms.
double cross_similarity(const Matrix& group, const TransformBank& bank);

/// Sum of unit-normalized bank views. The cross-similarity sum factorizes
/// as <sum_i u_i, sum_kj v_kj>, which makes m_out one dot product per test
/// sample instead of n_trs^2 * |bank|.
struct BankSummary {
    Vector unit_sum;
    std::size_t n_views = 0;
    std::size_t n_trs = 0;
};
BankSummary summarize(const TransformBank& bank);
double cross_similarity(const Matrix& group, const BankSummary& summary);

struct CadetScoreParts {
    double m_in = 0.0;
    double m_out = 0.0;
    double score = 0.0;
};

struct CadetCalibration {
    double gamma = 0.0;
    std::vector<double> val_scores;
    TransformBank bank;
    std::size_t n_trs = 0;
    std::string transform_spec = "{}";
    std::uint64_t seed = 0;
    IntraNorm norm = IntraNorm::pair_count;
    BankSummary summary;
    /// Parts for each X_val^(2) sample; not persisted.
    std::vector<CadetScoreParts> val_parts;
};

struct CadetResult {
    CadetScoreParts parts;
    double p_value = 1.0;
};

/// Unbiased sample variance (divisor N - 1).
double sample_variance(std::span<const double> v);

/// gamma = sqrt(Var(m_in) / Var(m_out)) over the given samples. Throws
/// DegenerateCalibrationError when Var(m_out) is zero.
double calibrate_gamma(std::span<const double> m_in, std::span<const double> m_out);

/// (#{val_scores < score} + 1) / (N + 1).
double rank_p_value(double score, std::span<const double> val_scores);

/// Calibration from already-embedded banks (bank1 over X_val^(1), bank2 over
/// X_val^(2)). X_val^(1) and X_val^(2) must be disjoint; not checked.
CadetCalibration calibrate_from_banks(TransformBank bank1, const TransformBank& bank2,
                                      IntraNorm norm = IntraNorm::pair_count);

CadetCalibration calibrate(const Matrix& x_val1, const Matrix& x_val2, const Encoder& encoder,
                           const ViewTransform& transform, std::size_t n_trs, std::uint64_t seed,
                           IntraNorm norm = IntraNorm::pair_count, unsigned threads = 0);

CadetScoreParts score_parts(const Matrix& group, const CadetCalibration& calib);
CadetResult test_group(const Matrix& group, const CadetCalibration& calib);

/// Scores one raw input; its views come from stream `test` at index 0 of `seed`.
CadetResult test_sample(const Vector& x, const CadetCalibration& calib, const Encoder& encoder,
                        const ViewTransform& transform, std::size_t n_trs, std::uint64_t seed);

/// Scores every row of `samples`; row i uses stream `test` at index i.
std::vector<CadetResult> test_samples(const Matrix& samples, const CadetCalibration& calib, const Encoder& encoder,
                                      const ViewTransform& transform, std::uint64_t seed, unsigned threads = 0);

/// Scores every sample of a pre-embedded bank.
std::vector<CadetResult> test_bank(const TransformBank& bank, const CadetCalibration& calib, unsigned threads = 0);

struct SimilarityRow {
    std::string name;
    std::size_t n = 0;
    double mean_m_in = 0.0;
    double mean_m_out = 0.0;
    double mean_gamma_m_out = 0.0;
    double var_m_in = 0.0;
    double var_m_out = 0.0;
};

/// Mean/variance of m_in and m_out per distribution, scored against the
/// calibration bank. Every bank needs >= 2 samples.
std::vector<SimilarityRow> similarity_report(const CadetCalibration& calib,
                                             const std::vector<std::pair<std::string, TransformBank>>& banks);
void write_similarity_report(std::ostream& out, const std::vector<SimilarityRow>& rows);

/// Binary layout (little-endian):
///   "CAD1" u32 version=1 | f64 gamma | u64 N | f64[N] val_scores |
///   EMB1 block of the X_val^(1) bank | u32 n_trs |
///   u32 byte length + UTF-8 JSON {"transform": ..., "seed": ..., "intra_norm": ...}
void save_calibration(const CadetCalibration& calib, const std::filesystem::path& path);
CadetCalibration load_calibration(const std::filesystem::path& path);

}  // namespace cadet::detector
