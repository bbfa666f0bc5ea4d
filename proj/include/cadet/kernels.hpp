#pragma once

#include <span>
#include <string>

#include "cadet/embeddings_io.hpp"

namespace cadet::kernels {

/// Rows with Euclidean norm below this are treated as zero vectors.
inline constexpr double kZeroNormThreshold = 1e-30;

/// Evaluation knobs for the cosine kernel. Results are bitwise identical for
/// any thread count at a fixed block size.
struct KernelConfig {
    std::size_t block_rows = 64;
    unsigned threads = 0;  // 0 = CADET_THREADS / hardware concurrency
};

struct GramMatrix {
    Matrix values;
    std::string row_source;
    std::string col_source;
};

double cosine_similarity(std::span<const double> x, std::span<const double> y);
double cosine_similarity(const Vector& x, const Vector& y);

/// Rows scaled to unit norm in double precision. Throws DegenerateInputError
/// naming the first zero-norm row.
Matrix normalized_rows(const Matrix& rows, const std::string& what = "row");
Matrix normalized_rows(const EmbeddingSet& set);

/// values(i, j) == cosine_similarity(A[i], B[j]).
GramMatrix gram_matrix(const EmbeddingSet& a, const EmbeddingSet& b, const KernelConfig& config = {});

/// Gram matrix of already-normalized rows (U_a * U_b^T), block-parallel.
Matrix gram_of_normalized(const Matrix& ua, const Matrix& ub, const KernelConfig& config = {});

}  // namespace cadet::kernels
