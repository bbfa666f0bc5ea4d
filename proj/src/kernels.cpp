#include "cadet/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "cadet/errors.hpp"
#include "cadet/parallel.hpp"

namespace cadet::kernels {

double cosine_similarity(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ShapeError("cosine_similarity: dim " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
    }
    double dot = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    const double nx = std::sqrt(xx), ny = std::sqrt(yy);
    if (nx < kZeroNormThreshold || ny < kZeroNormThreshold) {
        throw DegenerateInputError("cosine_similarity: zero-norm input");
    }
    return std::clamp(dot / (nx * ny), -1.0, 1.0);
}

double cosine_similarity(const Vector& x, const Vector& y) {
    return cosine_similarity(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                             std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

Matrix normalized_rows(const Matrix& rows, const std::string& what) {
    Matrix out(rows.rows(), rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const double n = rows.row(i).norm();
        if (!(n >= kZeroNormThreshold)) {
            throw DegenerateInputError(what + " " + std::to_string(i) + " has zero norm");
        }
        out.row(i) = rows.row(i) / n;
    }
    return out;
}

Matrix normalized_rows(const EmbeddingSet& set) {
    return normalized_rows(set.to_double(), set.source().empty() ? "row" : set.source() + " row");
}

Matrix gram_of_normalized(const Matrix& ua, const Matrix& ub, const KernelConfig& config) {
    if (ua.cols() != ub.cols()) {
        throw ShapeError("gram_matrix: dim " + std::to_string(ua.cols()) + " vs " + std::to_string(ub.cols()));
    }
    const auto block = static_cast<Eigen::Index>(std::max<std::size_t>(1, config.block_rows));
    const Eigen::Index n_blocks = (ua.rows() + block - 1) / block;
    Matrix out(ua.rows(), ub.rows());
    const Matrix ubt = ub.transpose();
    parallel_for(static_cast<std::size_t>(n_blocks), config.threads, [&](std::size_t b) {
        const Eigen::Index first = static_cast<Eigen::Index>(b) * block;
        const Eigen::Index rows = std::min(block, ua.rows() - first);
        out.middleRows(first, rows).noalias() = ua.middleRows(first, rows) * ubt;
    });
    // Rounding can push |cos| a hair past 1.
    return out.cwiseMax(-1.0).cwiseMin(1.0);
}

GramMatrix gram_matrix(const EmbeddingSet& a, const EmbeddingSet& b, const KernelConfig& config) {
    if (a.dim() != b.dim()) {
        throw ShapeError("gram_matrix: dim " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    return {gram_of_normalized(normalized_rows(a), normalized_rows(b), config), a.source(), b.source()};
}

}  // namespace cadet::kernels
