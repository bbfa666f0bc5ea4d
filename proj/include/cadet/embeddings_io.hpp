#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cadet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A dim-consistent collection of feature vectors. Storage is 32-bit;
/// every consumer accumulates in 64-bit.
///
/// Invariants, checked on construction: count >= 1, dim >= 1, all entries
/// finite, labels (when present) one per row.
class EmbeddingSet {
public:
    explicit EmbeddingSet(MatrixF data, std::optional<std::vector<std::int64_t>> labels = std::nullopt,
                          std::string source = {});

    /// Rounds to f32 storage.
    static EmbeddingSet from_double(const Matrix& data,
                                    std::optional<std::vector<std::int64_t>> labels = std::nullopt,
                                    std::string source = {});

    std::size_t count() const { return static_cast<std::size_t>(data_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(data_.cols()); }

    const MatrixF& data() const { return data_; }
    const std::optional<std::vector<std::int64_t>>& labels() const { return labels_; }
    const std::string& source() const { return source_; }

    Vector row(std::size_t i) const { return data_.row(static_cast<Eigen::Index>(i)).cast<double>(); }
    Matrix to_double() const { return data_.cast<double>(); }

    /// Rows [first, first + n) as a new set; labels follow.
    EmbeddingSet slice(std::size_t first, std::size_t n) const;
    /// Rows at the given indices, in order.
    EmbeddingSet select(const std::vector<std::size_t>& rows) const;

    friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b);

private:
    MatrixF data_;
    std::optional<std::vector<std::int64_t>> labels_;
    std::string source_;
};

/// Stacks sets row-wise. All inputs must share dim.
EmbeddingSet concat(const std::vector<const EmbeddingSet*>& parts, std::string source = {});

enum class FileFormat { binary, csv };

FileFormat parse_format(const std::string& name);
/// binary for ".emb"/".bin", csv for ".csv"/".txt".
FileFormat format_from_extension(const std::filesystem::path& path);

struct EmbeddingFileHeader {
    static constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
    static constexpr std::uint32_t kVersion = 1;
    static constexpr std::size_t kSize = 16;

    std::uint32_t version = kVersion;
    std::uint32_t count = 0;
    std::uint32_t dim = 0;
};

EmbeddingSet load_embeddings(const std::filesystem::path& path, FileFormat format);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path, FileFormat format);

/// Labels sidecar: one integer per line.
std::vector<std::int64_t> load_labels(const std::filesystem::path& path);
void save_labels(const std::vector<std::int64_t>& labels, const std::filesystem::path& path);

/// Stream-level EMB1 block codec, reused by the calibration file format.
void write_emb1(std::ostream& out, const MatrixF& data);
/// When exact_bytes is set, the block must span exactly that many bytes
/// (whole-file mode); otherwise the payload length comes from the header.
MatrixF read_emb1(std::istream& in, std::optional<std::uint64_t> exact_bytes = std::nullopt);

namespace le {
// Little-endian scalar codecs shared by every binary format in the toolkit.
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f32(std::ostream& out, float v);
void put_f64(std::ostream& out, double v);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
float get_f32(std::istream& in);
double get_f64(std::istream& in);
}  // namespace le

}  // namespace cadet
