#include "cadet/embeddings_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cadet/errors.hpp"

namespace cadet {

namespace {

void validate(const MatrixF& data, const std::optional<std::vector<std::int64_t>>& labels) {
    if (data.rows() < 1) throw ValidationError("embedding set must contain at least one row");
    if (data.cols() < 1) throw ValidationError("embedding dim must be >= 1");
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            if (!std::isfinite(data(i, j))) {
                throw ValidationError("non-finite value at row " + std::to_string(i) + ", column " +
                                      std::to_string(j));
            }
        }
    }
    if (labels && labels->size() != static_cast<std::size_t>(data.rows())) {
        throw ValidationError("label count " + std::to_string(labels->size()) + " does not match row count " +
                              std::to_string(data.rows()));
    }
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

EmbeddingSet::EmbeddingSet(MatrixF data, std::optional<std::vector<std::int64_t>> labels, std::string source)
    : data_(std::move(data)), labels_(std::move(labels)), source_(std::move(source)) {
    validate(data_, labels_);
}

EmbeddingSet EmbeddingSet::from_double(const Matrix& data, std::optional<std::vector<std::int64_t>> labels,
                                       std::string source) {
    return EmbeddingSet(data.cast<float>(), std::move(labels), std::move(source));
}

EmbeddingSet EmbeddingSet::slice(std::size_t first, std::size_t n) const {
    if (first + n > count()) throw ShapeError("slice out of range");
    std::optional<std::vector<std::int64_t>> lab;
    if (labels_) lab.emplace(labels_->begin() + first, labels_->begin() + first + n);
    return EmbeddingSet(data_.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(n)),
                        std::move(lab), source_);
}

EmbeddingSet EmbeddingSet::select(const std::vector<std::size_t>& rows) const {
    MatrixF out(static_cast<Eigen::Index>(rows.size()), data_.cols());
    std::optional<std::vector<std::int64_t>> lab;
    if (labels_) lab.emplace();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= count()) throw ShapeError("row index out of range");
        out.row(static_cast<Eigen::Index>(r)) = data_.row(static_cast<Eigen::Index>(rows[r]));
        if (labels_) lab->push_back((*labels_)[rows[r]]);
    }
    return EmbeddingSet(std::move(out), std::move(lab), source_);
}

bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.data_.rows() != b.data_.rows() || a.data_.cols() != b.data_.cols()) return false;
    // Bitwise, so that -0.0 and 0.0 are distinguished.
    if (std::memcmp(a.data_.data(), b.data_.data(), sizeof(float) * static_cast<std::size_t>(a.data_.size())) != 0)
        return false;
    return a.labels_ == b.labels_;
}

EmbeddingSet concat(const std::vector<const EmbeddingSet*>& parts, std::string source) {
    if (parts.empty()) throw InsufficientSamplesError("concat of zero sets");
    const auto dim = parts.front()->dim();
    Eigen::Index rows = 0;
    bool all_labeled = true;
    for (const auto* p : parts) {
        if (p->dim() != dim) throw ShapeError("concat: dim mismatch");
        rows += static_cast<Eigen::Index>(p->count());
        all_labeled = all_labeled && p->labels().has_value();
    }
    MatrixF out(rows, static_cast<Eigen::Index>(dim));
    std::optional<std::vector<std::int64_t>> lab;
    if (all_labeled) lab.emplace();
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.middleRows(at, p->data().rows()) = p->data();
        at += p->data().rows();
        if (lab) lab->insert(lab->end(), p->labels()->begin(), p->labels()->end());
    }
    return EmbeddingSet(std::move(out), std::move(lab), std::move(source));
}

FileFormat parse_format(const std::string& name) {
    if (name == "binary" || name == "emb" || name == "bin") return FileFormat::binary;
    if (name == "csv") return FileFormat::csv;
    throw ConfigError("unknown embedding format '" + name + "' (expected binary or csv)");
}

FileFormat format_from_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".csv" || ext == ".txt") return FileFormat::csv;
    return FileFormat::binary;
}

namespace le {

namespace {
template <typename U>
void put(std::ostream& out, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
    unsigned char buf[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("unexpected end of file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}
}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void put_f32(std::ostream& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t get_u32(std::istream& in) { return get<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get<std::uint64_t>(in); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get<std::uint32_t>(in)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

}  // namespace le

void write_emb1(std::ostream& out, const MatrixF& data) {
    if (data.rows() > std::numeric_limits<std::uint32_t>::max() ||
        data.cols() > std::numeric_limits<std::uint32_t>::max())
        throw ShapeError("matrix too large for EMB1");
    out.write(EmbeddingFileHeader::kMagic, 4);
    le::put_u32(out, EmbeddingFileHeader::kVersion);
    le::put_u32(out, static_cast<std::uint32_t>(data.rows()));
    le::put_u32(out, static_cast<std::uint32_t>(data.cols()));
    for (Eigen::Index i = 0; i < data.size(); ++i) le::put_f32(out, data.data()[i]);
}

MatrixF read_emb1(std::istream& in, std::optional<std::uint64_t> exact_bytes) {
    if (exact_bytes && *exact_bytes < EmbeddingFileHeader::kSize) throw FormatError("EMB1 header truncated");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, EmbeddingFileHeader::kMagic, 4) != 0) throw FormatError("bad magic, expected EMB1");
    EmbeddingFileHeader h;
    h.version = le::get_u32(in);
    h.count = le::get_u32(in);
    h.dim = le::get_u32(in);
    if (h.version != EmbeddingFileHeader::kVersion)
        throw FormatError("unsupported EMB1 version " + std::to_string(h.version));
    const std::uint64_t expected = std::uint64_t{h.count} * h.dim * 4;
    if (exact_bytes && expected != *exact_bytes - EmbeddingFileHeader::kSize) {
        throw FormatError("payload length " + std::to_string(*exact_bytes - EmbeddingFileHeader::kSize) +
                          " does not match header count*dim*4 = " + std::to_string(expected));
    }
    MatrixF data(static_cast<Eigen::Index>(h.count), static_cast<Eigen::Index>(h.dim));
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = le::get_f32(in);
    return data;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, FileFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    if (format == FileFormat::binary) {
        std::error_code ec;
        const auto size = std::filesystem::file_size(path, ec);
        if (ec) throw IoError("cannot stat " + path.string());
        return EmbeddingSet(read_emb1(in, size), std::nullopt, path.string());
    }

    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(t);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const auto c = trim(cell);
            float v = 0.0f;
            auto [ptr, err] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (err != std::errc() || ptr != c.data() + c.size()) {
                throw FormatError("line " + std::to_string(line_no) + ": cannot parse '" + c + "'");
            }
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ValidationError("ragged CSV: line " + std::to_string(line_no) + " has " +
                                  std::to_string(row.size()) + " columns, expected " +
                                  std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("CSV file " + path.string() + " has no rows");
    MatrixF data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return EmbeddingSet(std::move(data), std::nullopt, path.string());
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path, FileFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    if (format == FileFormat::binary) {
        write_emb1(out, set.data());
    } else {
        // max_digits10 makes the text form round-trip to the same f32.
        out << std::setprecision(std::numeric_limits<float>::max_digits10);
        const auto& d = set.data();
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            for (Eigen::Index j = 0; j < d.cols(); ++j) {
                if (j) out << ',';
                out << d(i, j);
            }
            out << '\n';
        }
    }
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::int64_t> load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::int64_t> labels;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty()) continue;
        std::int64_t v = 0;
        auto [ptr, err] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (err != std::errc() || ptr != t.data() + t.size())
            throw FormatError("bad label line '" + t + "' in " + path.string());
        labels.push_back(v);
    }
    return labels;
}

void save_labels(const std::vector<std::int64_t>& labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (auto l : labels) out << l << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace cadet
