#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "cadet/embeddings_io.hpp"
#include "cadet/errors.hpp"

using namespace cadet;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "cadet_unit";
    fs::create_directories(dir);
    return dir / name;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f << bytes;
}

std::string emb1_bytes(std::uint32_t count, std::uint32_t dim, const std::vector<float>& payload,
                       const char* magic = "EMB1") {
    std::ostringstream out(std::ios::binary);
    out.write(magic, 4);
    le::put_u32(out, 1);
    le::put_u32(out, count);
    le::put_u32(out, dim);
    for (float v : payload) le::put_f32(out, v);
    return out.str();
}

}  // namespace

TEST_SUITE("embeddings_io") {

TEST_CASE("binary payload with header count=2 dim=3") {
    const auto p = temp_path("two_by_three.emb");
    write_bytes(p, emb1_bytes(2, 3, {1, 0, 0, 0, 1, 0}));
    const auto s = load_embeddings(p, FileFormat::binary);
    CHECK(s.count() == 2);
    CHECK(s.dim() == 3);
    CHECK(s.data()(0, 0) == 1.0f);
    CHECK(s.data()(1, 1) == 1.0f);
    CHECK(s.data()(1, 2) == 0.0f);
}

TEST_CASE("binary round trip is bitwise exact for random matrices") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<std::uint32_t> bits;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 1 + trial % 7, d = 1 + (trial * 3) % 11;
        MatrixF m(n, d);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            float v;
            do {
                const std::uint32_t b = bits(rng);
                std::memcpy(&v, &b, sizeof v);
            } while (!std::isfinite(v));
            m.data()[i] = v;
        }
        const EmbeddingSet s(m);
        const auto p = temp_path("roundtrip.emb");
        save_embeddings(s, p, FileFormat::binary);
        const auto back = load_embeddings(p, FileFormat::binary);
        REQUIRE(back.count() == s.count());
        CHECK(std::memcmp(back.data().data(), m.data(), sizeof(float) * static_cast<std::size_t>(m.size())) == 0);
    }
}

TEST_CASE("file layout is magic, version, count, dim, little-endian f32") {
    const EmbeddingSet s(MatrixF{{1.5f, -2.0f}});
    const auto p = temp_path("layout.emb");
    save_embeddings(s, p, FileFormat::binary);
    std::ifstream f(p, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(bytes == emb1_bytes(1, 2, {1.5f, -2.0f}));
    CHECK(bytes.size() == EmbeddingFileHeader::kSize + 8);
}

TEST_CASE("csv parse and round trip") {
    const auto p = temp_path("plain.csv");
    write_bytes(p, "1.0,2.0\n3.0,4.0");
    const auto s = load_embeddings(p, FileFormat::csv);
    CHECK(s.count() == 2);
    CHECK(s.dim() == 2);
    CHECK(s.data()(1, 0) == 3.0f);

    MatrixF m(3, 4);
    m.setRandom();
    const auto q = temp_path("rt.csv");
    save_embeddings(EmbeddingSet(m), q, FileFormat::csv);
    const auto back = load_embeddings(q, FileFormat::csv);
    CHECK((back.data() - m).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("format errors") {
    const auto p = temp_path("bad.emb");
    SUBCASE("wrong magic") {
        write_bytes(p, emb1_bytes(1, 1, {1}, "EMB2"));
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), FormatError);
    }
    SUBCASE("truncated header") {
        write_bytes(p, "EMB1\x01");
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), FormatError);
    }
    SUBCASE("payload shorter than header") {
        write_bytes(p, emb1_bytes(2, 2, {1, 2, 3}));
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), FormatError);
    }
    SUBCASE("payload longer than header") {
        write_bytes(p, emb1_bytes(1, 2, {1, 2, 3}));
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), FormatError);
    }
    SUBCASE("zero count") {
        write_bytes(p, emb1_bytes(0, 2, {}));
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), Error);
    }
    SUBCASE("non-finite payload") {
        write_bytes(p, emb1_bytes(1, 2, {1, std::numeric_limits<float>::quiet_NaN()}));
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::binary), ValidationError);
    }
}

TEST_CASE("csv errors") {
    const auto p = temp_path("bad.csv");
    SUBCASE("ragged rows") {
        write_bytes(p, "1,2\n3\n");
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::csv), ValidationError);
    }
    SUBCASE("non-finite") {
        write_bytes(p, "1,inf\n");
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::csv), ValidationError);
    }
    SUBCASE("garbage") {
        write_bytes(p, "1,abc\n");
        CHECK_THROWS_AS(load_embeddings(p, FileFormat::csv), Error);
    }
}

TEST_CASE("missing file is an io error") {
    CHECK_THROWS_AS(load_embeddings(temp_path("does_not_exist.emb"), FileFormat::binary), IoError);
}

TEST_CASE("set invariants") {
    CHECK_THROWS_AS(EmbeddingSet(MatrixF(0, 3)), ValidationError);
    CHECK_THROWS_AS(EmbeddingSet(MatrixF(2, 0)), ValidationError);
    CHECK_THROWS_AS(EmbeddingSet(MatrixF::Ones(2, 2), std::vector<std::int64_t>{1}), Error);
    MatrixF inf = MatrixF::Ones(1, 2);
    inf(0, 1) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(EmbeddingSet{inf}, ValidationError);
}

TEST_CASE("labels sidecar round trip") {
    const auto p = temp_path("labels.txt");
    const std::vector<std::int64_t> labels{0, 3, -1, 7};
    save_labels(labels, p);
    CHECK(load_labels(p) == labels);
}

TEST_CASE("slice, select and concat") {
    MatrixF m(4, 2);
    m << 0, 1, 2, 3, 4, 5, 6, 7;
    const EmbeddingSet s(m, std::vector<std::int64_t>{0, 1, 2, 3});
    const auto a = s.slice(1, 2);
    CHECK(a.data()(0, 0) == 2.0f);
    CHECK((*a.labels())[1] == 2);
    const auto b = s.select({3, 0});
    CHECK(b.data()(0, 1) == 7.0f);
    const auto c = concat({&a, &b});
    CHECK(c.count() == 4);
    CHECK(c.data()(2, 0) == 6.0f);
    CHECK_THROWS_AS(s.slice(3, 2), Error);
}

TEST_CASE("format names") {
    CHECK(parse_format("binary") == FileFormat::binary);
    CHECK(parse_format("csv") == FileFormat::csv);
    CHECK_THROWS_AS(parse_format("parquet"), ConfigError);
    CHECK(format_from_extension("a.emb") == FileFormat::binary);
    CHECK(format_from_extension("a.csv") == FileFormat::csv);
}

}
