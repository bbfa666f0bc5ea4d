#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cadet/contrastive.hpp"
#include "cadet/errors.hpp"
#include "cadet/synthetic.hpp"
#include "oracles.hpp"

using namespace cadet;
using namespace cadet::contrastive;
namespace fs = std::filesystem;

namespace {

// Direct evaluation of the loss formula, no stabilization.
double loss_oracle(const Matrix& z0, const Matrix& z1, double tau) {
    const auto a = oracle::rows_of(z0), b = oracle::rows_of(z1);
    double total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double den = 0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            den += std::exp(oracle::cosine(a[i], b[j]) / tau);
            if (j != i) den += std::exp(oracle::cosine(a[i], a[j]) / tau);
        }
        total += -std::log(std::exp(oracle::cosine(a[i], b[i]) / tau) / den);
    }
    return total;
}

// Layer-by-layer forward pass over std::vector.
std::vector<double> forward_oracle(const ContrastiveModel& m, const std::vector<double>& x, bool with_head) {
    std::vector<double> h = x;
    const std::size_t n = with_head ? 6 : 3;
    for (std::size_t l = 0; l < n; ++l) {
        const auto& w = m.layers[l].weight;
        std::vector<double> next(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            double s = m.layers[l].bias[r];
            for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * h[static_cast<std::size_t>(c)];
            next[static_cast<std::size_t>(r)] = (l == 2 || l == 5) ? s : std::tanh(s);
        }
        h = std::move(next);
    }
    return h;
}

ModelDims small_dims() { return {5, 7, 4, 6, 3}; }

fs::path temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "cadet_unit";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_SUITE("contrastive") {

TEST_CASE("single pair has zero loss") {
    const auto r = ntxent_loss(oracle::gaussian(1, 4, 1), oracle::gaussian(1, 4, 2), 0.1);
    CHECK(r.loss == 0.0);
    CHECK(r.grad_view0.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two orthogonal identical pairs at tau one") {
    Matrix z(2, 2);
    z << 1, 0, 0, 1;
    const double expected = 2.0 * -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    const auto r = ntxent_loss(z, z, 1.0);
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-14));
    CHECK(r.loss == doctest::Approx(1.1027).epsilon(1e-4));
}

TEST_CASE("loss matches the direct formula") {
    for (int t = 0; t < 20; ++t) {
        const Matrix z0 = oracle::gaussian(2 + t % 6, 3 + t % 4, 40 + t), z1 = oracle::gaussian(2 + t % 6, 3 + t % 4, 80 + t);
        const double tau = 0.1 + 0.1 * (t % 5);
        const double ref = loss_oracle(z0, z1, tau);
        CHECK(std::abs(ntxent_loss(z0, z1, tau).loss - ref) <= 1e-10 * std::max(1.0, ref));
    }
}

TEST_CASE("loss is stable at small temperature") {
    const Matrix z0 = oracle::gaussian(8, 5, 1), z1 = oracle::gaussian(8, 5, 2);
    const auto r = ntxent_loss(z0, z1, 1e-3);
    CHECK(std::isfinite(r.loss));
    CHECK(r.grad_view0.allFinite());
}

TEST_CASE("gradient w.r.t. embeddings matches central differences") {
    for (int t = 0; t < 10; ++t) {
        Matrix z0 = oracle::gaussian(2 + t % 5, 3 + t % 3, 100 + t), z1 = oracle::gaussian(2 + t % 5, 3 + t % 3, 200 + t);
        const double tau = 0.2 + 0.15 * (t % 4);
        const auto r = ntxent_loss(z0, z1, tau);
        const double h = 1e-5;
        for (int view = 0; view < 2; ++view) {
            Matrix& z = view == 0 ? z0 : z1;
            const Matrix& g = view == 0 ? r.grad_view0 : r.grad_view1;
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                const double keep = z.data()[i];
                z.data()[i] = keep + h;
                const double up = ntxent_loss(z0, z1, tau).loss;
                z.data()[i] = keep - h;
                const double down = ntxent_loss(z0, z1, tau).loss;
                z.data()[i] = keep;
                const double fd = (up - down) / (2 * h);
                CHECK(std::abs(fd - g.data()[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("loss properties") {
    const Matrix z0 = oracle::gaussian(5, 4, 7), z1 = oracle::gaussian(5, 4, 8);
    Matrix scaled = z0;
    scaled.row(2) *= 17.0;
    scaled.row(4) *= 0.01;
    CHECK(std::abs(ntxent_loss(scaled, z1, 0.3).loss - ntxent_loss(z0, z1, 0.3).loss) < 1e-10);
    CHECK(ntxent_loss(z0, z1, 0.3).loss >= 0.0);

    // Well separated positives versus positives no closer than negatives.
    const Matrix eye = Matrix::Identity(4, 4);
    Matrix ones = Matrix::Ones(4, 4);
    CHECK(ntxent_loss(ones, ones, 0.5).loss > ntxent_loss(eye, eye, 0.5).loss);

    CHECK_THROWS_AS(ntxent_loss(z0, oracle::gaussian(4, 4, 1), 0.3), ShapeError);
    CHECK_THROWS_AS(ntxent_loss(z0, z1, 0.0), ConfigError);
    Matrix zero = z0;
    zero.row(1).setZero();
    CHECK_THROWS_AS(ntxent_loss(zero, z1, 0.3), DegenerateInputError);
}

TEST_CASE("forward pass") {
    const auto m = ContrastiveModel::initialize(small_dims(), 0.1, 3);
    CHECK(m.layers.size() == 6);
    CHECK(m.parameter_count() == 5 * 7 + 7 + 7 * 7 + 7 + 7 * 4 + 4 + 4 * 6 + 6 + 6 * 6 + 6 + 6 * 3 + 3);
    const Matrix x = oracle::gaussian(4, 5, 9);
    const Matrix f = forward_batch(m, x, false), z = forward_batch(m, x, true);
    CHECK(f.cols() == 4);
    CHECK(z.cols() == 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto row = oracle::rows_of(x)[static_cast<std::size_t>(i)];
        const auto fo = forward_oracle(m, row, false), zo = forward_oracle(m, row, true);
        for (Eigen::Index j = 0; j < f.cols(); ++j) CHECK(std::abs(f(i, j) - fo[static_cast<std::size_t>(j)]) < 1e-10);
        for (Eigen::Index j = 0; j < z.cols(); ++j) CHECK(std::abs(z(i, j) - zo[static_cast<std::size_t>(j)]) < 1e-10);
    }
    CHECK(encoder_forward(m, x.row(1).transpose(), false) == f.row(1).transpose());

    ContrastiveModel zero = m;
    for (auto& l : zero.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    CHECK(forward_batch(zero, x, true).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(forward_batch(m, oracle::gaussian(2, 6, 1), false), ShapeError);
}

TEST_CASE("gradient w.r.t. every parameter through the model") {
    for (int t = 0; t < 3; ++t) {
        auto m = ContrastiveModel::initialize(small_dims(), 0.5, 10 + t);
        const Matrix v0 = oracle::gaussian(4, 5, 20 + t), v1 = oracle::gaussian(4, 5, 30 + t);
        auto loss_at = [&](const ContrastiveModel& mm) {
            return ntxent_loss(forward_batch(mm, v0, true), forward_batch(mm, v1, true), mm.tau).loss;
        };
        ForwardCache c0, c1;
        const Matrix z0 = forward_batch(m, v0, true, &c0), z1 = forward_batch(m, v1, true, &c1);
        const auto lr = ntxent_loss(z0, z1, m.tau);
        const auto g0 = backward(m, c0, lr.grad_view0).flatten(), g1 = backward(m, c1, lr.grad_view1).flatten();
        auto params = m.flatten();
        const double h = 1e-5;
        for (std::size_t p = 0; p < params.size(); ++p) {
            const double keep = params[p];
            params[p] = keep + h;
            m.unflatten(params);
            const double up = loss_at(m);
            params[p] = keep - h;
            m.unflatten(params);
            const double down = loss_at(m);
            params[p] = keep;
            const double fd = (up - down) / (2 * h);
            CHECK(std::abs(fd - (g0[p] + g1[p])) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
        m.unflatten(params);
    }
}

TEST_CASE("input gradient through the encoder") {
    const auto m = ContrastiveModel::initialize(small_dims(), 0.5, 4);
    Matrix x = oracle::gaussian(3, 5, 2);
    const Matrix w = oracle::gaussian(3, 4, 3);  // objective sum(w .* f(x))
    ForwardCache c;
    forward_batch(m, x, false, &c);
    Matrix dx;
    backward(m, c, w, &dx);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = (forward_batch(m, x, false).array() * w.array()).sum();
        x.data()[i] = keep - h;
        const double down = (forward_batch(m, x, false).array() * w.array()).sum();
        x.data()[i] = keep;
        CHECK(std::abs((up - down) / (2 * h) - dx.data()[i]) < 1e-6);
    }
}

TEST_CASE("training") {
    synthetic::SyntheticSpec spec;
    spec.n_clusters = 3;
    spec.dim = 6;
    spec.seed = 2;
    spec.cluster_separation = 6;
    const Matrix data = synthetic::generate(spec, 96, 1).x;
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.epochs = 15;
    cfg.seed = 5;
    cfg.augmentation = {0.3, 0.8, 1.2, 0.1, 0.2};
    cfg.dims = {6, 16, 8, 8, 4};

    SUBCASE("deterministic and improving") {
        const auto a = train(data, cfg);
        const auto b = train(data, cfg);
        CHECK(a.model.flatten() == b.model.flatten());
        CHECK(a.epoch_loss.size() == 15);
        CHECK(a.probe_loss_end <= a.probe_loss_start);
    }
    SUBCASE("zero learning rate keeps the initial parameters") {
        cfg.learning_rate = 0.0;
        const auto r = train(data, cfg);
        ModelDims d = cfg.dims;
        d.input = 6;
        CHECK(r.model.flatten() == ContrastiveModel::initialize(d, cfg.tau, derive_seed(cfg.seed, {0x494e4954ULL})).flatten());
        CHECK(r.probe_loss_end == r.probe_loss_start);
    }
    SUBCASE("divergence is reported") {
        cfg.learning_rate = 1e300;
        CHECK_THROWS_AS(train(data, cfg), TrainingFailure);
    }
    SUBCASE("config errors") {
        cfg.batch_size = 200;
        CHECK_THROWS_AS(train(data, cfg), InsufficientSamplesError);
        cfg.batch_size = 1;
        CHECK_THROWS_AS(train(data, cfg), ConfigError);
    }
}

TEST_CASE("model checkpoint round trip") {
    const auto m = ContrastiveModel::initialize(small_dims(), 0.25, 8);
    const auto p = temp_path("model.ctm");
    save_model(m, p);
    const auto back = load_model(p);
    CHECK(back.flatten() == m.flatten());
    CHECK(back.tau == 0.25);
    CHECK(back.dims.feature == 4);
    std::ifstream f(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();
    CHECK(bytes.substr(0, 4) == "CTM1");
    CHECK(bytes.size() == 4 + 4 * 3 + 6 * 8 + 8 + 8 * m.parameter_count());
    const auto q = temp_path("model_bad.ctm");
    std::ofstream(q, std::ios::binary) << bytes.substr(0, bytes.size() - 8);
    CHECK_THROWS_AS(load_model(q), FormatError);
}

TEST_CASE("feature encoder copies the model") {
    auto m = ContrastiveModel::initialize(small_dims(), 0.25, 8);
    const auto enc = feature_encoder(m);
    const Vector x = oracle::gaussian(1, 5, 1).row(0).transpose();
    const Vector before = enc(x);
    m.layers[0].weight.setZero();
    CHECK(enc(x) == before);
}

}
