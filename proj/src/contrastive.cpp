#include "cadet/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "cadet/errors.hpp"
#include "cadet/kernels.hpp"
#include "cadet/rng.hpp"

namespace cadet::contrastive {

namespace {

constexpr char kModelMagic[4] = {'C', 'T', 'M', '1'};
constexpr std::uint32_t kModelVersion = 1;

bool has_activation(std::size_t layer) {
    // Last layer of the encoder (2) and of the head (5) are linear.
    return layer != ContrastiveModel::kEncoderLayers - 1 &&
           layer != ContrastiveModel::kEncoderLayers + ContrastiveModel::kHeadLayers - 1;
}

std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const ModelDims& d) {
    return {{d.input, d.hidden},         {d.hidden, d.hidden},         {d.hidden, d.feature},
            {d.feature, d.head_hidden}, {d.head_hidden, d.head_hidden}, {d.head_hidden, d.projection}};
}

/// Unit rows plus the original norms.
std::pair<Matrix, Vector> unit_rows(const Matrix& z) {
    Vector norms = z.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
        if (!(norms[i] >= kernels::kZeroNormThreshold)) {
            throw DegenerateInputError("contrastive loss: embedding " + std::to_string(i) + " has zero norm");
        }
    }
    return {norms.asDiagonal().inverse() * z, norms};
}

/// Gradient w.r.t. z from the gradient w.r.t. u = z / |z|.
Matrix through_normalization(const Matrix& du, const Matrix& u, const Vector& norms) {
    Matrix dz(du.rows(), du.cols());
    for (Eigen::Index i = 0; i < du.rows(); ++i) {
        dz.row(i) = (du.row(i) - du.row(i).dot(u.row(i)) * u.row(i)) / norms[i];
    }
    return dz;
}

Matrix augment_rows(const Matrix& x, const std::vector<std::size_t>& rows, const synthetic::AugmentationSpec& spec,
                    Rng& rng) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) =
            synthetic::augment(x.row(static_cast<Eigen::Index>(rows[r])).transpose(), spec, rng).transpose();
    }
    return out;
}

double batch_loss(const ContrastiveModel& model, const Matrix& v0, const Matrix& v1) {
    return ntxent_loss(forward_batch(model, v0, true), forward_batch(model, v1, true), model.tau).loss;
}

}  // namespace

ContrastiveModel ContrastiveModel::initialize(const ModelDims& dims, double tau, std::uint64_t seed) {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    ContrastiveModel m;
    m.dims = dims;
    m.tau = tau;
    std::size_t idx = 0;
    for (const auto& [in, out] : layer_shapes(dims)) {
        if (in == 0 || out == 0) throw ConfigError("model dims must be positive");
        auto rng = make_rng(seed, {0x4c4159ULL, idx++});  // "LAY"
        std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(in + out)));
        Dense layer{Matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                    Vector::Zero(static_cast<Eigen::Index>(out))};
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = g(rng);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

std::size_t ContrastiveModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

std::vector<double> ContrastiveModel::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
        out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
        out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return out;
}

void ContrastiveModel::unflatten(std::span<const double> params) {
    if (params.size() != parameter_count()) throw ShapeError("parameter vector has the wrong length");
    std::size_t at = 0;
    for (auto& l : layers) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), l.weight.size(), l.weight.data());
        at += static_cast<std::size_t>(l.weight.size());
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.data());
        at += static_cast<std::size_t>(l.bias.size());
    }
}

bool ContrastiveModel::all_finite() const {
    return std::all_of(layers.begin(), layers.end(),
                       [](const Dense& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

std::vector<double> Gradients::flatten() const {
    std::vector<double> out;
    for (const auto& l : layers) {
        out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
        out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return out;
}

Matrix forward_batch(const ContrastiveModel& model, const Matrix& x, bool with_head, ForwardCache* cache) {
    if (x.cols() != static_cast<Eigen::Index>(model.dims.input)) {
        throw ShapeError("encoder input dim " + std::to_string(x.cols()) + ", model expects " +
                         std::to_string(model.dims.input));
    }
    const std::size_t n_layers =
        with_head ? ContrastiveModel::kEncoderLayers + ContrastiveModel::kHeadLayers : ContrastiveModel::kEncoderLayers;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
        cache->with_head = with_head;
    }
    Matrix h = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = model.layers[l];
        Matrix pre = h * layer.weight.transpose();
        pre.rowwise() += layer.bias.transpose();
        if (cache) cache->inputs.push_back(std::move(h));
        h = has_activation(l) ? Matrix(pre.array().tanh()) : pre;
        if (cache) cache->pre.push_back(std::move(pre));
    }
    return h;
}

Vector encoder_forward(const ContrastiveModel& model, const Vector& x, bool with_head) {
    if (x.size() != static_cast<Eigen::Index>(model.dims.input)) {
        throw ShapeError("encoder input dim " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(model.dims.input));
    }
    return forward_batch(model, x.transpose(), with_head).row(0).transpose();
}

Gradients backward(const ContrastiveModel& model, const ForwardCache& cache, const Matrix& d_out, Matrix* dx) {
    Gradients g;
    g.layers.reserve(model.layers.size());
    for (const auto& l : model.layers) {
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    Matrix d = d_out;
    for (std::size_t l = cache.pre.size(); l-- > 0;) {
        if (has_activation(l)) {
            const Matrix t = cache.pre[l].array().tanh();
            d = (d.array() * (1.0 - t.array().square())).matrix();
        }
        g.layers[l].weight = d.transpose() * cache.inputs[l];
        g.layers[l].bias = d.colwise().sum().transpose();
        if (l > 0 || dx) d = d * model.layers[l].weight;
    }
    if (dx) *dx = std::move(d);
    return g;
}

LossResult ntxent_loss(const Matrix& z0, const Matrix& z1, double tau) {
    if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw ShapeError("contrastive loss: view shapes differ");
    if (z0.rows() < 1) throw InsufficientSamplesError("contrastive loss needs at least one pair");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    const Eigen::Index n = z0.rows();
    const auto [u0, n0] = unit_rows(z0);
    const auto [u1, n1] = unit_rows(z1);
    const Matrix s01 = (u0 * u1.transpose()) / tau;
    const Matrix s00 = (u0 * u0.transpose()) / tau;

    // a = d loss / d s01, b = d loss / d s00 (both on the 1/tau scale).
    Matrix a(n, n), b(n, n);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = s01.row(i).maxCoeff();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) m = std::max(m, s00(i, j));
        double total = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            total += std::exp(s01(i, j) - m);
            if (j != i) total += std::exp(s00(i, j) - m);
        }
        const double lse = m + std::log(total);
        loss += lse - s01(i, i);
        for (Eigen::Index j = 0; j < n; ++j) {
            a(i, j) = std::exp(s01(i, j) - lse) - (i == j ? 1.0 : 0.0);
            b(i, j) = j == i ? 0.0 : std::exp(s00(i, j) - lse);
        }
    }
    a /= tau;
    b /= tau;

    const Matrix du0 = a * u1 + b * u0 + b.transpose() * u0;
    const Matrix du1 = a.transpose() * u0;
    return {std::max(loss, 0.0), through_normalization(du0, u0, n0), through_normalization(du1, u1, n1)};
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    augmentation.validate();
}

TrainResult train(const Matrix& dataset, const TrainConfig& config) {
    ModelDims dims = config.dims;
    dims.input = static_cast<std::size_t>(dataset.cols());
    return train_from(ContrastiveModel::initialize(dims, config.tau, derive_seed(config.seed, {0x494e4954ULL})),
                      dataset, config);
}

TrainResult train_from(ContrastiveModel model, const Matrix& dataset, const TrainConfig& config) {
    config.validate();
    const auto n = static_cast<std::size_t>(dataset.rows());
    if (n < config.batch_size) {
        throw InsufficientSamplesError("dataset of " + std::to_string(n) + " rows is smaller than batch_size " +
                                       std::to_string(config.batch_size));
    }

    std::vector<std::size_t> probe_rows(config.batch_size);
    std::iota(probe_rows.begin(), probe_rows.end(), std::size_t{0});
    auto probe_rng = make_rng(config.seed, {0x50524f42ULL});  // "PROB"
    const Matrix probe0 = augment_rows(dataset, probe_rows, config.augmentation, probe_rng);
    const Matrix probe1 = augment_rows(dataset, probe_rows, config.augmentation, probe_rng);

    TrainResult result;
    result.probe_loss_start = batch_loss(model, probe0, probe1) / static_cast<double>(config.batch_size);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t steps = n / config.batch_size;
    const double step_scale = config.learning_rate / static_cast<double>(config.batch_size);
    std::vector<double> params = model.flatten();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        auto shuffle_rng = make_rng(config.seed, {0x45504f43ULL, epoch});  // "EPOC"
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_total = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(step * config.batch_size),
                                                order.begin() +
                                                    static_cast<std::ptrdiff_t>((step + 1) * config.batch_size));
            auto view_rng = make_rng(config.seed, {0x56494557ULL, epoch, step});  // "VIEW"
            const Matrix v0 = augment_rows(dataset, rows, config.augmentation, view_rng);
            const Matrix v1 = augment_rows(dataset, rows, config.augmentation, view_rng);

            ForwardCache c0, c1;
            const Matrix z0 = forward_batch(model, v0, true, &c0);
            const Matrix z1 = forward_batch(model, v1, true, &c1);
            LossResult loss;
            try {
                loss = ntxent_loss(z0, z1, model.tau);
            } catch (const DegenerateInputError&) {
                throw TrainingFailure("embeddings collapsed at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
            if (!std::isfinite(loss.loss)) {
                throw TrainingFailure("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
            epoch_total += loss.loss;
            if (config.learning_rate == 0.0) continue;

            const auto g0 = backward(model, c0, loss.grad_view0).flatten();
            const auto g1 = backward(model, c1, loss.grad_view1).flatten();
            for (std::size_t p = 0; p < params.size(); ++p) params[p] -= step_scale * (g0[p] + g1[p]);
            model.unflatten(params);
            if (!model.all_finite()) {
                throw TrainingFailure("non-finite parameters after epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(steps * config.batch_size));
    }

    result.probe_loss_end = batch_loss(model, probe0, probe1) / static_cast<double>(config.batch_size);
    result.model = std::move(model);
    return result;
}

detector::Encoder feature_encoder(const ContrastiveModel& model) {
    auto shared = std::make_shared<const ContrastiveModel>(model);
    return [shared](const Vector& x) { return encoder_forward(*shared, x, false); };
}

void save_model(const ContrastiveModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kModelMagic, 4);
    le::put_u32(out, kModelVersion);
    le::put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
    le::put_u32(out, static_cast<std::uint32_t>(ContrastiveModel::kEncoderLayers));
    for (const auto& l : model.layers) {
        le::put_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
        le::put_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    }
    le::put_f64(out, model.tau);
    for (const auto& l : model.layers) {
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) le::put_f64(out, l.weight.data()[i]);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) le::put_f64(out, l.bias[i]);
    }
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

ContrastiveModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("bad magic, expected CTM1");
    if (le::get_u32(in) != kModelVersion) throw FormatError("unsupported model checkpoint version");
    const auto n_layers = le::get_u32(in);
    const auto n_enc = le::get_u32(in);
    if (n_layers != ContrastiveModel::kEncoderLayers + ContrastiveModel::kHeadLayers ||
        n_enc != ContrastiveModel::kEncoderLayers) {
        throw FormatError("checkpoint layer layout does not match the 3+3 encoder/head model");
    }
    std::vector<std::pair<std::size_t, std::size_t>> shapes(n_layers);
    for (auto& [i, o] : shapes) {
        i = le::get_u32(in);
        o = le::get_u32(in);
    }
    ContrastiveModel m;
    m.dims = {shapes[0].first, shapes[0].second, shapes[2].second, shapes[3].second, shapes[5].second};
    if (layer_shapes(m.dims) != shapes) throw FormatError("checkpoint layer shapes are inconsistent");
    m.tau = le::get_f64(in);
    if (!(m.tau > 0.0)) throw FormatError("checkpoint tau must be > 0");
    for (const auto& [i, o] : shapes) {
        Dense l{Matrix(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)),
                Vector(static_cast<Eigen::Index>(o))};
        for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = le::get_f64(in);
        for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = le::get_f64(in);
        m.layers.push_back(std::move(l));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after model parameters");
    if (!m.all_finite()) throw FormatError("checkpoint holds non-finite parameters");
    return m;
}

}  // namespace cadet::contrastive
