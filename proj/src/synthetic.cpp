#include "cadet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include <json.hpp>

#include "cadet/errors.hpp"
#include "cadet/rng.hpp"

namespace cadet::synthetic {

namespace {

constexpr std::uint64_t kGeometryTag = 0x47454f4dULL;  // "GEOM"
constexpr std::uint64_t kShiftTag = 0x53484654ULL;     // "SHFT"
constexpr std::uint64_t kSampleTag = 0x53414d50ULL;    // "SAMP"

Vector random_unit(Rng& rng, std::size_t dim) {
    std::normal_distribution<double> g;
    Vector v(static_cast<Eigen::Index>(dim));
    do {
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    } while (v.norm() == 0.0);
    return v.normalized();
}

/// Orthonormal columns from a QR factorization of a seeded Gaussian matrix.
Matrix random_basis(const SyntheticSpec& spec) {
    auto rng = make_rng(spec.seed, {kGeometryTag});
    std::normal_distribution<double> g;
    const auto d = static_cast<Eigen::Index>(spec.dim);
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return Matrix(qr.householderQ());
}

Vector offset_vector(const SyntheticSpec& spec, const Matrix& basis) {
    Vector o = Vector::Zero(static_cast<Eigen::Index>(spec.dim));
    if (spec.center_offset == 0.0) return o;
    Vector dir;
    if (spec.n_clusters < spec.dim) {
        dir = basis.col(static_cast<Eigen::Index>(spec.n_clusters));
    } else {
        auto rng = make_rng(spec.seed, {kGeometryTag, 1});
        dir = random_unit(rng, spec.dim);
    }
    return spec.center_offset * spec.within_sigma * dir;
}

Dataset sample(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream, std::optional<std::size_t> only,
               const Vector& extra_shift) {
    spec.validate();
    const Matrix means = cluster_means(spec);
    auto rng = make_rng(spec.seed, {kSampleTag, stream, only ? *only + 1 : 0});
    std::normal_distribution<double> g(0.0, spec.within_sigma);
    std::normal_distribution<double> ambient(0.0, spec.ambient_sigma);
    const auto k = static_cast<Eigen::Index>(spec.intrinsic_dim);
    const Matrix basis = k > 0 ? random_basis(spec) : Matrix();
    Vector z(k);
    auto label_rng = make_rng(spec.seed, {kSampleTag, stream, 0x4c41424cULL});  // "LABL"
    std::uniform_int_distribution<std::size_t> pick(0, spec.n_clusters - 1);
    Dataset ds;
    ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = only ? *only : pick(label_rng);
        ds.labels[i] = static_cast<std::int64_t>(c);
        auto row = ds.x.row(static_cast<Eigen::Index>(i));
        row = means.row(static_cast<Eigen::Index>(c)) + extra_shift.transpose();
        if (k == 0) {
            for (Eigen::Index j = 0; j < row.size(); ++j) row[j] += g(rng);
            continue;
        }
        for (Eigen::Index j = 0; j < k; ++j) z[j] = g(rng);
        row += (basis.leftCols(k) * z).transpose();
        if (spec.ambient_sigma > 0.0)
            for (Eigen::Index j = 0; j < row.size(); ++j) row[j] += ambient(rng);
    }
    return ds;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (!(within_sigma > 0.0)) throw ConfigError("within_sigma must be > 0");
    if (!(cluster_separation >= 0.0)) throw ConfigError("cluster_separation must be >= 0");
    if (intrinsic_dim > dim) throw ConfigError("intrinsic_dim must be <= dim");
    if (!(ambient_sigma >= 0.0)) throw ConfigError("ambient_sigma must be >= 0");
}

std::string SyntheticSpec::to_json() const {
    return nlohmann::json{{"n_clusters", n_clusters},
                          {"dim", dim},
                          {"cluster_separation", cluster_separation},
                          {"within_sigma", within_sigma},
                          {"center_offset", center_offset},
                          {"intrinsic_dim", intrinsic_dim},
                          {"ambient_sigma", ambient_sigma},
                          {"seed", seed}}
        .dump();
}

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("synthetic spec is not a JSON object");
    SyntheticSpec s;
    try {
        s.n_clusters = j.value("n_clusters", s.n_clusters);
        s.dim = j.value("dim", s.dim);
        s.cluster_separation = j.value("cluster_separation", s.cluster_separation);
        s.within_sigma = j.value("within_sigma", s.within_sigma);
        s.center_offset = j.value("center_offset", s.center_offset);
        s.intrinsic_dim = j.value("intrinsic_dim", s.intrinsic_dim);
        s.ambient_sigma = j.value("ambient_sigma", s.ambient_sigma);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

Matrix cluster_means(const SyntheticSpec& spec) {
    spec.validate();
    const Matrix basis = random_basis(spec);
    const Vector offset = offset_vector(spec, basis);
    // Orthogonal directions at radius r are r * sqrt(2) apart.
    const double radius = spec.cluster_separation * spec.within_sigma / std::sqrt(2.0);
    Matrix means(static_cast<Eigen::Index>(spec.n_clusters), static_cast<Eigen::Index>(spec.dim));
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
        Vector dir;
        if (c < spec.dim) {
            dir = basis.col(static_cast<Eigen::Index>(c));
        } else {
            auto rng = make_rng(spec.seed, {kGeometryTag, 2, c});
            dir = random_unit(rng, spec.dim);
        }
        means.row(static_cast<Eigen::Index>(c)) = (radius * dir + offset).transpose();
    }
    return means;
}

Dataset generate(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream) {
    if (n < 1) throw InsufficientSamplesError("generate needs n >= 1");
    return sample(spec, n, stream, std::nullopt, Vector::Zero(static_cast<Eigen::Index>(spec.dim)));
}

Dataset generate_cluster(const SyntheticSpec& spec, std::size_t cluster, std::size_t n, std::uint64_t stream) {
    if (cluster >= spec.n_clusters) throw ConfigError("cluster index out of range");
    if (n < 1) throw InsufficientSamplesError("generate needs n >= 1");
    return sample(spec, n, stream, cluster, Vector::Zero(static_cast<Eigen::Index>(spec.dim)));
}

Vector shift_direction(const SyntheticSpec& spec) {
    auto rng = make_rng(spec.seed, {kShiftTag});
    return random_unit(rng, spec.dim);
}

Dataset generate_shifted(const SyntheticSpec& spec, std::size_t n, double shift_sigmas, std::uint64_t stream) {
    if (n < 1) throw InsufficientSamplesError("generate needs n >= 1");
    return sample(spec, n, stream, std::nullopt, shift_sigmas * spec.within_sigma * shift_direction(spec));
}

detector::ViewTransform make_view_transform(const AugmentationSpec& spec) {
    spec.validate();
    return {[spec](const Vector& x, Rng& rng) { return augment(x, spec, rng); }, spec.to_json()};
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
    if (kind == AttackKind::pgd) {
        if (n_steps < 1) throw ConfigError("pgd needs n_steps >= 1");
        if (!(step_size > 0.0)) throw ConfigError("pgd needs step_size > 0");
    }
}

std::string AttackSpec::to_json() const {
    return nlohmann::json{{"kind", kind == AttackKind::fgsm ? "fgsm" : "pgd"},
                          {"epsilon", epsilon},
                          {"step_size", step_size},
                          {"n_steps", n_steps}}
        .dump();
}

AttackSpec AttackSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("attack spec is not a JSON object");
    AttackSpec s;
    try {
        const auto kind = j.value("kind", std::string("fgsm"));
        if (kind == "fgsm") {
            s.kind = AttackKind::fgsm;
        } else if (kind == "pgd") {
            s.kind = AttackKind::pgd;
        } else {
            throw ConfigError("unknown attack kind '" + kind + "'");
        }
        s.epsilon = j.value("epsilon", s.epsilon);
        s.step_size = j.value("step_size", s.step_size);
        s.n_steps = j.value("n_steps", s.n_steps);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad attack spec: ") + e.what());
    }
    s.validate();
    return s;
}

LinearProbe train_probe(const contrastive::ContrastiveModel& model, const Matrix& x,
                        const std::vector<std::int64_t>& labels, const ProbeTrainConfig& config) {
    if (labels.size() != static_cast<std::size_t>(x.rows())) throw ShapeError("one label per row required");
    if (labels.empty()) throw InsufficientSamplesError("probe needs training samples");
    const auto n_classes = static_cast<Eigen::Index>(*std::max_element(labels.begin(), labels.end()) + 1);
    if (*std::min_element(labels.begin(), labels.end()) < 0) throw ValidationError("labels must be >= 0");

    const Matrix f = contrastive::forward_batch(model, x, false);
    LinearProbe p{Matrix::Zero(n_classes, f.cols()), Vector::Zero(n_classes)};
    const auto n = static_cast<double>(f.rows());
    for (std::size_t e = 0; e < config.epochs; ++e) {
        Matrix logits = f * p.weight.transpose();
        logits.rowwise() += p.bias.transpose();
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const double m = logits.row(i).maxCoeff();
            logits.row(i) = (logits.row(i).array() - m).exp().matrix();
            logits.row(i) /= logits.row(i).sum();
            logits(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
        }
        p.weight -= config.learning_rate / n * (logits.transpose() * f);
        p.bias -= config.learning_rate / n * logits.colwise().sum().transpose();
    }
    return p;
}

std::int64_t predict(const contrastive::ContrastiveModel& model, const LinearProbe& probe, const Vector& x) {
    const Vector logits = probe.weight * contrastive::encoder_forward(model, x, false) + probe.bias;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return best;
}

Vector input_gradient(const contrastive::ContrastiveModel& model, const LinearProbe& probe, const Vector& x,
                      std::int64_t label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probe.n_classes()) throw ConfigError("label outside probe classes");
    contrastive::ForwardCache cache;
    const Matrix f = contrastive::forward_batch(model, x.transpose(), false, &cache);
    Vector logits = probe.weight * f.row(0).transpose() + probe.bias;
    Vector prob = (logits.array() - logits.maxCoeff()).exp();
    prob /= prob.sum();
    prob[static_cast<Eigen::Index>(label)] -= 1.0;
    const Matrix d_feat = prob.transpose() * probe.weight;
    Matrix dx;
    contrastive::backward(model, cache, d_feat, &dx);
    return dx.row(0).transpose();
}

Vector project_linf(const Vector& candidate, const Vector& x, double epsilon) {
    Vector out(candidate.size());
    for (Eigen::Index i = 0; i < candidate.size(); ++i) {
        double c = std::clamp(candidate[i], x[i] - epsilon, x[i] + epsilon);
        while (std::abs(c - x[i]) > epsilon) c = std::nextafter(c, x[i]);
        out[i] = c;
    }
    return out;
}

Vector attack(const Vector& x, std::int64_t label, const contrastive::ContrastiveModel& model,
              const LinearProbe& probe, const AttackSpec& spec) {
    spec.validate();
    if (spec.epsilon == 0.0) return x;
    auto signed_step = [&](const Vector& at, double size) {
        const Vector g = input_gradient(model, probe, at, label);
        if (!g.allFinite()) throw ConfigError("attack gradient is not finite");
        return Vector(at + size * g.array().sign().matrix());
    };
    if (spec.kind == AttackKind::fgsm) return project_linf(signed_step(x, spec.epsilon), x, spec.epsilon);

    Vector cur = x;
    for (std::size_t t = 0; t < spec.n_steps; ++t) cur = project_linf(signed_step(cur, spec.step_size), x, spec.epsilon);
    return cur;
}

}  // namespace cadet::synthetic
