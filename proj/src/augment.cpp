#include "cadet/augment.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "cadet/errors.hpp"

namespace cadet::synthetic {

void AugmentationSpec::validate() const {
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) throw ConfigError("scale range needs 0 < lo <= hi");
    if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) throw ConfigError("dropout_prob must lie in [0, 1]");
    if (!(rotation_angle_max >= 0.0)) throw ConfigError("rotation_angle_max must be >= 0");
}

bool AugmentationSpec::is_identity() const {
    return noise_sigma == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 && dropout_prob == 0.0 &&
           rotation_angle_max == 0.0;
}

std::string AugmentationSpec::to_json() const {
    nlohmann::json j{{"kind", "vector_augmentation"},
                     {"noise_sigma", noise_sigma},
                     {"scale_range", {scale_lo, scale_hi}},
                     {"dropout_prob", dropout_prob},
                     {"rotation_angle_max", rotation_angle_max}};
    return j.dump();
}

AugmentationSpec AugmentationSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("augmentation spec is not a JSON object");
    AugmentationSpec s;
    try {
        s.noise_sigma = j.value("noise_sigma", 0.0);
        if (j.contains("scale_range")) {
            s.scale_lo = j["scale_range"].at(0).get<double>();
            s.scale_hi = j["scale_range"].at(1).get<double>();
        }
        s.dropout_prob = j.value("dropout_prob", 0.0);
        s.rotation_angle_max = j.value("rotation_angle_max", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad augmentation spec: ") + e.what());
    }
    s.validate();
    return s;
}

Vector augment(const Vector& x, const AugmentationSpec& spec, Rng& rng) {
    Vector v = x;
    const auto d = v.size();

    if (spec.scale_lo != 1.0 || spec.scale_hi != 1.0) {
        const double s = spec.scale_lo == spec.scale_hi
                             ? spec.scale_lo
                             : std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng);
        v *= s;
    }

    if (spec.rotation_angle_max > 0.0 && d >= 2) {
        std::uniform_int_distribution<Eigen::Index> pick(0, d - 1);
        const Eigen::Index a = pick(rng);
        Eigen::Index b = pick(rng);
        while (b == a) b = pick(rng);
        const double theta = std::uniform_real_distribution<double>(-spec.rotation_angle_max, spec.rotation_angle_max)(rng);
        const double c = std::cos(theta), s = std::sin(theta);
        const double va = v[a], vb = v[b];
        v[a] = c * va - s * vb;
        v[b] = s * va + c * vb;
    }

    if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (Eigen::Index i = 0; i < d; ++i) v[i] += noise(rng);
    }

    if (spec.dropout_prob > 0.0) {
        std::bernoulli_distribution drop(spec.dropout_prob);
        for (Eigen::Index i = 0; i < d; ++i)
            if (drop(rng)) v[i] = 0.0;
    }
    return v;
}

}  // namespace cadet::synthetic
