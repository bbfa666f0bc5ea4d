#pragma once

#include <string>

#include "cadet/embeddings_io.hpp"
#include "cadet/rng.hpp"

namespace cadet::synthetic {

/// Parametric view distribution for vector data. Applied in the fixed order
/// scale -> rotate -> noise -> dropout.
struct AugmentationSpec {
    double noise_sigma = 0.0;         // additive isotropic Gaussian noise
    double scale_lo = 1.0;            // multiplicative scale ~ U[lo, hi]
    double scale_hi = 1.0;
    double dropout_prob = 0.0;        // per-coordinate zeroing
    double rotation_angle_max = 0.0;  // radians; one random coordinate plane per draw

    void validate() const;
    bool is_identity() const;

    std::string to_json() const;
    static AugmentationSpec from_json(const std::string& text);
};

/// Draws one transformation from `spec` and applies it to x.
Vector augment(const Vector& x, const AugmentationSpec& spec, Rng& rng);

}  // namespace cadet::synthetic
