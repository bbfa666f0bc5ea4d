#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cadet/augment.hpp"
#include "cadet/contrastive.hpp"
#include "cadet/embeddings_io.hpp"

namespace cadet::synthetic {

/// Isotropic Gaussian mixture. Cluster means sit on mutually orthogonal
/// directions (random when n_clusters > dim) at a common radius chosen so
/// that neighbouring means are cluster_separation * within_sigma apart.
/// The mean geometry depends on the seed only, never on n.
struct SyntheticSpec {
    std::size_t n_clusters = 1;
    std::size_t dim = 16;
    double cluster_separation = 10.0;  // in units of within_sigma
    double within_sigma = 1.0;
    std::uint64_t seed = 0;
    /// Common offset of the whole mixture along a fixed random direction,
    /// in units of within_sigma. Keeps samples away from the origin where
    /// the cosine kernel is ill-conditioned.
    double center_offset = 0.0;
    /// When > 0, within-cluster variation is confined to a fixed random
    /// subspace of this dimension (spanned together with the mean
    /// directions) and every coordinate additionally gets isotropic noise of
    /// standard deviation ambient_sigma. 0 means isotropic in all of dim.
    std::size_t intrinsic_dim = 0;
    double ambient_sigma = 0.0;

    void validate() const;
    std::string to_json() const;
    static SyntheticSpec from_json(const std::string& text);
};

struct Dataset {
    Matrix x;
    std::vector<std::int64_t> labels;
};

/// Cluster means, one per row.
Matrix cluster_means(const SyntheticSpec& spec);

/// n i.i.d. draws from the mixture (uniform cluster weights). Deterministic in
/// (spec, stream): different streams are independent draws from the same
/// mixture.
Dataset generate(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream = 0);

/// n samples from one cluster only.
Dataset generate_cluster(const SyntheticSpec& spec, std::size_t cluster, std::size_t n, std::uint64_t stream = 0);

/// Unit direction used by generate_shifted (fixed by the seed).
Vector shift_direction(const SyntheticSpec& spec);

/// The mixture translated by shift_sigmas * within_sigma along
/// shift_direction(spec).
Dataset generate_shifted(const SyntheticSpec& spec, std::size_t n, double shift_sigmas, std::uint64_t stream = 0);

/// The augmentation family as a CADet transformation distribution.
detector::ViewTransform make_view_transform(const AugmentationSpec& spec);

enum class AttackKind { fgsm, pgd };

struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    double epsilon = 0.05;  // sup-norm budget
    double step_size = 0.0;
    std::size_t n_steps = 1;

    void validate() const;
    std::string to_json() const;
    static AttackSpec from_json(const std::string& text);
};

/// Softmax classifier on encoder features, logits = W f + b.
struct LinearProbe {
    Matrix weight;  // classes x feature
    Vector bias;

    std::size_t n_classes() const { return static_cast<std::size_t>(weight.rows()); }
};

struct ProbeTrainConfig {
    std::size_t epochs = 200;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
};

/// Full-batch gradient descent on cross-entropy over encoder features.
LinearProbe train_probe(const contrastive::ContrastiveModel& model, const Matrix& x,
                        const std::vector<std::int64_t>& labels, const ProbeTrainConfig& config = {});

std::int64_t predict(const contrastive::ContrastiveModel& model, const LinearProbe& probe, const Vector& x);

/// d cross-entropy(probe(encoder(x)), label) / d x.
Vector input_gradient(const contrastive::ContrastiveModel& model, const LinearProbe& probe, const Vector& x,
                      std::int64_t label);

/// Sup-norm bounded attack that increases the probe's loss on the true
/// label. FGSM is one signed step of size epsilon; PGD takes n_steps
/// signed steps of step_size from x, projecting onto the epsilon ball after
/// each. The result never moves a coordinate by more than epsilon.
Vector attack(const Vector& x, std::int64_t label, const contrastive::ContrastiveModel& model,
              const LinearProbe& probe, const AttackSpec& spec);

/// Projects candidate onto the sup-norm ball of radius epsilon around x,
/// with the bound holding exactly in floating point.
Vector project_linf(const Vector& candidate, const Vector& x, double epsilon);

}  // namespace cadet::synthetic
