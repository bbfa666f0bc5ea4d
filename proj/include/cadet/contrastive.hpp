#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cadet/augment.hpp"
#include "cadet/cadet.hpp"
#include "cadet/embeddings_io.hpp"

namespace cadet::contrastive {

inline constexpr double kDefaultTau = 0.1;

struct ModelDims {
    std::size_t input = 16;
    std::size_t hidden = 64;
    std::size_t feature = 32;
    std::size_t head_hidden = 32;
    std::size_t projection = 16;
};

/// Fully connected layer y = W x + b with W stored out x in.
struct Dense {
    Matrix weight;
    Vector bias;
};

/// Three-layer tanh perceptron encoder (input -> hidden -> hidden -> feature)
/// followed by a three-layer projection head (feature -> head_hidden ->
/// head_hidden -> projection). The last layer of each block is linear.
/// Detection uses encoder features; the head only serves training.
struct ContrastiveModel {
    ModelDims dims;
    double tau = kDefaultTau;
    std::vector<Dense> layers;  // encoder layers first, then head layers

    static constexpr std::size_t kEncoderLayers = 3;
    static constexpr std::size_t kHeadLayers = 3;

    /// Scaled Gaussian (Xavier) weights, zero biases.
    static ContrastiveModel initialize(const ModelDims& dims, double tau, std::uint64_t seed);

    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> params);
    bool all_finite() const;
};

/// Per-layer inputs and pre-activations from a batch forward pass.
struct ForwardCache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;
    bool with_head = false;
};

/// Rows of X are samples. Returns features (with_head = false) or
/// projections (with_head = true).
Matrix forward_batch(const ContrastiveModel& model, const Matrix& x, bool with_head, ForwardCache* cache = nullptr);
Vector encoder_forward(const ContrastiveModel& model, const Vector& x, bool with_head);

/// Parameter gradients laid out like ContrastiveModel::layers (only the
/// layers touched by the cached pass are nonzero).
struct Gradients {
    std::vector<Dense> layers;
    std::vector<double> flatten() const;
};

/// Back-propagates d(loss)/d(output) through the cached pass. Writes the
/// input gradient to *dx when given.
Gradients backward(const ContrastiveModel& model, const ForwardCache& cache, const Matrix& d_out,
                   Matrix* dx = nullptr);

struct LossResult {
    double loss = 0.0;
    Matrix grad_view0;  // d loss / d z^(0), N x d
    Matrix grad_view1;  // d loss / d z^(1), N x d
};

/// Contrastive loss anchored on view 0, summed over the batch:
///   L = sum_i -log( e^{s(z0_i, z1_i)/tau} /
///         (sum_j e^{s(z0_i, z1_j)/tau} + sum_{j != i} e^{s(z0_i, z0_j)/tau}) )
/// with cosine similarity s. Row i of z0 and z1 are the two views of sample i.
LossResult ntxent_loss(const Matrix& z0, const Matrix& z1, double tau);

struct TrainConfig {
    std::size_t batch_size = 128;
    std::size_t epochs = 200;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    double tau = kDefaultTau;
    synthetic::AugmentationSpec augmentation{};
    ModelDims dims{};  // dims.input is taken from the dataset

    void validate() const;
};

struct TrainResult {
    ContrastiveModel model;
    double probe_loss_start = 0.0;
    double probe_loss_end = 0.0;
    std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

/// Mini-batch gradient descent on the contrastive loss over two augmented
/// views per sample. Each step moves by learning_rate times the gradient of
/// the batch-mean loss. Throws TrainingFailure on a non-finite loss.
TrainResult train(const Matrix& dataset, const TrainConfig& config);

/// Same, starting from a given model (its dims and tau are kept).
TrainResult train_from(ContrastiveModel model, const Matrix& dataset, const TrainConfig& config);

/// Encoder features (no head) as a detector encoder. The model is copied.
detector::Encoder feature_encoder(const ContrastiveModel& model);

/// Tagged binary checkpoint (little-endian):
///   "CTM1" u32 version=1 | u32 n_layers | u32 n_encoder_layers |
///   u32 (in, out) per layer | f64 tau | per layer: f64 W (out x in,
///   row-major) then f64 b.
void save_model(const ContrastiveModel& model, const std::filesystem::path& path);
ContrastiveModel load_model(const std::filesystem::path& path);

}  // namespace cadet::contrastive
