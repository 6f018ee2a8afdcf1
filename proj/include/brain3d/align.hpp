#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

#include "brain3d/dataset.hpp"
#include "brain3d/image.hpp"

namespace brain3d::align {

// Latent vector in the shared EEG/image space.
struct Embedding {
    Eigen::VectorXd values;
    bool normalized = false;
    bool degenerate = false;  // pre-norm magnitude underflowed, basis fallback used

    int dim() const { return int(values.size()); }
    void check_normalized() const;
};

// EEG-derived latent projected into the generative conditioning space.
struct ConditioningVector {
    Eigen::VectorXd values;
};

struct AlignConfig {
    int embed_dim = 16;
    int cond_dim = 16;
    int hidden_eeg = 32;
    int hidden_img = 32;
    int image_side = 32;  // working resolution of the image encoder
    double temperature = 0.07;
    double learning_rate = 0.05;
    int batch_size = 16;
    int epochs = 40;
    uint64_t seed = 0;

    void validate() const;
};

// Two-layer dense net: flatten -> tanh hidden -> linear out, then L2 norm.
struct Mlp2 {
    Eigen::MatrixXd w1;  // hidden x in
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // out x hidden
    Eigen::VectorXd b2;

    long param_count() const;
};

struct AlignParams {
    AlignConfig config;
    int eeg_channels = 0;
    int eeg_samples = 0;
    Mlp2 eeg;
    Mlp2 img;
    Eigen::MatrixXd proj_w;  // cond_dim x embed_dim, the alignment operator
    Eigen::VectorXd proj_b;
};

AlignParams init_params(const AlignConfig& cfg, int eeg_channels, int eeg_samples);

Embedding encode_eeg(const data::EegTrial& trial, const AlignParams& params);
Embedding encode_image(const Image& image, const AlignParams& params);

// Raw-vector entry points (shared by encode_* and the training loop).
Embedding encode_vector(const Eigen::VectorXd& input, const Mlp2& net);

// Linear map into the conditioning space followed by projection into the
// closed unit ball (identity on already-unit inputs).
ConditioningVector align_project(const Embedding& z_eeg, const AlignParams& params);

// Symmetric InfoNCE over the cosine-similarity matrix of two equal-length
// batches of unit embeddings.
double contrastive_loss(std::span<const Embedding> batch_eeg, std::span<const Embedding> batch_img,
                        double temperature);

struct Gradients {
    Mlp2 eeg;
    Mlp2 img;
};

// Loss plus analytic gradients w.r.t. both encoder parameter sets for a
// batch of raw input vectors.
double contrastive_loss_grad(const std::vector<Eigen::VectorXd>& eeg_inputs,
                             const std::vector<Eigen::VectorXd>& img_inputs, const AlignParams& params,
                             double temperature, Gradients& grads);

struct TrainResult {
    AlignParams params;
    std::vector<double> epoch_losses;  // mean batch loss per epoch, index 0 = before training
};

// Plain-SGD contrastive training over (trial, image) pairs; deterministic
// for a fixed config seed.
TrainResult train_alignment(const std::vector<std::pair<data::EegTrial, Image>>& train_pairs,
                            const AlignConfig& cfg);

// Convenience: pull the train split out of a manifest on disk.
TrainResult train_alignment(const data::Manifest& manifest, const AlignConfig& cfg);

// Checkpoint: "ALN1", u32 dim count, u32 dims, u64 parameter count, then the
// parameters as little-endian float32 in a fixed order.
void save_checkpoint(const AlignParams& params, const std::filesystem::path& path);
AlignParams load_checkpoint(const std::filesystem::path& path);

void write_loss_curve(const std::vector<double>& losses, const std::filesystem::path& path);

// Cosine nearest-neighbor retrieval of class images from trial embeddings;
// returns top-1 accuracy among `ways` candidates (the true class plus
// ways-1 sampled negatives; ways == class count means all classes).
double retrieval_accuracy(const std::vector<data::EegTrial>& trials, const std::vector<Image>& class_images,
                          const AlignParams& params, int ways, uint64_t seed);

}  // namespace brain3d::align
