#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <vector>

#include "brain3d/common.hpp"
#include "brain3d/image.hpp"

namespace brain3d::diff {

struct DiffusionConfig {
    int timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.15;
    std::vector<double> beta_override;  // non-empty replaces the linear schedule
    double guidance_scale = 2.0;
    double drop_prob = 0.1;
    int image_side = 8;
    int channels = 3;
    int cond_dim = 8;
    int temb_dim = 8;
    int hidden = 128;
    double learning_rate = 2e-3;
    int batch_size = 32;
    int train_steps = 3000;
    uint64_t seed = 0;

    int data_dim() const { return image_side * image_side * channels; }
    // beta_1..beta_N, strictly positive and non-decreasing.
    std::vector<double> betas() const;
    // alpha_bar_0..alpha_bar_N with alpha_bar_0 = 1, strictly decreasing.
    std::vector<double> alpha_bars() const;
    void validate() const;
};

struct NoisySample {
    Eigen::VectorXd x;
    int t = 0;
};

// Dense epsilon-prediction net over [flattened image | time embedding |
// conditioning-or-null-token]. Conditioning input columns and the null
// token start at zero so an untrained conditioning pathway is exactly
// inert.
struct DenoiserParams {
    int image_side = 0;
    int channels = 0;
    int cond_dim = 0;
    int temb_dim = 0;
    Eigen::MatrixXd w1;  // hidden x (data+temb+cond)
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // data x hidden
    Eigen::VectorXd b2;
    Eigen::VectorXd null_token;  // cond_dim, learned unconditional embedding

    long param_count() const;
};

DenoiserParams init_denoiser(const DiffusionConfig& cfg);

Eigen::VectorXd time_embedding(int t, int timesteps, int temb_dim);

// Closed-form forward process x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
NoisySample forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                          const DiffusionConfig& cfg);

// Single network evaluation; z_c == nullptr selects the null token.
Eigen::VectorXd denoise_net(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                            const DenoiserParams& params, const DiffusionConfig& cfg);

// Classifier-free guidance: (1-w)*eps_uncond + w*eps_cond, exact at the
// w=0 and w=1 endpoints. A null z_c returns the unconditional branch.
Eigen::VectorXd guided_noise_prediction(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                                        double w, const DenoiserParams& params, const DiffusionConfig& cfg);

// Ancestral sampling from t = timesteps down to 1; deterministic in seed;
// output clamped to [-1, 1].
Eigen::VectorXd sample(const Eigen::VectorXd* z_c, const DiffusionConfig& cfg, const DenoiserParams& params,
                       uint64_t seed);

struct DenoiserGradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
    Eigen::VectorXd null_token;
};

struct DenoiserBatchItem {
    Eigen::VectorXd x_t;
    int t = 0;
    const Eigen::VectorXd* z_c = nullptr;  // nullptr = null token
    Eigen::VectorXd eps_target;
};

// Epsilon-prediction MSE (mean over batch and components) with analytic
// gradients; the finite-difference reference point.
double denoiser_loss_grad(const std::vector<DenoiserBatchItem>& batch, const DenoiserParams& params,
                          const DiffusionConfig& cfg, DenoiserGradients& grads);

struct DiffTrainResult {
    DenoiserParams params;
    std::vector<double> losses;  // per logged step
    double val_mse_initial = 0.0;
    double val_mse_final = 0.0;
};

// Adam-trained epsilon prediction with per-sample conditioning dropout.
DiffTrainResult train_denoiser(const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& dataset,
                               const DiffusionConfig& cfg);

// Checkpoint: "DIF1" header + dims + little-endian float32 blob.
void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path);
DenoiserParams load_checkpoint(const std::filesystem::path& path);

// Pixel-domain conversions for the [-1, 1] sample space.
Eigen::VectorXd image_to_unit(const Image& img);
Image unit_to_image(const Eigen::VectorXd& v, int side, int channels = 3);

}  // namespace brain3d::diff
