#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "digan/cohort.hpp"
#include "digan/rng.hpp"
#include "digan/tensor.hpp"

namespace digan {

// Linear variance schedule; all accessors are 1-based in t.
struct NoiseSchedule {
    int T = 0;
    Eigen::VectorXd alpha;     // alpha_t
    Eigen::VectorXd alpha_bar; // cumulative product of alpha up to t
    Eigen::VectorXd beta;      // 1 - alpha_t

    double alpha_at(int t) const { return alpha[check(t)]; }
    double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
    double beta_at(int t) const { return beta[check(t)]; }

private:
    Eigen::Index check(int t) const {
        if (t < 1 || t > T) {
            throw ContractError("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(T) + "]");
        }
        return t - 1;
    }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// Closed-form noising marginal z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule);

// Generation condition: class label plus visit position.
struct Condition {
    Label label = Label::NO;
    int visit_index = 1;
};

struct DenoiserConfig {
    Eigen::Index p = 12;
    std::vector<Eigen::Index> hidden = {64, 64};
    Eigen::Index time_dim = 16; // even
    Eigen::Index cond_dim = 8;
    Eigen::Index n_classes = 4;
    Eigen::Index max_visits = 8;
};

// MLP noise predictor over feature vectors, conditioned on a sinusoidal time
// embedding and learned class/visit embeddings added into the first layer.
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(DenoiserConfig config, Rng init_rng);

    // Batched prediction building the autodiff graph; z is one vector per row.
    Tensor forward(const Eigen::MatrixXd& z, const std::vector<int>& timesteps,
                   const std::vector<Condition>& conditions) const;

    // Copy with gradient tracking disabled, for sampling loops.
    Denoiser frozen() const;

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    // Stable names matching parameters() order; checkpoint layout follows it.
    std::vector<std::string> parameter_names() const;
    const DenoiserConfig& config() const { return config_; }
    bool finite() const;

    std::vector<double> loss_trace; // per-epoch training losses

private:
    DenoiserConfig config_;
    // layer weights first, then output layer, then embedding tables
    std::vector<Tensor> params_;
    Tensor weight(std::size_t i) const { return params_[i]; }
};

Eigen::MatrixXd sinusoidal_time_embedding(const std::vector<int>& timesteps, Eigen::Index dim);

struct DiffusionBatch {
    Eigen::MatrixXd x0; // one clean vector per row, already normalized
    std::vector<Condition> conditions;
};

struct NoisedBatch {
    Eigen::MatrixXd z;   // noised inputs
    Eigen::MatrixXd eps; // the injected noise, the prediction target
    std::vector<int> timesteps;
};

// Uniform timestep per item, standard normal noise, closed-form marginal.
NoisedBatch make_noised_batch(const Eigen::MatrixXd& x0, const NoiseSchedule& schedule, Rng& rng);

// Mean over the batch of the squared error norm against the injected noise;
// zero when the prediction equals the noise exactly.
Tensor noise_prediction_mse(const Tensor& prediction, const Eigen::MatrixXd& eps);

// Noise-prediction objective: noise_prediction_mse over a freshly noised batch.
Tensor diffusion_loss(const DiffusionBatch& batch, const NoiseSchedule& schedule,
                      const Denoiser& denoiser, Rng& rng);

// One ancestral step: the posterior mean given the predicted noise, plus the
// posterior-variance noise term for t > 1 (noise must be zero rows at t = 1).
Eigen::MatrixXd reverse_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& eps_hat, int t,
                             const NoiseSchedule& schedule, const Eigen::MatrixXd& noise);

struct DiffusionTrainConfig {
    int epochs = 200;
    int batch_size = 64;
    double lr = 1e-3;
    // Geometric decay toward lr * final_lr_fraction over the run.
    double final_lr_fraction = 0.1;
    // The returned weights are an exponential moving average of the
    // trajectory; 0 disables averaging.
    double ema_decay = 0.995;
    std::uint64_t seed = 0;
    DenoiserConfig arch;
};

// Trains a denoiser on the (already normalized) per-visit rows of the cohort.
Denoiser train_denoiser(const Cohort& cohort, const NoiseSchedule& schedule,
                        const DiffusionTrainConfig& config);

// Same entry point on raw rows with explicit conditions.
Denoiser train_denoiser_rows(const Eigen::MatrixXd& rows, const std::vector<Condition>& conditions,
                             const NoiseSchedule& schedule, const DiffusionTrainConfig& config);

// Ancestral reverse diffusion for a batch of independent vectors (one row per
// condition); rows step down from t = T together.
Eigen::MatrixXd sample_batch(const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const std::vector<Condition>& conditions, Rng& rng);

// Synthesizes one longitudinal profile, one visit per condition.
Profile sample_profile(const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const std::vector<Condition>& condition_seq, Rng& rng,
                       const std::string& subject_id = "synthetic");

} // namespace digan
