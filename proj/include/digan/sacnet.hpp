#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "digan/rng.hpp"
#include "digan/tensor.hpp"

namespace digan {

// One attention-convolution unit.
//
// Tensor layout convention, fixed across the network: activations are
// [B x C x L x F] with C channels, L time steps and F features. Attention
// treats each time step's flattened C*F slice as its embedding, so the
// projections are (C*F) x d_a and the attention matrix is L x L. The
// attention output [L x d_a] re-enters the convolution as a single-channel
// [1 x L x d_a] image; the convolution then fans out to out_channels.
struct SacUnitConfig {
    Eigen::Index index = 0; // position in the stack, for error messages
    Eigen::Index in_channels = 1;
    Eigen::Index in_features = 12;
    Eigen::Index attn_dim = 16;
    Eigen::Index out_channels = 8;
    Eigen::Index kernel_h = 3;
    Eigen::Index kernel_w = 3;
};

struct SacUnit {
    SacUnitConfig config;
    Tensor w_query; // (C*F) x d_a
    Tensor w_key;
    Tensor w_value;
    Tensor kernels;   // out_channels x 1 x kh x kw
    Tensor conv_bias; // out_channels
    Tensor bn_gamma;  // out_channels
    Tensor bn_beta;
    RunningStats bn_stats;
    double bn_eps = 1e-5;

    static SacUnit init(const SacUnitConfig& config, Rng& rng);
};

// Scaled dot-product attention over the time axis of one window.
// H is [L x (C*F)]; returns [L x d_a].
Tensor attention_forward(const Tensor& h, const SacUnit& unit);

// Full unit: attention per item, conv over (time, feature), ReLU, batch norm.
// Input [B x C x L x F] -> output [B x out_channels x L x attn_dim].
Tensor sac_unit_forward(const Tensor& h_in, SacUnit& unit, Mode mode);

struct SacNetworkConfig {
    Eigen::Index window_length = 2;      // L
    Eigen::Index p = 12;                 // per-visit features
    std::vector<Eigen::Index> channels = {8, 16, 32, 64};
    Eigen::Index attn_dim = 16;
    Eigen::Index kernel_h = 3;
    Eigen::Index kernel_w = 3;
    double bn_eps = 1e-5;
};

// Stacked SAC units with a linear sigmoid head over the flattened final
// representation.
class SacNetwork {
public:
    SacNetwork() = default;
    SacNetwork(SacNetworkConfig config, Rng init_rng);

    // Windows are L x p matrices (already normalized). Returns [B x 1]
    // probabilities in (0, 1).
    Tensor forward_batch(const std::vector<Eigen::MatrixXd>& windows, Mode mode);

    double window_probability(const Eigen::MatrixXd& window);

    // Mean absolute activation over channels after each unit, as L x F maps.
    std::vector<Eigen::MatrixXd> activation_maps(const Eigen::MatrixXd& window);

    std::vector<Tensor> parameters();
    std::vector<std::string> parameter_names() const;
    const SacNetworkConfig& config() const { return config_; }
    std::vector<SacUnit>& units() { return units_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }
    bool finite() const;

private:
    Tensor forward_stacked(const Tensor& input, Mode mode,
                           std::vector<Tensor>* unit_outputs = nullptr);

    SacNetworkConfig config_;
    std::vector<SacUnit> units_;
    Tensor head_w_; // flattened-size x 1
    Tensor head_b_; // 1
};

// Subject-level max-pooling over window probabilities.
double subject_probability(const std::vector<double>& window_probs);
// Positive iff p_i >= threshold.
bool classify_subject(double subject_prob, double threshold);

struct SubjectDecision {
    std::string subject_id;
    std::vector<double> window_probs;
    double subject_prob = 0.0;
    bool predicted_positive = false;
    double threshold = 0.5;
};

SubjectDecision decide_subject(const std::string& subject_id,
                               const std::vector<double>& window_probs, double threshold);

} // namespace digan
