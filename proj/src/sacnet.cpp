#include "digan/sacnet.hpp"

#include <algorithm>
#include <cmath>

namespace digan {

namespace {

Tensor init_weight(Shape shape, double scale, Rng& rng) {
    Eigen::VectorXd v(numel(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
    return Tensor::from_flat(std::move(shape), std::move(v), true);
}

} // namespace

SacUnit SacUnit::init(const SacUnitConfig& config, Rng& rng) {
    SacUnit unit;
    unit.config = config;
    const Eigen::Index in_width = config.in_channels * config.in_features;
    const double attn_scale = std::sqrt(1.0 / static_cast<double>(in_width));
    unit.w_query = init_weight({in_width, config.attn_dim}, attn_scale, rng);
    unit.w_key = init_weight({in_width, config.attn_dim}, attn_scale, rng);
    unit.w_value = init_weight({in_width, config.attn_dim}, attn_scale, rng);
    const double conv_scale =
        std::sqrt(2.0 / static_cast<double>(config.kernel_h * config.kernel_w));
    unit.kernels =
        init_weight({config.out_channels, 1, config.kernel_h, config.kernel_w}, conv_scale, rng);
    unit.conv_bias = Tensor::zeros({config.out_channels}, true);
    unit.bn_gamma = Tensor::full({config.out_channels}, 1.0, true);
    unit.bn_beta = Tensor::zeros({config.out_channels}, true);
    unit.bn_stats = RunningStats::make(config.out_channels);
    return unit;
}

Tensor attention_forward(const Tensor& h, const SacUnit& unit) {
    if (h.ndim() != 2 || h.shape()[1] != unit.w_query.shape()[0]) {
        throw DimensionError("attention input " + shape_string(h.shape()) +
                             " does not match projection " +
                             shape_string(unit.w_query.shape()) + " in SAC unit " +
                             std::to_string(unit.config.index + 1));
    }
    Tensor q = matmul(h, unit.w_query);
    Tensor k = matmul(h, unit.w_key);
    Tensor v = matmul(h, unit.w_value);
    // scores = Q K^T / sqrt(d_a)
    Tensor scores = matmul(q, transpose2(k));
    const double scale = 1.0 / std::sqrt(static_cast<double>(unit.config.attn_dim));
    Tensor attn = softmax_rows(scalar_mul(scores, scale));
    return matmul(attn, v);
}

Tensor sac_unit_forward(const Tensor& h_in, SacUnit& unit, Mode mode) {
    if (h_in.ndim() != 4) {
        throw DimensionError("sac_unit_forward expects [B x C x L x F], got " +
                             shape_string(h_in.shape()));
    }
    const Eigen::Index B = h_in.shape()[0];
    const Eigen::Index C = h_in.shape()[1];
    const Eigen::Index L = h_in.shape()[2];
    const Eigen::Index F = h_in.shape()[3];
    if (C != unit.config.in_channels || F != unit.config.in_features) {
        throw DimensionError("SAC unit " + std::to_string(unit.config.index + 1) +
                             " configured for [C=" + std::to_string(unit.config.in_channels) +
                             ", F=" + std::to_string(unit.config.in_features) + "], got " +
                             shape_string(h_in.shape()));
    }

    std::vector<Tensor> attended;
    attended.reserve(static_cast<std::size_t>(B));
    for (Eigen::Index b = 0; b < B; ++b) {
        Tensor item = select0(h_in, b);                  // C x L x F
        Tensor time_major = permute3(item, {1, 0, 2});   // L x C x F
        Tensor flat = reshape(time_major, {L, C * F});   // per-step embedding
        Tensor out = attention_forward(flat, unit);      // L x d_a
        attended.push_back(reshape(out, {1, L, unit.config.attn_dim}));
    }
    Tensor stacked = stack0(attended); // B x 1 x L x d_a
    Tensor conv = conv2d(stacked, unit.kernels, unit.conv_bias);
    Tensor activated = relu(conv);
    return batch_norm(activated, unit.bn_gamma, unit.bn_beta, unit.bn_eps, mode, unit.bn_stats);
}

SacNetwork::SacNetwork(SacNetworkConfig config, Rng init_rng) : config_(std::move(config)) {
    if (config_.channels.empty()) throw SpecError("sac network needs at least one unit");
    Rng rng = init_rng;
    Eigen::Index in_channels = 1;
    Eigen::Index in_features = config_.p;
    for (Eigen::Index out_channels : config_.channels) {
        SacUnitConfig unit_config;
        unit_config.index = static_cast<Eigen::Index>(units_.size());
        unit_config.in_channels = in_channels;
        unit_config.in_features = in_features;
        unit_config.attn_dim = config_.attn_dim;
        unit_config.out_channels = out_channels;
        unit_config.kernel_h = config_.kernel_h;
        unit_config.kernel_w = config_.kernel_w;
        SacUnit unit = SacUnit::init(unit_config, rng);
        unit.bn_eps = config_.bn_eps;
        units_.push_back(std::move(unit));
        in_channels = out_channels;
        in_features = config_.attn_dim;
    }
    const Eigen::Index flat = config_.channels.back() * config_.window_length * config_.attn_dim;
    head_w_ = init_weight({flat, 1}, std::sqrt(1.0 / static_cast<double>(flat)), rng);
    head_b_ = Tensor::zeros({1}, true);
}

Tensor SacNetwork::forward_stacked(const Tensor& input, Mode mode,
                                   std::vector<Tensor>* unit_outputs) {
    Tensor h = input;
    for (std::size_t j = 0; j < units_.size(); ++j) {
        h = sac_unit_forward(h, units_[j], mode);
        if (!h.data().allFinite()) {
            throw NumericError("non-finite activations after SAC unit " + std::to_string(j + 1));
        }
        if (unit_outputs != nullptr) unit_outputs->push_back(h);
    }
    const Eigen::Index B = h.shape()[0];
    Tensor flat = reshape(h, {B, h.size() / B});
    if (flat.shape()[1] != head_w_.shape()[0]) {
        throw DimensionError("flattened width " + std::to_string(flat.shape()[1]) +
                             " does not match head " + shape_string(head_w_.shape()));
    }
    Tensor logits = add_rowvec(matmul(flat, head_w_), head_b_);
    return sigmoid(logits);
}

Tensor SacNetwork::forward_batch(const std::vector<Eigen::MatrixXd>& windows, Mode mode) {
    if (windows.empty()) throw ContractError("forward_batch: no windows");
    const auto B = static_cast<Eigen::Index>(windows.size());
    const Eigen::Index L = config_.window_length;
    const Eigen::Index p = config_.p;
    Eigen::VectorXd flat(B * L * p);
    for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::MatrixXd& w = windows[static_cast<std::size_t>(b)];
        if (w.rows() != L || w.cols() != p) {
            throw DimensionError("window " + std::to_string(b) + " is " +
                                 std::to_string(w.rows()) + " x " + std::to_string(w.cols()) +
                                 ", network expects " + std::to_string(L) + " x " +
                                 std::to_string(p));
        }
        for (Eigen::Index r = 0; r < L; ++r) {
            for (Eigen::Index c = 0; c < p; ++c) flat[b * L * p + r * p + c] = w(r, c);
        }
    }
    Tensor input = Tensor::from_flat({B, 1, L, p}, std::move(flat), false);
    return forward_stacked(input, mode);
}

double SacNetwork::window_probability(const Eigen::MatrixXd& window) {
    return forward_batch({window}, Mode::infer).item();
}

std::vector<Eigen::MatrixXd> SacNetwork::activation_maps(const Eigen::MatrixXd& window) {
    const Eigen::Index L = config_.window_length;
    const Eigen::Index p = config_.p;
    Eigen::VectorXd flat(L * p);
    for (Eigen::Index r = 0; r < L; ++r) {
        for (Eigen::Index c = 0; c < p; ++c) flat[r * p + c] = window(r, c);
    }
    Tensor input = Tensor::from_flat({1, 1, L, p}, std::move(flat), false);
    std::vector<Tensor> unit_outputs;
    forward_stacked(input, Mode::infer, &unit_outputs);

    std::vector<Eigen::MatrixXd> maps;
    for (const Tensor& out : unit_outputs) {
        const Eigen::Index C = out.shape()[1];
        const Eigen::Index rows = out.shape()[2];
        const Eigen::Index cols = out.shape()[3];
        Eigen::MatrixXd map = Eigen::MatrixXd::Zero(rows, cols);
        for (Eigen::Index c = 0; c < C; ++c) {
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index f = 0; f < cols; ++f) {
                    map(r, f) += std::abs(out.data()[(c * rows + r) * cols + f]);
                }
            }
        }
        maps.push_back(map / static_cast<double>(C));
    }
    return maps;
}

std::vector<Tensor> SacNetwork::parameters() {
    std::vector<Tensor> params;
    for (SacUnit& unit : units_) {
        params.push_back(unit.w_query);
        params.push_back(unit.w_key);
        params.push_back(unit.w_value);
        params.push_back(unit.kernels);
        params.push_back(unit.conv_bias);
        params.push_back(unit.bn_gamma);
        params.push_back(unit.bn_beta);
    }
    params.push_back(head_w_);
    params.push_back(head_b_);
    return params;
}

std::vector<std::string> SacNetwork::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < units_.size(); ++j) {
        const std::string prefix = "unit" + std::to_string(j) + ".";
        for (const char* field :
             {"w_query", "w_key", "w_value", "kernels", "conv_bias", "bn_gamma", "bn_beta"}) {
            names.push_back(prefix + field);
        }
    }
    names.emplace_back("head_w");
    names.emplace_back("head_b");
    return names;
}

bool SacNetwork::finite() const {
    for (const SacUnit& unit : units_) {
        for (const Tensor* t :
             {&unit.w_query, &unit.w_key, &unit.w_value, &unit.kernels, &unit.conv_bias,
              &unit.bn_gamma, &unit.bn_beta}) {
            if (!t->data().allFinite()) return false;
        }
        if (!unit.bn_stats.mean.allFinite() || !unit.bn_stats.var.allFinite()) return false;
    }
    return head_w_.data().allFinite() && head_b_.data().allFinite();
}

double subject_probability(const std::vector<double>& window_probs) {
    if (window_probs.empty()) {
        throw ContractError("subject_probability: no window probabilities");
    }
    return *std::max_element(window_probs.begin(), window_probs.end());
}

bool classify_subject(double subject_prob, double threshold) {
    return subject_prob >= threshold;
}

SubjectDecision decide_subject(const std::string& subject_id,
                               const std::vector<double>& window_probs, double threshold) {
    SubjectDecision d;
    d.subject_id = subject_id;
    d.window_probs = window_probs;
    d.subject_prob = subject_probability(window_probs);
    d.threshold = threshold;
    d.predicted_positive = classify_subject(d.subject_prob, threshold);
    return d;
}

} // namespace digan
