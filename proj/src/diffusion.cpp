#include "digan/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "digan/log.hpp"

namespace digan {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw SpecError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw SpecError("schedule needs 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    if (T == 1) {
        s.beta[0] = beta_start;
    } else {
        for (int t = 0; t < T; ++t) {
            s.beta[t] = beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
        }
    }
    s.alpha = (1.0 - s.beta.array()).matrix();
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule) {
    if (x0.size() != eps.size()) {
        throw DimensionError("forward_noise: x0 has " + std::to_string(x0.size()) +
                             " entries, eps has " + std::to_string(eps.size()));
    }
    const double abar = schedule.alpha_bar_at(t);
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

// ---- denoiser ---------------------------------------------------------------

Eigen::MatrixXd sinusoidal_time_embedding(const std::vector<int>& timesteps, Eigen::Index dim) {
    if (dim % 2 != 0) throw SpecError("time embedding dimension must be even");
    const auto B = static_cast<Eigen::Index>(timesteps.size());
    const Eigen::Index half = dim / 2;
    Eigen::MatrixXd emb(B, dim);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto t = static_cast<double>(timesteps[static_cast<std::size_t>(b)]);
        for (Eigen::Index i = 0; i < half; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * (2.0 * static_cast<double>(i)) /
                         static_cast<double>(dim));
            emb(b, 2 * i) = std::sin(t * freq);
            emb(b, 2 * i + 1) = std::cos(t * freq);
        }
    }
    return emb;
}

namespace {

Tensor init_param(Shape shape, double scale, Rng& rng) {
    Eigen::VectorXd v(numel(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
    return Tensor::from_flat(std::move(shape), std::move(v), true);
}

} // namespace

Denoiser::Denoiser(DenoiserConfig config, Rng init_rng) : config_(std::move(config)) {
    if (config_.hidden.empty()) throw SpecError("denoiser needs at least one hidden layer");
    Rng rng = init_rng;
    const Eigen::Index h0 = config_.hidden.front();

    auto he = [](Eigen::Index fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };

    params_.push_back(init_param({config_.p, h0}, he(config_.p), rng));          // w_in
    params_.push_back(init_param({config_.time_dim, h0}, he(config_.time_dim), rng)); // w_time
    params_.push_back(init_param({config_.cond_dim, h0}, he(config_.cond_dim), rng)); // w_cond
    params_.push_back(Tensor::zeros({h0}, true));                                // b_in
    for (std::size_t l = 1; l < config_.hidden.size(); ++l) {
        const Eigen::Index in = config_.hidden[l - 1];
        const Eigen::Index out = config_.hidden[l];
        params_.push_back(init_param({in, out}, he(in), rng));
        params_.push_back(Tensor::zeros({out}, true));
    }
    const Eigen::Index last = config_.hidden.back();
    params_.push_back(init_param({last, config_.p}, he(last), rng)); // w_out
    params_.push_back(Tensor::zeros({config_.p}, true));             // b_out
    params_.push_back(init_param({config_.n_classes, config_.cond_dim}, 0.1, rng));
    params_.push_back(init_param({config_.max_visits, config_.cond_dim}, 0.1, rng));
}

std::vector<std::string> Denoiser::parameter_names() const {
    std::vector<std::string> names{"w_in", "w_time", "w_cond", "b_in"};
    for (std::size_t l = 1; l < config_.hidden.size(); ++l) {
        names.push_back("w_hidden" + std::to_string(l));
        names.push_back("b_hidden" + std::to_string(l));
    }
    names.emplace_back("w_out");
    names.emplace_back("b_out");
    names.emplace_back("class_table");
    names.emplace_back("visit_table");
    return names;
}

Tensor Denoiser::forward(const Eigen::MatrixXd& z, const std::vector<int>& timesteps,
                         const std::vector<Condition>& conditions) const {
    const auto B = z.rows();
    if (z.cols() != config_.p) {
        throw DimensionError("denoiser expects " + std::to_string(config_.p) +
                             " features, got " + std::to_string(z.cols()));
    }
    if (static_cast<Eigen::Index>(timesteps.size()) != B ||
        static_cast<Eigen::Index>(conditions.size()) != B) {
        throw DimensionError("denoiser: timesteps/conditions must match batch size");
    }

    Tensor zt = Tensor::from_matrix(z);
    Tensor temb = Tensor::from_matrix(sinusoidal_time_embedding(timesteps, config_.time_dim));

    std::vector<Eigen::Index> class_idx(conditions.size());
    std::vector<Eigen::Index> visit_idx(conditions.size());
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        if (conditions[i].visit_index < 1) {
            throw ContractError("condition visit_index must be >= 1");
        }
        class_idx[i] = static_cast<Eigen::Index>(conditions[i].label);
        visit_idx[i] = std::min<Eigen::Index>(conditions[i].visit_index, config_.max_visits) - 1;
    }

    std::size_t at = 0;
    Tensor w_in = params_[at++];
    Tensor w_time = params_[at++];
    Tensor w_cond = params_[at++];
    Tensor b_in = params_[at++];

    Tensor cemb = add(embedding_lookup(params_[params_.size() - 2], class_idx),
                      embedding_lookup(params_[params_.size() - 1], visit_idx));
    Tensor h = add(add(matmul(zt, w_in), matmul(temb, w_time)), matmul(cemb, w_cond));
    h = relu(add_rowvec(h, b_in));
    for (std::size_t l = 1; l < config_.hidden.size(); ++l) {
        Tensor w = params_[at++];
        Tensor b = params_[at++];
        h = relu(add_rowvec(matmul(h, w), b));
    }
    Tensor w_out = params_[at++];
    Tensor b_out = params_[at++];
    return add_rowvec(matmul(h, w_out), b_out);
}

Denoiser Denoiser::frozen() const {
    Denoiser copy;
    copy.config_ = config_;
    copy.loss_trace = loss_trace;
    for (const Tensor& p : params_) {
        copy.params_.push_back(Tensor::from_flat(p.shape(), p.data(), false));
    }
    return copy;
}

bool Denoiser::finite() const {
    for (const Tensor& p : params_) {
        if (!p.data().allFinite()) return false;
    }
    return true;
}

// ---- loss and training ---------------------------------------------------------

NoisedBatch make_noised_batch(const Eigen::MatrixXd& x0, const NoiseSchedule& schedule,
                              Rng& rng) {
    const Eigen::Index B = x0.rows();
    const Eigen::Index p = x0.cols();
    NoisedBatch out;
    out.timesteps.resize(static_cast<std::size_t>(B));
    out.eps.resize(B, p);
    out.z.resize(B, p);
    for (Eigen::Index b = 0; b < B; ++b) {
        const int t = static_cast<int>(rng.uniform_int(1, schedule.T));
        out.timesteps[static_cast<std::size_t>(b)] = t;
        for (Eigen::Index k = 0; k < p; ++k) out.eps(b, k) = rng.normal();
        out.z.row(b) = forward_noise(x0.row(b), t, out.eps.row(b), schedule);
    }
    return out;
}

Tensor noise_prediction_mse(const Tensor& prediction, const Eigen::MatrixXd& eps) {
    if (prediction.ndim() != 2 || prediction.shape()[0] != eps.rows() ||
        prediction.shape()[1] != eps.cols()) {
        throw DimensionError("noise_prediction_mse: prediction " +
                             shape_string(prediction.shape()) + " vs noise " +
                             std::to_string(eps.rows()) + " x " + std::to_string(eps.cols()));
    }
    Tensor target = Tensor::from_matrix(eps);
    Tensor diff = sub(prediction, target);
    return scalar_mul(sum(mul(diff, diff)), 1.0 / static_cast<double>(eps.rows()));
}

Tensor diffusion_loss(const DiffusionBatch& batch, const NoiseSchedule& schedule,
                      const Denoiser& denoiser, Rng& rng) {
    const Eigen::Index B = batch.x0.rows();
    if (B == 0) throw ContractError("diffusion_loss: empty batch");
    if (static_cast<Eigen::Index>(batch.conditions.size()) != B) {
        throw DimensionError("diffusion_loss: conditions must match batch rows");
    }
    NoisedBatch noised = make_noised_batch(batch.x0, schedule, rng);
    Tensor pred = denoiser.forward(noised.z, noised.timesteps, batch.conditions);
    return noise_prediction_mse(pred, noised.eps);
}

namespace {

struct RowDataset {
    Eigen::MatrixXd rows;
    std::vector<Condition> conditions;
};

RowDataset cohort_rows(const Cohort& cohort, Eigen::Index max_visits) {
    Eigen::Index n = 0;
    for (const Profile& profile : cohort.profiles) n += profile.n_visits();
    RowDataset ds;
    ds.rows.resize(n, cohort.p());
    ds.conditions.reserve(static_cast<std::size_t>(n));
    Eigen::Index at = 0;
    for (const Profile& profile : cohort.profiles) {
        for (const Visit& visit : profile.visits) {
            ds.rows.row(at++) = visit.features;
            Condition c;
            c.label = profile.label;
            c.visit_index = std::min<int>(visit.visit_index, static_cast<int>(max_visits));
            ds.conditions.push_back(c);
        }
    }
    return ds;
}

} // namespace

Denoiser train_denoiser_rows(const Eigen::MatrixXd& rows, const std::vector<Condition>& conditions,
                             const NoiseSchedule& schedule, const DiffusionTrainConfig& config) {
    if (rows.rows() == 0) throw ContractError("train_denoiser: no training rows");
    if (rows.cols() != config.arch.p) {
        throw DimensionError("train_denoiser: cohort has " + std::to_string(rows.cols()) +
                             " features, denoiser expects " + std::to_string(config.arch.p));
    }

    Rng root(config.seed);
    Rng init_rng = root.split(0);
    Rng train_rng = root.split(1);

    Denoiser denoiser(config.arch, init_rng);
    std::vector<Tensor>& params = denoiser.parameters();
    AdamState adam = AdamState::make(params, config.lr);

    const bool use_ema = config.ema_decay > 0.0;
    std::vector<Eigen::VectorXd> ema;
    if (use_ema) {
        ema.reserve(params.size());
        for (const Tensor& p : params) ema.push_back(p.data());
    }

    const Eigen::Index n = rows.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.epochs > 1) {
            const double progress = static_cast<double>(epoch) /
                                    static_cast<double>(config.epochs - 1);
            adam.lr = config.lr * std::pow(config.final_lr_fraction, progress);
        }
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const auto j =
                static_cast<std::size_t>(train_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += config.batch_size) {
            const Eigen::Index size = std::min<Eigen::Index>(config.batch_size, n - start);
            DiffusionBatch batch;
            batch.x0.resize(size, rows.cols());
            batch.conditions.resize(static_cast<std::size_t>(size));
            for (Eigen::Index b = 0; b < size; ++b) {
                const Eigen::Index src = order[static_cast<std::size_t>(start + b)];
                batch.x0.row(b) = rows.row(src);
                batch.conditions[static_cast<std::size_t>(b)] =
                    conditions[static_cast<std::size_t>(src)];
            }
            zero_grads(params);
            Tensor loss = diffusion_loss(batch, schedule, denoiser, train_rng);
            backward(loss);
            adam_step(params, adam);
            if (use_ema) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    ema[i] = config.ema_decay * ema[i] +
                             (1.0 - config.ema_decay) * params[i].data();
                }
            }
            epoch_loss += loss.item() * static_cast<double>(size);
        }
        denoiser.loss_trace.push_back(epoch_loss / static_cast<double>(n));
    }
    if (use_ema && config.epochs > 0) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_data() = ema[i];
    }
    return denoiser;
}

Denoiser train_denoiser(const Cohort& cohort, const NoiseSchedule& schedule,
                        const DiffusionTrainConfig& config) {
    RowDataset ds = cohort_rows(cohort, config.arch.max_visits);
    return train_denoiser_rows(ds.rows, ds.conditions, schedule, config);
}

// ---- sampling -------------------------------------------------------------------

Eigen::MatrixXd reverse_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& eps_hat, int t,
                             const NoiseSchedule& schedule, const Eigen::MatrixXd& noise) {
    const double alpha = schedule.alpha_at(t);
    const double abar = schedule.alpha_bar_at(t);
    const double beta = schedule.beta_at(t);
    Eigen::MatrixXd mean = (z - (beta / std::sqrt(1.0 - abar)) * eps_hat) / std::sqrt(alpha);
    if (t > 1) {
        const double abar_prev = schedule.alpha_bar_at(t - 1);
        const double post_var = (1.0 - abar_prev) / (1.0 - abar) * beta;
        mean += std::sqrt(post_var) * noise;
    }
    return mean;
}

Eigen::MatrixXd sample_batch(const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const std::vector<Condition>& conditions, Rng& rng) {
    if (!denoiser.finite()) throw NumericError("denoiser parameters are not finite");
    const auto B = static_cast<Eigen::Index>(conditions.size());
    const Eigen::Index p = denoiser.config().p;
    Denoiser frozen = denoiser.frozen();

    Eigen::MatrixXd z(B, p);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index k = 0; k < p; ++k) z(b, k) = rng.normal();
    }
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(B, p);
    for (int t = schedule.T; t >= 1; --t) {
        std::vector<int> ts(static_cast<std::size_t>(B), t);
        Eigen::MatrixXd eps_hat = frozen.forward(z, ts, conditions).to_matrix();
        if (t > 1) {
            for (Eigen::Index b = 0; b < B; ++b) {
                for (Eigen::Index k = 0; k < p; ++k) noise(b, k) = rng.normal();
            }
        }
        z = reverse_step(z, eps_hat, t, schedule, noise);
    }
    if (!z.allFinite()) throw NumericError("sampling produced non-finite values");
    return z;
}

Profile sample_profile(const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const std::vector<Condition>& condition_seq, Rng& rng,
                       const std::string& subject_id) {
    if (condition_seq.empty()) throw ContractError("sample_profile: empty condition sequence");
    Eigen::MatrixXd visits = sample_batch(denoiser, schedule, condition_seq, rng);

    Profile profile;
    profile.subject_id = subject_id;
    profile.label = condition_seq.front().label;
    profile.sex = Sex::unknown;
    for (Eigen::Index i = 0; i < visits.rows(); ++i) {
        Visit visit;
        visit.visit_index = condition_seq[static_cast<std::size_t>(i)].visit_index;
        visit.age_offset_months = 12.0 * (visit.visit_index - 1);
        visit.features = visits.row(i);
        profile.visits.push_back(std::move(visit));
    }
    std::sort(profile.visits.begin(), profile.visits.end(),
              [](const Visit& a, const Visit& b) { return a.visit_index < b.visit_index; });
    return profile;
}

} // namespace digan
