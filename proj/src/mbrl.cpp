#include "orbit/mbrl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "orbit/linalg.hpp"
#include "orbit/supervised.hpp"

namespace orbit {

namespace {

constexpr std::uint64_t kStreamPolicyStates = 808;    // train_policy episode starts
constexpr std::uint64_t kStreamForwardShuffle = 909;  // forward-model minibatch shuffle
constexpr std::uint64_t kStreamDither = 1010;         // adaptive-loop action exploration

struct LinearTape final : SystemModel::StepTape {};

struct NeuralTape final : SystemModel::StepTape {
    EvalTape eval;
};

const char* model_kind_name(ModelKind kind) {
    return kind == ModelKind::linear ? "linear" : "neural";
}

double mean_squared_residual(const SystemModel& model, const std::vector<Transition>& window) {
    if (window.empty()) return 0.0;
    double total = 0.0;
    for (const Transition& t : window)
        total += (t.s_next - t.s - model.predict_delta(t.s, t.a)).squaredNorm();
    return total / static_cast<double>(window.size());
}

Mat action_second_moment(const std::vector<Transition>& window, int dim) {
    Mat c_a = Mat::Zero(dim, dim);
    for (const Transition& t : window) c_a.noalias() += t.a * t.a.transpose();
    if (!window.empty()) c_a /= static_cast<double>(window.size());
    return c_a;
}

// Ordinary least squares on closed-loop data is biased: the action
// a_n = g(s_n + noise_n) shares its noise draw with the observed state change
// ds_n = s_next - s_n, so E[noise_n a_n^T] = sigma^2 A_lin^T with A_lin the
// linearization of the deployed action map. Adding sigma^2 A_lin^T C_a^{-1}
// (C_a the window's action second moment) removes the bias; the term is
// exactly zero when sigma is zero.
Mat closed_loop_bias_correction(const Mat& c_a_in, const Mat& a_lin, double noise_sigma) {
    const int dim = static_cast<int>(c_a_in.rows());
    Mat c_a = c_a_in;
    // A tiny ridge keeps the solve well-posed when the window barely spans
    // the action space; it perturbs the correction negligibly otherwise.
    c_a.diagonal().array() += 1e-10 * (c_a.trace() / dim) + 1e-300;
    Eigen::LDLT<Mat> ldlt(c_a);
    if (ldlt.info() != Eigen::Success) return Mat::Zero(dim, dim);
    return noise_sigma * noise_sigma * ldlt.solve(a_lin).transpose();
}

}  // namespace

LinearModel::LinearModel(Mat response) : response_(std::move(response)) {
    if (response_.rows() < 1 || response_.cols() < 1)
        throw DimensionError("LinearModel: response matrix is empty");
    require_finite(response_, "LinearModel: response");
}

Vec LinearModel::predict_delta(const Vec& s, const Vec& a) const {
    if (s.size() != response_.rows() || a.size() != response_.cols())
        throw DimensionError("LinearModel: state/action lengths do not match the response");
    return response_ * a;
}

std::unique_ptr<SystemModel::StepTape> LinearModel::predict_taped(const Vec& s, const Vec& a,
                                                                  Vec& delta) const {
    delta = predict_delta(s, a);
    return std::make_unique<LinearTape>();
}

void LinearModel::backward(const StepTape&, const Vec& delta_grad, Vec& s_grad,
                           Vec& a_grad) const {
    s_grad = Vec::Zero(response_.rows());
    a_grad.noalias() = response_.transpose() * delta_grad;
}

std::unique_ptr<SystemModel> LinearModel::clone() const {
    return std::make_unique<LinearModel>(*this);
}

NeuralModel::NeuralModel(MlpParams net) : net_(std::move(net)) {
    net_.validate();
    if (net_.in_dim() != 2 * net_.out_dim())
        throw DimensionError("NeuralModel: network must map 2*dim inputs to dim outputs");
}

Vec NeuralModel::predict_delta(const Vec& s, const Vec& a) const {
    const int d = net_.out_dim();
    if (s.size() != d || a.size() != d)
        throw DimensionError("NeuralModel: state/action lengths do not match the network");
    Vec x(2 * d);
    x << s, a;
    return forward(net_, x);
}

std::unique_ptr<SystemModel::StepTape> NeuralModel::predict_taped(const Vec& s, const Vec& a,
                                                                  Vec& delta) const {
    const int d = net_.out_dim();
    if (s.size() != d || a.size() != d)
        throw DimensionError("NeuralModel: state/action lengths do not match the network");
    Vec x(2 * d);
    x << s, a;
    auto tape = std::make_unique<NeuralTape>();
    delta = forward(net_, x, tape->eval);
    return tape;
}

void NeuralModel::backward(const StepTape& tape, const Vec& delta_grad, Vec& s_grad,
                           Vec& a_grad) const {
    const auto* taped = dynamic_cast<const NeuralTape*>(&tape);
    if (taped == nullptr)
        throw ValueError("NeuralModel::backward: tape was not produced by this model");
    const Vec in_grad = input_gradient(net_, taped->eval, delta_grad);
    const int d = net_.out_dim();
    s_grad = in_grad.head(d);
    a_grad = in_grad.tail(d);
}

std::unique_ptr<SystemModel> NeuralModel::clone() const {
    return std::make_unique<NeuralModel>(*this);
}

MlpParams forward_model_init(int dim, std::uint64_t seed) {
    if (dim < 1) throw ConfigError("forward_model_init: dim must be positive");
    return mlp_init({2 * dim, 512, 512, 512, dim}, seed);
}

void RolloutConfig::validate() const {
    if (horizon < 1) throw ConfigError("RolloutConfig: horizon must be at least 1");
    if (episodes < 0) throw ConfigError("RolloutConfig: episodes must be non-negative");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("RolloutConfig: gamma must lie in (0, 1]");
    if (!(action_scale > 0.0)) throw ConfigError("RolloutConfig: action_scale must be positive");
    if (divergence_limit < 0.0 || !std::isfinite(divergence_limit))
        throw ConfigError("RolloutConfig: divergence_limit must be non-negative and finite");
}

RolloutResult rollout_loss(const MlpParams& p, const SystemModel& model, const Vec& s0,
                           const RolloutConfig& cfg) {
    cfg.validate();
    const int dim = model.dim();
    if (p.in_dim() != dim || p.out_dim() != dim)
        throw DimensionError("rollout_loss: policy dimensions do not match the model");
    if (s0.size() != dim)
        throw DimensionError("rollout_loss: initial state length does not match the model");

    const int n = cfg.horizon;
    std::vector<Vec> states;
    std::vector<double> rms_vals(n, 0.0);
    std::vector<double> discounts(n, 1.0);
    std::vector<EvalTape> policy_tapes(n);
    std::vector<std::unique_ptr<SystemModel::StepTape>> model_tapes;
    states.reserve(n);
    model_tapes.reserve(n);

    double loss = 0.0;
    double discount = 1.0;
    Vec s = s0;
    for (int i = 0; i < n; ++i) {
        if (!s.allFinite())
            throw DivergenceError("rollout_loss: non-finite state at step " + std::to_string(i), i);
        const double r = rms(s);
        if (cfg.divergence_limit > 0.0 && r > cfg.divergence_limit)
            throw DivergenceError("rollout_loss: rms exceeded the divergence limit at step " +
                                      std::to_string(i),
                                  i);
        discounts[i] = discount;
        rms_vals[i] = r;
        loss += discount * r;
        states.push_back(s);

        const Vec pol = forward(p, s, policy_tapes[i]);
        Vec delta;
        model_tapes.push_back(model.predict_taped(s, cfg.action_scale * pol, delta));
        s += delta;
        discount *= cfg.gamma;
    }

    GradAccumulator acc(p);
    Vec ds = Vec::Zero(dim);  // dLoss / d s_{i+1}
    Vec s_grad(dim), a_grad(dim);
    for (int i = n - 1; i >= 0; --i) {
        model.backward(*model_tapes[i], ds, s_grad, a_grad);
        const Vec policy_in_grad = acc.backward(p, policy_tapes[i], cfg.action_scale * a_grad);
        Vec total = ds + s_grad + policy_in_grad;
        // d rms(s)/d s = s / (dim * rms); zero at the origin (subgradient 0).
        if (rms_vals[i] > 0.0)
            total += (discounts[i] / (static_cast<double>(dim) * rms_vals[i])) * states[i];
        ds = std::move(total);
    }

    RolloutResult out;
    out.loss = loss;
    out.grads = acc.finalize();
    return out;
}

std::vector<double> train_policy(MlpParams& p, const SystemModel& model, const RolloutConfig& cfg,
                                 double init_rms, AdamState& st, std::uint64_t seed) {
    cfg.validate();
    p.validate();
    if (init_rms < 0.0 || !std::isfinite(init_rms))
        throw ConfigError("train_policy: init_rms must be non-negative and finite");
    const int dim = model.dim();
    if (p.in_dim() != dim || p.out_dim() != dim)
        throw DimensionError("train_policy: policy dimensions do not match the model");

    RolloutConfig effective = cfg;
    if (effective.divergence_limit == 0.0 && init_rms > 0.0)
        effective.divergence_limit = 100.0 * init_rms;

    Rng rng = make_rng(seed, kStreamPolicyStates);
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(cfg.episodes));
    for (int episode = 0; episode < cfg.episodes; ++episode) {
        const Vec s0 = gaussian_vector(dim, init_rms, rng);
        RolloutResult result;
        try {
            result = rollout_loss(p, model, s0, effective);
        } catch (const DivergenceError& e) {
            throw DivergenceError(
                "train_policy: episode " + std::to_string(episode) + ": " + e.what(), e.step);
        }
        adam_step(p, result.grads, st);
        history.push_back(result.loss);
    }
    return history;
}

LinearModel refit_linear_model(const TrajectoryLog& log) {
    return LinearModel(fit_response_lstsq(log.transitions));
}

std::vector<double> train_forward_model(MlpParams& f, const std::vector<Transition>& transitions,
                                        int epochs, AdamState& st, std::uint64_t seed,
                                        int batch_size) {
    f.validate();
    if (transitions.empty()) throw ValueError("train_forward_model: no transitions to fit");
    if (epochs < 0) throw ConfigError("train_forward_model: epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("train_forward_model: batch_size must be at least 1");
    const int d = static_cast<int>(transitions.front().s.size());
    if (f.in_dim() != 2 * d || f.out_dim() != d)
        throw DimensionError("train_forward_model: network shape does not match the transitions");

    std::vector<Vec> inputs;
    std::vector<Vec> targets;
    inputs.reserve(transitions.size());
    targets.reserve(transitions.size());
    for (const Transition& t : transitions) {
        if (t.s.size() != d || t.a.size() != d || t.s_next.size() != d)
            throw DimensionError("train_forward_model: inconsistent transition dimensions");
        Vec x(2 * d);
        x << t.s, t.a;
        inputs.push_back(std::move(x));
        targets.push_back(t.s_next - t.s);
    }
    Rng rng = make_rng(seed, kStreamForwardShuffle);
    return train_regression(f, inputs, targets, epochs, batch_size, st, rng);
}

std::vector<double> train_forward_model(MlpParams& f, const TrajectoryLog& log, int epochs,
                                        AdamState& st, std::uint64_t seed, int batch_size) {
    return train_forward_model(f, log.transitions, epochs, st, seed, batch_size);
}

void AdaptiveConfig::validate() const {
    if (refit_interval < 1) throw ConfigError("AdaptiveConfig: refit_interval must be at least 1");
    if (retrain_episodes < 0)
        throw ConfigError("AdaptiveConfig: retrain_episodes must be non-negative");
    if (buffer_capacity < 1) throw ConfigError("AdaptiveConfig: buffer_capacity must be at least 1");
    if (fit_window < 1) throw ConfigError("AdaptiveConfig: fit_window must be at least 1");
    if (!(action_scale > 0.0)) throw ConfigError("AdaptiveConfig: action_scale must be positive");
    if (!(gain > 0.0) || gain > 1.0) throw ConfigError("AdaptiveConfig: gain must lie in (0, 1]");
    if (action_clamp < 0.0 || !std::isfinite(action_clamp))
        throw ConfigError("AdaptiveConfig: action_clamp must be non-negative and finite");
    if (action_dither < 0.0 || !std::isfinite(action_dither))
        throw ConfigError("AdaptiveConfig: action_dither must be non-negative and finite");
    if (state_dither < 0.0 || !std::isfinite(state_dither))
        throw ConfigError("AdaptiveConfig: state_dither must be non-negative and finite");
    if (!(dither_cap > 0.0) || !std::isfinite(dither_cap))
        throw ConfigError("AdaptiveConfig: dither_cap must be positive and finite");
    if (horizon < 1) throw ConfigError("AdaptiveConfig: horizon must be at least 1");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("AdaptiveConfig: gamma must lie in (0, 1]");
    if (excitation_floor < 0.0 || !std::isfinite(excitation_floor))
        throw ConfigError("AdaptiveConfig: excitation_floor must be non-negative and finite");
    if (refresh_excursion < 0.0 || !std::isfinite(refresh_excursion))
        throw ConfigError("AdaptiveConfig: refresh_excursion must be non-negative and finite");
    if (refresh_spacing < 1) throw ConfigError("AdaptiveConfig: refresh_spacing must be at least 1");
    if (model_floor < 0.0 || !std::isfinite(model_floor))
        throw ConfigError("AdaptiveConfig: model_floor must be non-negative and finite");
    if (retrain_threshold < 0.0 || !std::isfinite(retrain_threshold))
        throw ConfigError("AdaptiveConfig: retrain_threshold must be non-negative and finite");
    if (!(policy_lr > 0.0)) throw ConfigError("AdaptiveConfig: policy_lr must be positive");
    if (!(model_lr > 0.0)) throw ConfigError("AdaptiveConfig: model_lr must be positive");
    if (forward_epochs < 0) throw ConfigError("AdaptiveConfig: forward_epochs must be non-negative");
    if (forward_batch_size < 1)
        throw ConfigError("AdaptiveConfig: forward_batch_size must be at least 1");
}

namespace {

// The matrix with every singular value clamped from below at `floor`,
// keeping the singular directions.
Mat spectral_floor(const Mat& m, double floor) {
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec sv = svd.singularValues();
    for (int j = 0; j < sv.size(); ++j) sv(j) = std::max(sv(j), floor);
    return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

// Columns are the right singular directions of `response`, each scaled by the
// action std assigned to it: state_dither / sigma_j, capped. Drawing
// basis * z with z ~ N(0, I) then excites every direction of the fitted
// response by a comparable amount in state space.
Mat directional_dither_basis(const Mat& response, double state_dither, double dither_cap) {
    Eigen::JacobiSVD<Mat> svd(response, Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    Mat basis = svd.matrixV();
    for (int j = 0; j < basis.cols(); ++j) {
        const double sigma = sv(j);
        const double w = sigma > 0.0 ? std::min(state_dither / sigma, dither_cap) : dither_cap;
        basis.col(j) *= w;
    }
    return basis;
}

}  // namespace

void PretrainConfig::validate() const {
    if (sigma_floor < 0.0 || !std::isfinite(sigma_floor))
        throw ConfigError("PretrainConfig: sigma_floor must be non-negative and finite");
    if (warm_lambda < 0.0 || !std::isfinite(warm_lambda))
        throw ConfigError("PretrainConfig: warm_lambda must be non-negative and finite");
    if (warm_pairs < 1) throw ConfigError("PretrainConfig: warm_pairs must be at least 1");
    if (warm_epochs < 0) throw ConfigError("PretrainConfig: warm_epochs must be non-negative");
    if (warm_batch < 1) throw ConfigError("PretrainConfig: warm_batch must be at least 1");
    if (!(warm_lr > 0.0)) throw ConfigError("PretrainConfig: warm_lr must be positive");
    if (refine_episodes < 0)
        throw ConfigError("PretrainConfig: refine_episodes must be non-negative");
    if (refine_chunk < 1) throw ConfigError("PretrainConfig: refine_chunk must be at least 1");
    if (!(refine_lr > 0.0)) throw ConfigError("PretrainConfig: refine_lr must be positive");
    if (horizon < 1) throw ConfigError("PretrainConfig: horizon must be at least 1");
    if (!(action_scale > 0.0)) throw ConfigError("PretrainConfig: action_scale must be positive");
    for (int h : hidden_layers)
        if (h < 1) throw ConfigError("PretrainConfig: hidden layer widths must be at least 1");
}

MlpParams pretrain_policy(const Mat& r_nominal, const EnvConfig& env, const PretrainConfig& cfg,
                          std::vector<double>* warm_history,
                          std::vector<double>* refine_history) {
    cfg.validate();
    env.validate();
    require_finite(r_nominal, "pretrain_policy: r_nominal");
    if (r_nominal.rows() != env.dim || r_nominal.cols() != env.dim)
        throw DimensionError("pretrain_policy: r_nominal dimensions do not match the environment");

    const Mat r_train =
        cfg.sigma_floor > 0.0 ? spectral_floor(r_nominal, cfg.sigma_floor) : r_nominal;

    const LabeledDataset warm = gen_dataset_svd_labels(env, r_train, cfg.warm_lambda,
                                                       cfg.warm_pairs, cfg.seed + 606000);

    std::vector<int> layers;
    layers.reserve(cfg.hidden_layers.size() + 2);
    layers.push_back(env.dim);
    layers.insert(layers.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
    layers.push_back(env.dim);
    MlpParams p = mlp_init(layers, cfg.seed + 404000);

    AdamState warm_state = adam_init(p, cfg.warm_lr);
    std::vector<double> warm_losses = train_supervised(p, warm, cfg.warm_epochs, cfg.warm_batch,
                                                       warm_state, cfg.seed + 505000,
                                                       cfg.action_scale);
    if (warm_history)
        warm_history->insert(warm_history->end(), warm_losses.begin(), warm_losses.end());

    const LinearModel model(r_train);
    RolloutConfig refine;
    refine.horizon = cfg.horizon;
    refine.action_scale = cfg.action_scale;
    AdamState refine_state = adam_init(p, cfg.refine_lr);
    for (int done = 0; done < cfg.refine_episodes; done += cfg.refine_chunk) {
        refine.episodes = std::min(cfg.refine_chunk, cfg.refine_episodes - done);
        const std::vector<double> losses =
            train_policy(p, model, refine, env.init_rms, refine_state,
                         cfg.seed + 808000 + static_cast<std::uint64_t>(done));
        if (refine_history)
            refine_history->insert(refine_history->end(), losses.begin(), losses.end());
    }
    return p;
}

AdaptiveResult adaptive_loop(RingEnv& env, const MlpParams& pretrained, const AdaptiveConfig& cfg,
                             long total_steps) {
    return adaptive_loop(env, pretrained, Mat(), cfg, total_steps);
}

AdaptiveResult adaptive_loop(RingEnv& env, const MlpParams& pretrained, const Mat& nominal_response,
                             const AdaptiveConfig& cfg, long total_steps) {
    cfg.validate();
    if (total_steps < 0) throw ConfigError("adaptive_loop: total_steps must be non-negative");
    pretrained.validate();
    const int dim = env.config().dim;
    if (pretrained.in_dim() != dim || pretrained.out_dim() != dim)
        throw DimensionError("adaptive_loop: policy dimensions do not match the environment");
    if (nominal_response.size() > 0) {
        if (nominal_response.rows() != dim || nominal_response.cols() != dim)
            throw DimensionError(
                "adaptive_loop: nominal response dimensions do not match the environment");
        if (!nominal_response.allFinite())
            throw ValueError("adaptive_loop: nominal response contains non-finite entries");
    }

    AdaptiveResult out;
    out.policy = pretrained;

    TransitionBuffer buffer(cfg.buffer_capacity);
    AdamState policy_state = adam_init(out.policy, cfg.policy_lr);

    MlpParams forward_net;
    AdamState forward_state;
    if (cfg.model_kind == ModelKind::neural) {
        forward_net = forward_model_init(dim, cfg.seed);
        forward_state = adam_init(forward_net, cfg.model_lr);
    }

    RolloutConfig retrain;
    retrain.horizon = cfg.horizon;
    retrain.episodes = cfg.retrain_episodes;
    retrain.gamma = cfg.gamma;
    // Online retraining optimizes the loop as deployed - deployment gain
    // included - so the surrogate rollout matches what the ring will see. A
    // sub-unity gain also keeps rollouts tolerant of the weakly excited
    // directions a floor-level fit window cannot pin down precisely.
    retrain.action_scale = cfg.gain * cfg.action_scale;

    std::unique_ptr<SystemModel> model;
    long refit_count = 0;
    long last_refit_step = 0;
    const double noise_sigma = env.config().noise_sigma;
    Rng dither_rng = make_rng(cfg.seed, kStreamDither);
    Mat dither_basis;
    if (cfg.state_dither > 0.0 && nominal_response.size() > 0) {
        const Mat seed_response = cfg.model_floor > 0.0
                                      ? spectral_floor(nominal_response, cfg.model_floor)
                                      : nominal_response;
        dither_basis = directional_dither_basis(seed_response, cfg.state_dither, cfg.dither_cap);
    }

    Vec obs = env.reset();
    // Raw fit the policy was last retrained against, for the retrain gate.
    Mat last_trained_response;
    for (long step = 1; step <= total_steps; ++step) {
        Vec a = cfg.gain * cfg.action_scale * forward(out.policy, obs);
        if (cfg.action_dither > 0.0) a += gaussian_vector(dim, cfg.action_dither, dither_rng);
        if (dither_basis.size() > 0) a += dither_basis * gaussian_vector(dim, 1.0, dither_rng);
        if (cfg.action_clamp > 0.0) a = a.cwiseMax(-cfg.action_clamp).cwiseMin(cfg.action_clamp);
        Vec next = env.step(a);
        buffer.push(Transition{obs, a, next});
        obs = std::move(next);

        // A refresh on the very last step could not influence any control
        // action, so it is not scheduled.
        if (step >= total_steps) continue;
        const bool scheduled = step % cfg.refit_interval == 0;
        const bool excursion = !scheduled && cfg.refresh_excursion > 0.0 && noise_sigma > 0.0 &&
                               rms(obs) > cfg.refresh_excursion * noise_sigma &&
                               step - last_refit_step >= cfg.refresh_spacing;
        if (!scheduled && !excursion) continue;

        ++refit_count;
        last_refit_step = step;
        const std::vector<Transition> window = buffer.recent(cfg.fit_window);
        RefitEvent event;
        event.step = step;
        event.kind = cfg.model_kind;
        if (excursion) event.detail = "excursion refresh";

        const Mat c_a = action_second_moment(window, dim);
        const Mat a_lin = cfg.gain * cfg.action_scale * linearization_at_zero(out.policy);
        if (cfg.excitation_floor > 0.0) {
            const Eigen::SelfAdjointEigenSolver<Mat> moments(c_a);
            const double weakest = moments.eigenvalues()(0);
            const double strongest = moments.eigenvalues()(dim - 1);
            // Relative test: the weakest direction must not be negligible next
            // to the strongest. A settling transient inflates the strongest
            // direction by orders of magnitude, so a window is also deemed
            // healthy when its weakest direction carries at least half the
            // excitation that observation noise alone pushes through the
            // action map (noise * smallest singular value of A_lin, squared).
            bool excited =
                strongest > 0.0 &&
                weakest > cfg.excitation_floor * cfg.excitation_floor * strongest;
            if (!excited && noise_sigma > 0.0) {
                const double a_lin_min_sv =
                    std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Mat>(
                                                a_lin.transpose() * a_lin)
                                                .eigenvalues()(0)));
                const double noise_driven = noise_sigma * a_lin_min_sv;
                excited = weakest >= 0.25 * noise_driven * noise_driven;
            }
            if (!excited) {
                event.skipped = true;
                event.detail = "insufficient excitation in the fit window";
                out.events.push_back(std::move(event));
                continue;
            }
        }

        bool retrain_policy = cfg.retrain_episodes > 0;
        try {
            if (cfg.model_kind == ModelKind::linear) {
                Mat response = fit_response_lstsq(window);
                if (cfg.noise_correction && noise_sigma > 0.0)
                    response += closed_loop_bias_correction(c_a, a_lin, noise_sigma);
                if (retrain_policy && cfg.retrain_threshold > 0.0 &&
                    last_trained_response.size() > 0) {
                    const double change = (response - last_trained_response).norm() /
                                          last_trained_response.norm();
                    if (change < cfg.retrain_threshold) {
                        retrain_policy = false;
                        char note[80];
                        std::snprintf(note, sizeof(note),
                                      "model change %.2e below threshold; retrain skipped",
                                      change);
                        event.detail = event.detail.empty()
                                           ? note
                                           : event.detail + "; " + note;
                    }
                }
                if (retrain_policy) last_trained_response = response;
                Mat surrogate =
                    cfg.model_floor > 0.0 ? spectral_floor(response, cfg.model_floor) : response;
                if (cfg.state_dither > 0.0)
                    dither_basis =
                        directional_dither_basis(surrogate, cfg.state_dither, cfg.dither_cap);
                model = std::make_unique<LinearModel>(std::move(surrogate));
                out.final_response = std::move(response);
            } else {
                train_forward_model(forward_net, window, cfg.forward_epochs, forward_state,
                                    cfg.seed + 900007ull * static_cast<std::uint64_t>(refit_count),
                                    cfg.forward_batch_size);
                model = std::make_unique<NeuralModel>(forward_net);
            }
            event.fit_residual = mean_squared_residual(*model, window);
        } catch (const RankError& e) {
            event.skipped = true;
            event.detail = e.what();
            out.events.push_back(std::move(event));
            continue;  // keep controlling with the previous policy
        }

        // Refresh the policy against the new surrogate. Rollouts are seeded
        // from the fit window's own observations rather than fresh synthetic
        // orbits: a slow closed-loop drift mode shows up as growth from the
        // states the loop is actually visiting, while it would be buried under
        // bulk transient decay when rolling out from full-amplitude states.
        // If the optimizer blows up (e.g. the surrogate came out unstable or
        // the window straddled a violent transient), roll back and keep flying
        // the previous policy rather than aborting the run.
        if (retrain_policy) {
            MlpParams policy_backup = out.policy;
            AdamState adam_backup = policy_state;
            try {
                RolloutConfig episode = retrain;
                // The catastrophe bound scales with the window so a retrain
                // during a recovery (legitimately large states) is not
                // rejected outright.
                double window_peak = env.config().init_rms;
                for (const Transition& t : window)
                    window_peak = std::max(window_peak, rms(t.s));
                episode.divergence_limit = 100.0 * window_peak;
                Rng retrain_rng =
                    make_rng(cfg.seed + 1000003ull * static_cast<std::uint64_t>(refit_count),
                             kStreamPolicyStates);
                std::uniform_int_distribution<std::size_t> pick(0, window.size() - 1);
                for (int ep = 0; ep < cfg.retrain_episodes; ++ep) {
                    const RolloutResult rolled =
                        rollout_loss(out.policy, *model, window[pick(retrain_rng)].s, episode);
                    adam_step(out.policy, rolled.grads, policy_state);
                }
            } catch (const DivergenceError& e) {
                out.policy = std::move(policy_backup);
                policy_state = std::move(adam_backup);
                const std::string why = std::string("retrain rolled back: ") + e.what();
                event.detail = event.detail.empty() ? why : event.detail + "; " + why;
            }
        }
        out.events.push_back(std::move(event));
    }

    out.log = env.log();
    return out;
}

void write_event_log(std::ostream& out, const std::vector<RefitEvent>& events) {
    out << "step,model,fit_residual,status,detail\n";
    std::string line;
    for (const RefitEvent& e : events) {
        line.clear();
        line += std::to_string(e.step);
        line += ',';
        line += model_kind_name(e.kind);
        line += ',';
        format_value(line, e.fit_residual);
        line += ',';
        line += e.skipped ? "skipped" : "ok";
        line += ',';
        line += e.detail;
        line += '\n';
        out << line;
    }
    if (!out) throw ValueError("write_event_log: stream write failed");
}

void write_event_log(const std::string& path, const std::vector<RefitEvent>& events) {
    std::ofstream file(path);
    if (!file) throw ValueError("write_event_log: cannot open '" + path + "' for writing");
    write_event_log(file, events);
}

}  // namespace orbit
