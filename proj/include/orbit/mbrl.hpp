#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "orbit/controllers.hpp"
#include "orbit/env.hpp"
#include "orbit/mlp.hpp"

namespace orbit {

// Differentiable surrogate for the state-change map: s_{n+1} = s_n +
// predict_delta(s_n, a_n). Rollouts evaluate through predict_taped /
// backward so gradients can flow to the action (and state, when the model
// depends on it).
class SystemModel {
  public:
    struct StepTape {
        virtual ~StepTape() = default;
    };

    virtual ~SystemModel() = default;

    virtual int dim() const = 0;
    virtual Vec predict_delta(const Vec& s, const Vec& a) const = 0;

    // Evaluate while recording; the tape feeds the matching backward call.
    virtual std::unique_ptr<StepTape> predict_taped(const Vec& s, const Vec& a,
                                                    Vec& delta) const = 0;

    // Given dLoss/d(delta), produce dLoss/d(s) and dLoss/d(a) for this step.
    virtual void backward(const StepTape& tape, const Vec& delta_grad, Vec& s_grad,
                          Vec& a_grad) const = 0;

    virtual std::unique_ptr<SystemModel> clone() const = 0;
};

// First-order surrogate: predict_delta(s, a) = R a, independent of s.
class LinearModel : public SystemModel {
  public:
    explicit LinearModel(Mat response);

    int dim() const override { return static_cast<int>(response_.rows()); }
    Vec predict_delta(const Vec& s, const Vec& a) const override;
    std::unique_ptr<StepTape> predict_taped(const Vec& s, const Vec& a, Vec& delta) const override;
    void backward(const StepTape& tape, const Vec& delta_grad, Vec& s_grad,
                  Vec& a_grad) const override;
    std::unique_ptr<SystemModel> clone() const override;

    const Mat& response() const { return response_; }

  private:
    Mat response_;
};

// Learned surrogate: predict_delta(s, a) = f([s; a]) with an unbiased tanh
// network mapping 2*dim inputs to dim outputs.
class NeuralModel : public SystemModel {
  public:
    explicit NeuralModel(MlpParams net);

    int dim() const override { return net_.out_dim(); }
    Vec predict_delta(const Vec& s, const Vec& a) const override;
    std::unique_ptr<StepTape> predict_taped(const Vec& s, const Vec& a, Vec& delta) const override;
    void backward(const StepTape& tape, const Vec& delta_grad, Vec& s_grad,
                  Vec& a_grad) const override;
    std::unique_ptr<SystemModel> clone() const override;

    const MlpParams& net() const { return net_; }

  private:
    MlpParams net_;
};

// Default learned-surrogate architecture: [2*dim, 512, 512, 512, dim].
MlpParams forward_model_init(int dim, std::uint64_t seed);

struct RolloutConfig {
    int horizon = 20;     // surrogate steps per rollout
    int episodes = 2000;  // training episodes
    double gamma = 1.0;
    double action_scale = 1.0;  // action = action_scale * policy output
    // Abort threshold on rms(s) during a rollout; 0 disables the amplitude
    // guard (non-finite states always abort). train_policy fills a 0 in with
    // 100 * init_rms.
    double divergence_limit = 0.0;

    void validate() const;
};

struct RolloutResult {
    double loss = 0.0;
    std::vector<Mat> grads;  // dLoss/d(policy weights)
};

// Noiseless surrogate rollout from s0: actions a_i = action_scale *
// forward(p, s_i), states s_{i+1} = s_i + model delta, loss
// sum_{i=0}^{N-1} gamma^i * rms(s_i). Exact reverse-mode gradients w.r.t.
// the policy weights through all steps.
RolloutResult rollout_loss(const MlpParams& p, const SystemModel& model, const Vec& s0,
                           const RolloutConfig& cfg);

// Trajectory optimization: per episode, sample s0 ~ N(0, init_rms^2 I)
// (seeded), take one Adam step on the rollout loss. Returns the per-episode
// losses; divergence aborts with the episode index in the message.
std::vector<double> train_policy(MlpParams& p, const SystemModel& model, const RolloutConfig& cfg,
                                 double init_rms, AdamState& st, std::uint64_t seed);

/// Two-stage policy pretraining against a measured response matrix.
///
/// Both stages train against a spectrally floored copy of the matrix
/// (singular values clamped from below at sigma_floor): trajectory
/// optimization then converges to the floored inverse, which caps the gain
/// any response direction can receive at 1/sigma_floor. Directions whose
/// true singular value sits below the floor are damped more gently
/// (sigma_j/sigma_floor per unit gain) - exactly the directions a noisy
/// refit cannot pin down, so the deployed loop never rides on gains the
/// measurement cannot support. Pick the floor like a ridge weight: small
/// for clean, static rings; larger when the loop must survive online refits.
///
/// Stage one (warm start) regresses the policy onto ridge-solve labels from
/// the floored matrix; stage two refines it by differentiating through
/// surrogate rollouts on the same floored matrix.
struct PretrainConfig {
    double sigma_floor = 0.033;  // spectral floor for the training surrogate (0 disables)
    double warm_lambda = 1e-7;   // ridge weight for warm-start labels
    int warm_pairs = 8000;       // labeled state/action pairs
    int warm_epochs = 40;
    int warm_batch = 64;
    double warm_lr = 1e-3;
    int refine_episodes = 3000;
    // Episodes per train_policy call; each chunk reseeds its episode-start
    // stream so a refinement can be reproduced chunk by chunk.
    int refine_chunk = 500;
    double refine_lr = 1e-6;
    int horizon = 20;
    double action_scale = 1000.0;
    std::vector<int> hidden_layers = {512, 512, 512};
    std::uint64_t seed = 1;

    void validate() const;
};

/// Pretrains a policy for the given ring against r_nominal (for example the
/// measured ORM). Returns the refined network; per-epoch warm losses and
/// per-episode refine losses are appended to the optional histories.
MlpParams pretrain_policy(const Mat& r_nominal, const EnvConfig& env, const PretrainConfig& cfg,
                          std::vector<double>* warm_history = nullptr,
                          std::vector<double>* refine_history = nullptr);

// Least-squares response refit from logged transitions.
LinearModel refit_linear_model(const TrajectoryLog& log);

// Learned-surrogate refresh: minibatch MSE of f([s; a]) toward s_next - s.
std::vector<double> train_forward_model(MlpParams& f, const std::vector<Transition>& transitions,
                                        int epochs, AdamState& st, std::uint64_t seed,
                                        int batch_size = 64);
std::vector<double> train_forward_model(MlpParams& f, const TrajectoryLog& log, int epochs,
                                        AdamState& st, std::uint64_t seed, int batch_size = 64);

enum class ModelKind { linear, neural };

struct RefitEvent {
    long step = 0;
    ModelKind kind = ModelKind::linear;
    double fit_residual = 0.0;  // mean squared residual of the refreshed model on its fit window
    bool skipped = false;       // the refit failed; control continued on the previous model
    std::string detail;
};

struct AdaptiveConfig {
    ModelKind model_kind = ModelKind::linear;
    long refit_interval = 500;  // environment steps between model refreshes
    int retrain_episodes = 200;
    std::size_t buffer_capacity = 10000;
    std::size_t fit_window = 1000;  // most recent transitions used per refresh
    double action_scale = 1.0;
    double gain = 1.0;
    // Component-wise actuator limit applied to deployed actions (0 disables).
    // Bounds transient excursions while the surrogate lags a fast-moving ring.
    double action_clamp = 0.0;
    // Std of i.i.d. Gaussian exploration added to each deployed action
    // component (0 disables). Closed-loop feedback barely excites the
    // directions it already cancels well, and what little it does excite is
    // correlated with the observation noise, so refits are blind or biased
    // exactly where the ring responds most strongly. A dither near the noise
    // scale keeps every direction identifiable at negligible orbit cost.
    double action_dither = 0.0;
    // Target per-direction *state-space* excitation for direction-weighted
    // dither (0 disables). Flat action dither is spent almost entirely on the
    // strong response directions, while the weak directions - whose response
    // is small enough for slow drift to flip its sign, and which the policy
    // meets with its largest gains - stay buried under the observation noise.
    // Weighting the dither by the inverse singular values of the current
    // surrogate equalizes what the orbit sees: direction j receives action std
    // state_dither / sigma_j, so every direction is identified to a comparable
    // absolute accuracy, and the large kicks go precisely where the ring
    // barely responds. Costs about sqrt(1.2) * state_dither of orbit RMS in
    // total. Requires a current linear surrogate (the nominal response before
    // the first refresh); silently inactive without one.
    double state_dither = 0.0;
    // Per-direction cap on the direction-weighted dither's action std, so a
    // near-null fitted direction cannot request an unbounded kick.
    double dither_cap = 0.1;
    // Compensate the known correlation between observation noise and the
    // closed-loop actions when refitting the linear model (uses the
    // environment's configured noise level); exact no-op when noise is zero.
    bool noise_correction = true;
    // Floor applied to the singular values of each refitted linear surrogate
    // before the policy retrains on it (0 disables). A floor-level fit cannot
    // pin down the near-null response directions to better than their own
    // magnitude, and a trajectory optimizer handed the raw fit would invert
    // those phantom entries with enormous gains. Flooring the spectrum caps
    // the gain the optimizer can extract from any direction at 1/model_floor,
    // trading slow weak-mode convergence for insensitivity to exactly the
    // errors a noisy closed loop cannot avoid. Match the floor used when
    // pretraining the deployed policy.
    double model_floor = 0.0;
    // Persistency-of-excitation guard: a refresh is skipped (and logged) when
    // the fit window's weakest action direction falls below this fraction of
    // its strongest, so converged or one-sided data cannot replace a good
    // model with a directionally blind one. Noisy closed loops keep every
    // direction excited at roughly damping/condition of the strongest
    // (>= 2.5e-4 at the defaults), so 1e-5 leaves wide margin before refits
    // start being skipped in normal operation. 0 disables the guard.
    double excitation_floor = 1e-5;
    // Excursion-triggered refresh: when the observed orbit RMS exceeds this
    // multiple of the observation noise, schedule an immediate refit instead
    // of waiting out the interval (0 disables; inert when noise is zero). A
    // drifting ring destabilizes gradually, and the growing direction is
    // invisible to a floor-level fit until it actually moves the orbit -
    // catching the excursion early hands the fit a window dominated by
    // exactly the coupling that needs correcting, while the orbit is still
    // in the small-signal regime.
    double refresh_excursion = 0.0;
    // Minimum spacing (steps) between excursion-triggered refits, so a slow
    // recovery cannot spend every step refitting.
    int refresh_spacing = 50;
    // Relative Frobenius change of the fitted response below which a refresh
    // updates the surrogate but skips the policy retrain (0 retrains on every
    // refresh). On a stationary ring successive fits differ only by their own
    // sampling noise, and retraining against each one in turn makes the
    // policy chase that noise indefinitely; the gate stops the churn while
    // letting any genuine machine movement - drift or a newly expressed
    // coupling - through.
    double retrain_threshold = 0.0;
    int horizon = 20;
    double gamma = 1.0;
    double policy_lr = 1e-4;
    double model_lr = 1e-4;
    int forward_epochs = 50;
    int forward_batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const;
};

struct AdaptiveResult {
    TrajectoryLog log;
    std::vector<RefitEvent> events;
    MlpParams policy;    // policy after online retraining
    Mat final_response;  // last successfully fitted linear response (empty if none)
};

/// Closed-loop control with online model refreshes: run the policy on the
// environment, buffer transitions, refit the surrogate every refit_interval
// steps from the most recent fit_window transitions, then retrain the policy
// on the refreshed surrogate for retrain_episodes. Failed refits are logged
// and skipped. The environment is reset at entry.
AdaptiveResult adaptive_loop(RingEnv& env, const MlpParams& pretrained, const AdaptiveConfig& cfg,
                             long total_steps);

/// Same loop seeded with a nominal response matrix (e.g. the measured ORM the
// policy was pretrained on): the direction-weighted dither gets its basis from
// step one instead of waiting for the first successful refresh.
AdaptiveResult adaptive_loop(RingEnv& env, const MlpParams& pretrained, const Mat& nominal_response,
                             const AdaptiveConfig& cfg, long total_steps);

void write_event_log(std::ostream& out, const std::vector<RefitEvent>& events);
void write_event_log(const std::string& path, const std::vector<RefitEvent>& events);

}  // namespace orbit
