#pragma once

#include "orbit/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace orbit {

struct EnvConfig {
    int dim = 180;
    double cond_number = 1e3;
    double drift_fraction = 0.05;  // ||R_B - R_A||_F relative to ||R_A||_F
    int drift_steps = 5000;        // machine steps over which the drift completes
    double noise_sigma = 2e-4;     // per-BPM observation noise std, mm
    double init_rms = 0.25;        // per-component std of reset states, mm
    double action_clamp = 0.0;     // per-component |a_i| limit; 0 disables
    std::uint64_t seed = 1;

    void validate() const;
};

/// Ordered transitions plus the observed RMS before/after each step.
/// rms_series always has one more entry than transitions.
struct TrajectoryLog {
    std::vector<Transition> transitions;
    std::vector<double> rms_series;
};

double rms(const Vec& s);

/// Synthetic ORM with unit top singular value and log-spaced spectrum down to
/// 1/cond_number; U and V are seeded random orthogonal factors.
Mat generate_orm(int dim, double cond_number, std::uint64_t seed);

/// Second machine-state ORM: R_A plus a seeded Gaussian direction scaled so
/// that ||R_B - R_A||_F = drift_fraction * ||R_A||_F exactly.
Mat perturb_orm(const Mat& r, double drift_fraction, std::uint64_t seed);

/// First-order storage-ring simulator: s' = s + R_eff(t) a with R_eff drifting
/// linearly from R_A to R_B over drift_steps machine steps, plus i.i.d.
/// Gaussian observation noise. The true state is noiseless; noise exists only
/// in what the caller observes. Drift is machine time: reset() starts a new
/// episode without rewinding it.
class RingEnv {
  public:
    explicit RingEnv(const EnvConfig& config);
    RingEnv(const EnvConfig& config, Mat r_a, Mat r_b);

    Vec reset();
    Vec step(const Vec& action);

    Mat effective_orm(long at_step) const;
    Mat effective_orm() const { return effective_orm(step_count_); }

    const EnvConfig& config() const { return config_; }
    long step_count() const { return step_count_; }
    const Vec& true_state() const { return true_state_; }
    const Mat& r_a() const { return r_a_; }
    const Mat& r_b() const { return r_b_; }
    const TrajectoryLog& log() const { return log_; }

  private:
    Vec observe();
    void init_state();

    bool no_drift_ = false;

    EnvConfig config_;
    Mat r_a_;
    Mat r_b_;
    long step_count_ = 0;
    Vec true_state_;
    Vec last_observation_;
    Rng rng_;
    TrajectoryLog log_;
};

/// Trajectory CSV: header then one row per rms_series entry with the state
/// observed at that step and the action taken from it (zeros on the final row,
/// where no action follows).
void write_trajectory_csv(const std::string& path, const TrajectoryLog& log, int dim);
TrajectoryLog read_trajectory_csv(const std::string& path);

}  // namespace orbit
