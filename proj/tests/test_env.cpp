#include "doctest.h"

#include "orbit/env.hpp"

#include <cmath>
#include <filesystem>

using namespace orbit;

namespace {

EnvConfig small_config() {
    EnvConfig cfg;
    cfg.dim = 4;
    cfg.cond_number = 1e3;
    cfg.drift_fraction = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("rms closed forms") {
    CHECK(rms(Vec::Zero(5)) == 0.0);
    CHECK(rms(Vec{{3.0, 4.0}}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
    CHECK(rms(Vec::Constant(9, -0.7)) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("generate_orm produces the requested log-spaced spectrum") {
    Mat r1 = generate_orm(1, 10.0, 3);
    CHECK(std::abs(std::abs(r1(0, 0)) - 1.0) < 1e-14);

    Mat r4 = generate_orm(4, 1e3, 3);
    SvdResult dec = svd(r4);
    CHECK(dec.sigma(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dec.sigma(1) == doctest::Approx(1e-1).epsilon(1e-12));
    CHECK(dec.sigma(2) == doctest::Approx(1e-2).epsilon(1e-12));
    CHECK(dec.sigma(3) == doctest::Approx(1e-3).epsilon(1e-12));

    Mat again = generate_orm(4, 1e3, 3);
    CHECK((again - r4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("perturb_orm hits the requested relative Frobenius distance") {
    Mat r = generate_orm(8, 100.0, 5);
    CHECK((perturb_orm(r, 0.0, 6) - r).cwiseAbs().maxCoeff() == 0.0);

    Mat rb = perturb_orm(r, 0.05, 6);
    CHECK((rb - r).norm() / r.norm() == doctest::Approx(0.05).epsilon(1e-12));
    Mat rb2 = perturb_orm(r, 0.05, 6);
    CHECK((rb2 - rb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reset samples states at the configured RMS scale") {
    // At dim 180 the RMS of a fresh state concentrates near init_rms with
    // standard deviation init_rms / sqrt(2 * dim) ~ 0.013, so almost all
    // draws land inside [0.22, 0.28] and the mean lands much closer still.
    EnvConfig cfg;
    cfg.dim = 180;
    cfg.init_rms = 0.25;
    cfg.noise_sigma = 0.0;
    cfg.seed = 21;
    RingEnv env(cfg);
    const int n_resets = 400;
    int inside = 0;
    double sum = 0.0;
    for (int k = 0; k < n_resets; ++k) {
        Vec s = env.reset();
        const double r = rms(s);
        CHECK(r > 0.19);
        CHECK(r < 0.31);
        if (r > 0.22 && r < 0.28) ++inside;
        sum += r;
    }
    CHECK(inside >= static_cast<int>(0.95 * n_resets));
    const double mean = sum / n_resets;
    CHECK(mean > 0.243);
    CHECK(mean < 0.257);
}

TEST_CASE("observation equals the true state when noise is zero") {
    RingEnv env(small_config());
    Vec obs = env.reset();
    CHECK((obs - env.true_state()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a zero action leaves the noiseless state unchanged") {
    RingEnv env(small_config());
    Vec s0 = env.reset();
    Vec s1 = env.step(Vec::Zero(4));
    CHECK((s1 - s0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("an exact ridge inversion zeroes the state in one step") {
    RingEnv env(small_config());
    Vec s0 = env.reset();
    Vec a = ridge_solve(env.r_a(), s0, 0.0);
    Vec s1 = env.step(a);
    CHECK(s1.cwiseAbs().maxCoeff() <= 1e-9 * s0.cwiseAbs().maxCoeff());
}

TEST_CASE("drift schedule is affine in machine time and saturates at R_B") {
    EnvConfig cfg = small_config();
    cfg.drift_fraction = 0.3;
    cfg.drift_steps = 10;
    RingEnv env(cfg);
    const Mat& ra = env.r_a();
    const Mat& rb = env.r_b();
    for (long t : {0L, 3L, 7L, 10L}) {
        Mat expected = ra + (static_cast<double>(t) / 10.0) * (rb - ra);
        CHECK((env.effective_orm(t) - expected).cwiseAbs().maxCoeff() <= 1e-15);
    }
    CHECK((env.effective_orm(25) - rb).cwiseAbs().maxCoeff() == 0.0);

    env.reset();
    for (int t = 0; t < 10; ++t) env.step(Vec::Zero(4));
    CHECK((env.effective_orm() - rb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reset preserves the machine-time step count") {
    EnvConfig cfg = small_config();
    cfg.drift_fraction = 0.1;
    RingEnv env(cfg);
    env.reset();
    env.step(Vec::Zero(4));
    env.step(Vec::Zero(4));
    CHECK(env.step_count() == 2);
    env.reset();
    CHECK(env.step_count() == 2);
}

TEST_CASE("identical configs and actions give bit-identical observations") {
    EnvConfig cfg = small_config();
    cfg.noise_sigma = 2e-4;
    cfg.drift_fraction = 0.05;
    RingEnv env1(cfg);
    RingEnv env2(cfg);
    Vec o1 = env1.reset();
    Vec o2 = env2.reset();
    CHECK((o1 - o2).cwiseAbs().maxCoeff() == 0.0);
    Rng rng = make_rng(99);
    for (int k = 0; k < 50; ++k) {
        Vec a = gaussian_vector(4, 0.1, rng);
        Vec s1 = env1.step(a);
        Vec s2 = env2.step(a);
        CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("observation noise has the configured per-component scale") {
    EnvConfig cfg = small_config();
    cfg.dim = 2;
    cfg.noise_sigma = 2e-4;
    RingEnv env(cfg);
    // True state stays at zero under zero actions, so observations are the
    // noise itself.
    double sum_sq = 0.0;
    const int steps = 100000;
    for (int k = 0; k < steps; ++k) {
        Vec obs = env.step(Vec::Zero(2));
        sum_sq += obs.squaredNorm();
    }
    const double sample_std = std::sqrt(sum_sq / (2.0 * steps));
    CHECK(sample_std > 0.98 * cfg.noise_sigma);
    CHECK(sample_std < 1.02 * cfg.noise_sigma);
}

TEST_CASE("step validates the action and leaves state untouched on error") {
    RingEnv env(small_config());
    Vec s0 = env.reset();
    CHECK_THROWS_AS(env.step(Vec::Zero(3)), DimensionError);
    Vec bad = Vec::Zero(4);
    bad(1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(env.step(bad), ValueError);
    CHECK(env.step_count() == 0);
    CHECK((env.true_state() - s0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("action clamp limits per-component magnitudes") {
    EnvConfig cfg = small_config();
    cfg.action_clamp = 0.5;
    RingEnv env(cfg);
    env.reset();
    Vec big = Vec::Constant(4, 10.0);
    env.step(big);
    const Transition& t = env.log().transitions.back();
    CHECK(t.a.cwiseAbs().maxCoeff() == 0.5);
}

TEST_CASE("config validation rejects out-of-range fields") {
    EnvConfig cfg = small_config();
    cfg.dim = 0;
    CHECK_THROWS_AS(RingEnv{cfg}, ConfigError);
    cfg = small_config();
    cfg.drift_fraction = 1.5;
    CHECK_THROWS_AS(RingEnv{cfg}, ConfigError);
    cfg = small_config();
    cfg.init_rms = 0.0;
    CHECK_THROWS_AS(RingEnv{cfg}, ConfigError);
}

TEST_CASE("trajectory log invariants and CSV round-trip") {
    EnvConfig cfg = small_config();
    cfg.noise_sigma = 1e-3;
    RingEnv env(cfg);
    env.reset();
    Rng rng = make_rng(123);
    for (int k = 0; k < 6; ++k) env.step(gaussian_vector(4, 0.2, rng));
    const TrajectoryLog& log = env.log();
    REQUIRE(log.rms_series.size() == log.transitions.size() + 1);
    for (double r : log.rms_series) CHECK(r >= 0.0);

    const std::string path = "trajectory_roundtrip.csv";
    write_trajectory_csv(path, log, cfg.dim);
    TrajectoryLog back = read_trajectory_csv(path);
    std::filesystem::remove(path);
    REQUIRE(back.transitions.size() == log.transitions.size());
    REQUIRE(back.rms_series.size() == log.rms_series.size());
    for (std::size_t k = 0; k < log.rms_series.size(); ++k)
        CHECK(back.rms_series[k] == log.rms_series[k]);
    for (std::size_t k = 0; k < log.transitions.size(); ++k) {
        CHECK((back.transitions[k].s - log.transitions[k].s).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.transitions[k].a - log.transitions[k].a).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.transitions[k].s_next - log.transitions[k].s_next).cwiseAbs().maxCoeff() ==
              0.0);
    }
}
