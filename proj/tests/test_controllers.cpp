#include <cmath>
#include <random>

#include "doctest.h"
#include "orbit/controllers.hpp"
#include "orbit/env.hpp"

using namespace orbit;

namespace {

Mat random_matrix(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

Vec random_vector(int n, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = dist(rng);
    return v;
}

}  // namespace

TEST_CASE("svd controller returns the exact zero action for a zero state") {
    Rng rng = make_rng(3);
    const Mat r = random_matrix(6, 6, rng);
    SvdController ctrl(r, 0.01);
    const Vec a = ctrl.act(Vec::Zero(6));
    CHECK(a.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("svd controller closed form on the 2x2 identity") {
    SvdController ctrl(Mat::Identity(2, 2), 1.0, 1.0);
    Vec s(2);
    s << 1.0, 1.0;
    const Vec a = ctrl.act(s);
    CHECK(std::abs(a(0) - (-0.5)) < 1e-12);
    CHECK(std::abs(a(1) - (-0.5)) < 1e-12);
}

TEST_CASE("svd controller matches the ridge solution on a seeded 10x10 system") {
    Rng rng = make_rng(17);
    const Mat r = random_matrix(10, 10, rng);
    const Vec s = random_vector(10, rng);
    SvdController ctrl(r, 0.01);
    const Vec a = ctrl.act(s);
    const Vec ref = ridge_solve(r, s, 0.01);
    CHECK((a - ref).cwiseAbs().maxCoeff() <= 1e-9 * ref.cwiseAbs().maxCoeff());
}

TEST_CASE("svd controller and ridge solve agree over 100 seeded triples") {
    const double lambdas[] = {0.0, 1e-6, 1e-2, 1.0};
    const double gains[] = {1.0, 0.7, 0.25};
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng = make_rng(500 + trial);
        std::uniform_int_distribution<int> dim_dist(2, 50);
        const int n = dim_dist(rng);
        const Mat r = random_matrix(n, n, rng);
        const Vec s = random_vector(n, rng);
        const double lambda = lambdas[trial % 4];
        const double gain = gains[trial % 3];
        Vec ref;
        try {
            ref = gain * ridge_solve(r, s, lambda);
        } catch (const SingularityError&) {
            continue;
        }
        SvdController ctrl(r, lambda, gain);
        const Vec a = ctrl.act(s);
        CHECK((a - ref).cwiseAbs().maxCoeff() <= 1e-9 * ref.cwiseAbs().maxCoeff());
        ++checked;
    }
    CHECK(checked >= 95);
}

TEST_CASE("per-mode response is largest at sigma = sqrt(lambda) and shrinks with lambda") {
    const double lambda = 0.04;
    const double root = std::sqrt(lambda);
    Vec s(1);
    s << 1.0;
    auto response = [&](double sigma, double lam) {
        Mat r(1, 1);
        r << sigma;
        SvdController ctrl(r, lam);
        return std::abs(ctrl.act(s)(0));
    };
    const double peak = response(root, lambda);
    for (double factor : {0.25, 0.5, 2.0, 4.0}) {
        CHECK(peak > response(root * factor, lambda));
    }
    double prev = response(0.5, 0.01);
    for (double lam : {0.1, 1.0, 10.0}) {
        const double cur = response(0.5, lam);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("one step with lambda 0 and gain 1 cancels the state exactly") {
    EnvConfig cfg;
    cfg.dim = 8;
    cfg.cond_number = 100.0;
    cfg.drift_fraction = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.seed = 29;
    RingEnv env(cfg);
    SvdController ctrl(env.r_a(), 0.0, 1.0);
    const Vec s0 = env.reset();
    env.step(ctrl.act(s0));
    CHECK(env.true_state().cwiseAbs().maxCoeff() <= 1e-9 * s0.cwiseAbs().maxCoeff());
}

TEST_CASE("default lambda is 1e-4 times the squared leading singular value") {
    Mat r(2, 2);
    r << 2.0, 0.0, 0.0, 1.0;
    SvdController defaulted(r);
    CHECK(defaulted.lambda() == doctest::Approx(4e-4).epsilon(1e-12));
    SvdController explicit_lambda(r, 4e-4);
    Rng rng = make_rng(31);
    const Vec s = random_vector(2, rng);
    CHECK((defaulted.act(s) - explicit_lambda.act(s)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("svd controller validates configuration and input dimensions") {
    const Mat r = Mat::Identity(3, 3);
    CHECK_THROWS_AS(SvdController(r, -1.0), ConfigError);
    CHECK_THROWS_AS(SvdController(r, 0.1, 0.0), ConfigError);
    CHECK_THROWS_AS(SvdController(r, 0.1, 1.5), ConfigError);
    SvdController ctrl(r, 0.1);
    CHECK_THROWS_AS(ctrl.act(Vec::Zero(4)), DimensionError);
}

TEST_CASE("observe_transition is a no-op for the svd controller") {
    Rng rng = make_rng(41);
    const Mat r = random_matrix(5, 5, rng);
    const Vec s = random_vector(5, rng);
    SvdController ctrl(r, 0.01);
    const Vec before = ctrl.act(s);
    ctrl.observe_transition(s, before, s);
    const Vec after = ctrl.act(s);
    CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("policy controller preserves zero and stays within the action scale") {
    MlpParams p = mlp_init({6, 16, 16, 6}, 7);
    PolicyController ctrl(p, 3.0);
    CHECK(ctrl.act(Vec::Zero(6)).cwiseAbs().maxCoeff() == 0.0);
    Rng rng = make_rng(43);
    for (int k = 0; k < 10; ++k) {
        const Vec a = ctrl.act(random_vector(6, rng));
        CHECK(a.cwiseAbs().maxCoeff() <= 3.0);
    }
}

TEST_CASE("policy controller is deterministic and scales linearly with gain") {
    MlpParams p = mlp_init({4, 8, 4}, 11);
    PolicyController full(p, 2.0, 1.0);
    PolicyController half(p, 2.0, 0.5);
    Rng rng = make_rng(47);
    const Vec s = random_vector(4, rng);
    const Vec a1 = full.act(s);
    const Vec a2 = full.act(s);
    CHECK((a1 - a2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((half.act(s) - 0.5 * a1).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("policy controller validates configuration and input dimensions") {
    MlpParams p = mlp_init({4, 8, 4}, 13);
    CHECK_THROWS_AS(PolicyController(p, 0.0), ConfigError);
    CHECK_THROWS_AS(PolicyController(p, 1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(PolicyController(p, 1.0, 2.0), ConfigError);
    PolicyController ctrl(p, 1.0);
    CHECK_THROWS_AS(ctrl.act(Vec::Zero(5)), DimensionError);
}

TEST_CASE("transition buffer evicts the oldest entries at capacity") {
    TransitionBuffer buf(3);
    CHECK(buf.capacity() == 3);
    CHECK(buf.empty());
    for (int k = 0; k < 5; ++k) {
        Transition t;
        t.s = Vec::Constant(1, static_cast<double>(k));
        t.a = Vec::Zero(1);
        t.s_next = Vec::Zero(1);
        buf.push(t);
    }
    REQUIRE(buf.size() == 3);
    CHECK(buf[0].s(0) == 2.0);
    CHECK(buf[2].s(0) == 4.0);
    const auto last_two = buf.recent(2);
    REQUIRE(last_two.size() == 2);
    CHECK(last_two[0].s(0) == 3.0);
    CHECK(last_two[1].s(0) == 4.0);
    CHECK(buf.recent(10).size() == 3);
    CHECK_THROWS_AS(TransitionBuffer(0), ConfigError);
}
