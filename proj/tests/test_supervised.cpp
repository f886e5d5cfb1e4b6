#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "orbit/supervised.hpp"

using namespace orbit;

namespace {

EnvConfig tiny_config(int dim) {
    EnvConfig cfg;
    cfg.dim = dim;
    cfg.cond_number = 10.0;
    cfg.drift_fraction = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.init_rms = 0.25;
    cfg.seed = 5;
    return cfg;
}

bool identical(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if ((a.states[k] - b.states[k]).cwiseAbs().maxCoeff() != 0.0) return false;
        if ((a.actions[k] - b.actions[k]).cwiseAbs().maxCoeff() != 0.0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("svd-label datasets reproduce the ridge oracle and are reproducible") {
    const EnvConfig cfg = tiny_config(6);
    const Mat r = generate_orm(cfg.dim, cfg.cond_number, cfg.seed);
    const double lambda = 0.01;
    const LabeledDataset d = gen_dataset_svd_labels(cfg, r, lambda, 50, 9);
    CHECK(d.provenance == DatasetProvenance::svd_labels);
    REQUIRE(d.size() == 50);
    for (std::size_t k = 0; k < d.size(); ++k) {
        const Vec ref = ridge_solve(r, d.states[k], lambda);
        CHECK((d.actions[k] - ref).cwiseAbs().maxCoeff() <= 1e-9 * ref.cwiseAbs().maxCoeff());
    }
    const LabeledDataset again = gen_dataset_svd_labels(cfg, r, lambda, 50, 9);
    CHECK(identical(d, again));
    CHECK_FALSE(identical(d, gen_dataset_svd_labels(cfg, r, lambda, 50, 10)));
    CHECK_THROWS_AS(gen_dataset_svd_labels(cfg, r, lambda, 0, 9), ConfigError);
}

TEST_CASE("forward datasets on the identity system label states with the undoing action") {
    const EnvConfig cfg = tiny_config(4);
    RingEnv env(cfg, Mat::Identity(4, 4), Mat::Identity(4, 4));
    const LabeledDataset d = gen_dataset_forward(env, 0.3, 6, 13);
    CHECK(d.provenance == DatasetProvenance::forward_random);
    REQUIRE(d.size() == 6);
    CHECK((d.states[0] + d.actions[0]).cwiseAbs().maxCoeff() == 0.0);
    // Later states accumulate, so the recovered action is exact only up to
    // the rounding of s + a at state magnitude.
    for (std::size_t k = 1; k < d.size(); ++k) {
        const Vec delta = d.states[k] - d.states[k - 1];
        CHECK((delta + d.actions[k]).cwiseAbs().maxCoeff() <= 1e-15);
    }
}

TEST_CASE("forward datasets invert a general response at the origin") {
    const EnvConfig cfg = tiny_config(5);
    RingEnv env(cfg);
    const LabeledDataset d = gen_dataset_forward(env, 0.5, 1, 17);
    REQUIRE(d.size() == 1);
    const Vec recovered = ridge_solve(env.r_a(), d.states[0], 0.0);
    CHECK((recovered - d.actions[0]).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK_THROWS_AS(gen_dataset_forward(env, 0.0, 1, 17), ConfigError);
}

TEST_CASE("dataset csv round-trips bit exactly") {
    const EnvConfig cfg = tiny_config(3);
    const Mat r = generate_orm(cfg.dim, cfg.cond_number, cfg.seed);
    const LabeledDataset d = gen_dataset_svd_labels(cfg, r, 1e-3, 20, 21);
    const std::string path = "dataset_roundtrip.csv";
    write_dataset_csv(path, d);
    const LabeledDataset back = ingest_dataset(path);
    std::filesystem::remove(path);
    CHECK(back.provenance == DatasetProvenance::archive);
    CHECK(identical(d, back));
}

TEST_CASE("dataset ingestion validates the format and reports line numbers") {
    std::istringstream empty("3\n");
    CHECK(read_dataset_csv(empty, "mem").size() == 0);

    std::istringstream short_row("2\n1.0,2.0,3.0\n");
    CHECK_THROWS_WITH_AS(read_dataset_csv(short_row, "mem"),
                         doctest::Contains("mem:2"), ParseError);

    std::istringstream bad_cell("1\n1.0,oops\n");
    CHECK_THROWS_WITH_AS(read_dataset_csv(bad_cell, "mem"),
                         doctest::Contains("mem:2"), ParseError);

    std::istringstream bad_header("zero\n");
    CHECK_THROWS_AS(read_dataset_csv(bad_header, "mem"), ParseError);

    CHECK_THROWS_AS(ingest_dataset("no_such_dataset_file.csv"), ParseError);
}

TEST_CASE("training on a single zero pair leaves the network unchanged") {
    MlpParams p = mlp_init({3, 5, 3}, 15);
    const MlpParams before = p;
    LabeledDataset d;
    d.states.push_back(Vec::Zero(3));
    d.actions.push_back(Vec::Zero(3));
    AdamState st = adam_init(p);
    const std::vector<double> history = train_supervised(p, d, 3, 64, st, 1);
    REQUIRE(history.size() == 3);
    for (double loss : history) CHECK(loss == 0.0);
    for (std::size_t k = 0; k < p.weights.size(); ++k)
        CHECK((p.weights[k] - before.weights[k]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a realizable one-dimensional target trains to near-zero loss") {
    Rng rng = make_rng(99);
    std::normal_distribution<double> dist(0.0, 1.0);
    LabeledDataset d;
    for (int k = 0; k < 256; ++k) {
        Vec s(1), a(1);
        s(0) = dist(rng);
        a(0) = std::tanh(0.8 * s(0));
        d.states.push_back(s);
        d.actions.push_back(a);
    }
    MlpParams p = mlp_init({1, 1}, 23);
    AdamState st = adam_init(p, 1e-3);
    // 256 samples at batch 64 gives 4 updates per epoch; 1250 epochs = 5000 steps.
    const std::vector<double> history = train_supervised(p, d, 1250, 64, st, 2);
    CHECK(history.back() <= 1e-6);
}

TEST_CASE("epoch losses mostly decrease on an svd-labeled dataset") {
    const EnvConfig cfg = tiny_config(6);
    const Mat r = generate_orm(cfg.dim, cfg.cond_number, cfg.seed);
    const LabeledDataset d = gen_dataset_svd_labels(cfg, r, 1e-4, 1500, 25);
    MlpParams p = mlp_init({6, 32, 32, 6}, 27);
    AdamState st = adam_init(p, 1e-4);
    const std::vector<double> history = train_supervised(p, d, 40, 64, st, 3, 5.0);
    REQUIRE(history.size() == 40);
    int non_increasing = 0;
    for (std::size_t k = 1; k < history.size(); ++k)
        if (history[k] <= history[k - 1]) ++non_increasing;
    CHECK(non_increasing >= 35);
    CHECK(history.back() < history.front());
}

TEST_CASE("supervised training is deterministic per seed") {
    const EnvConfig cfg = tiny_config(4);
    const Mat r = generate_orm(cfg.dim, cfg.cond_number, cfg.seed);
    const LabeledDataset d = gen_dataset_svd_labels(cfg, r, 1e-3, 100, 31);
    MlpParams p1 = mlp_init({4, 8, 4}, 33);
    MlpParams p2 = mlp_init({4, 8, 4}, 33);
    AdamState st1 = adam_init(p1);
    AdamState st2 = adam_init(p2);
    const std::vector<double> h1 = train_supervised(p1, d, 3, 32, st1, 4, 2.0);
    const std::vector<double> h2 = train_supervised(p2, d, 3, 32, st2, 4, 2.0);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t k = 0; k < h1.size(); ++k) CHECK(h1[k] == h2[k]);
    for (std::size_t k = 0; k < p1.weights.size(); ++k)
        CHECK((p1.weights[k] - p2.weights[k]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training validates dimensions and configuration") {
    MlpParams p = mlp_init({4, 8, 4}, 35);
    AdamState st = adam_init(p);
    LabeledDataset empty;
    CHECK_THROWS_AS(train_supervised(p, empty, 1, 64, st, 1), ValueError);

    LabeledDataset wrong;
    wrong.states.push_back(Vec::Zero(3));
    wrong.actions.push_back(Vec::Zero(3));
    CHECK_THROWS_AS(train_supervised(p, wrong, 1, 64, st, 1), DimensionError);

    LabeledDataset ok;
    ok.states.push_back(Vec::Zero(4));
    ok.actions.push_back(Vec::Zero(4));
    CHECK_THROWS_AS(train_supervised(p, ok, -1, 64, st, 1), ConfigError);
    CHECK_THROWS_AS(train_supervised(p, ok, 1, 0, st, 1), ConfigError);
    CHECK_THROWS_AS(train_supervised(p, ok, 1, 64, st, 1, 0.0), ConfigError);
}
