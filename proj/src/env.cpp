#include "orbit/env.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace orbit {

void EnvConfig::validate() const {
    if (dim < 1) throw ConfigError("EnvConfig: dim must be >= 1");
    if (!(cond_number >= 1.0)) throw ConfigError("EnvConfig: cond_number must be >= 1");
    if (!(drift_fraction >= 0.0 && drift_fraction <= 1.0))
        throw ConfigError("EnvConfig: drift_fraction must lie in [0, 1]");
    if (drift_steps < 0) throw ConfigError("EnvConfig: drift_steps must be >= 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("EnvConfig: noise_sigma must be >= 0");
    if (!(init_rms > 0.0)) throw ConfigError("EnvConfig: init_rms must be > 0");
    if (!(action_clamp >= 0.0)) throw ConfigError("EnvConfig: action_clamp must be >= 0");
}

double rms(const Vec& s) {
    if (s.size() == 0) return 0.0;
    return std::sqrt(s.squaredNorm() / static_cast<double>(s.size()));
}

namespace {

// Random orthogonal factor: QR of a Gaussian matrix with the sign of each
// column fixed so the result is deterministic and Haar-ish.
Mat random_orthogonal(int dim, Rng& rng) {
    Mat g(dim, dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace

Mat generate_orm(int dim, double cond_number, std::uint64_t seed) {
    if (dim < 1) throw ValueError("generate_orm: dim must be >= 1");
    if (!(cond_number >= 1.0)) throw ValueError("generate_orm: cond_number must be >= 1");
    Rng rng = make_rng(seed, 101);
    Mat u = random_orthogonal(dim, rng);
    Mat v = random_orthogonal(dim, rng);
    Vec sigma(dim);
    if (dim == 1) {
        sigma(0) = 1.0;
    } else {
        const double log_min = -std::log10(cond_number);
        for (int i = 0; i < dim; ++i)
            sigma(i) = std::pow(10.0, log_min * static_cast<double>(i) / static_cast<double>(dim - 1));
    }
    return u * sigma.asDiagonal() * v.transpose();
}

Mat perturb_orm(const Mat& r, double drift_fraction, std::uint64_t seed) {
    if (!(drift_fraction >= 0.0)) throw ValueError("perturb_orm: drift_fraction must be >= 0");
    if (drift_fraction == 0.0) return r;
    Rng rng = make_rng(seed, 202);
    Mat e(r.rows(), r.cols());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = 0; j < e.cols(); ++j) e(i, j) = normal(rng);
    const double scale = drift_fraction * r.norm() / e.norm();
    return r + scale * e;
}

RingEnv::RingEnv(const EnvConfig& config) : config_(config), rng_(make_rng(config.seed, 303)) {
    config_.validate();
    r_a_ = generate_orm(config_.dim, config_.cond_number, config_.seed);
    r_b_ = perturb_orm(r_a_, config_.drift_fraction, config_.seed + 1);
    init_state();
}

RingEnv::RingEnv(const EnvConfig& config, Mat r_a, Mat r_b)
    : config_(config), r_a_(std::move(r_a)), r_b_(std::move(r_b)),
      rng_(make_rng(config.seed, 303)) {
    config_.validate();
    if (r_a_.rows() != config_.dim || r_a_.cols() != config_.dim ||
        r_b_.rows() != config_.dim || r_b_.cols() != config_.dim)
        throw DimensionError("RingEnv: ORM shape does not match configured dim");
    require_finite(r_a_, "RingEnv: R_A");
    require_finite(r_b_, "RingEnv: R_B");
    init_state();
}

void RingEnv::init_state() {
    no_drift_ = (r_a_ - r_b_).cwiseAbs().maxCoeff() == 0.0;
    true_state_ = Vec::Zero(config_.dim);
    last_observation_ = true_state_;
    log_.rms_series.push_back(0.0);
}

Vec RingEnv::observe() {
    if (config_.noise_sigma == 0.0) return true_state_;
    return true_state_ + gaussian_vector(config_.dim, config_.noise_sigma, rng_);
}

Vec RingEnv::reset() {
    true_state_ = gaussian_vector(config_.dim, config_.init_rms, rng_);
    Vec obs = observe();
    log_ = TrajectoryLog{};
    log_.rms_series.push_back(rms(obs));
    last_observation_ = obs;
    return obs;
}

Mat RingEnv::effective_orm(long at_step) const {
    if (no_drift_) return r_a_;
    double alpha = 1.0;
    if (config_.drift_steps > 0)
        alpha = std::min(static_cast<double>(at_step) / static_cast<double>(config_.drift_steps), 1.0);
    if (alpha == 0.0) return r_a_;
    if (alpha == 1.0) return r_b_;
    return (1.0 - alpha) * r_a_ + alpha * r_b_;
}

Vec RingEnv::step(const Vec& action) {
    if (action.size() != config_.dim)
        throw DimensionError("RingEnv::step: action length does not match dim");
    if (!action.allFinite())
        throw ValueError("RingEnv::step: action has non-finite entries");
    Vec a = action;
    if (config_.action_clamp > 0.0)
        a = a.cwiseMax(-config_.action_clamp).cwiseMin(config_.action_clamp);

    double alpha = 1.0;
    if (no_drift_)
        alpha = 0.0;
    else if (config_.drift_steps > 0)
        alpha = std::min(static_cast<double>(step_count_) / static_cast<double>(config_.drift_steps), 1.0);
    Vec delta;
    if (alpha == 0.0)
        delta = r_a_ * a;
    else if (alpha == 1.0)
        delta = r_b_ * a;
    else
        delta = (1.0 - alpha) * (r_a_ * a) + alpha * (r_b_ * a);

    true_state_ += delta;
    ++step_count_;
    Vec obs = observe();
    log_.transitions.push_back(Transition{last_observation_, a, obs});
    log_.rms_series.push_back(rms(obs));
    last_observation_ = obs;
    return obs;
}

void write_trajectory_csv(const std::string& path, const TrajectoryLog& log, int dim) {
    if (log.rms_series.size() != log.transitions.size() + 1)
        throw ValueError("write_trajectory_csv: rms_series length must be transitions + 1");
    std::ofstream out(path);
    if (!out) throw Error("write_trajectory_csv: cannot open " + path);
    out << "step,rms";
    for (int i = 0; i < dim; ++i) out << ",s_" << i;
    for (int i = 0; i < dim; ++i) out << ",a_" << i;
    out << "\n";
    std::string line;
    const std::size_t n = log.rms_series.size();
    for (std::size_t k = 0; k < n; ++k) {
        line.clear();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%zu", k);
        line += buf;
        line += ',';
        format_value(line, log.rms_series[k]);
        const Vec* s = nullptr;
        const Vec* a = nullptr;
        if (k < log.transitions.size()) {
            s = &log.transitions[k].s;
            a = &log.transitions[k].a;
        } else if (!log.transitions.empty()) {
            s = &log.transitions.back().s_next;
        }
        for (int i = 0; i < dim; ++i) {
            line += ',';
            format_value(line, s ? (*s)(i) : 0.0);
        }
        for (int i = 0; i < dim; ++i) {
            line += ',';
            format_value(line, a ? (*a)(i) : 0.0);
        }
        out << line << "\n";
    }
    if (!out) throw Error("write_trajectory_csv: write failed for " + path);
}

TrajectoryLog read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_trajectory_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("read_trajectory_csv: " + path + ": missing header");
    // Infer dim from the header: step,rms then dim state and dim action columns.
    std::size_t columns = 1;
    for (char c : line)
        if (c == ',') ++columns;
    if (columns < 4 || (columns - 2) % 2 != 0)
        throw ParseError("read_trajectory_csv: " + path + ": malformed header");
    const int dim = static_cast<int>((columns - 2) / 2);

    std::vector<double> rms_col;
    std::vector<Vec> states, actions;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        row.reserve(columns);
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ParseError("read_trajectory_csv: " + path + ": line " +
                                 std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() != columns)
            throw ParseError("read_trajectory_csv: " + path + ": line " +
                             std::to_string(lineno) + ": expected " + std::to_string(columns) +
                             " columns, got " + std::to_string(row.size()));
        rms_col.push_back(row[1]);
        Vec s(dim), a(dim);
        for (int i = 0; i < dim; ++i) s(i) = row[2 + i];
        for (int i = 0; i < dim; ++i) a(i) = row[2 + dim + i];
        states.push_back(std::move(s));
        actions.push_back(std::move(a));
    }
    if (rms_col.empty())
        throw ParseError("read_trajectory_csv: " + path + ": no data rows");
    TrajectoryLog log;
    log.rms_series = std::move(rms_col);
    for (std::size_t k = 0; k + 1 < states.size(); ++k)
        log.transitions.push_back(Transition{states[k], actions[k], states[k + 1]});
    return log;
}

}  // namespace orbit
