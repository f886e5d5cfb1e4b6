#include "orbit/controllers.hpp"

#include <utility>

namespace orbit {

TransitionBuffer::TransitionBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("TransitionBuffer: capacity must be >= 1");
}

void TransitionBuffer::push(Transition t) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(t));
}

std::vector<Transition> TransitionBuffer::recent(std::size_t n) const {
    const std::size_t count = std::min(n, entries_.size());
    std::vector<Transition> out;
    out.reserve(count);
    for (std::size_t i = entries_.size() - count; i < entries_.size(); ++i)
        out.push_back(entries_[i]);
    return out;
}

SvdController::SvdController(const Mat& orm, std::optional<double> lambda, double gain)
    : svd_(svd(orm)), gain_(gain) {
    if (lambda.has_value()) {
        lambda_ = *lambda;
        if (!(lambda_ >= 0.0)) throw ConfigError("SvdController: lambda must be >= 0");
    } else {
        const double sigma1 = svd_.sigma.size() > 0 ? svd_.sigma(0) : 0.0;
        lambda_ = 1e-4 * sigma1 * sigma1;
    }
    if (!(gain_ > 0.0 && gain_ <= 1.0)) throw ConfigError("SvdController: gain must be in (0, 1]");
}

Vec SvdController::act(const Vec& observation) {
    if (observation.size() != svd_.u.rows())
        throw DimensionError("SvdController::act: observation length does not match the ORM");
    const Vec q = svd_.u.transpose() * observation;
    Vec z(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        const double denom = svd_.sigma(i) * svd_.sigma(i) + lambda_;
        z(i) = denom > 0.0 ? -svd_.sigma(i) / denom * q(i) : 0.0;
    }
    return gain_ * (svd_.v * z);
}

PolicyController::PolicyController(MlpParams net, double action_scale, double gain)
    : net_(std::move(net)), action_scale_(action_scale), gain_(gain) {
    net_.validate();
    if (!(action_scale_ > 0.0)) throw ConfigError("PolicyController: action_scale must be > 0");
    if (!(gain_ > 0.0 && gain_ <= 1.0)) throw ConfigError("PolicyController: gain must be in (0, 1]");
}

Vec PolicyController::act(const Vec& observation) {
    return gain_ * action_scale_ * forward(net_, observation);
}

}  // namespace orbit
