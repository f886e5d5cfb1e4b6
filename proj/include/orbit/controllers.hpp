#pragma once

#include <cstddef>
#include <deque>
#include <optional>

#include "orbit/common.hpp"
#include "orbit/linalg.hpp"
#include "orbit/mlp.hpp"

namespace orbit {

// Common contract for closed-loop correctors.  `act` maps an observed state
// to a corrector action; adaptive controllers additionally consume transition
// feedback through `observe_transition` (a no-op for static controllers).
class Controller {
  public:
    virtual ~Controller() = default;

    virtual Vec act(const Vec& observation) = 0;

    virtual void observe_transition(const Vec& /*s*/, const Vec& /*a*/, const Vec& /*s_next*/) {}
};

// Bounded FIFO of transitions for adaptive controllers: once `capacity`
// entries are stored, pushing evicts the oldest.
class TransitionBuffer {
  public:
    explicit TransitionBuffer(std::size_t capacity = 10000);

    void push(Transition t);
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const Transition& operator[](std::size_t i) const { return entries_[i]; }

    // The most recent min(n, size) transitions, oldest first.
    std::vector<Transition> recent(std::size_t n) const;

  private:
    std::size_t capacity_;
    std::deque<Transition> entries_;
};

// Spectral proportional controller: a = gain * V z with z_i = -sigma_i /
// (sigma_i^2 + lambda) * (U^T s)_i, equivalent to gain * ridge_solve(R, s,
// lambda).  When lambda is not given it defaults to 1e-4 * sigma_1^2.
class SvdController : public Controller {
  public:
    explicit SvdController(const Mat& orm, std::optional<double> lambda = std::nullopt,
                           double gain = 1.0);

    Vec act(const Vec& observation) override;

    const SvdResult& decomposition() const { return svd_; }
    double lambda() const { return lambda_; }
    double gain() const { return gain_; }

  private:
    SvdResult svd_;
    double lambda_;
    double gain_;
};

// Neural policy controller: a = gain * action_scale * forward(net, s).
class PolicyController : public Controller {
  public:
    explicit PolicyController(MlpParams net, double action_scale = 1.0, double gain = 1.0);

    Vec act(const Vec& observation) override;

    const MlpParams& net() const { return net_; }
    double action_scale() const { return action_scale_; }
    double gain() const { return gain_; }

  private:
    MlpParams net_;
    double action_scale_;
    double gain_;
};

}  // namespace orbit
