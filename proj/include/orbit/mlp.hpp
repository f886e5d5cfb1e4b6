#pragma once

#include "orbit/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace orbit {

/// Unbiased multilayer perceptron with tanh applied on every layer output,
/// including the last, so outputs stay in (-1, 1) and zero input maps to
/// zero output exactly.
struct MlpParams {
    std::vector<int> layer_dims;
    std::vector<Mat> weights;  // weights[k] has shape (layer_dims[k+1] x layer_dims[k])

    long param_count() const {
        long n = 0;
        for (const Mat& w : weights) n += w.size();
        return n;
    }
    int in_dim() const { return layer_dims.front(); }
    int out_dim() const { return layer_dims.back(); }
    void validate() const;
};

MlpParams mlp_init(const std::vector<int>& layer_dims, std::uint64_t seed);

/// Forward activations of one evaluation: acts[0] is the input, acts[k+1] is
/// tanh(W_k acts[k]); kept so reverse mode can run later.
struct EvalTape {
    std::vector<Vec> acts;
    bool complete() const { return !acts.empty(); }
};

Vec forward(const MlpParams& p, const Vec& x);
Vec forward(const MlpParams& p, const Vec& x, EvalTape& tape);

/// Batched evaluation: columns of x are independent inputs. When acts is
/// non-null it receives the full per-layer activations for reverse mode.
Mat forward_batch(const MlpParams& p, const Mat& x, std::vector<Mat>* acts = nullptr);

/// Reverse mode for a batched forward: out_grad holds dLoss/d(output) per
/// column; returns dLoss/d(weights); if in_grad is non-null it receives
/// dLoss/d(input).
std::vector<Mat> backward_batch(const MlpParams& p, const std::vector<Mat>& acts,
                                const Mat& out_grad, Mat* in_grad = nullptr);

/// Accumulates weight gradients across many single-vector evaluations (e.g.
/// the steps of a rollout). Per-evaluation reverse sweeps only record the
/// (activation, delta) column pairs; the weight-gradient contractions happen
/// once, in finalize(), as one matrix product per layer.
class GradAccumulator {
  public:
    explicit GradAccumulator(const MlpParams& p);

    /// Reverse sweep through one taped evaluation. out_grad is dLoss/d(output);
    /// the return value is dLoss/d(input) for chaining through earlier steps.
    Vec backward(const MlpParams& p, const EvalTape& tape, const Vec& out_grad);

    /// Gradient of the accumulated scalar loss w.r.t. every weight.
    std::vector<Mat> finalize() const;

    void reset();
    int recorded() const { return static_cast<int>(counts_); }

  private:
    std::vector<int> dims_;
    std::vector<std::vector<Vec>> h_cols_;      // per layer: inputs seen
    std::vector<std::vector<Vec>> delta_cols_;  // per layer: pre-activation deltas
    std::size_t counts_ = 0;
};

/// dLoss/d(input) of one taped evaluation, without touching weight gradients
/// (for differentiating through a frozen network).
Vec input_gradient(const MlpParams& p, const EvalTape& tape, const Vec& out_grad);

/// Exact Jacobian of `forward` at x = 0: the product of the weight matrices,
/// since tanh'(0) = 1 at every layer.
Mat linearization_at_zero(const MlpParams& p);

struct AdamState {
    std::vector<Mat> first_moment;
    std::vector<Mat> second_moment;
    long step_counter = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState adam_init(const MlpParams& p, double lr = 1e-4);
void adam_step(MlpParams& p, const std::vector<Mat>& grads, AdamState& st);

/// Minibatch MSE regression of forward(p, x) toward targets / target_scale.
/// Columns of inputs/targets are samples; the sample order is reshuffled with
/// rng each epoch. Returns the per-epoch mean per-sample loss (scaled units)
/// and throws ValueError if the loss turns non-finite.
std::vector<double> train_regression(MlpParams& p, const std::vector<Vec>& inputs,
                                     const std::vector<Vec>& targets, int epochs, int batch_size,
                                     AdamState& st, Rng& rng, double target_scale = 1.0);

/// Checkpoint format: header line "layers k", then the k weight matrices in
/// the core matrix text format; optionally followed by a line
/// "adam t lr beta1 beta2 epsilon" and the 2k moment matrices.
void save_checkpoint(const std::string& path, const MlpParams& p,
                     const AdamState* st = nullptr);
MlpParams load_checkpoint(const std::string& path, AdamState* st = nullptr);

}  // namespace orbit
