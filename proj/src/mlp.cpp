#include "orbit/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace orbit {

void MlpParams::validate() const {
    if (layer_dims.size() < 2) throw DimensionError("MlpParams: need at least 2 layer dims");
    for (int d : layer_dims)
        if (d < 1) throw DimensionError("MlpParams: layer dims must be >= 1");
    if (weights.size() != layer_dims.size() - 1)
        throw DimensionError("MlpParams: weight count does not match layer dims");
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k].rows() != layer_dims[k + 1] || weights[k].cols() != layer_dims[k])
            throw DimensionError("MlpParams: weight " + std::to_string(k) + " has wrong shape");
        require_finite(weights[k], "MlpParams");
    }
}

MlpParams mlp_init(const std::vector<int>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw DimensionError("mlp_init: need at least 2 layer dims");
    for (int d : layer_dims)
        if (d < 1) throw DimensionError("mlp_init: layer dims must be >= 1");
    MlpParams p;
    p.layer_dims = layer_dims;
    Rng rng = make_rng(seed, 404);
    for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
        const int fan_in = layer_dims[k];
        const int fan_out = layer_dims[k + 1];
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Mat w(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) w(i, j) = dist(rng);
        p.weights.push_back(std::move(w));
    }
    return p;
}

Vec forward(const MlpParams& p, const Vec& x) {
    if (x.size() != p.in_dim())
        throw DimensionError("forward: input length does not match layer_dims[0]");
    Vec h = x;
    for (const Mat& w : p.weights) h = (w * h).array().tanh().matrix();
    return h;
}

Vec forward(const MlpParams& p, const Vec& x, EvalTape& tape) {
    if (x.size() != p.in_dim())
        throw DimensionError("forward: input length does not match layer_dims[0]");
    tape.acts.clear();
    tape.acts.reserve(p.weights.size() + 1);
    tape.acts.push_back(x);
    for (const Mat& w : p.weights)
        tape.acts.push_back((w * tape.acts.back()).array().tanh().matrix());
    return tape.acts.back();
}

Mat forward_batch(const MlpParams& p, const Mat& x, std::vector<Mat>* acts) {
    if (x.rows() != p.in_dim())
        throw DimensionError("forward_batch: input rows do not match layer_dims[0]");
    if (acts) {
        acts->clear();
        acts->reserve(p.weights.size() + 1);
        acts->push_back(x);
        for (const Mat& w : p.weights)
            acts->push_back((w * acts->back()).array().tanh().matrix());
        return acts->back();
    }
    Mat h = x;
    for (const Mat& w : p.weights) h = (w * h).array().tanh().matrix();
    return h;
}

std::vector<Mat> backward_batch(const MlpParams& p, const std::vector<Mat>& acts,
                                const Mat& out_grad, Mat* in_grad) {
    const std::size_t layers = p.weights.size();
    if (acts.size() != layers + 1)
        throw ValueError("backward_batch: incomplete tape");
    if (out_grad.rows() != acts.back().rows() || out_grad.cols() != acts.back().cols())
        throw DimensionError("backward_batch: out_grad shape mismatch");

    std::vector<Mat> grads(layers);
    // delta_k = dLoss/d(pre-activation of layer k); tanh'(z) = 1 - tanh(z)^2
    // and acts stores tanh(z) itself.
    Mat delta = out_grad.cwiseProduct((1.0 - acts[layers].array().square()).matrix());
    for (std::size_t k = layers; k-- > 0;) {
        grads[k].noalias() = delta * acts[k].transpose();
        if (k > 0) {
            Mat up = p.weights[k].transpose() * delta;
            delta = up.cwiseProduct((1.0 - acts[k].array().square()).matrix());
        } else if (in_grad) {
            in_grad->noalias() = p.weights[0].transpose() * delta;
        }
    }
    return grads;
}

GradAccumulator::GradAccumulator(const MlpParams& p)
    : dims_(p.layer_dims), h_cols_(p.weights.size()), delta_cols_(p.weights.size()) {}

Vec GradAccumulator::backward(const MlpParams& p, const EvalTape& tape, const Vec& out_grad) {
    const std::size_t layers = p.weights.size();
    if (tape.acts.size() != layers + 1)
        throw ValueError("GradAccumulator::backward: incomplete tape");
    if (out_grad.size() != tape.acts.back().size())
        throw DimensionError("GradAccumulator::backward: out_grad length mismatch");

    Vec delta = out_grad.cwiseProduct((1.0 - tape.acts[layers].array().square()).matrix());
    for (std::size_t k = layers; k-- > 0;) {
        h_cols_[k].push_back(tape.acts[k]);
        delta_cols_[k].push_back(delta);
        if (k > 0) {
            Vec up = p.weights[k].transpose() * delta;
            delta = up.cwiseProduct((1.0 - tape.acts[k].array().square()).matrix());
        } else {
            delta = p.weights[0].transpose() * delta;
        }
    }
    ++counts_;
    return delta;
}

std::vector<Mat> GradAccumulator::finalize() const {
    std::vector<Mat> grads(dims_.size() - 1);
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
        const auto& hs = h_cols_[k];
        const auto& ds = delta_cols_[k];
        if (hs.empty()) {
            grads[k] = Mat::Zero(dims_[k + 1], dims_[k]);
            continue;
        }
        Mat h(dims_[k], hs.size());
        Mat d(dims_[k + 1], ds.size());
        for (std::size_t c = 0; c < hs.size(); ++c) {
            h.col(c) = hs[c];
            d.col(c) = ds[c];
        }
        grads[k].noalias() = d * h.transpose();
    }
    return grads;
}

void GradAccumulator::reset() {
    for (auto& v : h_cols_) v.clear();
    for (auto& v : delta_cols_) v.clear();
    counts_ = 0;
}

Vec input_gradient(const MlpParams& p, const EvalTape& tape, const Vec& out_grad) {
    const std::size_t layers = p.weights.size();
    if (tape.acts.size() != layers + 1)
        throw ValueError("input_gradient: incomplete tape");
    if (out_grad.size() != tape.acts.back().size())
        throw DimensionError("input_gradient: out_grad length mismatch");

    Vec delta = out_grad.cwiseProduct((1.0 - tape.acts[layers].array().square()).matrix());
    for (std::size_t k = layers; k-- > 0;) {
        if (k > 0) {
            Vec up = p.weights[k].transpose() * delta;
            delta = up.cwiseProduct((1.0 - tape.acts[k].array().square()).matrix());
        } else {
            delta = p.weights[0].transpose() * delta;
        }
    }
    return delta;
}

Mat linearization_at_zero(const MlpParams& p) {
    p.validate();
    Mat j = p.weights.front();
    for (std::size_t k = 1; k < p.weights.size(); ++k) j = p.weights[k] * j;
    return j;
}

std::vector<double> train_regression(MlpParams& p, const std::vector<Vec>& inputs,
                                     const std::vector<Vec>& targets, int epochs, int batch_size,
                                     AdamState& st, Rng& rng, double target_scale) {
    if (inputs.empty()) throw ValueError("train_regression: no samples");
    if (inputs.size() != targets.size())
        throw DimensionError("train_regression: input and target counts differ");
    if (epochs < 0) throw ConfigError("train_regression: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train_regression: batch_size must be >= 1");
    if (!(target_scale > 0.0)) throw ConfigError("train_regression: target_scale must be > 0");
    p.validate();
    if (p.in_dim() != inputs.front().size() || p.out_dim() != targets.front().size())
        throw DimensionError("train_regression: sample dimensions do not match the network");

    const std::size_t n = inputs.size();
    const int dim_in = static_cast<int>(p.in_dim());
    const int dim_out = static_cast<int>(p.out_dim());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            const std::size_t count = std::min(static_cast<std::size_t>(batch_size), n - start);
            Mat x(dim_in, count), y(dim_out, count);
            for (std::size_t j = 0; j < count; ++j) {
                const std::size_t idx = order[start + j];
                x.col(static_cast<Eigen::Index>(j)) = inputs[idx];
                y.col(static_cast<Eigen::Index>(j)) = targets[idx] / target_scale;
            }
            std::vector<Mat> acts;
            const Mat pred = forward_batch(p, x, &acts);
            const Mat residual = pred - y;
            loss_sum += residual.squaredNorm();
            const Mat out_grad = (2.0 / static_cast<double>(count)) * residual;
            const std::vector<Mat> grads = backward_batch(p, acts, out_grad);
            adam_step(p, grads, st);
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw ValueError("train_regression: loss diverged at epoch " + std::to_string(epoch));
        history.push_back(epoch_loss);
    }
    return history;
}

AdamState adam_init(const MlpParams& p, double lr) {
    AdamState st;
    st.lr = lr;
    for (const Mat& w : p.weights) {
        st.first_moment.push_back(Mat::Zero(w.rows(), w.cols()));
        st.second_moment.push_back(Mat::Zero(w.rows(), w.cols()));
    }
    return st;
}

void adam_step(MlpParams& p, const std::vector<Mat>& grads, AdamState& st) {
    if (grads.size() != p.weights.size() || st.first_moment.size() != p.weights.size())
        throw DimensionError("adam_step: gradient/state count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k)
        if (grads[k].rows() != p.weights[k].rows() || grads[k].cols() != p.weights[k].cols())
            throw DimensionError("adam_step: gradient " + std::to_string(k) + " shape mismatch");

    st.step_counter += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_counter));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_counter));
    for (std::size_t k = 0; k < grads.size(); ++k) {
        Mat& m = st.first_moment[k];
        Mat& v = st.second_moment[k];
        m = st.beta1 * m + (1.0 - st.beta1) * grads[k];
        v = st.beta2 * v + (1.0 - st.beta2) * grads[k].cwiseProduct(grads[k]);
        p.weights[k].array() -=
            st.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + st.epsilon);
    }
}

void save_checkpoint(const std::string& path, const MlpParams& p, const AdamState* st) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("save_checkpoint: cannot open " + path);
    f << "layers " << p.weights.size() << "\n";
    for (const Mat& w : p.weights) write_matrix(f, w);
    if (st) {
        std::string header = "adam " + std::to_string(st->step_counter);
        for (double v : {st->lr, st->beta1, st->beta2, st->epsilon}) {
            header += ' ';
            format_value(header, v);
        }
        f << header << "\n";
        for (const Mat& m : st->first_moment) write_matrix(f, m);
        for (const Mat& m : st->second_moment) write_matrix(f, m);
    }
    if (!f) throw Error("save_checkpoint: write failed for " + path);
}

MlpParams load_checkpoint(const std::string& path, AdamState* st) {
    std::ifstream f(path);
    if (!f) throw ParseError("load_checkpoint: cannot open " + path);
    std::string tag;
    std::size_t layers = 0;
    if (!(f >> tag >> layers) || tag != "layers")
        throw ParseError("load_checkpoint: bad header in " + path);
    if (layers < 1) throw ParseError("load_checkpoint: no layers in " + path);
    MlpParams p;
    for (std::size_t k = 0; k < layers; ++k)
        p.weights.push_back(read_matrix(f, path));
    p.layer_dims.push_back(static_cast<int>(p.weights.front().cols()));
    for (const Mat& w : p.weights) p.layer_dims.push_back(static_cast<int>(w.rows()));
    p.validate();

    if (st) {
        *st = adam_init(p, st->lr);
        if (f >> tag) {
            if (tag != "adam") throw ParseError("load_checkpoint: unexpected trailer in " + path);
            if (!(f >> st->step_counter >> st->lr >> st->beta1 >> st->beta2 >> st->epsilon))
                throw ParseError("load_checkpoint: bad adam header in " + path);
            st->first_moment.clear();
            st->second_moment.clear();
            for (std::size_t k = 0; k < layers; ++k)
                st->first_moment.push_back(read_matrix(f, path));
            for (std::size_t k = 0; k < layers; ++k)
                st->second_moment.push_back(read_matrix(f, path));
        }
    }
    return p;
}

}  // namespace orbit
