#pragma once

#include "urgency/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace urgency::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { relu, linear };

struct DenseLayer {
    MatrixXd w; // out x in
    VectorXd b; // out
    Activation activation = Activation::linear;

    Index in() const { return w.cols(); }
    Index out() const { return w.rows(); }
    Index param_count() const { return w.size() + b.size(); }
};

// Glorot-uniform weights, zero bias.
DenseLayer glorot_dense(Index in, Index out, Activation activation, Rng& rng);

// y = act(x w^T + b), x is batch x in.
MatrixXd dense_forward(const DenseLayer& layer, const MatrixXd& x);

struct DenseGradients {
    MatrixXd grad_x;
    MatrixXd grad_w;
    VectorXd grad_b;
};

// ReLU has derivative 0 at exactly 0.
DenseGradients dense_backward(const DenseLayer& layer, const MatrixXd& x, const MatrixXd& grad_out);
// Same, reusing the forward output instead of recomputing it.
DenseGradients dense_backward(const DenseLayer& layer, const MatrixXd& x, const MatrixXd& y, const MatrixXd& grad_out);

// A stack of dense layers applied in order.
struct Mlp {
    std::vector<DenseLayer> layers;

    MatrixXd forward(const MatrixXd& x) const;
    // activations[0] = x, activations[i + 1] = output of layer i.
    std::vector<MatrixXd> forward_cached(const MatrixXd& x) const;
    // Returns the gradient w.r.t. the input; per-layer gradients go to `grads`.
    MatrixXd backward(const std::vector<MatrixXd>& activations, const MatrixXd& grad_out,
                      std::vector<DenseGradients>& grads) const;
    Index param_count() const;
};

Index count_params(std::span<const DenseLayer> layers);

// Row-wise, max-subtracted.
MatrixXd softmax(const MatrixXd& z);

struct LossAndGrad {
    double loss = 0.0;
    MatrixXd grad;
};

// Mean over rows of -w[t] ln p[t] (p clamped at 1e-12). grad is w.r.t. the logits.
LossAndGrad weighted_cross_entropy(const MatrixXd& probs, std::span<const int> targets, const VectorXd& weights);

// Mean of squared elementwise error; grad is w.r.t. `prediction`.
LossAndGrad mse(const MatrixXd& prediction, const MatrixXd& target);

// sum_ij p ln(p / q) / n with 0 ln 0 = 0 and q clamped at 1e-12; grad is w.r.t. q.
LossAndGrad kld(const MatrixXd& p, const MatrixXd& q);

// Non-owning window onto one contiguous parameter tensor.
struct ParamView {
    double* data;
    Index size;

    Eigen::Map<VectorXd> vec() const { return {data, size}; }
};

template <typename Derived>
ParamView view(Eigen::PlainObjectBase<Derived>& m) {
    return {m.data(), m.size()};
}

Index total_size(std::span<const ParamView> params);
VectorXd flatten(std::span<const ParamView> params);
void unflatten(std::span<const ParamView> params, const VectorXd& flat);

enum class OptimizerKind { adam, sgd_momentum };

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct SgdMomentumOptions {
    double lr = 0.01;
    double momentum = 0.9;
};

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    AdamOptions adam;
    SgdMomentumOptions sgd;
    std::int64_t step = 0;
    std::vector<VectorXd> first;  // Adam m, or SGD velocity
    std::vector<VectorXd> second; // Adam v

    static OptimizerState make_adam(AdamOptions options = {});
    static OptimizerState make_sgd_momentum(SgdMomentumOptions options = {});
};

// params[i] and grads[i] must have equal sizes; buffers are created on first use.
void adam_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads);
void sgd_momentum_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads);
void optimizer_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads);

// Loss at `params`; writes the analytic gradient when `grad` is non-null.
using FlatObjective = std::function<double(const VectorXd& params, VectorXd* grad)>;

struct GradCheckReport {
    double max_relative_error = 0.0;
    Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    Index checked = 0;
    bool passed = false;
    bool aborted = false;
    std::string diagnostics;
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    // Check only these coordinates; empty means all.
    std::vector<Index> coordinates;
};

// Central differences; error is |a - n| / max(1, |a| + |n|).
GradCheckReport grad_check(const FlatObjective& objective, const VectorXd& params, const GradCheckOptions& options);

// Binary checkpoint: "UCKP", u32 version, u64 header length, JSON header,
// u64 value count, little-endian f64 parameters in the caller's order.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header, std::span<const ParamView> params);

struct Checkpoint {
    nlohmann::json header;
    VectorXd values;
};
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json describe(std::span<const DenseLayer> layers);

} // namespace urgency::nn
