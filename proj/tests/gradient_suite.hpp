#pragma once

// Finite-difference checks for every hand-derived backward pass. Shared by
// the unit tests and the acceptance binary.

#include "urgency/classifier.hpp"
#include "urgency/dec.hpp"
#include "urgency/nn.hpp"

#include <string>
#include <vector>

namespace gradsuite {

using namespace urgency;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Named {
    std::string name;
    nn::GradCheckReport report;
};

inline MatrixXd random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    MatrixXd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
}

// Each row a probability vector with full support.
inline MatrixXd random_simplex(Index rows, Index cols, Rng& rng) {
    MatrixXd m = (random_matrix(rows, cols, rng)).array().exp();
    for (Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
    return m;
}

// Scalar probe loss sum(y .* r) so every output coordinate gets a distinct upstream gradient.
inline nn::GradCheckReport check_dense(nn::Activation act, std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(seed);
    nn::DenseLayer layer{random_matrix(4, 5, rng), random_matrix(4, 1, rng).col(0), act};
    const MatrixXd x0 = random_matrix(3, 5, rng);
    const MatrixXd r = random_matrix(3, 4, rng);
    // Parameters: w, b, then x.
    VectorXd theta(layer.w.size() + layer.b.size() + x0.size());
    theta << Eigen::Map<const VectorXd>(layer.w.data(), layer.w.size()), layer.b, Eigen::Map<const VectorXd>(x0.data(), x0.size());
    auto f = [&](const VectorXd& t, VectorXd* g) {
        nn::DenseLayer l = layer;
        l.w = Eigen::Map<const MatrixXd>(t.data(), 4, 5);
        l.b = t.segment(20, 4);
        const MatrixXd x = Eigen::Map<const MatrixXd>(t.data() + 24, 3, 5);
        const MatrixXd y = nn::dense_forward(l, x);
        if (g) {
            const auto grads = nn::dense_backward(l, x, r);
            g->resize(t.size());
            *g << Eigen::Map<const VectorXd>(grads.grad_w.data(), 20), grads.grad_b,
                Eigen::Map<const VectorXd>(grads.grad_x.data(), grads.grad_x.size());
        }
        return (y.array() * r.array()).sum();
    };
    return nn::grad_check(f, theta, opt);
}

inline nn::GradCheckReport check_softmax_ce(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(seed);
    const MatrixXd z0 = random_matrix(5, 3, rng, 2.0);
    const std::vector<int> targets = {0, 2, 1, 2, 0};
    VectorXd w(3);
    w << 0.7, 1.9, 1.3;
    auto f = [&](const VectorXd& t, VectorXd* g) {
        const MatrixXd z = Eigen::Map<const MatrixXd>(t.data(), 5, 3);
        const auto lg = nn::weighted_cross_entropy(nn::softmax(z), targets, w);
        if (g) *g = Eigen::Map<const VectorXd>(lg.grad.data(), lg.grad.size());
        return lg.loss;
    };
    return nn::grad_check(f, Eigen::Map<const VectorXd>(z0.data(), z0.size()), opt);
}

inline nn::GradCheckReport check_mse(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(seed);
    const MatrixXd pred0 = random_matrix(4, 6, rng), target = random_matrix(4, 6, rng);
    auto f = [&](const VectorXd& t, VectorXd* g) {
        const auto lg = nn::mse(Eigen::Map<const MatrixXd>(t.data(), 4, 6), target);
        if (g) *g = Eigen::Map<const VectorXd>(lg.grad.data(), lg.grad.size());
        return lg.loss;
    };
    return nn::grad_check(f, Eigen::Map<const VectorXd>(pred0.data(), pred0.size()), opt);
}

inline nn::GradCheckReport check_kld(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(seed);
    const MatrixXd p = random_simplex(4, 3, rng), q0 = random_simplex(4, 3, rng);
    auto f = [&](const VectorXd& t, VectorXd* g) {
        const auto lg = nn::kld(p, Eigen::Map<const MatrixXd>(t.data(), 4, 3));
        if (g) *g = Eigen::Map<const VectorXd>(lg.grad.data(), lg.grad.size());
        return lg.loss;
    };
    return nn::grad_check(f, Eigen::Map<const VectorXd>(q0.data(), q0.size()), opt);
}

struct DecFixture {
    Autoencoder ae;
    MatrixXd centers;
    MatrixXd x;
    MatrixXd p;
};

// Centers sit near encoded points so the soft assignments are not saturated.
inline DecFixture dec_fixture(const AutoencoderShape& shape, Index n, std::uint64_t seed) {
    Rng rng(seed);
    DecFixture fx{Autoencoder::build(shape, seed), {}, random_matrix(n, shape.input, rng), {}};
    const MatrixXd z = fx.ae.encode(fx.x);
    fx.centers = z.topRows(3) + 0.1 * random_matrix(3, z.cols(), rng);
    fx.p = target_distribution(soft_assign(z, fx.centers));
    return fx;
}

inline nn::FlatObjective dec_objective(DecFixture& fx, double gamma) {
    return [&fx, gamma](const VectorXd& t, VectorXd* g) {
        Autoencoder ae = fx.ae;
        MatrixXd centers = fx.centers;
        nn::unflatten(dec_parameters(ae, centers), t);
        DecGradients grads;
        const auto loss = dec_loss(ae, centers, fx.x, fx.p, gamma, g ? &grads : nullptr);
        if (g) *g = nn::flatten(dec_gradient_views(grads));
        return loss.total;
    };
}

// Every coordinate of a narrow DEC stack.
inline nn::GradCheckReport check_dec_small(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    auto fx = dec_fixture({6, {8, 7}, 4}, 10, seed);
    const VectorXd theta = nn::flatten(dec_parameters(fx.ae, fx.centers));
    return nn::grad_check(dec_objective(fx, 0.1), theta, opt);
}

// The 652,150-parameter stack on 10 points: a seeded sample of coordinates
// from every weight and bias tensor, plus every center entry.
inline nn::GradCheckReport check_dec_full(std::uint64_t seed, int per_tensor, nn::GradCheckOptions opt) {
    auto fx = dec_fixture({}, 10, seed);
    auto params = dec_parameters(fx.ae, fx.centers);
    Rng rng(seed ^ 0x5eed);
    opt.coordinates.clear();
    Index offset = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const bool centers = t + 1 == params.size();
        if (centers) {
            for (Index i = 0; i < params[t].size; ++i) opt.coordinates.push_back(offset + i);
        } else {
            for (int s = 0; s < per_tensor; ++s) opt.coordinates.push_back(offset + static_cast<Index>(rng.below(static_cast<std::uint64_t>(params[t].size))));
        }
        offset += params[t].size;
    }
    const VectorXd theta = nn::flatten(params);
    return nn::grad_check(dec_objective(fx, 0.1), theta, opt);
}

// BiLSTM with H=4 on a length-7 sequence, with a fixed dropout mask.
inline nn::GradCheckReport check_bilstm(std::uint64_t seed, const nn::GradCheckOptions& opt, Index hidden = 4, Index len = 7) {
    Rng rng(seed);
    auto net = clf::BiLstmNetwork::init(5, hidden, 0.5, seed);
    // Larger biases and weights than Glorot so gates are away from 0.5.
    for (auto* c : {&net.forward, &net.backward}) c->bias = random_matrix(4 * hidden, 1, rng, 0.5).col(0);
    net.dense_b = random_matrix(3, 1, rng, 0.3).col(0);
    const MatrixXd seq = random_matrix(len, 5, rng);
    VectorXd mask(2 * hidden);
    for (Index k = 0; k < mask.size(); ++k) mask(k) = rng.uniform() < 0.5 ? 0.0 : 2.0;
    mask(0) = 2.0;
    mask(hidden) = 2.0;
    const int target = 1;
    VectorXd w(3);
    w << 1.0, 1.7, 0.8;
    auto f = [&, net](const VectorXd& t, VectorXd* g) mutable {
        nn::unflatten(net.parameters(), t);
        const auto cache = clf::bilstm_forward(net, seq, true, nullptr, &mask);
        const int tg[] = {target};
        const auto lg = nn::weighted_cross_entropy(cache.probs.transpose(), tg, w);
        if (g) {
            auto grads = clf::BiLstmGradients::zeros_like(net);
            clf::bilstm_backward(net, cache, lg.grad.row(0).transpose(), grads);
            *g = nn::flatten(grads.views());
        }
        return lg.loss;
    };
    return nn::grad_check(f, nn::flatten(net.parameters()), opt);
}

inline std::vector<Named> run_all(const nn::GradCheckOptions& opt, int dec_full_per_tensor) {
    std::vector<Named> out;
    out.push_back({"dense relu 4x5", check_dense(nn::Activation::relu, 11, opt)});
    out.push_back({"dense linear 4x5", check_dense(nn::Activation::linear, 12, opt)});
    out.push_back({"softmax + weighted CE", check_softmax_ce(13, opt)});
    out.push_back({"mse", check_mse(14, opt)});
    out.push_back({"kld", check_kld(15, opt)});
    out.push_back({"dec composite (6-8-7-4, every coordinate)", check_dec_small(16, opt)});
    out.push_back({"dec composite (652,150 params, sampled)", check_dec_full(17, dec_full_per_tensor, opt)});
    out.push_back({"bilstm H=4 len=7", check_bilstm(18, opt)});
    return out;
}

} // namespace gradsuite
