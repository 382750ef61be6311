#include "urgency/dec.hpp"

#include "urgency/rng.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace urgency {

namespace {

enum Stream : std::uint64_t { kPretrainOrder = 11, kRefineOrder = 12, kCenterInit = 13 };

std::vector<Index> iota_indices(Index n) {
    std::vector<Index> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), Index{0});
    return v;
}

MatrixXd gather_rows(const MatrixXd& x, std::span<const Index> rows) {
    MatrixXd out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
    return out;
}

void append_views(nn::Mlp& mlp, std::vector<nn::ParamView>& out) {
    for (auto& layer : mlp.layers) {
        out.push_back(nn::view(layer.w));
        out.push_back(nn::view(layer.b));
    }
}

void append_views(std::vector<nn::DenseGradients>& grads, std::vector<nn::ParamView>& out) {
    for (auto& g : grads) {
        out.push_back(nn::view(g.grad_w));
        out.push_back(nn::view(g.grad_b));
    }
}

// Cycles through a reshuffled permutation of 0..n-1, one batch at a time.
class BatchSampler {
public:
    BatchSampler(Index n, Index batch, std::uint64_t seed) : order_(iota_indices(n)), batch_(std::min(batch, n)), rng_(seed) {
        rng_.shuffle(std::span<Index>(order_));
    }

    std::vector<Index> next() {
        if (pos_ + batch_ > static_cast<Index>(order_.size())) {
            rng_.shuffle(std::span<Index>(order_));
            pos_ = 0;
        }
        std::vector<Index> out(order_.begin() + pos_, order_.begin() + pos_ + batch_);
        pos_ += batch_;
        return out;
    }

private:
    std::vector<Index> order_;
    Index batch_;
    Index pos_ = 0;
    Rng rng_;
};

} // namespace

Autoencoder Autoencoder::build(const AutoencoderShape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Autoencoder ae;
    std::vector<Index> widths{shape.input};
    widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
    widths.push_back(shape.latent);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const auto act = i + 2 == widths.size() ? nn::Activation::linear : nn::Activation::relu;
        ae.encoder.layers.push_back(nn::glorot_dense(widths[i], widths[i + 1], act, rng));
    }
    for (std::size_t i = widths.size() - 1; i > 0; --i) {
        const auto act = i == 1 ? nn::Activation::linear : nn::Activation::relu;
        ae.decoder.layers.push_back(nn::glorot_dense(widths[i], widths[i - 1], act, rng));
    }
    return ae;
}

Autoencoder make_dec_autoencoder(std::uint64_t seed) {
    auto ae = Autoencoder::build(AutoencoderShape{}, seed);
    if (ae.param_count() != kDecParameterCount)
        throw Error(ErrorKind::integrity, "DEC autoencoder has " + std::to_string(ae.param_count()) + " parameters");
    return ae;
}

PretrainResult pretrain_autoencoder(const MatrixXd& x, Autoencoder ae, const PretrainConfig& config, std::uint64_t seed) {
    if (x.cols() != ae.input_dim())
        throw Error(ErrorKind::shape, "pretraining input has dimension " + std::to_string(x.cols()) + ", network expects " +
                                          std::to_string(ae.input_dim()));
    PretrainResult result;
    result.initial_mse = nn::mse(ae.decode(ae.encode(x)), x).loss;
    auto opt = nn::OptimizerState::make_adam(config.adam);
    std::vector<nn::ParamView> params;
    append_views(ae.encoder, params);
    append_views(ae.decoder, params);

    Rng rng(derive_seed(seed, kPretrainOrder));
    auto order = iota_indices(x.rows());
    const Index batch = std::max<Index>(1, std::min<Index>(config.batch, x.rows()));
    std::vector<nn::DenseGradients> enc_grads, dec_grads;
    long long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<Index>(order));
        double weighted = 0.0;
        for (Index start = 0; start < x.rows(); start += batch) {
            const Index len = std::min(batch, x.rows() - start);
            const MatrixXd xb = gather_rows(x, std::span<const Index>(order).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
            const auto enc_acts = ae.encoder.forward_cached(xb);
            const auto dec_acts = ae.decoder.forward_cached(enc_acts.back());
            const auto loss = nn::mse(dec_acts.back(), xb);
            if (!std::isfinite(loss.loss))
                throw Error(ErrorKind::divergence, "non-finite reconstruction loss at pretraining step " + std::to_string(step));
            const MatrixXd grad_z = ae.decoder.backward(dec_acts, loss.grad, dec_grads);
            ae.encoder.backward(enc_acts, grad_z, enc_grads);
            std::vector<nn::ParamView> grads;
            append_views(enc_grads, grads);
            append_views(dec_grads, grads);
            nn::adam_step(opt, params, grads);
            weighted += loss.loss * static_cast<double>(len);
            ++step;
        }
        result.epoch_mse.push_back(weighted / static_cast<double>(x.rows()));
    }
    result.final_mse = nn::mse(ae.decode(ae.encode(x)), x).loss;
    result.autoencoder = std::move(ae);
    return result;
}

PretrainResult pretrain_autoencoder(const MatrixXd& x, const PretrainConfig& config, std::uint64_t seed) {
    if (x.cols() != 50) throw Error(ErrorKind::shape, "DEC expects 50-dimensional input, got " + std::to_string(x.cols()));
    return pretrain_autoencoder(x, make_dec_autoencoder(seed), config, seed);
}

MatrixXd soft_assign(const MatrixXd& z, const MatrixXd& centers) {
    if (z.cols() != centers.cols()) throw Error(ErrorKind::shape, "latent and center dimensions differ");
    MatrixXd q(z.rows(), centers.rows());
    for (Index i = 0; i < z.rows(); ++i) {
        for (Index j = 0; j < centers.rows(); ++j) q(i, j) = 1.0 / (1.0 + (z.row(i) - centers.row(j)).squaredNorm());
        q.row(i) /= q.row(i).sum();
    }
    return q;
}

MatrixXd target_distribution(const MatrixXd& q) {
    const Eigen::RowVectorXd f = q.colwise().sum();
    MatrixXd p = q.array().square().rowwise() / f.array();
    for (Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
    return p;
}

std::vector<int> argmax_rows(const MatrixXd& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i) {
        Index arg = 0;
        m.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

DecLoss dec_loss(const Autoencoder& ae, const MatrixXd& centers, const MatrixXd& x, const MatrixXd& p, double gamma,
                 DecGradients* grads) {
    const auto enc_acts = ae.encoder.forward_cached(x);
    const MatrixXd& z = enc_acts.back();
    const auto dec_acts = ae.decoder.forward_cached(z);
    const auto rec = nn::mse(dec_acts.back(), x);
    const MatrixXd q = soft_assign(z, centers);
    const auto kl = nn::kld(p, q);
    DecLoss loss{rec.loss, kl.loss, rec.loss + gamma * kl.loss};
    if (!grads) return loss;

    // Back through the row normalisation q = k / s and the kernel k = 1 / (1 + d^2).
    const Index n = z.rows(), k = centers.rows();
    MatrixXd grad_d2(n, k);
    for (Index i = 0; i < n; ++i) {
        double s = 0.0;
        Eigen::RowVectorXd kern(k);
        for (Index j = 0; j < k; ++j) {
            kern(j) = 1.0 / (1.0 + (z.row(i) - centers.row(j)).squaredNorm());
            s += kern(j);
        }
        const double dot = gamma * kl.grad.row(i).dot(q.row(i));
        for (Index j = 0; j < k; ++j) {
            const double d_kern = (gamma * kl.grad(i, j) - dot) / s;
            grad_d2(i, j) = -kern(j) * kern(j) * d_kern;
        }
    }
    MatrixXd grad_z = ae.decoder.backward(dec_acts, rec.grad, grads->decoder);
    grads->centers = MatrixXd::Zero(k, centers.cols());
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < k; ++j) {
            const Eigen::RowVectorXd diff = 2.0 * grad_d2(i, j) * (z.row(i) - centers.row(j));
            grad_z.row(i) += diff;
            grads->centers.row(j) -= diff;
        }
    ae.encoder.backward(enc_acts, grad_z, grads->encoder);
    return loss;
}

std::vector<nn::ParamView> dec_parameters(Autoencoder& ae, MatrixXd& centers) {
    std::vector<nn::ParamView> out;
    append_views(ae.encoder, out);
    append_views(ae.decoder, out);
    out.push_back(nn::view(centers));
    return out;
}

std::vector<nn::ParamView> dec_gradient_views(DecGradients& g) {
    std::vector<nn::ParamView> out;
    append_views(g.encoder, out);
    append_views(g.decoder, out);
    out.push_back(nn::view(g.centers));
    return out;
}

DecResult dec_train(const MatrixXd& x, Autoencoder ae, std::uint64_t seed, const DecConfig& config) {
    if (x.cols() != ae.input_dim()) throw Error(ErrorKind::shape, "input dimension does not match the autoencoder");
    if (config.update_interval < 1) throw Error(ErrorKind::domain, "update_interval must be positive");
    const Index n = x.rows();
    DecResult result;
    result.initial_latent = ae.encode(x);
    const auto km = kmeans_fit(result.initial_latent, config.n_clusters, derive_seed(seed, kCenterInit), config.kmeans);
    result.initial_labels = km.assignments;
    MatrixXd centers = km.centroids;

    DecTrainState& st = result.state;
    st.q = soft_assign(result.initial_latent, centers);
    st.p = target_distribution(st.q);
    st.previous_labels = km.assignments;

    auto opt = nn::OptimizerState::make_sgd_momentum(config.sgd);
    auto params = dec_parameters(ae, centers);
    BatchSampler sampler(n, config.batch, derive_seed(seed, kRefineOrder));
    DecGradients grads;

    for (int it = 0; it < config.max_iterations; ++it) {
        if (it > 0 && it % config.update_interval == 0) {
            st.q = soft_assign(ae.encode(x), centers);
            st.p = target_distribution(st.q);
            const auto labels = argmax_rows(st.q);
            Index changed = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) changed += labels[i] != st.previous_labels[i];
            st.label_change_fraction = static_cast<double>(changed) / static_cast<double>(n);
            st.previous_labels = labels;
            ++st.checks;
            if (!st.history.empty()) st.history.back().label_change_fraction = st.label_change_fraction;
            if (st.label_change_fraction < config.tolerance) {
                st.converged = true;
                break;
            }
        }
        const auto rows = sampler.next();
        const MatrixXd xb = gather_rows(x, rows);
        const MatrixXd pb = gather_rows(st.p, rows);
        const auto loss = dec_loss(ae, centers, xb, pb, config.gamma, &grads);
        if (!std::isfinite(loss.total))
            throw DecDivergence("non-finite DEC loss at iteration " + std::to_string(it), st.history);
        auto grad_views = dec_gradient_views(grads);
        nn::sgd_momentum_step(opt, params, grad_views);
        st.history.push_back({it, loss.reconstruction, loss.kld, loss.total, std::nullopt});
        st.iterations = it + 1;
    }

    result.final_latent = ae.encode(x);
    st.q = soft_assign(result.final_latent, centers);
    result.model = {"dec", centers, argmax_rows(st.q)};
    result.autoencoder = std::move(ae);
    return result;
}

DecConfig dec_config_from_json(const nlohmann::json& j) {
    DecConfig c;
    c.n_clusters = j.value("n_clusters", c.n_clusters);
    c.batch = j.value("batch", c.batch);
    c.update_interval = j.value("update_interval", c.update_interval);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.gamma = j.value("gamma", c.gamma);
    c.sgd.lr = j.value("sgd_lr", c.sgd.lr);
    c.sgd.momentum = j.value("sgd_momentum", c.sgd.momentum);
    c.pretrain.epochs = j.value("pretrain_epochs", c.pretrain.epochs);
    c.pretrain.batch = j.value("pretrain_batch", c.pretrain.batch);
    c.pretrain.adam.lr = j.value("pretrain_lr", c.pretrain.adam.lr);
    c.kmeans.n_init = j.value("kmeans_n_init", c.kmeans.n_init);
    c.kmeans.max_iter = j.value("kmeans_max_iter", c.kmeans.max_iter);
    return c;
}

nlohmann::json to_json(const DecConfig& c) {
    return {{"n_clusters", c.n_clusters},       {"batch", c.batch},
            {"update_interval", c.update_interval}, {"tolerance", c.tolerance},
            {"max_iterations", c.max_iterations}, {"gamma", c.gamma},
            {"sgd_lr", c.sgd.lr},              {"sgd_momentum", c.sgd.momentum},
            {"pretrain_epochs", c.pretrain.epochs}, {"pretrain_batch", c.pretrain.batch},
            {"pretrain_lr", c.pretrain.adam.lr}, {"kmeans_n_init", c.kmeans.n_init},
            {"kmeans_max_iter", c.kmeans.max_iter}};
}

void write_dec_history(const std::vector<DecHistoryRow>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.precision(17);
    out << "iteration,recon_loss,kld,total,label_change_fraction\n";
    for (const auto& row : history) {
        out << row.iteration << ',' << row.recon_loss << ',' << row.kld << ',' << row.total << ',';
        if (row.label_change_fraction) out << *row.label_change_fraction;
        out << '\n';
    }
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

void write_dec_checkpoint(const DecResult& result, const DecConfig& config, std::uint64_t seed,
                          const std::filesystem::path& path) {
    Autoencoder ae = result.autoencoder;
    MatrixXd centers = result.model.centers;
    nlohmann::json header = {{"model", "dec"},
                             {"encoder", nn::describe(ae.encoder.layers)},
                             {"decoder", nn::describe(ae.decoder.layers)},
                             {"centers", {centers.rows(), centers.cols()}},
                             {"seed", seed},
                             {"iterations", result.state.iterations},
                             {"checks", result.state.checks},
                             {"converged", result.state.converged},
                             {"config", to_json(config)}};
    nn::write_checkpoint(path, header, dec_parameters(ae, centers));
}

} // namespace urgency
