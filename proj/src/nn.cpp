#include "urgency/nn.hpp"

#include "urgency/error.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace urgency::nn {

namespace {

void check_same_shape(const MatrixXd& a, const MatrixXd& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorKind::shape, std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                          " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

void check_pairs(std::span<const ParamView> params, std::span<const ParamView> grads) {
    if (params.size() != grads.size()) throw Error(ErrorKind::shape, "parameter and gradient lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].size != grads[i].size)
            throw Error(ErrorKind::shape, "parameter " + std::to_string(i) + " and its gradient differ in size");
}

void ensure_buffers(std::vector<VectorXd>& buffers, std::span<const ParamView> params) {
    if (buffers.empty()) {
        for (const auto& p : params) buffers.push_back(VectorXd::Zero(p.size));
        return;
    }
    if (buffers.size() != params.size()) throw Error(ErrorKind::shape, "optimizer state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (buffers[i].size() != params[i].size) throw Error(ErrorKind::shape, "optimizer buffer size mismatch");
}

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_le(const std::string& s, std::size_t pos, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    return v;
}

constexpr char kCheckpointMagic[4] = {'U', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace

DenseLayer glorot_dense(Index in, Index out, Activation activation, Rng& rng) {
    DenseLayer layer{MatrixXd(out, in), VectorXd::Zero(out), activation};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    // Column-major fill order is part of the seeded contract.
    for (Index j = 0; j < in; ++j)
        for (Index i = 0; i < out; ++i) layer.w(i, j) = rng.uniform(-limit, limit);
    return layer;
}

MatrixXd dense_forward(const DenseLayer& layer, const MatrixXd& x) {
    if (x.cols() != layer.in())
        throw Error(ErrorKind::shape, "dense input width " + std::to_string(x.cols()) + " != " + std::to_string(layer.in()));
    MatrixXd y = x * layer.w.transpose();
    y.rowwise() += layer.b.transpose();
    if (layer.activation == Activation::relu) y = y.cwiseMax(0.0);
    return y;
}

DenseGradients dense_backward(const DenseLayer& layer, const MatrixXd& x, const MatrixXd& grad_out) {
    return dense_backward(layer, x, dense_forward(layer, x), grad_out);
}

DenseGradients dense_backward(const DenseLayer& layer, const MatrixXd& x, const MatrixXd& y, const MatrixXd& grad_out) {
    if (x.cols() != layer.in()) throw Error(ErrorKind::shape, "dense backward: input width mismatch");
    check_same_shape(y, grad_out, "dense backward: upstream gradient");
    MatrixXd grad_pre = grad_out;
    if (layer.activation == Activation::relu) grad_pre = (y.array() > 0.0).select(grad_out, 0.0);
    DenseGradients g;
    g.grad_w = grad_pre.transpose() * x;
    g.grad_b = grad_pre.colwise().sum().transpose();
    g.grad_x = grad_pre * layer.w;
    return g;
}

MatrixXd Mlp::forward(const MatrixXd& x) const {
    MatrixXd h = x;
    for (const auto& layer : layers) h = dense_forward(layer, h);
    return h;
}

std::vector<MatrixXd> Mlp::forward_cached(const MatrixXd& x) const {
    std::vector<MatrixXd> acts;
    acts.reserve(layers.size() + 1);
    acts.push_back(x);
    for (const auto& layer : layers) acts.push_back(dense_forward(layer, acts.back()));
    return acts;
}

MatrixXd Mlp::backward(const std::vector<MatrixXd>& activations, const MatrixXd& grad_out,
                       std::vector<DenseGradients>& grads) const {
    grads.resize(layers.size());
    MatrixXd g = grad_out;
    for (std::size_t i = layers.size(); i-- > 0;) {
        grads[i] = dense_backward(layers[i], activations[i], activations[i + 1], g);
        g = std::move(grads[i].grad_x);
    }
    return g;
}

Index Mlp::param_count() const { return count_params(layers); }

Index count_params(std::span<const DenseLayer> layers) {
    Index total = 0;
    for (const auto& l : layers) total += l.param_count();
    return total;
}

MatrixXd softmax(const MatrixXd& z) {
    MatrixXd out(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        out.row(i) = (z.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

LossAndGrad weighted_cross_entropy(const MatrixXd& probs, std::span<const int> targets, const VectorXd& weights) {
    if (static_cast<Index>(targets.size()) != probs.rows())
        throw Error(ErrorKind::shape, "target count does not match probability rows");
    if (weights.size() != probs.cols()) throw Error(ErrorKind::shape, "class weight count does not match classes");
    const auto batch = static_cast<double>(probs.rows());
    LossAndGrad out{0.0, probs};
    for (Index i = 0; i < probs.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= probs.cols()) throw Error(ErrorKind::domain, "target " + std::to_string(t) + " out of range");
        const double w = weights(t);
        out.loss -= w * std::log(std::max(probs(i, t), 1e-12));
        out.grad(i, t) -= 1.0;
        out.grad.row(i) *= w / batch;
    }
    out.loss /= batch;
    return out;
}

LossAndGrad mse(const MatrixXd& prediction, const MatrixXd& target) {
    check_same_shape(prediction, target, "mse");
    const auto count = static_cast<double>(prediction.size());
    const MatrixXd diff = prediction - target;
    return {diff.squaredNorm() / count, diff * (2.0 / count)};
}

LossAndGrad kld(const MatrixXd& p, const MatrixXd& q) {
    check_same_shape(p, q, "kld");
    const auto n = static_cast<double>(p.rows());
    LossAndGrad out{0.0, MatrixXd::Zero(q.rows(), q.cols())};
    for (Index j = 0; j < p.cols(); ++j)
        for (Index i = 0; i < p.rows(); ++i) {
            const double pij = p(i, j);
            if (pij <= 0.0) continue;
            const double qij = std::max(q(i, j), 1e-12);
            out.loss += pij * std::log(pij / qij);
            out.grad(i, j) = -pij / qij / n;
        }
    out.loss /= n;
    return out;
}

Index total_size(std::span<const ParamView> params) {
    Index total = 0;
    for (const auto& p : params) total += p.size;
    return total;
}

VectorXd flatten(std::span<const ParamView> params) {
    VectorXd flat(total_size(params));
    Index offset = 0;
    for (const auto& p : params) {
        flat.segment(offset, p.size) = p.vec();
        offset += p.size;
    }
    return flat;
}

void unflatten(std::span<const ParamView> params, const VectorXd& flat) {
    if (flat.size() != total_size(params)) throw Error(ErrorKind::shape, "flat parameter vector has wrong length");
    Index offset = 0;
    for (const auto& p : params) {
        p.vec() = flat.segment(offset, p.size);
        offset += p.size;
    }
}

OptimizerState OptimizerState::make_adam(AdamOptions options) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.adam = options;
    return s;
}

OptimizerState OptimizerState::make_sgd_momentum(SgdMomentumOptions options) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd_momentum;
    s.sgd = options;
    return s;
}

void adam_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads) {
    if (state.kind != OptimizerKind::adam) throw Error(ErrorKind::domain, "adam_step on a non-Adam optimizer");
    check_pairs(params, grads);
    ensure_buffers(state.first, params);
    ensure_buffers(state.second, params);
    ++state.step;
    const auto& o = state.adam;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto g = grads[i].vec();
        auto& m = state.first[i];
        auto& v = state.second[i];
        m = o.beta1 * m + (1.0 - o.beta1) * g;
        v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
        params[i].vec().array() -= o.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + o.eps);
    }
}

void sgd_momentum_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads) {
    if (state.kind != OptimizerKind::sgd_momentum) throw Error(ErrorKind::domain, "sgd_momentum_step on a non-SGD optimizer");
    check_pairs(params, grads);
    ensure_buffers(state.first, params);
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = state.first[i];
        v = state.sgd.momentum * v - state.sgd.lr * grads[i].vec();
        params[i].vec() += v;
    }
}

void optimizer_step(OptimizerState& state, std::span<const ParamView> params, std::span<const ParamView> grads) {
    if (state.kind == OptimizerKind::adam) adam_step(state, params, grads);
    else sgd_momentum_step(state, params, grads);
}

GradCheckReport grad_check(const FlatObjective& objective, const VectorXd& params, const GradCheckOptions& options) {
    GradCheckReport report;
    VectorXd analytic(params.size());
    const double base = objective(params, &analytic);
    if (!std::isfinite(base)) {
        report.aborted = true;
        report.diagnostics = "non-finite loss at the base point";
        return report;
    }
    std::vector<Index> coords = options.coordinates;
    if (coords.empty()) {
        coords.resize(static_cast<std::size_t>(params.size()));
        for (Index i = 0; i < params.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    }
    VectorXd probe = params;
    for (const Index i : coords) {
        if (i < 0 || i >= params.size()) throw Error(ErrorKind::domain, "grad_check coordinate out of range");
        const double original = probe(i);
        probe(i) = original + options.step;
        const double up = objective(probe, nullptr);
        probe(i) = original - options.step;
        const double down = objective(probe, nullptr);
        probe(i) = original;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            report.aborted = true;
            report.diagnostics = "non-finite loss while perturbing coordinate " + std::to_string(i);
            report.passed = false;
            return report;
        }
        const double numeric = (up - down) / (2.0 * options.step);
        const double a = analytic(i);
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
        ++report.checked;
        if (err > report.max_relative_error || report.worst_index < 0) {
            report.max_relative_error = err;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_relative_error < options.tolerance;
    std::ostringstream msg;
    msg << "checked " << report.checked << " coordinates, max relative error " << report.max_relative_error
        << " at " << report.worst_index << " (analytic " << report.worst_analytic << ", numeric " << report.worst_numeric << ")";
    report.diagnostics = msg.str();
    return report;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header, std::span<const ParamView> params) {
    const std::string head = header.dump();
    std::string bytes(kCheckpointMagic, 4);
    put_u32(bytes, kCheckpointVersion);
    put_u64(bytes, head.size());
    bytes += head;
    put_u64(bytes, static_cast<std::uint64_t>(total_size(params)));
    for (const auto& p : params)
        for (Index i = 0; i < p.size; ++i) put_u64(bytes, std::bit_cast<std::uint64_t>(p.data[i]));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    auto fail = [&](const std::string& why) { return Error(ErrorKind::format, path.string() + ": " + why); };
    if (bytes.size() < 16 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.data())) throw fail("bad magic");
    if (get_le(bytes, 4, 4) != kCheckpointVersion) throw fail("unsupported version");
    const auto head_len = get_le(bytes, 8, 8);
    if (bytes.size() < 16 + head_len + 8) throw fail("truncated header");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(bytes.substr(16, head_len));
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    std::size_t pos = 16 + head_len;
    const auto count = get_le(bytes, pos, 8);
    pos += 8;
    if (bytes.size() != pos + count * 8) throw fail("parameter blob length mismatch");
    ck.values.resize(static_cast<Index>(count));
    for (std::uint64_t i = 0; i < count; ++i) ck.values(static_cast<Index>(i)) = std::bit_cast<double>(get_le(bytes, pos + i * 8, 8));
    return ck;
}

nlohmann::json describe(std::span<const DenseLayer> layers) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& l : layers)
        out.push_back({{"in", l.in()}, {"out", l.out()}, {"activation", l.activation == Activation::relu ? "relu" : "linear"}});
    return out;
}

} // namespace urgency::nn
