#include "urgency/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace urgency::clf {

namespace {

enum Stream : std::uint64_t { kInit = 21, kShuffle = 22, kDropout = 23, kValidation = 24, kFold = 25, kTrials = 26 };

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

LstmCell glorot_cell(Index input, Index hidden, Rng& rng) {
    auto fill = [&](Index rows, Index cols, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        MatrixXd m(rows, cols);
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
        return m;
    };
    LstmCell c;
    c.w_input = fill(4 * hidden, input, static_cast<double>(input), static_cast<double>(4 * hidden));
    c.w_hidden = fill(4 * hidden, hidden, static_cast<double>(hidden), static_cast<double>(4 * hidden));
    c.bias = VectorXd::Zero(4 * hidden);
    return c;
}

LstmCell zero_cell(Index input, Index hidden) {
    return {MatrixXd::Zero(4 * hidden, input), MatrixXd::Zero(4 * hidden, hidden), VectorXd::Zero(4 * hidden)};
}

DirectionCache run_direction(const LstmCell& cell, const MatrixXd& seq, bool reverse) {
    const Index steps = seq.rows(), h = cell.hidden();
    DirectionCache dc;
    dc.order.resize(static_cast<std::size_t>(steps));
    for (Index s = 0; s < steps; ++s) dc.order[static_cast<std::size_t>(s)] = reverse ? steps - 1 - s : s;
    const MatrixXd pre_input = seq * cell.w_input.transpose(); // steps x 4H, by position
    dc.gates.resize(steps, 4 * h);
    dc.cells.resize(steps, h);
    dc.hiddens.resize(steps, h);
    VectorXd h_prev = VectorXd::Zero(h), c_prev = VectorXd::Zero(h);
    for (Index s = 0; s < steps; ++s) {
        const Index t = dc.order[static_cast<std::size_t>(s)];
        VectorXd a = pre_input.row(t).transpose() + cell.bias + cell.w_hidden * h_prev;
        for (Index k = 0; k < h; ++k) {
            a(k) = sigmoid(a(k));                  // i
            a(h + k) = sigmoid(a(h + k));          // f
            a(2 * h + k) = std::tanh(a(2 * h + k)); // g
            a(3 * h + k) = sigmoid(a(3 * h + k));  // o
        }
        const VectorXd c = a.segment(h, h).cwiseProduct(c_prev) + a.segment(0, h).cwiseProduct(a.segment(2 * h, h));
        const VectorXd hn = a.segment(3 * h, h).cwiseProduct(c.array().tanh().matrix());
        dc.gates.row(s) = a.transpose();
        dc.cells.row(s) = c.transpose();
        dc.hiddens.row(s) = hn.transpose();
        h_prev = hn;
        c_prev = c;
    }
    return dc;
}

void backprop_direction(const LstmCell& cell, const DirectionCache& dc, const MatrixXd& seq, VectorXd dh, LstmCell& grad) {
    const Index steps = dc.gates.rows(), h = cell.hidden();
    MatrixXd d_pre(steps, 4 * h); // by step
    MatrixXd h_prev_rows = MatrixXd::Zero(steps, h);
    VectorXd dc_next = VectorXd::Zero(h);
    for (Index s = steps; s-- > 0;) {
        const auto g = dc.gates.row(s).transpose();
        const VectorXd i = g.segment(0, h), f = g.segment(h, h), cand = g.segment(2 * h, h), o = g.segment(3 * h, h);
        const VectorXd c = dc.cells.row(s).transpose();
        const VectorXd c_prev = s > 0 ? VectorXd(dc.cells.row(s - 1).transpose()) : VectorXd::Zero(h);
        const VectorXd tc = c.array().tanh();
        const VectorXd d_o = dh.cwiseProduct(tc);
        const VectorXd d_c = dc_next + dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
        VectorXd da(4 * h);
        da.segment(0, h) = (d_c.array() * cand.array() * i.array() * (1.0 - i.array())).matrix();
        da.segment(h, h) = (d_c.array() * c_prev.array() * f.array() * (1.0 - f.array())).matrix();
        da.segment(2 * h, h) = (d_c.array() * i.array() * (1.0 - cand.array().square())).matrix();
        da.segment(3 * h, h) = (d_o.array() * o.array() * (1.0 - o.array())).matrix();
        d_pre.row(s) = da.transpose();
        if (s > 0) h_prev_rows.row(s) = dc.hiddens.row(s - 1);
        dh = cell.w_hidden.transpose() * da;
        dc_next = d_c.cwiseProduct(f);
    }
    MatrixXd x_by_step(steps, seq.cols());
    for (Index s = 0; s < steps; ++s) x_by_step.row(s) = seq.row(dc.order[static_cast<std::size_t>(s)]);
    grad.w_input.noalias() += d_pre.transpose() * x_by_step;
    grad.w_hidden.noalias() += d_pre.transpose() * h_prev_rows;
    grad.bias += d_pre.colwise().sum().transpose();
}

void append(LstmCell& c, std::vector<nn::ParamView>& out) {
    out.push_back(nn::view(c.w_input));
    out.push_back(nn::view(c.w_hidden));
    out.push_back(nn::view(c.bias));
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MetricSummary summarize(const std::vector<double>& v) {
    MetricSummary m;
    m.mean = mean_of(v);
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}

std::array<std::vector<std::string>, kNumClasses> by_class(const LabelTable& labels, const std::vector<std::string>& ids) {
    std::array<std::vector<std::string>, kNumClasses> out;
    for (const auto& id : ids) out[static_cast<std::size_t>(labels.at(id))].push_back(id);
    return out;
}

// Mean weighted cross-entropy and accuracy in evaluation mode.
std::pair<double, double> score_set(const BiLstmNetwork& net, const Dataset& data, const std::vector<std::string>& ids,
                                    const VectorXd& weights) {
    if (ids.empty()) return {0.0, 0.0};
    MatrixXd probs(static_cast<Index>(ids.size()), kNumClasses);
    std::vector<int> targets;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto cache = bilstm_forward(net, data.sequence(ids[i]), false);
        probs.row(static_cast<Index>(i)) = cache.probs.transpose();
        targets.push_back(data.label(ids[i]));
        Index arg = 0;
        cache.probs.maxCoeff(&arg);
        correct += arg == targets.back();
    }
    const auto loss = nn::weighted_cross_entropy(probs, targets, weights);
    return {loss.loss, static_cast<double>(correct) / static_cast<double>(ids.size())};
}

} // namespace

BiLstmNetwork BiLstmNetwork::init(Index input_dim, Index hidden, double dropout, std::uint64_t seed) {
    if (input_dim < 1 || hidden < 1) throw Error(ErrorKind::domain, "BiLSTM dimensions must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::domain, "dropout must be in [0, 1)");
    Rng rng(derive_seed(seed, kInit));
    BiLstmNetwork net;
    net.forward = glorot_cell(input_dim, hidden, rng);
    net.backward = glorot_cell(input_dim, hidden, rng);
    net.dropout = dropout;
    const auto dense = nn::glorot_dense(2 * hidden, kNumClasses, nn::Activation::linear, rng);
    net.dense_w = dense.w;
    net.dense_b = dense.b;
    return net;
}

BiLstmNetwork BiLstmNetwork::zeros(Index input_dim, Index hidden) {
    BiLstmNetwork net;
    net.forward = zero_cell(input_dim, hidden);
    net.backward = zero_cell(input_dim, hidden);
    net.dropout = 0.0;
    net.dense_w = MatrixXd::Zero(kNumClasses, 2 * hidden);
    net.dense_b = VectorXd::Zero(kNumClasses);
    return net;
}

Index BiLstmNetwork::param_count() const {
    auto cell = [](const LstmCell& c) { return c.w_input.size() + c.w_hidden.size() + c.bias.size(); };
    return cell(forward) + cell(backward) + dense_w.size() + dense_b.size();
}

std::vector<nn::ParamView> BiLstmNetwork::parameters() {
    std::vector<nn::ParamView> out;
    append(forward, out);
    append(backward, out);
    out.push_back(nn::view(dense_w));
    out.push_back(nn::view(dense_b));
    return out;
}

BiLstmGradients BiLstmGradients::zeros_like(const BiLstmNetwork& net) {
    return {zero_cell(net.input_dim(), net.hidden()), zero_cell(net.input_dim(), net.hidden()),
            MatrixXd::Zero(net.dense_w.rows(), net.dense_w.cols()), VectorXd::Zero(net.dense_b.size())};
}

void BiLstmGradients::set_zero() {
    for (auto* c : {&forward, &backward}) {
        c->w_input.setZero();
        c->w_hidden.setZero();
        c->bias.setZero();
    }
    dense_w.setZero();
    dense_b.setZero();
}

std::vector<nn::ParamView> BiLstmGradients::views() {
    std::vector<nn::ParamView> out;
    append(forward, out);
    append(backward, out);
    out.push_back(nn::view(dense_w));
    out.push_back(nn::view(dense_b));
    return out;
}

BiLstmCache bilstm_forward(const BiLstmNetwork& net, const MatrixXd& sequence, bool train_mode, Rng* rng, const VectorXd* mask) {
    if (sequence.rows() == 0) throw Error(ErrorKind::domain, "empty sequence");
    if (sequence.rows() > static_cast<Index>(kMaxSequenceLength))
        throw Error(ErrorKind::integrity, "sequence of length " + std::to_string(sequence.rows()) + " exceeds " +
                                              std::to_string(kMaxSequenceLength) + "; truncate before the network");
    if (sequence.cols() != net.input_dim())
        throw Error(ErrorKind::shape, "token width " + std::to_string(sequence.cols()) + " != network input " +
                                          std::to_string(net.input_dim()));
    const Index h = net.hidden();
    BiLstmCache cache;
    cache.sequence = sequence;
    cache.forward = run_direction(net.forward, sequence, false);
    cache.backward = run_direction(net.backward, sequence, true);
    cache.representation.resize(2 * h);
    cache.representation.head(h) = cache.forward.hiddens.row(sequence.rows() - 1).transpose();
    cache.representation.tail(h) = cache.backward.hiddens.row(sequence.rows() - 1).transpose();

    cache.mask = VectorXd::Ones(2 * h);
    if (mask) {
        if (mask->size() != 2 * h) throw Error(ErrorKind::shape, "dropout mask has the wrong length");
        cache.mask = *mask;
    } else if (train_mode && net.dropout > 0.0) {
        if (!rng) throw Error(ErrorKind::domain, "training-mode dropout needs a random stream");
        const double keep = 1.0 - net.dropout;
        for (Index k = 0; k < 2 * h; ++k) cache.mask(k) = rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    cache.logits = net.dense_w * cache.representation.cwiseProduct(cache.mask) + net.dense_b;
    cache.probs = nn::softmax(cache.logits.transpose()).transpose();
    return cache;
}

void bilstm_backward(const BiLstmNetwork& net, const BiLstmCache& cache, const VectorXd& grad_logits, BiLstmGradients& grads) {
    const Index h = net.hidden();
    const VectorXd dropped = cache.representation.cwiseProduct(cache.mask);
    grads.dense_w.noalias() += grad_logits * dropped.transpose();
    grads.dense_b += grad_logits;
    const VectorXd d_rep = (net.dense_w.transpose() * grad_logits).cwiseProduct(cache.mask);
    backprop_direction(net.forward, cache.forward, cache.sequence, d_rep.head(h), grads.forward);
    backprop_direction(net.backward, cache.backward, cache.sequence, d_rep.tail(h), grads.backward);
}

std::array<std::size_t, kNumClasses> stratified_counts(const std::array<std::size_t, kNumClasses>& sizes, double fraction) {
    std::array<std::size_t, kNumClasses> counts{};
    std::array<double, kNumClasses> remainder{};
    std::size_t n = 0, total = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        const double exact = fraction * static_cast<double>(sizes[c]);
        counts[c] = static_cast<std::size_t>(std::llround(exact));
        remainder[c] = exact - static_cast<double>(counts[c]);
        n += sizes[c];
        total += counts[c];
    }
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    while (total < target) {
        std::size_t best = sizes.size();
        for (std::size_t c = 0; c < sizes.size(); ++c)
            if (counts[c] < sizes[c] && (best == sizes.size() || remainder[c] > remainder[best])) best = c;
        if (best == sizes.size()) break;
        ++counts[best];
        remainder[best] -= 1.0;
        ++total;
    }
    while (total > target) {
        std::size_t best = sizes.size();
        for (std::size_t c = 0; c < sizes.size(); ++c)
            if (counts[c] > 0 && (best == sizes.size() || remainder[c] < remainder[best])) best = c;
        if (best == sizes.size()) break;
        --counts[best];
        remainder[best] += 1.0;
        --total;
    }
    return counts;
}

SplitPlan stratified_split(const LabelTable& labels, double train_fraction, std::uint64_t seed) {
    return stratified_split(labels, labels.ids(), train_fraction, seed);
}

SplitPlan stratified_split(const LabelTable& labels, const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw Error(ErrorKind::domain, "train fraction must be in (0, 1]");
    auto classes = by_class(labels, ids);
    std::array<std::size_t, kNumClasses> sizes{};
    for (std::size_t c = 0; c < classes.size(); ++c) {
        sizes[c] = classes[c].size();
        if (sizes[c] < 2)
            throw Error(ErrorKind::stratification, std::string(urgency_name(static_cast<int>(c))) + " has " +
                                                       std::to_string(sizes[c]) + " member(s); stratification needs 2");
    }
    SplitPlan plan;
    plan.seed = seed;
    plan.train_counts = stratified_counts(sizes, train_fraction);
    Rng rng(seed);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        rng.shuffle(std::span<std::string>(classes[c]));
        plan.test_counts[c] = sizes[c] - plan.train_counts[c];
        const auto cut = classes[c].begin() + static_cast<std::ptrdiff_t>(plan.train_counts[c]);
        plan.train_ids.insert(plan.train_ids.end(), classes[c].begin(), cut);
        plan.test_ids.insert(plan.test_ids.end(), cut, classes[c].end());
    }
    if (plan.test_ids.empty()) throw Error(ErrorKind::domain, "train fraction leaves an empty test set");
    return plan;
}

VectorXd class_weights(std::span<const int> train_labels) {
    std::array<double, kNumClasses> counts{};
    for (int l : train_labels) {
        if (l < 0 || l >= kNumClasses) throw Error(ErrorKind::domain, "label outside {0,1,2}");
        counts[static_cast<std::size_t>(l)] += 1.0;
    }
    VectorXd w(kNumClasses);
    const auto n = static_cast<double>(train_labels.size());
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0.0)
            throw Error(ErrorKind::domain, std::string(urgency_name(c)) + " is absent from the training labels");
        w(c) = n / (kNumClasses * counts[static_cast<std::size_t>(c)]);
    }
    return w;
}

EvalReport report_from_confusion(const Eigen::Matrix<long long, 3, 3>& confusion) {
    EvalReport r;
    r.confusion = confusion;
    r.n = confusion.sum();
    if (r.n == 0) throw Error(ErrorKind::domain, "cannot report on zero predictions");
    r.accuracy = static_cast<double>(confusion.trace()) / static_cast<double>(r.n);
    for (int c = 0; c < 3; ++c) {
        const auto tp = static_cast<double>(confusion(c, c));
        const auto predicted = static_cast<double>(confusion.col(c).sum());
        const auto actual = static_cast<double>(confusion.row(c).sum());
        const auto idx = static_cast<std::size_t>(c);
        r.precision[idx] = predicted > 0 ? tp / predicted : 0.0;
        r.recall[idx] = actual > 0 ? tp / actual : 0.0;
        const double s = r.precision[idx] + r.recall[idx];
        r.f1[idx] = s > 0 ? 2.0 * r.precision[idx] * r.recall[idx] / s : 0.0;
    }
    r.macro_precision = (r.precision[0] + r.precision[1] + r.precision[2]) / 3.0;
    r.macro_recall = (r.recall[0] + r.recall[1] + r.recall[2]) / 3.0;
    r.macro_f1 = (r.f1[0] + r.f1[1] + r.f1[2]) / 3.0;
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json confusion = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) confusion.push_back({r.confusion(i, 0), r.confusion(i, 1), r.confusion(i, 2)});
    nlohmann::json per_class = nlohmann::json::object();
    for (int c = 0; c < 3; ++c) {
        const auto idx = static_cast<std::size_t>(c);
        per_class[std::string(urgency_name(c))] = {{"precision", r.precision[idx]}, {"recall", r.recall[idx]}, {"f1", r.f1[idx]}};
    }
    return {{"labels", {"Elective", "Immediate", "Urgent"}},
            {"confusion", confusion},
            {"n", r.n},
            {"accuracy", r.accuracy},
            {"per_class", per_class},
            {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.seed = j.value("seed", c.seed);
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"hidden", c.hidden}, {"dropout", c.dropout}, {"lr", c.lr},
            {"batch", c.batch},   {"epochs", c.epochs},   {"patience", c.patience},
            {"validation_fraction", c.validation_fraction}, {"seed", c.seed}};
}

const MatrixXd& Dataset::sequence(const std::string& id) const {
    const auto idx = sequences.index_of(id);
    if (!idx) throw Error(ErrorKind::not_found, "no token sequence for id '" + id + "'");
    return sequences.sequences[*idx];
}

TrainResult train(BiLstmNetwork net, const Dataset& data, const std::vector<std::string>& train_ids, const TrainConfig& config) {
    if (config.batch < 1) throw Error(ErrorKind::domain, "batch size must be positive");
    TrainResult result;
    result.fit_ids = train_ids;
    if (config.validation_fraction > 0.0) {
        try {
            auto plan = stratified_split(data.labels, train_ids, 1.0 - config.validation_fraction, derive_seed(config.seed, kValidation));
            result.fit_ids = std::move(plan.train_ids);
            result.validation_ids = std::move(plan.test_ids);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::stratification && e.kind() != ErrorKind::domain) throw;
        }
    }
    std::vector<int> fit_labels;
    for (const auto& id : result.fit_ids) fit_labels.push_back(data.label(id));
    result.class_weights = class_weights(fit_labels);
    result.net = net;
    if (config.epochs <= 0) return result;

    auto opt = nn::OptimizerState::make_adam({config.lr});
    auto params = net.parameters();
    auto grads = BiLstmGradients::zeros_like(net);
    auto grad_views = grads.views();
    Rng shuffle_rng(derive_seed(config.seed, kShuffle));
    Rng dropout_rng(derive_seed(config.seed, kDropout));
    std::vector<std::string> order = result.fit_ids;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::string>(order));
        double weighted_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch), order.size() - start);
            std::vector<BiLstmCache> caches;
            MatrixXd probs(static_cast<Index>(len), kNumClasses);
            std::vector<int> targets;
            for (std::size_t b = 0; b < len; ++b) {
                const auto& id = order[start + b];
                caches.push_back(bilstm_forward(net, data.sequence(id), true, &dropout_rng));
                probs.row(static_cast<Index>(b)) = caches.back().probs.transpose();
                targets.push_back(data.label(id));
            }
            const auto loss = nn::weighted_cross_entropy(probs, targets, result.class_weights);
            if (!std::isfinite(loss.loss))
                throw TrainDivergence("non-finite training loss in epoch " + std::to_string(epoch), result.log);
            grads.set_zero();
            for (std::size_t b = 0; b < len; ++b) bilstm_backward(net, caches[b], loss.grad.row(static_cast<Index>(b)).transpose(), grads);
            nn::adam_step(opt, params, grad_views);
            weighted_loss += loss.loss * static_cast<double>(len);
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = weighted_loss / static_cast<double>(order.size());
        entry.train_accuracy = score_set(net, data, result.fit_ids, result.class_weights).second;
        if (!result.validation_ids.empty()) {
            const double val = score_set(net, data, result.validation_ids, result.class_weights).first;
            entry.validation_loss = val;
            if (val < best_val) {
                best_val = val;
                result.best_epoch = epoch;
                result.net = net;
                since_best = 0;
            } else {
                ++since_best;
            }
        } else {
            result.best_epoch = epoch;
            result.net = net;
        }
        result.log.push_back(entry);
        if (!result.validation_ids.empty() && since_best >= config.patience) break;
    }
    return result;
}

std::vector<int> predict(const BiLstmNetwork& net, const Dataset& data, const std::vector<std::string>& ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto cache = bilstm_forward(net, data.sequence(id), false);
        Index arg = 0;
        cache.probs.maxCoeff(&arg);
        out.push_back(static_cast<int>(arg));
    }
    return out;
}

EvalReport evaluate(const BiLstmNetwork& net, const Dataset& data, const std::vector<std::string>& ids) {
    if (ids.empty()) throw Error(ErrorKind::domain, "evaluate needs at least one id");
    const auto predicted = predict(net, data, ids);
    Eigen::Matrix<long long, 3, 3> confusion = Eigen::Matrix<long long, 3, 3>::Zero();
    for (std::size_t i = 0; i < ids.size(); ++i) ++confusion(data.label(ids[i]), predicted[i]);
    return report_from_confusion(confusion);
}

std::vector<std::vector<std::string>> stratified_folds(const LabelTable& labels, const std::vector<std::string>& ids,
                                                       int folds, std::uint64_t seed) {
    if (folds < 2) throw Error(ErrorKind::domain, "cross-validation needs at least 2 folds");
    auto classes = by_class(labels, ids);
    const auto present = std::count_if(classes.begin(), classes.end(), [](const auto& v) { return !v.empty(); });
    if (present < 2) throw Error(ErrorKind::stratification, "cross-validation over a single class");
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const auto& v : classes) smallest = std::min(smallest, v.size());
    if (static_cast<std::size_t>(folds) > smallest)
        throw Error(ErrorKind::stratification, std::to_string(folds) + " folds exceed the smallest class size " +
                                                   std::to_string(smallest));
    Rng rng(seed);
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(folds));
    std::size_t next = 0;
    for (auto& members : classes) {
        rng.shuffle(std::span<std::string>(members));
        for (const auto& id : members) {
            out[next].push_back(id);
            next = (next + 1) % out.size();
        }
    }
    return out;
}

CvResult cross_validate(const Dataset& data, const std::vector<std::string>& ids, int folds, std::uint64_t seed,
                        const TrainConfig& config) {
    CvResult cv;
    cv.fold_ids = stratified_folds(data.labels, ids, folds, derive_seed(seed, kFold));
    std::vector<double> acc, prec, rec, f1;
    for (std::size_t f = 0; f < cv.fold_ids.size(); ++f) {
        std::vector<std::string> train_ids;
        for (std::size_t g = 0; g < cv.fold_ids.size(); ++g)
            if (g != f) train_ids.insert(train_ids.end(), cv.fold_ids[g].begin(), cv.fold_ids[g].end());
        TrainConfig fold_config = config;
        fold_config.seed = derive_seed(seed, 100 + f);
        auto net = BiLstmNetwork::init(data.sequences.dim, config.hidden, config.dropout, fold_config.seed);
        const auto trained = train(std::move(net), data, train_ids, fold_config);
        const auto report = evaluate(trained.net, data, cv.fold_ids[f]);
        acc.push_back(report.accuracy);
        prec.push_back(report.macro_precision);
        rec.push_back(report.macro_recall);
        f1.push_back(report.macro_f1);
        cv.folds.push_back(report);
    }
    cv.accuracy = summarize(acc);
    cv.macro_precision = summarize(prec);
    cv.macro_recall = summarize(rec);
    cv.macro_f1 = summarize(f1);
    return cv;
}

nlohmann::json to_json(const CvResult& cv) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : cv.folds) folds.push_back(to_json(f));
    auto pair = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"stddev", m.stddev}}; };
    return {{"folds", folds},
            {"accuracy", pair(cv.accuracy)},
            {"macro_precision", pair(cv.macro_precision)},
            {"macro_recall", pair(cv.macro_recall)},
            {"macro_f1", pair(cv.macro_f1)}};
}

std::vector<TrainConfig> sample_trials(const SearchSpace& space, int trials, std::uint64_t seed, const TrainConfig& base) {
    if (space.hidden.empty() || space.batch.empty() || space.dropout_min > space.dropout_max || space.lr_min > space.lr_max ||
        space.lr_min <= 0.0)
        throw Error(ErrorKind::domain, "search space is empty");
    if (trials < 1) throw Error(ErrorKind::domain, "random search needs at least one trial");
    Rng rng(derive_seed(seed, kTrials));
    std::vector<TrainConfig> out;
    for (int t = 0; t < trials; ++t) {
        TrainConfig c = base;
        c.hidden = space.hidden[rng.below(space.hidden.size())];
        c.dropout = rng.uniform(space.dropout_min, space.dropout_max);
        c.lr = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
        c.batch = space.batch[rng.below(space.batch.size())];
        c.seed = rng.next();
        out.push_back(c);
    }
    return out;
}

SearchResult random_search(const SearchSpace& space, int trials, std::uint64_t seed, const Dataset& data,
                           const std::vector<std::string>& ids, int folds, const TrainConfig& base) {
    SearchResult result;
    for (const auto& config : sample_trials(space, trials, seed, base)) {
        const auto cv = cross_validate(data, ids, folds, config.seed, config);
        result.trials.push_back({config, cv.macro_f1.mean});
        if (result.best_trial < 0 || cv.macro_f1.mean > result.best_score) {
            result.best_trial = static_cast<int>(result.trials.size()) - 1;
            result.best_score = cv.macro_f1.mean;
            result.best = config;
        }
    }
    return result;
}

SearchSpace search_space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.hidden = j.value("hidden", std::vector<Index>{32, 64, 128});
    s.batch = j.value("batch", std::vector<int>{8, 16, 32});
    if (j.contains("dropout")) {
        s.dropout_min = j["dropout"].at(0);
        s.dropout_max = j["dropout"].at(1);
    }
    if (j.contains("lr")) {
        s.lr_min = j["lr"].at(0);
        s.lr_max = j["lr"].at(1);
    }
    return s;
}

void write_bilstm_checkpoint(BiLstmNetwork net, const nlohmann::json& extra, const std::filesystem::path& path) {
    nlohmann::json header = {{"model", "bilstm"},
                             {"input_dim", net.input_dim()},
                             {"hidden", net.hidden()},
                             {"dropout", net.dropout},
                             {"classes", kNumClasses},
                             {"layout", "fwd(w_input,w_hidden,bias),bwd(w_input,w_hidden,bias),dense_w,dense_b; column-major"}};
    if (!extra.is_null()) header["training"] = extra;
    nn::write_checkpoint(path, header, net.parameters());
}

BiLstmNetwork read_bilstm_checkpoint(const std::filesystem::path& path) {
    const auto ck = nn::read_checkpoint(path);
    if (ck.header.value("model", "") != "bilstm") throw Error(ErrorKind::format, path.string() + ": not a BiLSTM checkpoint");
    auto net = BiLstmNetwork::zeros(ck.header.at("input_dim").get<Index>(), ck.header.at("hidden").get<Index>());
    net.dropout = ck.header.at("dropout");
    nn::unflatten(net.parameters(), ck.values);
    return net;
}

} // namespace urgency::clf
