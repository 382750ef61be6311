#pragma once

#include "urgency/embedding_store.hpp"
#include "urgency/error.hpp"
#include "urgency/nn.hpp"
#include "urgency/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace urgency::clf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// One LSTM direction. Gate blocks are stacked i, f, g, o along the rows.
struct LstmCell {
    MatrixXd w_input;  // 4H x D
    MatrixXd w_hidden; // 4H x H
    VectorXd bias;     // 4H

    Index hidden() const { return w_hidden.cols(); }
    Index input() const { return w_input.cols(); }
};

struct BiLstmNetwork {
    LstmCell forward;
    LstmCell backward;
    double dropout = 0.5;
    MatrixXd dense_w; // 3 x 2H
    VectorXd dense_b; // 3

    static BiLstmNetwork init(Index input_dim, Index hidden, double dropout, std::uint64_t seed);
    static BiLstmNetwork zeros(Index input_dim, Index hidden);

    Index input_dim() const { return forward.input(); }
    Index hidden() const { return forward.hidden(); }
    Index param_count() const;
    // forward cell (w_input, w_hidden, bias), backward cell, dense w, dense b.
    std::vector<nn::ParamView> parameters();
};

struct BiLstmGradients {
    LstmCell forward;
    LstmCell backward;
    MatrixXd dense_w;
    VectorXd dense_b;

    static BiLstmGradients zeros_like(const BiLstmNetwork& net);
    void set_zero();
    std::vector<nn::ParamView> views();
};

struct DirectionCache {
    std::vector<Index> order; // processing order of positions
    MatrixXd gates;           // step x 4H, post-activation
    MatrixXd cells;           // step x H
    MatrixXd hiddens;         // step x H
};

struct BiLstmCache {
    MatrixXd sequence;
    DirectionCache forward;
    DirectionCache backward;
    VectorXd representation; // [h_fwd(last); h_bwd(first)] before dropout
    VectorXd mask;           // dropout scale per unit (1 when not training)
    VectorXd logits;
    VectorXd probs;
};

// Training mode draws an inverted-dropout mask from `rng` unless `mask` is given.
BiLstmCache bilstm_forward(const BiLstmNetwork& net, const MatrixXd& sequence, bool train_mode, Rng* rng = nullptr,
                           const VectorXd* mask = nullptr);

// Accumulates parameter gradients for one sequence given dLoss/dlogits.
void bilstm_backward(const BiLstmNetwork& net, const BiLstmCache& cache, const VectorXd& grad_logits, BiLstmGradients& grads);

struct SplitPlan {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::array<std::size_t, kNumClasses> train_counts{};
    std::array<std::size_t, kNumClasses> test_counts{};
    std::uint64_t seed = 0;
};

// Per-class counts for a stratified split of `class_sizes` at `fraction`:
// nearest rounding, then largest-remainder correction to round(fraction * n).
std::array<std::size_t, kNumClasses> stratified_counts(const std::array<std::size_t, kNumClasses>& class_sizes, double fraction);

SplitPlan stratified_split(const LabelTable& labels, double train_fraction, std::uint64_t seed);
SplitPlan stratified_split(const LabelTable& labels, const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed);

// w_c = N / (K * N_c).
VectorXd class_weights(std::span<const int> train_labels);

struct EvalReport {
    Eigen::Matrix<long long, 3, 3> confusion = Eigen::Matrix<long long, 3, 3>::Zero(); // rows actual, cols predicted
    long long n = 0;
    double accuracy = 0.0;
    std::array<double, 3> precision{};
    std::array<double, 3> recall{};
    std::array<double, 3> f1{};
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

EvalReport report_from_confusion(const Eigen::Matrix<long long, 3, 3>& confusion);
nlohmann::json to_json(const EvalReport& report);

struct TrainConfig {
    Index hidden = 128;
    double dropout = 0.5;
    double lr = 1e-3;
    int batch = 16;
    int epochs = 20;
    int patience = 3;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
};

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& config);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> validation_loss;
    double train_accuracy = 0.0;
};

struct TrainResult {
    BiLstmNetwork net;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    VectorXd class_weights;
    std::vector<std::string> fit_ids;
    std::vector<std::string> validation_ids;
};

class TrainDivergence : public Error {
public:
    TrainDivergence(const std::string& message, std::vector<EpochLog> log)
        : Error(ErrorKind::divergence, message), log_(std::move(log)) {}
    const std::vector<EpochLog>& log() const { return log_; }

private:
    std::vector<EpochLog> log_;
};

// Labeled sequences addressed by id.
struct Dataset {
    const TokenSequenceSet& sequences;
    const LabelTable& labels;

    const MatrixXd& sequence(const std::string& id) const;
    int label(const std::string& id) const { return labels.at(id); }
};

// Adam on class-weighted cross-entropy with early stopping on a stratified
// validation slice of `train_ids`.
TrainResult train(BiLstmNetwork net, const Dataset& data, const std::vector<std::string>& train_ids, const TrainConfig& config);

std::vector<int> predict(const BiLstmNetwork& net, const Dataset& data, const std::vector<std::string>& ids);
EvalReport evaluate(const BiLstmNetwork& net, const Dataset& data, const std::vector<std::string>& ids);

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
};

struct CvResult {
    std::vector<EvalReport> folds;
    std::vector<std::vector<std::string>> fold_ids;
    MetricSummary accuracy, macro_precision, macro_recall, macro_f1;
};

// Stratified fold assignment: each class is shuffled and dealt round-robin.
std::vector<std::vector<std::string>> stratified_folds(const LabelTable& labels, const std::vector<std::string>& ids,
                                                       int folds, std::uint64_t seed);

CvResult cross_validate(const Dataset& data, const std::vector<std::string>& ids, int folds, std::uint64_t seed,
                        const TrainConfig& config);
nlohmann::json to_json(const CvResult& cv);

struct SearchSpace {
    std::vector<Index> hidden;
    double dropout_min = 0.0, dropout_max = 0.5;
    double lr_min = 1e-4, lr_max = 1e-2; // sampled log-uniformly
    std::vector<int> batch;
};

struct Trial {
    TrainConfig config;
    double score = 0.0;
};

struct SearchResult {
    TrainConfig best;
    double best_score = 0.0;
    int best_trial = -1;
    std::vector<Trial> trials;
};

// Draws every trial's configuration up front from `seed`, then scores each
// by mean cross-validated macro-F1. Ties keep the earlier trial.
std::vector<TrainConfig> sample_trials(const SearchSpace& space, int trials, std::uint64_t seed, const TrainConfig& base);
SearchResult random_search(const SearchSpace& space, int trials, std::uint64_t seed, const Dataset& data,
                           const std::vector<std::string>& ids, int folds, const TrainConfig& base);
SearchSpace search_space_from_json(const nlohmann::json& j);

void write_bilstm_checkpoint(BiLstmNetwork net, const nlohmann::json& extra, const std::filesystem::path& path);
BiLstmNetwork read_bilstm_checkpoint(const std::filesystem::path& path);

} // namespace urgency::clf
