#pragma once

#include "urgency/error.hpp"
#include "urgency/kmeans.hpp"
#include "urgency/nn.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace urgency {

using Eigen::Index;
using Eigen::MatrixXd;

inline constexpr Index kDecParameterCount = 652'150;

struct AutoencoderShape {
    Index input = 50;
    std::vector<Index> hidden = {500, 500};
    Index latent = 100;
};

// Encoder input -> hidden... -> latent (ReLU on hidden, linear latent) and
// the mirrored decoder.
struct Autoencoder {
    nn::Mlp encoder;
    nn::Mlp decoder;

    static Autoencoder build(const AutoencoderShape& shape, std::uint64_t seed);

    MatrixXd encode(const MatrixXd& x) const { return encoder.forward(x); }
    MatrixXd decode(const MatrixXd& z) const { return decoder.forward(z); }
    Index param_count() const { return encoder.param_count() + decoder.param_count(); }
    Index input_dim() const { return encoder.layers.front().in(); }
    Index latent_dim() const { return encoder.layers.back().out(); }
};

// 50-500-500-100 with its mirror; throws if the count is not 652,150.
Autoencoder make_dec_autoencoder(std::uint64_t seed);

struct PretrainConfig {
    int epochs = 200;
    int batch = 64;
    nn::AdamOptions adam{};
};

struct PretrainResult {
    Autoencoder autoencoder;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    std::vector<double> epoch_mse;
};

PretrainResult pretrain_autoencoder(const MatrixXd& x, Autoencoder autoencoder, const PretrainConfig& config,
                                    std::uint64_t seed);
// Builds the canonical network for 50-wide input and pretrains it.
PretrainResult pretrain_autoencoder(const MatrixXd& x, const PretrainConfig& config, std::uint64_t seed);

// Student-t kernel with one degree of freedom, rows normalised.
MatrixXd soft_assign(const MatrixXd& z, const MatrixXd& centers);

// p_ij proportional to q_ij^2 / f_j with f_j = sum_i q_ij.
MatrixXd target_distribution(const MatrixXd& q);

std::vector<int> argmax_rows(const MatrixXd& m);

struct DecConfig {
    int n_clusters = 3;
    PretrainConfig pretrain{};
    int batch = 256;
    int update_interval = 140;
    double tolerance = 0.001;
    int max_iterations = 2800;
    double gamma = 0.1;
    nn::SgdMomentumOptions sgd{};
    KmeansOptions kmeans{};
};

DecConfig dec_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DecConfig& config);

struct DecGradients {
    std::vector<nn::DenseGradients> encoder;
    std::vector<nn::DenseGradients> decoder;
    MatrixXd centers;
};

struct DecLoss {
    double reconstruction = 0.0;
    double kld = 0.0;
    double total = 0.0;
};

// MSE(decode(encode(x)), x) + gamma * KL(P || Q) with P held fixed.
DecLoss dec_loss(const Autoencoder& ae, const MatrixXd& centers, const MatrixXd& x, const MatrixXd& p, double gamma,
                 DecGradients* grads);

// Encoder parameters, decoder parameters, then centers; the checkpoint and
// gradient check both rely on this order.
std::vector<nn::ParamView> dec_parameters(Autoencoder& ae, MatrixXd& centers);
std::vector<nn::ParamView> dec_gradient_views(DecGradients& g);

struct DecHistoryRow {
    int iteration = 0;
    double recon_loss = 0.0;
    double kld = 0.0;
    double total = 0.0;
    // Present on iterations that recomputed the target distribution.
    std::optional<double> label_change_fraction;
};

struct DecTrainState {
    int iterations = 0;
    int checks = 0;
    bool converged = false;
    MatrixXd p;
    MatrixXd q;
    std::vector<int> previous_labels;
    double label_change_fraction = 1.0;
    std::vector<DecHistoryRow> history;
};

struct ClusterModel {
    std::string method; // "kmeans" or "dec"
    MatrixXd centers;
    std::vector<int> assignments;
};

struct DecResult {
    ClusterModel model;
    DecTrainState state;
    Autoencoder autoencoder;
    std::vector<int> initial_labels; // K-means on the pretrained latents
    MatrixXd initial_latent;
    MatrixXd final_latent;
};

class DecDivergence : public Error {
public:
    DecDivergence(const std::string& message, std::vector<DecHistoryRow> history)
        : Error(ErrorKind::divergence, message), history_(std::move(history)) {}
    const std::vector<DecHistoryRow>& history() const { return history_; }

private:
    std::vector<DecHistoryRow> history_;
};

// Clustering refinement starting from a pretrained autoencoder.
DecResult dec_train(const MatrixXd& x, Autoencoder autoencoder, std::uint64_t seed, const DecConfig& config);

void write_dec_history(const std::vector<DecHistoryRow>& history, const std::filesystem::path& path);
void write_dec_checkpoint(const DecResult& result, const DecConfig& config, std::uint64_t seed,
                          const std::filesystem::path& path);

} // namespace urgency
