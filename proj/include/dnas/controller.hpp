#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dnas/archspace.hpp"
#include "dnas/nn/param_store.hpp"
#include "dnas/nn/tensor.hpp"

namespace dnas {

using nn::MatrixXd;
using nn::VectorXd;

struct ControllerConfig {
  int hidden_size = 26;  // encoder/decoder LSTM width; also the latent size
  int latent_dim = 26;
  int acc_hidden = 64;   // acc predictor widths: latent -> acc_hidden -> 1
  int decoder_layers = 1;
  // Loss weights: alpha * L_acc + lambda * L_flops + mu * L_rec + beta * L_kl.
  double alpha = 0.8;
  double lambda = 0.3;
  double mu = 0.2;
  double beta = 1.0;
  double learning_rate = 1e-3;
  int epochs = 1000;
  int batch_size = 32;

  // The large configuration (hidden 46).
  static ControllerConfig large();
  void validate() const;
};

nlohmann::json to_json(const ControllerConfig& cfg);
ControllerConfig controller_config_from_json(const nlohmann::json& j);

struct LatentCode {
  VectorXd mean;
  VectorXd logvar;
  VectorXd sample;

  // A code that is exactly the point z (sample = mean = z, logvar = -inf).
  static LatentCode point(const VectorXd& z);
};

struct TrainingExample {
  TokenSequence tokens;
  double accuracy = 0.0;
  double flops = 0.0;  // raw multiply-adds
};

// Affine map between raw FLOPS and the zero-mean unit-variance training
// targets of the FLOPS predictor.
struct FlopsNormalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static FlopsNormalizer fit(std::span<const TrainingExample> data);
  double to_normalized(double raw) const { return (raw - mean) / stddev; }
  double to_raw(double normalized) const { return normalized * stddev + mean; }
};

struct LossBreakdown {
  double total = 0.0;
  double acc = 0.0;    // sum of squared errors
  double flops = 0.0;  // sum of squared errors on normalized targets
  double rec = 0.0;    // token cross-entropy summed over positions and batch
  double kl = 0.0;     // sum over batch of KL / latent_dim
};

class Controller {
 public:
  Controller(ControllerConfig cfg, std::uint64_t init_seed);

  const ControllerConfig& config() const { return cfg_; }
  nn::ParamStore<double>& params() { return params_; }
  const nn::ParamStore<double>& params() const { return params_; }
  const FlopsNormalizer& flops_normalizer() const { return flops_norm_; }
  void set_flops_normalizer(FlopsNormalizer n) { flops_norm_ = n; }
  int latent_dim() const { return cfg_.latent_dim; }

  // Posterior of a sequence; sample drawn with the given seed.
  LatentCode encode(const TokenSequence& tokens, std::uint64_t seed) const;
  // Posterior means, one column per sequence (latent_dim x n).
  MatrixXd encode_means(std::span<const TokenSequence> tokens) const;

  // Inference-path predictions evaluate the heads at z.mean.
  double predict_acc(const LatentCode& z) const;
  double predict_flops(const LatentCode& z) const;  // normalized units
  double predict_flops_raw(const LatentCode& z) const {
    return flops_norm_.to_raw(predict_flops(z));
  }
  // Head outputs for a batch of latent points (columns).
  VectorXd predict_acc_batch(const MatrixXd& z) const;
  VectorXd predict_flops_batch(const MatrixXd& z) const;  // normalized units

  // d f_acc / dz and d f_flops / dz (normalized units) at the point z.
  VectorXd acc_gradient(const VectorXd& z) const;
  VectorXd flops_gradient(const VectorXd& z) const;

  // Greedy decoding from z.sample.
  TokenSequence decode(const LatentCode& z) const;
  std::vector<TokenSequence> decode_batch(const MatrixXd& z) const;

  // Weighted total loss on a batch with teacher forcing. Gradients are accumulated into
  // params() when accumulate_grads is set. FLOPS targets are normalized with
  // the current normalizer.
  LossBreakdown total_loss(std::span<const TrainingExample> batch, std::uint64_t noise_seed,
                           bool accumulate_grads);

 private:
  ControllerConfig cfg_;
  nn::ParamStore<double> params_;
  FlopsNormalizer flops_norm_;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // summed total loss per epoch
  LossBreakdown last;              // components summed over the final epoch
};

// Shuffled mini-batch Adam on an existing controller (warm start). Resets
// the FLOPS normalizer to the dataset.
TrainHistory fit(Controller& controller, std::span<const TrainingExample> data, int epochs,
                 std::uint64_t seed);

struct TrainedController {
  Controller controller;
  TrainHistory history;
};

// Fresh initialization followed by cfg.epochs of fit().
TrainedController train(std::span<const TrainingExample> data, const ControllerConfig& cfg,
                        std::uint64_t seed);

TrainingExample make_example(const CellGraph& cell, double accuracy, double flops);

// Checkpoint = nn checkpoint at <stem>.json/.bin plus <stem>.config.json
// holding the controller config and FLOPS normalizer.
void save_controller(const Controller& c, const std::filesystem::path& stem);
Controller load_controller(const std::filesystem::path& stem);

}  // namespace dnas
