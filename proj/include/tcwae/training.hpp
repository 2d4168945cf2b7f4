#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tcwae/datasets.hpp"
#include "tcwae/network.hpp"
#include "tcwae/objectives.hpp"

namespace tcwae {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 8e-4;

  void validate() const;
  /// Encoder/decoder optimizer.
  static AdamConfig model_default() { return {}; }
  /// Discriminator optimizer: lr 1e-4, beta1 0.5, beta2 0.9, epsilon 1e-8.
  static AdamConfig discriminator_default() { return {1e-4, 0.5, 0.9, 1e-8}; }

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  ParamMap<T> m;
  ParamMap<T> v;
};

/// One Adam update with bias correction. Moments are created on the first
/// call; key sets of params, grads and state must otherwise agree.
template <typename T>
void adam_step(ParamMap<T>& params, const ParamMap<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

/// Objective plus architecture: everything loss_and_gradients needs besides data.
struct ModelConfig {
  ObjectiveSettings objective;
  Architecture arch;
};

template <typename T>
struct ModelGradients {
  ParamMap<T> encoder;
  ParamMap<T> decoder;
};

/// Encoder outputs split into posterior parameters.
struct Posteriors {
  Matrix means;
  Matrix log_vars;     ///< clamped
  Matrix raw_log_vars; ///< before clamping
};

template <typename T>
Posteriors encode(const Architecture& arch, const ModelParams<T>& params, const Matrix& images);

/// Decoder output in pixel space: sigmoid for deterministic decoders, else
/// the Bernoulli mean sigmoid(logits).
template <typename T>
Matrix decode_pixels(const Architecture& arch, const ModelParams<T>& params, const Matrix& codes);

/// Raw decoder output (pre-sigmoid).
template <typename T>
Matrix decode_raw(const Architecture& arch, const ModelParams<T>& params, const Matrix& codes);

/// Autoencoder loss on a minibatch with exact gradients for encoder and
/// decoder parameters (pathwise through the reparameterised sample; GAN
/// objectives backpropagate through the frozen discriminator). Draws the
/// reparameterisation noise and then, for WAE-MMD, the prior samples from rng.
/// Throws std::runtime_error naming the first non-finite loss term.
template <typename T>
LossBreakdown loss_and_gradients(const ModelConfig& cfg, const ModelParams<T>& params,
                                 const Matrix& images, Rng& rng, ModelGradients<T>* grads);

/// Discriminator loss on (codes, permute_dims(codes)) for a minibatch, with
/// gradients for the discriminator parameters. Codes are detached: the
/// encoder receives no gradient.
template <typename T>
double discriminator_loss_and_gradients(const ModelConfig& cfg, const ModelParams<T>& params,
                                        const Matrix& images, Rng& rng, ParamMap<T>* grads);

struct LogEntry {
  std::size_t iter = 0;
  LossBreakdown loss;
  double disc_loss = 0.0;
};

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::tcwae_mws;
  HyperParams hp;
  std::string architecture = "desk";
  std::size_t latent_dim = 10;
  std::size_t batch_size = 100;
  std::size_t iterations = 1;
  std::uint64_t seed = 0;
  AdamConfig adam = AdamConfig::model_default();
  AdamConfig disc_adam = AdamConfig::discriminator_default();
  /// N in the MWS estimator; 0 means the dataset size.
  std::size_t dataset_size = 0;
  /// Keep a parameter snapshot every this many iterations; 0 disables.
  std::size_t checkpoint_every = 0;

  void validate() const;
};

struct Checkpoint {
  std::size_t iter = 0;
  ModelParams<float> params;
};

struct TrainingRun {
  ModelParams<float> params;
  std::vector<LogEntry> log;
  std::vector<Checkpoint> checkpoints;
};

/// Model configuration implied by a training configuration and dataset.
ModelConfig model_config(const TrainConfig& cfg, const FactorDataset& ds);

/// Called after every iteration; returning false stops training early.
using TrainObserver = std::function<bool(const LogEntry&)>;

/// Trains at single precision. GAN-family objectives draw two disjoint
/// minibatches per iteration: the first updates encoder and decoder against
/// the frozen discriminator, the second updates the discriminator.
TrainingRun train(const TrainConfig& cfg, const FactorDataset& ds,
                  const TrainObserver& observer = {});

/// Throws unless params hold exactly the tensors the architecture names.
void check_model(const Architecture& arch, const ModelParams<float>& params);

/// Checkpoint file: "TCWL", u32 version, then (u32 name length, name, u32
/// rank, u64 dims, f64 data) records, all little-endian.
void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

void write_loss_log(const std::vector<LogEntry>& log, const std::filesystem::path& path);

struct BlockReport {
  std::string objective;
  std::string block;  ///< e.g. "encoder/conv0.weight"
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  std::size_t resolution = 8;
  std::size_t channels = 1;
  std::size_t latent_dim = 3;
  std::size_t batch_size = 4;
  double step = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  /// Test hook: perturbs the analytic gradient of every block before comparison.
  double corrupt_gradient = 0.0;
};

/// Central-difference check of every parameter block of the reduced spec
/// at double precision. GAN objectives also check the discriminator loss.
std::vector<BlockReport> finite_difference_report(ObjectiveKind kind, const HyperParams& hp,
                                                  const GradcheckOptions& opts = {});

}  // namespace tcwae
