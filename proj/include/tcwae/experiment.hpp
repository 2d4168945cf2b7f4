#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcwae/metrics.hpp"
#include "tcwae/training.hpp"

namespace tcwae {

/// Invalid or incomplete experiment configuration; names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DatasetConfig {
  FactorSpec spec = FactorSpec::desk();
  std::size_t resolution = 64;
  std::uint64_t seed = 0;
  bool noise_background = false;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TrainConfig train;  ///< train.seed is ignored; seeds lists every run
  DatasetConfig dataset;
  std::vector<std::uint64_t> seeds;
  std::vector<double> sweep_beta;
  std::vector<double> sweep_gamma;
  std::string output_dir = "runs";

  /// objective, the hyperparameters it uses and seeds are required; other
  /// fields default to the desk setup.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

FactorDataset build_dataset(const DatasetConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

/// Canonical description of one training run: everything that determines
/// its outputs and nothing else.
nlohmann::json run_identity(const ExperimentConfig& cfg, std::uint64_t seed);
std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed);

/// TCWAE_OUT if set, else the configured output directory.
std::filesystem::path output_root(const ExperimentConfig& cfg);

struct RunOptions {
  /// Reuse a completed run whose manifest carries the same hash and version.
  bool resume = false;
  std::ostream* progress = nullptr;
  std::size_t progress_every = 500;
};

/// Trains one seed into dir: config.json, manifest.json, timestamps.json,
/// loss_log.csv, final.tcwl and periodic checkpoints.
void train_run(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
               const RunOptions& opts = {});

/// One run directory per seed under output_root/name.
std::vector<std::filesystem::path> cmd_train(const std::filesystem::path& config_path,
                                             const RunOptions& opts = {});

/// Latent means and reconstructions of a model, decoupled from checkpoints.
struct ModelHandle {
  EncoderFn encode_means;
  AutoencoderFn reconstruct;
};

ModelHandle load_model_handle(const std::filesystem::path& run_dir, const FactorDataset& ds);

/// Scores a model; metric randomness comes from rng.
ScoreReport score_model(const ModelHandle& model, const FactorDataset& ds, Rng rng);

inline constexpr const char* kScoreHeader = "model,objective,beta,gamma,seed,mse,mig,factor_vae,sap";

struct EvalResult {
  ScoreReport scores;
  std::string row;
};

/// Scores a run without writing anything.
EvalResult evaluate_run(const std::filesystem::path& run_dir);

/// evaluate_run, then appends the row to run_dir/scores.csv.
EvalResult cmd_eval(const std::filesystem::path& run_dir);

struct TraverseOptions {
  std::size_t steps = 8;
  double lo = -4.0;
  double hi = 4.0;
  std::size_t rows = 4;
};

/// Per-dimension mean KL of the posteriors to the prior over a set of latents.
std::vector<double> per_dimension_kl(const Matrix& means, const Matrix& log_vars);

/// Dimensions ordered by increasing KL; ties keep index order.
std::vector<std::size_t> kl_order(const std::vector<double>& kl);

/// Writes one PGM/PPM grid per latent dimension plus traverse_order.csv
/// into run_dir/traversals; returns the image paths in KL order.
std::vector<std::filesystem::path> cmd_traverse(const std::filesystem::path& run_dir,
                                                const TraverseOptions& opts = {});

/// Writes HWC pixels in [0, 1] as binary PGM (one channel) or PPM (three).
void write_netpbm(const std::filesystem::path& path, std::span<const double> pixels,
                  std::size_t height, std::size_t width, std::size_t channels);

struct SweepCell {
  double beta = 0.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  ScoreReport scores;
  LossBreakdown final_loss;
};

struct SweepResult {
  std::filesystem::path dir;
  std::vector<SweepCell> cells;
};

/// Train and eval for every (beta, gamma, seed); failures are recorded per
/// cell. Writes sweep.csv, sweep_summary.csv and heatmap_<metric>.csv.
SweepResult cmd_sweep(const std::filesystem::path& config_path, std::size_t workers = 1,
                      const RunOptions& opts = {});

struct GradcheckSummary {
  std::vector<BlockReport> blocks;
  std::filesystem::path report;
  bool passed = false;
};

/// finite_difference_report for every objective on the 8x8 and 16x16
/// reduced specs, written to out_dir/gradcheck.csv.
GradcheckSummary cmd_gradcheck(const std::filesystem::path& out_dir, double corrupt_gradient = 0.0);

}  // namespace tcwae
