#pragma once

// Training loop and evaluation metrics.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "physssm/io.hpp"
#include "physssm/model.hpp"
#include "physssm/objective.hpp"
#include "physssm/optim.hpp"

namespace physssm {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 8;
  AdamConfig adam{3e-3, 0.9, 0.999, 1e-8, 10.0};
  double beta = 1.0;
  double lambda = 100.0;
  RegMetric metric = RegMetric::Euclidean;
  bool reg_augmented = false;
  bool prior_on_mean = true;
  int window = 160;        // interpolation window n (model input)
  int extrap_horizon = 80; // extrapolation horizon l
  int train_window = 160;  // steps entering the loss
  int eval_every = 5;      // validation period in epochs
  std::vector<std::uint64_t> seeds{0, 1, 2};

  LossOptions loss_options() const;
  void validate() const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  /// Existing dataset directory; empty means generate from `data` in memory.
  std::string data_dir;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;      // mean over the epoch's batches
  double val_extrap_mse = -1.0;  // -1 when not evaluated this epoch
  double seconds = 0.0;
};

struct Metrics {
  double interp_mae = 0.0;
  double interp_mse = 0.0;
  double extrap_mae = 0.0;
  double extrap_mse = 0.0;
};

struct TrainResult {
  PhySSMModel model;  // best checkpoint on validation extrapolation MSE
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_extrap_mse = 0.0;
  double seconds = 0.0;
};

/// Fits a model to data.train. Fully determined by (config, seed).
/// Throws TrainingDiverged on a non-finite loss.
TrainResult train(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed,
                  std::ostream* log = nullptr);

/// MAE/MSE of predictions against references, averaged over dimensions, steps and columns.
/// Both sequences must have equal length and matching shapes.
std::pair<double, double> mae_mse(const std::vector<Matrix>& a, const std::vector<Matrix>& b);

/// Interpolation and extrapolation metrics of one model on a split, against clean observations.
Metrics evaluate_model(const PhySSMModel& model, const IrregularSet& set, double nominal_dt,
                       std::size_t window, std::size_t horizon, Prediction* out = nullptr);

struct MetricsReport {
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  Metrics mean;
  Metrics std;  // population standard deviation over seeds
  double runtime_seconds = 0.0;
};

MetricsReport aggregate(const std::vector<std::uint64_t>& seeds, const std::vector<Metrics>& m,
                        double runtime_seconds);

/// Batch over every trajectory of `set`, using its clean observations as references.
SequenceBatch batch_for(const IrregularSet& set, std::size_t length, double nominal_dt);

}  // namespace physssm
