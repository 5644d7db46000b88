#pragma once

// Multi-seed protocols built on train(): ablation rows, the beta x lambda
// sensitivity grid, regularizer-metric comparison, and the decomposition
// recovery experiment on a synthetic linear system.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "physssm/train.hpp"

namespace physssm {

/// Reads config.data_dir when set, otherwise simulates from config.data.
Dataset dataset_for(const ExperimentConfig& config);

struct SeedRun {
  std::uint64_t seed = 0;
  Metrics test;
  int best_epoch = 0;
  double seconds = 0.0;
};

/// Trains and evaluates one model per seed on data.test. `jobs` > 1 runs seeds
/// on worker threads; every seed's result is independent of scheduling.
MetricsReport run_seeds(const ExperimentConfig& config, const Dataset& data,
                        const std::vector<std::uint64_t>& seeds, int jobs = 1,
                        std::ostream* log = nullptr, std::vector<SeedRun>* runs = nullptr);

struct ExperimentRow {
  std::string name;
  ExperimentConfig config;
  MetricsReport report;
};

/// {full, no-unit, no-reg}: each ablation differs from `config` in exactly one field.
std::vector<ExperimentRow> ablation_configs(const ExperimentConfig& config);
std::vector<ExperimentRow> run_ablation(const ExperimentConfig& config, const Dataset& data,
                                        int jobs = 1, std::ostream* log = nullptr);

struct SensitivityCell {
  double beta = 0.0;
  double lambda = 0.0;
  MetricsReport report;
};

/// Row-major over beta then lambda, one fixed seed for every cell.
std::vector<SensitivityCell> run_sensitivity(const ExperimentConfig& config, const Dataset& data,
                                             const std::vector<double>& betas,
                                             const std::vector<double>& lambdas,
                                             std::uint64_t seed, int jobs = 1,
                                             std::ostream* log = nullptr);

/// One row per regularizer metric: euclidean, chebyshev, cosine.
std::vector<ExperimentRow> run_metric_comparison(const ExperimentConfig& config,
                                                 const Dataset& data, int jobs = 1,
                                                 std::ostream* log = nullptr);

struct UniquenessOptions {
  int trajectories = 8;
  int steps = 100;
  double dt = 0.05;
  int iterations = 3000;
  double lr = 0.02;
};

struct UniquenessReport {
  Matrix true_A;
  Matrix mask;
  Matrix recovered_A;  // composed known + masked learned, after fitting
  std::vector<double> true_unknown;
  std::vector<double> recovered_unknown;
  double max_abs_error = 0.0;
  bool known_bit_identical = false;
  bool diverged = false;
  std::string error;
  double final_loss = 0.0;
  int iterations = 0;
};

/// The 4-dim system used by the recovery experiment and its unknown-entry mask.
Matrix uniqueness_true_matrix();
Matrix uniqueness_mask();

/// Fits a constant learner to clean one-step transitions of the synthetic
/// system (identity decoder) and compares the unknown entries with the truth.
UniquenessReport uniqueness_recovery_test(std::uint64_t seed, const UniquenessOptions& options = {});

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json report_to_json(const MetricsReport& r);
nlohmann::json uniqueness_to_json(const UniquenessReport& r);

/// Fixed-width text table with mean +- std per metric.
std::string format_rows(const std::vector<ExperimentRow>& rows);
std::string format_grid(const std::vector<SensitivityCell>& cells);

}  // namespace physssm
