#pragma once

// On-disk formats: dataset directories, model checkpoints, prediction dumps.
// docs/FORMATS.md describes each layout.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "physssm/dynamics.hpp"
#include "physssm/model.hpp"

namespace physssm {

namespace fs = std::filesystem;

struct DataConfig {
  std::string system = "pendulum";
  int n_train = 64;
  int n_val = 8;
  int n_test = 16;
  int horizon = 300;
  double dt = 0.05;
  double noise_sigma = 0.3;
  double drop_rate = 0.2;
  std::uint64_t seed = 7;
  ParamSampler sampler;
  /// z-score observations with training-split statistics (SIR); pendulum stays raw.
  bool normalize = false;

  void validate() const;
};

struct Dataset {
  DataConfig config;
  Normalization normalization;
  IrregularSet train;
  IrregularSet val;
  IrregularSet test;

  int obs_dim() const;
  int control_dim() const;
  int state_dim() const;
};

/// Simulates, normalizes and corrupts all three splits. Deterministic in config.seed.
Dataset build_dataset(const DataConfig& config);

/// Writes manifest.json and one CSV per split. Refuses to replace files unless overwrite.
void write_dataset(const Dataset& data, const fs::path& dir, bool overwrite);
Dataset read_dataset(const fs::path& dir);

nlohmann::json data_config_to_json(const DataConfig& c);
DataConfig data_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Text checkpoint: header, model config, then every parameter tensor in hex-float.
void save_checkpoint(const PhySSMModel& model, const fs::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
PhySSMModel load_checkpoint(const fs::path& path, nlohmann::json* meta = nullptr);

/// Long-format prediction dump: traj, source (truth|recon|extrap), step, time, x...
void write_prediction_dump(const fs::path& path, const IrregularSet& set,
                           const Prediction& prediction, std::size_t window, std::size_t horizon);

struct DumpRow {
  int traj = 0;
  std::string source;
  int step = 0;
  double time = 0.0;
  Vector x;
};
std::vector<DumpRow> read_prediction_dump(const fs::path& path);

/// Throws ConfigError when `path` exists and overwrite is false.
void ensure_writable(const fs::path& path, bool overwrite);
void write_text_file(const fs::path& path, const std::string& content);
std::string read_text_file(const fs::path& path);

/// FNV-1a 64-bit hash in hex.
std::string hash_hex(const std::string& s);

}  // namespace physssm
