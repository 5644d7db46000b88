#pragma once

// INI experiment configuration: [experiment], [data], [model], [train] sections
// of `key = value` lines. Every key is listed in docs/FORMATS.md.

#include <filesystem>
#include <string>
#include <vector>

#include "physssm/train.hpp"

namespace physssm {

/// Desk-scale defaults for a system ("pendulum" or "sir").
ExperimentConfig default_config(const std::string& system = "pendulum");

ExperimentConfig parse_config(const std::string& ini_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets one key given as "section.key". Throws ConfigError for unknown keys or bad values.
void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);
/// Parses "section.key=value".
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Canonical INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

std::vector<double> parse_double_list(const std::string& s);
std::vector<std::uint64_t> parse_seed_list(const std::string& s);

}  // namespace physssm
