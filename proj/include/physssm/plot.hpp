#pragma once

// Trajectory figures from a prediction dump: one SVG per observation
// dimension (truth, reconstruction, extrapolation, divider at t_n) plus the
// CSV the figures are drawn from.

#include <filesystem>
#include <string>
#include <vector>

#include "physssm/io.hpp"

namespace physssm {

struct PlotSeries {
  int traj = 0;
  std::vector<int> steps;
  std::vector<double> times;
  std::vector<Vector> truth;  // aligned with steps
  std::vector<Vector> pred;   // recon for step < window, extrap afterwards
  int window = 0;             // interpolation length n
  int horizon = 0;            // extrapolation length l
};

/// Collects one trajectory from dump rows. Throws ConfigError when it is absent.
PlotSeries series_from_dump(const std::vector<DumpRow>& rows, int traj);

/// CSV with n + l rows: step, time, segment, truth_*, pred_*.
std::string series_csv(const PlotSeries& s);

/// SVG line plot of one dimension. The dashed divider is omitted when horizon is 0.
std::string series_svg(const PlotSeries& s, int dim, const std::string& title);

/// Writes <stem>.csv and <stem>_x<d>.svg for every dimension; returns the written paths.
std::vector<std::filesystem::path> write_plots(const PlotSeries& s,
                                               const std::filesystem::path& out_dir,
                                               const std::string& stem, bool overwrite);

}  // namespace physssm
