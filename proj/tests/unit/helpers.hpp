#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "physssm/config.hpp"
#include "physssm/model.hpp"
#include "physssm/train.hpp"

namespace physssm::testing {

/// Pendulum experiment small enough to train in about a second.
inline ExperimentConfig tiny_config(const std::string& system = "pendulum") {
  ExperimentConfig c = default_config(system);
  c.name = "tiny";
  c.data.n_train = 4;
  c.data.n_val = 2;
  c.data.n_test = 2;
  c.data.horizon = 60;
  c.model.prenet_hidden = 8;
  c.model.encoder.width = 8;
  c.model.encoder.state_size = 8;
  c.model.learner.stack_A.width = 8;
  c.model.learner.stack_A.state_size = 8;
  c.model.learner.stack_B.width = 8;
  c.model.learner.stack_B.state_size = 8;
  c.model.decoder_hidden = 8;
  c.train.epochs = 3;
  c.train.batch_size = 4;
  c.train.window = 30;
  c.train.extrap_horizon = 10;
  c.train.train_window = 30;
  c.train.eval_every = 1;
  c.train.seeds = {0};
  return c;
}

/// Model config matching tiny_config for a given system and observation size.
inline ModelConfig tiny_model(const std::string& system, int obs_dim) {
  ModelConfig m = tiny_config(system == "linear4" ? "pendulum" : system).model;
  m.system = system;
  m.obs_dim = obs_dim;
  return m;
}

/// Irregularly sampled smooth trajectories with random observations of size dx.
inline std::vector<Trajectory> random_trajectories(int count, int steps, int dx, int du,
                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap(0.03, 0.08), phase(0.0, 6.283185307179586);
  std::vector<Trajectory> out;
  for (int k = 0; k < count; ++k) {
    Trajectory tr;
    double t = 0.0;
    const double ph = phase(rng);
    for (int i = 0; i < steps; ++i) {
      if (i) t += gap(rng);
      tr.times.push_back(t);
      Vector x(dx);
      for (int d = 0; d < dx; ++d) x(d) = std::sin(1.3 * t + ph + d);
      tr.observations.push_back(x);
      tr.states.push_back(x);
      tr.controls.push_back(Vector::Constant(du, std::cos(0.7 * t)));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

inline SequenceBatch batch_of(const std::vector<Trajectory>& trs, std::size_t length,
                              double nominal_dt = 0.05) {
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trs) ptrs.push_back(&t);
  return make_batch(ptrs, length, nominal_dt);
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace physssm::testing
