#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "vampse/denoisers.hpp"
#include "vampse/vamp.hpp"

namespace vampse {

struct AmpState {
  int k = 0;
  Eigen::VectorXd xhat;     // current estimate
  Eigen::VectorXd v;        // corrected residual
  Eigen::VectorXd r;        // pseudo-data fed to the denoiser
  Eigen::VectorXd onsager;  // (N/M) <grad g> v_{k-1}
  double gamma = 0.0;       // M / |v_{k-1}|^2 after the first iteration
  double divergence = 0.0;
  double mse = 0.0;
  bool diverged = false;
};

struct AmpTrajectory {
  std::vector<AmpState> states;
  Eigen::VectorXd xhat_final;
  bool diverged = false;
};

// AMP baseline, initialized with r0 = A^T y, gamma0 = M/|y|^2, v_{-1} = 0.
// Expects the operator scaled so sum s_i^2 = N. The diverged flag raises when
// the MSE exceeds 1e3 x the initial MSE for 3 consecutive iterations; a
// non-finite state flags and halts the run gracefully. with_onsager=false
// drops the memory term (plain iterative thresholding, used as a structural
// regression check).
AmpTrajectory amp_run(const ProblemInstance& instance, const Denoiser& denoiser,
                      int iterations, std::uint64_t divergence_seed = 0,
                      bool with_onsager = true);

void write_amp_trajectory_csv(std::ostream& out, const AmpTrajectory& traj);

}  // namespace vampse
