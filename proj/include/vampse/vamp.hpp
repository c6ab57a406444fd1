#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vampse/denoisers.hpp"
#include "vampse/operators.hpp"

namespace vampse {

// y = A x0 + N(0, I/gamma_w0); gamma_w0 = +inf means noiseless.
// gamma_w is the postulated noise precision used by the LMMSE stage.
struct ProblemInstance {
  Eigen::VectorXd x0;
  SpectralOperator op;
  Eigen::VectorXd y;
  double gamma_w0 = 0.0;
  double gamma_w = 0.0;
};

enum class VampInit { ZeroR, Adjoint, SeOracle, Custom };

struct VampConfig {
  int iterations = 20;
  double gamma_min = 1e-11;
  double gamma_max = 1e11;
  VampInit init = VampInit::ZeroR;
  double gamma10 = 1e-6;
  double tau10 = 1.0;          // SeOracle: r10 = x0 + N(0, tau10 I)
  std::uint64_t init_seed = 0;
  Eigen::VectorXd r1_custom;
  std::uint64_t divergence_seed = 0;  // per-iteration seeds derived by counter
  double damping = 0.0;               // 0 = off (the algorithm has none)
};

struct VampState {
  int k = 0;
  Eigen::VectorXd r1, xhat1, r2, xhat2;
  double gamma1 = 0, alpha1 = 0, eta1 = 0;
  double gamma2 = 0, alpha2 = 0, eta2 = 0;
  double mse1 = 0, mse2 = 0;
  bool clamped = false;     // a gamma clamp engaged this iteration
  bool degenerate = false;  // alpha escaped (eps, 1-eps)
};

struct VampTrajectory {
  std::vector<VampState> states;
  Eigen::VectorXd xhat_final;
};

// U^T y, computed once per run so the diagonal solve is O(N) per call
struct LmmseWorkspace {
  Eigen::VectorXd ytilde;
};
LmmseWorkspace make_lmmse_workspace(const ProblemInstance& instance);

// xhat2 = (gamma_w A^T A + gamma2 I)^{-1} (gamma_w A^T y + gamma2 r2) via the
// SVD diagonalization; alpha2 = (1/N) sum gamma2 / (gamma_w s_i^2 + gamma2).
std::pair<Eigen::VectorXd, double> lmmse_estimate(const Eigen::VectorXd& r2,
                                                  double gamma2,
                                                  const ProblemInstance& instance,
                                                  const LmmseWorkspace& ws);
std::pair<Eigen::VectorXd, double> lmmse_estimate(const Eigen::VectorXd& r2,
                                                  double gamma2,
                                                  const ProblemInstance& instance);

// initial r1 per config; shared with the general-recursion instantiation
Eigen::VectorXd initial_r1(const ProblemInstance& instance, const VampConfig& config);

VampTrajectory vamp_run(const ProblemInstance& instance, const Denoiser& denoiser,
                        const VampConfig& config);

struct SignalSpec {
  enum class Kind { BernoulliGaussian, GroupRows, StationaryAr, ImageFile, CustomVector };
  Kind kind = Kind::BernoulliGaussian;
  double rho = 0.1;      // BG sparsity
  double sigma2 = 1.0;   // BG active variance
  int group_size = 4;    // GroupRows: K
  double group_rho = 0.1;
  double ar_coeff = 0.9;  // StationaryAr
  std::string image_path;
  Eigen::VectorXd custom;
};

Eigen::VectorXd draw_signal(const SignalSpec& spec, int n, std::uint64_t seed);

ProblemInstance make_instance(const SignalSpec& spec, const SpectralOperator& op,
                              double gamma_w0, double gamma_w, std::uint64_t seed);

// gamma_w0 with 10 log10(|A x0|^2 / E|w|^2) = snr_db, E|w|^2 = M/gamma_w0
double gamma_w0_for_snr(const SpectralOperator& op, const Eigen::VectorXd& x0,
                        double snr_db);

void write_trajectory_csv(std::ostream& out, const VampTrajectory& traj);

}  // namespace vampse
