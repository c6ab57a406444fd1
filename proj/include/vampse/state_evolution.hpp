#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "vampse/denoisers.hpp"
#include "vampse/operators.hpp"
#include "vampse/vamp.hpp"

namespace vampse {

// One step of the deterministic MSE forecast. tau are the error variances of
// the partial-estimate errors, ebar = gbar/abar, and mse_i = 1/ebar_i is the
// predicted per-iteration MSE of xhat_i.
struct SeState {
  int k = 0;
  double tau1 = 0, tau2 = 0;
  double gbar1 = 0, gbar2 = 0;
  double abar1 = 0, abar2 = 0;
  double ebar1 = 0, ebar2 = 0;
  double mse1 = 0, mse2 = 0;
  double e1_stderr = 0, a1_stderr = 0;
  bool degenerate = false;  // abar escaped (0,1); trajectory truncated after
};

// closed-form LMMSE error function, summing over all N zero-padded entries:
// (1/N) sum (gamma_w^2 s_i^2 / gamma_w0 + gamma2^2 tau2) / (gamma_w s_i^2 + gamma2)^2
double lmmse_error_E2(double gamma2, double tau2, const Spectrum& spectrum,
                      double gamma_w, double gamma_w0);

// (1/N) sum gamma2 / (gamma_w s_i^2 + gamma2); in (0,1], 1 iff all s_i = 0
double lmmse_sensitivity_A2(double gamma2, const Spectrum& spectrum, double gamma_w);

// Monte Carlo denoiser error/sensitivity under r = x0 + N(0, tau1 I). One
// fixed x0 with `trials` independent noise draws; both moments come from the
// same draws so paired uses stay consistent.
struct SeMoments {
  double e1 = 0, a1 = 0;
  double e1_stderr = 0, a1_stderr = 0;
};
SeMoments denoiser_se_moments(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                              double gamma1, double tau1, int trials,
                              std::uint64_t seed);
SeMoments denoiser_error_E1(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                            double gamma1, double tau1, int trials,
                            std::uint64_t seed);
SeMoments denoiser_sensitivity_A1(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                                  double gamma1, double tau1, int trials,
                                  std::uint64_t seed);

// the SE recursion: MC moments for the denoiser half, closed forms for the
// LMMSE half; truncates with degenerate=true if abar leaves (0,1)
std::vector<SeState> se_run(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                            const Spectrum& spectrum, double gamma_w,
                            double gamma_w0, double tau10, double gbar10,
                            int iterations, int mc_trials, std::uint64_t seed);

void write_se_csv(std::ostream& out, const std::vector<SeState>& traj);

// per-iteration Gaussianity report for the error vectors p_k = r1k - x0 and
// q_k = V^T (r2k - x0); var is the raw second moment, kurt the excess
// kurtosis, jb the Jarque-Bera statistic
struct GaussianityRow {
  int k = 0;
  double var_p = 0, tau1 = 0, kurt_p = 0, skew_p = 0, jb_p = 0;
  double var_q = 0, tau2 = 0, kurt_q = 0, skew_q = 0, jb_q = 0;
};
std::vector<GaussianityRow> gaussianity_diagnostics(
    const VampTrajectory& traj, const ProblemInstance& instance,
    const std::vector<SeState>& se);

// ---------------- generalized recursion ----------------

// the two-map recursion driven by a Haar orthogonal V:
//   p_k = V u_k
//   alpha1 = <grad f_p(p_k, gamma1)>, gamma2 = Gamma1(gamma1, alpha1)
//   v_k = C1(alpha1) [f_p(p_k, gamma1) - alpha1 p_k]
//   q_k = V^T v_k
//   alpha2 = <grad f_q(q_k, gamma2)>, gamma1' = Gamma2(gamma2, alpha2)
//   u_{k+1} = C2(alpha2) [f_q(q_k, gamma2) - alpha2 q_k]
// Disturbances (w^p, w^q) are captured inside the handles; divergence handles
// receive the iteration index so probe-based estimators can derive seeds.
struct GenRecursionSpec {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> fp, fq;
  std::function<double(const Eigen::VectorXd&, double, int)> fp_divergence, fq_divergence;
  std::function<double(double, double)> gamma1_update, gamma2_update;  // Gamma_1, Gamma_2
  std::function<double(double)> c1, c2;
  Eigen::VectorXd u0;
  double gamma10 = 0.0;
  MapPtr v_map;
};

struct GenIterate {
  int k = 0;
  Eigen::VectorXd p, v, q, u_next;
  double gamma1 = 0, alpha1 = 0, gamma2 = 0, alpha2 = 0, gamma1_next = 0;
};

std::vector<GenIterate> general_recursion_run(const GenRecursionSpec& spec,
                                              int iterations);

// SE equations at the generalized level; moment/sensitivity handles receive
// the iteration index for the same seeding reason
struct GenSeFunctions {
  std::function<double(double, double, int)> mp, ap;  // (tau1, gamma1, k)
  std::function<double(double, double, int)> mq, aq;  // (tau2, gamma2, k)
  std::function<double(double, double)> gamma1_update, gamma2_update;
  std::function<double(double)> c1, c2;
};

struct GenSeState {
  int k = 0;
  double tau1 = 0, gbar1 = 0, abar1 = 0;
  double tau2 = 0, gbar2 = 0, abar2 = 0;
};

std::vector<GenSeState> general_se_run(const GenSeFunctions& funcs, double tau10,
                                       double gbar10, int iterations);

// instantiation that reproduces vamp_run's error vectors exactly:
// f_p(p, gamma1) = g1(p + x0, gamma1) - x0,
// f_q(q, gamma2) = (gamma_w s xi + gamma2 q) / (gamma_w s^2 + gamma2),
// C_i(a) = 1/(1-a), Gamma_i(g, a) = g (1/a - 1), with xi = U^T w zero-padded
GenRecursionSpec vamp_general_recursion(const ProblemInstance& instance,
                                        const Denoiser& denoiser,
                                        const VampConfig& config);

// instantiation whose general_se_run output reproduces se_run
GenSeFunctions vamp_general_se(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                               const Spectrum& spectrum, double gamma_w,
                               double gamma_w0, int mc_trials, std::uint64_t seed);

}  // namespace vampse
