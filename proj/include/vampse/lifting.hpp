#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "vampse/denoisers.hpp"
#include "vampse/operators.hpp"
#include "vampse/vamp.hpp"

namespace vampse {

// Bilinear problem y = (sum_l b_l Phi_l) c + w lifted to the linear model
// y = A x + w with A = [Phi_1 ... Phi_L] and x = vec(c b^T) in R^{LP}.
struct LiftedInstance {
  int subspace_dim = 0;  // L
  int factor_len = 0;    // P
  int rows = 0;          // M
  int sparsity = 0;      // K nonzeros in c
  std::vector<Eigen::MatrixXd> phis;
  Eigen::VectorXd b0, c0;
  Eigen::VectorXd x0;  // vec(c0 b0^T)
  Eigen::MatrixXd a_dense;
  Eigen::VectorXd y;
  double gamma_w0 = 0.0;  // +inf = noiseless
  double snr_db = 0.0;
  std::vector<std::pair<int, double>> b_clamps;  // known entries of b
};

// horizontal concatenation [Phi_1 ... Phi_L]; all blocks share M x P
Eigen::MatrixXd build_lifted_matrix(const std::vector<Eigen::MatrixXd>& phis);

enum class CsmuOperatorStyle { IidGaussian, HaarGeometric };

// CS with matrix uncertainty: b_1 pinned to b1_known, {b_l}_{l>=2} i.i.d.
// N(0,1), c K-sparse with N(0,1) nonzeros
LiftedInstance make_csmu_instance(int subspace_dim, int factor_len, int sparsity,
                                  int rows, double b1_known,
                                  CsmuOperatorStyle style, double cond,
                                  double snr_db, std::uint64_t seed);

// self-calibration y = Diag(H b) Psi c: Psi i.i.d. N(0,1), b i.i.d. N(0,1),
// c K-sparse, H from L randomly chosen columns of an M x M Hadamard matrix,
// noiseless; Phi_l = Diag(h_l) Psi
LiftedInstance make_selfcal_instance(int subspace_dim, int factor_len,
                                     int sparsity, int rows, std::uint64_t seed);

struct RecoveryScore {
  double nmse_b_db = 0.0;
  double nmse_c_db = 0.0;
  double nmse_outer_db = 0.0;
  bool success = false;  // nmse_outer < -60 dB
};

// Extracts (b, c) as the leading singular pair of the P x L reshape, aligns
// scale/sign to the truth by least squares for the factor NMSEs; the outer
// NMSE needs no alignment. Exact ratios of 0 report the -300 dB floor.
RecoveryScore score_recovery(const Eigen::VectorXd& xhat,
                             const LiftedInstance& instance);

// the lifted linear problem as a VAMP instance (SVD computed once)
ProblemInstance to_problem_instance(const LiftedInstance& instance, double gamma_w);

// matching rank-one denoiser: rho = K/P, unit active variance, clamps applied
std::shared_ptr<LiftedRankOneDenoiser> make_lifted_denoiser(
    const LiftedInstance& instance, int inner_iters = 8);

}  // namespace vampse
