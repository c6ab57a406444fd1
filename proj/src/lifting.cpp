#include "vampse/lifting.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vampse/rng.hpp"

namespace vampse {

namespace {

double db_floor(double ratio) {
  if (ratio <= 0.0) return -300.0;
  return std::max(-300.0, 10.0 * std::log10(ratio));
}

Eigen::VectorXd sparse_vector(int len, int nnz, Rng& rng) {
  // uniform support via partial Fisher-Yates, N(0,1) nonzeros
  std::vector<int> idx(len);
  for (int i = 0; i < len; ++i) idx[i] = i;
  for (int i = 0; i < nnz; ++i) std::swap(idx[i], idx[i + rng.uniform_int(len - i)]);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(len);
  for (int i = 0; i < nnz; ++i) c[idx[i]] = rng.normal();
  return c;
}

void add_noise_for_snr(LiftedInstance& inst, double snr_db, std::uint64_t seed) {
  inst.snr_db = snr_db;
  const double signal = inst.y.squaredNorm();
  inst.gamma_w0 = inst.rows * std::pow(10.0, snr_db / 10.0) / signal;
  Rng rng(derive_seed(seed, 0x90153));
  const double sd = 1.0 / std::sqrt(inst.gamma_w0);
  for (int i = 0; i < inst.rows; ++i) inst.y[i] += sd * rng.normal();
}

}  // namespace

Eigen::MatrixXd build_lifted_matrix(const std::vector<Eigen::MatrixXd>& phis) {
  if (phis.empty()) throw std::invalid_argument("build_lifted_matrix: no blocks");
  const Eigen::Index m = phis[0].rows();
  const Eigen::Index p = phis[0].cols();
  for (const auto& phi : phis)
    if (phi.rows() != m || phi.cols() != p)
      throw std::invalid_argument("build_lifted_matrix: block shape mismatch");
  Eigen::MatrixXd a(m, p * static_cast<Eigen::Index>(phis.size()));
  for (size_t l = 0; l < phis.size(); ++l)
    a.middleCols(static_cast<Eigen::Index>(l) * p, p) = phis[l];
  return a;
}

LiftedInstance make_csmu_instance(int subspace_dim, int factor_len, int sparsity,
                                  int rows, double b1_known,
                                  CsmuOperatorStyle style, double cond,
                                  double snr_db, std::uint64_t seed) {
  if (sparsity > factor_len || rows > subspace_dim * factor_len || subspace_dim < 1)
    throw std::invalid_argument("make_csmu_instance: invalid dims");
  LiftedInstance inst;
  inst.subspace_dim = subspace_dim;
  inst.factor_len = factor_len;
  inst.rows = rows;
  inst.sparsity = sparsity;

  Rng rng(derive_seed(seed, 0xc5));
  inst.b0 = Eigen::VectorXd(subspace_dim);
  inst.b0[0] = b1_known;
  for (int l = 1; l < subspace_dim; ++l) inst.b0[l] = rng.normal();
  inst.c0 = sparse_vector(factor_len, sparsity, rng);
  inst.b_clamps.emplace_back(0, b1_known);

  switch (style) {
    case CsmuOperatorStyle::IidGaussian: {
      inst.a_dense = Eigen::MatrixXd(rows, subspace_dim * factor_len);
      for (Eigen::Index j = 0; j < inst.a_dense.cols(); ++j)
        for (Eigen::Index i = 0; i < rows; ++i) inst.a_dense(i, j) = rng.normal();
      break;
    }
    case CsmuOperatorStyle::HaarGeometric: {
      const Spectrum sp = geometric_spectrum(rows, subspace_dim * factor_len, cond);
      inst.a_dense =
          build_operator(sp, derive_seed(seed, 0xa0), derive_seed(seed, 0xa1)).dense();
      break;
    }
  }
  for (int l = 0; l < subspace_dim; ++l)
    inst.phis.push_back(inst.a_dense.middleCols(static_cast<Eigen::Index>(l) * factor_len,
                                                factor_len));

  Eigen::MatrixXd outer = inst.c0 * inst.b0.transpose();
  inst.x0 = Eigen::Map<Eigen::VectorXd>(outer.data(), outer.size());
  inst.y = inst.a_dense * inst.x0;
  inst.gamma_w0 = std::numeric_limits<double>::infinity();
  if (std::isfinite(snr_db)) add_noise_for_snr(inst, snr_db, seed);
  return inst;
}

LiftedInstance make_selfcal_instance(int subspace_dim, int factor_len,
                                     int sparsity, int rows, std::uint64_t seed) {
  if ((rows & (rows - 1)) != 0 || rows < 1)
    throw std::invalid_argument("make_selfcal_instance: M must be a power of two");
  if (sparsity > factor_len || subspace_dim > rows)
    throw std::invalid_argument("make_selfcal_instance: invalid dims");
  LiftedInstance inst;
  inst.subspace_dim = subspace_dim;
  inst.factor_len = factor_len;
  inst.rows = rows;
  inst.sparsity = sparsity;

  Rng rng(derive_seed(seed, 0x5e1f));
  Eigen::MatrixXd psi(rows, factor_len);
  for (Eigen::Index j = 0; j < factor_len; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) psi(i, j) = rng.normal();
  inst.b0 = rng.normal_vector(subspace_dim);
  inst.c0 = sparse_vector(factor_len, sparsity, rng);

  // H: L randomly chosen columns of the M x M Hadamard matrix (+-1 entries)
  std::vector<int> cols(rows);
  for (int i = 0; i < rows; ++i) cols[i] = i;
  for (int i = 0; i < subspace_dim; ++i)
    std::swap(cols[i], cols[i + rng.uniform_int(rows - i)]);
  auto hadamard_entry = [](int i, int j) {
    int bits = i & j;
    int parity = 0;
    while (bits) {
      parity ^= bits & 1;
      bits >>= 1;
    }
    return parity ? -1.0 : 1.0;
  };
  for (int l = 0; l < subspace_dim; ++l) {
    Eigen::VectorXd h(rows);
    for (int i = 0; i < rows; ++i) h[i] = hadamard_entry(i, cols[l]);
    inst.phis.push_back(h.asDiagonal() * psi);
  }

  inst.a_dense = build_lifted_matrix(inst.phis);
  Eigen::MatrixXd outer = inst.c0 * inst.b0.transpose();
  inst.x0 = Eigen::Map<Eigen::VectorXd>(outer.data(), outer.size());
  inst.y = inst.a_dense * inst.x0;  // w = 0
  inst.gamma_w0 = std::numeric_limits<double>::infinity();
  inst.snr_db = std::numeric_limits<double>::infinity();
  return inst;
}

RecoveryScore score_recovery(const Eigen::VectorXd& xhat,
                             const LiftedInstance& instance) {
  const int l = instance.subspace_dim;
  const int p = instance.factor_len;
  if (xhat.size() != static_cast<Eigen::Index>(l) * p)
    throw std::invalid_argument("score_recovery: xhat length mismatch");
  const double truth_b = instance.b0.squaredNorm();
  const double truth_c = instance.c0.squaredNorm();
  if (truth_b == 0.0 || truth_c == 0.0)
    throw std::invalid_argument("score_recovery: zero truth norm");

  Eigen::MatrixXd mat = Eigen::Map<const Eigen::MatrixXd>(xhat.data(), p, l);
  Eigen::MatrixXd truth = instance.c0 * instance.b0.transpose();
  RecoveryScore score;
  score.nmse_outer_db = db_floor((mat - truth).squaredNorm() / truth.squaredNorm());
  score.success = score.nmse_outer_db < -60.0;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double scale = std::sqrt(svd.singularValues()[0]);
  Eigen::VectorXd c_hat = svd.matrixU().col(0) * scale;
  Eigen::VectorXd b_hat = svd.matrixV().col(0) * scale;
  // least-squares scale/sign alignment, factor by factor
  const double ab = b_hat.squaredNorm() > 0.0
                        ? b_hat.dot(instance.b0) / b_hat.squaredNorm()
                        : 0.0;
  const double ac = c_hat.squaredNorm() > 0.0
                        ? c_hat.dot(instance.c0) / c_hat.squaredNorm()
                        : 0.0;
  score.nmse_b_db = db_floor((ab * b_hat - instance.b0).squaredNorm() / truth_b);
  score.nmse_c_db = db_floor((ac * c_hat - instance.c0).squaredNorm() / truth_c);
  return score;
}

ProblemInstance to_problem_instance(const LiftedInstance& instance, double gamma_w) {
  ProblemInstance pi{instance.x0, operator_from_dense(instance.a_dense), instance.y,
                     instance.gamma_w0, gamma_w};
  return pi;
}

std::shared_ptr<LiftedRankOneDenoiser> make_lifted_denoiser(
    const LiftedInstance& instance, int inner_iters) {
  const double rho = static_cast<double>(instance.sparsity) / instance.factor_len;
  auto den = std::make_shared<LiftedRankOneDenoiser>(
      instance.subspace_dim, instance.factor_len, rho, 1.0, inner_iters);
  for (const auto& [idx, val] : instance.b_clamps) den->clamp_b(idx, val);
  return den;
}

}  // namespace vampse
