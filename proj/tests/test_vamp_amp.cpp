#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "vampse/amp.hpp"
#include "vampse/rng.hpp"
#include "vampse/vamp.hpp"

using namespace vampse;

namespace {

Eigen::VectorXd random_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_vector(n);
}

ProblemInstance identity_instance(int n, double gamma_w, std::uint64_t seed) {
  auto id = std::make_shared<IdentityMap>(n);
  SpectralOperator op = custom_operator(n, n, Eigen::VectorXd::Ones(n), id, id);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, gamma_w, gamma_w, seed);
  return inst;
}

}  // namespace

TEST_CASE("lmmse with identity operator averages at equal precision") {
  const int n = 16;
  ProblemInstance inst = identity_instance(n, 4.0, 1);
  Eigen::VectorXd r2 = random_vec(n, 2);
  auto [xhat, alpha] = lmmse_estimate(r2, 4.0, inst);
  CHECK((xhat - 0.5 * (inst.y + r2)).norm() < 1e-12);
  CHECK(alpha == doctest::Approx(0.5));
}

TEST_CASE("lmmse prior dominates at huge gamma2") {
  Spectrum sp = geometric_spectrum(12, 24, 10.0);
  SpectralOperator op = build_operator(sp, 3, 4);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, 100.0, 100.0, 5);
  Eigen::VectorXd r2 = random_vec(24, 6);
  auto [xhat, alpha] = lmmse_estimate(r2, 1e12, inst);
  CHECK((xhat - r2).norm() / r2.norm() < 1e-6);
  CHECK(alpha > 1.0 - 1e-6);
}

TEST_CASE("lmmse matches an explicit dense solve") {
  for (int t = 0; t < 10; ++t) {
    const int n = 32, m = 20;
    Spectrum sp = geometric_spectrum(m, n, 5.0 + t);
    SpectralOperator op = build_operator(sp, 10 + t, 20 + t);
    SignalSpec sig;
    ProblemInstance inst = make_instance(sig, op, 50.0, 50.0, 30 + t);
    Eigen::MatrixXd a = op.dense();
    const double gamma2 = 0.25 + 0.1 * t;
    Eigen::VectorXd r2 = random_vec(n, 40 + t);
    Eigen::MatrixXd lhs = inst.gamma_w * a.transpose() * a +
                          gamma2 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = inst.gamma_w * a.transpose() * inst.y + gamma2 * r2;
    Eigen::VectorXd expect = lhs.ldlt().solve(rhs);
    auto [xhat, alpha] = lmmse_estimate(r2, gamma2, inst);
    CHECK((xhat - expect).norm() / expect.norm() < 1e-9);
    // analytic alpha agrees with the dense Jacobian trace
    const double trace = (gamma2 * lhs.inverse()).trace() / n;
    CHECK(alpha == doctest::Approx(trace).epsilon(1e-10));
  }
}

TEST_CASE("lmmse alpha2 matches a Monte Carlo divergence of the map") {
  const int n = 64, m = 40;
  Spectrum sp = geometric_spectrum(m, n, 20.0);
  SpectralOperator op = build_operator(sp, 7, 8);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, 30.0, 30.0, 9);
  const double gamma2 = 0.8;
  const LmmseWorkspace ws = make_lmmse_workspace(inst);
  Eigen::VectorXd r2 = random_vec(n, 10);
  auto [base, alpha] = lmmse_estimate(r2, gamma2, inst, ws);
  Rng rng(11);
  const double eps = 1e-5;
  double sum = 0, sum_sq = 0;
  const int probes = 64;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXd eta = rng.normal_vector(n);
    auto [shifted, a2] = lmmse_estimate(r2 + eps * eta, gamma2, inst, ws);
    const double est = eta.dot(shifted - base) / (eps * n);
    sum += est;
    sum_sq += est * est;
  }
  const double mean = sum / probes;
  const double se = std::sqrt((sum_sq - sum * sum / probes) / (probes - 1) / probes);
  CHECK(std::abs(mean - alpha) < 3.0 * se);
}

TEST_CASE("vamp one iteration matches a hand-executed trace at N=4") {
  const int n = 4;
  // fixed small operator with known factors
  Eigen::MatrixXd u = haar_orthogonal(n, 100);
  Eigen::MatrixXd v = haar_orthogonal(n, 200);
  Eigen::VectorXd s(n);
  s << 1.6, 1.2, 0.8, 0.4;
  SpectralOperator op = custom_operator(
      n, n, s, std::make_shared<DenseOrthogonalMap>(u), std::make_shared<DenseOrthogonalMap>(v));
  Eigen::VectorXd x0(n);
  x0 << 1.0, 0.0, -2.0, 0.5;
  const double gamma_w = 25.0;
  Eigen::VectorXd y = op.forward(x0);  // noiseless, postulated gamma_w finite
  ProblemInstance inst{x0, op, y, std::numeric_limits<double>::infinity(), gamma_w};

  Eigen::VectorXd r1(n);
  r1 << 1.2, -0.3, 0.7, 0.1;
  const double gamma1 = 2.0, theta = 0.5;
  SoftThreshold den(theta);
  VampConfig cfg;
  cfg.iterations = 2;
  cfg.init = VampInit::Custom;
  cfg.r1_custom = r1;
  cfg.gamma10 = gamma1;
  const VampTrajectory traj = vamp_run(inst, den, cfg);

  // spreadsheet of the two half-steps
  Eigen::VectorXd xhat1(n);
  for (int i = 0; i < n; ++i) {
    const double a = std::abs(r1[i]) - theta;
    xhat1[i] = a > 0 ? (r1[i] > 0 ? a : -a) : 0.0;
  }
  const double alpha1 = 2.0 / 4.0;
  const double eta1 = gamma1 / alpha1;
  const double gamma2 = eta1 - gamma1;
  Eigen::VectorXd r2 = (eta1 * xhat1 - gamma1 * r1) / gamma2;
  Eigen::MatrixXd a = op.dense();
  Eigen::MatrixXd lhs = gamma_w * a.transpose() * a + gamma2 * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd xhat2 = lhs.ldlt().solve(gamma_w * a.transpose() * y + gamma2 * r2);
  double alpha2 = 0.0;
  for (int i = 0; i < n; ++i) alpha2 += gamma2 / (gamma_w * s[i] * s[i] + gamma2);
  alpha2 /= n;
  const double eta2 = gamma2 / alpha2;
  const double gamma1_next = eta2 - gamma2;
  Eigen::VectorXd r1_next = (eta2 * xhat2 - gamma2 * r2) / gamma1_next;

  const VampState& st = traj.states[0];
  CHECK((st.xhat1 - xhat1).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(st.alpha1 == doctest::Approx(alpha1).epsilon(1e-12));
  CHECK(st.eta1 == doctest::Approx(eta1).epsilon(1e-12));
  CHECK(st.gamma2 == doctest::Approx(gamma2).epsilon(1e-12));
  CHECK((st.r2 - r2).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((st.xhat2 - xhat2).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(st.alpha2 == doctest::Approx(alpha2).epsilon(1e-12));
  CHECK(st.eta2 == doctest::Approx(eta2).epsilon(1e-12));
  CHECK(traj.states[1].gamma1 == doctest::Approx(gamma1_next).epsilon(1e-12));
  CHECK((traj.states[1].r1 - r1_next).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("vamp solves the invertible noiseless system fast") {
  const int n = 512;
  Spectrum sp = geometric_spectrum(n, n, 1.0);
  SpectralOperator op = build_operator(sp, 55, 56);
  SignalSpec sig;  // BG(0.1, 1)
  ProblemInstance inst =
      make_instance(sig, op, std::numeric_limits<double>::infinity(), 1e10, 57);
  BernoulliGaussianMmse den(0.1, 1.0);
  VampConfig cfg;
  cfg.iterations = 5;
  const VampTrajectory traj = vamp_run(inst, den, cfg);
  const double mse_db = 10.0 * std::log10(traj.states.back().mse1);
  CHECK(mse_db < -80.0);
}

TEST_CASE("precision consistency across iterations") {
  const int n = 128;
  Spectrum sp = geometric_spectrum(64, n, 10.0);
  SpectralOperator op = build_operator(sp, 60, 61);
  SignalSpec sig;
  const double gw0 = gamma_w0_for_snr(op, draw_signal(sig, n, 62), 40.0);
  ProblemInstance inst = make_instance(sig, op, gw0, gw0, 62);
  BernoulliGaussianMmse den(0.1, 1.0);
  VampConfig cfg;
  cfg.iterations = 8;
  const VampTrajectory traj = vamp_run(inst, den, cfg);
  for (size_t k = 0; k < traj.states.size(); ++k) {
    const auto& st = traj.states[k];
    if (st.clamped) continue;
    CHECK(st.gamma2 ==
          doctest::Approx(st.gamma1 * (1.0 - st.alpha1) / st.alpha1).epsilon(1e-10));
    if (k + 1 < traj.states.size())
      CHECK(traj.states[k + 1].gamma1 ==
            doctest::Approx(st.gamma2 * (1.0 - st.alpha2) / st.alpha2).epsilon(1e-10));
  }
}

TEST_CASE("se-oracle init has the advertised error variance") {
  const int n = 4096;
  Spectrum sp = geometric_spectrum(n / 2, n, 1.0);
  SpectralOperator op = build_operator(sp, 70, 71);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, 100.0, 100.0, 72);
  VampConfig cfg;
  cfg.init = VampInit::SeOracle;
  cfg.tau10 = 0.7;
  cfg.init_seed = 73;
  Eigen::VectorXd r1 = initial_r1(inst, cfg);
  const double var = (r1 - inst.x0).squaredNorm() / n;
  CHECK(std::abs(var - 0.7) < 3.0 * 0.7 / std::sqrt(double(n)));
}

TEST_CASE("vamp is deterministic given seeds") {
  const int n = 64;
  Spectrum sp = geometric_spectrum(32, n, 5.0);
  SpectralOperator op = build_operator(sp, 80, 81);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, 100.0, 100.0, 82);
  BernoulliGaussianMmse den(0.1, 1.0);
  VampConfig cfg;
  cfg.iterations = 6;
  cfg.divergence_seed = 83;
  const VampTrajectory a = vamp_run(inst, den, cfg);
  const VampTrajectory b = vamp_run(inst, den, cfg);
  CHECK((a.xhat_final - b.xhat_final).norm() == 0.0);
}

TEST_CASE("degenerate alpha is flagged and the run survives") {
  const int n = 32;
  ProblemInstance inst = identity_instance(n, 1e10, 90);
  inst.gamma_w0 = std::numeric_limits<double>::infinity();
  inst.y = inst.op.forward(inst.x0);
  SoftThreshold den(0.0);  // identity denoiser, alpha1 = 1 exactly
  VampConfig cfg;
  cfg.iterations = 3;
  const VampTrajectory traj = vamp_run(inst, den, cfg);
  CHECK(traj.states[0].degenerate);
  CHECK(traj.states[0].clamped);
  CHECK((traj.xhat_final - inst.x0).norm() / inst.x0.norm() < 1e-6);
}

TEST_CASE("make_instance noise behavior") {
  Spectrum sp = geometric_spectrum(24, 32, 2.0);
  SpectralOperator op = build_operator(sp, 91, 92);
  SignalSpec sig;
  SUBCASE("noiseless sentinel gives y = A x0 exactly") {
    ProblemInstance inst =
        make_instance(sig, op, std::numeric_limits<double>::infinity(), 1.0, 93);
    CHECK((inst.y - op.forward(inst.x0)).norm() == 0.0);
  }
  SUBCASE("snr helper hits the target") {
    ProblemInstance inst = make_instance(sig, op, 1.0, 1.0, 94);
    const double gw0 = gamma_w0_for_snr(op, inst.x0, 40.0);
    const double snr =
        10.0 * std::log10(op.forward(inst.x0).squaredNorm() / (op.rows() / gw0));
    CHECK(snr == doctest::Approx(40.0).epsilon(1e-12));
  }
  SUBCASE("empirical noise variance over 200 draws") {
    const double gamma_w0 = 5.0;
    double sum = 0.0;
    for (int t = 0; t < 200; ++t) {
      ProblemInstance inst = make_instance(sig, op, gamma_w0, gamma_w0, 500 + t);
      sum += (inst.y - op.forward(inst.x0)).squaredNorm() / op.rows();
    }
    CHECK(sum / 200.0 == doctest::Approx(1.0 / gamma_w0).epsilon(0.05));
  }
}

TEST_CASE("amp recovers through the orthogonal identity in one step") {
  const int n = 64;
  Spectrum sp = geometric_spectrum(n, n, 1.0);
  SpectralOperator op = build_operator(sp, 95, 96);
  SignalSpec sig;
  ProblemInstance inst =
      make_instance(sig, op, std::numeric_limits<double>::infinity(), 1e10, 97);
  SoftThreshold den(0.0);
  const AmpTrajectory traj = amp_run(inst, den, 2);
  CHECK((traj.states[0].xhat - inst.x0).norm() < 1e-10);
}

TEST_CASE("amp tracks vamp on a well-conditioned instance") {
  const int n = 256, m = 128;
  Spectrum sp = geometric_spectrum(m, n, 1.0);
  BernoulliGaussianMmse den(0.1, 1.0);
  std::vector<double> gaps;
  for (int t = 0; t < 20; ++t) {
    SpectralOperator op = build_operator(sp, 200 + t, 300 + t);
    SignalSpec sig;
    Eigen::VectorXd probe = draw_signal(sig, n, 400 + t);
    const double gw0 = gamma_w0_for_snr(op, probe, 40.0);
    ProblemInstance inst = make_instance(sig, op, gw0, gw0, 400 + t);
    VampConfig cfg;
    cfg.iterations = 30;
    const VampTrajectory vt = vamp_run(inst, den, cfg);
    const AmpTrajectory at = amp_run(inst, den, 30);
    const double v_db = 10.0 * std::log10((vt.xhat_final - inst.x0).squaredNorm() /
                                          inst.x0.squaredNorm());
    const double a_db = 10.0 * std::log10((at.xhat_final - inst.x0).squaredNorm() /
                                          inst.x0.squaredNorm());
    gaps.push_back(std::abs(v_db - a_db));
  }
  std::sort(gaps.begin(), gaps.end());
  CHECK(gaps[10] < 1.0);  // median within 1 dB
}

TEST_CASE("amp diverges on ill-conditioned operators while vamp stays finite") {
  const int n = 512, m = 102;
  SoftThreshold den(0.25);  // lasso-style; bounded denoisers fail by cycling instead
  int diverged = 0;
  for (int t = 0; t < 20; ++t) {
    Spectrum sp = geometric_spectrum(m, n, 100.0);
    SpectralOperator op = build_operator(sp, 600 + t, 700 + t);
    SignalSpec sig;
    sig.rho = 0.03;
    ProblemInstance inst =
        make_instance(sig, op, std::numeric_limits<double>::infinity(), 1e10, 800 + t);
    const AmpTrajectory at = amp_run(inst, den, 25);
    if (at.diverged) ++diverged;
    VampConfig cfg;
    cfg.iterations = 25;
    cfg.init = VampInit::Adjoint;
    const VampTrajectory vt = vamp_run(inst, den, cfg);
    CHECK(std::isfinite(vt.states.back().mse1));
  }
  CHECK(diverged >= 11);  // majority of 20 seeds
}

TEST_CASE("amp without the onsager term is plain iterative thresholding") {
  const int n = 64, m = 32;
  Spectrum sp = geometric_spectrum(m, n, 3.0);
  SpectralOperator op = build_operator(sp, 900, 901);
  SignalSpec sig;
  ProblemInstance inst = make_instance(sig, op, 100.0, 100.0, 902);
  SoftThreshold den(0.3);
  const AmpTrajectory traj = amp_run(inst, den, 6, 0, false);

  Eigen::VectorXd r = op.adjoint(inst.y);
  double gamma = m / inst.y.squaredNorm();
  for (size_t k = 0; k < traj.states.size(); ++k) {
    Eigen::VectorXd xhat = den.apply(r, gamma);
    CHECK((traj.states[k].xhat - xhat).norm() < 1e-12);
    Eigen::VectorXd v = inst.y - op.forward(xhat);
    r = xhat + op.adjoint(v);
    gamma = m / v.squaredNorm();
  }
}

TEST_CASE("trajectory csv schemas") {
  const int n = 16;
  ProblemInstance inst = identity_instance(n, 10.0, 903);
  BernoulliGaussianMmse den(0.1, 1.0);
  VampConfig cfg;
  cfg.iterations = 2;
  std::ostringstream vout;
  write_trajectory_csv(vout, vamp_run(inst, den, cfg));
  std::string line;
  std::istringstream vin(vout.str());
  std::getline(vin, line);
  CHECK(line == "k,gamma1,alpha1,eta1,gamma2,alpha2,eta2,mse1,mse2,clamped_flag");
  int rows = 0;
  while (std::getline(vin, line)) ++rows;
  CHECK(rows == 2);

  std::ostringstream aout;
  write_amp_trajectory_csv(aout, amp_run(inst, den, 2));
  std::istringstream ain(aout.str());
  std::getline(ain, line);
  CHECK(line == "k,gamma1,alpha1,mse1,diverged_flag");
}
