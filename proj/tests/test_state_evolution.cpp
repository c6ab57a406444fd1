#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "vampse/rng.hpp"
#include "vampse/state_evolution.hpp"

using namespace vampse;

namespace {

Eigen::VectorXd random_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_vector(n);
}

Eigen::VectorXd bg_vec(int n, double rho, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (rng.bernoulli(rho)) x[i] = rng.normal();
  return x;
}

Spectrum zero_spectrum(int n) {
  Spectrum sp;
  sp.values = Eigen::VectorXd::Zero(n);
  sp.m = n;
  sp.n = n;
  return sp;
}

}  // namespace

TEST_CASE("lmmse error function closed form") {
  Spectrum sp = geometric_spectrum(24, 32, 10.0);
  SUBCASE("no measurement information returns the prior variance") {
    CHECK(lmmse_error_E2(2.0, 0.37, zero_spectrum(16), 5.0, 5.0) ==
          doctest::Approx(0.37));
  }
  SUBCASE("huge gamma2 returns the prior variance") {
    CHECK(lmmse_error_E2(1e14, 0.52, sp, 5.0, 5.0) ==
          doctest::Approx(0.52).epsilon(1e-8));
  }
  SUBCASE("matches a Monte Carlo evaluation of the defining expectation") {
    const int n = 64, m = 48;
    Spectrum spec = geometric_spectrum(m, n, 8.0);
    SpectralOperator op = build_operator(spec, 1, 2);
    Eigen::MatrixXd a = op.dense();
    const double gamma_w0 = 12.0, gamma_w = 12.0, gamma2 = 0.9, tau2 = 0.6;
    Eigen::VectorXd x0 = bg_vec(n, 0.2, 3);
    Eigen::MatrixXd lhs =
        gamma_w * a.transpose() * a + gamma2 * Eigen::MatrixXd::Identity(n, n);
    Eigen::LDLT<Eigen::MatrixXd> solver(lhs);
    Rng rng(4);
    double sum = 0, sum_sq = 0;
    const int draws = 500;
    for (int t = 0; t < draws; ++t) {
      Eigen::VectorXd y = a * x0 + rng.normal_vector(m) / std::sqrt(gamma_w0);
      Eigen::VectorXd r2 = x0 + std::sqrt(tau2) * rng.normal_vector(n);
      Eigen::VectorXd xhat = solver.solve(gamma_w * a.transpose() * y + gamma2 * r2);
      const double err = (xhat - x0).squaredNorm() / n;
      sum += err;
      sum_sq += err * err;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum_sq - sum * sum / draws) / (draws - 1) / draws);
    CHECK(std::abs(mean - lmmse_error_E2(gamma2, tau2, spec, gamma_w, gamma_w0)) <
          3.0 * se);
  }
}

TEST_CASE("lmmse sensitivity closed form") {
  SUBCASE("all zero spectrum gives 1") {
    CHECK(lmmse_sensitivity_A2(3.0, zero_spectrum(8), 2.0) == doctest::Approx(1.0));
  }
  SUBCASE("unit spectrum at matched precision gives 1/2") {
    Spectrum sp;
    sp.values = Eigen::VectorXd::Ones(8);
    sp.m = 8;
    sp.n = 8;
    CHECK(lmmse_sensitivity_A2(4.0, sp, 4.0) == doctest::Approx(0.5));
  }
  SUBCASE("identical to lmmse_estimate's alpha2") {
    Spectrum sp = geometric_spectrum(20, 32, 30.0);
    SpectralOperator op = build_operator(sp, 5, 6);
    SignalSpec sig;
    ProblemInstance inst = make_instance(sig, op, 40.0, 40.0, 7);
    for (double gamma2 : {0.1, 1.0, 17.5}) {
      auto [xhat, alpha2] = lmmse_estimate(random_vec(32, 8), gamma2, inst);
      CHECK(alpha2 == lmmse_sensitivity_A2(gamma2, sp, 40.0));
    }
  }
  SUBCASE("always in (0,1]") {
    for (int t = 0; t < 20; ++t) {
      Spectrum sp = geometric_spectrum(8 + t, 40, 1.0 + 13.0 * t);
      const double a2 = lmmse_sensitivity_A2(0.3 + 0.2 * t, sp, 9.0);
      CHECK(a2 > 0.0);
      CHECK(a2 <= 1.0);
    }
  }
}

TEST_CASE("matched-noise lmmse never beats the prior variance") {
  for (int t = 0; t < 20; ++t) {
    Spectrum sp = geometric_spectrum(16 + t, 48, 1.0 + 7.0 * t);
    const double tau2 = 0.1 + 0.1 * t;
    const double gamma2 = 1.0 / tau2;  // consistent prior precision
    const double e2 = lmmse_error_E2(gamma2, tau2, sp, 25.0, 25.0);
    CHECK(e2 <= tau2 * (1.0 + 1e-12));
  }
}

TEST_CASE("denoiser error and sensitivity Monte Carlo") {
  const int n = 2048;
  Eigen::VectorXd x0 = bg_vec(n, 0.1, 11);
  SUBCASE("identity denoiser reproduces the noise variance") {
    FirDenoiser den((Eigen::VectorXd(1) << 1.0).finished());
    const SeMoments m = denoiser_se_moments(den, x0, 1.0, 0.5, 200, 12);
    CHECK(std::abs(m.e1 - 0.5) < 3.0 * m.e1_stderr);
    CHECK(m.a1 == doctest::Approx(1.0));
  }
  SUBCASE("soft threshold with huge theta zeroes everything") {
    SoftThreshold den(1e9);
    const SeMoments m = denoiser_se_moments(den, x0, 1.0, 0.5, 50, 13);
    CHECK(m.e1 == doctest::Approx(x0.squaredNorm() / n));
    CHECK(m.a1 == 0.0);
  }
  SUBCASE("matched bg-mmse strictly beats the noise variance") {
    BernoulliGaussianMmse den(0.1, 1.0);
    for (double tau1 : {0.05, 0.2, 1.0}) {
      const SeMoments m = denoiser_se_moments(den, x0, 1.0 / tau1, tau1, 100, 14);
      CHECK(m.e1 < tau1);
    }
  }
  SUBCASE("bg-mmse sensitivity stays in (0,1) over a parameter grid") {
    for (double rho : {0.05, 0.3})
      for (double sigma2 : {0.5, 2.0})
        for (double tau1 : {0.1, 1.0}) {
          BernoulliGaussianMmse den(rho, sigma2);
          const SeMoments m = denoiser_se_moments(den, x0, 1.0 / tau1, tau1, 50, 15);
          CHECK(m.a1 > 0.0);
          CHECK(m.a1 < 1.0);
        }
  }
  SUBCASE("soft-threshold sensitivity cross-checked against the Stein form") {
    SoftThreshold den(0.8);
    const double tau1 = 0.4;
    const SeMoments m = denoiser_se_moments(den, x0, 1.0, tau1, 100, 16);
    Eigen::Matrix2d s;
    s << tau1, 0.5 * tau1, 0.5 * tau1, tau1;
    double stein_sum = 0.0;
    const int reps = 10;
    for (int t = 0; t < reps; ++t)
      stein_sum += stein_identity_check(den, x0, s, 1.0, 500 + t).rhs;
    CHECK(std::abs(m.a1 - stein_sum / reps) < 0.02);
  }
}

TEST_CASE("se recursion flags the no-measurement degeneracy") {
  BernoulliGaussianMmse den(0.1, 1.0);
  Eigen::VectorXd x0 = bg_vec(256, 0.1, 21);
  const auto traj = se_run(den, x0, zero_spectrum(256), 10.0, 10.0, 1.0, 1.0, 5, 50, 22);
  CHECK(traj.size() == 1);
  CHECK(traj.front().degenerate);
}

TEST_CASE("se trajectory is stable across mc seeds and tightens with trials") {
  BernoulliGaussianMmse den(0.1, 1.0);
  const int n = 1024;
  Eigen::VectorXd x0 = bg_vec(n, 0.1, 23);
  Spectrum sp = geometric_spectrum(n / 2, n, 5.0);
  auto final_tau = [&](int trials, std::uint64_t seed) {
    const auto traj = se_run(den, x0, sp, 20.0, 20.0, 1.0, 1.0, 6, trials, seed);
    return traj.back().tau1;
  };
  auto scatter = [&](int trials) {
    std::vector<double> v;
    for (int s = 0; s < 8; ++s) v.push_back(final_tau(trials, 100 + s));
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::sqrt(var / (v.size() - 1)) / mean;
  };
  const double band500 = scatter(500);
  const double band2000 = scatter(2000);
  CHECK(band500 < 0.05);                 // already tight at 500 trials
  CHECK(band2000 < band500);             // and tighter at 2000
  CHECK(band2000 > band500 / 4.0);       // roughly the 1/sqrt(trials) rate
}

TEST_CASE("appendix-style general recursion") {
  SUBCASE("zero start and zero disturbances stay at zero") {
    const int n = 32;
    GenRecursionSpec spec;
    spec.fp = [](const Eigen::VectorXd& p, double) { return Eigen::VectorXd(0.5 * p); };
    spec.fp_divergence = [](const Eigen::VectorXd&, double, int) { return 0.5; };
    spec.fq = [](const Eigen::VectorXd& q, double) { return Eigen::VectorXd(0.25 * q); };
    spec.fq_divergence = [](const Eigen::VectorXd&, double, int) { return 0.25; };
    spec.gamma1_update = [](double g, double a) { return g * (1.0 / a - 1.0); };
    spec.gamma2_update = spec.gamma1_update;
    spec.c1 = [](double a) { return 1.0 / (1.0 - a); };
    spec.c2 = spec.c1;
    spec.u0 = Eigen::VectorXd::Zero(n);
    spec.gamma10 = 1.0;
    spec.v_map = std::make_shared<DenseOrthogonalMap>(haar_orthogonal(n, 31));
    const auto traj = general_recursion_run(spec, 4);
    for (const auto& it : traj) {
      CHECK(it.p.norm() == 0.0);
      CHECK(it.u_next.norm() == 0.0);
    }
  }
  SUBCASE("linear gain maps with additive disturbance follow the hand-derived SE") {
    const double ga = 0.3, gb = 0.6, sp2 = 0.8, sq2 = 0.5;
    GenSeFunctions f;
    f.ap = [&](double, double, int) { return ga; };
    f.mp = [&](double tau1, double, int) { return ga * ga * tau1 + sp2; };
    f.aq = [&](double, double, int) { return gb; };
    f.mq = [&](double tau2, double, int) { return gb * gb * tau2 + sq2; };
    f.gamma1_update = [](double g, double a) { return g * (1.0 / a - 1.0); };
    f.gamma2_update = f.gamma1_update;
    f.c1 = [](double a) { return 1.0 / (1.0 - a); };
    f.c2 = f.c1;
    const auto se = general_se_run(f, 2.0, 1.0, 5);
    for (const auto& st : se) {
      CHECK(st.tau2 == doctest::Approx(sp2 / ((1 - ga) * (1 - ga))).epsilon(1e-12));
      if (st.k > 0)
        CHECK(st.tau1 == doctest::Approx(sq2 / ((1 - gb) * (1 - gb))).epsilon(1e-12));
    }
  }
  SUBCASE("unit C and identity Gamma reduce the tau update to Mp - a^2 tau") {
    GenSeFunctions f;
    f.ap = [](double, double, int) { return 0.4; };
    f.mp = [](double tau1, double, int) { return 0.16 * tau1 + 1.0; };
    f.aq = [](double, double, int) { return 0.2; };
    f.mq = [](double tau2, double, int) { return 0.04 * tau2 + 2.0; };
    f.gamma1_update = [](double g, double) { return g; };
    f.gamma2_update = f.gamma1_update;
    f.c1 = [](double) { return 1.0; };
    f.c2 = f.c1;
    const auto se = general_se_run(f, 3.0, 1.0, 1);
    CHECK(se[0].tau2 == doctest::Approx(0.16 * 3.0 + 1.0 - 0.16 * 3.0).epsilon(1e-14));
  }
}

TEST_CASE("vamp instantiation reproduces vamp_run error vectors") {
  const int n = 64, m = 40;
  Spectrum sp = geometric_spectrum(m, n, 10.0);
  SpectralOperator op = build_operator(sp, 41, 42);
  SignalSpec sig;
  const double gw0 = gamma_w0_for_snr(op, draw_signal(sig, n, 43), 40.0);
  ProblemInstance inst = make_instance(sig, op, gw0, gw0, 43);
  SoftThreshold den(0.4);
  VampConfig cfg;
  cfg.iterations = 5;
  cfg.init = VampInit::SeOracle;
  cfg.tau10 = 1.0;
  cfg.gamma10 = 1.0;
  cfg.init_seed = 44;

  const VampTrajectory traj = vamp_run(inst, den, cfg);
  const auto gen = general_recursion_run(vamp_general_recursion(inst, den, cfg), 5);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd p_ref = traj.states[k].r1 - inst.x0;
    const Eigen::VectorXd q_ref = inst.op.v_adjoint(traj.states[k].r2 - inst.x0);
    CHECK((gen[k].p - p_ref).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((gen[k].q - q_ref).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(gen[k].alpha1 == doctest::Approx(traj.states[k].alpha1).epsilon(1e-12));
    CHECK(gen[k].alpha2 == doctest::Approx(traj.states[k].alpha2).epsilon(1e-12));
  }
}

TEST_CASE("direct and generalized se agree to 1e-12") {
  const int n = 512;
  BernoulliGaussianMmse den(0.1, 1.0);
  Eigen::VectorXd x0 = bg_vec(n, 0.1, 51);
  Spectrum sp = geometric_spectrum(n / 2, n, 10.0);
  const double gamma_w = 15.0, gamma_w0 = 15.0;
  const std::uint64_t seed = 52;
  const int iters = 8, trials = 200;
  const auto direct = se_run(den, x0, sp, gamma_w, gamma_w0, 1.0, 1.0, iters, trials, seed);
  const auto general = general_se_run(
      vamp_general_se(den, x0, sp, gamma_w, gamma_w0, trials, seed), 1.0, 1.0, iters);
  REQUIRE(direct.size() == static_cast<size_t>(iters));
  for (int k = 0; k < iters; ++k) {
    CHECK(direct[k].tau1 == doctest::Approx(general[k].tau1).epsilon(1e-12));
    CHECK(direct[k].tau2 == doctest::Approx(general[k].tau2).epsilon(1e-12));
    CHECK(direct[k].abar1 == doctest::Approx(general[k].abar1).epsilon(1e-12));
    CHECK(direct[k].abar2 == doctest::Approx(general[k].abar2).epsilon(1e-12));
    CHECK(direct[k].gbar2 == doctest::Approx(general[k].gbar2).epsilon(1e-12));
  }
}

TEST_CASE("gaussianity diagnostics match the oracle init variance") {
  const int n = 2048;
  Spectrum sp = geometric_spectrum(n / 2, n, 1.0);
  SpectralOperator op = build_operator(sp, 61, 62);
  SignalSpec sig;
  const double gw0 = gamma_w0_for_snr(op, draw_signal(sig, n, 63), 40.0);
  ProblemInstance inst = make_instance(sig, op, gw0, gw0, 63);
  BernoulliGaussianMmse den(0.1, 1.0);
  VampConfig cfg;
  cfg.iterations = 6;
  cfg.init = VampInit::SeOracle;
  cfg.tau10 = 1.0;
  cfg.gamma10 = 1.0;
  cfg.init_seed = 64;
  const VampTrajectory traj = vamp_run(inst, den, cfg);
  const auto se = se_run(den, inst.x0, sp, gw0, gw0, 1.0, 1.0, 6, 300, 65);
  const auto rows = gaussianity_diagnostics(traj, inst, se);
  REQUIRE(!rows.empty());
  CHECK(std::abs(rows[0].var_p - 1.0) < 3.0 / std::sqrt(double(n)));
  // single seed: early iterations track tightly, late ones accumulate
  // per-seed trajectory jitter (the acceptance gate checks seed medians)
  for (size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(rows[k].var_p / rows[k].tau1 - 1.0) < 0.15);
    CHECK(std::abs(rows[k].kurt_p) < 0.5);
    CHECK(std::abs(rows[k].var_q / rows[k].tau2 - 1.0) < 0.2);
  }
}

TEST_CASE("empirical vamp scalars approach the se fixed values as N grows") {
  BernoulliGaussianMmse den(0.1, 1.0);
  // fixed-k convergence of (alpha, eta, gamma); later iterations compound
  // per-seed drift, so the crisp 1/sqrt(N) rate shows at early k
  auto gap_at = [&](int n, std::uint64_t seed) {
    Spectrum sp = geometric_spectrum(n / 2, n, 1.0);
    SpectralOperator op = build_operator(sp, seed, seed + 1);
    SignalSpec sig;
    const double gw0 = gamma_w0_for_snr(op, draw_signal(sig, n, seed + 2), 40.0);
    ProblemInstance inst = make_instance(sig, op, gw0, gw0, seed + 2);
    VampConfig cfg;
    cfg.iterations = 2;
    cfg.init = VampInit::SeOracle;
    cfg.tau10 = 1.0;
    cfg.gamma10 = 1.0;
    cfg.init_seed = seed + 3;
    const VampTrajectory traj = vamp_run(inst, den, cfg);
    const auto se = se_run(den, inst.x0, sp, gw0, gw0, 1.0, 1.0, 2, 400, seed + 4);
    double worst = 0.0;
    for (int k = 0; k < 2; ++k) {
      worst = std::max(worst, std::abs(traj.states[k].alpha1 / se[k].abar1 - 1.0));
      worst = std::max(worst, std::abs(traj.states[k].eta1 / se[k].ebar1 - 1.0));
      worst = std::max(worst, std::abs(traj.states[k].gamma2 / se[k].gbar2 - 1.0));
    }
    return worst;
  };
  std::vector<double> small, large;
  for (std::uint64_t s = 0; s < 5; ++s) {
    small.push_back(gap_at(1024, 700 + 10 * s));
    large.push_back(gap_at(4096, 800 + 10 * s));
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  CHECK(large[2] < small[2]);  // median gap shrinks with N
  CHECK(large[2] < 0.05);
}
