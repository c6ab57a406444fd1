#include "vampse/state_evolution.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "vampse/csv.hpp"
#include "vampse/rng.hpp"

namespace vampse {

namespace {
constexpr double kAlphaEps = 1e-8;  // boundary tolerance before declaring violation
}

double lmmse_error_E2(double gamma2, double tau2, const Spectrum& spectrum,
                      double gamma_w, double gamma_w0) {
  if (gamma2 <= 0.0 || tau2 <= 0.0)
    throw std::invalid_argument("lmmse_error_E2: gamma2 and tau2 must be positive");
  const double noise_var = std::isfinite(gamma_w0) ? 1.0 / gamma_w0 : 0.0;
  double sum = 0.0;
  for (int i = 0; i < spectrum.n; ++i) {
    const double s2 = spectrum.values[i] * spectrum.values[i];
    const double d = gamma_w * s2 + gamma2;
    sum += (gamma_w * gamma_w * s2 * noise_var + gamma2 * gamma2 * tau2) / (d * d);
  }
  return sum / static_cast<double>(spectrum.n);
}

double lmmse_sensitivity_A2(double gamma2, const Spectrum& spectrum, double gamma_w) {
  if (gamma2 <= 0.0) throw std::invalid_argument("lmmse_sensitivity_A2: gamma2 must be positive");
  double sum = 0.0;
  for (int i = 0; i < spectrum.n; ++i) {
    const double s2 = spectrum.values[i] * spectrum.values[i];
    sum += gamma2 / (gamma_w * s2 + gamma2);
  }
  return sum / static_cast<double>(spectrum.n);
}

SeMoments denoiser_se_moments(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                              double gamma1, double tau1, int trials,
                              std::uint64_t seed) {
  if (tau1 <= 0.0) throw std::invalid_argument("denoiser_se_moments: tau1 must be positive");
  if (trials < 1) throw std::invalid_argument("denoiser_se_moments: trials must be >= 1");
  const Eigen::Index n = x0.size();
  const double sd = std::sqrt(tau1);
  double e_sum = 0, e_sq = 0, a_sum = 0, a_sq = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const Eigen::VectorXd r = x0 + sd * rng.normal_vector(n);
    const double err =
        (denoiser.apply(r, gamma1) - x0).squaredNorm() / static_cast<double>(n);
    const double div =
        denoiser.divergence(r, gamma1, derive_seed(seed, static_cast<std::uint64_t>(t), 1)).value;
    e_sum += err;
    e_sq += err * err;
    a_sum += div;
    a_sq += div * div;
  }
  SeMoments m;
  m.e1 = e_sum / trials;
  m.a1 = a_sum / trials;
  if (trials > 1) {
    m.e1_stderr = std::sqrt(std::max(0.0, (e_sq - e_sum * e_sum / trials) / (trials - 1)) / trials);
    m.a1_stderr = std::sqrt(std::max(0.0, (a_sq - a_sum * a_sum / trials) / (trials - 1)) / trials);
  }
  return m;
}

SeMoments denoiser_error_E1(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                            double gamma1, double tau1, int trials,
                            std::uint64_t seed) {
  return denoiser_se_moments(denoiser, x0, gamma1, tau1, trials, seed);
}

SeMoments denoiser_sensitivity_A1(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                                  double gamma1, double tau1, int trials,
                                  std::uint64_t seed) {
  return denoiser_se_moments(denoiser, x0, gamma1, tau1, trials, seed);
}

std::vector<SeState> se_run(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                            const Spectrum& spectrum, double gamma_w,
                            double gamma_w0, double tau10, double gbar10,
                            int iterations, int mc_trials, std::uint64_t seed) {
  if (tau10 <= 0.0) throw std::invalid_argument("se_run: tau10 must be positive");
  std::vector<SeState> traj;
  double tau1 = tau10;
  double gbar1 = std::max(gbar10, 1e-11);
  for (int k = 0; k < iterations; ++k) {
    SeState st;
    st.k = k;
    st.tau1 = tau1;
    st.gbar1 = gbar1;

    const SeMoments m = denoiser_se_moments(denoiser, x0, gbar1, tau1, mc_trials,
                                            derive_seed(seed, static_cast<std::uint64_t>(k)));
    st.abar1 = m.a1;
    st.e1_stderr = m.e1_stderr;
    st.a1_stderr = m.a1_stderr;
    if (!(st.abar1 > kAlphaEps) || !(st.abar1 < 1.0 - kAlphaEps)) {
      st.degenerate = true;
      traj.push_back(st);
      break;
    }
    st.ebar1 = st.gbar1 / st.abar1;
    st.gbar2 = st.ebar1 - st.gbar1;
    st.tau2 = (m.e1 - st.abar1 * st.abar1 * tau1) / ((1.0 - st.abar1) * (1.0 - st.abar1));
    st.mse1 = 1.0 / st.ebar1;
    if (!(st.tau2 > 0.0) || !(st.gbar2 > 0.0)) {
      st.degenerate = true;
      traj.push_back(st);
      break;
    }

    st.abar2 = lmmse_sensitivity_A2(st.gbar2, spectrum, gamma_w);
    if (!(st.abar2 > kAlphaEps) || !(st.abar2 < 1.0 - kAlphaEps)) {
      st.degenerate = true;
      traj.push_back(st);
      break;
    }
    st.ebar2 = st.gbar2 / st.abar2;
    st.mse2 = 1.0 / st.ebar2;
    const double e2 = lmmse_error_E2(st.gbar2, st.tau2, spectrum, gamma_w, gamma_w0);
    const double gbar1_next = st.ebar2 - st.gbar2;
    const double tau1_next =
        (e2 - st.abar2 * st.abar2 * st.tau2) / ((1.0 - st.abar2) * (1.0 - st.abar2));
    traj.push_back(st);
    if (!(tau1_next > 0.0) || !(gbar1_next > 0.0)) {
      traj.back().degenerate = true;
      break;
    }
    tau1 = tau1_next;
    gbar1 = gbar1_next;
  }
  return traj;
}

void write_se_csv(std::ostream& out, const std::vector<SeState>& traj) {
  CsvWriter csv(out);
  csv.header({"k", "tau1", "tau2", "gbar1", "gbar2", "abar1", "abar2",
              "mse1_db", "mse2_db", "e1_stderr", "a1_stderr"});
  for (const auto& st : traj) {
    csv.field(st.k);
    csv.field(st.tau1);
    csv.field(st.tau2);
    csv.field(st.gbar1);
    csv.field(st.gbar2);
    csv.field(st.abar1);
    csv.field(st.abar2);
    csv.field(10.0 * std::log10(st.mse1));
    csv.field(10.0 * std::log10(st.mse2));
    csv.field(st.e1_stderr);
    csv.field(st.a1_stderr);
    csv.end_row();
  }
}

namespace {

struct Moments {
  double var, skew, kurt, jb;
};

Moments sample_moments(const Eigen::VectorXd& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  double m2 = 0, m3 = 0, m4 = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double d = v[i] - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  Moments m;
  m.var = v.squaredNorm() / n;  // raw second moment; errors are zero-mean
  m.skew = m3 / std::pow(m2, 1.5);
  m.kurt = m4 / (m2 * m2) - 3.0;
  m.jb = n / 6.0 * (m.skew * m.skew + m.kurt * m.kurt / 4.0);
  return m;
}

}  // namespace

std::vector<GaussianityRow> gaussianity_diagnostics(
    const VampTrajectory& traj, const ProblemInstance& instance,
    const std::vector<SeState>& se) {
  if (instance.x0.size() == 0)
    throw std::invalid_argument("gaussianity_diagnostics: instance missing x0");
  std::vector<GaussianityRow> rows;
  const size_t n_rows = std::min(traj.states.size(), se.size());
  for (size_t i = 0; i < n_rows; ++i) {
    const auto& st = traj.states[i];
    GaussianityRow row;
    row.k = st.k;
    const Moments mp = sample_moments(st.r1 - instance.x0);
    const Moments mq = sample_moments(instance.op.v_adjoint(st.r2 - instance.x0));
    row.var_p = mp.var;
    row.skew_p = mp.skew;
    row.kurt_p = mp.kurt;
    row.jb_p = mp.jb;
    row.var_q = mq.var;
    row.skew_q = mq.skew;
    row.kurt_q = mq.kurt;
    row.jb_q = mq.jb;
    row.tau1 = se[i].tau1;
    row.tau2 = se[i].tau2;
    rows.push_back(row);
  }
  return rows;
}

std::vector<GenIterate> general_recursion_run(const GenRecursionSpec& spec,
                                              int iterations) {
  if (iterations < 1) throw std::invalid_argument("general_recursion_run: iterations must be >= 1");
  Eigen::VectorXd u = spec.u0;
  double gamma1 = spec.gamma10;
  std::vector<GenIterate> traj;
  traj.reserve(iterations);
  for (int k = 0; k < iterations; ++k) {
    GenIterate it;
    it.k = k;
    it.gamma1 = gamma1;
    it.p = spec.v_map->apply(u);
    it.alpha1 = spec.fp_divergence(it.p, gamma1, k);
    it.gamma2 = spec.gamma1_update(gamma1, it.alpha1);
    it.v = spec.c1(it.alpha1) * (spec.fp(it.p, gamma1) - it.alpha1 * it.p);
    it.q = spec.v_map->adjoint(it.v);
    it.alpha2 = spec.fq_divergence(it.q, it.gamma2, k);
    it.gamma1_next = spec.gamma2_update(it.gamma2, it.alpha2);
    it.u_next = spec.c2(it.alpha2) * (spec.fq(it.q, it.gamma2) - it.alpha2 * it.q);
    if (!it.p.allFinite() || !it.v.allFinite() || !it.q.allFinite() || !it.u_next.allFinite())
      throw std::runtime_error("general_recursion_run: non-finite iterate at iteration " +
                               std::to_string(k));
    u = it.u_next;
    gamma1 = it.gamma1_next;
    traj.push_back(std::move(it));
  }
  return traj;
}

std::vector<GenSeState> general_se_run(const GenSeFunctions& funcs, double tau10,
                                       double gbar10, int iterations) {
  std::vector<GenSeState> traj;
  double tau1 = tau10;
  double gbar1 = gbar10;
  for (int k = 0; k < iterations; ++k) {
    GenSeState st;
    st.k = k;
    st.tau1 = tau1;
    st.gbar1 = gbar1;
    st.abar1 = funcs.ap(tau1, gbar1, k);
    const double c1 = funcs.c1(st.abar1);
    st.tau2 = c1 * c1 * (funcs.mp(tau1, gbar1, k) - st.abar1 * st.abar1 * tau1);
    st.gbar2 = funcs.gamma1_update(gbar1, st.abar1);
    st.abar2 = funcs.aq(st.tau2, st.gbar2, k);
    const double c2 = funcs.c2(st.abar2);
    tau1 = c2 * c2 * (funcs.mq(st.tau2, st.gbar2, k) - st.abar2 * st.abar2 * st.tau2);
    gbar1 = funcs.gamma2_update(st.gbar2, st.abar2);
    traj.push_back(st);
  }
  return traj;
}

GenRecursionSpec vamp_general_recursion(const ProblemInstance& instance,
                                        const Denoiser& denoiser,
                                        const VampConfig& config) {
  const auto& op = instance.op;
  const int n = op.cols();
  const int m = op.rows();
  const int kmin = std::min(m, n);

  // xi = U^T w zero-padded to n; w recovered from the stored instance
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(n);
  {
    const Eigen::VectorXd w = instance.y - op.forward(instance.x0);
    const Eigen::VectorXd ut_w = op.u_adjoint(w);
    xi.head(kmin) = ut_w.head(kmin);
  }
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  s.head(kmin) = op.singular_values().head(kmin);
  const double gw = instance.gamma_w;
  const Eigen::VectorXd x0 = instance.x0;
  const Denoiser* den = &denoiser;  // must outlive the returned spec

  GenRecursionSpec spec;
  spec.fp = [x0, den](const Eigen::VectorXd& p, double gamma1) {
    return Eigen::VectorXd(den->apply(p + x0, gamma1) - x0);
  };
  spec.fp_divergence = [x0, den, dseed = config.divergence_seed](
                           const Eigen::VectorXd& p, double gamma1, int k) {
    return den->divergence(p + x0, gamma1, derive_seed(dseed, static_cast<std::uint64_t>(k)))
        .value;
  };
  spec.fq = [s, xi, gw](const Eigen::VectorXd& q, double gamma2) {
    Eigen::VectorXd out(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i)
      out[i] = (gw * s[i] * xi[i] + gamma2 * q[i]) / (gw * s[i] * s[i] + gamma2);
    return out;
  };
  spec.fq_divergence = [s, gw](const Eigen::VectorXd& q, double gamma2, int) {
    double trace = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i)
      trace += gamma2 / (gw * s[i] * s[i] + gamma2);
    return trace / static_cast<double>(q.size());
  };
  spec.gamma1_update = [](double g, double a) { return g * (1.0 / a - 1.0); };
  spec.gamma2_update = spec.gamma1_update;
  spec.c1 = [](double a) { return 1.0 / (1.0 - a); };
  spec.c2 = spec.c1;
  spec.u0 = op.v_adjoint(initial_r1(instance, config) - x0);
  spec.gamma10 = config.gamma10;

  class VAdapter final : public OrthogonalMap {
   public:
    explicit VAdapter(SpectralOperator op) : op_(std::move(op)) {}
    Eigen::Index dim() const override { return op_.cols(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return op_.v_apply(x); }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override { return op_.v_adjoint(x); }

   private:
    SpectralOperator op_;
  };
  spec.v_map = std::make_shared<VAdapter>(op);
  return spec;
}

GenSeFunctions vamp_general_se(const Denoiser& denoiser, const Eigen::VectorXd& x0,
                               const Spectrum& spectrum, double gamma_w,
                               double gamma_w0, int mc_trials, std::uint64_t seed) {
  const Denoiser* den = &denoiser;  // must outlive the returned functions
  GenSeFunctions f;
  f.ap = [den, x0, mc_trials, seed](double tau1, double gamma1, int k) {
    return denoiser_se_moments(*den, x0, gamma1, tau1, mc_trials,
                               derive_seed(seed, static_cast<std::uint64_t>(k)))
        .a1;
  };
  f.mp = [den, x0, mc_trials, seed](double tau1, double gamma1, int k) {
    return denoiser_se_moments(*den, x0, gamma1, tau1, mc_trials,
                               derive_seed(seed, static_cast<std::uint64_t>(k)))
        .e1;
  };
  f.aq = [spectrum, gamma_w](double, double gamma2, int) {
    return lmmse_sensitivity_A2(gamma2, spectrum, gamma_w);
  };
  f.mq = [spectrum, gamma_w, gamma_w0](double tau2, double gamma2, int) {
    return lmmse_error_E2(gamma2, tau2, spectrum, gamma_w, gamma_w0);
  };
  f.gamma1_update = [](double g, double a) { return g * (1.0 / a - 1.0); };
  f.gamma2_update = f.gamma1_update;
  f.c1 = [](double a) { return 1.0 / (1.0 - a); };
  f.c2 = f.c1;
  return f;
}

}  // namespace vampse
