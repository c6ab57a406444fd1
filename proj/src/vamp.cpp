#include "vampse/vamp.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "vampse/csv.hpp"
#include "vampse/rng.hpp"

namespace vampse {

namespace {
constexpr double kAlphaEps = 1e-8;

double clamp_gamma(double g, const VampConfig& c, bool& clamped) {
  if (!(g >= c.gamma_min)) {  // catches NaN as well
    clamped = true;
    return c.gamma_min;
  }
  if (g > c.gamma_max) {
    clamped = true;
    return c.gamma_max;
  }
  return g;
}
}  // namespace

LmmseWorkspace make_lmmse_workspace(const ProblemInstance& instance) {
  return LmmseWorkspace{instance.op.u_adjoint(instance.y)};
}

std::pair<Eigen::VectorXd, double> lmmse_estimate(const Eigen::VectorXd& r2,
                                                  double gamma2,
                                                  const ProblemInstance& instance,
                                                  const LmmseWorkspace& ws) {
  if (gamma2 <= 0.0) throw std::invalid_argument("lmmse_estimate: gamma2 must be positive");
  const auto& op = instance.op;
  const int n = op.cols();
  const int m = op.rows();
  const int k = std::min(m, n);
  const double gw = instance.gamma_w;
  const Eigen::VectorXd& s = op.singular_values();
  Eigen::VectorXd rt = op.v_adjoint(r2);
  Eigen::VectorXd xt(n);
  double trace = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = gw * s[i] * s[i] + gamma2;
    const double num = (i < k ? gw * s[i] * ws.ytilde[i] : 0.0) + gamma2 * rt[i];
    xt[i] = num / d;
    trace += gamma2 / d;
  }
  return {op.v_apply(xt), trace / static_cast<double>(n)};
}

std::pair<Eigen::VectorXd, double> lmmse_estimate(const Eigen::VectorXd& r2,
                                                  double gamma2,
                                                  const ProblemInstance& instance) {
  return lmmse_estimate(r2, gamma2, instance, make_lmmse_workspace(instance));
}

Eigen::VectorXd initial_r1(const ProblemInstance& instance, const VampConfig& config) {
  const Eigen::Index n = instance.x0.size();
  switch (config.init) {
    case VampInit::ZeroR:
      return Eigen::VectorXd::Zero(n);
    case VampInit::Adjoint:  // matched-filter warm start, escapes flat denoisers
      return instance.op.adjoint(instance.y);
    case VampInit::SeOracle: {
      Rng rng(derive_seed(config.init_seed, 0x5e));
      return instance.x0 + std::sqrt(config.tau10) * rng.normal_vector(n);
    }
    case VampInit::Custom:
      if (config.r1_custom.size() != n)
        throw std::invalid_argument("vamp_run: custom r1 has wrong length");
      return config.r1_custom;
  }
  throw std::logic_error("vamp_run: unknown init mode");
}

VampTrajectory vamp_run(const ProblemInstance& instance, const Denoiser& denoiser,
                        const VampConfig& config) {
  if (config.iterations < 1) throw std::invalid_argument("vamp_run: iterations must be >= 1");
  if (!(config.gamma_min > 0.0 && config.gamma_min < config.gamma_max))
    throw std::invalid_argument("vamp_run: invalid gamma clamps");
  const Eigen::Index n = instance.x0.size();
  const double dn = static_cast<double>(n);
  const LmmseWorkspace ws = make_lmmse_workspace(instance);

  Eigen::VectorXd r1 = initial_r1(instance, config);
  double gamma1 = config.gamma10;

  VampTrajectory traj;
  traj.states.reserve(config.iterations);
  for (int k = 0; k < config.iterations; ++k) {
    VampState st;
    st.k = k;
    st.r1 = r1;
    st.gamma1 = gamma1;

    // denoising half
    st.xhat1 = denoiser.apply(r1, gamma1);
    st.alpha1 = denoiser.divergence(r1, gamma1, derive_seed(config.divergence_seed, k)).value;
    if (!(st.alpha1 > kAlphaEps) || !(st.alpha1 < 1.0 - kAlphaEps)) st.degenerate = true;
    st.eta1 = gamma1 / st.alpha1;
    st.gamma2 = clamp_gamma(st.eta1 - gamma1, config, st.clamped);
    if (std::isfinite(st.eta1)) {
      st.r2 = (st.eta1 * st.xhat1 - gamma1 * r1) / st.gamma2;
    } else {
      st.r2 = (st.xhat1 - st.alpha1 * r1) / (1.0 - st.alpha1);  // alpha -> 0 limit
    }

    // LMMSE half
    auto [xhat2, alpha2] = lmmse_estimate(st.r2, st.gamma2, instance, ws);
    st.xhat2 = std::move(xhat2);
    st.alpha2 = alpha2;
    if (!(st.alpha2 > kAlphaEps) || !(st.alpha2 < 1.0 - kAlphaEps)) st.degenerate = true;
    st.eta2 = st.gamma2 / st.alpha2;
    const double gamma1_next = clamp_gamma(st.eta2 - st.gamma2, config, st.clamped);
    Eigen::VectorXd r1_next = (st.eta2 * st.xhat2 - st.gamma2 * st.r2) / gamma1_next;

    if (config.damping > 0.0 && k > 0) {
      r1_next = (1.0 - config.damping) * r1_next + config.damping * r1;
    }

    st.mse1 = (st.xhat1 - instance.x0).squaredNorm() / dn;
    st.mse2 = (st.xhat2 - instance.x0).squaredNorm() / dn;
    if (!st.xhat1.allFinite() || !st.r2.allFinite() || !st.xhat2.allFinite() ||
        !r1_next.allFinite())
      throw std::runtime_error("vamp_run: non-finite state at iteration " + std::to_string(k));

    r1 = std::move(r1_next);
    gamma1 = gamma1_next;
    traj.states.push_back(std::move(st));
  }
  traj.xhat_final = traj.states.back().xhat1;
  return traj;
}

Eigen::VectorXd draw_signal(const SignalSpec& spec, int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x516));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  switch (spec.kind) {
    case SignalSpec::Kind::BernoulliGaussian: {
      const double sd = std::sqrt(spec.sigma2);
      for (int i = 0; i < n; ++i)
        if (rng.bernoulli(spec.rho)) x[i] = sd * rng.normal();
      return x;
    }
    case SignalSpec::Kind::GroupRows: {
      if (n % spec.group_size != 0)
        throw std::invalid_argument("draw_signal: group size must divide n");
      const double sd = std::sqrt(spec.sigma2);
      for (int g = 0; g < n / spec.group_size; ++g) {
        const bool active = rng.bernoulli(spec.group_rho);
        for (int j = 0; j < spec.group_size; ++j) {
          const double z = rng.normal();  // keep the stream aligned per entry
          if (active) x[g * spec.group_size + j] = sd * z;
        }
      }
      return x;
    }
    case SignalSpec::Kind::StationaryAr: {
      const double a = spec.ar_coeff;
      if (!(std::abs(a) < 1.0))
        throw std::invalid_argument("draw_signal: AR coefficient must satisfy |a| < 1");
      x[0] = rng.normal();
      const double innov = std::sqrt(1.0 - a * a);
      for (int i = 1; i < n; ++i) x[i] = a * x[i - 1] + innov * rng.normal();
      return x;
    }
    case SignalSpec::Kind::ImageFile: {
      Eigen::MatrixXd img = read_pgm(spec.image_path);
      if (img.size() != n) throw std::invalid_argument("draw_signal: image size mismatch");
      return Eigen::Map<Eigen::VectorXd>(img.data(), img.size());
    }
    case SignalSpec::Kind::CustomVector:
      if (spec.custom.size() != n)
        throw std::invalid_argument("draw_signal: custom vector size mismatch");
      return spec.custom;
  }
  throw std::logic_error("draw_signal: unknown generator");
}

ProblemInstance make_instance(const SignalSpec& spec, const SpectralOperator& op,
                              double gamma_w0, double gamma_w, std::uint64_t seed) {
  ProblemInstance inst{draw_signal(spec, op.cols(), seed), op, {}, gamma_w0, gamma_w};
  inst.y = op.forward(inst.x0);
  if (std::isfinite(gamma_w0)) {
    if (gamma_w0 <= 0.0) throw std::invalid_argument("make_instance: gamma_w0 must be positive");
    Rng rng(derive_seed(seed, 0x201e));
    const double sd = 1.0 / std::sqrt(gamma_w0);
    for (int i = 0; i < op.rows(); ++i) inst.y[i] += sd * rng.normal();
  }
  return inst;
}

double gamma_w0_for_snr(const SpectralOperator& op, const Eigen::VectorXd& x0,
                        double snr_db) {
  const double signal = op.forward(x0).squaredNorm();
  if (signal <= 0.0) throw std::invalid_argument("gamma_w0_for_snr: zero signal energy");
  return static_cast<double>(op.rows()) * std::pow(10.0, snr_db / 10.0) / signal;
}

void write_trajectory_csv(std::ostream& out, const VampTrajectory& traj) {
  CsvWriter csv(out);
  csv.header({"k", "gamma1", "alpha1", "eta1", "gamma2", "alpha2", "eta2",
              "mse1", "mse2", "clamped_flag"});
  for (const auto& st : traj.states) {
    csv.field(st.k);
    csv.field(st.gamma1);
    csv.field(st.alpha1);
    csv.field(st.eta1);
    csv.field(st.gamma2);
    csv.field(st.alpha2);
    csv.field(st.eta2);
    csv.field(st.mse1);
    csv.field(st.mse2);
    csv.field(static_cast<int>(st.clamped));
    csv.end_row();
  }
}

}  // namespace vampse
