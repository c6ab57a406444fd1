#include "vampse/amp.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "vampse/csv.hpp"
#include "vampse/rng.hpp"

namespace vampse {

AmpTrajectory amp_run(const ProblemInstance& instance, const Denoiser& denoiser,
                      int iterations, std::uint64_t divergence_seed,
                      bool with_onsager) {
  if (iterations < 1) throw std::invalid_argument("amp_run: iterations must be >= 1");
  const auto& op = instance.op;
  const int n = op.cols();
  const int m = op.rows();
  const double dn = static_cast<double>(n);

  Eigen::VectorXd r = op.adjoint(instance.y);
  double gamma = static_cast<double>(m) / instance.y.squaredNorm();
  Eigen::VectorXd v_prev = Eigen::VectorXd::Zero(m);
  double div_prev = 0.0;

  AmpTrajectory traj;
  traj.states.reserve(iterations);
  double initial_mse = 0.0;
  int over_threshold = 0;
  for (int k = 0; k < iterations; ++k) {
    AmpState st;
    st.k = k;
    st.r = r;
    st.gamma = gamma;
    st.xhat = denoiser.apply(r, gamma);
    st.divergence = denoiser.divergence(r, gamma, derive_seed(divergence_seed, k)).value;
    st.onsager = with_onsager ? Eigen::VectorXd((dn / m) * div_prev * v_prev)
                              : Eigen::VectorXd(Eigen::VectorXd::Zero(m));
    st.v = instance.y - op.forward(st.xhat) + st.onsager;
    st.mse = (st.xhat - instance.x0).squaredNorm() / dn;
    if (k == 0) initial_mse = st.mse;

    if (!st.xhat.allFinite() || !st.v.allFinite() || !std::isfinite(st.mse)) {
      st.diverged = true;
      traj.diverged = true;
      traj.states.push_back(std::move(st));
      break;
    }
    over_threshold = (st.mse > 1e3 * initial_mse) ? over_threshold + 1 : 0;
    if (over_threshold >= 3) {
      st.diverged = true;
      traj.diverged = true;
    }

    const double vnorm2 = st.v.squaredNorm();
    r = st.xhat + op.adjoint(st.v);
    gamma = static_cast<double>(m) / vnorm2;
    div_prev = st.divergence;
    v_prev = st.v;
    traj.states.push_back(std::move(st));
    if (traj.diverged) break;
  }
  traj.xhat_final = traj.states.back().xhat;
  return traj;
}

void write_amp_trajectory_csv(std::ostream& out, const AmpTrajectory& traj) {
  CsvWriter csv(out);
  csv.header({"k", "gamma1", "alpha1", "mse1", "diverged_flag"});
  for (const auto& st : traj.states) {
    csv.field(st.k);
    csv.field(st.gamma);
    csv.field(st.divergence);
    csv.field(st.mse);
    csv.field(static_cast<int>(st.diverged));
    csv.end_row();
  }
}

}  // namespace vampse
