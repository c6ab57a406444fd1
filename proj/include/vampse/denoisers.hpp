#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vampse {

struct MonteCarloOptions {
  int probes = 8;
  double epsilon_scale = 1e-4;  // step = epsilon_scale * max(1, ||r||/sqrt(N))
};

struct DivergenceEstimate {
  enum class Mode { Analytic, MonteCarlo };
  double value = 0.0;
  Mode mode = Mode::Analytic;
  int probes_used = 0;
  double std_error = 0.0;  // Monte Carlo only
};

// A plug-in denoiser g(r, gamma): evaluation plus the normalized divergence
// <grad g> = (1/N) tr(Jacobian). Kinds with a closed form report it
// analytically; the rest fall back to the Monte Carlo probe estimator
//   (1/(N K_p)) sum_k eta_k^T [g(r + eps eta_k, gamma) - g(r, gamma)] / eps
// with i.i.d. standard normal probes eta_k, deterministic given the seed.
// Instances are immutable; apply/divergence are safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  // 0 means any length is accepted (subject to kind-specific divisibility)
  virtual Eigen::Index dim() const { return 0; }

  virtual Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const = 0;

  virtual bool has_analytic_divergence() const { return false; }
  virtual double analytic_divergence(const Eigen::VectorXd& r, double gamma) const;

  // analytic when available, otherwise Monte Carlo
  DivergenceEstimate divergence(const Eigen::VectorXd& r, double gamma,
                                std::uint64_t seed) const;
  DivergenceEstimate divergence_mc(const Eigen::VectorXd& r, double gamma,
                                   std::uint64_t seed,
                                   const MonteCarloOptions& opts) const;

  MonteCarloOptions mc_options;

 protected:
  void check_input(const Eigen::VectorXd& r) const;
};

using DenoiserPtr = std::shared_ptr<const Denoiser>;

// componentwise soft threshold, sign(r) max(|r| - theta, 0); no gamma use
class SoftThreshold final : public Denoiser {
 public:
  explicit SoftThreshold(double theta);
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  bool has_analytic_divergence() const override { return true; }
  double analytic_divergence(const Eigen::VectorXd& r, double gamma) const override;
  double theta() const { return theta_; }

 private:
  double theta_;
};

// scalar posterior mean for x ~ rho N(0, sigma_x2) + (1-rho) delta_0 observed
// as r = x + N(0, 1/gamma); returns (xhat, d xhat / d r). Log-domain
// responsibilities keep this stable up to gamma ~ 1e8 and beyond.
std::pair<double, double> bg_mmse_scalar(double r, double gamma, double rho,
                                         double sigma_x2);

class BernoulliGaussianMmse final : public Denoiser {
 public:
  BernoulliGaussianMmse(double rho, double sigma_x2);
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  bool has_analytic_divergence() const override { return true; }
  double analytic_divergence(const Eigen::VectorXd& r, double gamma) const override;
  double rho() const { return rho_; }
  double sigma_x2() const { return sigma_x2_; }

 private:
  double rho_, sigma_x2_;
};

// group-LASSO prox on rows of the L x K view: row -> row max(0, 1 - theta/|row|)
class GroupSoftThreshold final : public Denoiser {
 public:
  GroupSoftThreshold(int group_size, double theta);
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  bool has_analytic_divergence() const override { return true; }
  double analytic_divergence(const Eigen::VectorXd& r, double gamma) const override;
  int group_size() const { return group_size_; }

 private:
  int group_size_;
  double theta_;
};

// linear convolution with a finite tap vector, truncated to the first N
// samples; origin is the index of the lag-zero tap
class FirDenoiser final : public Denoiser {
 public:
  explicit FirDenoiser(Eigen::VectorXd taps, int origin = 0);
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  bool has_analytic_divergence() const override { return true; }
  double analytic_divergence(const Eigen::VectorXd& r, double gamma) const override;
  // max |H(e^{i theta})| over a frequency grid (declared Lipschitz constant)
  double frequency_gain_bound(int grid = 512) const;

 private:
  Eigen::VectorXd taps_;
  int origin_;
};

// small multichannel 1-D CNN: conv layers interleaved with separable
// activations; input is vec of a (channels x time) matrix, column-major
struct CnnLayer {
  enum class Type { Conv, Relu, Sigmoid };
  Type type = Type::Conv;
  // taps[k] is (out_channels x in_channels); applied causally with zero pad
  std::vector<Eigen::MatrixXd> taps;
};

class CnnDenoiser final : public Denoiser {
 public:
  CnnDenoiser(int input_channels, std::vector<CnnLayer> layers);
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  int input_channels() const { return channels0_; }
  const std::vector<CnnLayer>& layers() const { return layers_; }
  // per Appendix-style bound: conv layers contribute
  // max_theta sigma_max(H(e^{i theta})), activations contribute 1
  double layer_gain(const CnnLayer& layer, int grid = 512) const;
  double lipschitz_bound(int grid = 512) const;

 private:
  int channels0_;
  std::vector<CnnLayer> layers_;
};

// flat little-endian binary with a one-line JSON header
void save_cnn_weights(const std::string& path, int input_channels,
                      const std::vector<CnnLayer>& layers);
std::shared_ptr<CnnDenoiser> load_cnn_denoiser(const std::string& path);

// singular value thresholding on the N1 x N2 reshape; gamma is the threshold
class SvtDenoiser final : public Denoiser {
 public:
  SvtDenoiser(int rows, int cols);
  Eigen::Index dim() const override {
    return static_cast<Eigen::Index>(rows_) * cols_;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;

 private:
  int rows_, cols_;
};

// MMSE-style denoiser for the lifted rank-one vector x = vec(c b^T),
// approximated by alternating conditional posterior-mean updates:
// b ~ N(0, I), c ~ Bernoulli-Gaussian(rho, sigma_c2), r = x + N(0, I/gamma).
// Known b entries (e.g. b_1 in CS with matrix uncertainty) are pinned through
// the clamp mask every inner round.
class LiftedRankOneDenoiser final : public Denoiser {
 public:
  LiftedRankOneDenoiser(int subspace_dim, int factor_len, double rho,
                        double sigma_c2, int inner_iters);
  Eigen::Index dim() const override {
    return static_cast<Eigen::Index>(subspace_dim_) * factor_len_;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& r, double gamma) const override;
  void clamp_b(int index, double value);
  // factor estimates for the last-computed input (stateless: recomputed)
  std::pair<Eigen::VectorXd, Eigen::VectorXd> factor_estimates(
      const Eigen::VectorXd& r, double gamma) const;

 private:
  int subspace_dim_, factor_len_;  // L, P
  double rho_, sigma_c2_;
  int inner_iters_;
  std::vector<std::pair<int, double>> clamps_;
};

// Stein identity probe (convergent-under-Gaussian-noise condition):
// draws (z1, z2) with 2x2 covariance S, returns
//   lhs = <grad g(x0 + z1, gamma)>,  rhs = g(x0 + z1, gamma)^T z2 / (N S12).
// The two agree within Monte Carlo error for large N.
struct SteinCheck {
  double lhs = 0.0;
  double rhs = 0.0;
};
SteinCheck stein_identity_check(const Denoiser& den, const Eigen::VectorXd& x0,
                                const Eigen::Matrix2d& s, double gamma,
                                std::uint64_t seed);

}  // namespace vampse
