#include "vampse/denoisers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vampse/rng.hpp"

namespace vampse {

void Denoiser::check_input(const Eigen::VectorXd& r) const {
  if (dim() != 0 && r.size() != dim())
    throw std::invalid_argument("denoiser: dimension mismatch");
  if (!r.allFinite()) throw std::invalid_argument("denoiser: non-finite input");
}

double Denoiser::analytic_divergence(const Eigen::VectorXd&, double) const {
  throw std::logic_error("denoiser: no analytic divergence for this kind");
}

DivergenceEstimate Denoiser::divergence(const Eigen::VectorXd& r, double gamma,
                                        std::uint64_t seed) const {
  if (has_analytic_divergence()) {
    DivergenceEstimate est;
    est.value = analytic_divergence(r, gamma);
    est.mode = DivergenceEstimate::Mode::Analytic;
    return est;
  }
  return divergence_mc(r, gamma, seed, mc_options);
}

DivergenceEstimate Denoiser::divergence_mc(const Eigen::VectorXd& r,
                                           double gamma, std::uint64_t seed,
                                           const MonteCarloOptions& opts) const {
  if (opts.probes < 1)
    throw std::invalid_argument("divergence_mc: probes must be positive");
  check_input(r);
  const Eigen::Index n = r.size();
  const double eps =
      opts.epsilon_scale * std::max(1.0, r.norm() / std::sqrt(static_cast<double>(n)));
  const Eigen::VectorXd base = apply(r, gamma);
  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (int k = 0; k < opts.probes; ++k) {
    const Eigen::VectorXd eta = rng.normal_vector(n);
    const Eigen::VectorXd shifted = apply(r + eps * eta, gamma);
    const double est = eta.dot(shifted - base) / (eps * static_cast<double>(n));
    sum += est;
    sum_sq += est * est;
  }
  DivergenceEstimate est;
  est.value = sum / opts.probes;
  est.mode = DivergenceEstimate::Mode::MonteCarlo;
  est.probes_used = opts.probes;
  if (opts.probes > 1) {
    const double var = (sum_sq - sum * sum / opts.probes) / (opts.probes - 1);
    est.std_error = std::sqrt(std::max(0.0, var) / opts.probes);
  }
  return est;
}

// ---------------- soft threshold ----------------

SoftThreshold::SoftThreshold(double theta) : theta_(theta) {
  if (theta < 0.0) throw std::invalid_argument("SoftThreshold: theta must be >= 0");
}

Eigen::VectorXd SoftThreshold::apply(const Eigen::VectorXd& r, double) const {
  check_input(r);
  Eigen::VectorXd out(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double a = std::abs(r[i]) - theta_;
    out[i] = a > 0.0 ? (r[i] > 0.0 ? a : -a) : 0.0;
  }
  return out;
}

double SoftThreshold::analytic_divergence(const Eigen::VectorXd& r, double) const {
  check_input(r);
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (std::abs(r[i]) > theta_) ++active;
  return static_cast<double>(active) / static_cast<double>(r.size());
}

// ---------------- Bernoulli-Gaussian MMSE ----------------

std::pair<double, double> bg_mmse_scalar(double r, double gamma, double rho,
                                         double sigma_x2) {
  const double v = 1.0 / gamma;
  const double gain = sigma_x2 / (sigma_x2 + v);
  // log responsibility ratio of the active component
  const double t = std::log(rho) - std::log1p(-rho) +
                   0.5 * std::log(v / (sigma_x2 + v)) +
                   0.5 * r * r * gain / v;
  double pi;
  if (t >= 0.0) {
    pi = 1.0 / (1.0 + std::exp(-t));
  } else {
    const double e = std::exp(t);
    pi = e / (1.0 + e);
  }
  const double xhat = pi * gain * r;
  const double deriv = pi * gain * (1.0 + (1.0 - pi) * gain * r * r / v);
  return {xhat, deriv};
}

BernoulliGaussianMmse::BernoulliGaussianMmse(double rho, double sigma_x2)
    : rho_(rho), sigma_x2_(sigma_x2) {
  if (!(rho > 0.0 && rho < 1.0))
    throw std::invalid_argument("BernoulliGaussianMmse: rho must be in (0,1)");
  if (sigma_x2 <= 0.0)
    throw std::invalid_argument("BernoulliGaussianMmse: sigma_x2 must be positive");
}

Eigen::VectorXd BernoulliGaussianMmse::apply(const Eigen::VectorXd& r,
                                             double gamma) const {
  check_input(r);
  if (gamma <= 0.0) throw std::invalid_argument("BernoulliGaussianMmse: gamma must be positive");
  Eigen::VectorXd out(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i)
    out[i] = bg_mmse_scalar(r[i], gamma, rho_, sigma_x2_).first;
  return out;
}

double BernoulliGaussianMmse::analytic_divergence(const Eigen::VectorXd& r,
                                                  double gamma) const {
  check_input(r);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    sum += bg_mmse_scalar(r[i], gamma, rho_, sigma_x2_).second;
  return sum / static_cast<double>(r.size());
}

// ---------------- group soft threshold ----------------

GroupSoftThreshold::GroupSoftThreshold(int group_size, double theta)
    : group_size_(group_size), theta_(theta) {
  if (group_size < 1) throw std::invalid_argument("GroupSoftThreshold: group size must be >= 1");
  if (theta < 0.0) throw std::invalid_argument("GroupSoftThreshold: theta must be >= 0");
}

Eigen::VectorXd GroupSoftThreshold::apply(const Eigen::VectorXd& r, double) const {
  check_input(r);
  if (r.size() % group_size_ != 0)
    throw std::invalid_argument("GroupSoftThreshold: group size must divide N");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(r.size());
  const Eigen::Index groups = r.size() / group_size_;
  for (Eigen::Index g = 0; g < groups; ++g) {
    const auto row = r.segment(g * group_size_, group_size_);
    const double norm = row.norm();
    if (norm > theta_) out.segment(g * group_size_, group_size_) = row * (1.0 - theta_ / norm);
  }
  return out;
}

double GroupSoftThreshold::analytic_divergence(const Eigen::VectorXd& r, double) const {
  check_input(r);
  if (r.size() % group_size_ != 0)
    throw std::invalid_argument("GroupSoftThreshold: group size must divide N");
  const Eigen::Index groups = r.size() / group_size_;
  const double k = static_cast<double>(group_size_);
  double sum = 0.0;  // active rows contribute K - theta (K-1)/|row|
  for (Eigen::Index g = 0; g < groups; ++g) {
    const double norm = r.segment(g * group_size_, group_size_).norm();
    if (norm > theta_) sum += k - theta_ * (k - 1.0) / norm;
  }
  return sum / static_cast<double>(r.size());
}

// ---------------- FIR convolution ----------------

FirDenoiser::FirDenoiser(Eigen::VectorXd taps, int origin)
    : taps_(std::move(taps)), origin_(origin) {
  if (taps_.size() == 0) throw std::invalid_argument("FirDenoiser: empty tap vector");
  if (origin_ < 0 || origin_ >= taps_.size())
    throw std::invalid_argument("FirDenoiser: origin outside tap range");
}

Eigen::VectorXd FirDenoiser::apply(const Eigen::VectorXd& r, double) const {
  check_input(r);
  const Eigen::Index n = r.size();
  if (n <= taps_.size()) throw std::invalid_argument("FirDenoiser: input shorter than filter");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  // y_n = sum_k h_k r_{n - (k - origin)}, truncated to the first n samples
  for (Eigen::Index k = 0; k < taps_.size(); ++k) {
    const Eigen::Index lag = k - origin_;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index j = i - lag;
      if (j >= 0 && j < n) out[i] += taps_[k] * r[j];
    }
  }
  return out;
}

double FirDenoiser::analytic_divergence(const Eigen::VectorXd& r, double) const {
  check_input(r);
  return taps_[origin_];  // lag-zero tap is the Jacobian diagonal
}

double FirDenoiser::frequency_gain_bound(int grid) const {
  double best = 0.0;
  for (int g = 0; g < grid; ++g) {
    const double theta = 2.0 * M_PI * g / grid;
    std::complex<double> h(0.0, 0.0);
    for (Eigen::Index k = 0; k < taps_.size(); ++k)
      h += taps_[k] * std::exp(std::complex<double>(0.0, -theta * static_cast<double>(k - origin_)));
    best = std::max(best, std::abs(h));
  }
  return best;
}

// ---------------- CNN stack ----------------

CnnDenoiser::CnnDenoiser(int input_channels, std::vector<CnnLayer> layers)
    : channels0_(input_channels), layers_(std::move(layers)) {
  if (input_channels < 1) throw std::invalid_argument("CnnDenoiser: invalid channel count");
  int ch = input_channels;
  for (const auto& layer : layers_) {
    if (layer.type == CnnLayer::Type::Conv) {
      if (layer.taps.empty()) throw std::invalid_argument("CnnDenoiser: empty conv kernel");
      const Eigen::Index out_ch = layer.taps[0].rows();
      for (const auto& t : layer.taps) {
        if (t.rows() != out_ch || t.cols() != ch)
          throw std::invalid_argument("CnnDenoiser: channel mismatch in conv kernel");
        if (!t.allFinite()) throw std::invalid_argument("CnnDenoiser: non-finite weights");
      }
      ch = static_cast<int>(out_ch);
    }
  }
  if (ch != input_channels)
    throw std::invalid_argument("CnnDenoiser: output channels must match input for a denoiser");
}

Eigen::VectorXd CnnDenoiser::apply(const Eigen::VectorXd& r, double) const {
  check_input(r);
  if (r.size() % channels0_ != 0)
    throw std::invalid_argument("CnnDenoiser: input not divisible by channel count");
  const Eigen::Index t_len = r.size() / channels0_;
  Eigen::MatrixXd z = Eigen::Map<const Eigen::MatrixXd>(r.data(), channels0_, t_len);
  for (const auto& layer : layers_) {
    switch (layer.type) {
      case CnnLayer::Type::Conv: {
        const Eigen::Index out_ch = layer.taps[0].rows();
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(out_ch, t_len);
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(layer.taps.size()); ++k)
          for (Eigen::Index n = k; n < t_len; ++n)
            next.col(n) += layer.taps[static_cast<size_t>(k)] * z.col(n - k);
        z = std::move(next);
        break;
      }
      case CnnLayer::Type::Relu:
        z = z.cwiseMax(0.0);
        break;
      case CnnLayer::Type::Sigmoid:
        z = z.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        break;
    }
  }
  return Eigen::Map<Eigen::VectorXd>(z.data(), z.size());
}

double CnnDenoiser::layer_gain(const CnnLayer& layer, int grid) const {
  if (layer.type != CnnLayer::Type::Conv) return 1.0;
  double best = 0.0;
  for (int g = 0; g < grid; ++g) {
    const double theta = 2.0 * M_PI * g / grid;
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(layer.taps[0].rows(), layer.taps[0].cols());
    for (size_t k = 0; k < layer.taps.size(); ++k)
      h += layer.taps[k] * std::exp(std::complex<double>(0.0, -theta * static_cast<double>(k)));
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(h);
    best = std::max(best, svd.singularValues()[0]);
  }
  return best;
}

double CnnDenoiser::lipschitz_bound(int grid) const {
  double prod = 1.0;
  for (const auto& layer : layers_) prod *= layer_gain(layer, grid);
  return prod;
}

void save_cnn_weights(const std::string& path, int input_channels,
                      const std::vector<CnnLayer>& layers) {
  nlohmann::json header;
  header["input_channels"] = input_channels;
  header["layers"] = nlohmann::json::array();
  for (const auto& layer : layers) {
    nlohmann::json j;
    switch (layer.type) {
      case CnnLayer::Type::Conv:
        j["type"] = "conv";
        j["out"] = layer.taps[0].rows();
        j["in"] = layer.taps[0].cols();
        j["taps"] = layer.taps.size();
        break;
      case CnnLayer::Type::Relu:
        j["type"] = "relu";
        break;
      case CnnLayer::Type::Sigmoid:
        j["type"] = "sigmoid";
        break;
    }
    header["layers"].push_back(j);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_cnn_weights: cannot open " + path);
  out << header.dump() << '\n';
  for (const auto& layer : layers) {
    if (layer.type != CnnLayer::Type::Conv) continue;
    for (const auto& t : layer.taps)
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
  }
}

std::shared_ptr<CnnDenoiser> load_cnn_denoiser(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cnn_denoiser: cannot open " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json header = nlohmann::json::parse(line);
  const int input_channels = header.at("input_channels").get<int>();
  std::vector<CnnLayer> layers;
  for (const auto& j : header.at("layers")) {
    CnnLayer layer;
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv") {
      layer.type = CnnLayer::Type::Conv;
      const Eigen::Index out_ch = j.at("out").get<Eigen::Index>();
      const Eigen::Index in_ch = j.at("in").get<Eigen::Index>();
      const size_t taps = j.at("taps").get<size_t>();
      for (size_t k = 0; k < taps; ++k) {
        Eigen::MatrixXd t(out_ch, in_ch);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
        if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * t.size()))
          throw std::runtime_error("load_cnn_denoiser: truncated weights: " + path);
        layer.taps.push_back(std::move(t));
      }
    } else if (type == "relu") {
      layer.type = CnnLayer::Type::Relu;
    } else if (type == "sigmoid") {
      layer.type = CnnLayer::Type::Sigmoid;
    } else {
      throw std::runtime_error("load_cnn_denoiser: unknown activation tag " + type);
    }
    layers.push_back(std::move(layer));
  }
  return std::make_shared<CnnDenoiser>(input_channels, std::move(layers));
}

// ---------------- SVT ----------------

SvtDenoiser::SvtDenoiser(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("SvtDenoiser: invalid shape");
}

Eigen::VectorXd SvtDenoiser::apply(const Eigen::VectorXd& r, double gamma) const {
  check_input(r);
  if (gamma < 0.0) throw std::invalid_argument("SvtDenoiser: gamma must be >= 0");
  Eigen::MatrixXd mat = Eigen::Map<const Eigen::MatrixXd>(r.data(), rows_, cols_);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sv = svd.singularValues();
  for (Eigen::Index i = 0; i < sv.size(); ++i) sv[i] = std::max(0.0, sv[i] - gamma);
  Eigen::MatrixXd out = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  return Eigen::Map<Eigen::VectorXd>(out.data(), out.size());
}

// ---------------- lifted rank-one ----------------

LiftedRankOneDenoiser::LiftedRankOneDenoiser(int subspace_dim, int factor_len,
                                             double rho, double sigma_c2,
                                             int inner_iters)
    : subspace_dim_(subspace_dim),
      factor_len_(factor_len),
      rho_(rho),
      sigma_c2_(sigma_c2),
      inner_iters_(inner_iters) {
  if (subspace_dim < 1 || factor_len < 1)
    throw std::invalid_argument("LiftedRankOneDenoiser: invalid shape");
  if (!(rho > 0.0 && rho < 1.0) || sigma_c2 <= 0.0)
    throw std::invalid_argument("LiftedRankOneDenoiser: invalid prior");
  if (inner_iters < 1)
    throw std::invalid_argument("LiftedRankOneDenoiser: inner_iters must be >= 1");
}

void LiftedRankOneDenoiser::clamp_b(int index, double value) {
  if (index < 0 || index >= subspace_dim_)
    throw std::invalid_argument("LiftedRankOneDenoiser: clamp index out of range");
  clamps_.emplace_back(index, value);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> LiftedRankOneDenoiser::factor_estimates(
    const Eigen::VectorXd& r, double gamma) const {
  check_input(r);
  if (gamma <= 0.0) throw std::invalid_argument("LiftedRankOneDenoiser: gamma must be positive");
  // columns of the P x L view are b_l * c
  Eigen::MatrixXd mat = Eigen::Map<const Eigen::MatrixXd>(r.data(), factor_len_, subspace_dim_);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double scale = std::sqrt(svd.singularValues()[0]);
  Eigen::VectorXd c = svd.matrixU().col(0) * scale;
  Eigen::VectorXd b = svd.matrixV().col(0) * scale;
  for (const auto& [idx, val] : clamps_) b[idx] = val;

  for (int iter = 0; iter < inner_iters_; ++iter) {
    // b_l | c: Gaussian posterior from the l-th column, prior N(0,1)
    const double c_energy = c.squaredNorm();
    for (int l = 0; l < subspace_dim_; ++l)
      b[l] = gamma * c.dot(mat.col(l)) / (1.0 + gamma * c_energy);
    for (const auto& [idx, val] : clamps_) b[idx] = val;

    // c_p | b: scalar pseudo-observation with precision gamma |b|^2
    const double b_energy = b.squaredNorm();
    if (b_energy == 0.0) {
      c.setZero();
      continue;
    }
    const double eff_gamma = gamma * b_energy;
    for (int p = 0; p < factor_len_; ++p) {
      const double obs = mat.row(p).dot(b) / b_energy;
      c[p] = bg_mmse_scalar(obs, eff_gamma, rho_, sigma_c2_).first;
    }
  }
  return {b, c};
}

Eigen::VectorXd LiftedRankOneDenoiser::apply(const Eigen::VectorXd& r,
                                             double gamma) const {
  auto [b, c] = factor_estimates(r, gamma);
  Eigen::MatrixXd outer = c * b.transpose();  // P x L
  return Eigen::Map<Eigen::VectorXd>(outer.data(), outer.size());
}

// ---------------- Stein identity ----------------

SteinCheck stein_identity_check(const Denoiser& den, const Eigen::VectorXd& x0,
                                const Eigen::Matrix2d& s, double gamma,
                                std::uint64_t seed) {
  const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
  if (s(0, 1) == 0.0 || det <= 0.0 || s(0, 0) <= 0.0)
    throw std::invalid_argument("stein_identity_check: S singular or S12 = 0");
  const Eigen::Index n = x0.size();
  // Cholesky of the 2x2 covariance
  const double l11 = std::sqrt(s(0, 0));
  const double l21 = s(0, 1) / l11;
  const double l22 = std::sqrt(s(1, 1) - l21 * l21);
  Rng rng(seed);
  Eigen::VectorXd z1(n), z2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = rng.normal();
    const double b = rng.normal();
    z1[i] = l11 * a;
    z2[i] = l21 * a + l22 * b;
  }
  const Eigen::VectorXd r = x0 + z1;
  SteinCheck out;
  out.lhs = den.divergence(r, gamma, derive_seed(seed, 1)).value;
  out.rhs = den.apply(r, gamma).dot(z2) / (static_cast<double>(n) * s(0, 1));
  return out;
}

}  // namespace vampse
