#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vampse {

// Flat key=value scenario configuration. Parsing is strict: unknown keys are
// rejected, every known key has a default.
struct ScenarioConfig {
  std::string scenario;  // se-validate | image-recovery | cond-sweep |
                         // rate-sweep | csmu-sweep | selfcal-grid |
                         // gen-recursion-check
  std::uint64_t master_seed = 1;
  int threads = 1;

  // dimensions / operator
  int n = 1024;
  double m_over_n = 0.5;
  std::string operator_kind = "dense-haar";  // dense-haar | fast-jphd
  double cond = 1.0;
  std::vector<double> cond_list{1, 10, 100, 1000};

  // signal / denoiser
  std::string denoiser = "bg-mmse";  // bg-mmse | soft-threshold | group | fir
  double rho = 0.1;
  double sigma2 = 1.0;
  double theta = 0.1;
  int group_size = 4;

  // noise
  double snr_db = 40.0;   // ignored when noiseless=1
  bool noiseless = false;
  double gamma_w = 0.0;   // 0 = match gamma_w0 (capped at 1e10 when noiseless)

  // run control
  int iterations = 10;
  int trials = 50;
  int se_trials = 500;
  double tau10 = 1.0;
  std::string init = "zero";  // zero | adjoint | se-oracle

  // image scenarios
  std::string image;  // PGM path, or "synthetic" for the piecewise generator
  int side = 64;
  int wavelet_levels = 4;
  std::string route = "wavelet";  // wavelet | direct
  std::vector<double> rate_list{0.1, 0.2, 0.3, 0.4, 0.5};

  // lifted scenarios
  int lift_subspace = 11;   // L
  int lift_factor = 64;     // P
  int lift_sparsity = 4;    // K
  double m_over_p = 0.6;
  std::vector<double> m_over_p_list{0.6};
  double b1 = 4.47213595499957939282;  // sqrt(20)
  std::string operator_style = "iid-gaussian";  // iid-gaussian | haar-geometric
  int inner_iters = 8;
  std::vector<double> k_list{2, 4, 8, 16};
  std::vector<double> l_list{2, 4, 8, 16};
};

// strict parse; throws std::runtime_error naming the offending key/value
ScenarioConfig parse_config_text(const std::string& text);
ScenarioConfig load_config(const std::string& path);
std::string dump_config(const ScenarioConfig& cfg);  // resolved, sorted keys

// Runs the scenario grid and writes results.csv, se.csv (when applicable),
// meta and timings.txt under out_dir. Byte-identical CSVs for identical
// config + seed regardless of thread count.
void run_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

// PSNR for images held in [0,255]; estimate clamped first, capped at 99 dB
double image_psnr(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth);

Eigen::MatrixXd synthetic_piecewise_image(int side, std::uint64_t seed);

struct ImagePipelineResult {
  Eigen::MatrixXd recovered;
  double psnr_db = 0.0;
};

// single image recovery through either route; writes no files itself
ImagePipelineResult image_pipeline(const Eigen::MatrixXd& img,
                                   const ScenarioConfig& cfg, double rate,
                                   std::uint64_t seed);

}  // namespace vampse
