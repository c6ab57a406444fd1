#include "vampse/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vampse/amp.hpp"
#include "vampse/csv.hpp"
#include "vampse/lifting.hpp"
#include "vampse/rng.hpp"
#include "vampse/state_evolution.hpp"
#include "vampse/vamp.hpp"

namespace vampse {

namespace {

constexpr double kNoiselessGammaW = 1e10;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::runtime_error("config: bad numeric value for '" + key + "': " + v);
  }
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw std::runtime_error("config: expected integer for '" + key + "'");
  return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for '" + key + "': " + v);
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  if (out.empty()) throw std::runtime_error("config: empty list for '" + key + "'");
  return out;
}

std::string list_str(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

// tasks indexed 0..count-1, deterministic result slots; the first exception
// wins and is rethrown after join
void run_parallel(int threads, int count, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct Timing {
  std::string label;
  double ms = 0.0;
};

class ScopedTimer {
 public:
  ScopedTimer(std::string label, std::vector<Timing>& sink, int slot)
      : label_(std::move(label)), sink_(sink), slot_(slot),
        start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    const auto end = std::chrono::steady_clock::now();
    sink_[slot_] = {label_, std::chrono::duration<double, std::milli>(end - start_).count()};
  }

 private:
  std::string label_;
  std::vector<Timing>& sink_;
  int slot_;
  std::chrono::steady_clock::time_point start_;
};

void write_timings(const std::string& out_dir, const std::vector<Timing>& timings) {
  std::ofstream out(out_dir + "/timings.txt");
  for (const auto& t : timings)
    if (!t.label.empty()) out << t.label << ' ' << format_double(t.ms) << " ms\n";
}

void write_meta(const std::string& out_dir, const ScenarioConfig& cfg) {
  std::ofstream out(out_dir + "/meta");
  out << dump_config(cfg);
}

std::ofstream open_csv(const std::string& out_dir, const std::string& name) {
  std::ofstream out(out_dir + "/" + name, std::ios::binary);
  if (!out) throw std::runtime_error("run_scenario: cannot write " + out_dir + "/" + name);
  return out;
}

DenoiserPtr make_denoiser(const ScenarioConfig& cfg) {
  if (cfg.denoiser == "bg-mmse")
    return std::make_shared<BernoulliGaussianMmse>(cfg.rho, cfg.sigma2);
  if (cfg.denoiser == "soft-threshold") return std::make_shared<SoftThreshold>(cfg.theta);
  if (cfg.denoiser == "group")
    return std::make_shared<GroupSoftThreshold>(cfg.group_size, cfg.theta);
  throw std::runtime_error("config: unknown denoiser '" + cfg.denoiser + "'");
}

SignalSpec make_signal_spec(const ScenarioConfig& cfg) {
  SignalSpec spec;
  spec.kind = SignalSpec::Kind::BernoulliGaussian;
  spec.rho = cfg.rho;
  spec.sigma2 = cfg.sigma2;
  return spec;
}

VampInit parse_init(const std::string& name) {
  if (name == "zero") return VampInit::ZeroR;
  if (name == "adjoint") return VampInit::Adjoint;
  if (name == "se-oracle") return VampInit::SeOracle;
  throw std::runtime_error("config: unknown init '" + name + "'");
}

SpectralOperator make_measurement_operator(const ScenarioConfig& cfg, int n, int m,
                                           double cond, std::uint64_t seed) {
  if (cfg.operator_kind == "dense-haar") {
    return build_operator(geometric_spectrum(m, n, cond), derive_seed(seed, 0x75),
                          derive_seed(seed, 0x76));
  }
  if (cfg.operator_kind == "fast-jphd") {
    if (cond == 1.0) return fast_jphd_operator(n, m, seed);
    return fast_jphd_operator(geometric_spectrum(m, n, cond), seed);
  }
  throw std::runtime_error("config: unknown operator '" + cfg.operator_kind + "'");
}

double nmse_db(const Eigen::VectorXd& xhat, const Eigen::VectorXd& x0) {
  const double ratio = (xhat - x0).squaredNorm() / x0.squaredNorm();
  return ratio <= 0.0 ? -300.0 : std::max(-300.0, 10.0 * std::log10(ratio));
}

// ---------------- se-validate ----------------

void run_se_validate(const ScenarioConfig& cfg, const std::string& out_dir,
                     std::vector<Timing>& timings) {
  const int n = cfg.n;
  const int m = std::max(1, static_cast<int>(std::lround(cfg.m_over_n * n)));
  const DenoiserPtr den = make_denoiser(cfg);
  const SignalSpec sig = make_signal_spec(cfg);

  struct CellOut {
    std::vector<SeState> se;
    std::vector<std::string> rows;
  };
  std::vector<CellOut> cells(cfg.cond_list.size());
  timings.resize(cfg.cond_list.size() * cfg.trials + cfg.cond_list.size());

  for (size_t ci = 0; ci < cfg.cond_list.size(); ++ci) {
    const double cond = cfg.cond_list[ci];
    const std::uint64_t cell_seed = derive_seed(cfg.master_seed, ci);
    const SpectralOperator op =
        make_measurement_operator(cfg, n, m, cond, derive_seed(cell_seed, 0x09));

    // operating point fixed from the trial-0 signal draw
    const Eigen::VectorXd x0_ref = draw_signal(sig, n, derive_seed(cell_seed, 0));
    double gamma_w0 = std::numeric_limits<double>::infinity();
    if (!cfg.noiseless) gamma_w0 = gamma_w0_for_snr(op, x0_ref, cfg.snr_db);
    const double gamma_w =
        cfg.gamma_w > 0.0 ? cfg.gamma_w
                          : (cfg.noiseless ? kNoiselessGammaW : gamma_w0);

    {
      // reference trajectory for se.csv; the per-row comparison below uses a
      // per-signal SE conditioned on each trial's own x0
      ScopedTimer t("se cond=" + format_double(cond), timings,
                    static_cast<int>(cfg.cond_list.size() * cfg.trials + ci));
      cells[ci].se = se_run(*den, x0_ref, op.spectrum(), gamma_w, gamma_w0, cfg.tau10,
                            1.0 / cfg.tau10, cfg.iterations, cfg.se_trials,
                            derive_seed(cell_seed, 0x5e));
    }

    cells[ci].rows.resize(static_cast<size_t>(cfg.trials));
    run_parallel(cfg.threads, cfg.trials, [&, ci, cell_seed, cond](int t) {
      ScopedTimer timer("trial cond=" + format_double(cond) + " seed=" + std::to_string(t),
                        timings, static_cast<int>(ci * cfg.trials + t));
      const std::uint64_t trial_seed = derive_seed(cell_seed, static_cast<std::uint64_t>(t));
      ProblemInstance inst = make_instance(sig, op, gamma_w0, gamma_w, trial_seed);
      VampConfig vc;
      vc.iterations = cfg.iterations;
      vc.init = VampInit::SeOracle;
      vc.tau10 = cfg.tau10;
      vc.gamma10 = 1.0 / cfg.tau10;
      vc.init_seed = derive_seed(trial_seed, 0x11);
      vc.divergence_seed = derive_seed(trial_seed, 0xd1);
      const VampTrajectory traj = vamp_run(inst, *den, vc);
      const auto se = se_run(*den, inst.x0, op.spectrum(), gamma_w, gamma_w0, cfg.tau10,
                             1.0 / cfg.tau10, cfg.iterations, cfg.se_trials,
                             derive_seed(trial_seed, 0x5e));
      const auto gauss = gaussianity_diagnostics(traj, inst, se);

      std::ostringstream os;
      CsvWriter csv(os);
      for (size_t k = 0; k < traj.states.size(); ++k) {
        const double mse_db = 10.0 * std::log10(traj.states[k].mse1);
        csv.field(cond);
        csv.field(t);
        csv.field(static_cast<int>(k));
        csv.field(mse_db);
        if (k < se.size() && !se[k].degenerate) {
          const double se_db = 10.0 * std::log10(se[k].mse1);
          csv.field(se_db);
          csv.field(std::abs(mse_db - se_db));
        } else {
          csv.field(std::numeric_limits<double>::quiet_NaN());
          csv.field(std::numeric_limits<double>::quiet_NaN());
        }
        if (k < gauss.size()) {
          csv.field(gauss[k].var_p);
          csv.field(gauss[k].tau1);
          csv.field(gauss[k].kurt_p);
          csv.field(gauss[k].var_q);
          csv.field(gauss[k].tau2);
          csv.field(gauss[k].kurt_q);
        } else {
          for (int f = 0; f < 6; ++f) csv.field(std::numeric_limits<double>::quiet_NaN());
        }
        csv.end_row();
      }
      cells[ci].rows[static_cast<size_t>(t)] = os.str();
    });
  }

  auto results = open_csv(out_dir, "results.csv");
  CsvWriter rcsv(results);
  rcsv.header({"cond", "seed", "k", "mse1_db", "se_mse1_db", "gap_db", "var_p",
               "tau1", "kurt_p", "var_q", "tau2", "kurt_q"});
  for (const auto& cell : cells)
    for (const auto& r : cell.rows) results << r;

  auto sefile = open_csv(out_dir, "se.csv");
  CsvWriter scsv(sefile);
  scsv.header({"cond", "k", "tau1", "tau2", "gbar1", "gbar2", "abar1", "abar2",
               "mse1_db", "mse2_db", "e1_stderr", "a1_stderr"});
  for (size_t ci = 0; ci < cells.size(); ++ci)
    for (const auto& st : cells[ci].se) {
      scsv.field(cfg.cond_list[ci]);
      scsv.field(st.k);
      scsv.field(st.tau1);
      scsv.field(st.tau2);
      scsv.field(st.gbar1);
      scsv.field(st.gbar2);
      scsv.field(st.abar1);
      scsv.field(st.abar2);
      scsv.field(st.degenerate ? std::numeric_limits<double>::quiet_NaN()
                               : 10.0 * std::log10(st.mse1));
      scsv.field(st.degenerate ? std::numeric_limits<double>::quiet_NaN()
                               : 10.0 * std::log10(st.mse2));
      scsv.field(st.e1_stderr);
      scsv.field(st.a1_stderr);
      scsv.end_row();
    }
}

// ---------------- cond-sweep ----------------

void run_cond_sweep(const ScenarioConfig& cfg, const std::string& out_dir,
                    std::vector<Timing>& timings) {
  const int n = cfg.n;
  const int m = std::max(1, static_cast<int>(std::lround(cfg.m_over_n * n)));
  const DenoiserPtr den = make_denoiser(cfg);
  const SignalSpec sig = make_signal_spec(cfg);
  const int count = static_cast<int>(cfg.cond_list.size()) * cfg.trials;
  std::vector<std::string> rows(static_cast<size_t>(count));
  timings.resize(static_cast<size_t>(count));

  // operators shared across trials within a cell
  std::vector<SpectralOperator> ops;
  for (size_t ci = 0; ci < cfg.cond_list.size(); ++ci)
    ops.push_back(make_measurement_operator(cfg, n, m, cfg.cond_list[ci],
                                            derive_seed(cfg.master_seed, ci, 0x09)));

  run_parallel(cfg.threads, count, [&](int job) {
    const int ci = job / cfg.trials;
    const int t = job % cfg.trials;
    const double cond = cfg.cond_list[static_cast<size_t>(ci)];
    ScopedTimer timer("cond=" + format_double(cond) + " seed=" + std::to_string(t), timings, job);
    const std::uint64_t trial_seed =
        derive_seed(cfg.master_seed, static_cast<std::uint64_t>(ci),
                    static_cast<std::uint64_t>(t));
    double gamma_w0 = std::numeric_limits<double>::infinity();
    if (!cfg.noiseless) {
      const Eigen::VectorXd probe = draw_signal(sig, n, trial_seed);
      gamma_w0 = gamma_w0_for_snr(ops[static_cast<size_t>(ci)], probe, cfg.snr_db);
    }
    const double gamma_w =
        cfg.gamma_w > 0.0 ? cfg.gamma_w : (cfg.noiseless ? kNoiselessGammaW : gamma_w0);
    ProblemInstance inst =
        make_instance(sig, ops[static_cast<size_t>(ci)], gamma_w0, gamma_w, trial_seed);

    VampConfig vc;
    vc.iterations = cfg.iterations;
    vc.init = parse_init(cfg.init);
    vc.divergence_seed = derive_seed(trial_seed, 0xd1);
    const VampTrajectory vtraj = vamp_run(inst, *den, vc);
    const AmpTrajectory atraj =
        amp_run(inst, *den, cfg.iterations, derive_seed(trial_seed, 0xd2));

    std::ostringstream os;
    CsvWriter csv(os);
    csv.field(cond);
    csv.field(t);
    csv.field(std::string("vamp"));
    csv.field(nmse_db(vtraj.xhat_final, inst.x0));
    csv.field(0);
    csv.end_row();
    csv.field(cond);
    csv.field(t);
    csv.field(std::string("amp"));
    csv.field(nmse_db(atraj.xhat_final, inst.x0));
    csv.field(static_cast<int>(atraj.diverged));
    csv.end_row();
    rows[static_cast<size_t>(job)] = os.str();
  });

  auto results = open_csv(out_dir, "results.csv");
  CsvWriter rcsv(results);
  rcsv.header({"cond", "seed", "algorithm", "nmse_db", "diverged"});
  for (const auto& r : rows) results << r;
}

// ---------------- image pipeline + sweeps ----------------

Eigen::MatrixXd scenario_image(const ScenarioConfig& cfg) {
  if (cfg.image.empty() || cfg.image == "synthetic")
    return synthetic_piecewise_image(cfg.side, derive_seed(cfg.master_seed, 0x14a6e));
  return read_pgm(cfg.image);
}

void run_image_recovery(const ScenarioConfig& cfg, const std::string& out_dir,
                        std::vector<Timing>& timings) {
  timings.resize(1);
  ScopedTimer timer("image-recovery", timings, 0);
  const Eigen::MatrixXd img = scenario_image(cfg);
  const ImagePipelineResult res =
      image_pipeline(img, cfg, cfg.m_over_n, derive_seed(cfg.master_seed, 0));
  write_pgm(out_dir + "/recovered.pgm", res.recovered);
  auto results = open_csv(out_dir, "results.csv");
  CsvWriter csv(results);
  csv.header({"rate", "route", "psnr_db"});
  csv.field(cfg.m_over_n);
  csv.field(cfg.route);
  csv.field(res.psnr_db);
  csv.end_row();
}

void run_rate_sweep(const ScenarioConfig& cfg, const std::string& out_dir,
                    std::vector<Timing>& timings) {
  const Eigen::MatrixXd img = scenario_image(cfg);
  const int count = static_cast<int>(cfg.rate_list.size()) * cfg.trials;
  std::vector<std::string> rows(static_cast<size_t>(count));
  timings.resize(static_cast<size_t>(count));
  run_parallel(cfg.threads, count, [&](int job) {
    const int ri = job / cfg.trials;
    const int t = job % cfg.trials;
    const double rate = cfg.rate_list[static_cast<size_t>(ri)];
    ScopedTimer timer("rate=" + format_double(rate) + " seed=" + std::to_string(t), timings, job);
    // trial seed shared across rates so subsampled rows nest monotonically
    const std::uint64_t trial_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(t));
    const ImagePipelineResult res = image_pipeline(img, cfg, rate, trial_seed);
    std::ostringstream os;
    CsvWriter csv(os);
    csv.field(rate);
    csv.field(t);
    csv.field(res.psnr_db);
    csv.end_row();
    rows[static_cast<size_t>(job)] = os.str();
  });
  auto results = open_csv(out_dir, "results.csv");
  CsvWriter rcsv(results);
  rcsv.header({"rate", "seed", "psnr_db"});
  for (const auto& r : rows) results << r;
}

// ---------------- lifted scenarios ----------------

void run_csmu_sweep(const ScenarioConfig& cfg, const std::string& out_dir,
                    std::vector<Timing>& timings) {
  const int L = cfg.lift_subspace;
  const int P = cfg.lift_factor;
  const int K = cfg.lift_sparsity;
  const int count = static_cast<int>(cfg.m_over_p_list.size()) * cfg.trials;
  std::vector<std::string> rows(static_cast<size_t>(count));
  timings.resize(static_cast<size_t>(count));

  int max_m = 0;
  for (double r : cfg.m_over_p_list)
    max_m = std::max(max_m, static_cast<int>(std::lround(r * P)));

  run_parallel(cfg.threads, count, [&](int job) {
    const int mi = job / cfg.trials;
    const int t = job % cfg.trials;
    const double rate = cfg.m_over_p_list[static_cast<size_t>(mi)];
    const int m = std::max(1, static_cast<int>(std::lround(rate * P)));
    ScopedTimer timer("m_over_p=" + format_double(rate) + " seed=" + std::to_string(t),
                      timings, job);
    const std::uint64_t trial_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(t));

    LiftedInstance inst;
    if (cfg.operator_style == "iid-gaussian") {
      // draw at max_m once per seed; rows nest across the sweep
      Rng rng(derive_seed(trial_seed, 0xc5));
      Eigen::VectorXd b(L);
      b[0] = cfg.b1;
      for (int l = 1; l < L; ++l) b[l] = rng.normal();
      std::vector<int> idx(P);
      for (int i = 0; i < P; ++i) idx[i] = i;
      for (int i = 0; i < K; ++i) std::swap(idx[i], idx[i + rng.uniform_int(P - i)]);
      Eigen::VectorXd c = Eigen::VectorXd::Zero(P);
      for (int i = 0; i < K; ++i) c[idx[i]] = rng.normal();
      Eigen::MatrixXd a_full(max_m, static_cast<Eigen::Index>(L) * P);
      for (Eigen::Index j = 0; j < a_full.cols(); ++j)
        for (Eigen::Index i = 0; i < max_m; ++i) a_full(i, j) = rng.normal();
      const Eigen::VectorXd w_std = rng.normal_vector(max_m);

      inst.subspace_dim = L;
      inst.factor_len = P;
      inst.rows = m;
      inst.sparsity = K;
      inst.b0 = b;
      inst.c0 = c;
      inst.b_clamps.emplace_back(0, cfg.b1);
      inst.a_dense = a_full.topRows(m);
      for (int l = 0; l < L; ++l)
        inst.phis.push_back(inst.a_dense.middleCols(static_cast<Eigen::Index>(l) * P, P));
      Eigen::MatrixXd outer = c * b.transpose();
      inst.x0 = Eigen::Map<Eigen::VectorXd>(outer.data(), outer.size());
      inst.y = inst.a_dense * inst.x0;
      inst.gamma_w0 = std::numeric_limits<double>::infinity();
      if (!cfg.noiseless) {
        inst.snr_db = cfg.snr_db;
        inst.gamma_w0 = m * std::pow(10.0, cfg.snr_db / 10.0) / inst.y.squaredNorm();
        inst.y += w_std.head(m) / std::sqrt(inst.gamma_w0);
      }
    } else if (cfg.operator_style == "haar-geometric") {
      inst = make_csmu_instance(L, P, K, m, cfg.b1, CsmuOperatorStyle::HaarGeometric,
                                cfg.cond, cfg.noiseless ? std::numeric_limits<double>::infinity()
                                                        : cfg.snr_db,
                                trial_seed);
    } else {
      throw std::runtime_error("config: unknown operator_style '" + cfg.operator_style + "'");
    }

    const double gamma_w = cfg.gamma_w > 0.0
                               ? cfg.gamma_w
                               : (std::isfinite(inst.gamma_w0) ? inst.gamma_w0 : kNoiselessGammaW);
    ProblemInstance pi = to_problem_instance(inst, gamma_w);
    auto den = make_lifted_denoiser(inst, cfg.inner_iters);
    VampConfig vc;
    vc.iterations = cfg.iterations;
    vc.divergence_seed = derive_seed(trial_seed, 0xd1);
    const VampTrajectory traj = vamp_run(pi, *den, vc);
    const RecoveryScore score = score_recovery(traj.xhat_final, inst);

    std::ostringstream os;
    CsvWriter csv(os);
    csv.field(rate);
    csv.field(t);
    csv.field(score.nmse_b_db);
    csv.field(score.nmse_c_db);
    csv.field(score.nmse_outer_db);
    csv.field(static_cast<int>(score.success));
    csv.end_row();
    rows[static_cast<size_t>(job)] = os.str();
  });

  auto results = open_csv(out_dir, "results.csv");
  CsvWriter rcsv(results);
  rcsv.header({"m_over_p", "seed", "nmse_b_db", "nmse_c_db", "nmse_outer_db", "success"});
  for (const auto& r : rows) results << r;
}

void run_selfcal_grid(const ScenarioConfig& cfg, const std::string& out_dir,
                      std::vector<Timing>& timings) {
  const int P = cfg.lift_factor;
  const int M = cfg.n;  // measurement count; power of two for the Hadamard H
  const int max_k = static_cast<int>(*std::max_element(cfg.k_list.begin(), cfg.k_list.end()));
  const int max_l = static_cast<int>(*std::max_element(cfg.l_list.begin(), cfg.l_list.end()));
  const int grid = static_cast<int>(cfg.k_list.size() * cfg.l_list.size());
  const int count = grid * cfg.trials;
  std::vector<std::string> rows(static_cast<size_t>(count));
  timings.resize(static_cast<size_t>(count));

  run_parallel(cfg.threads, count, [&](int job) {
    const int cell = job / cfg.trials;
    const int t = job % cfg.trials;
    const int ki = cell / static_cast<int>(cfg.l_list.size());
    const int li = cell % static_cast<int>(cfg.l_list.size());
    const int K = static_cast<int>(cfg.k_list[static_cast<size_t>(ki)]);
    const int L = static_cast<int>(cfg.l_list[static_cast<size_t>(li)]);
    ScopedTimer timer("K=" + std::to_string(K) + " L=" + std::to_string(L) +
                          " seed=" + std::to_string(t),
                      timings, job);

    // one master draw per seed; cells restrict it so difficulty nests
    const std::uint64_t trial_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(t));
    Rng rng(derive_seed(trial_seed, 0x5e1f));
    Eigen::MatrixXd psi(M, P);
    for (Eigen::Index j = 0; j < P; ++j)
      for (Eigen::Index i = 0; i < M; ++i) psi(i, j) = rng.normal();
    const Eigen::VectorXd b_full = rng.normal_vector(max_l);
    std::vector<int> support(P);
    for (int i = 0; i < P; ++i) support[i] = i;
    for (int i = 0; i < max_k; ++i)
      std::swap(support[i], support[i + rng.uniform_int(P - i)]);
    const Eigen::VectorXd values = rng.normal_vector(max_k);
    std::vector<int> hcols(M);
    for (int i = 0; i < M; ++i) hcols[i] = i;
    for (int i = 0; i < max_l; ++i) std::swap(hcols[i], hcols[i + rng.uniform_int(M - i)]);

    auto hadamard_entry = [](int i, int j) {
      int bits = i & j, parity = 0;
      while (bits) {
        parity ^= bits & 1;
        bits >>= 1;
      }
      return parity ? -1.0 : 1.0;
    };

    LiftedInstance inst;
    inst.subspace_dim = L;
    inst.factor_len = P;
    inst.rows = M;
    inst.sparsity = K;
    inst.b0 = b_full.head(L);
    inst.c0 = Eigen::VectorXd::Zero(P);
    for (int i = 0; i < K; ++i) inst.c0[support[i]] = values[i];
    for (int l = 0; l < L; ++l) {
      Eigen::VectorXd h(M);
      for (int i = 0; i < M; ++i) h[i] = hadamard_entry(i, hcols[l]);
      inst.phis.push_back(h.asDiagonal() * psi);
    }
    inst.a_dense = build_lifted_matrix(inst.phis);
    Eigen::MatrixXd outer = inst.c0 * inst.b0.transpose();
    inst.x0 = Eigen::Map<Eigen::VectorXd>(outer.data(), outer.size());
    inst.y = inst.a_dense * inst.x0;  // w = 0
    inst.gamma_w0 = std::numeric_limits<double>::infinity();

    const double gamma_w = cfg.gamma_w > 0.0 ? cfg.gamma_w : kNoiselessGammaW;
    ProblemInstance pi = to_problem_instance(inst, gamma_w);
    auto den = make_lifted_denoiser(inst, cfg.inner_iters);
    VampConfig vc;
    vc.iterations = cfg.iterations;
    vc.divergence_seed = derive_seed(trial_seed, 0xd1);
    const VampTrajectory traj = vamp_run(pi, *den, vc);
    const RecoveryScore score = score_recovery(traj.xhat_final, inst);

    std::ostringstream os;
    CsvWriter csv(os);
    csv.field(K);
    csv.field(L);
    csv.field(t);
    csv.field(score.nmse_outer_db);
    csv.field(static_cast<int>(score.success));
    csv.end_row();
    rows[static_cast<size_t>(job)] = os.str();
  });

  auto results = open_csv(out_dir, "results.csv");
  CsvWriter rcsv(results);
  rcsv.header({"k", "l", "seed", "nmse_outer_db", "success"});
  for (const auto& r : rows) results << r;
}

// ---------------- generalized recursion check ----------------

void run_gen_recursion_check(const ScenarioConfig& cfg, const std::string& out_dir,
                             std::vector<Timing>& timings) {
  timings.resize(1);
  ScopedTimer timer("gen-recursion-check", timings, 0);
  const int n = cfg.n;
  const int m = std::max(1, static_cast<int>(std::lround(cfg.m_over_n * n)));
  const DenoiserPtr den = make_denoiser(cfg);
  const SignalSpec sig = make_signal_spec(cfg);
  const SpectralOperator op =
      make_measurement_operator(cfg, n, m, cfg.cond, derive_seed(cfg.master_seed, 0x09));
  const std::uint64_t trial_seed = derive_seed(cfg.master_seed, 0);
  double gamma_w0 = std::numeric_limits<double>::infinity();
  if (!cfg.noiseless) {
    const Eigen::VectorXd probe = draw_signal(sig, n, trial_seed);
    gamma_w0 = gamma_w0_for_snr(op, probe, cfg.snr_db);
  }
  const double gamma_w =
      cfg.gamma_w > 0.0 ? cfg.gamma_w : (cfg.noiseless ? kNoiselessGammaW : gamma_w0);
  ProblemInstance inst = make_instance(sig, op, gamma_w0, gamma_w, trial_seed);

  VampConfig vc;
  vc.iterations = cfg.iterations;
  vc.init = VampInit::SeOracle;
  vc.tau10 = cfg.tau10;
  vc.gamma10 = 1.0 / cfg.tau10;
  vc.init_seed = derive_seed(trial_seed, 0x11);
  vc.divergence_seed = derive_seed(trial_seed, 0xd1);
  const VampTrajectory traj = vamp_run(inst, *den, vc);
  const auto gen = general_recursion_run(vamp_general_recursion(inst, *den, vc),
                                         cfg.iterations);

  // SE layer: direct recursion vs generalized machinery
  const Eigen::VectorXd x0_se = inst.x0;
  const std::uint64_t se_seed = derive_seed(cfg.master_seed, 0x5e);
  const auto se = se_run(*den, x0_se, op.spectrum(), gamma_w, gamma_w0, cfg.tau10,
                         1.0 / cfg.tau10, cfg.iterations, cfg.se_trials, se_seed);
  const auto gense = general_se_run(
      vamp_general_se(*den, x0_se, op.spectrum(), gamma_w, gamma_w0, cfg.se_trials, se_seed),
      cfg.tau10, 1.0 / cfg.tau10, cfg.iterations);

  auto results = open_csv(out_dir, "results.csv");
  CsvWriter csv(results);
  csv.header({"k", "p_diff", "q_diff", "tau1_rel_diff", "tau2_rel_diff"});
  for (int k = 0; k < cfg.iterations; ++k) {
    const double p_diff =
        (gen[static_cast<size_t>(k)].p - (traj.states[static_cast<size_t>(k)].r1 - inst.x0))
            .lpNorm<Eigen::Infinity>();
    const double q_diff =
        (gen[static_cast<size_t>(k)].q -
         inst.op.v_adjoint(traj.states[static_cast<size_t>(k)].r2 - inst.x0))
            .lpNorm<Eigen::Infinity>();
    csv.field(k);
    csv.field(p_diff);
    csv.field(q_diff);
    if (static_cast<size_t>(k) < se.size() && !se[static_cast<size_t>(k)].degenerate) {
      const auto& a = se[static_cast<size_t>(k)];
      const auto& b = gense[static_cast<size_t>(k)];
      csv.field(std::abs(a.tau1 - b.tau1) / std::abs(a.tau1));
      csv.field(std::abs(a.tau2 - b.tau2) / std::abs(a.tau2));
    } else {
      csv.field(std::numeric_limits<double>::quiet_NaN());
      csv.field(std::numeric_limits<double>::quiet_NaN());
    }
    csv.end_row();
  }
}

}  // namespace

double image_psnr(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
  Eigen::MatrixXd clamped = estimate.cwiseMax(0.0).cwiseMin(255.0);
  const double err = (clamped - truth).squaredNorm();
  if (err <= 0.0) return 99.0;
  const double psnr =
      10.0 * std::log10(255.0 * 255.0 * static_cast<double>(truth.size()) / err);
  return std::min(psnr, 99.0);
}

Eigen::MatrixXd synthetic_piecewise_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd img = Eigen::MatrixXd::Constant(side, side, 96.0);
  for (int k = 0; k < 12; ++k) {
    const int r0 = rng.uniform_int(side);
    const int c0 = rng.uniform_int(side);
    const int h = 1 + rng.uniform_int(side / 2);
    const int w = 1 + rng.uniform_int(side / 2);
    const double level = 16.0 + 224.0 * rng.uniform();
    for (int r = r0; r < std::min(side, r0 + h); ++r)
      for (int c = c0; c < std::min(side, c0 + w); ++c) img(r, c) = level;
  }
  return img;
}

ImagePipelineResult image_pipeline(const Eigen::MatrixXd& img,
                                   const ScenarioConfig& cfg, double rate,
                                   std::uint64_t seed) {
  const int side = static_cast<int>(img.rows());
  if (img.cols() != side) throw std::runtime_error("image_pipeline: image must be square");
  const int n = side * side;
  const int m = std::max(1, static_cast<int>(std::lround(rate * n)));
  const SpectralOperator a =
      make_measurement_operator(cfg, n, m, cfg.cond, derive_seed(seed, 0x09));
  const Eigen::VectorXd x_img = Eigen::Map<const Eigen::VectorXd>(img.data(), n);

  Eigen::VectorXd y = a.forward(x_img);
  double gamma_w0 = std::numeric_limits<double>::infinity();
  if (!cfg.noiseless && cfg.snr_db < 300.0) {
    gamma_w0 = a.rows() * std::pow(10.0, cfg.snr_db / 10.0) / y.squaredNorm();
    Rng rng(derive_seed(seed, 0x201e));
    const double sd = 1.0 / std::sqrt(gamma_w0);
    for (int i = 0; i < a.rows(); ++i) y[i] += sd * rng.normal();
  }
  const double gamma_w =
      cfg.gamma_w > 0.0 ? cfg.gamma_w
                        : (std::isfinite(gamma_w0) ? gamma_w0 : kNoiselessGammaW);

  VampConfig vc;
  vc.iterations = cfg.iterations;
  vc.divergence_seed = derive_seed(seed, 0xd1);

  ImagePipelineResult out;
  if (cfg.route == "wavelet") {
    auto wmap = std::make_shared<Wavelet2dMap>(side, cfg.wavelet_levels);
    const SpectralOperator b = compose_with_synthesis(a, wmap);
    const Eigen::VectorXd c0 = wmap->apply(x_img);
    ProblemInstance inst{c0, b, y, gamma_w0, gamma_w};
    SoftThreshold den(cfg.theta);
    const VampTrajectory traj = vamp_run(inst, den, vc);
    const Eigen::VectorXd xhat = wmap->adjoint(traj.xhat_final);
    out.recovered = Eigen::Map<const Eigen::MatrixXd>(xhat.data(), side, side);
  } else if (cfg.route == "direct") {
    ProblemInstance inst{x_img, a, y, gamma_w0, gamma_w};
    SoftThreshold den(cfg.theta);
    const VampTrajectory traj = vamp_run(inst, den, vc);
    out.recovered = Eigen::Map<const Eigen::MatrixXd>(traj.xhat_final.data(), side, side);
  } else {
    throw std::runtime_error("config: unknown route '" + cfg.route + "'");
  }
  out.psnr_db = image_psnr(out.recovered, img);
  return out;
}

// ---------------- config ----------------

namespace {

using Setter = std::function<void(ScenarioConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& config_schema() {
  static const std::map<std::string, Setter> schema = {
      {"scenario", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.scenario = v; }},
      {"master_seed",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) {
         c.master_seed = static_cast<std::uint64_t>(to_double(k, v));
       }},
      {"threads", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.threads = to_int(k, v); }},
      {"n", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.n = to_int(k, v); }},
      {"m_over_n", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.m_over_n = to_double(k, v); }},
      {"operator", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.operator_kind = v; }},
      {"cond", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.cond = to_double(k, v); }},
      {"cond_list", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.cond_list = to_list(k, v); }},
      {"denoiser", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.denoiser = v; }},
      {"rho", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.rho = to_double(k, v); }},
      {"sigma2", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sigma2 = to_double(k, v); }},
      {"theta", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.theta = to_double(k, v); }},
      {"group_size", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.group_size = to_int(k, v); }},
      {"snr_db", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.snr_db = to_double(k, v); }},
      {"noiseless", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.noiseless = to_bool(k, v); }},
      {"gamma_w", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.gamma_w = to_double(k, v); }},
      {"iterations", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.iterations = to_int(k, v); }},
      {"trials", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.trials = to_int(k, v); }},
      {"se_trials", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.se_trials = to_int(k, v); }},
      {"tau10", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.tau10 = to_double(k, v); }},
      {"init", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.init = v; }},
      {"image", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.image = v; }},
      {"side", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.side = to_int(k, v); }},
      {"wavelet_levels",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.wavelet_levels = to_int(k, v); }},
      {"route", [](ScenarioConfig& c, const std::string&, const std::string& v) { c.route = v; }},
      {"rate_list", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.rate_list = to_list(k, v); }},
      {"lift_subspace",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.lift_subspace = to_int(k, v); }},
      {"lift_factor",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.lift_factor = to_int(k, v); }},
      {"lift_sparsity",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.lift_sparsity = to_int(k, v); }},
      {"m_over_p", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.m_over_p = to_double(k, v); }},
      {"m_over_p_list",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.m_over_p_list = to_list(k, v); }},
      {"b1", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.b1 = to_double(k, v); }},
      {"operator_style",
       [](ScenarioConfig& c, const std::string&, const std::string& v) { c.operator_style = v; }},
      {"inner_iters",
       [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.inner_iters = to_int(k, v); }},
      {"k_list", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.k_list = to_list(k, v); }},
      {"l_list", [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.l_list = to_list(k, v); }},
  };
  return schema;
}

const std::vector<std::string>& known_scenarios() {
  static const std::vector<std::string> names = {
      "se-validate", "image-recovery", "cond-sweep",         "rate-sweep",
      "csmu-sweep",  "selfcal-grid",   "gen-recursion-check"};
  return names;
}

}  // namespace

ScenarioConfig parse_config_text(const std::string& text) {
  ScenarioConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = config_schema().find(key);
    if (it == config_schema().end())
      throw std::runtime_error("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  if (!cfg.scenario.empty()) {
    bool ok = false;
    for (const auto& s : known_scenarios()) ok = ok || s == cfg.scenario;
    if (!ok) throw std::runtime_error("config: unknown scenario '" + cfg.scenario + "'");
  }
  return cfg;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string dump_config(const ScenarioConfig& c) {
  std::ostringstream os;
  os << "b1 = " << format_double_exact(c.b1) << '\n';
  os << "cond = " << format_double(c.cond) << '\n';
  os << "cond_list = " << list_str(c.cond_list) << '\n';
  os << "denoiser = " << c.denoiser << '\n';
  os << "gamma_w = " << format_double(c.gamma_w) << '\n';
  os << "group_size = " << c.group_size << '\n';
  os << "image = " << c.image << '\n';
  os << "init = " << c.init << '\n';
  os << "inner_iters = " << c.inner_iters << '\n';
  os << "iterations = " << c.iterations << '\n';
  os << "k_list = " << list_str(c.k_list) << '\n';
  os << "l_list = " << list_str(c.l_list) << '\n';
  os << "lift_factor = " << c.lift_factor << '\n';
  os << "lift_sparsity = " << c.lift_sparsity << '\n';
  os << "lift_subspace = " << c.lift_subspace << '\n';
  os << "m_over_n = " << format_double(c.m_over_n) << '\n';
  os << "m_over_p = " << format_double(c.m_over_p) << '\n';
  os << "m_over_p_list = " << list_str(c.m_over_p_list) << '\n';
  os << "master_seed = " << c.master_seed << '\n';
  os << "n = " << c.n << '\n';
  os << "noiseless = " << (c.noiseless ? 1 : 0) << '\n';
  os << "operator = " << c.operator_kind << '\n';
  os << "operator_style = " << c.operator_style << '\n';
  os << "rate_list = " << list_str(c.rate_list) << '\n';
  os << "rho = " << format_double(c.rho) << '\n';
  os << "route = " << c.route << '\n';
  os << "scenario = " << c.scenario << '\n';
  os << "se_trials = " << c.se_trials << '\n';
  os << "side = " << c.side << '\n';
  os << "sigma2 = " << format_double(c.sigma2) << '\n';
  os << "snr_db = " << format_double(c.snr_db) << '\n';
  os << "tau10 = " << format_double(c.tau10) << '\n';
  os << "theta = " << format_double(c.theta) << '\n';
  os << "threads = " << c.threads << '\n';
  os << "trials = " << c.trials << '\n';
  os << "wavelet_levels = " << c.wavelet_levels << '\n';
  return os.str();
}

void run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  if (cfg.scenario.empty()) throw std::runtime_error("config: scenario not set");
  std::filesystem::create_directories(out_dir);
  std::vector<Timing> timings;
  if (cfg.scenario == "se-validate") {
    run_se_validate(cfg, out_dir, timings);
  } else if (cfg.scenario == "cond-sweep") {
    run_cond_sweep(cfg, out_dir, timings);
  } else if (cfg.scenario == "image-recovery") {
    run_image_recovery(cfg, out_dir, timings);
  } else if (cfg.scenario == "rate-sweep") {
    run_rate_sweep(cfg, out_dir, timings);
  } else if (cfg.scenario == "csmu-sweep") {
    run_csmu_sweep(cfg, out_dir, timings);
  } else if (cfg.scenario == "selfcal-grid") {
    run_selfcal_grid(cfg, out_dir, timings);
  } else if (cfg.scenario == "gen-recursion-check") {
    run_gen_recursion_check(cfg, out_dir, timings);
  } else {
    throw std::runtime_error("config: unknown scenario '" + cfg.scenario + "'");
  }
  write_meta(out_dir, cfg);
  write_timings(out_dir, timings);
}

}  // namespace vampse
