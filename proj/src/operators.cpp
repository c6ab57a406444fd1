#include "vampse/operators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vampse/rng.hpp"

namespace vampse {

DenseOrthogonalMap::DenseOrthogonalMap(Eigen::MatrixXd q) : q_(std::move(q)) {
  if (q_.rows() != q_.cols())
    throw std::invalid_argument("DenseOrthogonalMap: matrix must be square");
}

Eigen::VectorXd DenseOrthogonalMap::apply(const Eigen::VectorXd& x) const {
  return q_ * x;
}

Eigen::VectorXd DenseOrthogonalMap::adjoint(const Eigen::VectorXd& x) const {
  return q_.transpose() * x;
}

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// in-place normalized fast Walsh-Hadamard transform; self-inverse
void fwht(Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  for (Eigen::Index h = 1; h < n; h *= 2) {
    for (Eigen::Index i = 0; i < n; i += 2 * h) {
      for (Eigen::Index j = i; j < i + h; ++j) {
        const double a = v[j];
        const double b = v[j + h];
        v[j] = a + b;
        v[j + h] = a - b;
      }
    }
  }
  v *= 1.0 / std::sqrt(static_cast<double>(n));
}

}  // namespace

SignPermHadamardMap::SignPermHadamardMap(std::vector<double> signs,
                                         std::vector<int> perm)
    : signs_(std::move(signs)), perm_(std::move(perm)) {
  if (signs_.size() != perm_.size())
    throw std::invalid_argument("SignPermHadamardMap: size mismatch");
  if (!is_power_of_two(static_cast<int>(signs_.size())))
    throw std::invalid_argument(
        "SignPermHadamardMap: dimension must be a power of two");
}

// apply() is V = D H P^T  (adjoint of the V^T = P H D chain)
Eigen::VectorXd SignPermHadamardMap::apply(const Eigen::VectorXd& x) const {
  const Eigen::Index n = dim();
  if (x.size() != n) throw std::invalid_argument("SignPermHadamardMap: invalid dimension");
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) t[perm_[i]] = x[i];  // P^T
  fwht(t);
  for (Eigen::Index i = 0; i < n; ++i) t[i] *= signs_[i];  // D
  return t;
}

Eigen::VectorXd SignPermHadamardMap::adjoint(const Eigen::VectorXd& x) const {
  const Eigen::Index n = dim();
  if (x.size() != n) throw std::invalid_argument("SignPermHadamardMap: invalid dimension");
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) t[i] = signs_[i] * x[i];  // D
  fwht(t);                                                        // H
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = t[perm_[i]];  // P
  return out;
}

ComposedMap::ComposedMap(MapPtr outer, MapPtr inner)
    : outer_(std::move(outer)), inner_(std::move(inner)) {
  if (outer_->dim() != inner_->dim())
    throw std::invalid_argument("ComposedMap: dimension mismatch");
}

Eigen::VectorXd ComposedMap::apply(const Eigen::VectorXd& x) const {
  return outer_->apply(inner_->apply(x));
}

Eigen::VectorXd ComposedMap::adjoint(const Eigen::VectorXd& x) const {
  return inner_->adjoint(outer_->adjoint(x));
}

Wavelet2dMap::Wavelet2dMap(int side, int levels) : side_(side), levels_(levels) {
  if (!is_power_of_two(side))
    throw std::invalid_argument("Wavelet2dMap: side must be a power of two");
  int max_levels = 0;
  for (int s = side; s > 1; s /= 2) ++max_levels;
  if (levels < 1 || levels > max_levels)
    throw std::invalid_argument("Wavelet2dMap: invalid level count");
}

Eigen::VectorXd Wavelet2dMap::apply(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("Wavelet2dMap: invalid dimension");
  Eigen::MatrixXd img = Eigen::Map<const Eigen::MatrixXd>(x.data(), side_, side_);
  Eigen::MatrixXd c = haar_wavelet_2d_forward(img, levels_);
  return Eigen::Map<Eigen::VectorXd>(c.data(), c.size());
}

Eigen::VectorXd Wavelet2dMap::adjoint(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("Wavelet2dMap: invalid dimension");
  Eigen::MatrixXd c = Eigen::Map<const Eigen::MatrixXd>(x.data(), side_, side_);
  Eigen::MatrixXd img = haar_wavelet_2d_inverse(c, levels_);
  return Eigen::Map<Eigen::VectorXd>(img.data(), img.size());
}

double Spectrum::cond() const {
  if (m < 1) throw std::logic_error("Spectrum: empty");
  return values[0] / values[m - 1];
}

Spectrum geometric_spectrum(int m, int n, double cond) {
  if (m < 1 || m > n) throw std::invalid_argument("geometric_spectrum: need 1 <= m <= n");
  if (cond < 1.0) throw std::invalid_argument("geometric_spectrum: invalid spectrum, cond < 1");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  const double ratio = (m == 1) ? 1.0 : std::pow(cond, -1.0 / (m - 1));
  double v = 1.0;
  for (int i = 0; i < m; ++i) {
    s[i] = v;
    v *= ratio;
  }
  // rescale to sum s_i^2 = n (AMP scaling convention)
  s *= std::sqrt(static_cast<double>(n) / s.squaredNorm());
  Spectrum out;
  out.values = std::move(s);
  out.m = m;
  out.n = n;
  return out;
}

SpectralOperator::SpectralOperator(int m, int n, Eigen::VectorXd s, MapPtr u,
                                   MapPtr v, OperatorKind kind)
    : m_(m), n_(n), s_(std::move(s)), u_(std::move(u)), v_(std::move(v)), kind_(kind) {
  if (m_ < 1 || n_ < 1) throw std::invalid_argument("SpectralOperator: invalid dimension");
  if (s_.size() != n_)
    throw std::invalid_argument("SpectralOperator: spectrum must have n entries");
  if (u_->dim() != m_ || v_->dim() != n_)
    throw std::invalid_argument("SpectralOperator: factor dimension mismatch");
  for (int i = std::min(m_, n_); i < n_; ++i)
    if (s_[i] != 0.0)
      throw std::invalid_argument("SpectralOperator: spectrum must be zero-padded past m");
  if (s_.size() > 0 && s_.minCoeff() < 0.0)
    throw std::invalid_argument("SpectralOperator: negative singular value");
}

Spectrum SpectralOperator::spectrum() const {
  Spectrum sp;
  sp.values = s_;
  sp.m = std::min(m_, n_);
  sp.n = n_;
  return sp;
}

Eigen::VectorXd SpectralOperator::forward(const Eigen::VectorXd& x) const {
  if (x.size() != n_) throw std::invalid_argument("SpectralOperator::forward: invalid dimension");
  Eigen::VectorXd z = v_->adjoint(x);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(m_);
  const int k = std::min(m_, n_);
  for (int i = 0; i < k; ++i) t[i] = s_[i] * z[i];
  return u_->apply(t);
}

Eigen::VectorXd SpectralOperator::adjoint(const Eigen::VectorXd& y) const {
  if (y.size() != m_) throw std::invalid_argument("SpectralOperator::adjoint: invalid dimension");
  Eigen::VectorXd t = u_->adjoint(y);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n_);
  const int k = std::min(m_, n_);
  for (int i = 0; i < k; ++i) z[i] = s_[i] * t[i];
  return v_->apply(z);
}

Eigen::MatrixXd SpectralOperator::dense() const {
  Eigen::MatrixXd a(m_, n_);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n_);
  for (int j = 0; j < n_; ++j) {
    e[j] = 1.0;
    a.col(j) = forward(e);
    e[j] = 0.0;
  }
  return a;
}

Eigen::MatrixXd haar_orthogonal(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("haar_orthogonal: invalid dimension");
  Rng rng(seed);
  Eigen::MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd& r = qr.matrixQR();
  // fold sign(R_jj) into column j; plain QR is not Haar without this
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

SpectralOperator build_operator(const Spectrum& spectrum, std::uint64_t u_seed,
                                std::uint64_t v_seed) {
  const int m = spectrum.m;
  const int n = spectrum.n;
  auto u = std::make_shared<DenseOrthogonalMap>(haar_orthogonal(m, u_seed));
  auto v = std::make_shared<DenseOrthogonalMap>(haar_orthogonal(n, v_seed));
  return SpectralOperator(m, n, spectrum.values, std::move(u), std::move(v),
                          OperatorKind::DenseHaar);
}

namespace {

SpectralOperator make_jphd(int n, int m, const Eigen::VectorXd& s,
                           std::uint64_t seed) {
  if (!is_power_of_two(n))
    throw std::invalid_argument("fast_jphd_operator: n must be a power of two");
  if (m < 1 || m > n) throw std::invalid_argument("fast_jphd_operator: need 1 <= m <= n");
  Rng rng(derive_seed(seed, 0));
  std::vector<double> signs(n);
  for (int i = 0; i < n; ++i) signs[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
  // Fisher-Yates from the scenario seed
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng prng(derive_seed(seed, 1));
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[prng.uniform_int(i + 1)]);
  auto v = std::make_shared<SignPermHadamardMap>(std::move(signs), std::move(perm));
  auto u = std::make_shared<IdentityMap>(m);
  return SpectralOperator(m, n, s, std::move(u), std::move(v),
                          OperatorKind::FastJphd);
}

}  // namespace

SpectralOperator fast_jphd_operator(int n, int m, std::uint64_t seed) {
  if (m < 1 || m > n || !is_power_of_two(n))
    throw std::invalid_argument("fast_jphd_operator: invalid dimension");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  s.head(m).setOnes();
  return make_jphd(n, m, s, seed);
}

SpectralOperator fast_jphd_operator(const Spectrum& spectrum,
                                    std::uint64_t seed) {
  return make_jphd(spectrum.n, spectrum.m, spectrum.values, seed);
}

SpectralOperator custom_operator(int m, int n, Eigen::VectorXd s, MapPtr u,
                                 MapPtr v) {
  return SpectralOperator(m, n, std::move(s), std::move(u), std::move(v),
                          OperatorKind::Custom);
}

SpectralOperator operator_from_dense(const Eigen::MatrixXd& a) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  const int k = std::min(m, n);
  s.head(k) = svd.singularValues().head(k);
  auto u = std::make_shared<DenseOrthogonalMap>(svd.matrixU());
  auto v = std::make_shared<DenseOrthogonalMap>(svd.matrixV());
  return SpectralOperator(m, n, std::move(s), std::move(u), std::move(v),
                          OperatorKind::Custom);
}

SpectralOperator compose_with_synthesis(const SpectralOperator& a,
                                        MapPtr wavelet) {
  if (wavelet->dim() != a.cols())
    throw std::invalid_argument("compose_with_synthesis: dimension mismatch");
  // B = A Psi^T = U S (Psi V)^T; spectrum unchanged
  auto u = std::make_shared<IdentityMap>(a.rows());
  MapPtr composed;
  {
    // reuse the operator's V through a thin adapter
    class VAdapter final : public OrthogonalMap {
     public:
      explicit VAdapter(SpectralOperator op) : op_(std::move(op)) {}
      Eigen::Index dim() const override { return op_.cols(); }
      Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
        return op_.v_apply(x);
      }
      Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override {
        return op_.v_adjoint(x);
      }

     private:
      SpectralOperator op_;
    };
    composed = std::make_shared<ComposedMap>(std::move(wavelet),
                                             std::make_shared<VAdapter>(a));
  }
  class UAdapter final : public OrthogonalMap {
   public:
    explicit UAdapter(SpectralOperator op) : op_(std::move(op)) {}
    Eigen::Index dim() const override { return op_.rows(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
      return op_.u_apply(x);
    }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override {
      return op_.u_adjoint(x);
    }

   private:
    SpectralOperator op_;
  };
  return SpectralOperator(a.rows(), a.cols(), a.singular_values(),
                          std::make_shared<UAdapter>(a), std::move(composed),
                          OperatorKind::Custom);
}

namespace {

// one analysis level on the leading size x size block
void haar_level_forward(Eigen::MatrixXd& a, int size) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const int h = size / 2;
  Eigen::VectorXd tmp(size);
  for (int c = 0; c < size; ++c) {  // columns
    for (int i = 0; i < h; ++i) {
      tmp[i] = (a(2 * i, c) + a(2 * i + 1, c)) * inv_sqrt2;
      tmp[h + i] = (a(2 * i, c) - a(2 * i + 1, c)) * inv_sqrt2;
    }
    a.col(c).head(size) = tmp;
  }
  for (int r = 0; r < size; ++r) {  // rows
    for (int i = 0; i < h; ++i) {
      tmp[i] = (a(r, 2 * i) + a(r, 2 * i + 1)) * inv_sqrt2;
      tmp[h + i] = (a(r, 2 * i) - a(r, 2 * i + 1)) * inv_sqrt2;
    }
    a.row(r).head(size) = tmp.transpose();
  }
}

void haar_level_inverse(Eigen::MatrixXd& a, int size) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const int h = size / 2;
  Eigen::VectorXd tmp(size);
  for (int r = 0; r < size; ++r) {
    for (int i = 0; i < h; ++i) {
      tmp[2 * i] = (a(r, i) + a(r, h + i)) * inv_sqrt2;
      tmp[2 * i + 1] = (a(r, i) - a(r, h + i)) * inv_sqrt2;
    }
    a.row(r).head(size) = tmp.transpose();
  }
  for (int c = 0; c < size; ++c) {
    for (int i = 0; i < h; ++i) {
      tmp[2 * i] = (a(i, c) + a(h + i, c)) * inv_sqrt2;
      tmp[2 * i + 1] = (a(i, c) - a(h + i, c)) * inv_sqrt2;
    }
    a.col(c).head(size) = tmp;
  }
}

void check_wavelet_args(const Eigen::MatrixXd& img, int levels) {
  const int side = static_cast<int>(img.rows());
  if (img.cols() != side || !is_power_of_two(side))
    throw std::invalid_argument("haar_wavelet_2d: invalid dimension");
  int max_levels = 0;
  for (int s = side; s > 1; s /= 2) ++max_levels;
  if (levels < 1 || levels > max_levels)
    throw std::invalid_argument("haar_wavelet_2d: invalid dimension");
}

}  // namespace

Eigen::MatrixXd haar_wavelet_2d_forward(const Eigen::MatrixXd& img, int levels) {
  check_wavelet_args(img, levels);
  Eigen::MatrixXd a = img;
  int size = static_cast<int>(img.rows());
  for (int l = 0; l < levels; ++l) {
    haar_level_forward(a, size);
    size /= 2;
  }
  return a;
}

Eigen::MatrixXd haar_wavelet_2d_inverse(const Eigen::MatrixXd& coeffs, int levels) {
  check_wavelet_args(coeffs, levels);
  Eigen::MatrixXd a = coeffs;
  int size = static_cast<int>(coeffs.rows());
  for (int l = 0; l < levels; ++l) size /= 2;
  for (int l = 0; l < levels; ++l) {
    size *= 2;
    haar_level_inverse(a, size);
  }
  return a;
}

Eigen::MatrixXd read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 PGM: " + path);
  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comment lines
    int c = in.get();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#')
        while (c != '\n' && c != EOF) c = in.get();
      c = in.get();
    }
    int value = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      value = value * 10 + (c - '0');
      any = true;
      c = in.get();
    }
    if (!any) throw std::runtime_error("read_pgm: malformed header: " + path);
    return value;
  };
  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_pgm: only 8-bit supported: " + path);
  std::vector<unsigned char> buf(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("read_pgm: truncated pixel data: " + path);
  Eigen::MatrixXd img(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      img(r, c) = static_cast<double>(buf[static_cast<size_t>(r) * width + c]);
  return img;
}

void write_pgm(const std::string& path, const Eigen::MatrixXd& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  const int height = static_cast<int>(img.rows());
  const int width = static_cast<int>(img.cols());
  char header[64];
  std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", width, height);
  out << header;
  std::vector<unsigned char> buf(static_cast<size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double v = std::round(std::min(255.0, std::max(0.0, img(r, c))));
      buf[static_cast<size_t>(r) * width + c] = static_cast<unsigned char>(v);
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace vampse
