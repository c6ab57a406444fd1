#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

namespace vampse {

// Orthogonal map on R^dim with an exact adjoint (= inverse).
class OrthogonalMap {
 public:
  virtual ~OrthogonalMap() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const = 0;
};

using MapPtr = std::shared_ptr<const OrthogonalMap>;

class DenseOrthogonalMap final : public OrthogonalMap {
 public:
  explicit DenseOrthogonalMap(Eigen::MatrixXd q);
  Eigen::Index dim() const override { return q_.rows(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override;
  const Eigen::MatrixXd& matrix() const { return q_; }

 private:
  Eigen::MatrixXd q_;
};

class IdentityMap final : public OrthogonalMap {
 public:
  explicit IdentityMap(Eigen::Index n) : n_(n) {}
  Eigen::Index dim() const override { return n_; }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return x; }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override { return x; }

 private:
  Eigen::Index n_;
};

// V^T = P.H.D chain of the structured operator: sign flips, normalized
// fast Walsh-Hadamard transform, then a permutation. apply() is V.
class SignPermHadamardMap final : public OrthogonalMap {
 public:
  SignPermHadamardMap(std::vector<double> signs, std::vector<int> perm);
  Eigen::Index dim() const override {
    return static_cast<Eigen::Index>(signs_.size());
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override;

 private:
  std::vector<double> signs_;
  std::vector<int> perm_;
};

// outer(inner(.)), both orthogonal
class ComposedMap final : public OrthogonalMap {
 public:
  ComposedMap(MapPtr outer, MapPtr inner);
  Eigen::Index dim() const override { return inner_->dim(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override;

 private:
  MapPtr outer_, inner_;
};

// 2-D orthonormal Haar analysis on vectorized side x side images
// (column-major). apply() analyzes, adjoint() synthesizes.
class Wavelet2dMap final : public OrthogonalMap {
 public:
  Wavelet2dMap(int side, int levels);
  Eigen::Index dim() const override {
    return static_cast<Eigen::Index>(side_) * side_;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const override;

 private:
  int side_, levels_;
};

struct Spectrum {
  Eigen::VectorXd values;  // length n, non-increasing, zero-padded past m
  int m = 0;
  int n = 0;

  double cond() const;  // values[0] / values[m-1]
  double sum_sq() const { return values.squaredNorm(); }
};

// m nonzero geometrically spaced values with s_1/s_m = cond, zero-padded to
// n and rescaled so that sum s_i^2 = n.
Spectrum geometric_spectrum(int m, int n, double cond);

enum class OperatorKind { DenseHaar, FastJphd, Custom };

// Measurement operator held in SVD form A = U diag(s) V^T with the spectrum
// zero-padded to the domain dimension. Immutable after construction; all
// members are safe to call concurrently.
class SpectralOperator {
 public:
  SpectralOperator(int m, int n, Eigen::VectorXd s, MapPtr u, MapPtr v,
                   OperatorKind kind);

  int rows() const { return m_; }
  int cols() const { return n_; }
  OperatorKind kind() const { return kind_; }
  const Eigen::VectorXd& singular_values() const { return s_; }
  double s_max() const { return s_.size() ? s_.maxCoeff() : 0.0; }
  Spectrum spectrum() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const;

  Eigen::VectorXd u_apply(const Eigen::VectorXd& x) const { return u_->apply(x); }
  Eigen::VectorXd u_adjoint(const Eigen::VectorXd& x) const { return u_->adjoint(x); }
  Eigen::VectorXd v_apply(const Eigen::VectorXd& x) const { return v_->apply(x); }
  Eigen::VectorXd v_adjoint(const Eigen::VectorXd& x) const { return v_->adjoint(x); }

  Eigen::MatrixXd dense() const;  // explicit materialization, small n only

 private:
  int m_, n_;
  Eigen::VectorXd s_;
  MapPtr u_, v_;
  OperatorKind kind_;
};

// Haar-distributed orthogonal matrix: QR of an i.i.d. N(0,1) matrix with the
// sign of each R diagonal entry folded into the corresponding Q column.
Eigen::MatrixXd haar_orthogonal(int n, std::uint64_t seed);

// dense-haar operator with independent Haar U and V
SpectralOperator build_operator(const Spectrum& spectrum, std::uint64_t u_seed,
                                std::uint64_t v_seed);

// A = J P H D: sign flips, normalized Hadamard, permutation, first-m rows.
// All singular values are 1. n must be a power of two.
SpectralOperator fast_jphd_operator(int n, int m, std::uint64_t seed);

// A = J diag(s) P H D, same chain with a prescribed spectrum
SpectralOperator fast_jphd_operator(const Spectrum& spectrum,
                                    std::uint64_t seed);

SpectralOperator custom_operator(int m, int n, Eigen::VectorXd s, MapPtr u,
                                 MapPtr v);

// full SVD of a dense matrix (used by the lifted scenarios)
SpectralOperator operator_from_dense(const Eigen::MatrixXd& a);

// B = A o Psi^T: the operator acting on wavelet coefficients, sharing A's
// spectrum. wavelet must act on R^cols(A).
SpectralOperator compose_with_synthesis(const SpectralOperator& a,
                                        MapPtr wavelet);

// 2-D orthonormal Haar wavelet transform, levels <= log2(side)
Eigen::MatrixXd haar_wavelet_2d_forward(const Eigen::MatrixXd& img,
                                        int levels);
Eigen::MatrixXd haar_wavelet_2d_inverse(const Eigen::MatrixXd& coeffs,
                                        int levels);

// 8-bit binary PGM (P5); pixels held as doubles in [0,255]
Eigen::MatrixXd read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Eigen::MatrixXd& img);

}  // namespace vampse
