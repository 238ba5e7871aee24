#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace hypermimo {

using cplx = std::complex<double>;
using CVector = std::vector<cplx>;

// Dense complex matrix with split real/imaginary row-major storage.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols);

  static ComplexMatrix identity(std::size_t n);
  // First `cols` columns of the n x n identity.
  static ComplexMatrix eye(std::size_t rows, std::size_t cols);
  static ComplexMatrix from_column(std::span<const cplx> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  cplx operator()(std::size_t i, std::size_t j) const {
    const std::size_t k = i * cols_ + j;
    return {re_[k], im_[k]};
  }
  void set(std::size_t i, std::size_t j, cplx v) {
    const std::size_t k = i * cols_ + j;
    re_[k] = v.real();
    im_[k] = v.imag();
  }

  std::span<const double> re() const { return re_; }
  std::span<const double> im() const { return im_; }
  std::span<double> re() { return re_; }
  std::span<double> im() { return im_; }

  CVector column(std::size_t j) const;
  void set_column(std::size_t j, std::span<const cplx> v);

  ComplexMatrix adjoint() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> re_;
  std::vector<double> im_;
};

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix operator+(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix operator-(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix operator*(cplx s, const ComplexMatrix& a);

CVector operator*(const ComplexMatrix& a, std::span<const cplx> x);
// a^H . x
CVector adjoint_times(const ComplexMatrix& a, std::span<const cplx> x);

double frobenius_norm_sq(const ComplexMatrix& m);
double norm_sq(std::span<const cplx> v);

// Thin QR factors: H = q_a * r_a with orthonormal q_a [n_r x n_u] and upper
// triangular r_a [n_u x n_u] whose diagonal is real and non-negative.
struct QrFactors {
  ComplexMatrix q_a;
  ComplexMatrix r_a;
};

// Householder QR. Throws SingularityError when |R[k,k]| < 1e-12 ||H||_F.
QrFactors qr_thin(const ComplexMatrix& h);

struct HermitianEig {
  ComplexMatrix vectors;        // columns are eigenvectors
  std::vector<double> values;   // descending
};

// Cyclic complex Jacobi. Throws ContractError when C is not Hermitian within
// 1e-10 (relative to max(1, ||C||_F)).
HermitianEig hermitian_eig(const ComplexMatrix& c);

// Solves A X = B for Hermitian positive definite A via Cholesky. Throws
// DefinitenessError on a non-positive pivot.
ComplexMatrix solve_hpd(const ComplexMatrix& a, const ComplexMatrix& b);

}  // namespace hypermimo
