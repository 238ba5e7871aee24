#include "hypermimo/complex_linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hypermimo/errors.hpp"

namespace hypermimo {

namespace {

std::string dims(const ComplexMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

ComplexMatrix::ComplexMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), re_(rows * cols, 0.0), im_(rows * cols, 0.0) {}

ComplexMatrix ComplexMatrix::identity(std::size_t n) { return eye(n, n); }

ComplexMatrix ComplexMatrix::eye(std::size_t rows, std::size_t cols) {
  ComplexMatrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m.set(i, i, 1.0);
  return m;
}

ComplexMatrix ComplexMatrix::from_column(std::span<const cplx> v) {
  ComplexMatrix m(v.size(), 1);
  m.set_column(0, v);
  return m;
}

CVector ComplexMatrix::column(std::size_t j) const {
  CVector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

void ComplexMatrix::set_column(std::size_t j, std::span<const cplx> v) {
  if (v.size() != rows_) {
    throw DimensionError("set_column: vector length " +
                         std::to_string(v.size()) + " vs matrix " + dims(*this));
  }
  for (std::size_t i = 0; i < rows_; ++i) set(i, j, v[i]);
}

ComplexMatrix ComplexMatrix::adjoint() const {
  ComplexMatrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out.set(j, i, std::conj((*this)(i, j)));
  return out;
}

bool ComplexMatrix::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(re_.begin(), re_.end(), finite) &&
         std::all_of(im_.begin(), im_.end(), finite);
}

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matrix product " + dims(a) + " * " + dims(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  ComplexMatrix c(m, n);
  auto ar = a.re(), ai = a.im(), br = b.re(), bi = b.im();
  auto cr = c.re(), ci = c.im();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xr = ar[i * k + p], xi = ai[i * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        cr[i * n + j] += xr * br[p * n + j] - xi * bi[p * n + j];
        ci[i * n + j] += xr * bi[p * n + j] + xi * br[p * n + j];
      }
    }
  }
  return c;
}

ComplexMatrix operator+(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("matrix sum " + dims(a) + " + " + dims(b));
  }
  ComplexMatrix c = a;
  for (std::size_t k = 0; k < c.re().size(); ++k) {
    c.re()[k] += b.re()[k];
    c.im()[k] += b.im()[k];
  }
  return c;
}

ComplexMatrix operator-(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("matrix difference " + dims(a) + " - " + dims(b));
  }
  ComplexMatrix c = a;
  for (std::size_t k = 0; k < c.re().size(); ++k) {
    c.re()[k] -= b.re()[k];
    c.im()[k] -= b.im()[k];
  }
  return c;
}

ComplexMatrix operator*(cplx s, const ComplexMatrix& a) {
  ComplexMatrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c.set(i, j, s * a(i, j));
  return c;
}

CVector operator*(const ComplexMatrix& a, std::span<const cplx> x) {
  if (a.cols() != x.size()) {
    throw DimensionError("matrix-vector product " + dims(a) + " * " +
                         std::to_string(x.size()));
  }
  CVector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

CVector adjoint_times(const ComplexMatrix& a, std::span<const cplx> x) {
  if (a.rows() != x.size()) {
    throw DimensionError("adjoint product " + dims(a) + "^H * " +
                         std::to_string(x.size()));
  }
  CVector y(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += std::conj(a(i, j)) * x[i];
  return y;
}

double frobenius_norm_sq(const ComplexMatrix& m) {
  double acc = 0.0;
  for (std::size_t k = 0; k < m.re().size(); ++k) {
    acc += m.re()[k] * m.re()[k] + m.im()[k] * m.im()[k];
  }
  return acc;
}

double norm_sq(std::span<const cplx> v) {
  double acc = 0.0;
  for (const cplx& c : v) acc += std::norm(c);
  return acc;
}

QrFactors qr_thin(const ComplexMatrix& h) {
  const std::size_t m = h.rows(), n = h.cols();
  if (m <= n || n == 0) {
    throw DimensionError("qr_thin: expected a tall matrix, got " + dims(h));
  }
  const double hnorm = std::sqrt(frobenius_norm_sq(h));

  // Work in std::complex column-major for the reflector sweeps.
  std::vector<cplx> a(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) a[j * m + i] = h(i, j);

  std::vector<std::vector<cplx>> reflectors(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx* col = &a[k * m];
    double xnorm = 0.0;
    for (std::size_t i = k; i < m; ++i) xnorm += std::norm(col[i]);
    xnorm = std::sqrt(xnorm);

    std::vector<cplx>& v = reflectors[k];
    v.assign(m - k, 0.0);
    if (xnorm == 0.0) continue;

    const cplx x0 = col[k];
    const cplx phase = std::abs(x0) > 0.0 ? x0 / std::abs(x0) : cplx(1.0);
    const cplx alpha = -phase * xnorm;
    for (std::size_t i = k; i < m; ++i) v[i - k] = col[i];
    v[0] -= alpha;
    const double vnorm = std::sqrt(norm_sq(v));
    if (vnorm == 0.0) continue;
    for (cplx& e : v) e /= vnorm;

    // A <- (I - 2 v v^H) A on the trailing block.
    for (std::size_t j = k; j < n; ++j) {
      cplx* cj = &a[j * m];
      cplx dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += std::conj(v[i - k]) * cj[i];
      for (std::size_t i = k; i < m; ++i) cj[i] -= 2.0 * v[i - k] * dot;
    }
  }

  QrFactors f{ComplexMatrix(m, n), ComplexMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) f.r_a.set(i, j, a[j * m + i]);

  // Q_A = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
  std::vector<cplx> q(m * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) q[j * m + j] = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    const std::vector<cplx>& v = reflectors[k];
    for (std::size_t j = 0; j < n; ++j) {
      cplx* cj = &q[j * m];
      cplx dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += std::conj(v[i - k]) * cj[i];
      for (std::size_t i = k; i < m; ++i) cj[i] -= 2.0 * v[i - k] * dot;
    }
  }

  // Rotate phases so that diag(R_A) is real and non-negative.
  for (std::size_t k = 0; k < n; ++k) {
    const cplx d = f.r_a(k, k);
    const double mag = std::abs(d);
    if (mag < 1e-12 * hnorm || hnorm == 0.0) {
      throw SingularityError("qr_thin: rank-deficient matrix, |R[" +
                             std::to_string(k) + "," + std::to_string(k) +
                             "]| = " + std::to_string(mag));
    }
    const cplx phase = d / mag;
    for (std::size_t j = k; j < n; ++j) f.r_a.set(k, j, std::conj(phase) * f.r_a(k, j));
    f.r_a.set(k, k, mag);
    for (std::size_t i = 0; i < m; ++i) q[k * m + i] *= phase;
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) f.q_a.set(i, j, q[j * m + i]);
  return f;
}

HermitianEig hermitian_eig(const ComplexMatrix& c) {
  const std::size_t n = c.rows();
  if (c.cols() != n) {
    throw DimensionError("hermitian_eig: matrix is not square, " + dims(c));
  }
  const double cnorm = std::sqrt(frobenius_norm_sq(c));
  if (frobenius_norm_sq(c - c.adjoint()) >
      std::pow(1e-10 * std::max(1.0, cnorm), 2)) {
    throw ContractError("hermitian_eig: matrix is not Hermitian");
  }

  std::vector<cplx> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i * n + j] = 0.5 * (c(i, j) + std::conj(c(j, i)));
  std::vector<cplx> u(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) u[i * n + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += std::norm(a[i * n + j]);
    return std::sqrt(s);
  };

  const double tol = 1e-12 * std::max(1.0, cnorm);
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const cplx apq = a[p * n + q];
        const double mag = std::abs(apq);
        if (mag < 1e-300) continue;
        // V = diag(1, w) [[c, s], [-s, c]] turns the (p,q) block real and
        // then diagonalizes it.
        const cplx w = std::conj(apq) / mag;
        const double app = a[p * n + p].real(), aqq = a[q * n + q].real();
        const double theta = (aqq - app) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        const cplx vpp = cs, vpq = sn, vqp = -sn * w, vqq = cs * w;

        // A <- A V (columns p, q)
        for (std::size_t i = 0; i < n; ++i) {
          const cplx aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = aip * vpp + aiq * vqp;
          a[i * n + q] = aip * vpq + aiq * vqq;
        }
        // A <- V^H A (rows p, q)
        for (std::size_t j = 0; j < n; ++j) {
          const cplx apj = a[p * n + j], aqj = a[q * n + j];
          a[p * n + j] = std::conj(vpp) * apj + std::conj(vqp) * aqj;
          a[q * n + j] = std::conj(vpq) * apj + std::conj(vqq) * aqj;
        }
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const cplx uip = u[i * n + p], uiq = u[i * n + q];
          u[i * n + p] = uip * vpp + uiq * vqp;
          u[i * n + q] = uip * vpq + uiq * vqq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a[x * n + x].real() > a[y * n + y].real();
  });

  HermitianEig out{ComplexMatrix(n, n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.values[k] = a[src * n + src].real();
    for (std::size_t i = 0; i < n; ++i) out.vectors.set(i, k, u[i * n + src]);
  }
  return out;
}

ComplexMatrix solve_hpd(const ComplexMatrix& a, const ComplexMatrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.rows() != n) {
    throw DimensionError("solve_hpd: A " + dims(a) + ", B " + dims(b));
  }
  // Lower Cholesky factor, row-major.
  std::vector<cplx> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j).real();
    for (std::size_t k = 0; k < j; ++k) d -= std::norm(l[j * n + k]);
    if (!(d > 0.0)) {
      throw DefinitenessError("solve_hpd: non-positive pivot " +
                              std::to_string(d) + " at column " +
                              std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      cplx s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * std::conj(l[j * n + k]);
      l[i * n + j] = s / ljj;
    }
  }

  ComplexMatrix x(n, b.cols());
  std::vector<cplx> w(n);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      cplx s = b(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * w[k];
      w[i] = s / l[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      cplx s = w[i];
      for (std::size_t k = i + 1; k < n; ++k) s -= std::conj(l[k * n + i]) * x(k, c);
      x.set(i, c, s / l[i * n + i].real());
    }
  }
  return x;
}

}  // namespace hypermimo
