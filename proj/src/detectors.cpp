#include "hypermimo/detectors.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "hypermimo/errors.hpp"

namespace hypermimo {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

void DetectorWeights::validate(std::size_t n_users) const {
  if (theta.empty() || theta.size() != psi.size()) {
    throw ContractError("detector weights need T >= 1 matching theta/psi layers");
  }
  for (std::size_t t = 0; t < theta.size(); ++t) {
    if (theta[t].rows() != n_users || theta[t].cols() != n_users ||
        psi[t].size() != n_users) {
      throw DimensionError("detector weights layer " + std::to_string(t) +
                           " does not match n_users=" + std::to_string(n_users));
    }
    for (double p : psi[t]) {
      if (!(p > 0.0)) {
        throw ContractError("detector weights: psi must be positive (layer " +
                            std::to_string(t) + ")");
      }
    }
  }
}

OampnetWeights OampnetWeights::unity(std::size_t iterations) {
  return {std::vector<double>(iterations, 1.0), std::vector<double>(iterations, 1.0)};
}

std::vector<std::size_t> hard_decision(std::span<const cplx> soft,
                                       std::span<const cplx> constellation) {
  std::vector<std::size_t> out(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < constellation.size(); ++k) {
      const double d = std::norm(soft[i] - constellation[k]);
      if (d < best) {
        best = d;
        out[i] = k;
      }
    }
  }
  return out;
}

DetectionResult lmmse(const ComplexMatrix& h, double sigma, std::span<const cplx> y,
                      std::span<const cplx> constellation) {
  if (!(sigma >= 0.0)) throw ContractError("lmmse: sigma must be >= 0");
  const std::size_t nu = h.cols();
  ComplexMatrix a = h.adjoint() * h;
  for (std::size_t i = 0; i < nu; ++i) a.set(i, i, a(i, i) + sigma * sigma);
  const CVector rhs = adjoint_times(h, y);
  const ComplexMatrix x = solve_hpd(a, ComplexMatrix::from_column(rhs));
  DetectionResult out;
  out.soft = x.column(0);
  out.hard = hard_decision(out.soft, constellation);
  return out;
}

double ml_objective(const ComplexMatrix& h, std::span<const cplx> y,
                    std::span<const std::size_t> symbols,
                    std::span<const cplx> constellation) {
  CVector x(symbols.size());
  for (std::size_t u = 0; u < symbols.size(); ++u) x[u] = constellation[symbols[u]];
  CVector r = h * x;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = y[i] - r[i];
  return norm_sq(r);
}

namespace {

struct MlSearch {
  std::size_t nu, nr, q;
  std::vector<CVector> hx;              // hx[u * q + k] = h_u * c_k
  std::vector<double> last_col_energy;  // |c_k|^2 ||h_{nu-1}||^2
  CVector last_col;
  std::span<const cplx> constellation;
  std::vector<CVector> residual;        // per depth
  std::vector<std::size_t> current, best;
  double best_value = std::numeric_limits<double>::infinity();

  void descend(std::size_t depth) {
    const CVector& r = residual[depth];
    if (depth + 1 == nu) {
      // ||r - h c||^2 = ||r||^2 - 2 Re(conj(c) h^H r) + |c|^2 ||h||^2
      const double rr = norm_sq(r);
      cplx hr = 0.0;
      for (std::size_t i = 0; i < nr; ++i) hr += std::conj(last_col[i]) * r[i];
      for (std::size_t k = 0; k < q; ++k) {
        const double v = rr - 2.0 * std::real(std::conj(constellation[k]) * hr) +
                         last_col_energy[k];
        if (v < best_value) {
          best_value = v;
          current[depth] = k;
          best = current;
        }
      }
      return;
    }
    CVector& next = residual[depth + 1];
    for (std::size_t k = 0; k < q; ++k) {
      const CVector& c = hx[depth * q + k];
      for (std::size_t i = 0; i < nr; ++i) next[i] = r[i] - c[i];
      current[depth] = k;
      descend(depth + 1);
    }
  }
};

}  // namespace

DetectionResult max_likelihood(const ComplexMatrix& h, std::span<const cplx> y,
                               std::span<const cplx> constellation, std::uint64_t cap) {
  const std::size_t nu = h.cols(), nr = h.rows(), q = constellation.size();
  if (y.size() != nr) throw DimensionError("max_likelihood: y length mismatch");
  if (nu == 0 || q == 0) throw ContractError("max_likelihood: empty problem");
  double space = 1.0;
  for (std::size_t u = 0; u < nu; ++u) space *= static_cast<double>(q);
  if (space > static_cast<double>(cap)) {
    throw ContractError("max_likelihood: search space " + std::to_string(space) +
                        " exceeds cap " + std::to_string(cap));
  }

  MlSearch s{nu, nr, q, {}, {}, h.column(nu - 1), constellation, {}, {}, {}};
  s.hx.reserve(nu * q);
  for (std::size_t u = 0; u < nu; ++u) {
    const CVector col = h.column(u);
    for (std::size_t k = 0; k < q; ++k) {
      CVector v(nr);
      for (std::size_t i = 0; i < nr; ++i) v[i] = col[i] * constellation[k];
      s.hx.push_back(std::move(v));
    }
  }
  const double last_energy = norm_sq(s.last_col);
  for (std::size_t k = 0; k < q; ++k) {
    s.last_col_energy.push_back(std::norm(constellation[k]) * last_energy);
  }
  s.residual.assign(nu, CVector(nr));
  s.residual[0].assign(y.begin(), y.end());
  s.current.assign(nu, 0);
  s.descend(0);

  DetectionResult out;
  out.hard = s.best;
  out.soft.resize(nu);
  for (std::size_t u = 0; u < nu; ++u) out.soft[u] = constellation[out.hard[u]];
  return out;
}

cplx gaussian_denoiser(cplx z, double tau, std::span<const cplx> constellation) {
  if (!(tau > 0.0)) throw ContractError("gaussian_denoiser: tau must be positive");
  double emin = std::numeric_limits<double>::infinity();
  for (const cplx& x : constellation) emin = std::min(emin, std::norm(z - x) / tau);
  cplx num = 0.0;
  double den = 0.0;
  for (const cplx& x : constellation) {
    const double w = std::exp(-(std::norm(z - x) / tau - emin));
    num += w * x;
    den += w;
  }
#ifndef NDEBUG
  double total = 0.0;
  for (const cplx& x : constellation) {
    total += std::exp(-(std::norm(z - x) / tau - emin)) / den;
  }
  assert(!std::isfinite(total) || std::fabs(total - 1.0) < 1e-12);
#endif
  return num / den;
}

std::vector<double> tau_estimate(const ComplexMatrix& theta_t,
                                 std::span<const double> psi_t,
                                 const ComplexMatrix& r_a,
                                 std::span<const cplx> y_star,
                                 std::span<const cplx> x_hat, double sigma,
                                 std::size_t n_rx) {
  const std::size_t nu = r_a.rows();
  if (psi_t.size() != nu) throw DimensionError("tau_estimate: psi length mismatch");
  const double r_norm = frobenius_norm_sq(r_a);
  if (!(r_norm > 0.0)) {
    throw ContractError("tau_estimate: degenerate channel, ||R_A||_F = 0");
  }
  const double mismatch =
      frobenius_norm_sq(ComplexMatrix::identity(nu) - theta_t * r_a);
  CVector resid = r_a * x_hat;
  for (std::size_t i = 0; i < nu; ++i) resid[i] = y_star[i] - resid[i];
  const double sig2 = sigma * sigma;
  const double clipped =
      std::max(0.0, norm_sq(resid) - static_cast<double>(n_rx) * sig2);
  const double common = mismatch * clipped / r_norm + frobenius_norm_sq(theta_t) * sig2;

  std::vector<double> tau(nu);
  for (std::size_t i = 0; i < nu; ++i) {
    tau[i] = std::max(psi_t[i] * common / static_cast<double>(nu), kTauMin);
  }
  return tau;
}

std::vector<CVector> mmnet_trajectory(const DetectorWeights& weights,
                                      const ComplexMatrix& r_a, double sigma,
                                      std::size_t n_rx,
                                      std::span<const cplx> y_star,
                                      std::span<const cplx> constellation) {
  const std::size_t nu = r_a.rows();
  weights.validate(nu);
  CVector x(nu, 0.0);
  std::vector<CVector> out;
  for (std::size_t t = 0; t < weights.iterations(); ++t) {
    CVector resid = r_a * x;
    for (std::size_t i = 0; i < nu; ++i) resid[i] = y_star[i] - resid[i];
    const CVector step = weights.theta[t] * resid;
    const std::vector<double> tau =
        tau_estimate(weights.theta[t], weights.psi[t], r_a, y_star, x, sigma, n_rx);
    CVector next(nu);
    for (std::size_t i = 0; i < nu; ++i) {
      next[i] = gaussian_denoiser(x[i] + step[i], tau[i], constellation);
      if (!std::isfinite(next[i].real()) || !std::isfinite(next[i].imag())) {
        throw NumericError("mmnet_forward: non-finite estimate at iteration " +
                           std::to_string(t + 1));
      }
    }
    x = std::move(next);
    out.push_back(x);
  }
  return out;
}

DetectionResult mmnet_forward(const DetectorWeights& weights,
                              const ChannelRealization& real,
                              std::span<const cplx> y_star,
                              std::span<const cplx> constellation) {
  const auto traj = mmnet_trajectory(weights, real.qr.r_a, real.sigma,
                                     real.h.rows(), y_star, constellation);
  DetectionResult out;
  out.soft = traj.back();
  out.hard = hard_decision(out.soft, constellation);
  return out;
}

OampLinearStep oamp_linear_step(const ComplexMatrix& h, const ComplexMatrix& gram,
                                double sigma, std::span<const cplx> residual) {
  const std::size_t nu = h.cols(), nr = h.rows();
  double tr_gram = 0.0;
  for (std::size_t i = 0; i < nu; ++i) tr_gram += gram(i, i).real();
  const double sig2 = sigma * sigma;

  OampLinearStep s;
  s.v2 = std::max(kOampVarianceMin,
                  (norm_sq(residual) - static_cast<double>(nr) * sig2) / tr_gram);
  ComplexMatrix m = s.v2 * gram;
  for (std::size_t i = 0; i < nu; ++i) m.set(i, i, m(i, i) + sig2);
  // v2 H^H (v2 H H^H + sigma^2 I)^-1 == v2 (v2 H^H H + sigma^2 I)^-1 H^H
  const ComplexMatrix w = s.v2 * solve_hpd(m, h.adjoint());
  const ComplexMatrix wh = w * h;
  double tr_wh = 0.0;
  for (std::size_t i = 0; i < nu; ++i) tr_wh += wh(i, i).real();
  if (!(tr_wh >= 1e-12)) {
    throw NumericError("oampnet: trace(W H) = " + std::to_string(tr_wh) +
                       " too small to normalize");
  }
  const double scale = static_cast<double>(nu) / tr_wh;
  s.a_hat = scale * w;
  const ComplexMatrix ah = scale * wh;
  for (std::size_t i = 0; i < nu; ++i) s.tr_ah += ah(i, i).real();
  s.frob_ah = frobenius_norm_sq(ah);
  s.frob_a = frobenius_norm_sq(s.a_hat);
  return s;
}

double oamp_tau(const OampLinearStep& step, double theta, double sigma,
                std::size_t n_users) {
  const double n = static_cast<double>(n_users);
  // tr(B B^H) with B = I - theta a_hat H
  const double tr_bb = n - 2.0 * theta * step.tr_ah + theta * theta * step.frob_ah;
  const double tau = tr_bb * step.v2 / (2.0 * n) +
                     theta * theta * sigma * sigma * step.frob_a / (4.0 * n);
  return std::max(tau, kTauMin);
}

DetectionResult oampnet_forward(const OampnetWeights& weights, const ComplexMatrix& h,
                                double sigma, std::span<const cplx> y,
                                std::span<const cplx> constellation) {
  if (weights.gamma.empty() || weights.gamma.size() != weights.theta.size()) {
    throw ContractError("oampnet: need T >= 1 matching gamma/theta");
  }
  const std::size_t nu = h.cols(), nr = h.rows();
  const ComplexMatrix gram = h.adjoint() * h;
  CVector x(nu, 0.0);
  for (std::size_t t = 0; t < weights.iterations(); ++t) {
    CVector resid = h * x;
    for (std::size_t i = 0; i < nr; ++i) resid[i] = y[i] - resid[i];
    const OampLinearStep step = oamp_linear_step(h, gram, sigma, resid);
    const CVector ar = step.a_hat * resid;
    const double tau = oamp_tau(step, weights.theta[t], sigma, nu);
    for (std::size_t i = 0; i < nu; ++i) {
      x[i] = gaussian_denoiser(x[i] + weights.gamma[t] * ar[i], tau, constellation);
    }
  }
  DetectionResult out;
  out.soft = x;
  out.hard = hard_decision(out.soft, constellation);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor matrix_tensor(std::span<const ComplexMatrix* const> ms, bool imag) {
  const std::size_t b = ms.size(), r = ms[0]->rows(), c = ms[0]->cols();
  Tensor t({b, r, c});
  for (std::size_t s = 0; s < b; ++s) {
    const auto src = imag ? ms[s]->im() : ms[s]->re();
    std::copy(src.begin(), src.end(), t.data.begin() + s * r * c);
  }
  return t;
}

Tensor shared_matrix_tensor(const ComplexMatrix& m, bool imag) {
  const auto src = imag ? m.im() : m.re();
  return Tensor({m.rows(), m.cols()}, std::vector<double>(src.begin(), src.end()));
}

Tensor vector_tensor(std::span<const CVector> vs, bool imag) {
  const std::size_t b = vs.size(), n = vs[0].size();
  Tensor t({b, n});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < n; ++i)
      t[s * n + i] = imag ? vs[s][i].imag() : vs[s][i].real();
  return t;
}

// Matrix (shared [n x m] or per-sample [B x n x m]) times vectors [B x m].
ComplexNode cmatvec(Graph& g, ComplexNode m, ComplexNode v) {
  const auto ms = g.shape(m.re);
  const auto vs = g.shape(v.re);
  const std::size_t b = vs[0];
  auto real_mv = [&](NodeId a, NodeId x) {
    if (ms.size() == 2) return g.matmul(x, g.transpose(a));
    const NodeId col = g.reshape(x, {b, vs[1], 1});
    return g.reshape(g.batch_matmul(a, col), {b, ms[1]});
  };
  const NodeId rr = real_mv(m.re, v.re), ii = real_mv(m.im, v.im);
  const NodeId ri = real_mv(m.re, v.im), ir = real_mv(m.im, v.re);
  return {g.sub(rr, ii), g.add(ri, ir)};
}

NodeId lift(Graph& g, NodeId m, std::size_t b) {
  const auto s = g.shape(m);
  if (s.size() == 3) return m;
  return g.expand(g.reshape(m, {1, s[0], s[1]}), {b, s[0], s[1]});
}

// Complex matrix product; a shared operand is lifted when the other one is
// per-sample.
ComplexNode cmatmul(Graph& g, ComplexNode a, ComplexNode c, std::size_t b) {
  const bool batched = g.shape(a.re).size() == 3 || g.shape(c.re).size() == 3;
  auto mm = [&](NodeId x, NodeId y) {
    if (!batched) return g.matmul(x, y);
    return g.batch_matmul(lift(g, x, b), lift(g, y, b));
  };
  const NodeId rr = mm(a.re, c.re), ii = mm(a.im, c.im);
  const NodeId ri = mm(a.re, c.im), ir = mm(a.im, c.re);
  return {g.sub(rr, ii), g.add(ri, ir)};
}

// Squared Frobenius norm of a shared [n x m] or per-sample [B x n x m]
// matrix, as a [B] vector.
NodeId per_sample_energy(Graph& g, ComplexNode m, std::size_t b) {
  const NodeId sq = g.add(g.square(m.re), g.square(m.im));
  if (g.shape(sq).size() == 2) return g.expand(g.sum(sq), {b});
  return g.sum_rows(sq);
}

NodeId as_batch_vector(Graph& g, NodeId v, std::size_t b) {
  const auto s = g.shape(v);
  if (s.size() == 2) return v;
  return g.expand(g.reshape(v, {1, s[0]}), {b, s[0]});
}

NodeId broadcast_per_sample(Graph& g, NodeId v, std::size_t b, std::size_t n) {
  return g.expand(g.reshape(v, {b, 1}), {b, n});
}

NodeId batch_constant(Graph& g, const std::vector<double>& v) {
  return g.constant(Tensor({v.size()}, v));
}

}  // namespace

MmnetBatch make_mmnet_batch(std::span<const ChannelRealization* const> reals,
                            std::span<const CVector> y_star, bool shared) {
  if (reals.empty() || reals.size() != y_star.size()) {
    throw DimensionError("mmnet batch: realizations and y* differ in count");
  }
  MmnetBatch b;
  b.batch = reals.size();
  b.n_users = reals[0]->qr.r_a.rows();
  b.n_rx = reals[0]->h.rows();
  if (shared) {
    b.r_re = shared_matrix_tensor(reals[0]->qr.r_a, false);
    b.r_im = shared_matrix_tensor(reals[0]->qr.r_a, true);
  } else {
    std::vector<const ComplexMatrix*> rs;
    for (const auto* r : reals) rs.push_back(&r->qr.r_a);
    b.r_re = matrix_tensor(rs, false);
    b.r_im = matrix_tensor(rs, true);
  }
  b.ystar_re = vector_tensor(y_star, false);
  b.ystar_im = vector_tensor(y_star, true);
  for (const auto* r : reals) b.sigma.push_back(r->sigma);
  return b;
}

ComplexNode denoiser_graph(Graph& g, ComplexNode z, NodeId tau,
                           std::span<const cplx> constellation) {
  const std::size_t q = constellation.size();
  std::vector<NodeId> e(q);
  for (std::size_t k = 0; k < q; ++k) {
    const NodeId dr = g.add_const(z.re, -constellation[k].real());
    const NodeId di = g.add_const(z.im, -constellation[k].imag());
    e[k] = g.div(g.add(g.square(dr), g.square(di)), tau);
  }
  // Shifting every exponent by the same constant leaves the softmax and its
  // gradient unchanged, so the shift enters as a constant.
  Tensor shift = g.value(e[0]);
  for (std::size_t k = 1; k < q; ++k) {
    const Tensor& ek = g.value(e[k]);
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = std::min(shift[i], ek[i]);
  }
  const NodeId m = g.constant(std::move(shift));

  NodeId norm = 0, num_re = 0, num_im = 0;
  for (std::size_t k = 0; k < q; ++k) {
    const NodeId w = g.exp(g.scale(g.sub(e[k], m), -1.0));
    const NodeId wr = g.scale(w, constellation[k].real());
    const NodeId wi = g.scale(w, constellation[k].imag());
    if (k == 0) {
      norm = w;
      num_re = wr;
      num_im = wi;
    } else {
      norm = g.add(norm, w);
      num_re = g.add(num_re, wr);
      num_im = g.add(num_im, wi);
    }
  }
  return {g.div(num_re, norm), g.div(num_im, norm)};
}

ComplexNode mmnet_graph_forward(Graph& g, const MmnetGraphWeights& w,
                                const MmnetBatch& batch,
                                std::span<const cplx> constellation) {
  if (w.theta.empty() || w.theta.size() != w.psi.size()) {
    throw ContractError("mmnet graph: need T >= 1 matching theta/psi layers");
  }
  const std::size_t b = batch.batch, n = batch.n_users;
  const ComplexNode r{g.constant(batch.r_re), g.constant(batch.r_im)};
  const ComplexNode ys{g.constant(batch.ystar_re), g.constant(batch.ystar_im)};

  std::vector<double> r_norm(b), noise_floor(b), sig2(b);
  for (std::size_t s = 0; s < b; ++s) {
    double acc = 0.0;
    if (batch.shared_channel()) {
      for (std::size_t k = 0; k < n * n; ++k) {
        acc += batch.r_re[k] * batch.r_re[k] + batch.r_im[k] * batch.r_im[k];
      }
    } else {
      for (std::size_t k = 0; k < n * n; ++k) {
        const double re = batch.r_re[s * n * n + k], im = batch.r_im[s * n * n + k];
        acc += re * re + im * im;
      }
    }
    if (!(acc > 0.0)) throw ContractError("mmnet graph: degenerate channel, ||R_A||_F = 0");
    r_norm[s] = acc;
    sig2[s] = batch.sigma[s] * batch.sigma[s];
    noise_floor[s] = static_cast<double>(batch.n_rx) * sig2[s];
  }
  const NodeId r_norm_n = batch_constant(g, r_norm);
  const NodeId floor_n = batch_constant(g, noise_floor);
  const NodeId sig2_n = batch_constant(g, sig2);

  ComplexNode x{g.constant(Tensor({b, n})), g.constant(Tensor({b, n}))};
  for (std::size_t t = 0; t < w.theta.size(); ++t) {
    const ComplexNode& theta = w.theta[t];
    const ComplexNode rx = cmatvec(g, r, x);
    const ComplexNode resid{g.sub(ys.re, rx.re), g.sub(ys.im, rx.im)};
    const ComplexNode step = cmatvec(g, theta, resid);
    const ComplexNode z{g.add(x.re, step.re), g.add(x.im, step.im)};

    const ComplexNode tr = cmatmul(g, theta, r, b);
    const auto ps = g.shape(tr.re);
    Tensor eye(ps);
    const std::size_t reps = ps.size() == 3 ? ps[0] : 1;
    for (std::size_t s = 0; s < reps; ++s)
      for (std::size_t i = 0; i < n; ++i) eye[s * n * n + i * n + i] = 1.0;
    const ComplexNode mismatch{g.sub(g.constant(std::move(eye)), tr.re),
                               g.scale(tr.im, -1.0)};
    const NodeId mismatch_sq = per_sample_energy(g, mismatch, b);
    const NodeId theta_sq = per_sample_energy(g, theta, b);
    const NodeId resid_sq =
        g.sum_rows(g.add(g.square(resid.re), g.square(resid.im)));
    const NodeId clipped = g.max_const(g.sub(resid_sq, floor_n), 0.0);
    const NodeId common = g.add(g.div(g.mul(mismatch_sq, clipped), r_norm_n),
                                g.mul(theta_sq, sig2_n));
    NodeId tau = g.mul(as_batch_vector(g, w.psi[t], b),
                       broadcast_per_sample(g, common, b, n));
    tau = g.max_const(g.scale(tau, 1.0 / static_cast<double>(n)), kTauMin);
    x = denoiser_graph(g, z, tau, constellation);
  }
  return x;
}

OampBatch make_oamp_batch(std::span<const ChannelRealization* const> reals,
                          std::span<const CVector> y) {
  if (reals.empty() || reals.size() != y.size()) {
    throw DimensionError("oamp batch: realizations and y differ in count");
  }
  OampBatch b;
  b.batch = reals.size();
  b.n_users = reals[0]->h.cols();
  b.n_rx = reals[0]->h.rows();
  for (std::size_t s = 0; s < b.batch; ++s) {
    b.h.push_back(reals[s]->h);
    b.gram.push_back(reals[s]->h.adjoint() * reals[s]->h);
    b.y.push_back(y[s]);
    b.sigma.push_back(reals[s]->sigma);
  }
  return b;
}

ComplexNode oampnet_graph_forward(Graph& g, NodeId gamma, NodeId theta,
                                  std::size_t iterations, const OampBatch& batch,
                                  std::span<const cplx> constellation) {
  const std::size_t b = batch.batch, n = batch.n_users, nr = batch.n_rx;
  std::vector<const ComplexMatrix*> hs;
  for (const auto& h : batch.h) hs.push_back(&h);
  const ComplexNode h{g.constant(matrix_tensor(hs, false)),
                      g.constant(matrix_tensor(hs, true))};
  const ComplexNode y{g.constant(vector_tensor(batch.y, false)),
                      g.constant(vector_tensor(batch.y, true))};
  const NodeId gamma_row = g.reshape(gamma, {1, iterations});
  const NodeId theta_row = g.reshape(theta, {1, iterations});

  ComplexNode x{g.constant(Tensor({b, n})), g.constant(Tensor({b, n}))};
  for (std::size_t t = 0; t < iterations; ++t) {
    const ComplexNode hx = cmatvec(g, h, x);
    const ComplexNode resid{g.sub(y.re, hx.re), g.sub(y.im, hx.im)};

    const Tensor& rre = g.value(resid.re);
    const Tensor& rim = g.value(resid.im);
    std::vector<OampLinearStep> steps;
    steps.reserve(b);
    std::vector<const ComplexMatrix*> as;
    std::vector<double> k0(b), k1(b), k2(b);
    for (std::size_t s = 0; s < b; ++s) {
      CVector r(nr);
      for (std::size_t i = 0; i < nr; ++i) r[i] = {rre[s * nr + i], rim[s * nr + i]};
      steps.push_back(oamp_linear_step(batch.h[s], batch.gram[s], batch.sigma[s], r));
    }
    const double nd = static_cast<double>(n);
    for (std::size_t s = 0; s < b; ++s) {
      const OampLinearStep& st = steps[s];
      as.push_back(&st.a_hat);
      const double sig2 = batch.sigma[s] * batch.sigma[s];
      k0[s] = st.v2 / 2.0;
      k1[s] = -st.v2 * st.tr_ah / nd;
      k2[s] = st.v2 * st.frob_ah / (2.0 * nd) + sig2 * st.frob_a / (4.0 * nd);
    }
    const ComplexNode a_hat{g.constant(matrix_tensor(as, false)),
                            g.constant(matrix_tensor(as, true))};
    const ComplexNode ar = cmatvec(g, a_hat, resid);

    const NodeId gamma_t = g.reshape(g.slice_cols(gamma_row, t, 1, 1), {1, 1});
    const NodeId gamma_b = g.expand(gamma_t, {b, n});
    const ComplexNode z{g.add(x.re, g.mul(gamma_b, ar.re)),
                        g.add(x.im, g.mul(gamma_b, ar.im))};

    const NodeId theta_b =
        g.expand(g.reshape(g.slice_cols(theta_row, t, 1, 1), {1}), {b});
    NodeId tau = g.add(batch_constant(g, k0), g.mul(theta_b, batch_constant(g, k1)));
    tau = g.add(tau, g.mul(g.square(theta_b), batch_constant(g, k2)));
    tau = g.max_const(broadcast_per_sample(g, tau, b, n), kTauMin);
    x = denoiser_graph(g, z, tau, constellation);
  }
  return x;
}

NodeId mse_loss_graph(Graph& g, ComplexNode soft, std::span<const CVector> x_true) {
  const auto s = g.shape(soft.re);
  if (s.size() != 2 || s[0] != x_true.size() || x_true.empty() ||
      x_true[0].size() != s[1]) {
    throw DimensionError("mse_loss: soft estimate " + ad::shape_str(s) +
                         " does not match " + std::to_string(x_true.size()) +
                         " targets");
  }
  const NodeId dr = g.sub(soft.re, g.constant(vector_tensor(x_true, false)));
  const NodeId di = g.sub(soft.im, g.constant(vector_tensor(x_true, true)));
  const NodeId total = g.sum(g.add(g.square(dr), g.square(di)));
  return g.scale(total, 1.0 / static_cast<double>(s[0]));
}

}  // namespace hypermimo
