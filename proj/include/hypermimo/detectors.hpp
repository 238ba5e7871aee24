#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hypermimo/autodiff.hpp"
#include "hypermimo/channel.hpp"
#include "hypermimo/complex_linalg.hpp"

namespace hypermimo {

// Floor on every denoiser variance.
constexpr double kTauMin = 1e-9;
// Floor on the OAMP error-variance estimate v^2.
constexpr double kOampVarianceMin = 1e-9;
constexpr std::uint64_t kDefaultMlCap = 1'000'000;

struct DetectorWeights {
  std::vector<ComplexMatrix> theta;       // T matrices [n_u x n_u]
  std::vector<std::vector<double>> psi;   // T positive vectors [n_u]

  std::size_t iterations() const { return theta.size(); }
  void validate(std::size_t n_users) const;
};

struct OampnetWeights {
  std::vector<double> gamma;  // linear-step scale per iteration
  std::vector<double> theta;  // noise-variance scale per iteration

  static OampnetWeights unity(std::size_t iterations);
  std::size_t iterations() const { return gamma.size(); }
};

struct DetectionResult {
  CVector soft;
  std::vector<std::size_t> hard;
};

// Nearest constellation point per entry, lowest index on ties.
std::vector<std::size_t> hard_decision(std::span<const cplx> soft,
                                       std::span<const cplx> constellation);

DetectionResult lmmse(const ComplexMatrix& h, double sigma, std::span<const cplx> y,
                      std::span<const cplx> constellation);

double ml_objective(const ComplexMatrix& h, std::span<const cplx> y,
                    std::span<const std::size_t> symbols,
                    std::span<const cplx> constellation);

// Exhaustive search over constellation^n_u. Candidates are visited in
// lexicographic order of their index vectors and only strict improvements are
// kept, so ties resolve to the lexicographically smallest vector.
DetectionResult max_likelihood(const ComplexMatrix& h, std::span<const cplx> y,
                               std::span<const cplx> constellation,
                               std::uint64_t cap = kDefaultMlCap);

// Posterior mean of a constellation point observed in complex Gaussian noise
// of variance tau.
cplx gaussian_denoiser(cplx z, double tau, std::span<const cplx> constellation);

std::vector<double> tau_estimate(const ComplexMatrix& theta_t,
                                 std::span<const double> psi_t,
                                 const ComplexMatrix& r_a,
                                 std::span<const cplx> y_star,
                                 std::span<const cplx> x_hat, double sigma,
                                 std::size_t n_rx);

// Soft output after every layer, for inspection in tests.
std::vector<CVector> mmnet_trajectory(const DetectorWeights& weights,
                                      const ComplexMatrix& r_a, double sigma,
                                      std::size_t n_rx,
                                      std::span<const cplx> y_star,
                                      std::span<const cplx> constellation);

DetectionResult mmnet_forward(const DetectorWeights& weights,
                              const ChannelRealization& real,
                              std::span<const cplx> y_star,
                              std::span<const cplx> constellation);

// Linear-step quantities of one OAMP iteration. The normalized matrix
// a_hat = n_u / tr(W H) * W with W = v2 (v2 H^H H + sigma^2 I)^-1 H^H.
struct OampLinearStep {
  ComplexMatrix a_hat;   // [n_u x n_r]
  double v2 = 0.0;
  double tr_ah = 0.0;    // Re tr(a_hat H)
  double frob_ah = 0.0;  // ||a_hat H||_F^2
  double frob_a = 0.0;   // ||a_hat||_F^2
};

OampLinearStep oamp_linear_step(const ComplexMatrix& h, const ComplexMatrix& gram,
                                double sigma, std::span<const cplx> residual);

// Shared scalar denoiser variance of one OAMP iteration.
double oamp_tau(const OampLinearStep& step, double theta, double sigma,
                std::size_t n_users);

DetectionResult oampnet_forward(const OampnetWeights& weights, const ComplexMatrix& h,
                                double sigma, std::span<const cplx> y,
                                std::span<const cplx> constellation);

// ---------------------------------------------------------------------------
// Batched differentiable forward passes. Complex quantities are carried as
// (re, im) node pairs; vectors are [B x n], per-sample matrices [B x n x m]
// and matrices shared by the whole batch [n x m].

struct ComplexNode {
  ad::NodeId re;
  ad::NodeId im;
};

struct MmnetBatch {
  std::size_t batch = 0;
  std::size_t n_users = 0;
  std::size_t n_rx = 0;
  ad::Tensor r_re, r_im;          // [B x n x n], or [n x n] when shared
  ad::Tensor ystar_re, ystar_im;  // [B x n]
  std::vector<double> sigma;      // [B]

  bool shared_channel() const { return r_re.rank() == 2; }
};

// Packs realizations and their y* into a batch. When all realizations are the
// same channel, pass `shared` to keep a single R_A.
MmnetBatch make_mmnet_batch(std::span<const ChannelRealization* const> reals,
                            std::span<const CVector> y_star, bool shared = false);

struct MmnetGraphWeights {
  std::vector<ComplexNode> theta;  // per layer, [B x n x n] or [n x n]
  std::vector<ad::NodeId> psi;     // per layer, [B x n] or [n]
};

// T layers of the QR-domain MMNet iteration; returns the final soft estimate.
ComplexNode mmnet_graph_forward(ad::Graph& g, const MmnetGraphWeights& w,
                                const MmnetBatch& batch,
                                std::span<const cplx> constellation);

struct OampBatch {
  std::size_t batch = 0;
  std::size_t n_users = 0;
  std::size_t n_rx = 0;
  std::vector<ComplexMatrix> h;
  std::vector<ComplexMatrix> gram;  // H^H H
  std::vector<CVector> y;
  std::vector<double> sigma;
};

OampBatch make_oamp_batch(std::span<const ChannelRealization* const> reals,
                          std::span<const CVector> y);

// gamma and theta are [T] parameter nodes. The OAMP linear-step matrices and
// variance estimates enter as constants, so gradients reach only the explicit
// gamma/theta factors and the iterates.
ComplexNode oampnet_graph_forward(ad::Graph& g, ad::NodeId gamma, ad::NodeId theta,
                                  std::size_t iterations, const OampBatch& batch,
                                  std::span<const cplx> constellation);

// Elementwise denoiser on [B x n] nodes with per-entry variance tau [B x n].
ComplexNode denoiser_graph(ad::Graph& g, ComplexNode z, ad::NodeId tau,
                           std::span<const cplx> constellation);

// Mean over the batch of ||soft - x||^2; x is given per sample.
ad::NodeId mse_loss_graph(ad::Graph& g, ComplexNode soft,
                          std::span<const CVector> x_true);

}  // namespace hypermimo
