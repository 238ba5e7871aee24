#pragma once

// The hypernetwork maps (R_A, sigma) to a full set of MMNet weights: three
// dense layers produce one base matrix Theta, T per-column scale vectors and
// T raw variance scales. Output layout, for n users and T layers:
//   [0, 2n^2)              Theta, row-major, re/im interleaved
//   [2n^2, 2n^2 + Tn)      theta^(t), layer-major
//   [2n^2 + Tn, 2n^2+2Tn)  psi_raw^(t), layer-major

#include <array>
#include <filesystem>
#include <vector>

#include "hypermimo/autodiff.hpp"
#include "hypermimo/channel.hpp"
#include "hypermimo/detectors.hpp"

namespace hypermimo {

constexpr int kModelLayoutVersion = 1;
constexpr double kPsiEpsilon = 1e-6;
constexpr std::size_t kHiddenUnits = 75;

enum class HypernetInput {
  UpperR,  // upper triangle of R_A
  FullH,   // vec(H); exploration only
};

struct DenseParams {
  ad::Tensor weights;  // [out x in]
  ad::Tensor bias;     // [out]
};

struct HypernetParams {
  std::size_t n_users = 6;
  std::size_t n_rx = 12;
  std::size_t iterations = 5;
  double eps_psi = kPsiEpsilon;
  HypernetInput input = HypernetInput::UpperR;
  std::array<DenseParams, 3> layers;

  // Glorot-uniform weights, zero biases.
  static HypernetParams init(std::size_t n_users, std::size_t n_rx,
                             std::size_t iterations, Rng& rng,
                             HypernetInput input = HypernetInput::UpperR);

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t parameter_count() const;
  void validate() const;
};

std::size_t hypernet_input_size(std::size_t n_users, std::size_t n_rx,
                                HypernetInput input);
std::size_t hypernet_output_size(std::size_t n_users, std::size_t iterations);

struct HypernetOutput {
  ComplexMatrix theta_base;               // [n x n]
  std::vector<std::vector<double>> scales;   // T x [n]
  std::vector<std::vector<double>> psi_raw;  // T x [n]
};

std::vector<double> r2c_input(const ComplexMatrix& r_a, double sigma);
// Inverse of the triangle scan; returns R_A and writes sigma.
ComplexMatrix upper_from_input(std::span<const double> input, std::size_t n_users,
                               double* sigma = nullptr);
std::vector<double> full_h_input(const ComplexMatrix& h, double sigma);

std::vector<double> hypernet_features(const HypernetParams& params,
                                      const ChannelRealization& real);

HypernetOutput split_output(std::span<const double> raw, std::size_t n_users,
                            std::size_t iterations);

HypernetOutput hypernet_forward(const HypernetParams& params,
                                std::span<const double> input);

DetectorWeights expand_weights(const HypernetOutput& out, double eps_psi = kPsiEpsilon);

DetectorWeights generate_weights(const HypernetParams& params,
                                 const ChannelRealization& real);

DetectionResult hypermimo_detect(const HypernetParams& params,
                                 const ChannelRealization& real,
                                 std::span<const cplx> y_star,
                                 std::span<const cplx> constellation);

// ---------------------------------------------------------------------------
// Graph form, used for training.

struct HypernetNodes {
  std::array<ad::NodeId, 3> weights;
  std::array<ad::NodeId, 3> biases;
};

HypernetNodes add_hypernet_parameters(ad::Graph& g, const HypernetParams& params);

// input [B x in] -> raw output [B x out]
ad::NodeId hypernet_graph(ad::Graph& g, const HypernetNodes& nodes, ad::NodeId input);

// Applies the column-scaling and positivity rules to a raw output [B x out].
MmnetGraphWeights expand_weights_graph(ad::Graph& g, ad::NodeId raw,
                                       std::size_t n_users, std::size_t iterations,
                                       double eps_psi);

// Flat parameter views in a fixed order (w0, b0, w1, b1, w2, b2).
std::vector<ad::Tensor*> parameter_tensors(HypernetParams& params);

void save_hypernet(const std::filesystem::path& path, const HypernetParams& params);
HypernetParams load_hypernet(const std::filesystem::path& path);

}  // namespace hypermimo
