#include "hypermimo/hypernet.hpp"

#include <cmath>
#include <fstream>

#include "hypermimo/errors.hpp"
#include "json.hpp"

namespace hypermimo {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

std::size_t hypernet_input_size(std::size_t n_users, std::size_t n_rx,
                                HypernetInput input) {
  if (input == HypernetInput::FullH) return 2 * n_rx * n_users + 1;
  return n_users * (n_users + 1) + 1;
}

std::size_t hypernet_output_size(std::size_t n_users, std::size_t iterations) {
  return 2 * n_users * n_users + 2 * iterations * n_users;
}

HypernetParams HypernetParams::init(std::size_t n_users, std::size_t n_rx,
                                    std::size_t iterations, Rng& rng,
                                    HypernetInput input) {
  HypernetParams p;
  p.n_users = n_users;
  p.n_rx = n_rx;
  p.iterations = iterations;
  p.input = input;
  const std::size_t in = p.input_size(), out = p.output_size();
  const std::array<std::pair<std::size_t, std::size_t>, 3> dims{
      {{in, in}, {kHiddenUnits, in}, {out, kHiddenUnits}}};
  for (std::size_t l = 0; l < 3; ++l) {
    p.layers[l].weights = ad::glorot_uniform(dims[l].first, dims[l].second, rng);
    p.layers[l].bias = Tensor({dims[l].first});
  }
  return p;
}

std::size_t HypernetParams::input_size() const {
  return hypernet_input_size(n_users, n_rx, input);
}

std::size_t HypernetParams::output_size() const {
  return hypernet_output_size(n_users, iterations);
}

std::size_t HypernetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

void HypernetParams::validate() const {
  if (n_users == 0 || iterations == 0) {
    throw ConfigError("hypernet: n_users and iterations must be positive");
  }
  std::size_t width = input_size();
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& w = layers[l].weights;
    const Tensor& b = layers[l].bias;
    if (w.rank() != 2 || w.dim(1) != width || b.rank() != 1 || b.dim(0) != w.dim(0)) {
      throw DimensionError("hypernet: layer " + std::to_string(l) + " weights " +
                           ad::shape_str(w.shape) + " / bias " +
                           ad::shape_str(b.shape) + " break the shape chain at width " +
                           std::to_string(width));
    }
    width = w.dim(0);
  }
  if (width != output_size()) {
    throw DimensionError("hypernet: final layer width " + std::to_string(width) +
                         " but the detector needs " + std::to_string(output_size()));
  }
  if (!(eps_psi > 0.0)) throw ConfigError("hypernet: eps_psi must be positive");
}

std::vector<double> r2c_input(const ComplexMatrix& r_a, double sigma) {
  const std::size_t n = r_a.rows();
  std::vector<double> v;
  v.reserve(n * (n + 1) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      v.push_back(r_a(i, j).real());
      v.push_back(r_a(i, j).imag());
    }
  }
  v.push_back(sigma);
  return v;
}

ComplexMatrix upper_from_input(std::span<const double> input, std::size_t n_users,
                               double* sigma) {
  if (input.size() != n_users * (n_users + 1) + 1) {
    throw DimensionError("upper_from_input: length " + std::to_string(input.size()));
  }
  ComplexMatrix r(n_users, n_users);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n_users; ++i) {
    for (std::size_t j = i; j < n_users; ++j, k += 2) {
      r.set(i, j, {input[k], input[k + 1]});
    }
  }
  if (sigma) *sigma = input[k];
  return r;
}

std::vector<double> full_h_input(const ComplexMatrix& h, double sigma) {
  std::vector<double> v;
  v.reserve(2 * h.rows() * h.cols() + 1);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < h.cols(); ++j) {
      v.push_back(h(i, j).real());
      v.push_back(h(i, j).imag());
    }
  }
  v.push_back(sigma);
  return v;
}

std::vector<double> hypernet_features(const HypernetParams& params,
                                      const ChannelRealization& real) {
  if (params.input == HypernetInput::FullH) return full_h_input(real.h, real.sigma);
  return r2c_input(real.qr.r_a, real.sigma);
}

HypernetOutput split_output(std::span<const double> raw, std::size_t n_users,
                            std::size_t iterations) {
  const std::size_t n = n_users;
  if (raw.size() != hypernet_output_size(n, iterations)) {
    throw DimensionError("hypernet output has " + std::to_string(raw.size()) +
                         " entries, expected " +
                         std::to_string(hypernet_output_size(n, iterations)));
  }
  HypernetOutput out;
  out.theta_base = ComplexMatrix(n, n);
  for (std::size_t k = 0; k < n * n; ++k) {
    out.theta_base.set(k / n, k % n, {raw[2 * k], raw[2 * k + 1]});
  }
  const std::size_t scale_off = 2 * n * n, psi_off = scale_off + iterations * n;
  for (std::size_t t = 0; t < iterations; ++t) {
    out.scales.emplace_back(raw.begin() + scale_off + t * n,
                            raw.begin() + scale_off + (t + 1) * n);
    out.psi_raw.emplace_back(raw.begin() + psi_off + t * n,
                             raw.begin() + psi_off + (t + 1) * n);
  }
  return out;
}

HypernetOutput hypernet_forward(const HypernetParams& params,
                                std::span<const double> input) {
  params.validate();
  if (input.size() != params.input_size()) {
    throw DimensionError("hypernet_forward: input length " +
                         std::to_string(input.size()) + ", expected " +
                         std::to_string(params.input_size()));
  }
  std::vector<double> act(input.begin(), input.end());
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& w = params.layers[l].weights;
    const Tensor& b = params.layers[l].bias;
    const std::size_t out = w.dim(0), in = w.dim(1);
    std::vector<double> next(out);
    for (std::size_t i = 0; i < out; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += act[j] * w[i * in + j];
      acc += b[i];
      next[i] = l < 2 ? (acc > 0.0 ? acc : std::expm1(acc)) : acc;
    }
    act = std::move(next);
  }
  return split_output(act, params.n_users, params.iterations);
}

DetectorWeights expand_weights(const HypernetOutput& out, double eps_psi) {
  const std::size_t n = out.theta_base.rows();
  DetectorWeights w;
  for (std::size_t t = 0; t < out.scales.size(); ++t) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        m.set(i, j, out.theta_base(i, j) * (1.0 + out.scales[t][j]));
    w.theta.push_back(std::move(m));
    std::vector<double> psi(n);
    for (std::size_t i = 0; i < n; ++i) psi[i] = std::fabs(out.psi_raw[t][i]) + eps_psi;
    w.psi.push_back(std::move(psi));
  }
  return w;
}

DetectorWeights generate_weights(const HypernetParams& params,
                                 const ChannelRealization& real) {
  return expand_weights(hypernet_forward(params, hypernet_features(params, real)),
                        params.eps_psi);
}

DetectionResult hypermimo_detect(const HypernetParams& params,
                                 const ChannelRealization& real,
                                 std::span<const cplx> y_star,
                                 std::span<const cplx> constellation) {
  return mmnet_forward(generate_weights(params, real), real, y_star, constellation);
}

HypernetNodes add_hypernet_parameters(Graph& g, const HypernetParams& params) {
  HypernetNodes nodes{};
  for (std::size_t l = 0; l < 3; ++l) {
    nodes.weights[l] = g.parameter(params.layers[l].weights);
    nodes.biases[l] = g.parameter(params.layers[l].bias);
  }
  return nodes;
}

NodeId hypernet_graph(Graph& g, const HypernetNodes& nodes, NodeId input) {
  NodeId h = ad::dense_layer(g, input, nodes.weights[0], nodes.biases[0],
                             ad::Activation::Elu);
  h = ad::dense_layer(g, h, nodes.weights[1], nodes.biases[1], ad::Activation::Elu);
  return ad::dense_layer(g, h, nodes.weights[2], nodes.biases[2],
                         ad::Activation::Linear);
}

MmnetGraphWeights expand_weights_graph(Graph& g, NodeId raw, std::size_t n_users,
                                       std::size_t iterations, double eps_psi) {
  const auto s = g.shape(raw);
  const std::size_t n = n_users;
  if (s.size() != 2 || s[1] != hypernet_output_size(n, iterations)) {
    throw DimensionError("expand_weights: raw output " + ad::shape_str(s));
  }
  const std::size_t b = s[0];
  const NodeId base_re = g.reshape(g.slice_cols(raw, 0, 2, n * n), {b, n, n});
  const NodeId base_im = g.reshape(g.slice_cols(raw, 1, 2, n * n), {b, n, n});
  const std::size_t scale_off = 2 * n * n, psi_off = scale_off + iterations * n;

  MmnetGraphWeights w;
  for (std::size_t t = 0; t < iterations; ++t) {
    const NodeId scale = g.add_const(g.slice_cols(raw, scale_off + t * n, 1, n), 1.0);
    const NodeId cols = g.expand(g.reshape(scale, {b, 1, n}), {b, n, n});
    w.theta.push_back({g.mul(base_re, cols), g.mul(base_im, cols)});
    const NodeId psi_raw = g.slice_cols(raw, psi_off + t * n, 1, n);
    w.psi.push_back(g.add_const(g.abs(psi_raw), eps_psi));
  }
  return w;
}

std::vector<Tensor*> parameter_tensors(HypernetParams& params) {
  std::vector<Tensor*> out;
  for (auto& l : params.layers) {
    out.push_back(&l.weights);
    out.push_back(&l.bias);
  }
  return out;
}

void save_hypernet(const std::filesystem::path& path, const HypernetParams& params) {
  params.validate();
  nlohmann::json j;
  j["format"] = "hypermimo-hypernet";
  j["layout_version"] = kModelLayoutVersion;
  j["n_users"] = params.n_users;
  j["n_rx"] = params.n_rx;
  j["iterations"] = params.iterations;
  j["eps_psi"] = params.eps_psi;
  j["input"] = params.input == HypernetInput::FullH ? "full_h" : "upper_r";
  for (const auto& l : params.layers) {
    j["layers"].push_back({{"shape", l.weights.shape},
                           {"weights", l.weights.data},
                           {"bias", l.bias.data}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write model file " + path.string());
  os << j.dump() << '\n';
  if (!os) throw IoError("failed writing model file " + path.string());
}

HypernetParams load_hypernet(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read model file " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "hypermimo-hypernet") {
    throw IoError(path.string() + ": not a hypernetwork model file");
  }
  if (j.value("layout_version", -1) != kModelLayoutVersion) {
    throw IoError(path.string() + ": unsupported layout version");
  }
  HypernetParams p;
  try {
    p.n_users = j.at("n_users").get<std::size_t>();
    p.n_rx = j.at("n_rx").get<std::size_t>();
    p.iterations = j.at("iterations").get<std::size_t>();
    p.eps_psi = j.at("eps_psi").get<double>();
    p.input = j.at("input").get<std::string>() == "full_h" ? HypernetInput::FullH
                                                            : HypernetInput::UpperR;
    const auto& layers = j.at("layers");
    if (layers.size() != 3) throw IoError(path.string() + ": expected 3 layers");
    for (std::size_t l = 0; l < 3; ++l) {
      const auto shape = layers[l].at("shape").get<std::vector<std::size_t>>();
      p.layers[l].weights = Tensor(shape, layers[l].at("weights").get<std::vector<double>>());
      auto bias = layers[l].at("bias").get<std::vector<double>>();
      const std::size_t n = bias.size();
      p.layers[l].bias = Tensor({n}, std::move(bias));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

}  // namespace hypermimo
