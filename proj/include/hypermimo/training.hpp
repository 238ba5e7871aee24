#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "hypermimo/channel.hpp"
#include "hypermimo/detectors.hpp"
#include "hypermimo/hypernet.hpp"

namespace hypermimo {

constexpr std::uint64_t kValidationSeed = 0x5eed'0f'7a11'da7eULL;

struct TrainConfig {
  std::size_t batch_size = 500;
  std::size_t total_steps = 20000;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::pair<double, double> snr_range_db{0.0, 10.0};
  std::uint64_t seed = 1;
  UserDrop drop;
  std::size_t eval_every = 1000;
  std::size_t log_every = 100;
  std::size_t iterations = 5;  // detector layers

  // One H per batch instead of one per element.
  bool shared_h_per_batch = false;
  // Draw a fresh user drop for every channel sample.
  bool random_drops = false;
  // When set, every sample uses this channel and noise level.
  std::optional<ChannelRealization> fixed_realization;

  std::size_t validation_size = 2000;
  double validation_snr_db = 5.0;
  std::uint64_t validation_seed = kValidationSeed;
  double divergence_factor = 1e3;

  // Optional JSON-lines sink for (step, loss, lr) records.
  std::ostream* log = nullptr;

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<LossRecord> history;
  std::vector<std::pair<std::size_t, double>> validation;  // (step, mse)
  double initial_validation_mse = 0.0;
  double final_validation_mse = 0.0;
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
};

// Exponential decay from lr_start at step 0 to lr_end at step total_steps-1.
double learning_rate(std::size_t step, std::size_t total_steps, double lr_start,
                     double lr_end);

// Batch mean of ||soft - x||^2.
double mse_loss(std::span<const CVector> soft, std::span<const CVector> x_true);

// Held-out tuples used to score every trainer the same way.
struct ValidationSet {
  std::vector<ChannelRealization> reals;
  std::vector<Transmission> tx;
};

ValidationSet make_validation_set(const SystemConfig& sys, const TrainConfig& cfg);

double validation_mse(const HypernetParams& params, const ValidationSet& set,
                      const SystemConfig& sys);
double validation_mse(const OampnetWeights& weights, const ValidationSet& set,
                      const SystemConfig& sys);
double validation_mse(const DetectorWeights& weights, const ValidationSet& set,
                      const SystemConfig& sys);

std::pair<HypernetParams, TrainReport> train_hypermimo(
    const TrainConfig& cfg, const SystemConfig& sys,
    std::optional<HypernetParams> init = std::nullopt);

std::pair<OampnetWeights, TrainReport> train_oampnet(const TrainConfig& cfg,
                                                     const SystemConfig& sys);

struct MmnetSingleConfig {
  std::size_t steps = 1000;
  double lr = 1e-3;
  std::size_t batch_size = 500;
  std::size_t iterations = 10;
  std::uint64_t seed = 1;
};

// Starting point: Theta^(t) = R_A^H / ||R_A||_F^2, psi^(t) = 1.
DetectorWeights mmnet_single_init(const ChannelRealization& real, std::size_t iterations);

DetectorWeights train_mmnet_single(const ChannelRealization& real,
                                   const SystemConfig& sys,
                                   const MmnetSingleConfig& cfg);

void save_oampnet(const std::filesystem::path& path, const OampnetWeights& w);
OampnetWeights load_oampnet(const std::filesystem::path& path);

void write_report_jsonl(std::ostream& os, const TrainReport& report);

}  // namespace hypermimo
