#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hypermimo/channel.hpp"
#include "hypermimo/detectors.hpp"
#include "hypermimo/hypernet.hpp"
#include "hypermimo/training.hpp"

namespace hypermimo {

enum class DetectorKind { Mmse, Oamp, Hg, Mmnet, Ml };

constexpr std::array<DetectorKind, 5> kAllDetectors{
    DetectorKind::Mmse, DetectorKind::Oamp, DetectorKind::Hg, DetectorKind::Mmnet,
    DetectorKind::Ml};

std::string_view detector_name(DetectorKind kind);
DetectorKind parse_detector(std::string_view name);

// ---------------------------------------------------------------------------
// Monte-Carlo SER estimation.
//
// Work is split into chunks; chunk i draws one channel realization and
// `vectors_per_realization` symbol vectors from make_rng(seed, i). Chunks are
// processed in rounds of fixed size and the stopping rule is checked only at
// round boundaries, so counts do not depend on the number of threads.

struct SerConfig {
  std::uint64_t min_errors = 100;
  std::uint64_t max_symbols = 10'000'000;
  std::size_t vectors_per_realization = 8;
  std::size_t min_realizations = 0;
  std::size_t max_realizations = 0;  // 0: unbounded
  std::size_t chunks_per_round = 64;
  std::size_t threads = 1;

  // Exactly `trials` symbol vectors, no early stop.
  static SerConfig fixed(std::uint64_t trials, std::size_t n_users);
  void validate() const;
};

struct SerCount {
  std::uint64_t errors = 0;
  std::uint64_t symbols = 0;
  std::size_t realizations = 0;

  double ser() const;
  double variance() const;  // binomial p(1-p)/n
  double ci95() const;
};

struct ChunkInfo {
  std::uint64_t seed = 0;
  std::size_t chunk = 0;
};

// Decides the symbols of one transmission.
using PreparedDetector = std::function<std::vector<std::size_t>(const Transmission&)>;
// Binds a detector to one channel realization; expensive per-channel work
// (weight generation, per-realization training) happens here.
using Detector = std::function<PreparedDetector(const ChannelRealization&, const ChunkInfo&)>;
// Channel realization for a chunk, drawn from the chunk's generator.
using ChannelSource = std::function<ChannelRealization(std::size_t chunk, Rng& rng)>;

SerCount estimate_ser(const Detector& detector, const ChannelSource& source,
                      const SystemConfig& sys, const SerConfig& cfg, std::uint64_t seed);

// Fixed drop and SNR.
SerCount estimate_ser(const Detector& detector, const UserDrop& drop, double snr_db,
                      const SystemConfig& sys, const SerConfig& cfg, std::uint64_t seed);

struct DetectorModels {
  const HypernetParams* hypernet = nullptr;
  const OampnetWeights* oampnet = nullptr;
  MmnetSingleConfig mmnet;
  // Per-realization MMNet weights are cached here when non-empty, keyed by
  // `cache_tag` and the chunk index.
  std::filesystem::path mmnet_cache;
  std::string cache_tag;
};

// Throws ConfigError when the detector needs a model that is not supplied.
Detector make_detector(DetectorKind kind, const DetectorModels& models,
                       const SystemConfig& sys);

// ---------------------------------------------------------------------------
// Experiments.

enum class ExperimentMode { SnrSweep, Angular, Mobility2d, GenDrops };

struct DropEntry {
  UserDrop drop;
  std::optional<HypernetParams> hypernet;
  std::optional<OampnetWeights> oampnet;
  std::string tag;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::SnrSweep;
  std::vector<double> grid;  // SNR (dB), degrees or meters
  double eval_snr_db = 8.0;  // angular and 2D sweeps
  std::vector<DetectorKind> detectors;
  SerConfig ser;
  std::uint64_t seed = 1;
  std::size_t displacements = 100;
  MmnetSingleConfig mmnet;
  std::size_t mmnet_realizations = 200;
  std::filesystem::path mmnet_cache;

  static ExperimentConfig defaults(ExperimentMode mode);
  void validate() const;
};

struct SerPoint {
  double ser = 0.0;
  double variance = 0.0;
  std::uint64_t errors = 0;
  std::uint64_t symbols = 0;

  double ci95() const;
};

// Equal-weight mean over drops.
SerPoint average_points(std::span<const SerCount> counts);

struct SerCurve {
  std::string axis;
  std::vector<double> x;
  std::vector<DetectorKind> detectors;
  std::vector<std::vector<SerPoint>> points;  // [detector][grid point]

  bool has(DetectorKind kind) const;
  const SerPoint& at(DetectorKind kind, std::size_t i) const;
  std::vector<double> ser(DetectorKind kind) const;

  // Axis column, one SER column per detector, then `<name>_ci95` columns.
  void write_csv(std::ostream& os) const;
};

SerCurve run_snr_sweep(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                       const SystemConfig& sys);
// Rotates all users by +delta and -delta and averages both directions.
SerCurve run_angular(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                     const SystemConfig& sys);
SerCurve run_mobility2d(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                        const SystemConfig& sys);

// Writes drop_XX.csv files and set_angles.csv into `dir`. set_angles.csv has
// columns angle_k,idx_k for drop k = 1..count, one row per user.
std::vector<UserDrop> gen_drops(std::size_t count, std::uint64_t seed,
                                const SystemConfig& sys, const std::filesystem::path& dir);
void write_set_angles(std::ostream& os, std::span<const UserDrop> drops);

// ---------------------------------------------------------------------------
// Comparisons on curves.

// SNR at which log10(SER) crosses `target`, by linear interpolation between
// the first bracketing pair of points.
std::optional<double> snr_at_ser(std::span<const double> snr, std::span<const double> ser,
                                 double target);

// a <= b up to three standard deviations of the difference.
bool le_within_3sigma(const SerPoint& a, const SerPoint& b);

// ---------------------------------------------------------------------------
// Files.

std::filesystem::path drop_path(const std::filesystem::path& dir, std::size_t index);
std::filesystem::path hypernet_path(const std::filesystem::path& dir, std::size_t index);
std::filesystem::path oampnet_path(const std::filesystem::path& dir, std::size_t index);
std::vector<UserDrop> read_drops(const std::filesystem::path& dir);

void save_detector_weights(const std::filesystem::path& path, const DetectorWeights& w);
DetectorWeights load_detector_weights(const std::filesystem::path& path);

// Loads cached models for a drop or trains and saves them.
DropEntry prepare_drop(const UserDrop& drop, std::size_t index, const SystemConfig& sys,
                       TrainConfig hypermimo_cfg, TrainConfig oampnet_cfg,
                       const std::filesystem::path& model_dir, bool train_oampnet_model,
                       std::ostream* log = nullptr);

std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t file_hash(const std::filesystem::path& path);

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string config_text;
  std::vector<std::filesystem::path> models;
  double wall_clock_s = 0.0;
  std::vector<std::pair<std::string, std::string>> extra;
};

void write_metadata(const std::filesystem::path& path, const RunMetadata& meta);

}  // namespace hypermimo
