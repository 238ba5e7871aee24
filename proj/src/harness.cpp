#include "hypermimo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>
#include <thread>

#include "hypermimo/errors.hpp"
#include "json.hpp"

namespace hypermimo {

namespace fs = std::filesystem;

std::string_view detector_name(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::Mmse: return "mmse";
    case DetectorKind::Oamp: return "oamp";
    case DetectorKind::Hg: return "hg";
    case DetectorKind::Mmnet: return "mmnet";
    case DetectorKind::Ml: return "ml";
  }
  return "?";
}

DetectorKind parse_detector(std::string_view name) {
  for (DetectorKind k : kAllDetectors) {
    if (detector_name(k) == name) return k;
  }
  throw ConfigError("unknown detector '" + std::string(name) +
                    "' (expected mmse, oamp, hg, mmnet or ml)");
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = mix(seed);
  for (std::uint64_t p : parts) s = mix(s ^ mix(p + 1));
  return s;
}

// Runs job(k) for k in [0, n) on up to `threads` threads and rethrows the
// first failure in index order.
template <typename Job>
void run_parallel(std::size_t n, std::size_t threads, Job&& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&](std::size_t t) {
    for (std::size_t k = t; k < n; k += threads) {
      try {
        job(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

SerConfig SerConfig::fixed(std::uint64_t trials, std::size_t n_users) {
  SerConfig c;
  c.min_errors = std::numeric_limits<std::uint64_t>::max();
  c.max_symbols = trials * n_users;
  c.vectors_per_realization = 1;
  return c;
}

void SerConfig::validate() const {
  if (max_symbols < 1) throw ConfigError("ser: max_symbols must be >= 1");
  if (vectors_per_realization < 1) {
    throw ConfigError("ser: vectors_per_realization must be >= 1");
  }
  if (chunks_per_round < 1) throw ConfigError("ser: chunks_per_round must be >= 1");
  if (threads < 1) throw ConfigError("ser: threads must be >= 1");
}

double SerCount::ser() const {
  return symbols == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(symbols);
}

double SerCount::variance() const {
  if (symbols == 0) return 0.0;
  const double p = ser();
  return p * (1.0 - p) / static_cast<double>(symbols);
}

double SerCount::ci95() const { return 1.96 * std::sqrt(variance()); }

SerCount estimate_ser(const Detector& detector, const ChannelSource& source,
                      const SystemConfig& sys, const SerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::uint64_t per_chunk = cfg.vectors_per_realization * sys.n_users;
  SerCount total;
  std::size_t next = 0;
  for (;;) {
    std::size_t round = cfg.chunks_per_round;
    if (cfg.max_realizations > 0) round = std::min(round, cfg.max_realizations - next);
    const std::uint64_t left = cfg.max_symbols - total.symbols;
    round = std::min<std::size_t>(round, (left + per_chunk - 1) / per_chunk);

    std::vector<SerCount> counts(round);
    run_parallel(round, cfg.threads, [&](std::size_t k) {
      const std::size_t chunk = next + k;
      Rng rng = make_rng(seed, chunk);
      const ChannelRealization real = source(chunk, rng);
      const PreparedDetector detect = detector(real, {seed, chunk});
      SerCount& c = counts[k];
      c.realizations = 1;
      for (std::size_t v = 0; v < cfg.vectors_per_realization; ++v) {
        const Transmission tx = transmit(sys, real, rng);
        const std::vector<std::size_t> hard = detect(tx);
        for (std::size_t u = 0; u < sys.n_users; ++u) c.errors += hard[u] != tx.symbols[u];
        c.symbols += sys.n_users;
      }
    });
    for (const SerCount& c : counts) {
      total.errors += c.errors;
      total.symbols += c.symbols;
      total.realizations += c.realizations;
    }
    next += round;

    const bool enough =
        total.errors >= cfg.min_errors && total.realizations >= cfg.min_realizations;
    const bool capped = total.symbols >= cfg.max_symbols ||
                        (cfg.max_realizations > 0 && next >= cfg.max_realizations);
    if (enough || capped || round == 0) break;
  }
  return total;
}

SerCount estimate_ser(const Detector& detector, const UserDrop& drop, double snr_db,
                      const SystemConfig& sys, const SerConfig& cfg, std::uint64_t seed) {
  const ChannelModel model(sys, drop);
  return estimate_ser(
      detector, [&](std::size_t, Rng& rng) { return model.realize(snr_db, rng); }, sys,
      cfg, seed);
}

// ---------------------------------------------------------------------------

void save_detector_weights(const fs::path& path, const DetectorWeights& w) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t t = 0; t < w.iterations(); ++t) {
    const auto re = w.theta[t].re(), im = w.theta[t].im();
    layers.push_back({{"theta_re", std::vector<double>(re.begin(), re.end())},
                      {"theta_im", std::vector<double>(im.begin(), im.end())},
                      {"psi", w.psi[t]}});
  }
  const std::size_t n = w.theta.empty() ? 0 : w.theta[0].rows();
  nlohmann::json j{{"format", "hypermimo-mmnet"},
                   {"layout_version", kModelLayoutVersion},
                   {"n_users", n},
                   {"layers", layers}};
  std::ofstream os(path);
  if (!os) throw IoError("cannot write model file " + path.string());
  os << j.dump() << '\n';
}

DetectorWeights load_detector_weights(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read model file " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    if (j.value("format", "") != "hypermimo-mmnet" ||
        j.value("layout_version", -1) != kModelLayoutVersion) {
      throw IoError(path.string() + ": not an MMNet weight file");
    }
    const std::size_t n = j.at("n_users").get<std::size_t>();
    DetectorWeights w;
    for (const auto& layer : j.at("layers")) {
      const auto re = layer.at("theta_re").get<std::vector<double>>();
      const auto im = layer.at("theta_im").get<std::vector<double>>();
      if (re.size() != n * n || im.size() != n * n) {
        throw IoError(path.string() + ": theta size mismatch");
      }
      ComplexMatrix theta(n, n);
      std::copy(re.begin(), re.end(), theta.re().begin());
      std::copy(im.begin(), im.end(), theta.im().begin());
      w.theta.push_back(std::move(theta));
      w.psi.push_back(layer.at("psi").get<std::vector<double>>());
    }
    w.validate(n);
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Detector make_detector(DetectorKind kind, const DetectorModels& models,
                       const SystemConfig& sys) {
  const CVector constellation = sys.constellation;
  switch (kind) {
    case DetectorKind::Mmse:
      return [constellation](const ChannelRealization& real, const ChunkInfo&) {
        return PreparedDetector([&real, constellation](const Transmission& tx) {
          return lmmse(real.h, real.sigma, tx.y, constellation).hard;
        });
      };
    case DetectorKind::Ml:
      return [constellation](const ChannelRealization& real, const ChunkInfo&) {
        return PreparedDetector([&real, constellation](const Transmission& tx) {
          return max_likelihood(real.h, tx.y, constellation).hard;
        });
      };
    case DetectorKind::Oamp: {
      if (!models.oampnet) throw ConfigError("detector oamp: no OAMPNet model supplied");
      const OampnetWeights w = *models.oampnet;
      return [w, constellation](const ChannelRealization& real, const ChunkInfo&) {
        return PreparedDetector([&real, w, constellation](const Transmission& tx) {
          return oampnet_forward(w, real.h, real.sigma, tx.y, constellation).hard;
        });
      };
    }
    case DetectorKind::Hg: {
      if (!models.hypernet) throw ConfigError("detector hg: no HyperMIMO model supplied");
      const HypernetParams* params = models.hypernet;
      return [params, constellation](const ChannelRealization& real, const ChunkInfo&) {
        DetectorWeights w = generate_weights(*params, real);
        return PreparedDetector(
            [&real, w = std::move(w), constellation](const Transmission& tx) {
              return mmnet_forward(w, real, tx.y_star, constellation).hard;
            });
      };
    }
    case DetectorKind::Mmnet: {
      const MmnetSingleConfig base = models.mmnet;
      const fs::path cache = models.mmnet_cache;
      const std::string tag = models.cache_tag;
      const SystemConfig sys_copy = sys;
      if (!cache.empty()) fs::create_directories(cache);
      return [=](const ChannelRealization& real, const ChunkInfo& info) {
        MmnetSingleConfig cfg = base;
        cfg.seed = derive_seed(info.seed, {info.chunk, 0x6d6d});
        DetectorWeights w;
        fs::path file;
        if (!cache.empty()) {
          file = cache / (tag + "_c" + std::to_string(info.chunk) + ".json");
        }
        if (!file.empty() && fs::exists(file)) {
          w = load_detector_weights(file);
        } else {
          w = train_mmnet_single(real, sys_copy, cfg);
          if (!file.empty()) save_detector_weights(file, w);
        }
        return PreparedDetector(
            [&real, w = std::move(w), constellation](const Transmission& tx) {
              return mmnet_forward(w, real, tx.y_star, constellation).hard;
            });
      };
    }
  }
  throw ConfigError("unknown detector kind");
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults(ExperimentMode mode) {
  ExperimentConfig c;
  c.mode = mode;
  using D = DetectorKind;
  switch (mode) {
    case ExperimentMode::SnrSweep:
      for (int s = 0; s <= 10; ++s) c.grid.push_back(s);
      c.detectors = {D::Mmse, D::Oamp, D::Hg, D::Mmnet, D::Ml};
      break;
    case ExperimentMode::Angular:
      for (int a = 0; a <= 18; a += 3) c.grid.push_back(a);
      c.detectors = {D::Mmse, D::Oamp, D::Hg, D::Ml};
      break;
    case ExperimentMode::Mobility2d:
      for (int m = 0; m <= 75; m += 15) c.grid.push_back(m);
      c.detectors = {D::Mmse, D::Oamp, D::Hg, D::Ml};
      break;
    case ExperimentMode::GenDrops:
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  ser.validate();
  if (mode == ExperimentMode::GenDrops) return;
  if (grid.empty()) throw ConfigError("experiment: grid is empty");
  if (!std::is_sorted(grid.begin(), grid.end())) {
    throw ConfigError("experiment: grid must be sorted ascending");
  }
  if (detectors.empty()) throw ConfigError("experiment: no detectors requested");
  if (mode == ExperimentMode::Mobility2d && displacements < 1) {
    throw ConfigError("experiment: displacements must be >= 1");
  }
  if (mode == ExperimentMode::Mobility2d && grid.front() < 0.0) {
    throw ConfigError("experiment: displacement distances must be >= 0");
  }
}

double SerPoint::ci95() const { return 1.96 * std::sqrt(variance); }

SerPoint average_points(std::span<const SerCount> counts) {
  SerPoint p;
  if (counts.empty()) return p;
  const double d = static_cast<double>(counts.size());
  for (const SerCount& c : counts) {
    p.ser += c.ser() / d;
    p.variance += c.variance() / (d * d);
    p.errors += c.errors;
    p.symbols += c.symbols;
  }
  return p;
}

bool SerCurve::has(DetectorKind kind) const {
  return std::find(detectors.begin(), detectors.end(), kind) != detectors.end();
}

const SerPoint& SerCurve::at(DetectorKind kind, std::size_t i) const {
  const auto it = std::find(detectors.begin(), detectors.end(), kind);
  if (it == detectors.end()) {
    throw ContractError("curve has no column " + std::string(detector_name(kind)));
  }
  return points.at(static_cast<std::size_t>(it - detectors.begin())).at(i);
}

std::vector<double> SerCurve::ser(DetectorKind kind) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); ++i) out.push_back(at(kind, i).ser);
  return out;
}

void SerCurve::write_csv(std::ostream& os) const {
  os << axis;
  for (DetectorKind k : detectors) os << ',' << detector_name(k);
  for (DetectorKind k : detectors) os << ',' << detector_name(k) << "_ci95";
  os << '\n';
  for (std::size_t i = 0; i < x.size(); ++i) {
    os << format_number(x[i]);
    for (std::size_t d = 0; d < detectors.size(); ++d) os << ',' << format_number(points[d][i].ser);
    for (std::size_t d = 0; d < detectors.size(); ++d) os << ',' << format_number(points[d][i].ci95());
    os << '\n';
  }
}

namespace {

// Detectors in canonical column order.
std::vector<DetectorKind> ordered(const std::vector<DetectorKind>& requested) {
  std::vector<DetectorKind> out;
  for (DetectorKind k : kAllDetectors) {
    if (std::find(requested.begin(), requested.end(), k) != requested.end()) out.push_back(k);
  }
  return out;
}

DetectorModels models_for(const DropEntry& e, const ExperimentConfig& cfg,
                          const std::string& tag) {
  DetectorModels m;
  m.hypernet = e.hypernet ? &*e.hypernet : nullptr;
  m.oampnet = e.oampnet ? &*e.oampnet : nullptr;
  m.mmnet = cfg.mmnet;
  m.mmnet_cache = cfg.mmnet_cache;
  m.cache_tag = tag;
  return m;
}

SerConfig ser_config_for(DetectorKind kind, const ExperimentConfig& cfg,
                         const SystemConfig& sys) {
  SerConfig s = cfg.ser;
  if (kind == DetectorKind::Mmnet) {
    // Every per-realization model is trained; the symbol budget is spread
    // over them.
    const std::uint64_t r = std::max<std::size_t>(1, cfg.mmnet_realizations);
    s.max_realizations = r;
    s.min_realizations = r;
    s.chunks_per_round = std::min<std::size_t>(s.chunks_per_round, r);
    s.vectors_per_realization = std::max<std::uint64_t>(
        1, (cfg.ser.max_symbols + r * sys.n_users - 1) / (r * sys.n_users));
  }
  return s;
}

SerCurve empty_curve(const ExperimentConfig& cfg, const std::string& axis,
                     std::size_t n_drops) {
  if (n_drops == 0) throw ConfigError("experiment: no drops supplied");
  SerCurve c;
  c.axis = axis;
  c.x = cfg.grid;
  c.detectors = ordered(cfg.detectors);
  c.points.assign(c.detectors.size(), std::vector<SerPoint>(cfg.grid.size()));
  return c;
}

}  // namespace

SerCurve run_snr_sweep(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                       const SystemConfig& sys) {
  cfg.validate();
  SerCurve curve = empty_curve(cfg, "snr", drops.size());
  for (std::size_t d = 0; d < curve.detectors.size(); ++d) {
    const DetectorKind kind = curve.detectors[d];
    const SerConfig ser = ser_config_for(kind, cfg, sys);
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
      std::vector<SerCount> counts;
      for (std::size_t k = 0; k < drops.size(); ++k) {
        const std::string tag = drops[k].tag + "_snr" + format_number(cfg.grid[i]);
        const Detector det = make_detector(kind, models_for(drops[k], cfg, tag), sys);
        counts.push_back(estimate_ser(det, drops[k].drop, cfg.grid[i], sys, ser,
                                      derive_seed(cfg.seed, {k, i})));
      }
      curve.points[d][i] = average_points(counts);
    }
  }
  return curve;
}

SerCurve run_angular(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                     const SystemConfig& sys) {
  cfg.validate();
  SerCurve curve = empty_curve(cfg, "angles", drops.size());
  for (std::size_t d = 0; d < curve.detectors.size(); ++d) {
    const DetectorKind kind = curve.detectors[d];
    const SerConfig ser = ser_config_for(kind, cfg, sys);
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
      std::vector<SerCount> counts;
      for (std::size_t k = 0; k < drops.size(); ++k) {
        for (int dir : {1, -1}) {
          if (cfg.grid[i] == 0.0 && dir < 0) continue;
          const UserDrop moved = displace_angular(drops[k].drop, deg2rad(cfg.grid[i]), dir);
          const std::string tag = drops[k].tag + "_ang" + format_number(cfg.grid[i] * dir);
          const Detector det = make_detector(kind, models_for(drops[k], cfg, tag), sys);
          const std::uint64_t seed =
              derive_seed(cfg.seed, {k, i, static_cast<std::uint64_t>(dir + 1)});
          const SerCount c = estimate_ser(det, moved, cfg.eval_snr_db, sys, ser, seed);
          counts.push_back(c);
          // Both directions coincide at zero displacement.
          if (cfg.grid[i] == 0.0) counts.push_back(c);
        }
      }
      curve.points[d][i] = average_points(counts);
    }
  }
  return curve;
}

SerCurve run_mobility2d(const ExperimentConfig& cfg, std::span<const DropEntry> drops,
                        const SystemConfig& sys) {
  cfg.validate();
  SerCurve curve = empty_curve(cfg, "meters", drops.size());
  std::vector<std::vector<std::vector<SerCount>>> counts(
      curve.detectors.size(), std::vector<std::vector<SerCount>>(cfg.grid.size()));
  for (std::size_t k = 0; k < drops.size(); ++k) {
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
      Rng rng = make_rng(derive_seed(cfg.seed, {k, i, 0x2d}));
      std::vector<ChannelModel> moved;
      for (std::size_t m = 0; m < cfg.displacements; ++m) {
        moved.emplace_back(sys, displace_2d(drops[k].drop, cfg.grid[i], rng));
      }
      const ChannelSource source = [&](std::size_t chunk, Rng& r) {
        return moved[chunk % moved.size()].realize(cfg.eval_snr_db, r);
      };
      for (std::size_t d = 0; d < curve.detectors.size(); ++d) {
        SerConfig ser = ser_config_for(curve.detectors[d], cfg, sys);
        ser.min_realizations = std::max(ser.min_realizations, cfg.displacements);
        if (ser.max_realizations > 0) {
          ser.max_realizations = std::max(ser.max_realizations, cfg.displacements);
        }
        const std::string tag = drops[k].tag + "_m" + format_number(cfg.grid[i]);
        const Detector det =
            make_detector(curve.detectors[d], models_for(drops[k], cfg, tag), sys);
        counts[d][i].push_back(
            estimate_ser(det, source, sys, ser, derive_seed(cfg.seed, {k, i, 0x2e})));
      }
    }
  }
  for (std::size_t d = 0; d < curve.detectors.size(); ++d) {
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
      curve.points[d][i] = average_points(counts[d][i]);
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------

fs::path drop_path(const fs::path& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "drop_%02zu.csv", index);
  return dir / name;
}

fs::path hypernet_path(const fs::path& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "hg_drop_%02zu.json", index);
  return dir / name;
}

fs::path oampnet_path(const fs::path& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "oamp_drop_%02zu.json", index);
  return dir / name;
}

void write_set_angles(std::ostream& os, std::span<const UserDrop> drops) {
  for (std::size_t i = 0; i < drops.size(); ++i) {
    os << (i ? "," : "") << "angle_" << i + 1 << ",idx_" << i + 1;
  }
  os << '\n';
  if (drops.empty()) return;
  const std::size_t n = drops[0].angles.size();
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t i = 0; i < drops.size(); ++i) {
      os << (i ? "," : "") << format_number(rad2deg(drops[i].angles.at(u))) << ',' << i + 1;
    }
    os << '\n';
  }
}

std::vector<UserDrop> gen_drops(std::size_t count, std::uint64_t seed,
                                const SystemConfig& sys, const fs::path& dir) {
  sys.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<UserDrop> drops;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, i);
    drops.push_back(sample_drop(sys, rng));
    write_drop_file(drop_path(dir, i), drops.back(), seed);
  }
  std::ofstream os(dir / "set_angles.csv");
  if (!os) throw IoError("cannot write " + (dir / "set_angles.csv").string());
  write_set_angles(os, drops);
  if (!os) throw IoError("failed writing " + (dir / "set_angles.csv").string());
  return drops;
}

std::vector<UserDrop> read_drops(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("no drop directory " + dir.string());
  std::vector<UserDrop> drops;
  for (std::size_t i = 0; fs::exists(drop_path(dir, i)); ++i) {
    drops.push_back(read_drop_file(drop_path(dir, i)));
  }
  if (drops.empty()) throw IoError("no drop_XX.csv files in " + dir.string());
  return drops;
}

DropEntry prepare_drop(const UserDrop& drop, std::size_t index, const SystemConfig& sys,
                       TrainConfig hypermimo_cfg, TrainConfig oampnet_cfg,
                       const fs::path& model_dir, bool train_oampnet_model,
                       std::ostream* log) {
  std::error_code ec;
  fs::create_directories(model_dir, ec);
  if (ec) throw IoError("cannot create directory " + model_dir.string());
  DropEntry e;
  e.drop = drop;
  char tag[16];
  std::snprintf(tag, sizeof tag, "drop%02zu", index);
  e.tag = tag;

  auto train_log = [&](const fs::path& model) {
    return std::ofstream(fs::path(model).replace_extension(".jsonl"));
  };

  const fs::path hp = hypernet_path(model_dir, index);
  if (fs::exists(hp)) {
    e.hypernet = load_hypernet(hp);
  } else {
    if (log) *log << "training HyperMIMO for " << e.tag << '\n';
    hypermimo_cfg.drop = drop;
    auto [params, report] = train_hypermimo(hypermimo_cfg, sys);
    std::ofstream jl = train_log(hp);
    write_report_jsonl(jl, report);
    save_hypernet(hp, params);
    e.hypernet = std::move(params);
  }
  if (train_oampnet_model) {
    const fs::path op = oampnet_path(model_dir, index);
    if (fs::exists(op)) {
      e.oampnet = load_oampnet(op);
    } else {
      if (log) *log << "training OAMPNet for " << e.tag << '\n';
      oampnet_cfg.drop = drop;
      auto [w, report] = train_oampnet(oampnet_cfg, sys);
      std::ofstream jl = train_log(op);
      write_report_jsonl(jl, report);
      save_oampnet(op, w);
      e.oampnet = std::move(w);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------

std::optional<double> snr_at_ser(std::span<const double> snr, std::span<const double> ser,
                                 double target) {
  if (snr.size() != ser.size()) throw DimensionError("snr_at_ser: length mismatch");
  if (!(target > 0.0)) throw ContractError("snr_at_ser: target must be positive");
  for (std::size_t i = 0; i + 1 < snr.size(); ++i) {
    const double a = ser[i], b = ser[i + 1];
    if (!(a > 0.0) || !(b > 0.0)) continue;
    const bool brackets = (a >= target && b <= target) || (a <= target && b >= target);
    if (!brackets) continue;
    const double la = std::log10(a), lb = std::log10(b), lt = std::log10(target);
    if (la == lb) return snr[i];
    return snr[i] + (lt - la) / (lb - la) * (snr[i + 1] - snr[i]);
  }
  return std::nullopt;
}

bool le_within_3sigma(const SerPoint& a, const SerPoint& b) {
  return a.ser - b.ser <= 3.0 * std::sqrt(a.variance + b.variance);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

void write_metadata(const fs::path& path, const RunMetadata& meta) {
  auto hex = [](std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
  };
  nlohmann::json models = nlohmann::json::object();
  for (const auto& m : meta.models) models[m.filename().string()] = hex(file_hash(m));
  nlohmann::json j{{"seed", meta.seed},
                   {"config_hash", hex(fnv1a(meta.config_text))},
                   {"model_hashes", models},
                   {"wall_clock_s", meta.wall_clock_s}};
  for (const auto& [k, v] : meta.extra) j[k] = v;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace hypermimo
