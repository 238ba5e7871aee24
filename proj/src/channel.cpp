#include "hypermimo/channel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "hypermimo/errors.hpp"

namespace hypermimo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t master_seed, std::uint64_t index) {
  return Rng(splitmix64(master_seed ^ index));
}

CVector qpsk_constellation() {
  const double a = 1.0 / std::sqrt(2.0);
  return {{a, a}, {a, -a}, {-a, a}, {-a, -a}};
}

void SystemConfig::validate() const {
  if (!(n_rx > n_users && n_users >= 1)) {
    throw ConfigError("system: need n_rx > n_users >= 1, got n_rx=" +
                      std::to_string(n_rx) + " n_users=" + std::to_string(n_users));
  }
  if (constellation.size() < 2) {
    throw ConfigError("system: constellation needs at least 2 points");
  }
  const double energy = norm_sq(constellation) / static_cast<double>(constellation.size());
  if (std::fabs(energy - 1.0) > 1e-12) {
    throw ConfigError("system: constellation average energy is " +
                      std::to_string(energy) + ", expected 1");
  }
  if (!(snr_range_db.first <= snr_range_db.second)) {
    throw ConfigError("system: snr range is empty");
  }
}

ComplexMatrix covariance(const SystemConfig& cfg, double angle) {
  if (!(std::fabs(angle) < kPi / 2)) {
    throw ContractError("covariance: nominal angle must satisfy |phi| < 90 deg");
  }
  const std::size_t n = cfg.n_rx;
  ComplexMatrix c(n, n);
  const double s = std::sin(angle), co = std::cos(angle);
  const double var = cfg.angular_spread * cfg.angular_spread;
  for (std::size_t m = 0; m < n; ++m) {
    c.set(m, m, 1.0);
    for (std::size_t k = m + 1; k < n; ++k) {
      const double dm = cfg.spacing * (static_cast<double>(m) - static_cast<double>(k));
      const double spread = 2.0 * kPi * dm * co;
      const double mag = std::exp(-0.5 * var * spread * spread);
      const cplx v = std::polar(mag, 2.0 * kPi * dm * s);
      c.set(m, k, v);
      c.set(k, m, std::conj(v));
    }
  }
  return c;
}

ComplexMatrix covariance_sqrt(const ComplexMatrix& c) {
  const HermitianEig eig = hermitian_eig(c);
  const std::size_t n = c.rows();
  ComplexMatrix scaled = eig.vectors;
  for (std::size_t k = 0; k < n; ++k) {
    const double root = std::sqrt(std::max(eig.values[k], 0.0));
    for (std::size_t i = 0; i < n; ++i) scaled.set(i, k, root * scaled(i, k));
  }
  return scaled * eig.vectors.adjoint();
}

CVector standard_complex_gaussian(std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(0.5));
  CVector e(n);
  for (cplx& v : e) {
    const double re = dist(rng);
    v = {re, dist(rng)};
  }
  return e;
}

CVector sample_channel_vector(const ComplexMatrix& c, Rng& rng) {
  const ComplexMatrix root = covariance_sqrt(c);
  const CVector e = standard_complex_gaussian(c.rows(), rng);
  return root * e;
}

UserDrop sample_drop(const SystemConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> dist(-kSectorHalfWidth, kSectorHalfWidth);
  UserDrop drop;
  drop.angles.resize(cfg.n_users);
  for (double& a : drop.angles) a = dist(rng);
  drop.radius_m = kDropRadiusM;
  return drop;
}

double sigma_from_snr_db(double snr_db) {
  if (!std::isfinite(snr_db)) throw ContractError("snr_db must be finite");
  return std::pow(10.0, -snr_db / 20.0);
}

ChannelModel::ChannelModel(const SystemConfig& cfg, const UserDrop& drop)
    : cfg_(cfg), drop_(drop) {
  cfg_.validate();
  if (drop_.angles.size() != cfg_.n_users) {
    throw ConfigError("drop has " + std::to_string(drop_.angles.size()) +
                      " users, system expects " + std::to_string(cfg_.n_users));
  }
  for (double a : drop_.angles) {
    sqrt_cov_.push_back(covariance_sqrt(covariance(cfg_, a)));
  }
}

ComplexMatrix ChannelModel::sample_h(Rng& rng) const {
  ComplexMatrix h(cfg_.n_rx, cfg_.n_users);
  for (std::size_t u = 0; u < cfg_.n_users; ++u) {
    const CVector e = standard_complex_gaussian(cfg_.n_rx, rng);
    h.set_column(u, sqrt_cov_[u] * e);
  }
  return h;
}

ChannelRealization ChannelModel::realize(double snr_db, Rng& rng) const {
  const double sigma = sigma_from_snr_db(snr_db);
  try {
    return make_realization(sample_h(rng), sigma);
  } catch (const SingularityError&) {
    return make_realization(sample_h(rng), sigma);
  }
}

ChannelRealization realize(const SystemConfig& cfg, const UserDrop& drop,
                           double snr_db, Rng& rng) {
  return ChannelModel(cfg, drop).realize(snr_db, rng);
}

ChannelRealization make_realization(ComplexMatrix h, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("realization: sigma must be positive");
  QrFactors qr = qr_thin(h);
  return {std::move(h), std::move(qr), sigma};
}

Transmission transmit(const SystemConfig& cfg, const ChannelRealization& real,
                      Rng& rng) {
  const std::size_t nu = real.h.cols(), nr = real.h.rows();
  std::uniform_int_distribution<std::size_t> pick(0, cfg.constellation.size() - 1);
  std::normal_distribution<double> noise(0.0, real.sigma / std::sqrt(2.0));

  Transmission t;
  t.symbols.resize(nu);
  t.x.resize(nu);
  for (std::size_t u = 0; u < nu; ++u) {
    t.symbols[u] = pick(rng);
    t.x[u] = cfg.constellation[t.symbols[u]];
  }
  t.y = real.h * t.x;
  for (std::size_t i = 0; i < nr; ++i) {
    const double re = noise(rng);
    t.y[i] += cplx(re, noise(rng));
  }
  t.y_star = adjoint_times(real.qr.q_a, t.y);
  return t;
}

UserDrop displace_angular(const UserDrop& drop, double delta, int direction) {
  UserDrop out = drop;
  const double shift = (direction >= 0 ? 1.0 : -1.0) * delta;
  for (double& a : out.angles) a += shift;
  return out;
}

double displaced_angle(double angle, double radius_m, double dist_m, double direction) {
  // Broadside is the +x axis, so a user at angle a sits at r (cos a, sin a).
  const double px = radius_m * std::cos(angle) + dist_m * std::cos(direction);
  const double py = radius_m * std::sin(angle) + dist_m * std::sin(direction);
  if (std::hypot(px, py) < 1e-9 * radius_m) return std::nan("");
  return std::atan2(py, px);
}

UserDrop displace_2d(const UserDrop& drop, double dist_m, Rng& rng) {
  if (!(dist_m >= 0.0)) throw ContractError("displace_2d: distance must be >= 0");
  UserDrop out = drop;
  if (dist_m == 0.0) return out;
  std::uniform_real_distribution<double> dir(0.0, 2.0 * kPi);
  for (double& a : out.angles) {
    double moved = std::nan("");
    while (std::isnan(moved)) moved = displaced_angle(a, drop.radius_m, dist_m, dir(rng));
    a = moved;
  }
  return out;
}

void write_drop_file(const std::filesystem::path& path, const UserDrop& drop,
                     std::uint64_t seed) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write drop file " + path.string());
  os.precision(17);
  os << "# radius_m=" << drop.radius_m << " seed=" << seed << '\n';
  os << "user,angle_deg\n";
  for (std::size_t u = 0; u < drop.angles.size(); ++u) {
    os << u << ',' << rad2deg(drop.angles[u]) << '\n';
  }
  if (!os) throw IoError("failed writing drop file " + path.string());
}

UserDrop read_drop_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read drop file " + path.string());
  UserDrop drop;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("radius_m=");
      if (pos != std::string::npos) drop.radius_m = std::stod(line.substr(pos + 9));
      continue;
    }
    if (!header) {
      if (line.rfind("user,angle_deg", 0) != 0) {
        throw IoError(path.string() + ": expected header 'user,angle_deg'");
      }
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError(path.string() + ": malformed row");
    drop.angles.push_back(deg2rad(std::stod(line.substr(comma + 1))));
  }
  if (!header) throw IoError(path.string() + ": missing header");
  return drop;
}

}  // namespace hypermimo
