#pragma once

// Local-scattering spatially correlated Rayleigh channel for a uniform linear
// array, user drops in a 120-degree sector, and the QR-reduced transmission
// model y* = Q_A^H y = R_A x + n*.

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "hypermimo/complex_linalg.hpp"

namespace hypermimo {

using Rng = std::mt19937_64;

constexpr double kPi = 3.14159265358979323846;
constexpr double kSectorHalfWidth = kPi / 3.0;  // 60 degrees
constexpr double kDropRadiusM = 250.0;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Mixes a master seed with a shard/chunk index into an independent stream.
Rng make_rng(std::uint64_t master_seed, std::uint64_t index = 0);

CVector qpsk_constellation();

struct SystemConfig {
  std::size_t n_rx = 12;
  std::size_t n_users = 6;
  double spacing = 0.5;                 // wavelengths
  double angular_spread = deg2rad(10);  // radians
  CVector constellation = qpsk_constellation();
  std::pair<double, double> snr_range_db{0.0, 10.0};

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
};

struct UserDrop {
  std::vector<double> angles;  // radians
  double radius_m = kDropRadiusM;
};

struct ChannelRealization {
  ComplexMatrix h;
  QrFactors qr;
  double sigma = 1.0;
};

struct Transmission {
  std::vector<std::size_t> symbols;  // constellation indices
  CVector x;
  CVector y;
  CVector y_star;
};

ComplexMatrix covariance(const SystemConfig& cfg, double angle);

// U diag(sqrt(max(d, 0))) U^H for a Hermitian covariance.
ComplexMatrix covariance_sqrt(const ComplexMatrix& c);

CVector standard_complex_gaussian(std::size_t n, Rng& rng);

CVector sample_channel_vector(const ComplexMatrix& c, Rng& rng);

UserDrop sample_drop(const SystemConfig& cfg, Rng& rng);

double sigma_from_snr_db(double snr_db);

// Per-user covariance square roots for a drop; building one costs an
// eigendecomposition per user, sampling from it only a matrix-vector product.
class ChannelModel {
 public:
  ChannelModel(const SystemConfig& cfg, const UserDrop& drop);

  const SystemConfig& config() const { return cfg_; }
  const UserDrop& drop() const { return drop_; }

  ComplexMatrix sample_h(Rng& rng) const;

  // Samples H, sets sigma from the SNR and factors H. A singular H is
  // resampled once; a second failure propagates the SingularityError.
  ChannelRealization realize(double snr_db, Rng& rng) const;

 private:
  SystemConfig cfg_;
  UserDrop drop_;
  std::vector<ComplexMatrix> sqrt_cov_;
};

ChannelRealization realize(const SystemConfig& cfg, const UserDrop& drop,
                           double snr_db, Rng& rng);

// Builds a realization from a given H (QR computed here).
ChannelRealization make_realization(ComplexMatrix h, double sigma);

Transmission transmit(const SystemConfig& cfg, const ChannelRealization& real,
                      Rng& rng);

UserDrop displace_angular(const UserDrop& drop, double delta, int direction);
// Polar angle after moving a user at (radius, angle) by dist_m in the given
// direction; NaN when the move lands on the array.
double displaced_angle(double angle, double radius_m, double dist_m, double direction);
UserDrop displace_2d(const UserDrop& drop, double dist_m, Rng& rng);

// Drop CSV: a `# radius_m=... seed=...` comment line, then `user,angle_deg`.
void write_drop_file(const std::filesystem::path& path, const UserDrop& drop,
                     std::uint64_t seed);
UserDrop read_drop_file(const std::filesystem::path& path);

}  // namespace hypermimo
