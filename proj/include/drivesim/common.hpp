#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace drivesim {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 normalized() const {
    double n = norm();
    return n > 0 ? Vec2{x / n, y / n} : Vec2{1, 0};
  }
  Vec2 rotated(double rad) const {
    double c = std::cos(rad), s = std::sin(rad);
    return {c * x - s * y, s * x + c * y};
  }
};

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

/// Distance from point p to segment [a,b]; writes the clamped parameter in
/// [0,1] to *t_out when non-null.
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out = nullptr);

constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Deterministic 64-bit PRNG (splitmix64 core). Used everywhere instead of
/// std distributions so that generated bytes are stable across library
/// versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }
  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Derive an independent child generator; (seed, salt) -> child seed.
  Rng derive(uint64_t salt) const {
    Rng mix(state_ ^ (salt * 0x9e3779b97f4a7c15ull + 0x1234567));
    mix.next_u64();
    return Rng(mix.next_u64());
  }

 private:
  uint64_t state_;
};

/// printf-style formatting into std::string.
std::string strf(const char* fmt, ...);

/// FNV-1a 64-bit hash, hex-encoded. Stable across platforms.
std::string fnv1a_hex(const std::string& data);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace drivesim
