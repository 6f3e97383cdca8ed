#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drivesim/common.hpp"

namespace drivesim::can {

struct CanFrame {
  uint16_t id = 0;  // 11-bit
  uint8_t dlc = 0;
  std::array<uint8_t, 8> payload{};
  double t = 0.0;  // seconds
};

class CanRangeError : public Error {
 public:
  using Error::Error;
};
class CanFrameError : public Error {
 public:
  using Error::Error;
};
class CanParseError : public Error {
 public:
  using Error::Error;
};

// Signal layout. The ids, scaling, and endianness here are the contract for
// every log this project writes; dataset metadata repeats them so readers
// never have to hard-code these values.
constexpr uint16_t kSteeringId = 0x025;
constexpr uint16_t kSpeedId = 0x158;
constexpr double kSteeringLsbDeg = 0.1;   // int16 little-endian
constexpr double kSpeedLsbKmh = 0.01;     // uint16 little-endian
constexpr double kSteeringMaxDeg = 720.0;
constexpr double kSpeedMaxKmh = 180.0;

CanFrame encode_steering(double angle_deg, double t = 0.0);
double decode_steering(const CanFrame& f);

CanFrame encode_speed(double speed_kmh, double t = 0.0);
double decode_speed(const CanFrame& f);

struct TimedValue {
  double t = 0.0;
  double value = 0.0;
};

struct CanStreams {
  std::vector<TimedValue> steering;
  std::vector<TimedValue> speed;
  size_t skipped_rows = 0;
};

/// CSV log, one frame per row: t,id_hex,dlc,payload_hex.
std::string emit_log(const std::vector<CanFrame>& frames);
std::vector<CanFrame> parse_frames(const std::string& log_text);

/// Demultiplex a frame log into decoded steering and speed streams. Frames
/// with unknown ids are counted, not errors.
CanStreams parse_log(const std::string& log_text);

}  // namespace drivesim::can
