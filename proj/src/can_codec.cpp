#include "drivesim/can_codec.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace drivesim::can {

namespace {

void check_frame(const CanFrame& f, uint16_t want_id, const char* what) {
  if (f.id != want_id)
    throw CanFrameError(strf("%s: frame id 0x%03x, expected 0x%03x", what, f.id, want_id));
  if (f.dlc < 2) throw CanFrameError(strf("%s: payload too short (dlc %d)", what, f.dlc));
}

}  // namespace

CanFrame encode_steering(double angle_deg, double t) {
  if (!(angle_deg >= -kSteeringMaxDeg - 1e-9 && angle_deg <= kSteeringMaxDeg + 1e-9))
    throw CanRangeError(strf("steering %.3f deg outside [-720, 720]", angle_deg));
  long raw = std::lround(angle_deg / kSteeringLsbDeg);
  auto u = static_cast<uint16_t>(static_cast<int16_t>(raw));
  CanFrame f;
  f.id = kSteeringId;
  f.dlc = 2;
  f.payload[0] = static_cast<uint8_t>(u & 0xff);
  f.payload[1] = static_cast<uint8_t>(u >> 8);
  f.t = t;
  return f;
}

double decode_steering(const CanFrame& f) {
  check_frame(f, kSteeringId, "decode_steering");
  auto raw = static_cast<int16_t>(static_cast<uint16_t>(f.payload[0]) |
                                  (static_cast<uint16_t>(f.payload[1]) << 8));
  return raw * kSteeringLsbDeg;
}

CanFrame encode_speed(double speed_kmh, double t) {
  if (!(speed_kmh >= -1e-9 && speed_kmh <= kSpeedMaxKmh + 1e-9))
    throw CanRangeError(strf("speed %.3f km/h outside [0, 180]", speed_kmh));
  long raw = std::lround(speed_kmh / kSpeedLsbKmh);
  if (raw < 0) raw = 0;
  CanFrame f;
  f.id = kSpeedId;
  f.dlc = 2;
  f.payload[0] = static_cast<uint8_t>(raw & 0xff);
  f.payload[1] = static_cast<uint8_t>((raw >> 8) & 0xff);
  f.t = t;
  return f;
}

double decode_speed(const CanFrame& f) {
  check_frame(f, kSpeedId, "decode_speed");
  uint16_t raw = static_cast<uint16_t>(f.payload[0]) |
                 (static_cast<uint16_t>(f.payload[1]) << 8);
  return raw * kSpeedLsbKmh;
}

std::string emit_log(const std::vector<CanFrame>& frames) {
  std::string out = "t,id_hex,dlc,payload_hex\n";
  for (const auto& f : frames) {
    out += strf("%.6f,%03x,%d,", f.t, f.id, f.dlc);
    for (int i = 0; i < f.dlc; ++i) out += strf("%02x", f.payload[i]);
    out += '\n';
  }
  return out;
}

std::vector<CanFrame> parse_frames(const std::string& log_text) {
  std::vector<CanFrame> frames;
  std::istringstream in(log_text);
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    if (row == 1 && line.rfind("t,", 0) == 0) continue;
    double t = 0.0;
    unsigned id = 0;
    int dlc = 0;
    char payload_hex[32] = {0};
    int got = std::sscanf(line.c_str(), "%lf,%x,%d,%31s", &t, &id, &dlc, payload_hex);
    if (dlc == 0 && got == 3) {
      payload_hex[0] = '\0';
      got = 4;
    }
    if (got != 4 || id >= 2048 || dlc < 0 || dlc > 8 ||
        std::string(payload_hex).size() != static_cast<size_t>(2 * dlc))
      throw CanParseError(strf("malformed CAN log row %zu: '%s'", row, line.c_str()));
    CanFrame f;
    f.t = t;
    f.id = static_cast<uint16_t>(id);
    f.dlc = static_cast<uint8_t>(dlc);
    for (int i = 0; i < dlc; ++i) {
      unsigned byte = 0;
      if (std::sscanf(payload_hex + 2 * i, "%2x", &byte) != 1)
        throw CanParseError(strf("malformed CAN payload at row %zu", row));
      f.payload[i] = static_cast<uint8_t>(byte);
    }
    frames.push_back(f);
  }
  return frames;
}

CanStreams parse_log(const std::string& log_text) {
  CanStreams out;
  for (const auto& f : parse_frames(log_text)) {
    if (f.id == kSteeringId)
      out.steering.push_back({f.t, decode_steering(f)});
    else if (f.id == kSpeedId)
      out.speed.push_back({f.t, decode_speed(f)});
    else
      ++out.skipped_rows;
  }
  return out;
}

}  // namespace drivesim::can
