#include "drivesim/common.hpp"

#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace drivesim {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  double t = len2 > 0 ? clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  if (t_out) *t_out = t;
  Vec2 proj = a + ab * t;
  return (p - proj).norm();
}

std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? n : 0, '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

std::string fnv1a_hex(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return strf("%016llx", static_cast<unsigned long long>(h));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write: " + path);
}

}  // namespace drivesim
