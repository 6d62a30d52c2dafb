#ifndef GICC_TEXT_UTIL_HPP
#define GICC_TEXT_UTIL_HPP

#include <charconv>
#include <string>

namespace gicc {

// shortest round-trip decimal form; keeps CSV/JSON emissions bit-stable
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace gicc

#endif
