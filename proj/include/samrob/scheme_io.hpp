#pragma once

// Scheme text format: one direction per line, "gx gy gz b", shells grouped
// by ascending b. Lines starting with '#' and blank lines are ignored.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "samrob/atomic_file.hpp"
#include "samrob/scheme.hpp"

namespace samrob {

inline constexpr double kSchemeFileUnitTolerance = 1e-6;

inline std::string format_double(double v) {
  char buf[40];
  if (v == std::floor(v) && std::abs(v) < 1e15)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string scheme_to_text(const MultiShellScheme& scheme) {
  std::string out;
  char buf[128];
  for (const auto& sh : scheme.shells())
    for (const auto& d : sh.directions) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g ", d.x(), d.y(), d.z());
      out += buf;
      out += format_double(sh.b_value);
      out += '\n';
    }
  return out;
}

inline MultiShellScheme parse_scheme(std::istream& in) {
  std::map<double, Shell> shells;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#')
      continue;
    std::istringstream ls(line);
    double gx, gy, gz, b;
    std::string extra;
    if (!(ls >> gx >> gy >> gz >> b) || (ls >> extra))
      throw FormatError("line " + std::to_string(lineno) + ": malformed line");
    if (!std::isfinite(gx) || !std::isfinite(gy) || !std::isfinite(gz) || !std::isfinite(b) || !(b > 0.0))
      throw FormatError("line " + std::to_string(lineno) + ": invalid value");
    const Eigen::Vector3d v(gx, gy, gz);
    const double n = v.norm();
    if (std::abs(n - 1.0) > kSchemeFileUnitTolerance)
      throw FormatError("line " + std::to_string(lineno) + ": non-unit direction");
    // Values already unit to rounding are kept verbatim so write/read is bit-exact.
    const GradientDirection d = std::abs(n - 1.0) <= 4e-16 ? GradientDirection(v, 1e-15) : GradientDirection::normalized(v);
    Shell& sh = shells[b];
    sh.b_value = b;
    sh.directions.push_back(d);
  }
  if (shells.empty())
    throw FormatError("scheme contains no directions");
  std::vector<Shell> ordered;
  for (auto& [b, sh] : shells)
    ordered.push_back(std::move(sh));
  try {
    return MultiShellScheme(std::move(ordered));
  } catch (const UsageError& e) {
    throw FormatError(std::string("invalid scheme: ") + e.what());
  }
}

inline MultiShellScheme scheme_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scheme(in);
}

inline MultiShellScheme read_scheme(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open scheme file: " + path);
  return parse_scheme(in);
}

inline void write_scheme(const std::string& path, const MultiShellScheme& scheme) {
  write_file_atomically(path, scheme_to_text(scheme));
}

} // namespace samrob
