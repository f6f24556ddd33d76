#pragma once

// Waypoint files and CSV helpers shared by the command-line tools.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mintime/pmm.hpp"
#include "mintime/types.hpp"

namespace mintime::io {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line(line) {}
  int line;
};

// One "x y z" triple per line; blank lines and '#' comments are skipped.
inline std::vector<Vec3> parse_waypoints(std::istream& in, const std::string& name) {
  std::vector<Vec3> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ls(line);
    Vec3 p;
    std::string extra;
    if (!(ls >> p.x() >> p.y() >> p.z()))
      throw ParseError(name, n, "expected three numbers 'x y z'");
    if (ls >> extra) throw ParseError(name, n, "unexpected trailing token '" + extra + "'");
    if (!p.allFinite()) throw ParseError(name, n, "non-finite coordinate");
    out.push_back(p);
  }
  if (out.size() < 2) throw ParseError(name, n, "need at least two waypoints");
  return out;
}

inline std::vector<Vec3> read_waypoints(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open waypoint file '" + path.string() + "'");
  return parse_waypoints(f, path.string());
}

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// Trajectory samples every 1/rate seconds from 0 through the final time.
inline std::string trajectory_csv(const std::vector<pmm::Trajectory>& plan, double rate) {
  std::string out = "t,px,py,pz,vx,vy,vz,ax,ay,az\n";
  const double T = pmm::total_duration(plan);
  const long n = static_cast<long>(std::floor(T * rate + 1e-9));
  for (long k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / rate;
    const pmm::Sample s = pmm::sample_sequence(plan, t);
    out += num(t);
    for (const Vec3* v : {&s.p, &s.v, &s.a})
      for (int i = 0; i < 3; ++i) out += "," + num((*v)[i]);
    out += "\n";
  }
  return out;
}

}  // namespace mintime::io
