#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedbound/numerics.hpp"
#include "fedbound/problems.hpp"

namespace fedbound::test {

inline double rel_err(const ParamVector& a, const ParamVector& b) {
  const double scale = std::max(l2_norm(b), 1e-300);
  return l2_norm(a - b) / scale;
}

/// Central differences with step h per coordinate.
inline ParamVector fd_gradient(const Objective& f, const ParamVector& x, double h = 1e-5) {
  ParamVector g(x.size());
  ParamVector y = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    y[j] = x[j] + h;
    const double up = f.value(y);
    y[j] = x[j] - h;
    const double down = f.value(y);
    y[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

inline ParamVector random_point(RngStream& rng, std::size_t d, double scale) {
  ParamVector v(d);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedbound_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace fedbound::test
