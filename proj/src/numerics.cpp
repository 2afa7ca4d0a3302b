#include "fedbound/numerics.hpp"

#include <cmath>

#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_same_size(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw ConfigError("vector length mismatch: " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
}

}  // namespace

bool ParamVector::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_same_size(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_same_size(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double scale) noexcept {
  for (double& v : values_) v *= scale;
  return *this;
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_size(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm_sq(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

double l2_norm(const ParamVector& v) { return std::sqrt(l2_norm_sq(v)); }

double l1_norm(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

void axpy(double a, const ParamVector& x, ParamVector& y) {
  require_same_size(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

ParamVector mean_reduce(std::span<const ParamVector> vs) {
  if (vs.empty()) throw ConfigError("mean_reduce: empty input list");
  const ParamVector& first = vs.front();
  const std::size_t d = first.size();
  // Deviations from the first vector are summed, so n equal inputs give
  // that input back exactly.
  ParamVector sum(d);
  for (const auto& v : vs.subspan(1)) {
    if (v.size() != d) {
      throw ConfigError("mean_reduce: mismatched lengths (" + std::to_string(d) + " vs " +
                        std::to_string(v.size()) + ")");
    }
    for (std::size_t j = 0; j < d; ++j) sum[j] += v[j] - first[j];
  }
  const double n = static_cast<double>(vs.size());
  for (std::size_t j = 0; j < d; ++j) sum[j] = first[j] + sum[j] / n;
  return sum;
}

std::uint64_t mix_seed(std::uint64_t seed, const StreamId& id) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ id.worker);
  h = splitmix64(h ^ id.round);
  h = splitmix64(h ^ id.step);
  h = splitmix64(h ^ static_cast<std::uint64_t>(id.purpose));
  return h;
}

RngStream::RngStream(std::uint64_t seed, StreamId id) : engine_(mix_seed(seed, id)) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (spare_normal_) {
    const double z = *spare_normal_;
    spare_normal_.reset();
    return z;
  }
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * factor;
  return u * factor;
}

std::size_t RngStream::index(std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r = 0;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

ParamVector gaussian_vector(RngStream& rng, std::size_t d, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_vector: sigma must be non-negative");
  ParamVector out(d);
  if (sigma == 0.0 || d == 0) return out;
  const double scale = sigma / std::sqrt(static_cast<double>(d));
  for (std::size_t j = 0; j < d; ++j) out[j] = scale * rng.normal();
  return out;
}

}  // namespace fedbound
