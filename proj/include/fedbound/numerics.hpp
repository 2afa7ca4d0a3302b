#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace fedbound {

/// Dense vector of model parameters.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t d, double fill = 0.0) : values_(d, fill) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double scale) noexcept;

  friend ParamVector operator+(ParamVector lhs, const ParamVector& rhs) { return lhs += rhs; }
  friend ParamVector operator-(ParamVector lhs, const ParamVector& rhs) { return lhs -= rhs; }
  friend ParamVector operator*(double scale, ParamVector v) { return v *= scale; }
  friend ParamVector operator*(ParamVector v, double scale) { return v *= scale; }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

double dot(const ParamVector& a, const ParamVector& b);
double l2_norm_sq(const ParamVector& v);
double l2_norm(const ParamVector& v);
double l1_norm(const ParamVector& v);

/// y += a * x
void axpy(double a, const ParamVector& x, ParamVector& y);

/// Coordinate-wise mean, computed as v_0 + sum_{i>0}(v_i - v_0) / n. The
/// summation runs in ascending list order, so the result does not depend on
/// how the inputs were produced, and n copies of v give v exactly.
ParamVector mean_reduce(std::span<const ParamVector> vs);

/// What a random stream is used for. Part of the stream identity.
enum class Purpose : std::uint32_t {
  kInstance = 1,
  kInit = 2,
  kGradientNoise = 3,
  kMinibatch = 4,
  kProxSample = 5,
  kPartition = 6,
  kDataset = 7,
  kProbe = 8,
  kFuzz = 9,
};

struct StreamId {
  std::uint64_t worker = 0;
  std::uint64_t round = 0;
  std::uint64_t step = 0;
  Purpose purpose = Purpose::kInstance;
};

/// Deterministic random stream keyed by (master seed, stream id).
///
/// The engine seed is a splitmix64 hash of the key, so streams for different
/// workers, rounds or inner steps never share state and can be created in any
/// order from any thread. Uniform and Gaussian variates are produced by code in
/// this file rather than std distributions, whose algorithms are unspecified.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Uniform integer in [0, n), rejection-sampled so there is no modulo bias.
  std::size_t index(std::size_t n);

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

std::uint64_t mix_seed(std::uint64_t seed, const StreamId& id);

/// Streams of one (worker, round) pair; local operators derive per-step
/// streams from it.
struct StreamFamily {
  std::uint64_t seed = 0;
  std::uint64_t worker = 0;
  std::uint64_t round = 0;

  RngStream stream(std::uint64_t step, Purpose purpose) const {
    return RngStream(seed, StreamId{worker, round, step, purpose});
  }
};

/// d iid zero-mean Gaussian entries scaled so that E||v||^2 = sigma^2, i.e.
/// per-coordinate variance sigma^2 / d. Note sigma bounds the whole vector,
/// not each coordinate.
ParamVector gaussian_vector(RngStream& rng, std::size_t d, double sigma);

}  // namespace fedbound
