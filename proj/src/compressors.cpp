#include "fedbound/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fedbound/detail/overloaded.hpp"
#include "fedbound/errors.hpp"

namespace fedbound {

using detail::overloaded;

namespace {

void check_topk(std::size_t k, std::size_t d) {
  if (k == 0) throw ConfigError("compressor.k must be positive");
  if (k > d) {
    throw ConfigError("compressor.k=" + std::to_string(k) + " exceeds dimension d=" +
                      std::to_string(d));
  }
}

ParamVector top_k(const ParamVector& v, std::size_t k) {
  check_topk(k, v.size());
  if (k == v.size()) return v;
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Total order: magnitude descending, then index ascending.
  auto before = [&v](std::size_t a, std::size_t b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(),
                   before);
  ParamVector out(v.size());
  for (std::size_t j = 0; j < k; ++j) out[order[j]] = v[order[j]];
  return out;
}

ParamVector scaled_sign(const ParamVector& v) {
  ParamVector out(v.size());
  if (v.empty()) return out;
  const double scale = l1_norm(v) / static_cast<double>(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (v[j] > 0.0) {
      out[j] = scale;
    } else if (v[j] < 0.0) {
      out[j] = -scale;
    }
  }
  return out;
}

}  // namespace

TopKCompressor topk_from_fraction(double fraction, std::size_t d) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("compressor.fraction must lie in (0, 1]");
  }
  if (d == 0) throw ConfigError("topk_from_fraction: dimension must be positive");
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(d)));
  return TopKCompressor{std::clamp<std::size_t>(k, 1, d)};
}

ParamVector compress(const CompressorSpec& q, const ParamVector& v) {
  return std::visit(overloaded{
                        [&v](const IdentityCompressor&) { return v; },
                        [&v](const TopKCompressor& c) { return top_k(v, c.k); },
                        [&v](const ScaledSignCompressor&) { return scaled_sign(v); },
                        [&v](const ZeroCompressor&) { return ParamVector(v.size()); },
                    },
                    q);
}

double contraction_factor(const CompressorSpec& q, std::size_t d) {
  if (d == 0) throw ConfigError("contraction_factor: dimension must be positive");
  return std::visit(overloaded{
                        [](const IdentityCompressor&) { return 1.0; },
                        [d](const TopKCompressor& c) {
                          check_topk(c.k, d);
                          return static_cast<double>(c.k) / static_cast<double>(d);
                        },
                        [d](const ScaledSignCompressor&) { return 1.0 / static_cast<double>(d); },
                        [](const ZeroCompressor&) -> double {
                          throw ConfigError("the zero map has no contraction factor");
                        },
                    },
                    q);
}

std::string_view compressor_kind(const CompressorSpec& q) {
  return std::visit(overloaded{
                        [](const IdentityCompressor&) { return std::string_view("identity"); },
                        [](const TopKCompressor&) { return std::string_view("topk"); },
                        [](const ScaledSignCompressor&) { return std::string_view("scaled_sign"); },
                        [](const ZeroCompressor&) { return std::string_view("zero"); },
                    },
                    q);
}

}  // namespace fedbound
