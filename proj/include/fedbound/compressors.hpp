#pragma once

#include <cstddef>
#include <string_view>
#include <variant>

#include "fedbound/numerics.hpp"

namespace fedbound {

struct IdentityCompressor {};

/// Keeps the k largest-magnitude entries, ties resolved toward the lower index.
struct TopKCompressor {
  std::size_t k = 1;
};

/// (||v||_1 / d) * sign(v), with sign(0) = 0.
struct ScaledSignCompressor {};

/// Maps everything to zero. Not contractive for any alpha > 0; only useful
/// for algebraic checks of the error-feedback recursion.
struct ZeroCompressor {};

using CompressorSpec =
    std::variant<IdentityCompressor, TopKCompressor, ScaledSignCompressor, ZeroCompressor>;

/// k = ceil(fraction * d), clamped to [1, d].
TopKCompressor topk_from_fraction(double fraction, std::size_t d);

/// Pure and deterministic. Throws ConfigError for TopK with k > d or k == 0.
ParamVector compress(const CompressorSpec& q, const ParamVector& v);

/// Certified alpha with ||Q(v) - v||^2 <= (1 - alpha)||v||^2 for all v.
/// Throws ConfigError for the zero map, which has no such alpha.
double contraction_factor(const CompressorSpec& q, std::size_t d);

std::string_view compressor_kind(const CompressorSpec& q);

}  // namespace fedbound
