#include <doctest.h>

#include <cmath>

#include "fedbound/compressors.hpp"
#include "fedbound/errors.hpp"
#include "fedbound/numerics.hpp"

using namespace fedbound;

TEST_CASE("compress examples") {
  const ParamVector v{3, -1, 2};
  const auto q = compress(TopKCompressor{1}, v);
  CHECK((q == ParamVector{3, 0, 0}));
  CHECK(l2_norm_sq(q - v) == 5.0);
  CHECK(5.0 <= (1.0 - 1.0 / 3.0) * 14.0);
  CHECK((compress(TopKCompressor{3}, v) == v));
  const ParamVector ones{1, 1, 1, 1};
  CHECK((compress(ScaledSignCompressor{}, ones) == ones));
  CHECK((compress(IdentityCompressor{}, v) == v));
  CHECK((compress(ZeroCompressor{}, v) == ParamVector{0, 0, 0}));
}

TEST_CASE("topk ties go to the lower index") {
  CHECK((compress(TopKCompressor{2}, ParamVector{1, -2, 2, 2}) == ParamVector{0, -2, 2, 0}));
  CHECK((compress(TopKCompressor{1}, ParamVector{0, 0, 0}) == ParamVector{0, 0, 0}));
}

TEST_CASE("scaled sign maps zero to zero") {
  CHECK((compress(ScaledSignCompressor{}, ParamVector{0, 0}) == ParamVector{0, 0}));
  CHECK((compress(ScaledSignCompressor{}, ParamVector{2, 0, -4, 0}) == ParamVector{1.5, 0, -1.5, 0}));
}

TEST_CASE("compress errors") {
  CHECK_THROWS_AS((compress(TopKCompressor{4}, ParamVector{1, 2, 3})), ConfigError);
  CHECK_THROWS_AS((compress(TopKCompressor{0}, ParamVector{1, 2, 3})), ConfigError);
  CHECK_THROWS_AS((contraction_factor(ZeroCompressor{}, 3)), ConfigError);
}

TEST_CASE("contraction_factor examples") {
  // 4310 / 431080 is 0.0099981; the quoted 1% is rounded.
  CHECK((contraction_factor(TopKCompressor{4310}, 431080) == doctest::Approx(0.01).epsilon(2e-4)));
  for (std::size_t d : {1, 5, 1000}) CHECK(contraction_factor(IdentityCompressor{}, d) == 1.0);
  CHECK((contraction_factor(ScaledSignCompressor{}, 4) == 0.25));
}

TEST_CASE("topk_from_fraction") {
  CHECK(topk_from_fraction(0.01, 431080).k == 4311);
  CHECK(topk_from_fraction(0.01, 100).k == 1);
  CHECK(topk_from_fraction(0.1, 110).k == 11);
  CHECK(topk_from_fraction(1e-9, 10).k == 1);
  CHECK(topk_from_fraction(1.0, 10).k == 10);
}

TEST_CASE("contraction, idempotence and purity") {
  RngStream rng(31, {});
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + rng.index(60);
    ParamVector v(d);
    for (auto& x : v) x = rng.uniform() < 0.3 ? 0.0 : rng.normal() / std::max(rng.uniform(), 1e-3);
    const std::size_t k = 1 + rng.index(d);
    for (CompressorSpec q : {CompressorSpec{TopKCompressor{k}}, CompressorSpec{ScaledSignCompressor{}},
                             CompressorSpec{IdentityCompressor{}}}) {
      const auto qv = compress(q, v);
      const double alpha = contraction_factor(q, d);
      CHECK(l2_norm_sq(qv - v) <= (1.0 - alpha) * l2_norm_sq(v) * (1.0 + 1e-12));
      CHECK(compress(q, v) == qv);
    }
    const auto t = compress(TopKCompressor{k}, v);
    CHECK((compress(TopKCompressor{k}, t) == t));
  }
}

TEST_CASE("compressor_kind names") {
  CHECK(compressor_kind(IdentityCompressor{}) == "identity");
  CHECK(compressor_kind(TopKCompressor{}) == "topk");
  CHECK(compressor_kind(ScaledSignCompressor{}) == "scaled_sign");
}
