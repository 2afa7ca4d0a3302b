#include <doctest.h>

#include <cmath>

#include "fedbound/errors.hpp"
#include "fedbound/numerics.hpp"
#include "fedbound/schedules.hpp"

using namespace fedbound;

TEST_CASE("step_size examples") {
  const FixedSchedule fixed{2.0, 400};
  for (std::size_t k : {0, 1, 200, 399}) CHECK(step_size(fixed, k) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK((step_size(DiminishingSchedule{0.8, 0.51}, 0) == 0.8));
  CHECK((step_size(StepDecaySchedule{0.8, 2.0, 50}, 75) == 0.4));
  CHECK((step_size(StepDecaySchedule{0.8, 2.0, 50}, 49) == 0.8));
  CHECK((step_size(StepDecaySchedule{0.8, 2.0, 50}, 100) == 0.2));
}

TEST_CASE("step_size errors") {
  CHECK_THROWS_AS((step_size(FixedSchedule{2.0, 400}, 400)), RangeError);
  CHECK_THROWS_AS((step_size(DiminishingSchedule{1.0, 0.5}, 0)), ConfigError);
  CHECK_THROWS_AS((step_size(DiminishingSchedule{1.0, 1.0}, 0)), ConfigError);
  CHECK_THROWS_AS((validate(FixedSchedule{0.0, 10})), ConfigError);
  CHECK_THROWS_AS((validate(FixedSchedule{1.0, 0})), ConfigError);
  CHECK_THROWS_AS((validate(StepDecaySchedule{1.0, 1.0, 5})), ConfigError);
  CHECK_THROWS_AS((validate(StepDecaySchedule{1.0, 2.0, 0})), ConfigError);
  CHECK_THROWS_AS((validate(DiminishingSchedule{-1.0, 0.75})), ConfigError);
}

TEST_CASE("theoretical_decay_period examples") {
  CHECK(theoretical_decay_period(400, 2.0) == 93);
  CHECK(theoretical_decay_period(4, 2.0) == 4);
  CHECK(theoretical_decay_period(16, 4.0) == 16);
  CHECK_THROWS_AS(theoretical_decay_period(1, 2.0), ConfigError);
  CHECK_THROWS_AS(theoretical_decay_period(10, 1.0), ConfigError);
}

TEST_CASE("diminishing and step decay are non-increasing") {
  RngStream rng(21, {});
  for (int trial = 0; trial < 100; ++trial) {
    const DiminishingSchedule d{rng.uniform(0.01, 3.0), rng.uniform(0.501, 0.999)};
    const StepDecaySchedule s{rng.uniform(0.01, 3.0), rng.uniform(1.01, 5.0), 1 + rng.index(30)};
    for (std::size_t k = 0; k < 300; ++k) {
      CHECK(step_size(d, k + 1) < step_size(d, k));
      CHECK(step_size(s, k + 1) <= step_size(s, k));
    }
  }
}

TEST_CASE("diminishing tail sum and fixed growth") {
  RngStream rng(22, {});
  for (int trial = 0; trial < 300; ++trial) {
    const double c = rng.uniform(0.01, 3.0);
    const double nu = rng.uniform(0.501, 0.999);
    const std::size_t K = 1 + rng.index(5000);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::pow(step_size(DiminishingSchedule{c, nu}, k), 2);
    CHECK(sum <= 2.0 * nu * c * c / (2.0 * nu - 1.0));

    const double a = rng.uniform(1e-3, 10.0);
    const double g = step_size(FixedSchedule{c, K}, 0);
    CHECK(static_cast<double>(K) * std::log1p(a * g * g) <= a * c * c);
  }
}

TEST_CASE("schedule_kind names") {
  CHECK(schedule_kind(FixedSchedule{}) == "fixed");
  CHECK(schedule_kind(DiminishingSchedule{}) == "diminishing");
  CHECK(schedule_kind(StepDecaySchedule{}) == "step_decay");
}
