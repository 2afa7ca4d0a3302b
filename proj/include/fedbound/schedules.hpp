#pragma once

#include <cstddef>
#include <string_view>
#include <variant>

namespace fedbound {

/// gamma_k = c / sqrt(horizon) for every k < horizon.
struct FixedSchedule {
  double c = 1.0;
  std::size_t horizon = 1;
};

/// gamma_k = c / (k + 1)^nu with nu in (1/2, 1).
struct DiminishingSchedule {
  double c = 1.0;
  double nu = 0.75;
};

/// gamma_k = gamma0 / decay_base^floor(k / period).
struct StepDecaySchedule {
  double gamma0 = 1.0;
  double decay_base = 2.0;
  std::size_t period = 1;
};

using ScheduleSpec = std::variant<FixedSchedule, DiminishingSchedule, StepDecaySchedule>;

/// Throws ConfigError when a parameter is outside its admissible range.
void validate(const ScheduleSpec& schedule);

/// Closed-form step size at round k. Step-size caps are not applied here.
/// Throws RangeError for k >= horizon on a fixed schedule.
double step_size(const ScheduleSpec& schedule, std::size_t k);

/// round(2K / log_base(K)), at least 1. This is the period the step-decay
/// rate guarantee is stated for, which is generally not the period a run uses.
std::size_t theoretical_decay_period(std::size_t horizon, double decay_base);

std::string_view schedule_kind(const ScheduleSpec& schedule);

}  // namespace fedbound
