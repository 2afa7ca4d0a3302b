#include "fedbound/schedules.hpp"

#include <cmath>
#include <string>

#include "fedbound/detail/overloaded.hpp"
#include "fedbound/errors.hpp"

namespace fedbound {

using detail::overloaded;

void validate(const ScheduleSpec& schedule) {
  std::visit(overloaded{
                 [](const FixedSchedule& s) {
                   if (!(s.c > 0.0)) throw ConfigError("schedule.c must be positive");
                   if (s.horizon == 0) throw ConfigError("fixed schedule needs a horizon K >= 1");
                 },
                 [](const DiminishingSchedule& s) {
                   if (!(s.c > 0.0)) throw ConfigError("schedule.c must be positive");
                   if (!(s.nu > 0.5 && s.nu < 1.0)) {
                     throw ConfigError("schedule.nu must lie in (1/2, 1), got " +
                                       std::to_string(s.nu));
                   }
                 },
                 [](const StepDecaySchedule& s) {
                   if (!(s.gamma0 > 0.0)) throw ConfigError("schedule.gamma0 must be positive");
                   if (!(s.decay_base > 1.0)) throw ConfigError("schedule.decay_base must exceed 1");
                   if (s.period == 0) throw ConfigError("schedule.period must be positive");
                 },
             },
             schedule);
}

double step_size(const ScheduleSpec& schedule, std::size_t k) {
  validate(schedule);
  return std::visit(
      overloaded{
          [k](const FixedSchedule& s) {
            if (k >= s.horizon) {
              throw RangeError("fixed schedule queried at k=" + std::to_string(k) +
                               " beyond horizon K=" + std::to_string(s.horizon));
            }
            return s.c / std::sqrt(static_cast<double>(s.horizon));
          },
          [k](const DiminishingSchedule& s) {
            return s.c / std::pow(static_cast<double>(k) + 1.0, s.nu);
          },
          [k](const StepDecaySchedule& s) {
            const auto epoch = static_cast<double>(k / s.period);
            return s.gamma0 / std::pow(s.decay_base, epoch);
          },
      },
      schedule);
}

std::size_t theoretical_decay_period(std::size_t horizon, double decay_base) {
  if (horizon < 2) throw ConfigError("theoretical decay period needs K >= 2");
  if (!(decay_base > 1.0)) throw ConfigError("decay_base must exceed 1");
  const double k = static_cast<double>(horizon);
  const double log_k = std::log(k) / std::log(decay_base);
  const double period = std::round(2.0 * k / log_k);
  return period < 1.0 ? 1 : static_cast<std::size_t>(period);
}

std::string_view schedule_kind(const ScheduleSpec& schedule) {
  return std::visit(overloaded{
                        [](const FixedSchedule&) { return std::string_view("fixed"); },
                        [](const DiminishingSchedule&) { return std::string_view("diminishing"); },
                        [](const StepDecaySchedule&) { return std::string_view("step_decay"); },
                    },
                    schedule);
}

}  // namespace fedbound
