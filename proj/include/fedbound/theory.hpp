#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fedbound/federated.hpp"
#include "fedbound/schedules.hpp"

namespace fedbound {

/// Which algorithm the constants describe.
enum class ConstantsSource { kFedAvg, kFedProx, kEfFedAvg, kEfFedProx, kManual };

std::string_view constants_source_name(ConstantsSource source);
ConstantsSource parse_constants_source(std::string_view name);

/// Coefficients of V_{k+1} <= (1 + b1 g_k^2) V_k - b2 g_k W_k + b3 g_k^2 and
/// the largest step g_k for which the algorithm is known to satisfy it.
struct BoundConstants {
  double b1 = 0.0;
  double b2 = 1.0;
  double b3 = 0.0;
  double step_cap = std::numeric_limits<double>::infinity();
  ConstantsSource source = ConstantsSource::kManual;

  /// Throws ConfigError unless b2 > 0, b1 >= 0, b3 >= 0, step_cap > 0.
  void validate() const;
};

struct FixedParams {
  double c = 1.0;
};

struct DiminishingParams {
  double c = 1.0;
  double nu = 0.75;
};

/// R bounds every V_k. R = 0 is allowed (it forces V = 0).
struct StepDecayParams {
  double gamma0 = 1.0;
  double decay_base = 2.0;
  double R = 1.0;
};

using TheoremParams = std::variant<FixedParams, DiminishingParams, StepDecayParams>;

/// V_0..V_K from the recursion with equality. Throws ConfigError on negative
/// inputs, mismatched lengths, or when some V_{k+1} would be negative.
std::vector<double> recursion_oracle(double V0, const BoundConstants& bc,
                                     std::span<const double> gamma, std::span<const double> W);

/// (1/sqrt(K)) (exp(b1 c^2) V0 / (b2 c) + b3 c / b2).
double theorem1_bound(double V0, const BoundConstants& bc, double c, std::size_t K);

/// 2 nu c^2 / (2 nu - 1), the bound on sum_k (c / (k+1)^nu)^2.
double diminishing_sum_bound(double c, double nu);

/// (1/K^(1-nu)) (V0/b2 + (b3/b2) S) exp(b1 S) / c with S = diminishing_sum_bound.
double theorem2_bound(double V0, const BoundConstants& bc, double c, double nu, std::size_t K);

/// R/(b2 g0 sqrt(K)) + C B log_base(K) / (2 g0 sqrt(K)), with
/// B = exp(2 b1 g0^2 / min(log_base 2, 1)) and C = (R + b3/b1) / b2. The
/// statement assumes the period theoretical_decay_period(K, base). V0 does
/// not enter; R must dominate it. Throws ConfigError for b1 = 0, where C is
/// undefined (use the fixed or diminishing bounds instead), and for K < 2.
double theorem3_bound(double V0, const BoundConstants& bc, const StepDecayParams& params,
                      std::size_t K);

/// True when K = M T for an integer M with T = 2K / log_base(K) exactly (up
/// to 1e-9 relative), the horizons the step-decay statement covers. Other K
/// can break the bound.
bool theorem3_horizon_admissible(std::size_t K, double decay_base);

double theorem_bound(double V0, const BoundConstants& bc, const TheoremParams& params,
                     std::size_t K);

/// The step sequence g_0..g_{K-1} the matching theorem is stated for.
std::vector<double> theorem_steps(const TheoremParams& params, std::size_t K);

std::string_view theorem_name(const TheoremParams& params);

/// Smallest K whose bound is at most epsilon. Fixed and diminishing use the
/// closed-form inversions ceil((G/eps)^2) and ceil((G/eps)^(1/(1-nu))); step
/// decay has no closed form and is searched numerically. Throws ConfigError
/// for epsilon <= 0 and RangeError when the count does not fit in 64 bits.
std::size_t iteration_complexity(const BoundConstants& bc, double V0, double epsilon,
                                 const TheoremParams& params);

struct PropositionInputs {
  double L = 1.0;
  std::size_t T = 1;
  double sigma2 = 0.0;
  double delta_inf = 0.0;
  /// Compressor contraction factor, used by the error-feedback variants.
  double contraction = 1.0;
};

/// Constants plus the named intermediate quantities they were built from.
struct PropositionDetail {
  BoundConstants constants;
  std::vector<std::pair<std::string, double>> intermediates;
};

/// Throws ConfigError for L <= 0, T = 0, negative sigma2 or delta_inf, a
/// contraction outside (0, 1], or ConstantsSource::kManual.
PropositionDetail proposition_detail(ConstantsSource which, const PropositionInputs& in);
BoundConstants proposition_constants(ConstantsSource which, const PropositionInputs& in);

/// Outcome of checking measured trajectories against a theorem.
struct Verdict {
  std::string theorem;
  double bound = std::numeric_limits<double>::quiet_NaN();
  double measured_min_W = std::numeric_limits<double>::quiet_NaN();
  /// Standard error of the seed mean at the minimizing round.
  double standard_error = 0.0;
  std::size_t argmin_round = 0;
  /// bound - measured_min_W.
  double margin = std::numeric_limits<double>::quiet_NaN();
  bool in_regime = false;
  /// measured_min_W exceeds the bound by more than two standard errors.
  bool violated = false;
  std::size_t seeds = 0;
  std::size_t rounds = 0;
  double V0 = 0.0;
  std::vector<std::string> notes;
};

struct VerifyOptions {
  /// Step-decay R; when unset, 1.1 times the largest seed V_k observed.
  std::optional<double> R;
};

/// Compares min_{k<K} of the seed-mean W_k against the bound for params. The
/// verdict is out of regime (and makes no claim) when any round's step
/// exceeded the cap, when the steps differ from the theorem's sequence, or
/// when every seed diverged. V0 is the seed-mean loss gap at round 0.
Verdict verify_run(const std::vector<RunRecord>& records, const BoundConstants& bc,
                   const TheoremParams& params, const VerifyOptions& options = {});

/// Theorem parameters matching a schedule. scale multiplies the schedule
/// values into the recursion's steps (T when local steps are not rescaled,
/// 1 otherwise). R is only used for step decay.
TheoremParams theorem_params_for(const ScheduleSpec& schedule, double scale, double R);

struct FuzzReport {
  std::string theorem;
  std::size_t uniform_trials = 0;
  std::size_t adversarial_trials = 0;
  std::size_t violations = 0;
  /// Largest min_k W_k / bound seen.
  double worst_ratio = 0.0;
};

enum class ScheduleKind { kFixed, kDiminishing, kStepDecay };

/// Random instances of the recursion with equality (step decay: V clamped
/// at R) and checks min_k W_k <= bound. Per trial one instance draws W_k
/// uniformly in its feasible range and one uses the largest constant W that
/// keeps V non-negative, which is the worst case for a constant sequence.
FuzzReport theorem_soundness_fuzz(ScheduleKind kind, std::size_t trials, std::uint64_t seed);

struct LemmaReport {
  std::size_t points = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;
};

/// (1 + a g^2)^K <= exp(a c^2) with g = c/sqrt(K), checked in log space.
LemmaReport lemma1_sweep(std::size_t points, std::uint64_t seed);
/// sum_{k<K} (c/(k+1)^nu)^2 <= diminishing_sum_bound(c, nu).
LemmaReport lemma2_sweep(std::size_t points, std::uint64_t seed);

}  // namespace fedbound
