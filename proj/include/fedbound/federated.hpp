#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedbound/compressors.hpp"
#include "fedbound/localops.hpp"
#include "fedbound/numerics.hpp"
#include "fedbound/problems.hpp"
#include "fedbound/schedules.hpp"

namespace fedbound {

enum class Algorithm { kFullPrecision, kErrorFeedback };

/// What happens when the round step exceeds step_cap.
enum class CapPolicy {
  /// Use the cap instead and log a warning.
  kClamp,
  /// Run the schedule unchanged; the exceedance is only counted.
  kReport,
};

struct EngineConfig {
  std::vector<ObjectivePtr> workers;
  /// The average objective f, used for the recorded metrics only.
  ObjectivePtr global;
  /// f^inf (or its surrogate) subtracted from f(x^k) in loss_gap.
  double f_inf = 0.0;
  ParamVector x0;
  LocalOperatorSpec local = GradientSteps{};
  /// Required for error feedback, ignored otherwise.
  std::optional<CompressorSpec> compressor;
  ScheduleSpec schedule = FixedSchedule{};
  std::size_t rounds = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Gradient steps only: the inner step is schedule/T when true and the raw
  /// schedule value when false.
  bool rescale_by_T = true;
  double step_cap = std::numeric_limits<double>::infinity();
  CapPolicy cap_policy = CapPolicy::kClamp;
  /// Optional test accuracy of a model; NaN means not available.
  std::function<double(const ParamVector&)> accuracy;
  /// Keep last_gradient_sum() up to date (costs an extra gradient per
  /// worker for the prox).
  bool track_gradients = false;
};

struct ServerState {
  ParamVector x;
  std::size_t round = 0;
};

struct WorkerState {
  ObjectivePtr objective;
  /// Error-feedback memory e_i; stays zero without compression.
  ParamVector error;
  StreamFamily streams;
};

/// Metrics of one iterate x^k. gamma is the step of round k, which does not
/// exist for the final iterate (NaN there).
struct RoundRow {
  std::size_t round = 0;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double loss_gap = 0.0;
  double grad_norm_sq = 0.0;
  double err_norm_sq = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

/// rows has K + 1 entries on a completed run; every row but the last carries
/// a step.
struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<RoundRow> rows;
  bool diverged = false;
  std::string message;
  /// Rounds whose unclamped step exceeded the cap.
  std::size_t cap_exceeded = 0;
  double step_cap = std::numeric_limits<double>::infinity();
};

/// Round-by-round engine for Algorithm 1 (full precision) and Algorithm 2
/// (error feedback).
///
/// Round k: every worker runs its local operator from x^k with the round's
/// step and produces a displacement u_i. Full precision sets
/// x^{k+1} = x^k + mean(u_i). Error feedback sends Q(u_i + e_i), keeps
/// e_i <- u_i + e_i - Q(u_i + e_i) and sets x^{k+1} = x^k + mean(Q(.)).
/// Workers run in parallel on a private task arena; the reduction is in
/// worker order, so results do not depend on the thread count.
class FederatedEngine {
 public:
  FederatedEngine(EngineConfig cfg, Algorithm algorithm);
  ~FederatedEngine();
  FederatedEngine(const FederatedEngine&) = delete;
  FederatedEngine& operator=(const FederatedEngine&) = delete;

  /// Runs round server().round. Throws DivergenceError on a non-finite
  /// iterate, RangeError past a fixed schedule's horizon.
  void step();

  RoundRow metrics() const;

  const ServerState& server() const noexcept { return server_; }
  const std::vector<WorkerState>& workers() const noexcept { return workers_; }
  const EngineConfig& config() const noexcept { return cfg_; }

  /// Step alpha_k of the last round (after the cap policy) and the inner
  /// step the local operators used.
  double last_round_step() const noexcept { return last_step_; }
  double last_inner_step() const noexcept { return last_inner_; }
  /// Sum over workers and local steps of the stochastic gradients of the last
  /// round (for the prox: the gradient at the returned point).
  const ParamVector& last_gradient_sum() const noexcept { return last_gradient_sum_; }
  std::size_t cap_exceeded() const noexcept { return cap_exceeded_; }

 private:
  struct Arena;

  EngineConfig cfg_;
  Algorithm algorithm_;
  ServerState server_;
  std::vector<WorkerState> workers_;
  std::unique_ptr<Arena> arena_;
  double last_step_ = 0.0;
  double last_inner_ = 0.0;
  ParamVector last_gradient_sum_;
  std::size_t cap_exceeded_ = 0;
  bool warned_ = false;
};

/// Runs cfg.rounds rounds. A divergence ends the run early with diverged set
/// and the rows recorded so far.
RunRecord run_full_precision(const EngineConfig& cfg);
RunRecord run_error_feedback(const EngineConfig& cfg);
RunRecord run_algorithm(const EngineConfig& cfg, Algorithm algorithm);

/// z^k = x^k + (1/n) sum_i e_i^k.
ParamVector virtual_iterate(const ServerState& server, const std::vector<WorkerState>& workers);

struct AggregateRow {
  std::size_t round = 0;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double loss_gap_mean = 0.0;
  double loss_gap_std = 0.0;
  double grad_norm_sq_mean = 0.0;
  double grad_norm_sq_std = 0.0;
  double err_norm_sq_mean = 0.0;
  double err_norm_sq_std = 0.0;
  double test_acc_mean = std::numeric_limits<double>::quiet_NaN();
  double test_acc_std = std::numeric_limits<double>::quiet_NaN();
  std::size_t seeds = 0;
};

/// Per-round mean and sample standard deviation (n - 1 denominator; 0 for a
/// single seed) over the records that reach each round.
std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records);

std::string_view algorithm_name(Algorithm algorithm);

/// CSV with header round,gamma,loss_gap,grad_norm_sq,err_norm_sq,test_acc.
/// Values use 17 significant digits; NaN is written as an empty field.
void write_run_csv(std::ostream& out, const RunRecord& record);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
/// Parses write_run_csv output. Throws IngestionError on malformed input.
RunRecord read_run_csv(std::istream& in);

/// Formats v with 17 significant digits, empty for NaN.
std::string format_real(double v);

}  // namespace fedbound
