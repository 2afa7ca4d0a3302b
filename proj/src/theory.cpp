#include "fedbound/theory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedbound/detail/overloaded.hpp"
#include "fedbound/errors.hpp"

namespace fedbound {

using detail::overloaded;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

double log_base(double x, double base) { return std::log(x) / std::log(base); }

void check_step_decay(const StepDecayParams& p) {
  require(p.gamma0 > 0.0, "step decay: gamma0 must be positive");
  require(p.decay_base > 1.0, "step decay: decay_base must exceed 1");
  require(p.R >= 0.0, "step decay: R must be non-negative");
}

void check_nu(double nu) {
  require(nu > 0.5 && nu < 1.0, "nu must lie in (1/2, 1), got " + std::to_string(nu));
}

double next_v(double V, const BoundConstants& bc, double g, double W) {
  return (1.0 + bc.b1 * g * g) * V - bc.b2 * g * W + bc.b3 * g * g;
}

// Largest W that keeps the next V non-negative.
double max_w(double V, const BoundConstants& bc, double g) {
  return ((1.0 + bc.b1 * g * g) * V + bc.b3 * g * g) / (bc.b2 * g);
}

std::size_t to_count(double x) {
  if (!(x < 1.8e19)) throw RangeError("iteration count does not fit in 64 bits");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(x * (1.0 - 1e-12))));
}

}  // namespace

std::string_view constants_source_name(ConstantsSource source) {
  switch (source) {
    case ConstantsSource::kFedAvg:
      return "fedavg";
    case ConstantsSource::kFedProx:
      return "fedprox";
    case ConstantsSource::kEfFedAvg:
      return "ef_fedavg";
    case ConstantsSource::kEfFedProx:
      return "ef_fedprox";
    case ConstantsSource::kManual:
      break;
  }
  return "manual";
}

ConstantsSource parse_constants_source(std::string_view name) {
  for (auto s : {ConstantsSource::kFedAvg, ConstantsSource::kFedProx, ConstantsSource::kEfFedAvg,
                 ConstantsSource::kEfFedProx, ConstantsSource::kManual}) {
    if (constants_source_name(s) == name) return s;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) +
                    "' (expected fedavg, fedprox, ef_fedavg, ef_fedprox or manual)");
}

void BoundConstants::validate() const {
  std::vector<std::string> issues;
  if (!(b2 > 0.0)) issues.emplace_back("b2 must be positive");
  if (!(b1 >= 0.0)) issues.emplace_back("b1 must be non-negative");
  if (!(b3 >= 0.0)) issues.emplace_back("b3 must be non-negative");
  if (!(step_cap > 0.0)) issues.emplace_back("step cap must be positive");
  if (!issues.empty()) throw ConfigError(std::move(issues));
}

std::vector<double> recursion_oracle(double V0, const BoundConstants& bc,
                                     std::span<const double> gamma, std::span<const double> W) {
  bc.validate();
  require(V0 >= 0.0, "recursion: V0 must be non-negative");
  require(gamma.size() == W.size(), "recursion: gamma and W lengths differ");
  std::vector<double> V{V0};
  V.reserve(gamma.size() + 1);
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    require(gamma[k] >= 0.0 && W[k] >= 0.0,
            "recursion: negative step or W at k=" + std::to_string(k));
    const double v = next_v(V.back(), bc, gamma[k], W[k]);
    require(v >= 0.0, "recursion: W_" + std::to_string(k) + " drives V negative");
    V.push_back(v);
  }
  return V;
}

double theorem1_bound(double V0, const BoundConstants& bc, double c, std::size_t K) {
  bc.validate();
  require(c > 0.0, "theorem 1: c must be positive");
  require(K >= 1, "theorem 1: K must be at least 1");
  const double lead = std::exp(bc.b1 * c * c) * V0 / (bc.b2 * c) + bc.b3 * c / bc.b2;
  return lead / std::sqrt(static_cast<double>(K));
}

double diminishing_sum_bound(double c, double nu) {
  check_nu(nu);
  return 2.0 * nu * c * c / (2.0 * nu - 1.0);
}

double theorem2_bound(double V0, const BoundConstants& bc, double c, double nu, std::size_t K) {
  bc.validate();
  require(c > 0.0, "theorem 2: c must be positive");
  require(K >= 1, "theorem 2: K must be at least 1");
  const double S = diminishing_sum_bound(c, nu);
  const double lead = (V0 / bc.b2 + (bc.b3 / bc.b2) * S) * std::exp(bc.b1 * S) / c;
  return lead / std::pow(static_cast<double>(K), 1.0 - nu);
}

double theorem3_bound(double /*V0*/, const BoundConstants& bc, const StepDecayParams& p,
                      std::size_t K) {
  bc.validate();
  check_step_decay(p);
  require(bc.b1 > 0.0,
          "theorem 3 is undefined for b1 = 0; use the fixed or diminishing bound instead");
  require(K >= 2, "theorem 3: K must be at least 2");
  const double sqrt_k = std::sqrt(static_cast<double>(K));
  const double C = (p.R + bc.b3 / bc.b1) / bc.b2;
  const double B = std::exp(2.0 * bc.b1 * p.gamma0 * p.gamma0 /
                            std::min(log_base(2.0, p.decay_base), 1.0));
  return p.R / (bc.b2 * p.gamma0 * sqrt_k) +
         C * B * log_base(static_cast<double>(K), p.decay_base) / (2.0 * p.gamma0 * sqrt_k);
}

bool theorem3_horizon_admissible(std::size_t K, double decay_base) {
  if (K < 2 || !(decay_base > 1.0)) return false;
  const std::size_t T = theoretical_decay_period(K, decay_base);
  const double exact = 2.0 * static_cast<double>(K) / log_base(static_cast<double>(K), decay_base);
  return K % T == 0 && std::abs(exact - static_cast<double>(T)) <= 1e-9 * exact;
}

double theorem_bound(double V0, const BoundConstants& bc, const TheoremParams& params,
                     std::size_t K) {
  return std::visit(overloaded{
                        [&](const FixedParams& p) { return theorem1_bound(V0, bc, p.c, K); },
                        [&](const DiminishingParams& p) {
                          return theorem2_bound(V0, bc, p.c, p.nu, K);
                        },
                        [&](const StepDecayParams& p) { return theorem3_bound(V0, bc, p, K); },
                    },
                    params);
}

std::vector<double> theorem_steps(const TheoremParams& params, std::size_t K) {
  std::vector<double> g(K);
  std::visit(overloaded{
                 [&](const FixedParams& p) {
                   for (std::size_t k = 0; k < K; ++k) {
                     g[k] = step_size(FixedSchedule{p.c, K}, k);
                   }
                 },
                 [&](const DiminishingParams& p) {
                   for (std::size_t k = 0; k < K; ++k) {
                     g[k] = step_size(DiminishingSchedule{p.c, p.nu}, k);
                   }
                 },
                 [&](const StepDecayParams& p) {
                   const StepDecaySchedule s{p.gamma0, p.decay_base,
                                             theoretical_decay_period(K, p.decay_base)};
                   for (std::size_t k = 0; k < K; ++k) g[k] = step_size(s, k);
                 },
             },
             params);
  return g;
}

std::string_view theorem_name(const TheoremParams& params) {
  return std::visit(overloaded{
                        [](const FixedParams&) { return std::string_view("theorem1"); },
                        [](const DiminishingParams&) { return std::string_view("theorem2"); },
                        [](const StepDecayParams&) { return std::string_view("theorem3"); },
                    },
                    params);
}

std::size_t iteration_complexity(const BoundConstants& bc, double V0, double epsilon,
                                 const TheoremParams& params) {
  bc.validate();
  require(epsilon > 0.0, "iteration complexity: epsilon must be positive");
  if (const auto* p = std::get_if<FixedParams>(&params)) {
    const double G = theorem1_bound(V0, bc, p->c, 1);
    return to_count(std::pow(G / epsilon, 2.0));
  }
  if (const auto* p = std::get_if<DiminishingParams>(&params)) {
    const double G = theorem2_bound(V0, bc, p->c, p->nu, 1);
    return to_count(std::pow(G / epsilon, 1.0 / (1.0 - p->nu)));
  }
  const auto& p = std::get<StepDecayParams>(params);
  auto ok = [&](std::size_t K) { return theorem3_bound(V0, bc, p, K) <= epsilon; };
  // The bound decreases in K once log K > 2, so scan the head and bisect past it.
  for (std::size_t K = 2; K <= 8; ++K) {
    if (ok(K)) return K;
  }
  std::size_t lo = 8;
  std::size_t hi = 16;
  while (!ok(hi)) {
    if (hi > (std::size_t{1} << 62)) throw RangeError("iteration count does not fit in 64 bits");
    lo = hi;
    hi *= 2;
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

PropositionDetail proposition_detail(ConstantsSource which, const PropositionInputs& in) {
  std::vector<std::string> issues;
  if (!(in.L > 0.0)) issues.emplace_back("L must be positive");
  if (in.T == 0) issues.emplace_back("T must be at least 1");
  if (!(in.sigma2 >= 0.0)) issues.emplace_back("sigma2 must be non-negative");
  if (!(in.delta_inf >= 0.0)) issues.emplace_back("delta_inf must be non-negative");
  const bool ef = which == ConstantsSource::kEfFedAvg || which == ConstantsSource::kEfFedProx;
  if (ef && !(in.contraction > 0.0 && in.contraction <= 1.0)) {
    issues.emplace_back("contraction factor must lie in (0, 1]");
  }
  if (which == ConstantsSource::kManual) issues.emplace_back("manual constants have no formula");
  if (!issues.empty()) throw ConfigError(std::move(issues));

  const double L = in.L;
  const double T = static_cast<double>(in.T);
  const double s6 = std::sqrt(6.0);
  const double a = in.contraction;
  const double q = (1.0 - a) * (1.0 + 2.0 / a);

  PropositionDetail out;
  BoundConstants& bc = out.constants;
  bc.source = which;
  switch (which) {
    case ConstantsSource::kFedAvg:
      bc.b1 = s6 * L * L * T;
      bc.b2 = 0.5;
      bc.b3 = s6 * L * L * T * in.delta_inf + L * (1.0 + (3.0 / s6) * T) * in.sigma2;
      bc.step_cap = 1.0 / (s6 * L);
      break;
    case ConstantsSource::kFedProx:
      bc.b1 = s6 * L * L;
      bc.b2 = 0.5;
      bc.b3 = s6 * L * L * in.delta_inf + L * (1.0 + 3.0 / s6) * in.sigma2;
      bc.step_cap = 1.0 / (s6 * L);
      break;
    case ConstantsSource::kEfFedAvg: {
      const double root = q == 0.0 ? kInf : std::sqrt(3.0 * a / (64.0 * q));
      const double alpha_hat = std::min(1.0 / 6.0, root) / L;
      const double A = 4.0 * (1.0 + 1.5 * L) * L * L * alpha_hat / a;
      const double C2 = 16.0 * q * A / 3.0 + 1.5 * L;
      const double C3 = 14.0 * q * A / 3.0 + 13.0 * L / 8.0;
      bc.b1 = 2.0 * L * C2;
      bc.b2 = 0.25;
      bc.b3 = 2.0 * L * C2 * in.delta_inf + C3 * in.sigma2;
      bc.step_cap = alpha_hat;
      out.intermediates = {{"alpha_hat", alpha_hat}, {"A", A}, {"C2_tilde", C2}, {"C3_tilde", C3}};
      break;
    }
    case ConstantsSource::kEfFedProx: {
      const double C1 = q * (4.0 + 4.0 * L * L / 3.0);
      const double C2 = q * (4.0 + 4.0 / 3.0);
      const double C3 = q * (4.0 + 2.0 / 3.0);
      const double gamma_bar = std::min(1.0 / (6.0 * L), C1 == 0.0 ? kInf : 0.5 * std::sqrt(a / C1));
      const double A = 3.0 * L * L * gamma_bar / a;
      bc.b1 = 2.0 * L * (1.5 * L + A * C2);
      bc.b2 = 0.25;
      bc.b3 = bc.b1 * in.delta_inf + (9.0 * L / 4.0 + A * C3) * in.sigma2;
      bc.step_cap = gamma_bar;
      out.intermediates = {{"gamma_bar", gamma_bar}, {"A", A}, {"C1", C1}, {"C2", C2}, {"C3", C3}};
      break;
    }
    case ConstantsSource::kManual:
      break;
  }
  bc.validate();
  return out;
}

BoundConstants proposition_constants(ConstantsSource which, const PropositionInputs& in) {
  return proposition_detail(which, in).constants;
}

TheoremParams theorem_params_for(const ScheduleSpec& schedule, double scale, double R) {
  validate(schedule);
  require(scale > 0.0, "schedule scale must be positive");
  return std::visit(overloaded{
                        [&](const FixedSchedule& s) -> TheoremParams {
                          return FixedParams{s.c * scale};
                        },
                        [&](const DiminishingSchedule& s) -> TheoremParams {
                          return DiminishingParams{s.c * scale, s.nu};
                        },
                        [&](const StepDecaySchedule& s) -> TheoremParams {
                          return StepDecayParams{s.gamma0 * scale, s.decay_base, R};
                        },
                    },
                    schedule);
}

Verdict verify_run(const std::vector<RunRecord>& records, const BoundConstants& bc,
                   const TheoremParams& params, const VerifyOptions& options) {
  bc.validate();
  Verdict v;
  v.theorem = std::string(theorem_name(params));
  std::vector<RunRecord> good;
  std::size_t regime_breaks = 0;
  for (const auto& r : records) {
    if (r.diverged) continue;
    good.push_back(r);
    regime_breaks += r.cap_exceeded;
  }
  v.seeds = good.size();
  if (good.empty()) {
    v.notes.emplace_back("every seed diverged");
    return v;
  }
  std::size_t rows = good.front().rows.size();
  for (const auto& r : good) rows = std::min(rows, r.rows.size());
  if (rows < 2) {
    v.notes.emplace_back("no completed rounds");
    return v;
  }
  const std::size_t K = rows - 1;
  v.rounds = K;
  const auto agg = aggregate_records(good);
  v.V0 = agg.front().loss_gap_mean;

  double best = kInf;
  for (std::size_t k = 0; k < K; ++k) {
    if (agg[k].grad_norm_sq_mean < best) {
      best = agg[k].grad_norm_sq_mean;
      v.argmin_round = k;
    }
  }
  v.measured_min_W = best;
  v.standard_error =
      agg[v.argmin_round].grad_norm_sq_std / std::sqrt(static_cast<double>(v.seeds));

  bool in_regime = true;
  if (regime_breaks > 0) {
    in_regime = false;
    v.notes.push_back(std::to_string(regime_breaks) + " round steps exceeded the cap " +
                      format_real(bc.step_cap));
  }
  TheoremParams used = params;
  if (auto* sd = std::get_if<StepDecayParams>(&used)) {
    if (options.R) {
      sd->R = *options.R;
    } else {
      double peak = 0.0;
      for (const auto& r : good) {
        for (const auto& row : r.rows) peak = std::max(peak, row.loss_gap);
      }
      sd->R = 1.1 * peak;
      v.notes.push_back("R estimated as 1.1 x max observed loss gap = " + format_real(sd->R));
    }
    if (K < 2) {
      in_regime = false;
      v.notes.emplace_back("step decay needs K >= 2");
    }
    if (K >= 2 && !theorem3_horizon_admissible(K, sd->decay_base)) {
      in_regime = false;
      v.notes.push_back("K = " + std::to_string(K) + " is not M T with log_base K = 2M");
    }
    if (bc.b1 == 0.0) {
      in_regime = false;
      v.notes.emplace_back("b1 = 0: theorem 3 undefined");
    }
  }
  const auto expected = theorem_steps(used, K);
  for (std::size_t k = 0; k < K && in_regime; ++k) {
    for (const auto& r : good) {
      const double g = r.rows[k].gamma;
      if (!(std::abs(g - expected[k]) <= 1e-12 * std::abs(expected[k]))) {
        in_regime = false;
        v.notes.push_back("round " + std::to_string(k) + " step " + format_real(g) +
                          " differs from the theorem's " + format_real(expected[k]));
        break;
      }
    }
  }
  v.in_regime = in_regime;
  if (!in_regime) return v;
  v.bound = theorem_bound(v.V0, bc, used, K);
  v.margin = v.bound - v.measured_min_W;
  v.violated = v.measured_min_W - v.bound > 2.0 * v.standard_error;
  return v;
}

namespace {

struct Instance {
  BoundConstants bc;
  double V0 = 0.0;
  std::vector<double> gamma;
  bool clamp = false;
  double R = kInf;
  TheoremParams params;
  std::size_t K = 0;
};

Instance draw_instance(ScheduleKind kind, RngStream& rng) {
  Instance in;
  in.bc.b2 = rng.uniform(0.05, 1.0);
  in.bc.b3 = rng.uniform(0.0, 5.0);
  if (kind == ScheduleKind::kStepDecay) {
    // Only horizons the theorem covers: K = M T with log_base K = 2M.
    std::size_t M = 0;
    std::size_t T = 0;
    do {
      M = 1 + rng.index(6);
      T = 1 + rng.index(600);
    } while (M * T < 2 || M * T > 3000);
    in.K = M * T;
    const double base = std::pow(static_cast<double>(in.K), 1.0 / (2.0 * static_cast<double>(M)));
    const double g0 = rng.uniform(0.01, 3.0);
    in.bc.b1 = rng.uniform(1e-3, 5.0);
    in.R = rng.uniform(0.01, 10.0);
    in.V0 = rng.uniform(0.0, in.R);
    in.clamp = true;
    in.params = StepDecayParams{g0, base, in.R};
  } else {
    in.K = 1 + rng.index(2000);
    in.V0 = rng.uniform(0.0, 10.0);
    in.bc.b1 = rng.uniform(0.0, 5.0);
    if (rng.uniform() < 0.1) in.bc.b1 = 0.0;
    const double c = rng.uniform(0.01, 2.0);
    if (kind == ScheduleKind::kFixed) {
      in.params = FixedParams{c};
    } else {
      in.params = DiminishingParams{c, rng.uniform(0.51, 0.99)};
    }
  }
  in.gamma = theorem_steps(in.params, in.K);
  return in;
}

// min_k W_k of a run with W_k = fraction_k * (largest feasible W_k).
double run_uniform(const Instance& in, RngStream& rng) {
  std::vector<double> W(in.K);
  double V = in.V0;
  for (std::size_t k = 0; k < in.K; ++k) {
    W[k] = rng.uniform() * max_w(V, in.bc, in.gamma[k]) * (1.0 - 1e-12);
    V = next_v(V, in.bc, in.gamma[k], W[k]);
    if (in.clamp) V = std::min(V, in.R);
  }
  if (!in.clamp) recursion_oracle(in.V0, in.bc, in.gamma, W);
  return *std::min_element(W.begin(), W.end());
}

bool constant_feasible(const Instance& in, double w) {
  double V = in.V0;
  for (double g : in.gamma) {
    V = next_v(V, in.bc, g, w);
    if (in.clamp) V = std::min(V, in.R);
    if (V < 0.0) return false;
  }
  return true;
}

// Largest constant W keeping V >= 0, found by bisection and shrunk slightly
// so the reported sequence is certainly feasible.
double run_adversarial(const Instance& in) {
  double lo = 0.0;
  double hi = 1.0;
  while (constant_feasible(in, hi) && hi < 1e300) hi *= 2.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (constant_feasible(in, mid) ? lo : hi) = mid;
  }
  const double w = lo * (1.0 - 1e-9);
  if (!in.clamp) {
    const std::vector<double> W(in.K, w);
    recursion_oracle(in.V0, in.bc, in.gamma, W);
  }
  return w;
}

}  // namespace

FuzzReport theorem_soundness_fuzz(ScheduleKind kind, std::size_t trials, std::uint64_t seed) {
  FuzzReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    RngStream rng(seed, StreamId{static_cast<std::uint64_t>(kind), 0, t, Purpose::kFuzz});
    const Instance in = draw_instance(kind, rng);
    report.theorem = std::string(theorem_name(in.params));
    const double bound = theorem_bound(in.V0, in.bc, in.params, in.K);
    for (const double w : {run_uniform(in, rng), run_adversarial(in)}) {
      if (w > bound) ++report.violations;
      if (bound > 0.0) report.worst_ratio = std::max(report.worst_ratio, w / bound);
    }
    ++report.uniform_trials;
    ++report.adversarial_trials;
  }
  return report;
}

namespace {

double log_uniform(RngStream& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

std::size_t draw_horizon(RngStream& rng) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(log_uniform(rng, 1.0, 1e5)));
}

}  // namespace

LemmaReport lemma1_sweep(std::size_t points, std::uint64_t seed) {
  LemmaReport report;
  for (std::size_t t = 0; t < points; ++t) {
    RngStream rng(seed, StreamId{1, 0, t, Purpose::kFuzz});
    const double a = log_uniform(rng, 1e-3, 10.0);
    const double c = log_uniform(rng, 1e-2, 3.0);
    const std::size_t K = draw_horizon(rng);
    const double g = c / std::sqrt(static_cast<double>(K));
    const double lhs = static_cast<double>(K) * std::log1p(a * g * g);
    const double rhs = a * c * c;
    if (lhs > rhs) ++report.violations;
    report.worst_ratio = std::max(report.worst_ratio, lhs / rhs);
    ++report.points;
  }
  return report;
}

LemmaReport lemma2_sweep(std::size_t points, std::uint64_t seed) {
  LemmaReport report;
  for (std::size_t t = 0; t < points; ++t) {
    RngStream rng(seed, StreamId{2, 0, t, Purpose::kFuzz});
    const double c = log_uniform(rng, 1e-2, 3.0);
    const double nu = rng.uniform(0.501, 0.999);
    const std::size_t K = draw_horizon(rng);
    const DiminishingSchedule s{c, nu};
    double lhs = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double g = step_size(s, k);
      lhs += g * g;
    }
    const double rhs = diminishing_sum_bound(c, nu);
    if (lhs > rhs) ++report.violations;
    report.worst_ratio = std::max(report.worst_ratio, lhs / rhs);
    ++report.points;
  }
  return report;
}

}  // namespace fedbound
