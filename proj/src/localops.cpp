#include "fedbound/localops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedbound/detail/overloaded.hpp"
#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

void require_positive_step(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("local step size must be positive and finite, got " + std::to_string(gamma));
  }
}

void check_finite(const ParamVector& u, const StreamFamily& streams, std::size_t step) {
  if (!u.all_finite()) {
    throw DivergenceError("non-finite local iterate at worker " + std::to_string(streams.worker) +
                          ", round " + std::to_string(streams.round) + ", step " +
                          std::to_string(step));
  }
}

}  // namespace

void validate(const LocalOperatorSpec& spec) {
  std::visit(detail::overloaded{
                 [](const GradientSteps& g) {
                   if (g.T == 0) throw ConfigError("local.T must be at least 1");
                 },
                 [](const Proximal& p) {
                   std::vector<std::string> issues;
                   if (!(p.inner_lr > 0.0)) issues.emplace_back("local.inner_lr must be positive");
                   if (p.inner_iters == 0) issues.emplace_back("local.inner_iters must be positive");
                   if (!(p.tolerance >= 0.0)) issues.emplace_back("local.tolerance must be >= 0");
                   if (!issues.empty()) throw ConfigError(std::move(issues));
                 },
             },
             spec);
}

std::size_t local_steps(const LocalOperatorSpec& spec) {
  if (const auto* g = std::get_if<GradientSteps>(&spec)) return g->T;
  return 1;
}

ParamVector gradient_steps_displacement(const Objective& f, const ParamVector& x, double gamma,
                                        std::size_t steps, const StreamFamily& streams,
                                        std::vector<ParamVector>* gradients) {
  require_positive_step(gamma);
  if (steps == 0) throw ConfigError("local.T must be at least 1");
  ParamVector u(x.size());
  for (std::size_t t = 0; t < steps; ++t) {
    const ParamVector g =
        f.stochastic_gradient(t == 0 ? x : x + u, streams.stream(t, Purpose::kGradientNoise));
    axpy(-gamma, g, u);
    check_finite(u, streams, t);
    if (gradients != nullptr) gradients->push_back(g);
  }
  return u;
}

ParamVector apply_gradient_steps(const Objective& f, const ParamVector& x, double gamma,
                                 std::size_t steps, const StreamFamily& streams) {
  return x + gradient_steps_displacement(f, x, gamma, steps, streams);
}

ParamVector prox_displacement(const Objective& f, const ParamVector& x, double gamma,
                              const Proximal& spec, const StreamFamily& streams,
                              ParamVector* gradient) {
  require_positive_step(gamma);
  validate(LocalOperatorSpec{spec});
  const RngStream sample = streams.stream(0, Purpose::kProxSample);
  const double lr = std::min(spec.inner_lr, 1.0 / (f.smoothness() + 1.0 / gamma));
  ParamVector u(x.size());
  for (std::size_t j = 0; j < spec.inner_iters; ++j) {
    ParamVector step = f.stochastic_gradient(x + u, sample);
    axpy(1.0 / gamma, u, step);
    step *= lr;
    u -= step;
    check_finite(u, streams, j);
    if (spec.tolerance > 0.0 && l2_norm(step) <= spec.tolerance) break;
  }
  if (gradient != nullptr) *gradient = f.stochastic_gradient(x + u, sample);
  return u;
}

ParamVector apply_prox(const Objective& f, const ParamVector& x, double gamma,
                       const Proximal& spec, const StreamFamily& streams) {
  return x + prox_displacement(f, x, gamma, spec, streams);
}

}  // namespace fedbound
