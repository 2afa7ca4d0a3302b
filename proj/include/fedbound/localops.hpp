#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "fedbound/numerics.hpp"
#include "fedbound/problems.hpp"

namespace fedbound {

/// T sequential stochastic gradient steps from the broadcast model.
struct GradientSteps {
  std::size_t T = 1;
};

/// Inexact stochastic prox: inner_iters gradient steps on
/// F(y; xi) + ||y - x||^2 / (2 gamma), one sample xi held fixed per round.
struct Proximal {
  double inner_lr = 0.1;
  std::size_t inner_iters = 50;
  /// When positive, stop early once an inner step moves less than this.
  double tolerance = 0.0;
};

using LocalOperatorSpec = std::variant<GradientSteps, Proximal>;

void validate(const LocalOperatorSpec& spec);

/// T for gradient steps, 1 for the prox.
std::size_t local_steps(const LocalOperatorSpec& spec);

/// The operators work on the displacement u = y - x from the broadcast point
/// and evaluate every gradient at x + u. The engine aggregates displacements,
/// which keeps the with and without error-feedback paths bit-identical.
///
/// Step t draws its sample from streams.stream(t, kGradientNoise). When
/// gradients is non-null the stochastic gradient of every step is appended.
/// Throws DivergenceError on a non-finite iterate.
ParamVector gradient_steps_displacement(const Objective& f, const ParamVector& x, double gamma,
                                        std::size_t steps, const StreamFamily& streams,
                                        std::vector<ParamVector>* gradients = nullptr);

/// x + gradient_steps_displacement(...): the T-th local iterate.
ParamVector apply_gradient_steps(const Objective& f, const ParamVector& x, double gamma,
                                 std::size_t steps, const StreamFamily& streams);

/// The sample comes from streams.stream(0, kProxSample) and is reused by
/// every inner iteration. The inner step is min(inner_lr, 1 / (L + 1/gamma))
/// so the solver also converges for small gamma. When gradient is non-null it
/// receives grad F(x + u; xi) at the returned displacement u.
ParamVector prox_displacement(const Objective& f, const ParamVector& x, double gamma,
                              const Proximal& spec, const StreamFamily& streams,
                              ParamVector* gradient = nullptr);

ParamVector apply_prox(const Objective& f, const ParamVector& x, double gamma,
                       const Proximal& spec, const StreamFamily& streams);

}  // namespace fedbound
