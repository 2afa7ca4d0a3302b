#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbound/datasets.hpp"
#include "fedbound/numerics.hpp"

namespace fedbound {

/// A worker-local objective f_i with exact and stochastic gradient oracles.
///
/// Implementations are immutable and every oracle is pure, so one instance
/// may be queried from many threads at once.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t dimension() const = 0;
  virtual double value(const ParamVector& x) const = 0;
  virtual ParamVector full_gradient(const ParamVector& x) const = 0;
  /// The random sample is a function of the stream state alone: two calls
  /// with equal streams see the same sample, at any x.
  virtual ParamVector stochastic_gradient(const ParamVector& x, RngStream rng) const = 0;

  /// Lipschitz constant of the gradient (an estimate for the MLP).
  virtual double smoothness() const = 0;
  /// A valid lower bound on f_i.
  virtual double lower_bound() const = 0;
  /// Bound on E||stochastic_gradient - full_gradient||^2. NaN when unknown.
  virtual double noise_bound() const = 0;

 protected:
  void check_dimension(const ParamVector& x) const;
};

using ObjectivePtr = std::shared_ptr<const Objective>;

/// f(x) = 1/2 x'Ax - b'x + c with A symmetric PSD, plus additive Gaussian
/// gradient noise with E||noise||^2 = sigma2.
class QuadraticObjective final : public Objective {
 public:
  /// Throws ConfigError if A is not symmetric PSD or f is unbounded below
  /// (b outside the range of A).
  QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd b, double c, double sigma2);

  std::size_t dimension() const override { return static_cast<std::size_t>(b_.size()); }
  double value(const ParamVector& x) const override;
  ParamVector full_gradient(const ParamVector& x) const override;
  ParamVector stochastic_gradient(const ParamVector& x, RngStream rng) const override;
  double smoothness() const override { return smoothness_; }
  double lower_bound() const override { return infimum_; }
  double noise_bound() const override { return sigma2_; }

  const Eigen::MatrixXd& hessian() const noexcept { return a_; }
  const Eigen::VectorXd& linear() const noexcept { return b_; }
  double offset() const noexcept { return c_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  double c_;
  double sigma2_;
  double smoothness_ = 0.0;
  double infimum_ = 0.0;
};

/// Mean of worker objectives, f = (1/n) sum f_i, evaluated in worker order.
class AverageObjective final : public Objective {
 public:
  AverageObjective(std::vector<ObjectivePtr> workers, double infimum);

  std::size_t dimension() const override { return workers_.front()->dimension(); }
  double value(const ParamVector& x) const override;
  ParamVector full_gradient(const ParamVector& x) const override;
  /// Averages one stochastic gradient per worker; worker i draws from a
  /// stream derived from rng's next output.
  ParamVector stochastic_gradient(const ParamVector& x, RngStream rng) const override;
  double smoothness() const override;
  double lower_bound() const override { return infimum_; }
  double noise_bound() const override;

  const std::vector<ObjectivePtr>& workers() const noexcept { return workers_; }

 private:
  std::vector<ObjectivePtr> workers_;
  double infimum_;
};

struct QuadraticFamilySpec {
  std::size_t dim = 10;
  std::size_t workers = 10;
  double eig_min = 0.5;
  double eig_max = 1.0;
  /// Distance of every worker minimizer from the origin; 0 gives identical
  /// minimizers.
  double radius = 1.0;
  double sigma2 = 0.0;
  /// Norm of the initial point.
  double init_radius = 5.0;
  std::uint64_t instance_seed = 1;
};

/// Heterogeneous quadratics with closed-form global quantities.
struct QuadraticFamily {
  std::vector<std::shared_ptr<const QuadraticObjective>> workers;
  ParamVector minimizer;
  double infimum = 0.0;
  /// eig_max when the eigensolve agrees with it to rounding.
  double smoothness = 0.0;
  ParamVector initial_point;

  std::vector<ObjectivePtr> objectives() const { return {workers.begin(), workers.end()}; }
};

/// A_i = Q_i diag(lambda) Q_i' with random rotations Q_i. Every worker has
/// eigenvalues eig_max and eig_min (when dim >= 2); the rest are uniform in
/// between. Worker i minimizes at radius * u_i for a random unit u_i.
QuadraticFamily make_quadratic_family(const QuadraticFamilySpec& spec);

/// Solves (sum A_i) x = sum b_i (least-norm solution when singular).
/// Throws ConfigError when the average is unbounded below.
ParamVector quadratic_global_minimizer(
    std::span<const std::shared_ptr<const QuadraticObjective>> workers);

/// Shared machinery for classifiers trained on a worker's shard.
///
/// value(x) = mean over the shard of the per-sample loss + (ridge/2)||x||^2.
/// Stochastic gradients use a minibatch drawn without replacement; a batch at
/// least as large as the shard is the full gradient.
class DatasetObjective : public Objective {
 public:
  DatasetObjective(std::shared_ptr<const LabeledDataset> data, std::vector<std::size_t> indices,
                   std::size_t batch, double ridge, double noise_bound);

  double value(const ParamVector& x) const override;
  ParamVector full_gradient(const ParamVector& x) const override;
  ParamVector stochastic_gradient(const ParamVector& x, RngStream rng) const override;
  /// Cross-entropy is non-negative, so 0 is used.
  double lower_bound() const override { return 0.0; }
  double noise_bound() const override { return noise_bound_; }

  virtual std::uint32_t predict(const ParamVector& x, std::span<const double> features) const = 0;
  /// Fraction of ds classified correctly.
  double accuracy(const ParamVector& x, const LabeledDataset& ds) const;

  std::size_t shard_size() const noexcept { return indices_.size(); }
  std::size_t batch() const noexcept { return batch_; }
  double ridge() const noexcept { return ridge_; }
  const LabeledDataset& data() const noexcept { return *data_; }
  const std::shared_ptr<const LabeledDataset>& data_ptr() const noexcept { return data_; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }

 protected:
  /// Loss of one sample; when grad is given, adds weight * d(loss)/dx to it.
  virtual double sample_loss(const ParamVector& x, std::size_t sample, double weight,
                             ParamVector* grad) const = 0;

 private:
  double batch_loss(const ParamVector& x, std::span<const std::size_t> samples,
                    ParamVector* grad) const;

  std::shared_ptr<const LabeledDataset> data_;
  std::vector<std::size_t> indices_;
  std::size_t batch_;
  double ridge_;
  double noise_bound_;
};

/// Multinomial logistic regression. Parameters: class weight rows (C x p,
/// row-major) followed by C biases.
class LogisticObjective final : public DatasetObjective {
 public:
  LogisticObjective(std::shared_ptr<const LabeledDataset> data, std::vector<std::size_t> indices,
                    std::size_t batch, double ridge, double noise_bound);

  static std::size_t parameter_count(std::size_t features, std::size_t classes) {
    return classes * (features + 1);
  }

  std::size_t dimension() const override;
  /// (1/2) max ||[a; 1]||^2 over the shard, plus ridge. The softmax
  /// cross-entropy Hessian in the logits is bounded by 1/2.
  double smoothness() const override { return smoothness_; }
  std::uint32_t predict(const ParamVector& x, std::span<const double> features) const override;

 protected:
  double sample_loss(const ParamVector& x, std::size_t sample, double weight,
                     ParamVector* grad) const override;

 private:
  double smoothness_ = 0.0;
};

/// One tanh hidden layer of width h and a softmax output. Parameters: W1 (h x p),
/// b1 (h), W2 (C x h), b2 (C), each row-major.
class MlpObjective final : public DatasetObjective {
 public:
  /// The MLP has no global gradient Lipschitz constant; smoothness() returns
  /// the supplied estimate (see estimate_smoothness).
  MlpObjective(std::shared_ptr<const LabeledDataset> data, std::vector<std::size_t> indices,
               std::size_t batch, double ridge, std::size_t hidden, double noise_bound,
               double smoothness_estimate);

  static std::size_t parameter_count(std::size_t features, std::size_t hidden,
                                     std::size_t classes) {
    return hidden * features + hidden + classes * hidden + classes;
  }

  std::size_t dimension() const override;
  double smoothness() const override { return smoothness_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::uint32_t predict(const ParamVector& x, std::span<const double> features) const override;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static ParamVector initial_point(std::size_t features, std::size_t hidden, std::size_t classes,
                                   RngStream& rng);

 protected:
  double sample_loss(const ParamVector& x, std::size_t sample, double weight,
                     ParamVector* grad) const override;

 private:
  void forward(const ParamVector& x, std::span<const double> a, std::vector<double>& hidden,
               std::vector<double>& logits) const;

  std::size_t hidden_;
  double smoothness_;
};

/// Delta^inf = f_inf - (1/n) sum f_i^inf. Throws ConfigError when negative,
/// which means f_inf is inconsistent with the worker lower bounds.
double delta_inf(std::span<const ObjectivePtr> workers, double global_infimum);

/// max over probe points of the Monte-Carlo mean of ||g - grad f||^2.
double estimate_noise_bound(const Objective& objective, std::span<const ParamVector> probes,
                            std::size_t samples, std::uint64_t seed);

/// max ||grad f(x) - grad f(y)|| / ||x - y|| over random pairs in a ball.
double estimate_smoothness(const Objective& objective, const ParamVector& center, double radius,
                           std::size_t pairs, std::uint64_t seed);

}  // namespace fedbound
