#include "fedbound/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

Eigen::Map<const Eigen::VectorXd> as_eigen(const ParamVector& x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

ParamVector from_eigen(const Eigen::VectorXd& v) {
  return ParamVector(std::vector<double>(v.data(), v.data() + v.size()));
}

// Pseudo-inverse solve of a symmetric PSD system via its eigendecomposition.
// Returns false when rhs has a component outside the range of the matrix.
bool psd_solve(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& eig, const Eigen::VectorXd& rhs,
               Eigen::VectorXd& out) {
  const auto& values = eig.eigenvalues();
  const auto& vectors = eig.eigenvectors();
  const double largest = values.size() > 0 ? std::max(values.maxCoeff(), 0.0) : 0.0;
  const double cutoff = 1e-12 * std::max(largest, 1.0);
  Eigen::VectorXd coords = vectors.transpose() * rhs;
  double outside = 0.0;
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    if (values[j] > cutoff) {
      coords[j] /= values[j];
    } else {
      outside = std::max(outside, std::abs(coords[j]));
      coords[j] = 0.0;
    }
  }
  out = vectors * coords;
  return outside <= 1e-9 * std::max(1.0, rhs.norm());
}

Eigen::MatrixXd random_rotation(RngStream& rng, std::size_t d) {
  Eigen::MatrixXd g(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < d; ++i) g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so the rotation is a deterministic function of g.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (r(jj, jj) < 0.0) q.col(jj) *= -1.0;
  }
  return q;
}

ParamVector random_unit(RngStream& rng, std::size_t d) {
  ParamVector u;
  double norm = 0.0;
  do {
    u = gaussian_vector(rng, d, 1.0);
    norm = l2_norm(u);
  } while (norm == 0.0);
  return (1.0 / norm) * u;
}

double log_sum_exp(std::span<const double> z) {
  const double peak = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

// Overwrites z with softmax(z) and returns the log-partition.
double softmax_inplace(std::vector<double>& z) {
  const double lse = log_sum_exp(z);
  for (double& v : z) v = std::exp(v - lse);
  return lse;
}

}  // namespace

void Objective::check_dimension(const ParamVector& x) const {
  if (x.size() != dimension()) {
    throw ConfigError("dimension mismatch: objective has d=" + std::to_string(dimension()) +
                      ", got vector of length " + std::to_string(x.size()));
  }
}

QuadraticObjective::QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd b, double c,
                                       double sigma2)
    : a_(std::move(a)), b_(std::move(b)), c_(c), sigma2_(sigma2) {
  if (a_.rows() != a_.cols() || a_.rows() != b_.size() || b_.size() == 0) {
    throw ConfigError("quadratic: A must be square and match the length of b");
  }
  if (!(sigma2_ >= 0.0)) throw ConfigError("quadratic: sigma2 must be non-negative");
  const double asym = (a_ - a_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, a_.cwiseAbs().maxCoeff())) {
    throw ConfigError("quadratic: A is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a_);
  const double lowest = eig.eigenvalues().minCoeff();
  smoothness_ = eig.eigenvalues().maxCoeff();
  if (lowest < -1e-12 * std::max(1.0, smoothness_)) {
    throw ConfigError("quadratic: A is not positive semidefinite (min eigenvalue " +
                      std::to_string(lowest) + ")");
  }
  Eigen::VectorXd solution;
  if (!psd_solve(eig, b_, solution)) {
    throw ConfigError("quadratic: b is outside the range of A, f is unbounded below");
  }
  infimum_ = c_ - 0.5 * b_.dot(solution);
}

double QuadraticObjective::value(const ParamVector& x) const {
  check_dimension(x);
  const auto v = as_eigen(x);
  return 0.5 * v.dot(a_ * v) - b_.dot(v) + c_;
}

ParamVector QuadraticObjective::full_gradient(const ParamVector& x) const {
  check_dimension(x);
  return from_eigen(a_ * as_eigen(x) - b_);
}

ParamVector QuadraticObjective::stochastic_gradient(const ParamVector& x, RngStream rng) const {
  auto g = full_gradient(x);
  if (sigma2_ > 0.0) g += gaussian_vector(rng, g.size(), std::sqrt(sigma2_));
  return g;
}

AverageObjective::AverageObjective(std::vector<ObjectivePtr> workers, double infimum)
    : workers_(std::move(workers)), infimum_(infimum) {
  if (workers_.empty()) throw ConfigError("average objective needs at least one worker");
  for (const auto& w : workers_) {
    if (w->dimension() != workers_.front()->dimension()) {
      throw ConfigError("average objective: workers disagree on the dimension");
    }
  }
}

double AverageObjective::value(const ParamVector& x) const {
  double acc = 0.0;
  for (const auto& w : workers_) acc += w->value(x);
  return acc / static_cast<double>(workers_.size());
}

ParamVector AverageObjective::full_gradient(const ParamVector& x) const {
  std::vector<ParamVector> grads;
  grads.reserve(workers_.size());
  for (const auto& w : workers_) grads.push_back(w->full_gradient(x));
  return mean_reduce(grads);
}

ParamVector AverageObjective::stochastic_gradient(const ParamVector& x, RngStream rng) const {
  const std::uint64_t base = rng.next_u64();
  std::vector<ParamVector> grads;
  grads.reserve(workers_.size());
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    grads.push_back(workers_[i]->stochastic_gradient(
        x, RngStream(base, StreamId{i, 0, 0, Purpose::kGradientNoise})));
  }
  return mean_reduce(grads);
}

double AverageObjective::smoothness() const {
  double l = 0.0;
  for (const auto& w : workers_) l = std::max(l, w->smoothness());
  return l;
}

double AverageObjective::noise_bound() const {
  double acc = 0.0;
  for (const auto& w : workers_) acc += w->noise_bound();
  const double n = static_cast<double>(workers_.size());
  return acc / (n * n);
}

QuadraticFamily make_quadratic_family(const QuadraticFamilySpec& spec) {
  if (spec.dim == 0 || spec.workers == 0) {
    throw ConfigError("quadratic family needs positive dimension and worker count");
  }
  if (!(spec.eig_min >= 0.0 && spec.eig_max > 0.0 && spec.eig_min <= spec.eig_max)) {
    throw ConfigError("quadratic family needs 0 <= eig_min <= eig_max, eig_max > 0");
  }
  if (!(spec.radius >= 0.0) || !(spec.init_radius >= 0.0) || !(spec.sigma2 >= 0.0)) {
    throw ConfigError("quadratic family: radius, init_radius and sigma2 must be non-negative");
  }
  const std::size_t d = spec.dim;
  QuadraticFamily family;
  for (std::size_t i = 0; i < spec.workers; ++i) {
    RngStream rng(spec.instance_seed, StreamId{i, 0, 0, Purpose::kInstance});
    Eigen::VectorXd lambda(d);
    for (std::size_t j = 0; j < d; ++j) {
      lambda[static_cast<Eigen::Index>(j)] = rng.uniform(spec.eig_min, spec.eig_max);
    }
    lambda[0] = spec.eig_max;
    if (d >= 2) lambda[1] = spec.eig_min;
    const Eigen::MatrixXd q = random_rotation(rng, d);
    Eigen::MatrixXd a = q * lambda.asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose());
    const ParamVector center = spec.radius * random_unit(rng, d);
    Eigen::VectorXd b = a * as_eigen(center);
    const double c = 0.5 * as_eigen(center).dot(b);
    family.workers.push_back(
        std::make_shared<QuadraticObjective>(std::move(a), std::move(b), c, spec.sigma2));
  }
  family.minimizer = quadratic_global_minimizer(family.workers);
  double value = 0.0;
  for (const auto& w : family.workers) {
    value += w->value(family.minimizer);
    family.smoothness = std::max(family.smoothness, w->smoothness());
  }
  family.infimum = value / static_cast<double>(spec.workers);
  if (std::abs(family.smoothness - spec.eig_max) <= 1e-12 * spec.eig_max) {
    family.smoothness = spec.eig_max;
  }
  RngStream init(spec.instance_seed, StreamId{0, 0, 0, Purpose::kInit});
  family.initial_point = spec.init_radius * random_unit(init, d);
  return family;
}

ParamVector quadratic_global_minimizer(
    std::span<const std::shared_ptr<const QuadraticObjective>> workers) {
  if (workers.empty()) throw ConfigError("global minimizer of an empty family");
  const auto d = static_cast<Eigen::Index>(workers.front()->dimension());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (const auto& w : workers) {
    if (static_cast<Eigen::Index>(w->dimension()) != d) {
      throw ConfigError("global minimizer: workers disagree on the dimension");
    }
    a += w->hessian();
    b += w->linear();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  Eigen::VectorXd solution;
  if (!psd_solve(eig, b, solution)) {
    throw ConfigError("global minimizer: the average quadratic is unbounded below");
  }
  return from_eigen(solution);
}

DatasetObjective::DatasetObjective(std::shared_ptr<const LabeledDataset> data,
                                   std::vector<std::size_t> indices, std::size_t batch,
                                   double ridge, double noise_bound)
    : data_(std::move(data)),
      indices_(std::move(indices)),
      batch_(batch),
      ridge_(ridge),
      noise_bound_(noise_bound) {
  if (!data_) throw ConfigError("dataset objective: no dataset");
  if (indices_.empty()) throw ConfigError("dataset objective: empty shard");
  if (batch_ == 0) throw ConfigError("problem.batch must be positive");
  if (!(ridge_ >= 0.0)) throw ConfigError("problem.ridge must be non-negative");
  for (auto idx : indices_) {
    if (idx >= data_->size()) throw ConfigError("dataset objective: sample index out of range");
  }
}

double DatasetObjective::batch_loss(const ParamVector& x, std::span<const std::size_t> samples,
                                    ParamVector* grad) const {
  check_dimension(x);
  const double weight = 1.0 / static_cast<double>(samples.size());
  double loss = 0.0;
  for (auto s : samples) loss += sample_loss(x, s, weight, grad);
  loss *= weight;
  if (ridge_ > 0.0) {
    loss += 0.5 * ridge_ * l2_norm_sq(x);
    if (grad != nullptr) axpy(ridge_, x, *grad);
  }
  return loss;
}

double DatasetObjective::value(const ParamVector& x) const {
  return batch_loss(x, indices_, nullptr);
}

ParamVector DatasetObjective::full_gradient(const ParamVector& x) const {
  ParamVector grad(dimension());
  batch_loss(x, indices_, &grad);
  return grad;
}

ParamVector DatasetObjective::stochastic_gradient(const ParamVector& x, RngStream rng) const {
  const std::size_t n = indices_.size();
  if (batch_ >= n) return full_gradient(x);
  // Floyd's sampling of batch_ distinct positions.
  std::vector<std::size_t> picked;
  picked.reserve(batch_);
  for (std::size_t j = n - batch_; j < n; ++j) {
    const std::size_t t = rng.index(j + 1);
    if (std::find(picked.begin(), picked.end(), t) == picked.end()) {
      picked.push_back(t);
    } else {
      picked.push_back(j);
    }
  }
  std::sort(picked.begin(), picked.end());
  for (auto& p : picked) p = indices_[p];
  ParamVector grad(dimension());
  batch_loss(x, picked, &grad);
  return grad;
}

double DatasetObjective::accuracy(const ParamVector& x, const LabeledDataset& ds) const {
  if (ds.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (predict(x, ds.feature(i)) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

LogisticObjective::LogisticObjective(std::shared_ptr<const LabeledDataset> data,
                                     std::vector<std::size_t> indices, std::size_t batch,
                                     double ridge, double noise_bound)
    : DatasetObjective(std::move(data), std::move(indices), batch, ridge, noise_bound) {
  double widest = 0.0;
  for (auto idx : this->indices()) {
    double norm_sq = 1.0;
    for (double v : this->data().feature(idx)) norm_sq += v * v;
    widest = std::max(widest, norm_sq);
  }
  smoothness_ = 0.5 * widest + this->ridge();
}

std::size_t LogisticObjective::dimension() const {
  return parameter_count(data().dim, data().classes);
}

double LogisticObjective::sample_loss(const ParamVector& x, std::size_t sample, double weight,
                                      ParamVector* grad) const {
  const auto& ds = data();
  const std::size_t p = ds.dim;
  const std::size_t classes = ds.classes;
  const auto a = ds.feature(sample);
  const std::uint32_t label = ds.labels[sample];
  const double* bias = x.data() + classes * p;

  std::vector<double> z(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double* row = x.data() + c * p;
    double acc = bias[c];
    for (std::size_t j = 0; j < p; ++j) acc += row[j] * a[j];
    z[c] = acc;
  }
  const double picked = z[label];
  const double lse = softmax_inplace(z);
  if (grad != nullptr) {
    double* g = grad->data();
    for (std::size_t c = 0; c < classes; ++c) {
      const double dz = weight * (z[c] - (c == label ? 1.0 : 0.0));
      double* row = g + c * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += dz * a[j];
      g[classes * p + c] += dz;
    }
  }
  return lse - picked;
}

std::uint32_t LogisticObjective::predict(const ParamVector& x,
                                         std::span<const double> features) const {
  const std::size_t p = data().dim;
  const std::size_t classes = data().classes;
  std::uint32_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) {
    double acc = x[classes * p + c];
    for (std::size_t j = 0; j < p; ++j) acc += x[c * p + j] * features[j];
    if (acc > best_score) {
      best_score = acc;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

MlpObjective::MlpObjective(std::shared_ptr<const LabeledDataset> data,
                           std::vector<std::size_t> indices, std::size_t batch, double ridge,
                           std::size_t hidden, double noise_bound, double smoothness_estimate)
    : DatasetObjective(std::move(data), std::move(indices), batch, ridge, noise_bound),
      hidden_(hidden),
      smoothness_(smoothness_estimate) {
  if (hidden_ == 0) throw ConfigError("problem.hidden must be positive");
}

std::size_t MlpObjective::dimension() const {
  return parameter_count(data().dim, hidden_, data().classes);
}

void MlpObjective::forward(const ParamVector& x, std::span<const double> a,
                           std::vector<double>& hidden, std::vector<double>& logits) const {
  const std::size_t p = data().dim;
  const std::size_t h = hidden_;
  const std::size_t classes = data().classes;
  const double* w1 = x.data();
  const double* b1 = w1 + h * p;
  const double* w2 = b1 + h;
  const double* b2 = w2 + classes * h;
  hidden.assign(h, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    double acc = b1[u];
    for (std::size_t j = 0; j < p; ++j) acc += w1[u * p + j] * a[j];
    hidden[u] = std::tanh(acc);
  }
  logits.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    double acc = b2[c];
    for (std::size_t u = 0; u < h; ++u) acc += w2[c * h + u] * hidden[u];
    logits[c] = acc;
  }
}

double MlpObjective::sample_loss(const ParamVector& x, std::size_t sample, double weight,
                                 ParamVector* grad) const {
  const auto& ds = data();
  const std::size_t p = ds.dim;
  const std::size_t h = hidden_;
  const std::size_t classes = ds.classes;
  const auto a = ds.feature(sample);
  const std::uint32_t label = ds.labels[sample];

  std::vector<double> act;
  std::vector<double> z;
  forward(x, a, act, z);
  const double picked = z[label];
  const double lse = softmax_inplace(z);

  if (grad != nullptr) {
    const double* w2 = x.data() + h * p + h;
    double* g_w1 = grad->data();
    double* g_b1 = g_w1 + h * p;
    double* g_w2 = g_b1 + h;
    double* g_b2 = g_w2 + classes * h;
    std::vector<double> d_hidden(h, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      const double dz = weight * (z[c] - (c == label ? 1.0 : 0.0));
      g_b2[c] += dz;
      for (std::size_t u = 0; u < h; ++u) {
        g_w2[c * h + u] += dz * act[u];
        d_hidden[u] += w2[c * h + u] * dz;
      }
    }
    for (std::size_t u = 0; u < h; ++u) {
      const double d_pre = d_hidden[u] * (1.0 - act[u] * act[u]);
      g_b1[u] += d_pre;
      for (std::size_t j = 0; j < p; ++j) g_w1[u * p + j] += d_pre * a[j];
    }
  }
  return lse - picked;
}

std::uint32_t MlpObjective::predict(const ParamVector& x, std::span<const double> features) const {
  std::vector<double> act;
  std::vector<double> z;
  forward(x, features, act, z);
  return static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

ParamVector MlpObjective::initial_point(std::size_t features, std::size_t hidden,
                                        std::size_t classes, RngStream& rng) {
  ParamVector x(parameter_count(features, hidden, classes));
  const double s1 = 1.0 / std::sqrt(static_cast<double>(features));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::size_t pos = 0;
  for (std::size_t i = 0; i < hidden * features; ++i) x[pos++] = rng.uniform(-s1, s1);
  pos += hidden;
  for (std::size_t i = 0; i < classes * hidden; ++i) x[pos++] = rng.uniform(-s2, s2);
  return x;
}

double delta_inf(std::span<const ObjectivePtr> workers, double global_infimum) {
  if (workers.empty()) throw ConfigError("delta_inf: no workers");
  double mean_inf = 0.0;
  for (const auto& w : workers) mean_inf += w->lower_bound();
  mean_inf /= static_cast<double>(workers.size());
  const double gap = global_infimum - mean_inf;
  const double slack = 1e-12 * std::max({1.0, std::abs(global_infimum), std::abs(mean_inf)});
  if (gap < -slack) {
    throw ConfigError("delta_inf: f_inf=" + std::to_string(global_infimum) +
                      " is below the mean worker infimum " + std::to_string(mean_inf));
  }
  return std::max(gap, 0.0);
}

double estimate_noise_bound(const Objective& objective, std::span<const ParamVector> probes,
                            std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ConfigError("noise estimate needs at least one sample");
  double worst = 0.0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto exact = objective.full_gradient(probes[p]);
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      auto g = objective.stochastic_gradient(probes[p], RngStream(seed, StreamId{p, 0, s, Purpose::kProbe}));
      g -= exact;
      acc += l2_norm_sq(g);
    }
    worst = std::max(worst, acc / static_cast<double>(samples));
  }
  return worst;
}

double estimate_smoothness(const Objective& objective, const ParamVector& center, double radius,
                           std::size_t pairs, std::uint64_t seed) {
  const std::size_t d = center.size();
  double worst = 0.0;
  for (std::size_t t = 0; t < pairs; ++t) {
    RngStream rng(seed, StreamId{0, 0, t, Purpose::kProbe});
    const auto x = center + gaussian_vector(rng, d, radius);
    const auto y = center + gaussian_vector(rng, d, radius);
    const double dist = l2_norm(x - y);
    if (dist == 0.0) continue;
    worst = std::max(worst, l2_norm(objective.full_gradient(x) - objective.full_gradient(y)) / dist);
  }
  return worst;
}

}  // namespace fedbound
