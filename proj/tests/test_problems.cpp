#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "fedbound/errors.hpp"
#include "fedbound/problems.hpp"
#include "test_util.hpp"

using namespace fedbound;
using fedbound::test::fd_gradient;
using fedbound::test::random_point;
using fedbound::test::rel_err;

namespace {

std::shared_ptr<const QuadraticObjective> quad1d(double center, double sigma2 = 0.0) {
  Eigen::MatrixXd a(1, 1);
  a(0, 0) = 1.0;
  Eigen::VectorXd b(1);
  b(0) = center;
  return std::make_shared<QuadraticObjective>(a, b, 0.5 * center * center, sigma2);
}

std::shared_ptr<const LabeledDataset> small_blobs(std::size_t classes, std::size_t per_class,
                                                  std::size_t d) {
  RngStream rng(17, {0, 0, 0, Purpose::kDataset});
  return std::make_shared<LabeledDataset>(synth_blobs(rng, classes, per_class, d, 1.0));
}

std::vector<std::size_t> all_indices(const LabeledDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TEST_CASE("quadratic gradient examples") {
  const QuadraticObjective f(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), 0.0, 0.0);
  CHECK((f.full_gradient(ParamVector{2, -1}) == ParamVector{2, -1}));
  CHECK((f.value(ParamVector{2, -1}) == 2.5));
  CHECK(f.smoothness() == 1.0);
  CHECK(f.lower_bound() == 0.0);

  QuadraticFamilySpec spec;
  spec.workers = 1;
  spec.dim = 6;
  const auto fam = make_quadratic_family(spec);
  const auto& w = *fam.workers[0];
  Eigen::VectorXd xs = w.hessian().ldlt().solve(w.linear());
  ParamVector x(std::vector<double>(xs.data(), xs.data() + xs.size()));
  CHECK(l2_norm(w.full_gradient(x)) <= 1e-12);
}

TEST_CASE("quadratic validation") {
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(QuadraticObjective(asym, Eigen::VectorXd::Zero(2), 0, 0), ConfigError);
  Eigen::MatrixXd indef(2, 2);
  indef << 1, 0, 0, -1;
  CHECK_THROWS_AS(QuadraticObjective(indef, Eigen::VectorXd::Zero(2), 0, 0), ConfigError);
  Eigen::MatrixXd singular(2, 2);
  singular << 1, 0, 0, 0;
  Eigen::VectorXd outside(2);
  outside << 0, 1;
  CHECK_THROWS_AS(QuadraticObjective(singular, outside, 0, 0), ConfigError);
  CHECK_THROWS_AS(QuadraticObjective(singular, Eigen::VectorXd::Zero(2), 0, -1.0), ConfigError);
  const QuadraticObjective f(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), 0, 0);
  CHECK_THROWS_AS((f.value(ParamVector{1, 2, 3})), ConfigError);
  CHECK_THROWS_AS(f.full_gradient(ParamVector{1}), ConfigError);
}

TEST_CASE("quadratic infimum uses the pseudo-inverse") {
  Eigen::MatrixXd a(2, 2);
  a << 2, 0, 0, 0;
  Eigen::VectorXd b(2);
  b << 4, 0;
  const QuadraticObjective f(a, b, 7.0, 0.0);
  CHECK(f.lower_bound() == doctest::Approx(7.0 - 0.5 * 16.0 / 2.0).epsilon(1e-14));
  CHECK((f.value(ParamVector{2, 123}) == doctest::Approx(3.0).epsilon(1e-14)));
}

TEST_CASE("stochastic gradient examples") {
  QuadraticFamilySpec spec;
  spec.workers = 1;
  spec.dim = 5;
  const auto fam = make_quadratic_family(spec);
  const ParamVector x{1, -2, 0.5, 3, 0};
  const RngStream rng(4, {0, 0, 0, Purpose::kGradientNoise});
  CHECK(fam.workers[0]->stochastic_gradient(x, rng) == fam.workers[0]->full_gradient(x));

  const QuadraticObjective noisy(fam.workers[0]->hessian(), fam.workers[0]->linear(), 0.0, 1.0);
  const int m = 100000;
  ParamVector mean(5);
  for (int i = 0; i < m; ++i) {
    mean += noisy.stochastic_gradient(x, RngStream(4, {0, std::uint64_t(i), 0, Purpose::kGradientNoise}));
  }
  mean *= 1.0 / m;
  const auto g = noisy.full_gradient(x);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(mean[j] - g[j]) <= 3.0 / std::sqrt(double(m)));
}

TEST_CASE("stochastic gradients depend on the stream only") {
  const auto f = quad1d(1.0, 0.4);
  const RngStream rng(1, {0, 0, 0, Purpose::kGradientNoise});
  const auto g1 = f->stochastic_gradient(ParamVector{0.0}, rng);
  const auto g2 = f->stochastic_gradient(ParamVector{0.0}, rng);
  CHECK(g1 == g2);
  const auto g3 = f->stochastic_gradient(ParamVector{1.0}, rng);
  CHECK(g3[0] - g1[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("delta_inf examples") {
  const auto f = quad1d(0.3);
  std::vector<ObjectivePtr> same{f, f, f};
  CHECK(delta_inf(same, 0.0) == 0.0);

  std::vector<ObjectivePtr> pair{quad1d(1.0), quad1d(-1.0)};
  const AverageObjective avg(pair, 0.5);
  CHECK(avg.value(ParamVector{0.0}) == 0.5);
  CHECK(delta_inf(pair, 0.5) == 0.5);

  std::vector<ObjectivePtr> single{quad1d(2.0)};
  CHECK(delta_inf(single, single[0]->lower_bound()) == 0.0);
  CHECK_THROWS_AS(delta_inf(pair, -0.1), ConfigError);
}

TEST_CASE("quadratic family closed forms") {
  QuadraticFamilySpec spec;
  spec.dim = 8;
  spec.workers = 6;
  spec.eig_min = 0.2;
  spec.eig_max = 3.0;
  spec.radius = 1.5;
  const auto fam = make_quadratic_family(spec);
  CHECK(fam.smoothness == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fam.workers.size() == 6);
  CHECK(l2_norm(fam.initial_point) == doctest::Approx(spec.init_radius).epsilon(1e-12));
  const AverageObjective avg(fam.objectives(), fam.infimum);
  CHECK(l2_norm(avg.full_gradient(fam.minimizer)) <= 1e-12);
  CHECK(avg.value(fam.minimizer) == doctest::Approx(fam.infimum).epsilon(1e-12));
  for (const auto& w : fam.workers) CHECK(std::abs(w->lower_bound()) <= 1e-12);

  RngStream rng(2, {});
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_point(rng, 8, 3.0);
    CHECK(avg.value(x) >= fam.infimum - 1e-12);
  }

  spec.radius = 0.0;
  const auto homo = make_quadratic_family(spec);
  CHECK(delta_inf(homo.objectives(), homo.infimum) == doctest::Approx(0.0));
  CHECK(l2_norm(homo.minimizer) <= 1e-12);
}

TEST_CASE("quadratic family is deterministic") {
  QuadraticFamilySpec spec;
  const auto a = make_quadratic_family(spec);
  const auto b = make_quadratic_family(spec);
  CHECK(a.minimizer == b.minimizer);
  CHECK(a.initial_point == b.initial_point);
  CHECK(a.workers[3]->hessian() == b.workers[3]->hessian());
}

TEST_CASE("analytic gradients match finite differences") {
  const auto data = small_blobs(3, 10, 4);
  const auto idx = all_indices(*data);
  const LogisticObjective logistic(data, idx, 64, 0.01, 0.0);
  const MlpObjective mlp(data, idx, 64, 0.01, 5, 0.0, 1.0);
  CHECK(logistic.dimension() == 15);
  CHECK(mlp.dimension() == 43);
  RngStream rng(3, {});
  for (int i = 0; i < 20; ++i) {
    const auto x = random_point(rng, logistic.dimension(), 1.0);
    CHECK(rel_err(logistic.full_gradient(x), fd_gradient(logistic, x)) <= 1e-5);
    const auto y = random_point(rng, mlp.dimension(), 1.0);
    CHECK(rel_err(mlp.full_gradient(y), fd_gradient(mlp, y)) <= 1e-5);
  }
  QuadraticFamilySpec spec;
  spec.workers = 1;
  const auto fam = make_quadratic_family(spec);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_point(rng, 10, 2.0);
    CHECK(rel_err(fam.workers[0]->full_gradient(x), fd_gradient(*fam.workers[0], x)) <= 1e-5);
  }
}

TEST_CASE("minibatch covering the shard is the full gradient") {
  const auto data = small_blobs(3, 10, 4);
  const LogisticObjective f(data, all_indices(*data), 30, 0.0, 0.0);
  const MlpObjective g(data, all_indices(*data), 100, 0.0, 4, 0.0, 1.0);
  RngStream rng(5, {});
  const auto x = random_point(rng, f.dimension(), 1.0);
  const auto y = random_point(rng, g.dimension(), 1.0);
  const RngStream s(1, {0, 0, 0, Purpose::kMinibatch});
  CHECK(rel_err(f.stochastic_gradient(x, s), f.full_gradient(x)) <= 1e-15);
  CHECK(rel_err(g.stochastic_gradient(y, s), g.full_gradient(y)) <= 1e-15);
}

TEST_CASE("smoothness certificate") {
  QuadraticFamilySpec spec;
  spec.workers = 2;
  const auto fam = make_quadratic_family(spec);
  const auto data = small_blobs(4, 15, 5);
  const LogisticObjective logistic(data, all_indices(*data), 8, 0.05, 0.0);
  RngStream rng(6, {});
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_point(rng, 10, 3.0);
    const auto y = random_point(rng, 10, 3.0);
    const auto& w = *fam.workers[i % 2];
    CHECK(l2_norm(w.full_gradient(x) - w.full_gradient(y)) <= w.smoothness() * l2_norm(x - y) + 1e-9);
    const auto u = random_point(rng, logistic.dimension(), 2.0);
    const auto v = random_point(rng, logistic.dimension(), 2.0);
    CHECK(l2_norm(logistic.full_gradient(u) - logistic.full_gradient(v)) <=
          logistic.smoothness() * l2_norm(u - v) + 1e-9);
  }
}

TEST_CASE("variance certificate") {
  QuadraticFamilySpec spec;
  spec.workers = 1;
  spec.sigma2 = 0.5;
  const auto fam = make_quadratic_family(spec);
  const std::size_t samples = 20000;
  std::vector<ParamVector> probes{fam.initial_point, ParamVector(10)};
  const double est = estimate_noise_bound(*fam.workers[0], probes, samples, 3);
  CHECK(est <= 0.5 * (1.0 + 5.0 / std::sqrt(double(samples))));
  CHECK(est >= 0.5 * (1.0 - 5.0 / std::sqrt(double(samples))));

  const auto data = small_blobs(3, 20, 4);
  RngStream rng(8, {});
  std::vector<ParamVector> points{random_point(rng, 15, 0.5)};
  const double measured = estimate_noise_bound(
      LogisticObjective(data, all_indices(*data), 8, 0.0, 0.0), points, 4000, 1);
  const LogisticObjective f(data, all_indices(*data), 8, 0.0, measured);
  const double again = estimate_noise_bound(f, points, 4000, 2);
  CHECK(again <= f.noise_bound() * (1.0 + 5.0 / std::sqrt(4000.0)));
}

TEST_CASE("lower-bound certificate") {
  QuadraticFamilySpec spec;
  spec.workers = 3;
  const auto fam = make_quadratic_family(spec);
  const auto data = small_blobs(3, 10, 4);
  const LogisticObjective logistic(data, all_indices(*data), 8, 0.0, 0.0);
  const MlpObjective mlp(data, all_indices(*data), 8, 0.0, 4, 0.0, 1.0);
  RngStream rng(9, {});
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_point(rng, 10, 4.0);
    for (const auto& w : fam.workers) CHECK(w->value(x) >= w->lower_bound());
    CHECK(logistic.value(random_point(rng, logistic.dimension(), 3.0)) >= logistic.lower_bound());
    CHECK(mlp.value(random_point(rng, mlp.dimension(), 3.0)) >= mlp.lower_bound());
  }
}

TEST_CASE("estimate_smoothness is below the quadratic constant") {
  QuadraticFamilySpec spec;
  spec.workers = 1;
  const auto fam = make_quadratic_family(spec);
  const double est = estimate_smoothness(*fam.workers[0], fam.initial_point, 1.0, 200, 4);
  CHECK(est <= fam.smoothness + 1e-12);
  CHECK(est >= spec.eig_min - 1e-12);
}

TEST_CASE("accuracy and prediction") {
  RngStream rng(1, {0, 0, 0, Purpose::kDataset});
  auto data = std::make_shared<LabeledDataset>(synth_blobs(rng, 2, 10, 2, 0.0));
  const LogisticObjective f(data, all_indices(*data), 8, 0.0, 0.0);
  ParamVector x(f.dimension());
  const auto m0 = data->feature(0);
  const auto m1 = data->feature(10);
  for (std::size_t j = 0; j < 2; ++j) {
    x[j] = m0[j];
    x[2 + j] = m1[j];
  }
  x[4] = -0.5 * (m0[0] * m0[0] + m0[1] * m0[1]);
  x[5] = -0.5 * (m1[0] * m1[0] + m1[1] * m1[1]);
  CHECK(f.accuracy(x, *data) == 1.0);
  CHECK(f.predict(x, m1) == 1);
}
