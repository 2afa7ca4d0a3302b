#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "fedbound/errors.hpp"
#include "fedbound/federated.hpp"
#include "test_util.hpp"

using namespace fedbound;

namespace {

EngineConfig quadratic_engine(std::size_t n, std::size_t d, double sigma2, double radius,
                              std::size_t rounds) {
  QuadraticFamilySpec spec;
  spec.workers = n;
  spec.dim = d;
  spec.sigma2 = sigma2;
  spec.radius = radius;
  const auto fam = make_quadratic_family(spec);
  EngineConfig cfg;
  cfg.workers = fam.objectives();
  cfg.global = std::make_shared<AverageObjective>(cfg.workers, fam.infimum);
  cfg.f_inf = fam.infimum;
  cfg.x0 = fam.initial_point;
  cfg.rounds = rounds;
  cfg.schedule = FixedSchedule{0.5 * std::sqrt(double(rounds)), rounds};
  cfg.seed = 3;
  return cfg;
}

std::shared_ptr<const QuadraticObjective> quad1d(double center) {
  Eigen::MatrixXd a(1, 1);
  a(0, 0) = 1.0;
  Eigen::VectorXd b(1);
  b(0) = center;
  return std::make_shared<QuadraticObjective>(a, b, 0.5 * center * center, 0.0);
}

std::string csv(const RunRecord& r) {
  std::ostringstream out;
  write_run_csv(out, r);
  return out.str();
}

}  // namespace

TEST_CASE("one worker, one step reproduces gradient descent") {
  auto cfg = quadratic_engine(1, 6, 0.0, 1.0, 50);
  const auto rec = run_full_precision(cfg);
  REQUIRE(rec.rows.size() == 51);
  ParamVector x = cfg.x0;
  for (std::size_t k = 0; k <= 50; ++k) {
    CHECK(rec.rows[k].loss_gap == cfg.global->value(x) - cfg.f_inf);
    CHECK(rec.rows[k].grad_norm_sq == l2_norm_sq(cfg.global->full_gradient(x)));
    if (k < 50) {
      const double g = rec.rows[k].gamma;
      CHECK(g == doctest::Approx(0.5).epsilon(1e-15));
      ParamVector next = x;
      axpy(-g, cfg.workers[0]->full_gradient(x), next);
      x = next;
    }
  }
  CHECK(std::isnan(rec.rows.back().gamma));
}

TEST_CASE("symmetric workers stay at the fixed point") {
  EngineConfig cfg;
  cfg.workers = {quad1d(1.0), quad1d(-1.0)};
  cfg.global = std::make_shared<AverageObjective>(cfg.workers, 0.5);
  cfg.f_inf = 0.5;
  cfg.x0 = ParamVector{0.0};
  cfg.rounds = 20;
  cfg.schedule = FixedSchedule{0.5 * std::sqrt(20.0), 20};
  const auto rec = run_full_precision(cfg);
  for (const auto& row : rec.rows) {
    CHECK(row.grad_norm_sq == 0.0);
    CHECK(row.loss_gap == 0.0);
  }
}

TEST_CASE("error feedback with identity is full precision") {
  for (std::size_t T : {1, 4}) {
    auto cfg = quadratic_engine(5, 8, 0.2, 2.0, 100);
    cfg.local = GradientSteps{T};
    cfg.compressor = IdentityCompressor{};
    const auto fp = run_full_precision(cfg);
    const auto ef = run_error_feedback(cfg);
    CHECK(csv(fp) == csv(ef));
    for (const auto& row : ef.rows) CHECK(row.err_norm_sq == 0.0);

    cfg.compressor = TopKCompressor{8};
    CHECK(csv(run_error_feedback(cfg)) == csv(fp));
  }
  auto cfg = quadratic_engine(3, 5, 0.2, 1.0, 30);
  cfg.local = Proximal{};
  cfg.compressor = IdentityCompressor{};
  CHECK(csv(run_full_precision(cfg)) == csv(run_error_feedback(cfg)));
}

TEST_CASE("virtual iterate follows the uncompressed update") {
  auto cfg = quadratic_engine(6, 20, 0.3, 2.0, 50);
  cfg.local = GradientSteps{3};
  cfg.compressor = TopKCompressor{2};
  cfg.track_gradients = true;
  FederatedEngine engine(cfg, Algorithm::kErrorFeedback);
  CHECK(virtual_iterate(engine.server(), engine.workers()) == engine.server().x);
  for (int k = 0; k < 50; ++k) {
    const auto z = virtual_iterate(engine.server(), engine.workers());
    engine.step();
    ParamVector expected = z;
    axpy(-engine.last_inner_step() / 6.0, engine.last_gradient_sum(), expected);
    CHECK(fedbound::test::rel_err(virtual_iterate(engine.server(), engine.workers()), expected) <= 1e-10);
  }
  CHECK(engine.last_inner_step() == doctest::Approx(engine.last_round_step() / 3.0));
}

TEST_CASE("zero compressor: x stays, z moves") {
  auto cfg = quadratic_engine(1, 4, 0.0, 1.0, 10);
  cfg.compressor = ZeroCompressor{};
  cfg.track_gradients = true;
  FederatedEngine engine(cfg, Algorithm::kErrorFeedback);
  for (int k = 0; k < 10; ++k) {
    const auto z = virtual_iterate(engine.server(), engine.workers());
    engine.step();
    CHECK(engine.server().x == cfg.x0);
    ParamVector expected = z;
    axpy(-engine.last_inner_step(), engine.last_gradient_sum(), expected);
    CHECK(fedbound::test::rel_err(virtual_iterate(engine.server(), engine.workers()), expected) <= 1e-12);
  }
}

TEST_CASE("descent for steps below 1/L") {
  auto cfg = quadratic_engine(1, 10, 0.0, 1.0, 200);
  cfg.schedule = FixedSchedule{0.9 * std::sqrt(200.0), 200};
  const auto rec = run_full_precision(cfg);
  for (std::size_t k = 1; k < rec.rows.size(); ++k) {
    CHECK(rec.rows[k].loss_gap <= rec.rows[k - 1].loss_gap + 1e-15);
  }
}

TEST_CASE("records are independent of the thread count") {
  auto cfg = quadratic_engine(10, 10, 0.5, 2.0, 60);
  cfg.local = GradientSteps{4};
  cfg.compressor = TopKCompressor{3};
  std::string base_fp, base_ef;
  for (std::size_t threads : {1, 4, 8}) {
    cfg.threads = threads;
    const auto fp = csv(run_full_precision(cfg));
    const auto ef = csv(run_error_feedback(cfg));
    if (threads == 1) {
      base_fp = fp;
      base_ef = ef;
    }
    CHECK(fp == base_fp);
    CHECK(ef == base_ef);
  }
  CHECK(base_fp != base_ef);
}

TEST_CASE("divergence ends the run with a partial record") {
  auto cfg = quadratic_engine(2, 4, 0.0, 1.0, 500);
  cfg.schedule = FixedSchedule{50.0 * std::sqrt(500.0), 500};
  cfg.cap_policy = CapPolicy::kReport;
  const auto rec = run_full_precision(cfg);
  CHECK(rec.diverged);
  CHECK_FALSE(rec.message.empty());
  CHECK(rec.rows.size() < 501);
  CHECK_FALSE(rec.rows.empty());
}

TEST_CASE("step caps") {
  auto cfg = quadratic_engine(2, 4, 0.0, 1.0, 10);
  cfg.schedule = FixedSchedule{2.0 * std::sqrt(10.0), 10};
  cfg.step_cap = 0.5;
  const auto clamped = run_full_precision(cfg);
  CHECK(clamped.cap_exceeded == 10);
  CHECK(clamped.rows[0].gamma == 0.5);
  cfg.cap_policy = CapPolicy::kReport;
  CHECK_FALSE(run_full_precision(cfg).diverged);
  CHECK(run_full_precision(cfg).rows[0].gamma == doctest::Approx(2.0));

  auto scaled = quadratic_engine(2, 4, 0.0, 1.0, 10);
  scaled.local = GradientSteps{5};
  scaled.rescale_by_T = false;
  scaled.schedule = FixedSchedule{0.1 * std::sqrt(10.0), 10};
  FederatedEngine engine(scaled, Algorithm::kFullPrecision);
  engine.step();
  CHECK(engine.last_round_step() == doctest::Approx(0.5));
  CHECK(engine.last_inner_step() == doctest::Approx(0.1));
}

TEST_CASE("engine validation") {
  auto cfg = quadratic_engine(2, 4, 0.0, 1.0, 10);
  CHECK_THROWS_AS(FederatedEngine(cfg, Algorithm::kErrorFeedback), ConfigError);
  cfg.compressor = TopKCompressor{5};
  CHECK_THROWS_AS(FederatedEngine(cfg, Algorithm::kErrorFeedback), ConfigError);
  cfg.x0 = ParamVector(3);
  CHECK_THROWS_AS(FederatedEngine(cfg, Algorithm::kFullPrecision), ConfigError);
  auto past = quadratic_engine(1, 2, 0.0, 1.0, 2);
  FederatedEngine engine(past, Algorithm::kFullPrecision);
  engine.step();
  engine.step();
  CHECK_THROWS_AS(engine.step(), RangeError);
}

TEST_CASE("aggregate and csv round trip") {
  RunRecord a, b;
  a.seed = 1;
  b.seed = 2;
  a.rows = {{0, 0.1, 1.0, 2.0, 0.0, NAN}, {1, NAN, 3.0, 4.0, 0.5, NAN}};
  b.rows = {{0, 0.1, 3.0, 6.0, 0.0, NAN}};
  const auto agg = aggregate_records({a, b});
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].loss_gap_mean == 2.0);
  CHECK(agg[0].loss_gap_std == doctest::Approx(std::sqrt(2.0)));
  CHECK(agg[0].grad_norm_sq_mean == 4.0);
  CHECK(agg[0].seeds == 2);
  CHECK(agg[1].seeds == 1);
  CHECK(agg[1].loss_gap_std == 0.0);
  CHECK(std::isnan(agg[0].test_acc_mean));

  std::istringstream in(csv(a));
  const auto back = read_run_csv(in);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].loss_gap == 3.0);
  CHECK(std::isnan(back.rows[1].gamma));
  CHECK(csv(back) == csv(a));

  std::istringstream bad("round,gamma\n1,2\n");
  CHECK_THROWS_AS(read_run_csv(bad), IngestionError);
  std::istringstream junk("round,gamma,loss_gap,grad_norm_sq,err_norm_sq,test_acc\n0,x,1,1,1,\n");
  CHECK_THROWS_AS(read_run_csv(junk), IngestionError);
}

TEST_CASE("format_real") {
  CHECK(format_real(NAN).empty());
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_real(1.0 / 3.0)) == 1.0 / 3.0);
}
