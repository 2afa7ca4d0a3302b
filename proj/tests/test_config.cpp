#include <doctest.h>

#include <string>

#include "fedbound/config.hpp"
#include "fedbound/errors.hpp"
#include "fedbound/experiment.hpp"

using namespace fedbound;

namespace {

std::vector<std::string> issues_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& i : issues) {
    if (i.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("parse a sectioned config") {
  const auto cfg = parse_config(R"(
# comment
[problem]
kind = quadratic
dim = 6   # trailing comment
sigma2 = 0.25
[run]
seeds = 7, 8
rounds = 12
[schedule]
kind = diminishing
c = 0.8
nu = 0.75
)");
  CHECK(cfg.problem.dim == 6);
  CHECK(cfg.problem.sigma2 == 0.25);
  CHECK(cfg.run.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(cfg.run.rounds == 12);
  CHECK(cfg.schedule.kind == "diminishing");
  CHECK(cfg.schedule.nu == 0.75);
  CHECK(cfg.local.T == 1);
}

TEST_CASE("dotted keys without sections") {
  const auto cfg = parse_config("run.workers = 4\nlocal.kind = prox\nlocal.inner_iters = 20\n");
  CHECK(cfg.run.workers == 4);
  CHECK(cfg.local.kind == "prox");
  CHECK(cfg.local.inner_iters == 20);
}

TEST_CASE("unknown keys and bad values are all reported") {
  const auto issues = issues_of("run.workerz = 3\nschedule.c = abc\nlocal.T = -1\nrun.rounds = 5\nrun.rounds = 6\n");
  CHECK(issues.size() >= 4);
  CHECK(mentions(issues, "run.workerz"));
  CHECK(mentions(issues, "schedule.c"));
  CHECK(mentions(issues, "local.T"));
  CHECK(mentions(issues, "run.rounds"));
}

TEST_CASE("cross-field consistency") {
  CHECK(mentions(issues_of("dataset.kind = blobs\n"), "dataset"));
  CHECK(mentions(issues_of("partition.mode = iid\n"), "partition"));
  CHECK(mentions(issues_of("compressor.kind = topk\ncompressor.k = 2\n"), "compressor"));
  CHECK(mentions(issues_of("run.algorithm = error_feedback\n"), "compressor"));
  CHECK(mentions(issues_of("schedule.kind = diminishing\nschedule.nu = 1.5\n"), "nu"));
  CHECK(mentions(issues_of("problem.kind = logistic\nrun.workers = 4\npartition.workers = 5\n"),
                 "workers"));
  CHECK(mentions(issues_of("problem.kind = cnn\n"), "problem.kind"));
  CHECK(mentions(issues_of("no equals sign\n"), "line"));
  CHECK_NOTHROW(parse_config("problem.kind = logistic\npartition.workers = 4\npartition.mode = noniid2\n"
                             "dataset.classes = 4\n"));
}

TEST_CASE("config round trip") {
  std::vector<ExperimentConfig> configs{ExperimentConfig{}};
  for (const auto& name : preset_names()) {
    for (const auto& [label, cfg] : preset(name)) configs.push_back(cfg);
  }
  ExperimentConfig odd;
  odd.problem.kind = "mlp";
  odd.problem.sigma2 = 0.1 + 0.2;
  odd.schedule.c = 1.0 / 3.0;
  odd.theory.R = 2.5;
  odd.theory.L = 1e-7;
  odd.run.seeds = {18446744073709551615ULL};
  odd.run.output = "out dir/x";
  odd.partition_mode = PartitionMode::kNonIid1;
  odd.run.algorithm = "error_feedback";
  odd.compressor.kind = "scaled_sign";
  configs.push_back(odd);
  for (const auto& cfg : configs) {
    const auto text = serialize_config(cfg);
    const auto back = parse_config(text);
    CHECK(back == cfg);
    CHECK(serialize_config(back) == text);
  }
}

TEST_CASE("config files in the repository parse") {
  for (const char* name : {"quadratic_fedavg.cfg", "fedprox_unit.cfg"}) {
    CHECK_NOTHROW(load_config(std::string(FEDBOUND_CONFIG_DIR) + "/" + name));
  }
  CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), ConfigError);
}

TEST_CASE("config_keys lists every accepted key") {
  const auto keys = config_keys();
  for (const char* k : {"problem.kind", "dataset.images", "partition.mode", "partition.workers",
                        "run.seeds", "local.T", "compressor.fraction", "schedule.decay_base",
                        "theory.R"}) {
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  }
}
