// fedbound command line: simulate, compute bounds, verify, fuzz the theory.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fedbound/config.hpp"
#include "fedbound/errors.hpp"
#include "fedbound/experiment.hpp"
#include "fedbound/theory.hpp"

namespace {

using namespace fedbound;
using json = nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;
constexpr int kViolation = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::string format = "csv";
  bool quiet = false;
};

RunOptions run_options(const Globals& g) {
  RunOptions o;
  o.threads = g.threads;
  o.output = g.out;
  if (g.seed) o.seeds = std::vector<std::uint64_t>{*g.seed};
  return o;
}

void print_key_values(const json& j, const std::string& prefix = "") {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      print_key_values(*it, key);
    } else if (it->is_string()) {
      std::cout << key << ',' << it->get<std::string>() << '\n';
    } else {
      std::cout << key << ',' << it->dump() << '\n';
    }
  }
}

int cmd_run(const std::string& path, const Globals& g, bool verify) {
  const auto cfg = load_config(path);
  const auto result = run_experiment(cfg, run_options(g));
  if (g.format == "json") {
    std::cout << (verify ? verdict_json(result.verdict) : result.summary).dump(2) << '\n';
  } else if (verify) {
    print_key_values(verdict_json(result.verdict));
  } else {
    write_aggregate_csv(std::cout, result.aggregate);
  }
  if (verify && result.verdict.violated) return kViolation;
  if (result.any_diverged()) return kDiverged;
  return kOk;
}

int cmd_bounds(const std::string& path, const Globals& g) {
  const auto cfg = load_config(path);
  const auto problem = build_problem(cfg);
  const auto detail = constants_for(cfg, problem);
  json j;
  j["problem"] = {{"smoothness", problem.smoothness},
                  {"sigma2", problem.sigma2},
                  {"delta_inf", problem.delta_inf},
                  {"f_inf", problem.f_inf},
                  {"V0", problem.global->value(problem.x0) - problem.f_inf}};
  j["constants"] = constants_json(detail);
  const std::size_t K = cfg.run.rounds;
  const double V0 = problem.global->value(problem.x0) - problem.f_inf;
  const auto params = theorem_params_for(schedule_for(cfg), step_scale_for(cfg),
                                         cfg.theory.R.value_or(std::max(V0, 1e-12)));
  json t;
  t["theorem"] = std::string(theorem_name(params));
  t["rounds"] = K;
  try {
    t["bound"] = theorem_bound(V0, detail.constants, params, K);
  } catch (const ConfigError& e) {
    t["bound"] = nullptr;
    t["note"] = e.what();
  }
  const auto steps = theorem_steps(params, std::max<std::size_t>(K, 1));
  t["first_step"] = steps.front();
  t["respects_cap"] = steps.front() <= detail.constants.step_cap;
  j["theorem"] = t;
  if (g.format == "json") {
    std::cout << j.dump(2) << '\n';
  } else {
    print_key_values(j);
  }
  return kOk;
}

int cmd_oracle(std::size_t trials, const Globals& g) {
  const std::uint64_t seed = g.seed.value_or(1);
  json j = json::array();
  std::size_t violations = 0;
  for (auto kind : {ScheduleKind::kFixed, ScheduleKind::kDiminishing, ScheduleKind::kStepDecay}) {
    const auto r = theorem_soundness_fuzz(kind, trials, seed);
    violations += r.violations;
    j.push_back({{"check", r.theorem},
                 {"instances", r.uniform_trials + r.adversarial_trials},
                 {"violations", r.violations},
                 {"worst_ratio", r.worst_ratio}});
  }
  const auto l1 = lemma1_sweep(trials * 10, seed);
  const auto l2 = lemma2_sweep(trials * 10, seed);
  violations += l1.violations + l2.violations;
  j.push_back({{"check", "lemma1"}, {"instances", l1.points}, {"violations", l1.violations},
               {"worst_ratio", l1.worst_ratio}});
  j.push_back({{"check", "lemma2"}, {"instances", l2.points}, {"violations", l2.violations},
               {"worst_ratio", l2.worst_ratio}});
  if (g.format == "json") {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "check,instances,violations,worst_ratio\n";
    for (const auto& row : j) {
      std::cout << row["check"].get<std::string>() << ',' << row["instances"] << ','
                << row["violations"] << ',' << format_real(row["worst_ratio"].get<double>())
                << '\n';
    }
  }
  return violations == 0 ? kOk : kViolation;
}

int cmd_partition_report(const std::string& path, const Globals& g) {
  const auto cfg = load_config(path);
  if (g.format == "json") {
    std::cout << partition_report_json(cfg).dump(2) << '\n';
  } else {
    std::cout << partition_report_csv(cfg);
  }
  return kOk;
}

int cmd_preset(const std::string& name, bool write_only, const Globals& g) {
  const auto configs = preset(name);
  const std::filesystem::path root = g.out.value_or("runs/" + name);
  int code = kOk;
  for (const auto& [label, cfg] : configs) {
    const auto dir = root / label;
    std::filesystem::create_directories(dir);
    if (write_only) {
      std::ofstream(dir / "config.cfg") << serialize_config(cfg);
      std::cout << (dir / "config.cfg").string() << '\n';
      continue;
    }
    Globals local = g;
    local.out = dir.string();
    auto options = run_options(local);
    const auto result = run_experiment(cfg, options);
    const auto& last = result.aggregate.back();
    std::cout << label << ',' << format_real(last.loss_gap_mean) << ','
              << format_real(last.test_acc_mean) << '\n';
    if (result.any_diverged()) code = kDiverged;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated optimization simulator and convergence-bound checker"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Run only this seed (oracle: fuzz seed)");
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* threads_opt =
      app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_flag("-q,--quiet", g.quiet, "Only log warnings and errors");
  app.fallthrough();

  std::string config;
  auto* run = app.add_subcommand("run", "Simulate every seed and write metrics");
  run->add_option("config", config, "Config file")->required();
  auto* bounds = app.add_subcommand("bounds", "Print proposition constants and the theorem bound");
  bounds->add_option("config", config, "Config file")->required();
  auto* verify = app.add_subcommand("verify", "Simulate and check the theorem bound");
  verify->add_option("config", config, "Config file")->required();
  std::size_t trials = 1000;
  auto* oracle = app.add_subcommand("oracle", "Fuzz the theorems against the recursion oracle");
  oracle->add_option("--trials", trials, "Instances per schedule kind")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("partition-report", "Per-worker class histograms");
  report->add_option("config", config, "Config file")->required();
  std::string preset_name;
  bool write_only = false;
  auto* pre = app.add_subcommand("preset", "Run or write a named experiment bundle");
  pre->add_option("name", preset_name, "Preset name")
      ->required()
      ->check(CLI::IsMember(fedbound::preset_names()));
  pre->add_flag("--write-only", write_only, "Write the configs without running them");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = out;
  if (*threads_opt) g.threads = threads;
  spdlog::set_default_logger(spdlog::stderr_color_mt("fedbound"));
  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*run) return cmd_run(config, g, false);
    if (*verify) return cmd_run(config, g, true);
    if (*bounds) return cmd_bounds(config, g);
    if (*oracle) return cmd_oracle(trials, g);
    if (*report) return cmd_partition_report(config, g);
    if (*pre) return cmd_preset(preset_name, write_only, g);
  } catch (const ConfigError& e) {
    for (const auto& issue : e.issues()) std::cerr << "config error: " << issue << '\n';
    return kConfigError;
  } catch (const IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDiverged;
  } catch (const RangeError& e) {
    std::cerr << "range error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
