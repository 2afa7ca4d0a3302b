#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedbound/config.hpp"
#include "fedbound/datasets.hpp"
#include "fedbound/federated.hpp"
#include "fedbound/problems.hpp"
#include "fedbound/theory.hpp"

namespace fedbound {

/// Everything the engine and the constants calculator need, built from a
/// config without simulating.
struct BuiltProblem {
  std::vector<ObjectivePtr> workers;
  ObjectivePtr global;
  ParamVector x0;
  /// Analytic for quadratics; the best value of a long full-batch gradient
  /// descent run for dataset problems.
  double f_inf = 0.0;
  double smoothness = 0.0;
  double sigma2 = 0.0;
  double delta_inf = 0.0;
  std::function<double(const ParamVector&)> accuracy;
  std::shared_ptr<const LabeledDataset> train;
  std::shared_ptr<const LabeledDataset> test;
  std::optional<Partition> partition;
  std::vector<std::string> notes;
};

BuiltProblem build_problem(const ExperimentConfig& cfg);

/// Loads or synthesizes the training and test sets of a dataset problem.
std::pair<LabeledDataset, LabeledDataset> build_datasets(const ExperimentConfig& cfg);
Partition build_partition(const ExperimentConfig& cfg, const LabeledDataset& train);

ConstantsSource constants_source_for(const ExperimentConfig& cfg);
std::optional<CompressorSpec> compressor_for(const ExperimentConfig& cfg, std::size_t d);
ScheduleSpec schedule_for(const ExperimentConfig& cfg);
LocalOperatorSpec local_for(const ExperimentConfig& cfg);
/// Factor between schedule values and the recursion's steps: T when local
/// gradient steps are not rescaled, 1 otherwise.
double step_scale_for(const ExperimentConfig& cfg);

PropositionDetail constants_for(const ExperimentConfig& cfg, const BuiltProblem& problem);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunRecord> records;
  std::vector<AggregateRow> aggregate;
  PropositionDetail constants;
  Verdict verdict;
  nlohmann::ordered_json summary;

  bool any_diverged() const;
};

struct RunOptions {
  /// Overrides run.threads when set.
  std::optional<std::size_t> threads;
  /// Overrides run.output; empty string disables file output.
  std::optional<std::string> output;
  /// Replaces run.seeds.
  std::optional<std::vector<std::uint64_t>> seeds;
};

/// Runs every seed (in parallel), aggregates, and attaches the verdict.
/// With an output directory it writes config.cfg, seed_<s>.csv,
/// aggregate.csv and summary.json there.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

nlohmann::ordered_json verdict_json(const Verdict& v);
nlohmann::ordered_json constants_json(const PropositionDetail& d);

/// Named experiment bundles: the figure settings at desk scale, and the
/// quadratic rate sweep.
std::vector<std::string> preset_names();
/// (label, config) pairs; throws ConfigError for an unknown name.
std::vector<std::pair<std::string, ExperimentConfig>> preset(const std::string& name);

/// Per-worker class histograms as CSV: worker,class_0,...,class_{C-1},total.
std::string partition_report_csv(const ExperimentConfig& cfg);
nlohmann::ordered_json partition_report_json(const ExperimentConfig& cfg);

}  // namespace fedbound
