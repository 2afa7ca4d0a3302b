#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fedbound/datasets.hpp"

namespace fedbound {

struct ProblemConfig {
  /// quadratic | logistic | mlp
  std::string kind = "quadratic";
  std::size_t dim = 10;
  double eig_min = 0.5;
  double eig_max = 1.0;
  double radius = 1.0;
  double sigma2 = 0.0;
  double init_radius = 5.0;
  std::uint64_t instance_seed = 1;
  std::size_t batch = 64;
  double ridge = 0.0;
  std::size_t hidden = 16;

  bool operator==(const ProblemConfig&) const = default;
};

struct DatasetConfig {
  /// blobs | idx
  std::string kind = "blobs";
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  /// Keep only the first `limit` IDX samples; 0 keeps all.
  std::size_t limit = 0;
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t test_per_class = 20;
  std::size_t dim = 10;
  double spread = 1.0;
  std::uint64_t seed = 1;

  bool operator==(const DatasetConfig&) const = default;
};

struct RunConfig {
  /// full_precision | error_feedback
  std::string algorithm = "full_precision";
  std::size_t workers = 10;
  std::size_t rounds = 400;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output;
  std::size_t threads = 1;

  bool operator==(const RunConfig&) const = default;
};

struct LocalConfig {
  /// gradient | prox
  std::string kind = "gradient";
  std::size_t T = 1;
  double inner_lr = 0.1;
  std::size_t inner_iters = 50;
  double tolerance = 0.0;
  bool rescale_by_T = true;
  /// clamp | report
  std::string cap_policy = "clamp";

  bool operator==(const LocalConfig&) const = default;
};

struct CompressorConfig {
  /// none | identity | topk | scaled_sign
  std::string kind = "none";
  std::size_t k = 0;
  double fraction = 0.0;

  bool operator==(const CompressorConfig&) const = default;
};

struct ScheduleConfig {
  /// fixed | diminishing | step_decay
  std::string kind = "fixed";
  double c = 2.0;
  double nu = 0.51;
  double gamma0 = 0.8;
  double decay_base = 2.0;
  std::size_t period = 50;

  bool operator==(const ScheduleConfig&) const = default;
};

struct TheoryConfig {
  /// Step-decay R; estimated from the runs when unset.
  std::optional<double> R;
  /// Overrides for the smoothness and noise level fed to the constants.
  std::optional<double> L;
  std::optional<double> sigma2;
  std::size_t finf_iters = 2000;
  std::size_t noise_samples = 200;
  std::size_t noise_probes = 4;
  std::size_t smoothness_pairs = 200;

  bool operator==(const TheoryConfig&) const = default;
};

/// One experiment: problem, data, algorithm and schedule. Text form is one
/// `key = value` per line with dotted keys (`schedule.c = 2`); `[section]`
/// lines prefix the keys that follow, `#` starts a comment.
struct ExperimentConfig {
  ProblemConfig problem;
  DatasetConfig dataset;
  PartitionMode partition_mode = PartitionMode::kIid;
  RunConfig run;
  LocalConfig local;
  CompressorConfig compressor;
  ScheduleConfig schedule;
  TheoryConfig theory;

  bool operator==(const ExperimentConfig&) const = default;

  bool uses_dataset() const { return problem.kind != "quadratic"; }
  bool error_feedback() const { return run.algorithm == "error_feedback"; }
};

/// Strict parse: unknown keys, malformed values, duplicates and cross-field
/// inconsistencies are all reported together in one ConfigError.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Writes every key relevant to cfg (dataset and partition keys only for
/// dataset problems, compressor keys only with error feedback) so that
/// parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Cross-field and range checks; throws ConfigError with every issue.
void validate_config(const ExperimentConfig& cfg);

/// All keys the parser accepts.
std::vector<std::string> config_keys();

}  // namespace fedbound
