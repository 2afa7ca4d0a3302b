#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fedbound/numerics.hpp"

namespace fedbound {

/// Samples stored row-major: feature(i) is a view of length dim.
struct LabeledDataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> feature(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  /// Throws ConfigError if the storage is inconsistent or a label >= classes.
  void validate() const;
};

/// Per-worker, ascending index lists into one dataset.
struct Partition {
  std::vector<std::vector<std::size_t>> assignment;
  /// Samples left out so that shards (or chunks) have equal size.
  std::size_t dropped = 0;

  std::size_t workers() const noexcept { return assignment.size(); }
};

enum class PartitionMode { kIid, kNonIid2, kNonIid1 };

PartitionMode parse_partition_mode(std::string_view name);
std::string_view partition_mode_name(PartitionMode mode);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1] and images flattened row-major. Labels must
/// be < 256; the class count is 1 + the largest label seen.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Gaussian clusters. Class means are drawn with E||mean||^2 = 4 and samples
/// deviate from their mean with E||deviation||^2 = spread^2. Samples are
/// ordered class by class.
LabeledDataset synth_blobs(RngStream& rng, std::size_t n_classes, std::size_t per_class,
                           std::size_t d, double spread);

/// Train and test sets drawn around the same class means.
std::pair<LabeledDataset, LabeledDataset> synth_blobs_split(RngStream& rng, std::size_t n_classes,
                                                            std::size_t train_per_class,
                                                            std::size_t test_per_class,
                                                            std::size_t d, double spread);

/// Splits a dataset among n workers.
///
/// - IID: shuffle, then n equal shards.
/// - NonIID2: sort by label, cut every class into 2n/C equal chunks, deal two
///   distinct chunks to each worker. Needs 2n to be a multiple of C so every
///   chunk holds a single class.
/// - NonIID1: one class per worker after a seeded class permutation; when
///   n > C, classes are reused round-robin and a class's samples are split
///   evenly between the workers holding it. Needs n >= C.
///
/// Throws ConfigError for infeasible (n, C, mode) combinations.
Partition partition(const LabeledDataset& ds, std::size_t n, PartitionMode mode, RngStream& rng);

/// counts[i][c] = number of samples of class c held by worker i.
std::vector<std::vector<std::size_t>> class_histograms(const LabeledDataset& ds,
                                                       const Partition& part);

}  // namespace fedbound
