#include "fedbound/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& file, const std::string& field) {
  if (bytes.size() < offset + 4) {
    throw IngestionError(file + ": truncated header while reading " + field);
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) out += kDigits[(v >> shift) & 0xf];
  return out;
}

}  // namespace

void LabeledDataset::validate() const {
  if (features.size() != labels.size() * dim) {
    throw ConfigError("dataset storage holds " + std::to_string(features.size()) +
                      " values for " + std::to_string(labels.size()) + " samples of dim " +
                      std::to_string(dim));
  }
  for (auto label : labels) {
    if (label >= classes) {
      throw ConfigError("dataset label " + std::to_string(label) + " >= class count " +
                        std::to_string(classes));
    }
  }
}

PartitionMode parse_partition_mode(std::string_view name) {
  if (name == "iid") return PartitionMode::kIid;
  if (name == "noniid2") return PartitionMode::kNonIid2;
  if (name == "noniid1") return PartitionMode::kNonIid1;
  throw ConfigError("unknown partition mode '" + std::string(name) +
                    "' (expected iid, noniid2 or noniid1)");
}

std::string_view partition_mode_name(PartitionMode mode) {
  switch (mode) {
    case PartitionMode::kIid:
      return "iid";
    case PartitionMode::kNonIid2:
      return "noniid2";
    case PartitionMode::kNonIid1:
      return "noniid1";
  }
  return "unknown";
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const std::string images_name = images_path.string();
  const std::string labels_name = labels_path.string();
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  const auto image_magic = read_be32(images, 0, images_name, "magic");
  if (image_magic != kIdxImagesMagic) {
    throw IngestionError(images_name + ": bad magic " + hex32(image_magic) + " (expected " +
                         hex32(kIdxImagesMagic) + " for images)");
  }
  const auto label_magic = read_be32(labels, 0, labels_name, "magic");
  if (label_magic != kIdxLabelsMagic) {
    throw IngestionError(labels_name + ": bad magic " + hex32(label_magic) + " (expected " +
                         hex32(kIdxLabelsMagic) + " for labels)");
  }

  const std::size_t count = read_be32(images, 4, images_name, "image count");
  const std::size_t rows = read_be32(images, 8, images_name, "row count");
  const std::size_t cols = read_be32(images, 12, images_name, "column count");
  const std::size_t label_count = read_be32(labels, 4, labels_name, "label count");
  if (count != label_count) {
    throw IngestionError("sample count mismatch: image count " + std::to_string(count) +
                         " vs label count " + std::to_string(label_count));
  }

  const std::size_t dim = rows * cols;
  constexpr std::size_t kImageHeader = 16;
  constexpr std::size_t kLabelHeader = 8;
  if (images.size() < kImageHeader + count * dim) {
    throw IngestionError(images_name + ": truncated pixel data (" +
                         std::to_string(images.size() - kImageHeader) + " bytes, expected " +
                         std::to_string(count * dim) + ")");
  }
  if (labels.size() < kLabelHeader + count) {
    throw IngestionError(labels_name + ": truncated label data (" +
                         std::to_string(labels.size() - kLabelHeader) + " bytes, expected " +
                         std::to_string(count) + ")");
  }

  LabeledDataset ds;
  ds.dim = dim;
  ds.features.resize(count * dim);
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count * dim; ++i) {
    ds.features[i] = static_cast<double>(images[kImageHeader + i]) / 255.0;
  }
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = labels[kLabelHeader + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = count == 0 ? 0 : static_cast<std::size_t>(max_label) + 1;
  return ds;
}

namespace {

std::vector<ParamVector> draw_blob_means(RngStream& rng, std::size_t n_classes, std::size_t d) {
  std::vector<ParamVector> means;
  means.reserve(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) means.push_back(gaussian_vector(rng, d, 2.0));
  return means;
}

void append_blob_samples(RngStream& rng, const std::vector<ParamVector>& means,
                         std::size_t per_class, double spread, LabeledDataset& ds) {
  const std::size_t d = ds.dim;
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const auto deviation = gaussian_vector(rng, d, spread);
      for (std::size_t j = 0; j < d; ++j) ds.features.push_back(means[c][j] + deviation[j]);
      ds.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
}

void check_blob_args(std::size_t n_classes, std::size_t per_class, std::size_t d, double spread) {
  if (n_classes == 0 || per_class == 0 || d == 0) {
    throw ConfigError("synth_blobs: class count, samples per class and dimension must be positive");
  }
  if (!(spread >= 0.0)) throw ConfigError("synth_blobs: spread must be non-negative");
}

}  // namespace

LabeledDataset synth_blobs(RngStream& rng, std::size_t n_classes, std::size_t per_class,
                           std::size_t d, double spread) {
  check_blob_args(n_classes, per_class, d, spread);
  LabeledDataset ds;
  ds.dim = d;
  ds.classes = n_classes;
  const auto means = draw_blob_means(rng, n_classes, d);
  append_blob_samples(rng, means, per_class, spread, ds);
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> synth_blobs_split(RngStream& rng, std::size_t n_classes,
                                                            std::size_t train_per_class,
                                                            std::size_t test_per_class,
                                                            std::size_t d, double spread) {
  check_blob_args(n_classes, train_per_class, d, spread);
  LabeledDataset train;
  train.dim = d;
  train.classes = n_classes;
  LabeledDataset test = train;
  const auto means = draw_blob_means(rng, n_classes, d);
  append_blob_samples(rng, means, train_per_class, spread, train);
  append_blob_samples(rng, means, test_per_class, spread, test);
  return {std::move(train), std::move(test)};
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  return by_class;
}

Partition partition_iid(const LabeledDataset& ds, std::size_t n, RngStream& rng) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t shard = ds.size() / n;
  Partition part;
  part.dropped = ds.size() - shard * n;
  part.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto first = order.begin() + static_cast<std::ptrdiff_t>(i * shard);
    part.assignment[i].assign(first, first + static_cast<std::ptrdiff_t>(shard));
  }
  return part;
}

Partition partition_two_class(const LabeledDataset& ds, std::size_t n, RngStream& rng) {
  const std::size_t chunks = 2 * n;
  if (chunks % ds.classes != 0) {
    throw ConfigError("noniid2 needs 2n to be a multiple of the class count (n=" +
                      std::to_string(n) + ", classes=" + std::to_string(ds.classes) + ")");
  }
  const std::size_t per_class = chunks / ds.classes;
  const auto by_class = indices_by_class(ds);

  Partition part;
  std::vector<std::vector<std::size_t>> chunk_list;
  chunk_list.reserve(chunks);
  for (const auto& members : by_class) {
    const std::size_t size = members.size() / per_class;
    if (size == 0) {
      throw ConfigError("noniid2: a class has fewer samples than chunks per class");
    }
    part.dropped += members.size() - size * per_class;
    for (std::size_t c = 0; c < per_class; ++c) {
      auto first = members.begin() + static_cast<std::ptrdiff_t>(c * size);
      chunk_list.emplace_back(first, first + static_cast<std::ptrdiff_t>(size));
    }
  }

  std::vector<std::size_t> deal(chunks);
  std::iota(deal.begin(), deal.end(), std::size_t{0});
  rng.shuffle(deal);
  part.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& shard = part.assignment[i];
    for (std::size_t c : {deal[2 * i], deal[2 * i + 1]}) {
      shard.insert(shard.end(), chunk_list[c].begin(), chunk_list[c].end());
    }
  }
  return part;
}

Partition partition_one_class(const LabeledDataset& ds, std::size_t n, RngStream& rng) {
  if (n < ds.classes) {
    throw ConfigError("noniid1 needs at least one worker per class (n=" + std::to_string(n) +
                      ", classes=" + std::to_string(ds.classes) + ")");
  }
  std::vector<std::size_t> class_order(ds.classes);
  std::iota(class_order.begin(), class_order.end(), std::size_t{0});
  rng.shuffle(class_order);

  std::vector<std::vector<std::size_t>> holders(ds.classes);
  for (std::size_t i = 0; i < n; ++i) holders[class_order[i % ds.classes]].push_back(i);

  const auto by_class = indices_by_class(ds);
  Partition part;
  part.assignment.resize(n);
  for (std::size_t c = 0; c < ds.classes; ++c) {
    const auto& members = by_class[c];
    const std::size_t share = members.size() / holders[c].size();
    part.dropped += members.size() - share * holders[c].size();
    for (std::size_t h = 0; h < holders[c].size(); ++h) {
      auto first = members.begin() + static_cast<std::ptrdiff_t>(h * share);
      part.assignment[holders[c][h]].assign(first, first + static_cast<std::ptrdiff_t>(share));
    }
  }
  return part;
}

}  // namespace

Partition partition(const LabeledDataset& ds, std::size_t n, PartitionMode mode, RngStream& rng) {
  if (n == 0) throw ConfigError("partition: worker count must be positive");
  if (ds.size() < n) {
    throw ConfigError("partition: " + std::to_string(ds.size()) + " samples cannot cover " +
                      std::to_string(n) + " workers");
  }
  if (ds.classes == 0) throw ConfigError("partition: dataset has no classes");

  Partition part;
  switch (mode) {
    case PartitionMode::kIid:
      part = partition_iid(ds, n, rng);
      break;
    case PartitionMode::kNonIid2:
      part = partition_two_class(ds, n, rng);
      break;
    case PartitionMode::kNonIid1:
      part = partition_one_class(ds, n, rng);
      break;
  }
  for (auto& shard : part.assignment) {
    std::sort(shard.begin(), shard.end());
    if (shard.empty()) throw ConfigError("partition: a worker received no samples");
  }
  if (part.dropped > 0) {
    spdlog::info("partition {}: dropped {} remainder samples", partition_mode_name(mode),
                 part.dropped);
  }
  return part;
}

std::vector<std::vector<std::size_t>> class_histograms(const LabeledDataset& ds,
                                                       const Partition& part) {
  std::vector<std::vector<std::size_t>> counts(part.workers(),
                                               std::vector<std::size_t>(ds.classes, 0));
  for (std::size_t i = 0; i < part.workers(); ++i) {
    for (std::size_t idx : part.assignment[i]) ++counts[i][ds.labels[idx]];
  }
  return counts;
}

}  // namespace fedbound
