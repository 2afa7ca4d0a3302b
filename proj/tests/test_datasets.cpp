#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fedbound/datasets.hpp"
#include "fedbound/errors.hpp"
#include "test_util.hpp"

using namespace fedbound;
using fedbound::test::put_be32;
using fedbound::test::write_bytes;

namespace {

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t count,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  put_be32(out, magic);
  put_be32(out, count);
  put_be32(out, 2);
  put_be32(out, 2);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels,
                                     std::uint32_t count) {
  std::vector<std::uint8_t> out;
  put_be32(out, magic);
  put_be32(out, count);
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::string ingestion_message(const std::filesystem::path& img, const std::filesystem::path& lab) {
  try {
    load_idx(img, lab);
  } catch (const IngestionError& e) {
    return e.what();
  }
  return "";
}

LabeledDataset labelled(std::size_t classes, std::size_t per_class) {
  RngStream rng(5, {0, 0, 0, Purpose::kDataset});
  return synth_blobs(rng, classes, per_class, 3, 1.0);
}

void check_disjoint_cover(const LabeledDataset& ds, const Partition& p) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& shard : p.assignment) {
    CHECK(std::is_sorted(shard.begin(), shard.end()));
    for (auto i : shard) {
      CHECK(i < ds.size());
      seen.insert(i);
    }
    total += shard.size();
  }
  CHECK(seen.size() == total);
  CHECK(total + p.dropped == ds.size());
}

std::set<std::uint32_t> label_set(const LabeledDataset& ds, const std::vector<std::size_t>& shard) {
  std::set<std::uint32_t> s;
  for (auto i : shard) s.insert(ds.labels[i]);
  return s;
}

}  // namespace

TEST_CASE("load_idx reads a hand-crafted pair") {
  const auto dir = fedbound::test::temp_dir("idx_ok");
  write_bytes(dir / "img", idx_images(0x803, 2, {0, 51, 102, 255, 255, 204, 153, 0}));
  write_bytes(dir / "lab", idx_labels(0x801, {3, 1}, 2));
  const auto ds = load_idx(dir / "img", dir / "lab");
  REQUIRE(ds.size() == 2);
  CHECK(ds.dim == 4);
  CHECK(ds.classes == 4);
  CHECK((ds.labels == std::vector<std::uint32_t>{3, 1}));
  const std::vector<double> expected{0.0, 0.2, 0.4, 1.0, 1.0, 0.8, 0.6, 0.0};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(ds.features[i] == expected[i]);
}

TEST_CASE("load_idx rejects a wrong label magic") {
  const auto dir = fedbound::test::temp_dir("idx_magic");
  write_bytes(dir / "img", idx_images(0x803, 2, {0, 0, 0, 0, 0, 0, 0, 0}));
  write_bytes(dir / "lab", idx_labels(0x803, {0, 1}, 2));
  const auto msg = ingestion_message(dir / "img", dir / "lab");
  CHECK(msg.find("magic") != std::string::npos);
  CHECK(msg.find("lab") != std::string::npos);
}

TEST_CASE("load_idx rejects a count mismatch") {
  const auto dir = fedbound::test::temp_dir("idx_count");
  write_bytes(dir / "img", idx_images(0x803, 3, std::vector<std::uint8_t>(12, 7)));
  write_bytes(dir / "lab", idx_labels(0x801, {0, 1}, 2));
  const auto msg = ingestion_message(dir / "img", dir / "lab");
  CHECK(msg.find("count") != std::string::npos);
}

TEST_CASE("load_idx rejects truncated and missing files") {
  const auto dir = fedbound::test::temp_dir("idx_trunc");
  write_bytes(dir / "img", idx_images(0x803, 2, {1, 2, 3}));
  write_bytes(dir / "lab", idx_labels(0x801, {0, 1}, 2));
  CHECK(ingestion_message(dir / "img", dir / "lab").find("truncated") != std::string::npos);
  write_bytes(dir / "short", {0, 0, 8});
  CHECK(ingestion_message(dir / "short", dir / "lab").find("truncated") != std::string::npos);
  write_bytes(dir / "img2", idx_images(0x803, 2, std::vector<std::uint8_t>(8, 1)));
  write_bytes(dir / "lab2", idx_labels(0x801, {0}, 2));
  CHECK(ingestion_message(dir / "img2", dir / "lab2").find("truncated") != std::string::npos);
  CHECK_THROWS_AS(load_idx(dir / "absent", dir / "lab"), IngestionError);
}

TEST_CASE("synth_blobs examples") {
  RngStream a(1, {0, 0, 0, Purpose::kDataset});
  const auto one = synth_blobs(a, 1, 20, 4, 1.0);
  CHECK(one.classes == 1);
  for (auto l : one.labels) CHECK(l == 0);

  RngStream b(2, {0, 0, 0, Purpose::kDataset});
  const auto tight = synth_blobs(b, 3, 5, 4, 0.0);
  for (std::size_t i = 0; i < tight.size(); ++i) {
    const std::size_t first = tight.labels[i] * 5;
    for (std::size_t j = 0; j < 4; ++j) CHECK(tight.feature(i)[j] == tight.feature(first)[j]);
  }
  CHECK(tight.feature(0)[0] != tight.feature(5)[0]);

  RngStream c1(3, {0, 0, 0, Purpose::kDataset});
  RngStream c2(3, {0, 0, 0, Purpose::kDataset});
  const auto d1 = synth_blobs(c1, 4, 10, 6, 0.5);
  const auto d2 = synth_blobs(c2, 4, 10, 6, 0.5);
  CHECK(d1.features == d2.features);
  CHECK(d1.labels == d2.labels);
  CHECK_NOTHROW(d1.validate());
}

TEST_CASE("synth_blobs rejects empty shapes") {
  RngStream rng(1, {});
  CHECK_THROWS_AS(synth_blobs(rng, 0, 5, 2, 1.0), ConfigError);
  CHECK_THROWS_AS(synth_blobs(rng, 2, 0, 2, 1.0), ConfigError);
  CHECK_THROWS_AS(synth_blobs(rng, 2, 5, 0, 1.0), ConfigError);
}

TEST_CASE("partition examples") {
  const auto ds = labelled(10, 60);
  RngStream r1(7, {0, 0, 0, Purpose::kPartition});
  const auto p1 = partition(ds, 10, PartitionMode::kNonIid1, r1);
  check_disjoint_cover(ds, p1);
  std::set<std::uint32_t> classes;
  for (const auto& shard : p1.assignment) {
    const auto s = label_set(ds, shard);
    CHECK(s.size() == 1);
    classes.insert(*s.begin());
  }
  CHECK(classes.size() == 10);

  RngStream r2(7, {0, 0, 0, Purpose::kPartition});
  const auto p2 = partition(ds, 10, PartitionMode::kNonIid2, r2);
  check_disjoint_cover(ds, p2);
  CHECK(p2.dropped == 0);
  for (const auto& shard : p2.assignment) {
    CHECK(label_set(ds, shard).size() <= 2);
    CHECK(shard.size() == ds.size() / 10);
  }

  RngStream r3(7, {0, 0, 0, Purpose::kPartition});
  const auto p3 = partition(ds, 1, PartitionMode::kIid, r3);
  REQUIRE(p3.workers() == 1);
  CHECK(p3.assignment[0].size() == ds.size());
  CHECK(p3.dropped == 0);
}

TEST_CASE("partition properties") {
  const auto ds = labelled(10, 37);
  for (auto mode : {PartitionMode::kIid, PartitionMode::kNonIid2, PartitionMode::kNonIid1}) {
    for (std::size_t n : {5, 10, 20}) {
      if (mode == PartitionMode::kNonIid1 && n < 10) continue;
      RngStream a(3, {0, 0, 0, Purpose::kPartition});
      RngStream b(3, {0, 0, 0, Purpose::kPartition});
      const auto p = partition(ds, n, mode, a);
      CHECK(p.workers() == n);
      check_disjoint_cover(ds, p);
      CHECK(partition(ds, n, mode, b).assignment == p.assignment);
      std::size_t size = p.assignment[0].size();
      for (const auto& shard : p.assignment) {
        CHECK(shard.size() == size);
        if (mode == PartitionMode::kNonIid1) CHECK(label_set(ds, shard).size() == 1);
        if (mode == PartitionMode::kNonIid2) CHECK(label_set(ds, shard).size() <= 2);
      }
    }
  }
}

TEST_CASE("iid shards follow the global histogram") {
  const auto ds = labelled(4, 500);
  RngStream rng(8, {0, 0, 0, Purpose::kPartition});
  const auto p = partition(ds, 4, PartitionMode::kIid, rng);
  const auto h = class_histograms(ds, p);
  for (const auto& row : h) {
    double chi2 = 0.0;
    for (auto c : row) chi2 += (c - 125.0) * (c - 125.0) / 125.0;
    CHECK(chi2 < 16.27);
  }
}

TEST_CASE("partition rejects infeasible combinations") {
  const auto ds = labelled(10, 20);
  RngStream rng(1, {});
  CHECK_THROWS_AS(partition(ds, 3, PartitionMode::kNonIid2, rng), ConfigError);
  CHECK_THROWS_AS(partition(ds, 5, PartitionMode::kNonIid1, rng), ConfigError);
  CHECK_THROWS_AS(partition(ds, 0, PartitionMode::kIid, rng), ConfigError);
  CHECK_THROWS_AS(partition(ds, 201, PartitionMode::kIid, rng), ConfigError);
}

TEST_CASE("class_histograms totals") {
  const auto ds = labelled(10, 20);
  RngStream rng(1, {});
  const auto p = partition(ds, 20, PartitionMode::kNonIid1, rng);
  const auto h = class_histograms(ds, p);
  REQUIRE(h.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    std::size_t total = 0;
    for (auto c : h[i]) total += c;
    CHECK(total == p.assignment[i].size());
    CHECK(total == 10);
  }
}

TEST_CASE("partition_mode names") {
  for (auto m : {PartitionMode::kIid, PartitionMode::kNonIid2, PartitionMode::kNonIid1}) {
    CHECK(parse_partition_mode(partition_mode_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_partition_mode("noniid3"), ConfigError);
}
