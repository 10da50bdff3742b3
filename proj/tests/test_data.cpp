#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dlsim/data.hpp"
#include "dlsim/errors.hpp"

using namespace dlsim;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "dlsim_test_data";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

Dataset dummy_rows(std::size_t n) {
  Dataset ds;
  ds.inputs = Matrix(n, 1);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = i % 2;
  return ds;
}

}  // namespace

TEST(Blobs, BalancedAndDeterministic) {
  Rng a(1, stream_id(Stream::kData)), b(1, stream_id(Stream::kData));
  const Dataset x = make_blobs(a, 103, 4, 5, 1.0);
  const Dataset y = make_blobs(b, 103, 4, 5, 1.0);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_TRUE(std::equal(x.inputs.flat().begin(), x.inputs.flat().end(), y.inputs.flat().begin()));
  std::vector<int> counts(5, 0);
  for (auto l : x.labels) ++counts[l];
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  EXPECT_LE(*hi - *lo, 1);
  EXPECT_EQ(x.num_classes(), 5u);
}

TEST(Blobs, OneSamplePerClass) {
  Rng rng(2, 0);
  const Dataset ds = make_blobs(rng, 10, 3, 10, 0.5);
  std::set<std::size_t> labels(ds.labels.begin(), ds.labels.end());
  EXPECT_EQ(labels.size(), 10u);
}

TEST(Blobs, InvalidArguments) {
  Rng rng(2, 0);
  EXPECT_THROW(make_blobs(rng, 3, 3, 4, 1.0), std::invalid_argument);
  EXPECT_THROW(make_blobs(rng, 30, 3, 4, 0.0), std::invalid_argument);
  EXPECT_THROW(make_blobs(rng, 30, 3, 1, 1.0), std::invalid_argument);
}

TEST(Csv, ParsesRows) {
  const auto p = write_temp("ok.csv", "1.0,2.0,0\r\n3.0,4.0,1\n");
  const Dataset ds = load_csv(p);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.input_dim(), 2u);
  EXPECT_EQ(ds.num_classes(), 2u);
  EXPECT_EQ(ds.inputs(1, 0), 3.0);
}

TEST(Csv, RemapsLabelsInFirstOccurrenceOrder) {
  const auto p = write_temp("remap.csv", "0.1,5\n0.2,5\n0.3,9\n");
  EXPECT_EQ(load_csv(p).labels, (std::vector<std::size_t>{0, 0, 1}));
}

TEST(Csv, ReportsMalformedLine) {
  const auto p = write_temp("bad.csv", "1,2,3,0\n1,2,1\n");
  try {
    load_csv(p);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Csv, RejectsNonNumericAndEmpty) {
  EXPECT_THROW(load_csv(write_temp("nan.csv", "1,abc,0\n2,3,1\n")), IoError);
  EXPECT_THROW(load_csv(write_temp("empty.csv", "")), IoError);
  EXPECT_THROW(load_csv(write_temp("one_class.csv", "1,0\n2,0\n")), IoError);
  EXPECT_THROW(load_csv(fs::temp_directory_path() / "dlsim_no_such_file.csv"), IoError);
}

TEST(Partition, Arithmetic) {
  Rng rng(3, stream_id(Stream::kPartition));
  const Partition p = partition_uniform(rng, dummy_rows(100), 4, 0.2);
  EXPECT_EQ(p.holdout.size(), 20u);
  for (const auto& s : p.shards) EXPECT_EQ(s.size(), 20u);
  Rng rng2(3, 0);
  const Partition q = partition_uniform(rng2, dummy_rows(101), 4, 0.0);
  EXPECT_EQ(q.holdout.size(), 1u);
  for (const auto& s : q.shards) EXPECT_EQ(s.size(), 25u);
}

TEST(Partition, DisjointAndReproducible) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, stream_id(Stream::kPartition));
    const std::size_t n = 37 + seed * 7;
    const std::size_t users = 2 + seed % 5;
    const Partition p = partition_uniform(rng, dummy_rows(n), users, 0.15);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& s : p.shards) {
      EXPECT_EQ(s.size(), p.shards[0].size());
      for (auto r : s) seen.insert(r);
      total += s.size();
    }
    for (auto r : p.holdout) seen.insert(r);
    total += p.holdout.size();
    EXPECT_EQ(seen.size(), total);
    EXPECT_EQ(total, n);
    Rng again(seed, stream_id(Stream::kPartition));
    const Partition p2 = partition_uniform(again, dummy_rows(n), users, 0.15);
    EXPECT_EQ(p.shards, p2.shards);
    EXPECT_EQ(p.holdout, p2.holdout);
    EXPECT_EQ(p.hash(), p2.hash());
  }
}

TEST(Partition, InvalidInputs) {
  Rng rng(0, 0);
  EXPECT_THROW(partition_uniform(rng, dummy_rows(10), 1, 0.1), std::invalid_argument);
  EXPECT_THROW(partition_uniform(rng, dummy_rows(10), 2, 1.0), std::invalid_argument);
  EXPECT_THROW(partition_uniform(rng, dummy_rows(10), 20, 0.0), std::invalid_argument);
}

TEST(Batches, SampleWithoutReplacementWithinBatch) {
  Rng rng(4, 4);
  const Dataset ds = dummy_rows(50);
  std::vector<std::size_t> rows{3, 5, 7, 9, 11};
  const Batch b = sample_batch(rng, ds, rows, 16);
  EXPECT_EQ(b.size(), 5u);
  const Batch c = sample_batch(rng, ds, rows, 3);
  EXPECT_EQ(c.size(), 3u);
}
