#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dlsim/matrix.hpp"
#include "dlsim/model.hpp"
#include "dlsim/rng.hpp"

namespace dlsim {

struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.cols(); }
  // 1 + the largest label.
  std::size_t num_classes() const;
  void validate() const;
};

// Disjoint user shards plus a holdout pool used for validation and for MIA
// non-member sets.
struct Partition {
  std::vector<std::vector<std::size_t>> shards;
  std::vector<std::size_t> holdout;

  std::size_t n_users() const { return shards.size(); }
  std::uint64_t hash() const;
};

// Gaussian clusters: one mean per class drawn uniformly on the sphere of
// radius 3, per-coordinate noise N(0, spread^2). Labels are assigned
// round-robin so class counts differ by at most one.
Dataset make_blobs(Rng& rng, std::size_t n_samples, std::size_t input_dim,
                   std::size_t num_classes, double spread);

// One sample per line: comma-separated features, integer label last. No
// header. Labels are remapped to 0..C-1 in first-occurrence order.
Dataset load_csv(const std::filesystem::path& path);

// Holdout of ceil(holdout_fraction * |X|) rows is drawn first; the rest is
// shuffled and split into n_users shards of equal size, leftovers appended to
// the holdout.
Partition partition_uniform(Rng& rng, const Dataset& dataset, std::size_t n_users,
                            double holdout_fraction);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> rows);

// min(batch_size, |rows|) rows drawn without replacement.
Batch sample_batch(Rng& rng, const Dataset& dataset, std::span<const std::size_t> rows,
                   std::size_t batch_size);

}  // namespace dlsim
