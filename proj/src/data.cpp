#include "dlsim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dlsim/errors.hpp"
#include "dlsim/param_vec.hpp"

namespace dlsim {

std::size_t Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

void Dataset::validate() const {
  if (inputs.rows() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(inputs.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<bool> seen(num_classes(), false);
  std::size_t distinct = 0;
  for (auto y : labels) {
    if (!seen[y]) {
      seen[y] = true;
      ++distinct;
    }
  }
  if (distinct < 2) throw DimensionError("dataset must contain at least two classes");
}

std::uint64_t Partition::hash() const {
  std::vector<double> image;
  for (const auto& shard : shards) {
    image.push_back(-1.0);
    for (auto i : shard) image.push_back(static_cast<double>(i));
  }
  image.push_back(-2.0);
  for (auto i : holdout) image.push_back(static_cast<double>(i));
  return fnv1a64(image);
}

Dataset make_blobs(Rng& rng, std::size_t n_samples, std::size_t input_dim,
                   std::size_t num_classes, double spread) {
  if (num_classes < 2) throw std::invalid_argument("make_blobs needs >= 2 classes");
  if (input_dim == 0) throw std::invalid_argument("make_blobs needs input_dim >= 1");
  if (n_samples < num_classes) {
    throw std::invalid_argument("make_blobs needs n_samples >= num_classes");
  }
  if (!(spread > 0.0)) throw std::invalid_argument("make_blobs needs spread > 0");

  constexpr double kRadius = 3.0;
  Matrix means(num_classes, input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto row = means.row(c);
    double norm = 0.0;
    while (norm < 1e-12) {
      for (double& v : row) v = rng.normal();
      norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
    }
    for (double& v : row) v *= kRadius / norm;
  }

  Dataset d;
  d.name = "blobs";
  d.inputs = Matrix(n_samples, input_dim);
  d.labels.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t c = i % num_classes;
    d.labels[i] = c;
    auto row = d.inputs.row(i);
    const auto mu = means.row(c);
    for (std::size_t j = 0; j < input_dim; ++j) row[j] = mu[j] + spread * rng.normal();
  }
  return d;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line,
                       const std::string& what) {
  throw IoError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  std::vector<double> values;
  std::vector<long long> raw_labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = text.find(',', start);
      fields.push_back(trim(text.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2) fail(path, line_no, "expected features and a label");
    const std::size_t n_features = fields.size() - 1;
    if (width == 0) {
      width = n_features;
    } else if (n_features != width) {
      fail(path, line_no,
           "expected " + std::to_string(width) + " features, found " +
               std::to_string(n_features));
    }
    for (std::size_t j = 0; j < n_features; ++j) {
      double v = 0.0;
      const auto f = fields[j];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
        fail(path, line_no, "non-numeric feature '" + std::string(f) + "'");
      }
      values.push_back(v);
    }
    long long label = 0;
    const auto lf = fields.back();
    const auto res = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (res.ec != std::errc() || res.ptr != lf.data() + lf.size()) {
      fail(path, line_no, "label '" + std::string(lf) + "' is not an integer");
    }
    raw_labels.push_back(label);
  }
  if (raw_labels.empty()) throw IoError(path.string() + ": empty file");

  Dataset d;
  d.name = path.filename().string();
  d.inputs = Matrix(raw_labels.size(), width);
  std::copy(values.begin(), values.end(), d.inputs.flat().begin());
  std::map<long long, std::size_t> remap;
  d.labels.reserve(raw_labels.size());
  for (auto raw : raw_labels) {
    auto [it, inserted] = remap.try_emplace(raw, remap.size());
    d.labels.push_back(it->second);
  }
  if (remap.size() < 2) throw IoError(path.string() + ": fewer than two classes");
  return d;
}

Partition partition_uniform(Rng& rng, const Dataset& dataset, std::size_t n_users,
                            double holdout_fraction) {
  if (n_users < 2) throw std::invalid_argument("partition needs at least two users");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout_fraction must lie in [0, 1)");
  }
  const std::size_t n = dataset.size();
  // Tolerance absorbs products like 0.2 * 100 landing a hair above 20.
  const auto n_holdout = static_cast<std::size_t>(
      std::ceil(holdout_fraction * static_cast<double>(n) - 1e-9));
  if (n_holdout > n || (n - n_holdout) / n_users == 0) {
    throw std::invalid_argument("too few rows (" + std::to_string(n) +
                                ") for one sample per shard across " +
                                std::to_string(n_users) + " users");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));

  Partition p;
  p.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  const std::size_t shard_size = (n - n_holdout) / n_users;
  auto it = order.begin() + static_cast<std::ptrdiff_t>(n_holdout);
  p.shards.resize(n_users);
  for (auto& shard : p.shards) {
    shard.assign(it, it + static_cast<std::ptrdiff_t>(shard_size));
    it += static_cast<std::ptrdiff_t>(shard_size);
  }
  p.holdout.insert(p.holdout.end(), it, order.end());
  return p;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> rows) {
  Batch b;
  b.inputs = Matrix(rows.size(), dataset.input_dim());
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = dataset.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
    b.labels.push_back(dataset.labels[rows[i]]);
  }
  return b;
}

Batch sample_batch(Rng& rng, const Dataset& dataset, std::span<const std::size_t> rows,
                   std::size_t batch_size) {
  const std::size_t k = std::min(batch_size, rows.size());
  const auto picks = rng.sample_without_replacement(rows.size(), k);
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  for (auto i : picks) chosen.push_back(rows[i]);
  return make_batch(dataset, chosen);
}

}  // namespace dlsim
