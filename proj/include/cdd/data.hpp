#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdd/rng.hpp"
#include "cdd/tensor.hpp"

namespace cdd {

enum class TaskKind { mixture, toy_sr, csv };

TaskKind parse_task_kind(std::string_view s);
std::string to_string(TaskKind k);

struct Dataset {
  TaskKind kind = TaskKind::mixture;
  Tensor x;                 // [n x D]
  Tensor c;                 // [n x Dc]
  std::vector<int> labels;  // mixture component per row; empty otherwise
  std::size_t modes = 0;
  double radius = 0.0;

  std::size_t size() const { return x.rows(); }
  std::size_t data_dim() const { return x.cols(); }
  std::size_t cond_dim() const { return c.cols(); }
};

struct ConditionalBatch {
  Tensor x;    // [B x D]
  Tensor c;    // [B x Dc]
  Tensor eps;  // [B x D]
  std::vector<double> t;
  std::vector<std::size_t> index;  // source rows

  std::size_t size() const { return x.rows(); }
};

// Center of mixture component k: (r cos(2 pi k / M), r sin(2 pi k / M)).
std::vector<double> mixture_center(std::size_t modes, double radius, std::size_t k);

// Balanced, shuffled one-hot conditions with x ~ N(center_c, s^2 I) in 2-D.
Dataset make_cond_mixture(std::size_t modes, double radius, double noise, std::size_t n, std::uint64_t seed);

// Smooth 1-D signals (1..3 low-frequency sinusoids, total amplitude <= 1)
// observed through average pooling plus Gaussian noise.
Dataset make_toy_sr(std::size_t length, std::size_t pool, double obs_noise, std::size_t n, std::uint64_t seed);

Tensor average_pool(const Tensor& x, std::size_t pool);

// Header-free CSV, one sample per row: the first `x_cols` columns are x, the
// rest are the condition.
Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t x_cols);

// Nearest mixture center for each row of x.
std::vector<int> nearest_mode(const Tensor& x, std::size_t modes, double radius);

// Seeded epoch-wise shuffling over a dataset; a fresh noise tensor is drawn
// for every batch, so revisiting a row gives new noise.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

  ConditionalBatch next();
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (data_->size() + batch_ - 1) / batch_; }

 private:
  void reshuffle();

  const Dataset* data_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace cdd
