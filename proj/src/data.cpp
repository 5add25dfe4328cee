#include "cdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cdd/error.hpp"

namespace cdd {

TaskKind parse_task_kind(std::string_view s) {
  if (s == "mixture") return TaskKind::mixture;
  if (s == "toy_sr") return TaskKind::toy_sr;
  if (s == "csv") return TaskKind::csv;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected mixture|toy_sr|csv)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::mixture: return "mixture";
    case TaskKind::toy_sr: return "toy_sr";
    case TaskKind::csv: return "csv";
  }
  return "?";
}

std::vector<double> mixture_center(std::size_t modes, double radius, std::size_t k) {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Dataset make_cond_mixture(std::size_t modes, double radius, double noise, std::size_t n, std::uint64_t seed) {
  if (modes < 2) throw DomainError("make_cond_mixture: need at least 2 modes");
  if (!(radius > 0.0)) throw DomainError("make_cond_mixture: radius must be positive");
  if (!(noise > 0.0)) throw DomainError("make_cond_mixture: noise must be positive");
  if (n == 0) throw DomainError("make_cond_mixture: n must be positive");

  Rng rng(mix_seed(seed, 1));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % modes);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d;
  d.kind = TaskKind::mixture;
  d.modes = modes;
  d.radius = radius;
  d.x = Tensor({n, 2});
  d.c = Tensor({n, modes}, 0.0);
  std::normal_distribution<double> gauss(0.0, noise);
  for (std::size_t i = 0; i < n; ++i) {
    const auto center = mixture_center(modes, radius, static_cast<std::size_t>(labels[i]));
    d.x.at(i, 0) = center[0] + gauss(rng);
    d.x.at(i, 1) = center[1] + gauss(rng);
    d.c.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  d.labels = std::move(labels);
  return d;
}

Tensor average_pool(const Tensor& x, std::size_t pool) {
  if (pool == 0 || x.cols() % pool != 0) {
    throw DomainError("average_pool: pool " + std::to_string(pool) + " does not divide length " +
                      std::to_string(x.cols()));
  }
  const std::size_t blocks = x.cols() / pool;
  Tensor out({x.rows(), blocks}, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t b = 0; b < blocks; ++b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < pool; ++k) acc += x.at(i, b * pool + k);
      out.at(i, b) = acc / static_cast<double>(pool);
    }
  }
  return out;
}

Dataset make_toy_sr(std::size_t length, std::size_t pool, double obs_noise, std::size_t n, std::uint64_t seed) {
  if (pool == 0 || length == 0 || length % pool != 0) {
    throw DomainError("make_toy_sr: pool " + std::to_string(pool) + " must divide length " + std::to_string(length));
  }
  if (obs_noise < 0.0) throw DomainError("make_toy_sr: obs_noise must be >= 0");
  if (n == 0) throw DomainError("make_toy_sr: n must be positive");

  Rng rng(mix_seed(seed, 2));
  std::uniform_int_distribution<int> n_comp(1, 3);
  std::uniform_real_distribution<double> freq(0.5, 2.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset d;
  d.kind = TaskKind::toy_sr;
  d.x = Tensor({n, length}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = n_comp(rng);
    // Amplitudes sum to at most 1, so |x| <= 1 everywhere.
    std::vector<double> amp(k);
    double total = 0.0;
    for (auto& a : amp) total += (a = unit(rng));
    const double budget = unit(rng);
    for (int j = 0; j < k; ++j) {
      const double a = budget * amp[j] / total;
      const double f = freq(rng);
      const double p = phase(rng);
      for (std::size_t s = 0; s < length; ++s) {
        d.x.at(i, s) += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(s) / length + p);
      }
    }
  }
  d.c = average_pool(d.x, pool);
  if (obs_noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, obs_noise);
    for (auto& v : d.c.storage()) v += gauss(rng);
  }
  return d;
}

Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t x_cols) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<double> xs, cs;
  std::size_t width = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (width == 0) width = vals.size();
    if (vals.size() != width) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(vals.size()));
    }
    if (x_cols == 0 || x_cols >= width) {
      throw FormatError(path.string() + ": split " + std::to_string(x_cols) + " leaves no x or no condition columns");
    }
    xs.insert(xs.end(), vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(x_cols));
    cs.insert(cs.end(), vals.begin() + static_cast<std::ptrdiff_t>(x_cols), vals.end());
    ++rows;
  }
  if (rows == 0) throw FormatError(path.string() + ": no samples");
  Dataset d;
  d.kind = TaskKind::csv;
  d.x = Tensor({rows, x_cols}, std::move(xs));
  d.c = Tensor({rows, width - x_cols}, std::move(cs));
  return d;
}

std::vector<int> nearest_mode(const Tensor& x, std::size_t modes, double radius) {
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < modes; ++k) {
      const auto c = mixture_center(modes, radius, k);
      const double dx = x.at(i, 0) - c[0], dy = x.at(i, 1) - c[1];
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_(batch_size), rng_(mix_seed(seed, 3)) {
  if (batch_size == 0 || batch_size > data.size()) {
    throw DomainError("batch size " + std::to_string(batch_size) + " must be in [1, " + std::to_string(data.size()) +
                      "]");
  }
  order_.resize(data.size());
  reshuffle();
}

void BatchIterator::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

ConditionalBatch BatchIterator::next() {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_);
  ConditionalBatch b;
  b.index.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  b.x = select_rows(data_->x, b.index);
  b.c = select_rows(data_->c, b.index);
  b.eps = randn(b.x.shape(), rng_);
  return b;
}

}  // namespace cdd
