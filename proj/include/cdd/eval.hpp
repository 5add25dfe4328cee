#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdd/data.hpp"
#include "cdd/model.hpp"
#include "cdd/sampler.hpp"
#include "cdd/tensor.hpp"

namespace cdd {

inline constexpr int kStepCounts[] = {1, 2, 4, 8};

// Median of pooled pairwise Euclidean distances (strictly upper triangle).
double median_bandwidth(const Tensor& a, const Tensor& b);

// MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 h^2)). The unbiased estimator drops
// the diagonal of the within-sample terms; the biased one keeps it and is >= 0.
// bandwidth <= 0 selects the median heuristic.
double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth, bool unbiased = true);

// Maps (row, condition) to the target the generated row is compared against.
using GroundTruthFn = std::function<std::vector<double>(std::size_t row, std::span<const double> condition)>;

// Mixture: the center named by the one-hot condition. Others: the clean
// signal of the same row, after checking the condition matches that row.
GroundTruthFn ground_truth_for(const Dataset& data);

// Mean over rows and dimensions of (sample - target)^2.
double cond_mse(const Tensor& samples, const Tensor& conditions, const GroundTruthFn& truth);

struct MetricRow {
  int steps = 0;
  std::uint64_t seed = 0;
  double mmd = 0.0;
  double cond_mse = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::map<std::string, double> scalars;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  double bandwidth = 0.0;
  std::size_t data_dim = 0;
  // Plot payloads: samples of the first seed per K, and one x_hat trajectory
  // per K for the first condition.
  std::map<int, Tensor> samples;
  std::map<int, std::vector<Tensor>> trajectories;
  std::optional<Tensor> reference;
  std::optional<Tensor> trajectory_truth;

  double median(int steps, bool mmd) const;
};

// Samples from `model` for every condition row of `eval` at each K and seed.
MetricReport evaluate_model(const AdaptedModel& model, const NoiseSchedule& sched, const Dataset& eval,
                            std::span<const int> steps, std::span<const std::uint64_t> seeds);

// Writes metrics.csv, summary.csv and the SVG panels into `dir`. Nothing is
// written if the report has no rows.
std::vector<std::filesystem::path> emit_report(const MetricReport& report, const std::filesystem::path& dir);

std::string format_double(double v);

// y-axis / x-axis scatter of 2-D samples against a reference set.
std::string scatter_svg(const Tensor& samples, const Tensor* reference, const std::string& title);
// One polyline per recorded signal estimate plus the truth, for 1-D signals.
std::string trajectory_svg(const std::vector<Tensor>& x_hat, const Tensor* truth, const std::string& title);

}  // namespace cdd
