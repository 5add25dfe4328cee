#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdd/data.hpp"
#include "cdd/error.hpp"
#include "cdd/eval.hpp"
#include "cdd/rng.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

Tensor shifted(const Tensor& x, double by) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) out.at(r, 0) += by;
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every opening tag is closed or self-closing, in order.
bool tags_balanced(const std::string& svg) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  while ((pos = svg.find('<', pos)) != std::string::npos) {
    const std::size_t end = svg.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = svg.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else {
      stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
    }
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("mmd is symmetric and vanishes on identical sets") {
  Rng rng(1);
  Tensor a = randn({60, 2}, rng), b = randn({50, 2}, rng);
  CHECK(mmd_rbf(a, b, 0.0) == mmd_rbf(b, a, 0.0));
  CHECK(mmd_rbf(a, b, 0.7, false) == mmd_rbf(b, a, 0.7, false));
  CHECK(std::abs(mmd_rbf(a, a, 0.0, false)) < 1e-12);
  CHECK(std::abs(mmd_rbf(a, a, 0.0, true)) < 0.05);
  CHECK(mmd_rbf(a, b, 0.0, false) >= 0.0);
}

TEST_CASE("mmd grows with the offset") {
  Rng rng(2);
  Tensor a = randn({200, 2}, rng), b = randn({200, 2}, rng);
  double prev = -1.0;
  for (double off : {1.0, 2.0, 5.0, 10.0}) {
    double m = mmd_rbf(a, shifted(b, off), 1.0);
    CHECK(m > prev);
    prev = m;
  }
  CHECK(prev > 0.6);  // at most 2/3 for unit bandwidth in 2-D
}

TEST_CASE("mmd errors") {
  CHECK_THROWS_AS(mmd_rbf(Tensor({3, 2}), Tensor({3, 3}), 1.0), ShapeError);
  CHECK_THROWS_AS(mmd_rbf(Tensor({1, 2}), Tensor({3, 2}), 1.0, true), DomainError);
}

TEST_CASE("median bandwidth") {
  Tensor a({2, 1}, {0.0, 1.0}), b({1, 1}, {3.0});
  // Pairwise distances 1, 3, 2.
  CHECK(median_bandwidth(a, b) == 2.0);
}

TEST_CASE("cond_mse averages over rows and dimensions") {
  Tensor conds({3, 1}, {0.0, 1.0, 2.0});
  GroundTruthFn truth = [](std::size_t, std::span<const double> c) { return std::vector<double>{c[0], -c[0]}; };
  Tensor exact({3, 2}, {0.0, 0.0, 1.0, -1.0, 2.0, -2.0});
  CHECK(cond_mse(exact, conds, truth) == 0.0);
  Tensor off = exact;
  for (auto& v : off.storage()) v += 1.0;
  CHECK(cond_mse(off, conds, truth) == 1.0);
  CHECK_THROWS_AS(cond_mse(Tensor({2, 2}), conds, truth), ShapeError);
}

TEST_CASE("ground truth for the mixture and super-resolution") {
  Dataset mix = make_cond_mixture(4, 2.0, 0.1, 8, 1);
  auto truth = ground_truth_for(mix);
  std::vector<double> onehot = {0, 1, 0, 0};
  auto t = truth(0, onehot);
  CHECK(std::abs(t[0]) < 1e-15);
  CHECK(t[1] == doctest::Approx(2.0));
  std::vector<double> bad = {0, 0, 0, 0};
  CHECK_THROWS_AS(truth(0, bad), DomainError);

  Dataset sr = make_toy_sr(16, 4, 0.0, 5, 1);
  auto st = ground_truth_for(sr);
  auto row2 = st(2, sr.c.row(2));
  for (std::size_t j = 0; j < 16; ++j) CHECK(row2[j] == sr.x.at(2, j));
  CHECK_THROWS_AS(st(2, sr.c.row(3)), DomainError);
  CHECK_THROWS_AS(st(99, sr.c.row(0)), DomainError);
}

TEST_CASE("empty report writes nothing") {
  auto dir = std::filesystem::temp_directory_path() / "cdd_test_empty_report";
  std::filesystem::remove_all(dir);
  MetricReport r;
  CHECK_THROWS_AS(emit_report(r, dir), DomainError);
  CHECK_FALSE(std::filesystem::exists(dir));
}

TEST_CASE("report files") {
  auto dir = std::filesystem::temp_directory_path() / "cdd_test_report";
  std::filesystem::remove_all(dir);
  MetricReport r;
  r.rows = {{1, 0, 0.5, 0.25}, {1, 1, 0.7, 0.35}, {4, 0, 0.1, 0.05}};
  r.data_dim = 2;
  r.config_hash = "0123456789abcdef";
  Rng rng(3);
  r.samples[4] = randn({10, 2}, rng);
  r.reference = randn({10, 2}, rng);
  auto files = emit_report(r, dir);
  CHECK(files.size() == 3);
  std::string metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("steps,seed,mmd,cond_mse\n", 0) == 0);
  std::string summary = slurp(dir / "summary.csv");
  CHECK(summary.find("1,0.59999999999999998,0.29999999999999999") != std::string::npos);
  std::string svg = slurp(dir / "scatter_4.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(tags_balanced(svg));
  MetricReport bad = r;
  bad.rows[0].mmd = std::nan("");
  CHECK_THROWS_AS(emit_report(bad, dir / "bad"), NumericError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("17-digit numbers round trip") {
  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = g(rng) * std::pow(10.0, (i % 40) - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("trajectory svg is well formed") {
  Rng rng(5);
  std::vector<Tensor> traj = {randn({1, 16}, rng), randn({1, 16}, rng)};
  Tensor truth = randn({1, 16}, rng);
  std::string svg = trajectory_svg(traj, &truth, "a < b & c");
  CHECK(tags_balanced(svg));
  CHECK(svg.find("a < b") == std::string::npos);
  CHECK(tags_balanced(scatter_svg(randn({5, 2}, rng), nullptr, "plain")));
}
