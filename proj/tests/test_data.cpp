#include <cmath>
#include <filesystem>
#include <fstream>

#include "cdd/data.hpp"
#include "cdd/error.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

double correlation(const Tensor& a, const Tensor& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("mixture centers") {
  auto c = mixture_center(8, 2.0, 2);
  CHECK(std::abs(c[0]) < 1e-15);
  CHECK(c[1] == doctest::Approx(2.0));
  auto c0 = mixture_center(8, 2.0, 0);
  CHECK(c0[0] == 2.0);
  CHECK(c0[1] == 0.0);
}

TEST_CASE("mixture with tiny noise sits on the centers") {
  Dataset d = make_cond_mixture(8, 2.0, 1e-12, 64, 3);
  CHECK(d.size() == 64);
  CHECK(d.data_dim() == 2);
  CHECK(d.cond_dim() == 8);
  std::vector<int> counts(8, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    int hot = -1;
    for (std::size_t k = 0; k < 8; ++k)
      if (d.c.at(i, k) == 1.0) hot = static_cast<int>(k);
    REQUIRE(hot >= 0);
    CHECK(hot == d.labels[i]);
    ++counts[hot];
    auto center = mixture_center(8, 2.0, hot);
    CHECK(std::abs(d.x.at(i, 0) - center[0]) < 1e-10);
    CHECK(std::abs(d.x.at(i, 1) - center[1]) < 1e-10);
  }
  for (int n : counts) CHECK(n == 8);  // balanced
  auto nearest = nearest_mode(d.x, 8, 2.0);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(nearest[i] == d.labels[i]);
}

TEST_CASE("mixture parameter errors") {
  CHECK_THROWS_AS(make_cond_mixture(1, 2.0, 0.1, 10, 0), DomainError);
  CHECK_THROWS_AS(make_cond_mixture(8, 0.0, 0.1, 10, 0), DomainError);
  CHECK_THROWS_AS(make_cond_mixture(8, 2.0, 0.0, 10, 0), DomainError);
  CHECK_THROWS_AS(make_cond_mixture(8, 2.0, 0.1, 0, 0), DomainError);
}

TEST_CASE("average pooling") {
  Tensor ones({2, 16}, 1.0);
  Tensor p = average_pool(ones, 4);
  CHECK(p.cols() == 4);
  for (double v : p.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(average_pool(ones, 5), DomainError);
}

TEST_CASE("noiseless super-resolution conditions are block means") {
  Dataset d = make_toy_sr(16, 4, 0.0, 50, 1);
  CHECK(d.data_dim() == 16);
  CHECK(d.cond_dim() == 4);
  CHECK(d.c.bit_equal(average_pool(d.x, 4)));
  for (double v : d.x.values()) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(make_toy_sr(16, 3, 0.0, 5, 1), DomainError);
  CHECK_THROWS_AS(make_toy_sr(16, 0, 0.0, 5, 1), DomainError);
  CHECK_THROWS_AS(make_toy_sr(16, 4, -0.1, 5, 1), DomainError);
}

TEST_CASE("condition correlation falls with observation noise") {
  double prev = 1.0 + 1e-12;
  for (double noise : {0.0, 0.05, 0.2, 1.0}) {
    Dataset d = make_toy_sr(16, 4, noise, 500, 2);
    double r = correlation(average_pool(d.x, 4), d.c);
    if (noise == 0.0) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("batch iterator") {
  Dataset d = make_cond_mixture(4, 2.0, 0.2, 10, 0);
  BatchIterator a(d, 4, 11), b(d, 4, 11);
  for (int i = 0; i < 6; ++i) {
    auto x = a.next(), y = b.next();
    CHECK(x.x.bit_equal(y.x));
    CHECK(x.eps.bit_equal(y.eps));
    CHECK(x.index == y.index);
    CHECK(x.size() == (i % 3 == 2 ? 2u : 4u));  // short last batch per epoch
    CHECK(x.t.empty());
    for (std::size_t r = 0; r < x.size(); ++r) CHECK(x.x.at(r, 0) == d.x.at(x.index[r], 0));
  }
  CHECK(a.epoch() >= 1);
  CHECK_THROWS_AS(BatchIterator(d, 0, 1), DomainError);
  CHECK_THROWS_AS(BatchIterator(d, 11, 1), DomainError);
}

TEST_CASE("csv datasets") {
  auto dir = std::filesystem::temp_directory_path() / "cdd_test_data";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.csv") << "1,2,0.5\n3,4,-0.5\n";
    std::ofstream(dir / "bad.csv") << "1,2,0.5\n3,x,1\n";
    std::ofstream(dir / "ragged.csv") << "1,2,0.5\n3,4\n";
  }
  Dataset d = load_csv_dataset(dir / "ok.csv", 2);
  CHECK(d.kind == TaskKind::csv);
  CHECK(d.size() == 2);
  CHECK(d.x.at(1, 1) == 4.0);
  CHECK(d.c.at(1, 0) == -0.5);
  CHECK_THROWS_AS(load_csv_dataset(dir / "bad.csv", 2), FormatError);
  CHECK_THROWS_AS(load_csv_dataset(dir / "ragged.csv", 2), FormatError);
  CHECK_THROWS_AS(load_csv_dataset(dir / "ok.csv", 3), FormatError);
  CHECK_THROWS_AS(load_csv_dataset(dir / "missing.csv", 2), IoError);
  std::filesystem::remove_all(dir);
}
