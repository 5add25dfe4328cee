#include "cdd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdd/error.hpp"

namespace cdd {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

double med(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double size = 400.0;
  static constexpr double pad = 30.0;
  double px(double x) const { return pad + (x - x0) / (x1 - x0) * (size - 2 * pad); }
  double py(double y) const { return size - pad - (y - y0) / (y1 - y0) * (size - 2 * pad); }
};

Frame fit_frame(std::initializer_list<const Tensor*> sets, bool two_d) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  double xlo = lo, xhi = -lo;
  for (const Tensor* t : sets) {
    if (!t) continue;
    for (std::size_t i = 0; i < t->rows(); ++i) {
      if (two_d) {
        xlo = std::min(xlo, t->at(i, 0));
        xhi = std::max(xhi, t->at(i, 0));
        lo = std::min(lo, t->at(i, 1));
        hi = std::max(hi, t->at(i, 1));
      } else {
        for (double v : t->row(i)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
  }
  if (!std::isfinite(lo)) lo = -1, hi = 1;
  if (hi - lo < 1e-9) lo -= 1, hi += 1;
  if (!two_d || !std::isfinite(xlo)) xlo = 0, xhi = 1;
  if (xhi - xlo < 1e-9) xlo -= 1, xhi += 1;
  return {xlo, xhi, lo, hi};
}

std::string svg_open(const std::string& title) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"400\" height=\"400\" fill=\"white\"/>\n"
     << "<text x=\"10\" y=\"18\" font-size=\"12\">" << xml_escape(title) << "</text>\n";
  return os.str();
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double median_bandwidth(const Tensor& a, const Tensor& b) {
  std::vector<const Tensor*> sets{&a, &b};
  std::vector<std::span<const double>> rows;
  for (auto* t : sets)
    for (std::size_t i = 0; i < t->rows(); ++i) rows.push_back(t->row(i));
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back(std::sqrt(sq_dist(rows[i], rows[j])));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth, bool unbiased) {
  if (a.empty() || b.empty()) throw DomainError("mmd_rbf: sample sets must be non-empty");
  if (a.cols() != b.cols()) {
    throw ShapeError("mmd_rbf: dimension mismatch " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  const double h = bandwidth > 0.0 ? bandwidth : median_bandwidth(a, b);
  const double inv = 1.0 / (2.0 * h * h);
  auto within = [&](const Tensor& s) {
    const std::size_t n = s.rows();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) acc += 2.0 * std::exp(-sq_dist(s.row(i), s.row(j)) * inv);
    }
    if (unbiased) {
      if (n < 2) throw DomainError("mmd_rbf: unbiased estimator needs at least 2 samples per set");
      return acc / static_cast<double>(n * (n - 1));
    }
    return (acc + static_cast<double>(n)) / static_cast<double>(n * n);
  };
  // Fixed summation order for the cross term, so swapping the arguments
  // gives the same bits.
  const bool swap = std::lexicographical_compare(b.values().begin(), b.values().end(), a.values().begin(),
                                                 a.values().end());
  const Tensor& p = swap ? b : a;
  const Tensor& q = swap ? a : b;
  double cross = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < q.rows(); ++j) cross += std::exp(-sq_dist(p.row(i), q.row(j)) * inv);
  cross /= static_cast<double>(a.rows() * b.rows());
  return within(a) + within(b) - 2.0 * cross;
}

GroundTruthFn ground_truth_for(const Dataset& data) {
  if (data.kind == TaskKind::mixture) {
    const std::size_t modes = data.modes;
    const double radius = data.radius;
    return [modes, radius](std::size_t, std::span<const double> c) {
      if (c.size() != modes) throw DomainError("cond_mse: condition width does not match the mixture");
      std::size_t hot = modes;
      for (std::size_t k = 0; k < modes; ++k) {
        if (c[k] == 1.0) {
          if (hot != modes) hot = modes + 1;
          else hot = k;
        } else if (c[k] != 0.0) {
          hot = modes + 1;
          break;
        }
      }
      if (hot >= modes) throw DomainError("cond_mse: condition is not a one-hot mixture label");
      return mixture_center(modes, radius, hot);
    };
  }
  const Dataset* d = &data;
  return [d](std::size_t row, std::span<const double> c) {
    if (row >= d->size()) throw DomainError("cond_mse: condition row " + std::to_string(row) + " not in dataset");
    auto stored = d->c.row(row);
    if (c.size() != stored.size() || !std::equal(c.begin(), c.end(), stored.begin())) {
      throw DomainError("cond_mse: condition for row " + std::to_string(row) + " is unknown");
    }
    auto x = d->x.row(row);
    return std::vector<double>(x.begin(), x.end());
  };
}

double cond_mse(const Tensor& samples, const Tensor& conditions, const GroundTruthFn& truth) {
  if (samples.rows() != conditions.rows()) throw ShapeError("cond_mse: samples and conditions differ in rows");
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto target = truth(i, conditions.row(i));
    if (target.size() != samples.cols()) throw ShapeError("cond_mse: target width mismatch");
    for (std::size_t j = 0; j < samples.cols(); ++j) {
      const double d = samples.at(i, j) - target[j];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(samples.size());
}

double MetricReport::median(int steps, bool mmd) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.steps == steps) v.push_back(mmd ? r.mmd : r.cond_mse);
  return med(std::move(v));
}

MetricReport evaluate_model(const AdaptedModel& model, const NoiseSchedule& sched, const Dataset& eval,
                            std::span<const int> steps, std::span<const std::uint64_t> seeds) {
  MetricReport rep;
  rep.seeds.assign(seeds.begin(), seeds.end());
  rep.data_dim = eval.data_dim();
  rep.reference = eval.x;
  const GroundTruthFn truth = ground_truth_for(eval);
  // One bandwidth per report, fixed from the reference against itself.
  rep.bandwidth = median_bandwidth(eval.x, eval.x);
  for (int k : steps) {
    for (std::uint64_t seed : seeds) {
      SampleRun run = sample(model, sched, eval.c, k, seed);
      MetricRow row{k, seed, mmd_rbf(run.output(), eval.x, rep.bandwidth), cond_mse(run.output(), eval.c, truth)};
      if (!std::isfinite(row.mmd) || !std::isfinite(row.cond_mse)) {
        throw NumericError("non-finite metric at K = " + std::to_string(k) + ", seed " + std::to_string(seed));
      }
      rep.rows.push_back(row);
      if (!rep.samples.count(k)) {
        rep.samples[k] = run.output();
        std::vector<Tensor> traj;
        const std::size_t first = 0;
        for (const auto& xh : run.x_hat) traj.push_back(select_rows(xh, std::span<const std::size_t>(&first, 1)));
        rep.trajectories[k] = std::move(traj);
      }
    }
  }
  if (eval.size() > 0) {
    const std::size_t first = 0;
    rep.trajectory_truth = select_rows(eval.x, std::span<const std::size_t>(&first, 1));
  }
  return rep;
}

std::string scatter_svg(const Tensor& samples, const Tensor* reference, const std::string& title) {
  Frame f = fit_frame({&samples, reference}, true);
  std::ostringstream os;
  os << svg_open(title);
  auto dots = [&](const Tensor& t, const char* color, double r) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      os << "<circle cx=\"" << f.px(t.at(i, 0)) << "\" cy=\"" << f.py(t.at(i, 1)) << "\" r=\"" << r
         << "\" fill=\"" << color << "\" fill-opacity=\"0.5\"/>\n";
    }
  };
  if (reference) dots(*reference, "#999999", 1.5);
  dots(samples, "#1f77b4", 2.0);
  os << "</svg>\n";
  return os.str();
}

std::string trajectory_svg(const std::vector<Tensor>& x_hat, const Tensor* truth, const std::string& title) {
  Frame f{0, 1, -1, 1};
  {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto scan = [&](const Tensor& t) {
      for (double v : t.values()) lo = std::min(lo, v), hi = std::max(hi, v);
    };
    for (const auto& t : x_hat) scan(t);
    if (truth) scan(*truth);
    if (std::isfinite(lo) && hi - lo > 1e-9) f.y0 = lo, f.y1 = hi;
  }
  std::ostringstream os;
  os << svg_open(title);
  auto line = [&](const Tensor& t, const std::string& color, double width) {
    const std::size_t n = t.size();
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double x = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
      os << (i ? " " : "") << f.px(x) << ',' << f.py(t[i]);
    }
    os << "\"/>\n";
  };
  for (std::size_t k = 0; k < x_hat.size(); ++k) {
    const double shade = x_hat.size() > 1 ? static_cast<double>(k) / static_cast<double>(x_hat.size() - 1) : 1.0;
    const int g = static_cast<int>(200 - 150 * shade);
    line(x_hat[k], "rgb(" + std::to_string(g) + "," + std::to_string(g) + ",255)", 1.5);
  }
  if (truth) line(*truth, "#d62728", 2.0);
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const MetricReport& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw DomainError("emit_report: report has no metrics");
  for (const auto& r : report.rows) {
    if (!std::isfinite(r.mmd) || !std::isfinite(r.cond_mse)) throw NumericError("emit_report: non-finite metric");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  {
    std::ostringstream os;
    os << "steps,seed,mmd,cond_mse\n";
    for (const auto& r : report.rows) {
      os << r.steps << ',' << r.seed << ',' << format_double(r.mmd) << ',' << format_double(r.cond_mse) << '\n';
    }
    write_file(dir / "metrics.csv", os.str());
    written.push_back(dir / "metrics.csv");
  }
  {
    std::vector<int> ks;
    for (const auto& r : report.rows)
      if (std::find(ks.begin(), ks.end(), r.steps) == ks.end()) ks.push_back(r.steps);
    std::ostringstream os;
    os << "steps,median_mmd,median_cond_mse,bandwidth,config_hash\n";
    for (int k : ks) {
      os << k << ',' << format_double(report.median(k, true)) << ',' << format_double(report.median(k, false)) << ','
         << format_double(report.bandwidth) << ',' << report.config_hash << '\n';
    }
    for (const auto& [name, v] : report.scalars) os << "# " << name << " = " << format_double(v) << '\n';
    write_file(dir / "summary.csv", os.str());
    written.push_back(dir / "summary.csv");
  }
  if (report.data_dim == 2) {
    for (const auto& [k, s] : report.samples) {
      auto path = dir / ("scatter_" + std::to_string(k) + ".svg");
      write_file(path, scatter_svg(s, report.reference ? &*report.reference : nullptr,
                                   "samples, " + std::to_string(k) + " steps"));
      written.push_back(path);
    }
  } else if (!report.trajectories.empty()) {
    // Largest K shows the most intermediate estimates.
    const auto& [k, traj] = *report.trajectories.rbegin();
    auto path = dir / "trajectory.svg";
    write_file(path, trajectory_svg(traj, report.trajectory_truth ? &*report.trajectory_truth : nullptr,
                                    "x_hat per step, " + std::to_string(k) + " steps"));
    written.push_back(path);
  }
  return written;
}

}  // namespace cdd
