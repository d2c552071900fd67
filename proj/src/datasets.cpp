#include "deptest/datasets.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deptest/errors.hpp"

namespace deptest::datasets {

PairedSample PairedSample::take(const std::vector<int>& idx) const {
  PairedSample out;
  out.x = Matrix(static_cast<int>(idx.size()), x.cols());
  out.y = Matrix(static_cast<int>(idx.size()), y.cols());
  for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
    for (int j = 0; j < x.cols(); ++j) out.x(i, j) = x(idx[i], j);
    for (int j = 0; j < y.cols(); ++j) out.y(i, j) = y(idx[i], j);
  }
  out.prov = prov;
  return out;
}

PairedSample sample_hdgm(int d, int n, numkit::Rng& rng) {
  return sample_hdgm_labeled(d, n, rng, nullptr);
}

PairedSample sample_hdgm_labeled(int d, int n, numkit::Rng& rng, std::vector<int>* components) {
  if (d < 4 || d % 2 != 0) throw ConfigError("hdgm: d must be even and >= 4");
  const int half = d / 2;
  PairedSample s;
  s.x = Matrix(n, half);
  s.y = Matrix(n, half);
  s.prov = {"hdgm", "d=" + std::to_string(d), rng.seed()};
  if (components) components->assign(n, 0);
  for (int i = 0; i < n; ++i) {
    const int comp = static_cast<int>(rng.uniform_int(2));  // 0 or 1
    if (components) (*components)[i] = comp;
    const double rho = comp == 0 ? -0.5 : 0.5;  // 0.5 * (-1)^(comp+1)
    // Display order [X1, Y_{d/2}, X2, Y_{d/2-1}, ...]: odd coordinates go to
    // x, even ones fill y from the top index down. Coordinates 1 and 2 carry
    // the correlated pair.
    const double g1 = rng.normal();
    const double g2 = rng.normal();
    s.x(i, 0) = g1;
    s.y(i, half - 1) = rho * g1 + std::sqrt(1.0 - rho * rho) * g2;
    for (int c = 3; c <= d; ++c) {
      const double z = rng.normal();
      if (c % 2 == 1)
        s.x(i, (c - 1) / 2) = z;
      else
        s.y(i, half - c / 2) = z;
    }
  }
  return s;
}

PairedSample sample_sinusoid(int freq, int n, numkit::Rng& rng, SinusoidInfo* info) {
  if (freq < 1) throw ConfigError("sinusoid: frequency must be >= 1");
  PairedSample s;
  s.x = Matrix(n, 1);
  s.y = Matrix(n, 1);
  s.prov = {"sinusoid", "freq=" + std::to_string(freq), rng.seed()};
  long long proposals = 0;
  for (int i = 0; i < n; ++i) {
    for (;;) {
      ++proposals;
      const double px = rng.uniform(-M_PI, M_PI);
      const double py = rng.uniform(-M_PI, M_PI);
      const double accept_p = 0.5 * (1.0 + std::sin(freq * px) * std::sin(freq * py));
      if (rng.uniform() < accept_p) {
        s.x(i, 0) = px;
        s.y(i, 0) = py;
        break;
      }
    }
  }
  if (info) {
    info->proposals = proposals;
    info->accepted = n;
  }
  return s;
}

PairedSample shuffle_to_null(const PairedSample& sample, numkit::Rng& rng) {
  PairedSample out = sample;
  const std::vector<int> perm = rng.permutation(sample.m());
  for (int i = 0; i < sample.m(); ++i)
    for (int j = 0; j < sample.y.cols(); ++j) out.y(i, j) = sample.y(perm[i], j);
  out.prov.generator = sample.prov.generator + "+shuffled";
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double* out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

}  // namespace

CsvLoadResult load_paired_csv(const std::string& path, const std::vector<std::string>& x_columns,
                              const std::vector<std::string>& y_columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty csv: " + path);
  const auto header = split_csv_line(line);
  auto col_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return static_cast<int>(i);
    throw DataError("csv column not found: " + name);
  };
  std::vector<int> xi, yi;
  for (const auto& c : x_columns) xi.push_back(col_index(c));
  for (const auto& c : y_columns) yi.push_back(col_index(c));

  std::vector<std::vector<double>> xr, yr;
  int dropped = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    std::vector<double> xv(xi.size()), yv(yi.size());
    bool ok = true;
    for (std::size_t k = 0; k < xi.size() && ok; ++k)
      ok = xi[k] < static_cast<int>(cells.size()) && parse_double(cells[xi[k]], &xv[k]);
    for (std::size_t k = 0; k < yi.size() && ok; ++k)
      ok = yi[k] < static_cast<int>(cells.size()) && parse_double(cells[yi[k]], &yv[k]);
    if (!ok) {
      ++dropped;
      continue;
    }
    xr.push_back(std::move(xv));
    yr.push_back(std::move(yv));
  }
  if (xr.empty()) throw DataError("csv has no usable rows: " + path);
  CsvLoadResult res;
  res.sample.x = Matrix::from_rows(xr);
  res.sample.y = Matrix::from_rows(yr);
  res.sample.prov = {"csv", path, 0};
  res.dropped_rows = dropped;
  return res;
}

void save_paired_csv(const PairedSample& sample, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open csv for writing: " + path);
  for (int j = 0; j < sample.dx(); ++j) out << "x" << j << ",";
  for (int j = 0; j < sample.dy(); ++j) out << "y" << j << (j + 1 < sample.dy() ? "," : "");
  out << "\n";
  char buf[40];
  for (int i = 0; i < sample.m(); ++i) {
    for (int j = 0; j < sample.dx(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", sample.x(i, j));
      out << buf << ",";
    }
    for (int j = 0; j < sample.dy(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", sample.y(i, j));
      out << buf << (j + 1 < sample.dy() ? "," : "");
    }
    out << "\n";
  }
  if (!out) throw DataError("csv write failed: " + path);
}

}  // namespace deptest::datasets
