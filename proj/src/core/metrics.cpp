#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pprl {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path,
                     const std::vector<std::string>& columns, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc),
      columns_(columns.size()) {
  if (!out_) throw_io_error("cannot open metrics file: " + path);
  if (!append) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
    out_.flush();
  }
}

void CsvWriter::row(const std::vector<double>& values) {
  require(values.size() == columns_, ErrorCode::invalid_argument,
          "CsvWriter::row: column count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out_ << ',';
    out_ << format_number(values[i]);
  }
  out_ << '\n';
}

void CsvWriter::flush() { out_.flush(); }

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

ConfidenceInterval bootstrap_ci(const std::vector<double>& values,
                                std::size_t resamples, double coverage,
                                std::uint64_t seed) {
  require(!values.empty(), ErrorCode::invalid_argument,
          "bootstrap_ci: empty sample");
  require(coverage > 0.0 && coverage < 1.0, ErrorCode::invalid_argument,
          "bootstrap_ci: coverage must lie in (0,1)");

  Rng rng(seed);
  std::vector<double> means(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum += values[rng.index(values.size())];
    }
    means[r] = sum / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());

  const double tail = (1.0 - coverage) / 2.0;
  auto percentile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return means[lo] * (1.0 - frac) + means[hi] * frac;
  };
  return {percentile(tail), percentile(1.0 - tail)};
}

}  // namespace pprl
