#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace pprl {

// Deterministic float formatting shared by every CSV writer.
std::string format_number(double v);

// Append-only CSV with a fixed, documented schema.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns,
            bool append = false);

  void row(const std::vector<double>& values);
  void flush();

 private:
  std::ofstream out_;
  std::size_t columns_;
};

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Seeded percentile bootstrap over the sample mean.
ConfidenceInterval bootstrap_ci(const std::vector<double>& values,
                                std::size_t resamples, double coverage,
                                std::uint64_t seed);

double mean_of(const std::vector<double>& values);

}  // namespace pprl
