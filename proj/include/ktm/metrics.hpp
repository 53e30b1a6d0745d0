#pragma once

#include <span>
#include <stdexcept>

namespace ktm {

class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Mann-Whitney AUC; ties count one half. Throws MetricError when only one
// class is present or lengths differ.
double auc(std::span<const double> scores, std::span<const double> labels);

double rmse(std::span<const double> scores, std::span<const double> labels);

double mean_of(std::span<const double> values);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev_of(std::span<const double> values);

}  // namespace ktm
