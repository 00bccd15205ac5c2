#pragma once

// Small statistics helpers for the evaluation and defense reports.

#include <span>
#include <vector>

namespace biaslab {

// Pearson chi-square statistic for observed counts against expected counts.
double chi_square_statistic(std::span<const long> observed, std::span<const double> expected);

// Upper-tail p-value of the chi-square distribution with `dof` degrees of
// freedom, via the regularized incomplete gamma function.
double chi_square_p_value(double statistic, int dof);

// Two-sample Kolmogorov-Smirnov statistic (sup distance of empirical CDFs).
double ks_statistic(std::vector<double> a, std::vector<double> b);

double mean(std::span<const double> xs);
// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
double sample_stddev(std::span<const double> xs);

}  // namespace biaslab
