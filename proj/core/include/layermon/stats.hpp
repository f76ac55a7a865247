#pragma once

#include <span>

namespace layermon {

double mean(std::span<const double> xs);

/// Sample standard deviation (n - 1 denominator). Zero for n < 2.
double sample_std(std::span<const double> xs);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Student-t quantile at probability p for df degrees of freedom,
/// p in (0, 1). Inverted from the incomplete-beta CDF by bisection.
double t_quantile(double p, int df);

/// Half-width of the two-sided 95% confidence interval of the mean:
/// t(0.975, n-1) * s / sqrt(n). Zero when n < 2 or all values equal.
double ci95_half_width(std::span<const double> xs);

}  // namespace layermon
