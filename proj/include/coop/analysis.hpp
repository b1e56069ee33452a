#pragma once

// Divergence/gain statistics: the OLS fit of specialization divergence
// against cooperative gain, its 95% slope interval (t-distribution, n-2
// dof), gain prediction, conversion rates, and the Pearson correlation of
// log base perplexity with conversion efficiency.
//
// The t quantile is computed here by inverting the exact CDF (regularized
// incomplete beta via a Lentz continued fraction, then bisection), so no
// statistics library is needed and the result is far inside the 1e-6
// accuracy the interval requires.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"

namespace coop {

struct divergence_record {
    std::string domain;
    double base_loss = 0.0;
    double specialist_loss = 0.0;
    double divergence_pct = 0.0;
};

// how far the specialist moved below the base, in percent of the base loss
inline double divergence(double base_loss, double specialist_loss) {
    if (!(base_loss > 0.0))
        throw validation_error(cat("divergence: base loss must be positive, got ", base_loss));
    return 100.0 * (base_loss - specialist_loss) / base_loss;
}

inline divergence_record make_divergence_record(const std::string& domain, double base_loss,
                                                double specialist_loss) {
    return {domain, base_loss, specialist_loss, divergence(base_loss, specialist_loss)};
}

namespace stats_detail {

// continued fraction for the regularized incomplete beta (Lentz's method)
inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-16, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw validation_error("statistics: incomplete beta did not converge");
}

inline double inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

} // namespace stats_detail

inline double student_t_cdf(double t, double dof) {
    if (dof <= 0) throw validation_error(cat("statistics: t dof must be positive, got ", dof));
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * stats_detail::inc_beta(dof / 2.0, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

inline double t_quantile(double p, int dof) {
    if (!(p > 0.0 && p < 1.0))
        throw validation_error(cat("statistics: quantile level ", p, " outside (0, 1)"));
    if (dof < 1) throw validation_error(cat("statistics: t dof must be >= 1, got ", dof));
    double lo = -1e8, hi = 1e8;
    for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++i) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct regression_fit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double slope_se = 0.0;
    double slope_ci_low = 0.0;
    double slope_ci_high = 0.0;
    int n = 0;
};

// ordinary least squares of gain (y) on divergence (x) with the 95% slope
// interval from the t-distribution at n-2 dof
inline regression_fit fit_divergence_gain(const std::vector<std::pair<double, double>>& points) {
    const int n = int(points.size());
    if (n < 3)
        throw validation_error(cat("fit: need at least 3 points, got ", n));
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : points) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if (sxx < 1e-12)
        throw validation_error("fit: divergence values are all (nearly) equal, slope undefined");

    regression_fit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (const auto& [x, y] : points) {
        const double e = y - (f.slope * x + f.intercept);
        ss_res += e * e;
    }
    f.r_squared = syy < 1e-300 ? 1.0 : 1.0 - ss_res / syy;
    f.slope_se = std::sqrt(ss_res / double(n - 2) / sxx);
    const double t = t_quantile(0.975, n - 2);
    f.slope_ci_low = f.slope - t * f.slope_se;
    f.slope_ci_high = f.slope + t * f.slope_se;
    return f;
}

inline double predict_gain(const regression_fit& f, double divergence_pct) {
    return f.slope * divergence_pct + f.intercept;
}

// divergence below which the fit predicts no gain
inline double zero_gain_divergence(const regression_fit& f) {
    if (f.slope == 0.0) throw validation_error("fit: zero slope has no zero-gain crossing");
    return -f.intercept / f.slope;
}

// how much of the specialists' divergence the fused model recovers as gain
inline double conversion_rate(double gain_pct, double mean_divergence_pct) {
    if (!(mean_divergence_pct > 0.0))
        throw validation_error(cat("conversion_rate: mean divergence must be positive, got ",
                                   mean_divergence_pct));
    return gain_pct / mean_divergence_pct;
}

inline double pearson(const std::vector<std::pair<double, double>>& points) {
    const int n = int(points.size());
    if (n < 2) throw validation_error(cat("pearson: need at least 2 points, got ", n));
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : points) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if (sxx < 1e-300 || syy < 1e-300)
        throw validation_error("pearson: zero variance in one of the variables");
    return sxy / std::sqrt(sxx * syy);
}

// correlation of log base perplexity with conversion efficiency
inline double correlate_base_competence(const std::vector<std::pair<double, double>>& ppl_conv) {
    if (ppl_conv.size() < 3)
        throw validation_error(cat("correlate: need at least 3 conditions, got ",
                                   ppl_conv.size()));
    std::vector<std::pair<double, double>> logged;
    for (const auto& [ppl, conv] : ppl_conv) {
        if (!(ppl > 0.0))
            throw validation_error(cat("correlate: perplexity must be positive, got ", ppl));
        logged.push_back({std::log(ppl), conv});
    }
    return pearson(logged);
}

} // namespace coop
