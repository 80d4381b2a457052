#pragma once

#include <string>
#include <vector>

#include "lakd/erf.hpp"

namespace lakd {

/// Fitted generalized-normal PDF parameters plus goodness of fit.
struct GndParams {
    double sigma = 1.0;  // scale, > 0
    double beta = 2.0;   // shape, > 0
    double mu = 0.0;     // center
    double c1 = 1.0;     // amplitude
    double c2 = 0.0;     // offset
    double r_squared = 0.0;
    bool converged = true;
};

struct ErfmScore {
    double value = 0.0;
    double sigma = 0.0;
    double beta = 0.0;
    double log_term = 0.0;  // log(max + 1)
};

struct CorrelationResult {
    double r = 0.0;
    int n = 0;
};

/// Gamma function via Lanczos approximation (g=7, 9 coefficients).
double gamma_fn(double z);

/// c1 * beta / (2 sigma Gamma(1/beta)) * exp(-|(x-mu)/sigma|^beta) + c2
double gnd_pdf(const GndParams& p, double x);

/// Levenberg-Marquardt least-squares fit of the GND PDF to a scanline.
/// sigma and beta stay positive through log-reparameterization.
GndParams fit_gnd(const ErfProfile& profile);

/// ERFM = sigma / (sqrt(2) beta) * ln(max_x + 1)
ErfmScore erfm(const GndParams& p, double max_x);

CorrelationResult pearson_r(const std::vector<double>& xs, const std::vector<double>& ys);

/// JSON fit report {sigma, beta, mu, c1, c2, r_squared, erfm, max_value, layer}.
std::string fit_report_json(const GndParams& p, double max_value, const std::string& layer);
GndParams fit_report_from_json(const std::string& text, double* max_value = nullptr,
                               std::string* layer = nullptr);

/// CSV rows "x,y,fx" for external plotting.
std::string fit_curve_csv(const ErfProfile& profile, const GndParams& p);

}  // namespace lakd
