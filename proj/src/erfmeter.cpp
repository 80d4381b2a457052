#include "lakd/erfmeter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace lakd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Lanczos g=7, 9-coefficient approximation
constexpr double kLanczosG = 7.0;
constexpr double kLanczos[9] = {
    0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
    771.32342877765313,       -176.61502916214059,   12.507343278686905,
    -0.13857109526572012,     9.9843695780195716e-6, 1.5056327351493116e-7};

}  // namespace

double gamma_fn(double z) {
    if (!(z > 0.0))
        throw std::invalid_argument("gamma_fn requires z > 0, got " + std::to_string(z));
    if (z < 0.5)
        return kPi / (std::sin(kPi * z) * gamma_fn(1.0 - z));
    z -= 1.0;
    double x = kLanczos[0];
    for (int i = 1; i < 9; ++i) x += kLanczos[i] / (z + i);
    const double t = z + kLanczosG + 0.5;
    return std::sqrt(2.0 * kPi) * std::pow(t, z + 0.5) * std::exp(-t) * x;
}

double gnd_pdf(const GndParams& p, double x) {
    if (!(p.sigma > 0.0) || !(p.beta > 0.0))
        throw std::invalid_argument("gnd_pdf requires sigma > 0 and beta > 0");
    const double u = std::abs((x - p.mu) / p.sigma);
    const double amp = p.c1 * p.beta / (2.0 * p.sigma * gamma_fn(1.0 / p.beta));
    return amp * std::exp(-std::pow(u, p.beta)) + p.c2;
}

namespace {

// q = (log sigma, log beta, mu, c1, c2)
struct FitPoint {
    double x, y;
};

GndParams unpack(const double q[5]) {
    GndParams p;
    p.sigma = std::exp(q[0]);
    p.beta = std::exp(q[1]);
    p.mu = q[2];
    p.c1 = q[3];
    p.c2 = q[4];
    return p;
}

double sum_sq_residuals(const double q[5], const std::vector<FitPoint>& pts) {
    const GndParams p = unpack(q);
    double ss = 0.0;
    for (const auto& pt : pts) {
        const double r = gnd_pdf(p, pt.x) - pt.y;
        ss += r * r;
    }
    return ss;
}

// rows of the Jacobian of residuals wrt q; d/dbeta by central differences
void jacobian_row(const double q[5], double x, double out[5]) {
    const GndParams p = unpack(q);
    const double u = std::abs((x - p.mu) / p.sigma);
    const double ub = std::pow(u, p.beta);
    const double e = std::exp(-ub);
    const double base = p.beta / (2.0 * p.sigma * gamma_fn(1.0 / p.beta));
    const double a = p.c1 * base;

    out[0] = a * e * (p.beta * ub - 1.0);  // d/d log sigma
    {
        const double h = 1e-5 * p.beta;
        GndParams pp = p, pm = p;
        pp.beta = p.beta + h;
        pm.beta = p.beta - h;
        const double dfdb = (gnd_pdf(pp, x) - gnd_pdf(pm, x)) / (2.0 * h);
        out[1] = p.beta * dfdb;  // d/d log beta
    }
    if (u == 0.0) {
        out[2] = 0.0;
    } else {
        const double sign = (x - p.mu) >= 0.0 ? 1.0 : -1.0;
        out[2] = a * e * p.beta * std::pow(u, p.beta - 1.0) * sign / p.sigma;
    }
    out[3] = base * e;
    out[4] = 1.0;
}

// solve 5x5 system with partial pivoting; returns false if singular
bool solve5(double m[5][5], double rhs[5], double out[5]) {
    int piv[5] = {0, 1, 2, 3, 4};
    for (int col = 0; col < 5; ++col) {
        int best = col;
        for (int r = col + 1; r < 5; ++r)
            if (std::abs(m[r][col]) > std::abs(m[best][col])) best = r;
        if (std::abs(m[best][col]) < 1e-300) return false;
        std::swap(m[col], m[best]);
        std::swap(rhs[col], rhs[best]);
        std::swap(piv[col], piv[best]);
        for (int r = col + 1; r < 5; ++r) {
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 5; ++c) m[r][c] -= f * m[col][c];
            rhs[r] -= f * rhs[col];
        }
    }
    for (int r = 4; r >= 0; --r) {
        double s = rhs[r];
        for (int c = r + 1; c < 5; ++c) s -= m[r][c] * out[c];
        out[r] = s / m[r][r];
    }
    return true;
}

}  // namespace

GndParams fit_gnd(const ErfProfile& profile) {
    const std::size_t n = profile.xs.size();
    if (n < 16 || profile.ys.size() != n)
        throw std::invalid_argument("fit_gnd needs a profile of at least 16 points");
    std::vector<FitPoint> pts(n);
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -std::numeric_limits<double>::infinity();
    std::size_t imax = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(profile.xs[i]) || !std::isfinite(profile.ys[i]))
            throw std::invalid_argument("fit_gnd: non-finite profile value at index " +
                                        std::to_string(i));
        pts[i] = {profile.xs[i], profile.ys[i]};
        ymin = std::min(ymin, profile.ys[i]);
        if (profile.ys[i] > ymax) {
            ymax = profile.ys[i];
            imax = i;
        }
    }
    if (ymax == ymin) throw std::invalid_argument("fit_gnd: profile is constant");

    // moment-style initialization: center at the peak, offset at the floor,
    // scale from the half-width at half max, amplitude matching the peak
    const double mu0 = profile.xs[imax];
    const double c20 = ymin;
    const double beta0 = 1.5;
    const double half = c20 + (ymax - c20) / 2.0;
    double left = profile.xs.front(), right = profile.xs.back();
    for (std::size_t i = imax; i-- > 0;)
        if (profile.ys[i] < half) {
            left = profile.xs[i];
            break;
        }
    for (std::size_t i = imax + 1; i < n; ++i)
        if (profile.ys[i] < half) {
            right = profile.xs[i];
            break;
        }
    double sigma0 = (right - left) / 2.0;
    if (!(sigma0 > 0.0)) sigma0 = (profile.xs.back() - profile.xs.front()) / 8.0;
    const double c10 = (ymax - c20) * 2.0 * sigma0 * gamma_fn(1.0 / beta0) / beta0;

    double q[5] = {std::log(sigma0), std::log(beta0), mu0, c10, c20};
    double ss = sum_sq_residuals(q, pts);
    double best_q[5];
    std::copy(q, q + 5, best_q);
    double best_ss = ss;

    double lambda = 1e-3;
    bool converged = false;
    for (int iter = 0; iter < 200 && !converged; ++iter) {
        double jtj[5][5] = {};
        double jtr[5] = {};
        const GndParams p = unpack(q);
        double row[5];
        for (const auto& pt : pts) {
            jacobian_row(q, pt.x, row);
            const double r = gnd_pdf(p, pt.x) - pt.y;
            for (int a = 0; a < 5; ++a) {
                jtr[a] += row[a] * r;
                for (int b = a; b < 5; ++b) jtj[a][b] += row[a] * row[b];
            }
        }
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < a; ++b) jtj[a][b] = jtj[b][a];

        bool stepped = false;
        while (lambda <= 1e12) {
            double m[5][5];
            double rhs[5];
            for (int a = 0; a < 5; ++a) {
                for (int b = 0; b < 5; ++b) m[a][b] = jtj[a][b];
                m[a][a] += lambda * std::max(jtj[a][a], 1e-12);
                rhs[a] = -jtr[a];
            }
            double delta[5];
            if (solve5(m, rhs, delta)) {
                double qn[5];
                for (int a = 0; a < 5; ++a) qn[a] = q[a] + delta[a];
                // keep exp() in range
                qn[0] = std::clamp(qn[0], -30.0, 30.0);
                qn[1] = std::clamp(qn[1], -10.0, 10.0);
                const double ssn = sum_sq_residuals(qn, pts);
                if (std::isfinite(ssn) && ssn < ss) {
                    const double rel = (ss - ssn) / std::max(ss, 1e-300);
                    std::copy(qn, qn + 5, q);
                    ss = ssn;
                    if (ss < best_ss) {
                        best_ss = ss;
                        std::copy(q, q + 5, best_q);
                    }
                    lambda = std::max(lambda / 10.0, 1e-12);
                    stepped = true;
                    if (rel < 1e-12) converged = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if (!stepped) {
            // damping exhausted: we are at a (numerical) stationary point
            converged = true;
        }
    }

    GndParams out = unpack(best_q);
    out.converged = converged;

    double mean_y = 0.0;
    for (const auto& pt : pts) mean_y += pt.y;
    mean_y /= static_cast<double>(n);
    double ss_tot = 0.0;
    for (const auto& pt : pts) ss_tot += (pt.y - mean_y) * (pt.y - mean_y);
    out.r_squared = 1.0 - best_ss / ss_tot;
    return out;
}

ErfmScore erfm(const GndParams& p, double max_x) {
    if (!(p.sigma > 0.0) || !(p.beta > 0.0))
        throw std::invalid_argument("erfm requires sigma > 0 and beta > 0");
    if (max_x < 0.0) throw std::invalid_argument("erfm requires max_x >= 0");
    ErfmScore s;
    s.sigma = p.sigma;
    s.beta = p.beta;
    s.log_term = std::log(max_x + 1.0);
    s.value = p.sigma / (std::sqrt(2.0) * p.beta) * s.log_term;
    return s;
}

CorrelationResult pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw std::invalid_argument("pearson_r: length mismatch " + std::to_string(xs.size()) +
                                    " vs " + std::to_string(ys.size()));
    const std::size_t n = xs.size();
    if (n < 2) throw std::invalid_argument("pearson_r needs at least 2 samples");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("pearson_r: zero variance in input");
    CorrelationResult res;
    res.r = sxy / std::sqrt(sxx * syy);
    res.n = static_cast<int>(n);
    return res;
}

std::string fit_report_json(const GndParams& p, double max_value, const std::string& layer) {
    nlohmann::json j;
    j["sigma"] = p.sigma;
    j["beta"] = p.beta;
    j["mu"] = p.mu;
    j["c1"] = p.c1;
    j["c2"] = p.c2;
    j["r_squared"] = p.r_squared;
    j["erfm"] = erfm(p, max_value).value;
    j["max_value"] = max_value;
    j["layer"] = layer;
    j["converged"] = p.converged;
    return j.dump(2);
}

GndParams fit_report_from_json(const std::string& text, double* max_value,
                               std::string* layer) {
    nlohmann::json j = nlohmann::json::parse(text);
    GndParams p;
    p.sigma = j.at("sigma").get<double>();
    p.beta = j.at("beta").get<double>();
    p.mu = j.at("mu").get<double>();
    p.c1 = j.at("c1").get<double>();
    p.c2 = j.at("c2").get<double>();
    p.r_squared = j.at("r_squared").get<double>();
    if (j.contains("converged")) p.converged = j.at("converged").get<bool>();
    if (max_value) *max_value = j.at("max_value").get<double>();
    if (layer) *layer = j.value("layer", std::string());
    return p;
}

std::string fit_curve_csv(const ErfProfile& profile, const GndParams& p) {
    std::ostringstream os;
    os << "x,y,fx\n";
    os.precision(10);
    for (std::size_t i = 0; i < profile.xs.size(); ++i)
        os << profile.xs[i] << "," << profile.ys[i] << "," << gnd_pdf(p, profile.xs[i])
           << "\n";
    return os.str();
}

}  // namespace lakd
