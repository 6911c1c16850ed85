#pragma once

/**
 * @file observables.hpp
 * @brief Measurable quantities derived from a polarisation field: hyperfine
 *        variance, cross-relaxation rates, spectra and relaxation curves,
 *        polarised spin counts and enhancement over thermal polarisation.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crip/error.hpp"
#include "crip/pde.hpp"
#include "crip/spin.hpp"

namespace crip {

// ---------------------------------------------------------------------------
//  Hyperfine variance and cross-relaxation
// ---------------------------------------------------------------------------

namespace detail {

/// Per-cell integral of A^2 over the cell volume [rad^2/s^2 nm^3], zero outside the ensemble.
inline std::vector<double> coupling_weights(const Mesh& mesh, const TargetEnsemble& ensemble,
                                            const CouplingModel& model, const NvProbe& probe) {
    std::vector<double> w(mesh.size(), 0.0);
    if (mesh.radial()) {
        const double c2 = model.prefactor * model.prefactor * kernel_mean_square(model.kernel);
        const auto& f = mesh.faces();
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = c2 * shell_integral_inv_r6(f[i], f[i + 1], model.cutoff_radius);
        return w;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Vec3& c = mesh.centers()[i];
        if (!geometry_contains(ensemble.geometry, c, probe.depth)) continue;
        const double a = hyperfine_coupling(model, c, probe.axis);
        w[i] = a * a * mesh.volumes()[i];
    }
    return w;
}

}  // namespace detail

/// A_P^2 = (n_t / 2) * integral of (1 - P) A^2 [rad^2/s^2].
inline double hyperfine_variance(const PolarizationField& field, const TargetEnsemble& ensemble,
                                 const CouplingModel& model, const NvProbe& probe) {
    const auto w = detail::coupling_weights(*field.mesh, ensemble, model, probe);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (1.0 - field.values[i]) * w[i];
    return 0.5 * ensemble.number_density * s;
}

/// Share of A_P^2 contributed by cells on a far boundary; above 1% the domain truncates the integral.
inline double variance_tail_fraction(const PolarizationField& field, const TargetEnsemble& ensemble,
                                     const CouplingModel& model, const NvProbe& probe) {
    const auto& mesh = *field.mesh;
    const auto w = detail::coupling_weights(mesh, ensemble, model, probe);
    std::vector<char> on_far(mesh.size(), 0);
    for (const auto& f : mesh.boundary_faces())
        if (is_far_boundary_face(mesh, ensemble, probe, f.face)) on_far[f.cell] = 1;
    double total = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double c = (1.0 - field.values[i]) * w[i];
        total += c;
        if (on_far[i]) tail += c;
    }
    return total > 0.0 ? tail / total : 0.0;
}

/// Lorentzian cross-relaxation rate; detuning in rad/s.
inline double cross_relaxation_rate(double variance, double dephasing_rate, double detuning) {
    require(dephasing_rate > 0.0, "cross_relaxation_rate: dephasing rate must be > 0");
    return variance * dephasing_rate / (2.0 * dephasing_rate * dephasing_rate + 2.0 * detuning * detuning);
}

inline double total_rate(double cross_relaxation, const NvProbe& probe) {
    require(cross_relaxation >= 0.0, "total_rate: rates must be >= 0");
    return probe.background_rate + cross_relaxation;
}

// ---------------------------------------------------------------------------
//  Relaxation curves
// ---------------------------------------------------------------------------

struct RelaxationCurve {
    std::vector<double> taus;
    std::vector<double> signal;
    double rate = 0.0;
    double baseline = 0.0;
    double amplitude = 0.0;
};

inline constexpr double default_pl_baseline = 1.0;
inline constexpr double default_pl_amplitude = 0.1;

inline RelaxationCurve relaxation_curve(double rate, std::vector<double> taus, double baseline = default_pl_baseline,
                                        double amplitude = default_pl_amplitude) {
    for (std::size_t i = 1; i < taus.size(); ++i)
        require(taus[i] > taus[i - 1], "relaxation_curve: taus must be strictly increasing");
    RelaxationCurve c{std::move(taus), {}, rate, baseline, amplitude};
    c.signal.reserve(c.taus.size());
    for (double t : c.taus) c.signal.push_back(baseline + amplitude * std::exp(-rate * t));
    return c;
}

class FitError : public std::runtime_error {
public:
    enum class Kind { Unidentifiable, NonConvergence };
    FitError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct RateFit {
    double rate = 0.0;
    double baseline = 0.0;
    double amplitude = 0.0;
    double residual_norm = 0.0;
};

namespace detail {

/// Linear least squares for (baseline, amplitude) at fixed rate; returns the residual sum of squares.
inline double fit_linear_part(std::span<const double> t, std::span<const double> y, double rate, double& baseline,
                              double& amplitude) {
    double s1 = 0, se = 0, see = 0, sy = 0, sey = 0;
    const double n = static_cast<double>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double e = std::exp(-rate * t[i]);
        se += e;
        see += e * e;
        sy += y[i];
        sey += e * y[i];
    }
    s1 = n;
    const double det = s1 * see - se * se;
    if (std::abs(det) <= 1e-14 * s1 * see) {
        baseline = sy / n;
        amplitude = 0.0;
    } else {
        baseline = (see * sy - se * sey) / det;
        amplitude = (s1 * sey - se * sy) / det;
    }
    double ssr = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double r = y[i] - baseline - amplitude * std::exp(-rate * t[i]);
        ssr += r * r;
    }
    return ssr;
}

}  // namespace detail

/**
 * Least-squares fit of baseline + amplitude * exp(-rate * tau).
 *
 * The linear parameters are projected out; the rate is bracketed on a log
 * grid, refined by golden-section search and polished with Gauss-Newton on
 * all three parameters.
 */
inline RateFit fit_rate(std::span<const double> taus, std::span<const double> signal) {
    require(taus.size() == signal.size(), "fit_rate: taus and signal differ in length");
    require(taus.size() >= 4, "fit_rate: need at least 4 samples");
    const auto [tmin_it, tmax_it] = std::minmax_element(taus.begin(), taus.end());
    const double span = *tmax_it - *tmin_it;
    require(span > 0.0, "fit_rate: taus must span a positive interval");

    const auto [ymin_it, ymax_it] = std::minmax_element(signal.begin(), signal.end());
    const double yscale = std::max(std::abs(*ymax_it), std::abs(*ymin_it));
    if (*ymax_it - *ymin_it <= 1e-12 * std::max(yscale, 1e-300))
        throw FitError(FitError::Kind::Unidentifiable, "fit_rate: flat data, rate unidentifiable");

    double b = 0, a = 0;
    auto ssr = [&](double log_rate) { return detail::fit_linear_part(taus, signal, std::exp(log_rate), b, a); };

    const double lo = std::log(1e-3 / span), hi = std::log(1e3 / std::max(span / taus.size(), 1e-300));
    constexpr int scan = 400;
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= scan; ++i) {
        const double v = ssr(lo + (hi - lo) * i / scan);
        if (v < best_val) best_val = v, best = i;
    }
    double left = lo + (hi - lo) * std::max(best - 1, 0) / scan;
    double right = lo + (hi - lo) * std::min(best + 1, scan) / scan;
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = right - golden * (right - left), x2 = left + golden * (right - left);
    double f1 = ssr(x1), f2 = ssr(x2);
    for (int it = 0; it < 200 && right - left > 1e-12; ++it) {
        if (f1 < f2) {
            right = x2, x2 = x1, f2 = f1;
            x1 = right - golden * (right - left), f1 = ssr(x1);
        } else {
            left = x1, x1 = x2, f1 = f2;
            x2 = left + golden * (right - left), f2 = ssr(x2);
        }
    }
    double k = std::exp(0.5 * (left + right));
    double cur = detail::fit_linear_part(taus, signal, k, b, a);

    for (int it = 0; it < 20; ++it) {
        // normal equations for (b, a, k)
        std::array<std::array<double, 3>, 3> jtj{};
        std::array<double, 3> jtr{};
        for (std::size_t i = 0; i < taus.size(); ++i) {
            const double e = std::exp(-k * taus[i]);
            const std::array<double, 3> j{1.0, e, -a * taus[i] * e};
            const double r = signal[i] - b - a * e;
            for (int p = 0; p < 3; ++p) {
                jtr[p] += j[p] * r;
                for (int q = 0; q < 3; ++q) jtj[p][q] += j[p] * j[q];
            }
        }
        // Cramer's rule on the 3x3 system
        auto det3 = [](const std::array<std::array<double, 3>, 3>& m) {
            return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                   m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                   m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        };
        const double d = det3(jtj);
        if (!(std::abs(d) > 0.0)) break;
        std::array<double, 3> delta{};
        for (int c = 0; c < 3; ++c) {
            auto m = jtj;
            for (int r = 0; r < 3; ++r) m[r][c] = jtr[r];
            delta[c] = det3(m) / d;
        }
        const double nk = k + delta[2];
        if (!(nk > 0.0)) break;
        double nb = b + delta[0], na = a + delta[1];
        double trial = 0.0;
        for (std::size_t i = 0; i < taus.size(); ++i) {
            const double r = signal[i] - nb - na * std::exp(-nk * taus[i]);
            trial += r * r;
        }
        if (trial > cur) break;
        b = nb, a = na, k = nk, cur = trial;
        if (std::abs(delta[2]) <= 1e-15 * k) break;
    }

    if (std::abs(a) <= 1e-9 * std::max(std::abs(b), 1e-300))
        throw FitError(FitError::Kind::Unidentifiable, "fit_rate: zero amplitude, rate unidentifiable");
    if (!std::isfinite(k) || !std::isfinite(cur))
        throw FitError(FitError::Kind::NonConvergence, "fit_rate: fit diverged");
    if (std::log(k) <= lo + 1e-9 || std::log(k) >= hi - 1e-9)
        throw FitError(FitError::Kind::NonConvergence, "fit_rate: rate outside the resolvable range of the taus");
    return {k, b, a, std::sqrt(cur)};
}

inline RateFit fit_rate(const RelaxationCurve& curve) { return fit_rate(curve.taus, curve.signal); }

// ---------------------------------------------------------------------------
//  Spectra
// ---------------------------------------------------------------------------

struct CrSpectrum {
    std::vector<double> frequencies;  ///< probe frequency omega_NV [Hz]
    std::vector<double> rates;        ///< Gamma_tot [1/s]
    std::vector<double> pl;           ///< PL after tau_fixed
    double target_frequency = 0.0;    ///< omega_n [Hz]
};

/// Gamma_tot(omega_NV) for a fixed hyperfine variance, with PL read out after tau_fixed.
inline CrSpectrum spectrum_from_variance(double variance, const NvProbe& probe, double target_frequency,
                                         std::span<const double> frequencies, double tau_fixed,
                                         double baseline = default_pl_baseline,
                                         double amplitude = default_pl_amplitude) {
    CrSpectrum s;
    s.target_frequency = target_frequency;
    s.frequencies.assign(frequencies.begin(), frequencies.end());
    for (double f : frequencies) {
        const double rate = total_rate(
            cross_relaxation_rate(variance, probe.dephasing_rate, angular(f - target_frequency)), probe);
        s.rates.push_back(rate);
        s.pl.push_back(baseline + amplitude * std::exp(-rate * tau_fixed));
    }
    return s;
}

/// Cross-relaxation spectrum of the field around the target resonance.
inline CrSpectrum spectrum(const PolarizationField& field, const TargetEnsemble& ensemble, const CouplingModel& model,
                           const NvProbe& probe, std::span<const double> frequencies, double tau_fixed,
                           double baseline = default_pl_baseline, double amplitude = default_pl_amplitude) {
    const double target = larmor_frequency(ensemble.species, resonance_field(probe, ensemble.species));
    return spectrum_from_variance(hyperfine_variance(field, ensemble, model, probe), probe, target, frequencies,
                                  tau_fixed, baseline, amplitude);
}

/// Full width at half maximum [Hz] of Gamma_tot - Gamma_bg, by linear interpolation between grid points.
inline double spectrum_fwhm(const CrSpectrum& s, double background_rate) {
    const std::size_t n = s.rates.size();
    require(n >= 3, "spectrum_fwhm: need at least 3 points");
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (s.rates[i] > s.rates[peak]) peak = i;
    const double half = 0.5 * (s.rates[peak] - background_rate);
    auto level = [&](std::size_t i) { return s.rates[i] - background_rate - half; };
    std::size_t l = peak;
    while (l > 0 && level(l) > 0.0) --l;
    std::size_t r = peak;
    while (r + 1 < n && level(r) > 0.0) ++r;
    require(level(l) <= 0.0 && level(r) <= 0.0, "spectrum_fwhm: grid does not contain both half-maximum points");
    auto cross = [&](std::size_t a, std::size_t b) {
        return s.frequencies[a] + (s.frequencies[b] - s.frequencies[a]) * level(a) / (level(a) - level(b));
    };
    return cross(r - 1, r) - cross(l, l + 1);
}

// ---------------------------------------------------------------------------
//  Counts and enhancement
// ---------------------------------------------------------------------------

/// n_t times the volume of cells with P >= threshold.
inline double polarized_spin_count(const PolarizationField& field, const TargetEnsemble& ensemble, double threshold) {
    require(threshold > 0.0 && threshold <= 1.0, "polarized_spin_count: threshold must be in (0, 1]");
    double v = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (field.values[i] >= threshold) v += field.mesh->volumes()[i];
    return ensemble.number_density * v;
}

struct PolarizedRegion {
    double threshold = 1.0;  ///< lowest P included
    double volume = 0.0;     ///< nm^3
    double mean = 0.0;       ///< volume-weighted mean P inside
};

/// Largest super-level set {P >= threshold} whose mean polarisation is still >= target_mean.
inline PolarizedRegion polarized_region(const PolarizationField& field, double target_mean) {
    require(target_mean > 0.0 && target_mean <= 1.0, "polarized_region: target mean must be in (0, 1]");
    std::vector<std::size_t> order(field.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return field.values[a] > field.values[b]; });
    PolarizedRegion best;
    double vol = 0.0, weighted = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t i = order[k];
        vol += field.mesh->volumes()[i];
        weighted += field.values[i] * field.mesh->volumes()[i];
        if (weighted < target_mean * vol) break;
        // only close a region at a level boundary so ties are kept together
        if (k + 1 == order.size() || field.values[order[k + 1]] < field.values[i])
            best = {field.values[i], vol, weighted / vol};
    }
    return best;
}

/// Mean polarisation over cells whose centre satisfies the predicate.
template <class Region>
double region_mean_polarization(const PolarizationField& field, Region&& contains) {
    double vol = 0.0, weighted = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (contains(field.mesh->centers()[i])) {
            vol += field.mesh->volumes()[i];
            weighted += field.values[i] * field.mesh->volumes()[i];
        }
    require(vol > 0.0, "region contains no cells");
    return weighted / vol;
}

/// Mean polarisation in the region divided by the thermal polarisation at (field, temperature).
template <class Region>
double enhancement_factor(const PolarizationField& field, const TargetEnsemble& ensemble, Region&& contains,
                          double magnetic_field, double temperature) {
    return region_mean_polarization(field, std::forward<Region>(contains)) /
           thermal_polarization(ensemble.species, magnetic_field, temperature);
}

struct Sphere {
    Vec3 center;
    double radius = 0.0;
    bool operator()(const Vec3& r) const { return (r - center).norm() <= radius; }
};

}  // namespace crip
