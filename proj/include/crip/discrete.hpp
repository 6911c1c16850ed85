#pragma once

/**
 * @file discrete.hpp
 * @brief Brute-force oracle: explicitly placed spins under the same rate
 *        equations as the continuum model.
 *
 *     dP_i/dt = u(R_i) (1 - P_i) - Gamma_SL P_i  [+ sum_j w_ij (P_j - P_i)]
 *
 * with optional pairwise flip-flop exchange w_ij = w0 / |R_i - R_j|^6.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "crip/error.hpp"
#include "crip/io.hpp"
#include "crip/observables.hpp"
#include "crip/pde.hpp"
#include "crip/spin.hpp"

namespace crip {

struct Box {
    Vec3 lower;
    Vec3 upper;

    double volume() const {
        return std::max(0.0, upper.x - lower.x) * std::max(0.0, upper.y - lower.y) * std::max(0.0, upper.z - lower.z);
    }
    bool operator==(const Box&) const = default;
};

struct DiscreteEnsemble {
    std::vector<Vec3> positions;
    std::vector<double> polarizations;
    std::uint64_t seed = 0;

    std::size_t size() const { return positions.size(); }
    double total_polarization() const {
        double s = 0.0;
        for (double p : polarizations) s += p;
        return s;
    }
};

/// Either an exact spin count or a number density (Poisson-distributed count).
struct SampleSize {
    std::optional<std::size_t> count;
    double density = 0.0;

    static SampleSize exactly(std::size_t n) { return {n, 0.0}; }
    static SampleSize at_density(double d) { return {std::nullopt, d}; }
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Vec3 uniform_in(const Box& b, std::mt19937_64& rng) {
    const double x = uniform01(rng), y = uniform01(rng), z = uniform01(rng);
    return {b.lower.x + x * (b.upper.x - b.lower.x), b.lower.y + y * (b.upper.y - b.lower.y),
            b.lower.z + z * (b.upper.z - b.lower.z)};
}

}  // namespace detail

/**
 * Uniform random spins in region ∩ geometry, outside the cutoff sphere.
 *
 * Density mode draws a Poisson number of candidates for the whole box and
 * thins them, so the accepted count is Poisson with mean n_t × accepted volume.
 */
inline DiscreteEnsemble sample_ensemble(const TargetEnsemble& ensemble, const NvProbe& probe, const Box& region,
                                        SampleSize size, std::uint64_t seed, double cutoff_radius) {
    require(region.volume() > 0.0, "sample_ensemble: region has zero volume");
    std::mt19937_64 rng(seed);
    auto accept = [&](const Vec3& r) {
        return geometry_contains(ensemble.geometry, r, probe.depth) && r.norm() >= cutoff_radius;
    };
    DiscreteEnsemble d;
    d.seed = seed;
    if (size.count) {
        const std::size_t want = *size.count;
        const std::size_t max_attempts = std::max<std::size_t>(want, 1) * 10000;
        std::size_t attempts = 0;
        while (d.positions.size() < want) {
            require(++attempts <= max_attempts, "sample_ensemble: region barely overlaps the ensemble geometry");
            const Vec3 r = detail::uniform_in(region, rng);
            if (accept(r)) d.positions.push_back(r);
        }
    } else {
        require(size.density > 0.0, "sample_ensemble: density must be > 0");
        std::poisson_distribution<std::uint64_t> poisson(size.density * region.volume());
        const auto candidates = poisson(rng);
        for (std::uint64_t k = 0; k < candidates; ++k) {
            const Vec3 r = detail::uniform_in(region, rng);
            if (accept(r)) d.positions.push_back(r);
        }
    }
    d.polarizations.assign(d.positions.size(), 0.0);
    return d;
}

/// A_P^2 = (1/2) sum_i (1 - P_i) A(R_i)^2 [rad^2/s^2]
inline double discrete_hyperfine_variance(const DiscreteEnsemble& d, const CouplingModel& model, const NvProbe& probe) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double a = hyperfine_coupling(model, d.positions[i], probe.axis);
        s += (1.0 - d.polarizations[i]) * a * a;
    }
    return 0.5 * s;
}

/// w0 = (mu0 hbar gamma_n^2 / 4 pi)^2 (3/10) / (2 Gamma_intra) [nm^6/s]
inline double flip_flop_prefactor(const SpinSpecies& species, double intra_linewidth) {
    require(intra_linewidth > 0.0, "flip_flop_prefactor: linewidth must be > 0");
    const double g = angular(std::abs(species.gamma));
    const double c = constants::mu0_over_4pi * constants::hbar * g * g * constants::nm3_per_m3;
    return c * c * (3.0 / 10.0) / (2.0 * intra_linewidth);
}

struct DiscreteEvolveOptions {
    bool couple_spins = false;
    double flip_flop_prefactor = 0.0;  ///< w0 [nm^6/s]
    std::size_t max_steps = 50'000'000;
};

/**
 * Advance every spin to t_end.
 *
 * Uncoupled spins use the closed-form solution. Coupled spins alternate an
 * exact per-spin reaction update with an explicit Euler exchange step of
 * length <= 0.1 / max_i sum_j w_ij, which keeps each update a convex
 * combination and conserves sum_i P_i.
 */
inline DiscreteEnsemble evolve_discrete(DiscreteEnsemble d, const NvProbe& probe, const CouplingModel& model,
                                        double spin_lattice_rate, double t_end,
                                        const DiscreteEvolveOptions& options = {}) {
    require(t_end >= 0.0, "evolve_discrete: t_end must be >= 0");
    const std::size_t n = d.size();
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = cooling_coefficient(model, probe, d.positions[i]);

    auto react = [&](double h) {
        for (std::size_t i = 0; i < n; ++i) {
            const double k = u[i] + spin_lattice_rate;
            if (k == 0.0) continue;
            const double p_inf = u[i] / k;
            d.polarizations[i] = std::clamp(p_inf + (d.polarizations[i] - p_inf) * std::exp(-k * h), 0.0, 1.0);
        }
    };

    if (!options.couple_spins || n < 2 || options.flip_flop_prefactor == 0.0) {
        if (t_end > 0.0) react(t_end);
        return d;
    }

    std::vector<double> w(n * n, 0.0);
    double max_row = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double r = (d.positions[i] - d.positions[j]).norm();
            require(r > 0.0, "evolve_discrete: coincident spins");
            w[i * n + j] = options.flip_flop_prefactor / std::pow(r, 6);
            row += w[i * n + j];
        }
        max_row = std::max(max_row, row);
    }
    const double dt_max = 0.1 / max_row;
    const double steps_needed = std::ceil(t_end / dt_max);
    if (!(steps_needed <= static_cast<double>(options.max_steps)))
        throw SolverError("evolve_discrete: step size underflow (" + std::to_string(steps_needed) + " steps needed)",
                          dt_max);
    const auto steps = static_cast<std::size_t>(steps_needed);
    if (steps == 0) return d;
    const double h = t_end / static_cast<double>(steps);
    std::vector<double> delta(n);
    for (std::size_t s = 0; s < steps; ++s) {
        react(h);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            const double pi = d.polarizations[i];
            for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * (d.polarizations[j] - pi);
            delta[i] = h * acc;
        }
        for (std::size_t i = 0; i < n; ++i) d.polarizations[i] = std::clamp(d.polarizations[i] + delta[i], 0.0, 1.0);
    }
    return d;
}

// ---------------------------------------------------------------------------
//  Monte-Carlo batches
// ---------------------------------------------------------------------------

/// Runs job(k) for k in [0, count) on up to `threads` threads; results land in index order.
template <class Job>
auto parallel_map(std::size_t count, unsigned threads, Job&& job) {
    using Result = decltype(job(std::size_t{0}));
    std::vector<Result> out(count);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        for (std::size_t k = 0; k < count; ++k) out[k] = job(k);
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t k = t; k < count; k += threads) out[k] = job(k);
        });
    for (auto& th : pool) th.join();
    return out;
}

struct MonteCarloEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::vector<double> samples;
};

inline MonteCarloEstimate summarize(std::vector<double> samples) {
    MonteCarloEstimate e;
    const double n = static_cast<double>(samples.size());
    for (double s : samples) e.mean += s;
    e.mean /= n;
    double var = 0.0;
    for (double s : samples) var += (s - e.mean) * (s - e.mean);
    e.standard_error = samples.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    e.samples = std::move(samples);
    return e;
}

/// Unpolarised A_P^2 averaged over seeds first_seed, first_seed + 1, ...
inline MonteCarloEstimate monte_carlo_unpolarized_variance(const TargetEnsemble& ensemble, const NvProbe& probe,
                                                           const CouplingModel& model, const Box& region,
                                                           SampleSize size, std::uint64_t first_seed,
                                                           std::size_t seeds, unsigned threads = 1) {
    return summarize(parallel_map(seeds, threads, [&](std::size_t k) {
        const auto d = sample_ensemble(ensemble, probe, region, size, first_seed + k, model.cutoff_radius);
        return discrete_hyperfine_variance(d, model, probe);
    }));
}

struct OracleComparisonPoint {
    double time = 0.0;
    double discrete_mean = 0.0;
    double discrete_standard_error = 0.0;
    double continuum = 0.0;
    double relative_difference() const { return std::abs(discrete_mean - continuum) / continuum; }
};

struct OracleComparisonSettings {
    Box region;
    std::size_t spins = 500;
    std::size_t seeds = 20;
    std::uint64_t first_seed = 1;
    std::vector<double> times;
    double cell_size = 0.1;
    unsigned threads = 1;
};

/**
 * Discrete spins (uncoupled) against the continuum solver with beta = 0 on the
 * same region, at matched density n_t = spins / region volume.
 */
inline std::vector<OracleComparisonPoint> compare_with_continuum(TargetEnsemble ensemble, const NvProbe& probe,
                                                                 const CouplingModel& model,
                                                                 const OracleComparisonSettings& s) {
    ensemble.diffusion = 0.0;
    CartesianGrid grid{s.region.lower, s.region.upper, s.cell_size, ensemble.geometry, probe.depth};
    auto mesh = Mesh::build(grid);
    ensemble.number_density = static_cast<double>(s.spins) / mesh->total_volume();

    const CripSolver solver(mesh, ensemble, probe, model, SolverConfig{});
    std::vector<OracleComparisonPoint> points;
    auto field = init_field(mesh, 0.0);
    for (double t : s.times) {
        field = solver.evolve(std::move(field), t);
        points.push_back({t, 0.0, 0.0, hyperfine_variance(field, ensemble, model, probe)});
    }

    const auto per_seed = parallel_map(s.seeds, s.threads, [&](std::size_t k) {
        auto d = sample_ensemble(ensemble, probe, s.region, SampleSize::exactly(s.spins), s.first_seed + k,
                                 model.cutoff_radius);
        std::vector<double> values;
        double t_prev = 0.0;
        for (double t : s.times) {
            d = evolve_discrete(std::move(d), probe, model, ensemble.spin_lattice_rate, t - t_prev);
            t_prev = t;
            values.push_back(discrete_hyperfine_variance(d, model, probe));
        }
        return values;
    });
    for (std::size_t p = 0; p < points.size(); ++p) {
        std::vector<double> samples;
        for (const auto& v : per_seed) samples.push_back(v[p]);
        const auto e = summarize(std::move(samples));
        points[p].discrete_mean = e.mean;
        points[p].discrete_standard_error = e.standard_error;
    }
    return points;
}

// ---------------------------------------------------------------------------
//  Dump / load
// ---------------------------------------------------------------------------

/// CSV with a "# seed=<n>" comment line followed by x_nm,y_nm,z_nm,P rows.
inline void write_ensemble(std::ostream& out, const DiscreteEnsemble& d) {
    out << "# seed=" << d.seed << '\n';
    io::CsvWriter csv(out, {"x_nm", "y_nm", "z_nm", "P"});
    for (std::size_t i = 0; i < d.size(); ++i)
        csv.row({d.positions[i].x, d.positions[i].y, d.positions[i].z, d.polarizations[i]});
}

inline DiscreteEnsemble read_ensemble(std::istream& in) {
    DiscreteEnsemble d;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line.rfind("# seed=", 0) == 0,
            "ensemble csv: missing '# seed=' header");
    d.seed = std::stoull(line.substr(7));
    require(static_cast<bool>(std::getline(in, line)), "ensemble csv: missing column header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = io::split_line(line);
        require(cells.size() == 4, "ensemble csv: expected 4 columns");
        d.positions.push_back({io::parse_double(cells[0]), io::parse_double(cells[1]), io::parse_double(cells[2])});
        const double p = io::parse_double(cells[3]);
        require(p >= 0.0 && p <= 1.0, "ensemble csv: polarisation outside [0, 1]");
        d.polarizations.push_back(p);
    }
    return d;
}

}  // namespace crip
