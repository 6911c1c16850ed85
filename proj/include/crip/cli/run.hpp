#pragma once

// Experiment runner: turns a validated ExperimentConfig into CSV datasets,
// a JSON summary and a manifest in the output directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "crip/cli/config.hpp"
#include "crip/discrete.hpp"
#include "crip/io.hpp"
#include "crip/observables.hpp"
#include "crip/pde.hpp"
#include "crip/scaleup.hpp"

#ifndef CRIP_VERSION
#define CRIP_VERSION "1.0.0"
#endif

namespace crip::cli {

struct RunOptions {
    std::optional<std::string> output_directory;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
};

struct RunResult {
    std::filesystem::path directory;
    Json summary;
    std::vector<std::string> files;
    std::vector<std::string> warnings;
};

inline NvProbe resolved_probe(NvProbe p) {
    p.axis = p.axis.normalized();
    return p;
}

/// Coupling model described by the config (prefactor from the species, optional variance matching).
inline CouplingModel build_coupling(const ExperimentConfig& c) {
    const NvProbe probe = resolved_probe(c.probe);
    const double cutoff = c.coupling.cutoff_radius.value_or(diamond_bond_length);
    CouplingModel m = c.coupling.match_variance_to
                          ? variance_matched_coupling(probe, c.ensemble.species, c.coupling.kernel,
                                                      *c.coupling.match_variance_to, c.ensemble.geometry, cutoff)
                          : default_coupling(probe, c.ensemble.species, c.coupling.kernel, cutoff);
    m.prefactor *= c.coupling.prefactor_scale;
    return m;
}

namespace detail {

class Context {
public:
    Context(const ExperimentConfig& config, RunResult& result) : config_(config), result_(result) {}

    std::ofstream open(const std::string& file) {
        result_.files.push_back(file);
        std::ofstream out(result_.directory / file, std::ios::binary);
        require(static_cast<bool>(out), "cannot write " + (result_.directory / file).string());
        return out;
    }

    void warn(std::string w) { result_.warnings.push_back(std::move(w)); }

    Json& summary() { return result_.summary; }
    const ExperimentConfig& config() const { return config_; }

private:
    const ExperimentConfig& config_;
    RunResult& result_;
};

struct Physics {
    NvProbe probe;
    TargetEnsemble ensemble;
    CouplingModel model;
    std::shared_ptr<const Mesh> mesh;

    explicit Physics(const ExperimentConfig& c)
        : probe(resolved_probe(c.probe)), ensemble(c.ensemble), model(build_coupling(c)), mesh(Mesh::build(c.grid)) {}

    CripSolver solver(const SolverConfig& s) const { return CripSolver(mesh, ensemble, probe, model, s); }
    double resonance() const { return resonance_field(probe, ensemble.species); }
};

inline void check_tail(Context& ctx, const PolarizationField& f, const Physics& ph, const std::string& what) {
    const double tail = variance_tail_fraction(f, ph.ensemble, ph.model, ph.probe);
    if (tail > 0.01)
        ctx.warn(what + ": hyperfine variance tail at the outer boundary is " + io::format_double(tail) +
                 " of the total; enlarge the grid");
}

/// Field after the schedule: steady state, or evolution from P = 0 to t_end.
inline PolarizationField polarized_field(Context& ctx, const Physics& ph) {
    const auto& c = ctx.config();
    const auto solver = ph.solver(c.solver);
    if (c.schedule.steady_state) {
        auto r = solver.steady_state();
        if (r.degenerate) ctx.warn("steady state is degenerate (no relaxation sink): P = 1 wherever pumping reaches");
        return std::move(r.field);
    }
    return solver.evolve(init_field(ph.mesh, 0.0), c.schedule.t_end);
}

inline void write_profile(Context& ctx, const std::string& file, const PolarizationField& f, double bin) {
    auto out = ctx.open(file);
    const auto prof = radial_profile(f, bin);
    io::CsvWriter csv(out, {"radius_nm", "polarization"});
    for (std::size_t i = 0; i < prof.radius.size(); ++i) csv.row({prof.radius[i], prof.mean[i]});
}

inline void run_spectrum(Context& ctx) {
    const auto& c = ctx.config();
    const Physics ph(c);
    const auto unpolarized = init_field(ph.mesh, 0.0);
    const auto polarized = polarized_field(ctx, ph);
    check_tail(ctx, unpolarized, ph, "unpolarized");

    const double target = larmor_frequency(ph.ensemble.species, ph.resonance());
    const double fwhm_hz = ph.probe.dephasing_rate / constants::pi;
    const double span = c.spectrum.span_hz > 0.0 ? c.spectrum.span_hz : 20.0 * fwhm_hz;
    std::vector<double> freqs(static_cast<std::size_t>(c.spectrum.points));
    for (std::size_t i = 0; i < freqs.size(); ++i)
        freqs[i] = target - 0.5 * span + span * static_cast<double>(i) / static_cast<double>(freqs.size() - 1);

    const auto s0 = spectrum(unpolarized, ph.ensemble, ph.model, ph.probe, freqs, c.spectrum.tau, c.spectrum.baseline,
                             c.spectrum.amplitude);
    const auto s1 = spectrum(polarized, ph.ensemble, ph.model, ph.probe, freqs, c.spectrum.tau, c.spectrum.baseline,
                             c.spectrum.amplitude);
    {
        auto out = ctx.open("spectrum.csv");
        io::CsvWriter csv(out, {"frequency_hz", "rate_unpolarized_per_s", "rate_polarized_per_s", "pl_unpolarized",
                                "pl_polarized"});
        for (std::size_t i = 0; i < freqs.size(); ++i) csv.row({freqs[i], s0.rates[i], s1.rates[i], s0.pl[i], s1.pl[i]});
    }
    const double v0 = hyperfine_variance(unpolarized, ph.ensemble, ph.model, ph.probe);
    const double v1 = hyperfine_variance(polarized, ph.ensemble, ph.model, ph.probe);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < s0.rates.size(); ++i)
        if (s0.rates[i] > s0.rates[peak]) peak = i;
    auto& j = ctx.summary();
    j["resonance_field_gauss"] = ph.resonance() * constants::gauss_per_tesla;
    j["target_frequency_hz"] = target;
    j["peak_frequency_hz"] = freqs[peak];
    j["variance_unpolarized_rad2_per_s2"] = v0;
    j["variance_polarized_rad2_per_s2"] = v1;
    j["cross_relaxation_unpolarized_per_s"] = cross_relaxation_rate(v0, ph.probe.dephasing_rate, 0.0);
    j["cross_relaxation_polarized_per_s"] = cross_relaxation_rate(v1, ph.probe.dephasing_rate, 0.0);
    j["variance_ratio"] = v1 > 0.0 ? Json(v0 / v1) : Json(nullptr);
    j["fwhm_hz"] = spectrum_fwhm(s0, ph.probe.background_rate);
    j["expected_fwhm_hz"] = fwhm_hz;
}

inline void run_relax_curve(Context& ctx) {
    const auto& c = ctx.config();
    const Physics ph(c);
    const auto unpolarized = init_field(ph.mesh, 0.0);
    const auto polarized = polarized_field(ctx, ph);
    const double v0 = hyperfine_variance(unpolarized, ph.ensemble, ph.model, ph.probe);
    const double v1 = hyperfine_variance(polarized, ph.ensemble, ph.model, ph.probe);
    const double g0 = total_rate(cross_relaxation_rate(v0, ph.probe.dephasing_rate, 0.0), ph.probe);
    const double g1 = total_rate(cross_relaxation_rate(v1, ph.probe.dephasing_rate, 0.0), ph.probe);
    const double tau_max = c.relax.tau_max > 0.0 ? c.relax.tau_max : 5.0 / std::min(g0, g1);
    std::vector<double> taus(static_cast<std::size_t>(c.relax.points));
    for (std::size_t i = 0; i < taus.size(); ++i)
        taus[i] = tau_max * static_cast<double>(i) / static_cast<double>(taus.size() - 1);

    auto c0 = relaxation_curve(g0, taus, c.relax.baseline, c.relax.amplitude);
    auto c1 = relaxation_curve(g1, taus, c.relax.baseline, c.relax.amplitude);
    if (c.relax.noise > 0.0) {
        std::mt19937_64 rng(c.seed);
        std::normal_distribution<double> noise(0.0, c.relax.noise);
        for (auto& s : c0.signal) s += noise(rng);
        for (auto& s : c1.signal) s += noise(rng);
    }
    {
        auto out = ctx.open("relax_curve.csv");
        io::CsvWriter csv(out, {"tau_s", "pl_unpolarized", "pl_polarized"});
        for (std::size_t i = 0; i < taus.size(); ++i) csv.row({taus[i], c0.signal[i], c1.signal[i]});
    }
    const auto f0 = fit_rate(c0);
    const auto f1 = fit_rate(c1);
    auto& j = ctx.summary();
    j["rate_unpolarized_per_s"] = g0;
    j["rate_polarized_per_s"] = g1;
    j["fitted_rate_unpolarized_per_s"] = f0.rate;
    j["fitted_rate_polarized_per_s"] = f1.rate;
    j["fitted_cross_relaxation_unpolarized_per_s"] = f0.rate - ph.probe.background_rate;
    j["fitted_cross_relaxation_polarized_per_s"] = f1.rate - ph.probe.background_rate;
    j["residual_norm_unpolarized"] = f0.residual_norm;
    j["residual_norm_polarized"] = f1.residual_norm;
}

inline Json field_metrics(Context& ctx, const Physics& ph, const PolarizationField& f) {
    const auto& a = ctx.config().analysis;
    const double bin = a.profile_bin > 0.0 ? a.profile_bin : 0.0;
    const double contour = contour_radius(radial_profile(f, bin), a.threshold);
    const double region = a.region_radius > 0.0 ? a.region_radius : contour;
    Json m;
    m["time_s"] = f.time;
    m["variance_rad2_per_s2"] = hyperfine_variance(f, ph.ensemble, ph.model, ph.probe);
    m["contour_radius_nm"] = contour;
    m["count_above_threshold"] = polarized_spin_count(f, ph.ensemble, a.threshold);
    bool region_has_cells = false;
    for (const auto& x : f.mesh->centers()) region_has_cells = region_has_cells || x.norm() <= region;
    if (region > 0.0 && region_has_cells) {
        const Sphere sphere{{0.0, 0.0, 0.0}, region};
        m["region_radius_nm"] = region;
        m["region_mean_polarization"] = region_mean_polarization(f, sphere);
        m["enhancement"] = enhancement_factor(f, ph.ensemble, sphere, ph.resonance(), a.temperature);
    } else {
        m["region_radius_nm"] = region;
        m["region_mean_polarization"] = nullptr;
        m["enhancement"] = nullptr;
    }
    return m;
}

inline void run_evolve(Context& ctx) {
    const auto& c = ctx.config();
    const Physics ph(c);
    const auto solver = ph.solver(c.solver);
    std::vector<double> times = c.schedule.snapshots;
    if (c.schedule.t_end > 0.0) times.push_back(c.schedule.t_end);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    Json snapshots = Json::array();
    auto out_series = ctx.open("variance.csv");
    io::CsvWriter series(out_series, {"time_s", "variance_rad2_per_s2", "contour_radius_nm", "count_above_threshold"});
    auto record = [&](const PolarizationField& f) {
        write_profile(ctx, "profile_t" + io::format_double(f.time) + "s.csv", f, c.analysis.profile_bin);
        auto m = field_metrics(ctx, ph, f);
        series.row({f.time, m["variance_rad2_per_s2"].get<double>(), m["contour_radius_nm"].get<double>(),
                    m["count_above_threshold"].get<double>()});
        snapshots.push_back(std::move(m));
    };
    auto field = init_field(ph.mesh, 0.0);
    if (!times.empty() && times.front() == 0.0) {
        record(field);
        times.erase(times.begin());
    }
    solver.evolve(std::move(field), times.empty() ? 0.0 : times.back(), {Observer{times, record}});
    check_tail(ctx, init_field(ph.mesh, 0.0), ph, "unpolarized");
    auto& j = ctx.summary();
    j["resonance_field_gauss"] = ph.resonance() * constants::gauss_per_tesla;
    j["time_step_s"] = solver.time_step();
    j["snapshots"] = std::move(snapshots);
}

inline void run_steady_state(Context& ctx) {
    const auto& c = ctx.config();
    const Physics ph(c);
    const auto solver = ph.solver(c.solver);
    const auto r = solver.steady_state();
    if (r.degenerate) ctx.warn("steady state is degenerate (no relaxation sink): P = 1 wherever pumping reaches");
    const double gradient = solver.far_boundary_gradient_ratio(r.field);
    if (gradient > 1e-3)
        ctx.warn("polarisation gradient at the far boundary is " + io::format_double(gradient) +
                 " of the largest gradient; enlarge the grid");
    const auto unpolarized = init_field(ph.mesh, 0.0);
    check_tail(ctx, unpolarized, ph, "unpolarized");
    write_profile(ctx, "profile_steady.csv", r.field, c.analysis.profile_bin);

    const double v0 = hyperfine_variance(unpolarized, ph.ensemble, ph.model, ph.probe);
    const double v1 = hyperfine_variance(r.field, ph.ensemble, ph.model, ph.probe);
    const auto region = polarized_region(r.field, c.analysis.target_mean);
    auto& j = ctx.summary();
    j["cg_iterations"] = r.report.iterations;
    j["cg_relative_residual"] = r.report.relative_residual;
    j["degenerate"] = r.degenerate;
    j["variance_unpolarized_rad2_per_s2"] = v0;
    j["variance_polarized_rad2_per_s2"] = v1;
    j["cross_relaxation_unpolarized_per_s"] = cross_relaxation_rate(v0, ph.probe.dephasing_rate, 0.0);
    j["cross_relaxation_polarized_per_s"] = cross_relaxation_rate(v1, ph.probe.dephasing_rate, 0.0);
    j["ratio"] = v1 > 0.0 ? Json(v0 / v1) : Json(nullptr);
    j["region_target_mean"] = c.analysis.target_mean;
    j["region_volume_nm3"] = region.volume;
    j["region_mean_polarization"] = region.mean;
    j["region_spin_count"] = ph.ensemble.number_density * region.volume;
    j["region_enhancement"] = region.volume > 0.0
                                  ? Json(region.mean / thermal_polarization(ph.ensemble.species, ph.resonance(),
                                                                            c.analysis.temperature))
                                  : Json(nullptr);
    j["count_above_threshold"] = polarized_spin_count(r.field, ph.ensemble, c.analysis.threshold);
    j["far_boundary_gradient_ratio"] = gradient;
}

inline void run_oracle_compare(Context& ctx, unsigned threads) {
    const auto& c = ctx.config();
    const NvProbe probe = resolved_probe(c.probe);
    const CouplingModel model = build_coupling(c);
    OracleComparisonSettings s;
    s.region = c.oracle.region;
    s.spins = static_cast<std::size_t>(c.oracle.spins);
    s.seeds = static_cast<std::size_t>(c.oracle.seeds);
    s.first_seed = c.seed;
    s.times = c.oracle.times;
    s.cell_size = c.oracle.cell_size;
    s.threads = threads;
    const auto points = compare_with_continuum(c.ensemble, probe, model, s);
    auto out = ctx.open("oracle_compare.csv");
    io::CsvWriter csv(out, {"time_s", "discrete_variance_rad2_per_s2", "discrete_standard_error_rad2_per_s2",
                            "continuum_variance_rad2_per_s2", "relative_difference"});
    double worst = 0.0;
    for (const auto& p : points) {
        csv.row({p.time, p.discrete_mean, p.discrete_standard_error, p.continuum, p.relative_difference()});
        worst = std::max(worst, p.relative_difference());
    }
    ctx.summary()["max_relative_difference"] = worst;
    ctx.summary()["points"] = points.size();
}

inline std::string file_safe(std::string s) {
    for (auto& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    return s;
}

inline void run_scaleup(Context& ctx) {
    const auto& c = ctx.config().scaleup;
    const auto registry = AgentRegistry::builtin();
    PolarizationCell cell = c.cell;
    cell.probe = resolved_probe(cell.probe);
    std::vector<double> times(static_cast<std::size_t>(c.points));
    for (std::size_t i = 0; i < times.size(); ++i)
        times[i] = c.t_end * static_cast<double>(i) / static_cast<double>(times.size() - 1);

    Json agents = Json::object();
    for (const auto& name : c.agents) {
        ContrastAgent agent = registry.find(name);
        agent.spin_lattice_rate = c.spin_lattice_rate;
        const CellKinetics kinetics(cell, agent);
        const auto curve = cell_polarization_curve(cell, agent, times);
        {
            auto out = ctx.open("curve_" + file_safe(name) + ".csv");
            io::CsvWriter csv(out, {"time_s", "polarization"});
            for (const auto& [t, p] : curve) csv.row({t, p});
        }
        auto out = ctx.open("delivery_" + file_safe(name) + ".csv");
        io::CsvWriter csv(out, {"target_polarization", "cell_flow_ul_per_s", "delivery_ul_per_s"});
        Json a;
        const double p_inf = kinetics.saturation();
        for (double p : c.targets) {
            if (!(p < p_inf)) {
                ctx.warn(name + ": target polarisation " + io::format_double(p) + " is unreachable (steady state " +
                         io::format_double(p_inf) + ")");
                continue;
            }
            const double q = flow_rate_for_polarization(cell, agent, p);
            csv.row({p, q, c.stack.cells * q * c.stack.dilution_factor});
        }
        a["pump_rate_at_zero_per_s"] = per_nv_pump_rate(cell, agent, 0.0);
        a["per_nv_cap_per_s"] = cell.per_nv_cap;
        a["saturation_polarization"] = p_inf;
        a["final_polarization"] = curve.back().second;
        if (0.8 < p_inf) {
            const double t80 = time_to_polarization(cell, agent, 0.8);
            a["time_to_80_percent_s"] = t80;
            a["cell_flow_at_80_percent_ul_per_s"] = cell.volume_ul() / t80;
            a["stack_delivery_at_80_percent_ul_per_s"] = stack_delivery_rate(c.stack, cell, agent, 0.8);
        } else {
            a["time_to_80_percent_s"] = nullptr;
        }
        agents[name] = std::move(a);
    }
    ctx.summary()["agents"] = std::move(agents);
}

inline std::string iso_time_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

/// Execute one experiment and write its artifacts. Throws on failure.
inline RunResult run(ExperimentConfig config, const RunOptions& options = {}) {
    const auto start = std::chrono::steady_clock::now();
    if (options.seed) config.seed = *options.seed;
    if (options.output_directory) config.output_directory = *options.output_directory;
    RunResult result;
    result.directory = config.output_directory;
    std::filesystem::create_directories(result.directory);
    result.summary = Json::object();
    result.summary["experiment"] = to_string(config.kind);
    result.summary["name"] = config.name;

    detail::Context ctx(config, result);
    switch (config.kind) {
        case ExperimentKind::Spectrum: detail::run_spectrum(ctx); break;
        case ExperimentKind::RelaxCurve: detail::run_relax_curve(ctx); break;
        case ExperimentKind::Evolve: detail::run_evolve(ctx); break;
        case ExperimentKind::SteadyState: detail::run_steady_state(ctx); break;
        case ExperimentKind::OracleCompare: detail::run_oracle_compare(ctx, std::max(1u, options.threads)); break;
        case ExperimentKind::Scaleup: detail::run_scaleup(ctx); break;
    }

    {
        std::ofstream out(result.directory / "summary.json", std::ios::binary);
        out << result.summary.dump(2) << '\n';
        result.files.push_back("summary.json");
    }
    const auto resolved = to_json(config);
    Json manifest;
    manifest["tool"] = "crip-sim";
    manifest["version"] = CRIP_VERSION;
    manifest["compiler"] = std::string("g++ ") + __VERSION__;
    manifest["json_library"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                               std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    manifest["config_hash"] = "fnv1a64:" + detail::hex64(fnv1a(resolved.dump()));
    manifest["seed"] = config.seed;
    manifest["threads"] = options.threads;
    manifest["started_utc"] = detail::iso_time_utc();
    manifest["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest["files"] = result.files;
    manifest["warnings"] = result.warnings;
    manifest["config"] = resolved;
    std::ofstream out(result.directory / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    return result;
}

/// Machine-readable error document for a failed run.
inline Json error_json(const std::exception& e) {
    Json err;
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
        err["type"] = "config";
        err["problems"] = ce->problems();
        if (ce->line()) err["line"] = *ce->line();
    } else if (const auto* se = dynamic_cast<const SolverError*>(&e)) {
        err["type"] = "solver";
        err["residual"] = se->residual();
    } else if (const auto* fe = dynamic_cast<const FitError*>(&e)) {
        err["type"] = fe->kind() == FitError::Kind::Unidentifiable ? "fit-unidentifiable" : "fit-nonconvergence";
    } else if (dynamic_cast<const std::invalid_argument*>(&e)) {
        err["type"] = "invalid-argument";
    } else if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
        err["type"] = "io";
    } else {
        err["type"] = "internal";
    }
    err["message"] = e.what();
    return Json{{"error", err}};
}

}  // namespace crip::cli
