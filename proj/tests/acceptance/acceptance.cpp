// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Tolerances are fixed here and never read from input.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "crip/cli/registry.hpp"
#include "crip/cli/run.hpp"
#include "crip/discrete.hpp"
#include "crip/observables.hpp"
#include "crip/pde.hpp"
#include "crip/scaleup.hpp"

using namespace crip;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string kernel_name(AngularKernel k) {
    switch (k) {
        case AngularKernel::Isotropic: return "isotropic";
        case AngularKernel::Secular: return "secular";
        case AngularKernel::Transverse: return "transverse";
    }
    return "?";
}

const SpinSpecies& species(const char* name) { return SpeciesRegistry::builtin().find(name); }

cli::ExperimentConfig bundled(const char* name) {
    const auto e = cli::find_bundled(name);
    require(e.has_value(), std::string("bundled experiment missing: ") + name);
    return e->config();
}

// ---------------------------------------------------------------------------

constexpr double resonance_tol_gauss = 1.5;
constexpr double transition_tol_mhz = 0.1;

Outcome resonance_fields() {
    const NvProbe p;
    const double c = resonance_field(p, species("13C")) * constants::gauss_per_tesla;
    const double h = resonance_field(p, species("1H")) * constants::gauss_per_tesla;
    return {std::abs(c - 1024.9) <= resonance_tol_gauss && std::abs(h - 1026.2) <= resonance_tol_gauss,
            "13C " + fmt("%.2f", c) + " G, 1H " + fmt("%.2f", h) + " G"};
}

Outcome transition_frequencies() {
    const NvProbe p;
    const double c = nv_transition_frequency(p, resonance_field(p, species("13C"))) / 1e6;
    const double h = nv_transition_frequency(p, resonance_field(p, species("1H"))) / 1e6;
    return {std::abs(c - 1.1) <= transition_tol_mhz && std::abs(h - 4.4) <= transition_tol_mhz,
            "13C " + fmt("%.3f", c) + " MHz, 1H " + fmt("%.3f", h) + " MHz"};
}

// Steady states of the PMMA configuration, shared by the ratio and count criteria.
struct PmmaRun {
    AngularKernel kernel;
    double ratio = 0.0;
    double region_count = 0.0;
    double threshold_count = 0.0;
    double seconds = 0.0;
};

std::vector<PmmaRun> pmma_runs() {
    std::vector<PmmaRun> out;
    for (auto kernel : {AngularKernel::Transverse, AngularKernel::Secular, AngularKernel::Isotropic}) {
        const auto start = std::chrono::steady_clock::now();
        auto c = bundled("fig3_ratio");
        c.coupling.kernel = kernel;
        const NvProbe probe = cli::resolved_probe(c.probe);
        const auto model = cli::build_coupling(c);
        const auto mesh = Mesh::build(c.grid);
        const CripSolver solver(mesh, c.ensemble, probe, model, c.solver);
        const auto r = solver.steady_state();
        const double v0 = hyperfine_variance(init_field(mesh, 0.0), c.ensemble, model, probe);
        const double v1 = hyperfine_variance(r.field, c.ensemble, model, probe);
        const auto region = polarized_region(r.field, 0.5);
        PmmaRun run{kernel};
        run.ratio = cross_relaxation_rate(v0, probe.dephasing_rate, 0.0) /
                    cross_relaxation_rate(v1, probe.dephasing_rate, 0.0);
        run.region_count = c.ensemble.number_density * region.volume;
        run.threshold_count = polarized_spin_count(r.field, c.ensemble, 0.5);
        run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.push_back(run);
    }
    return out;
}

constexpr double pmma_ratio = 2.2;
constexpr double pmma_ratio_tol = 0.4;
constexpr double pmma_seconds_per_run = 120.0;

Outcome pmma_ratio_check(const std::vector<PmmaRun>& runs) {
    bool ok = true;
    std::string d;
    for (const auto& r : runs) {
        ok = ok && std::abs(r.ratio - pmma_ratio) <= pmma_ratio_tol && r.seconds < pmma_seconds_per_run;
        d += kernel_name(r.kernel) + " " + fmt("%.3f", r.ratio) + " (" + fmt("%.1f", r.seconds) + " s) ";
    }
    return {ok, d};
}

constexpr double million = 1e6;
constexpr double count_factor = 3.0;

Outcome pmma_count_check(const std::vector<PmmaRun>& runs) {
    const double n = runs.front().region_count;
    return {n >= million / count_factor && n <= million * count_factor,
            "50%-mean region holds " + fmt("%.3g", n) + " spins (cells with P >= 0.5: " +
                fmt("%.3g", runs.front().threshold_count) + ")"};
}

// 13C front after two hours around a bulk probe.
struct CarbonRun {
    double min_inner = 0.0;
    double contour = 0.0;
    double enhancement = 0.0;
    double seconds = 0.0;
};

CarbonRun carbon_run() {
    const auto start = std::chrono::steady_clock::now();
    auto c = bundled("fig2c");
    const NvProbe probe = cli::resolved_probe(c.probe);
    const auto model = cli::build_coupling(c);
    const auto mesh = Mesh::build(c.grid);
    const CripSolver solver(mesh, c.ensemble, probe, model, c.solver);
    const auto f = solver.evolve(init_field(mesh, 0.0), 7200.0);
    CarbonRun out;
    out.min_inner = 1.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (mesh->centers()[i].norm() <= 16.0) out.min_inner = std::min(out.min_inner, f.values[i]);
    out.contour = contour_radius(radial_profile(f, 0.0), 0.99);
    out.enhancement = enhancement_factor(f, c.ensemble, Sphere{{0, 0, 0}, out.contour},
                                         resonance_field(probe, c.ensemble.species), c.analysis.temperature);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

constexpr double carbon_seconds = 180.0;

Outcome carbon_front_check(const CarbonRun& r) {
    return {r.min_inner > 0.99 && r.contour >= 16.0 && r.contour <= 26.0 && r.seconds < carbon_seconds,
            "min P(r <= 16 nm) " + fmt("%.5f", r.min_inner) + ", 99% contour " + fmt("%.2f", r.contour) + " nm (" +
                fmt("%.1f", r.seconds) + " s)"};
}

constexpr double hydrogen_enhancement = 1.4e6;
constexpr double hydrogen_enhancement_tol = 0.10;

Outcome enhancement_check(const CarbonRun& r) {
    const NvProbe p;
    const double e_h = 0.5 / thermal_polarization(species("1H"), resonance_field(p, species("1H")), 300.0);
    const bool ok_h = std::abs(e_h - hydrogen_enhancement) <= hydrogen_enhancement_tol * hydrogen_enhancement;
    const bool ok_c = r.enhancement >= 2e6 && r.enhancement <= 2e7;
    return {ok_h && ok_c, "1H " + fmt("%.4g", e_h) + ", 13C " + fmt("%.4g", r.enhancement)};
}

constexpr double oracle_tol = 0.10;
constexpr double oracle_seconds = 120.0;

Outcome oracle_check() {
    const auto start = std::chrono::steady_clock::now();
    const auto c = bundled("oracle_compare");
    const NvProbe probe = cli::resolved_probe(c.probe);
    OracleComparisonSettings s;
    s.region = c.oracle.region;
    s.spins = 500;
    s.seeds = 20;
    s.times = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    s.cell_size = c.oracle.cell_size;
    const auto points = compare_with_continuum(c.ensemble, probe, cli::build_coupling(c), s);
    double worst = 0.0;
    for (const auto& p : points) worst = std::max(worst, p.relative_difference());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {points.size() == 5 && worst <= oracle_tol && secs < oracle_seconds,
            "max relative difference " + fmt("%.4f", worst) + " over " + std::to_string(points.size()) +
                " times (" + fmt("%.1f", secs) + " s)"};
}

constexpr double reaction_tol = 1e-8;

Outcome reaction_check() {
    NvProbe probe;
    probe.depth = 2.0;
    TargetEnsemble e{species("1H"), 57.0, 0.0, 0.7, HalfSpaceAboveSurface{}};
    const auto model = default_coupling(probe, e.species, AngularKernel::Transverse, 1.0);
    const auto mesh = Mesh::build(CartesianGrid{{-4, -4, 2}, {4, 4, 10}, 0.5, HalfSpaceAboveSurface{}, 2.0});
    const auto u = cooling_field(*mesh, model, probe);
    double worst = 0.0;
    for (double dt : {std::numeric_limits<double>::infinity(), 1e-3}) {
        SolverConfig cfg;
        if (std::isfinite(dt)) cfg.dt = dt;
        const CripSolver solver(mesh, e, probe, model, cfg);
        auto f = init_field(mesh, 0.0);
        for (double t : {1e-4, 0.01, 0.5, 3.0}) {
            f = solver.evolve(std::move(f), t);
            for (std::size_t i = 0; i < f.size(); ++i) {
                const double k = u[i] + e.spin_lattice_rate;
                worst = std::max(worst, std::abs(f.values[i] - u[i] / k * (1.0 - std::exp(-k * t))));
            }
        }
    }
    return {worst <= reaction_tol, "max deviation " + fmt("%.3g", worst)};
}

constexpr double spreading_tol = 0.02;
constexpr double conservation_tol = 1e-10;
constexpr double diffusion_seconds = 30.0;

Outcome diffusion_check() {
    const auto start = std::chrono::steady_clock::now();
    const double h = 1.0, beta = 1.0, dt = 0.1;
    const int steps = 100;
    const auto mesh = Mesh::build(CartesianGrid{{-30.5, -30.5, -30.5}, {30.5, 30.5, 30.5}, h});
    double worst_spread = 0.0;
    for (auto scheme : {SplitScheme::StrangSplit, SplitScheme::ImplicitEuler}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        auto f = init_field(mesh, 0.0);
        for (std::size_t i = 0; i < f.size(); ++i)
            if (mesh->centers()[i].norm() < 1e-9) f.values[i] = 1.0;
        for (int s = 0; s < steps; ++s) f = diffusion_update(std::move(f), beta, dt, cfg);
        double m0 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double r = mesh->centers()[i].norm();
            m0 += f.values[i];
            m2 += f.values[i] * r * r;
        }
        const double expected = 6.0 * beta * steps * dt;
        worst_spread = std::max(worst_spread, std::abs(m2 / m0 - expected) / expected);
    }

    double worst_drift = 0.0;
    std::mt19937_64 rng(3);
    for (const GridSpec& g : {GridSpec(CartesianGrid{{-4, -4, -4}, {4, 4, 4}, 0.5}),
                              GridSpec(RadialGrid{0.154, 30.0, 200}),
                              GridSpec(CartesianGrid{{-4, -4, 1}, {4, 4, 9}, 0.5, HalfSpaceAboveSurface{}, 3.0})}) {
        auto f = init_field(Mesh::build(g), 0.0);
        for (auto& v : f.values) v = detail::uniform01(rng);
        for (int s = 0; s < 20; ++s) {
            const double before = f.integral();
            f = diffusion_update(std::move(f), 0.8, 0.3, SolverConfig{});
            worst_drift = std::max(worst_drift, std::abs(f.integral() - before) / before);
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst_spread <= spreading_tol && worst_drift <= conservation_tol && secs < diffusion_seconds,
            "spread error " + fmt("%.4f", worst_spread) + ", relative drift per step " + fmt("%.2g", worst_drift) +
                " (" + fmt("%.1f", secs) + " s)"};
}

Outcome lorentzian_check() {
    NvProbe p;
    p.dephasing_rate = 4000.0;
    const double target = 1.1e6;
    const double width = 2.0 * p.dephasing_rate / (2.0 * constants::pi);
    const double step = width / 100.0;
    std::vector<double> freqs;
    for (int i = -1000; i <= 1000; ++i) freqs.push_back(target + 0.37 * step + i * step);
    const auto s = spectrum_from_variance(1e6, p, target, freqs, 1e-3);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < s.rates.size(); ++i)
        if (s.rates[i] > s.rates[peak]) peak = i;
    const double fwhm = spectrum_fwhm(s, total_rate(0.0, p));
    return {std::abs(fwhm - width) <= step && std::abs(s.frequencies[peak] - target) <= step,
            "FWHM " + fmt("%.3f", fwhm) + " Hz vs " + fmt("%.3f", width) + " Hz, peak offset " +
                fmt("%.3f", s.frequencies[peak] - target) + " Hz, step " + fmt("%.3f", step) + " Hz"};
}

Outcome scaleup_check() {
    const PolarizationCell cell;
    const auto& hep = AgentRegistry::builtin().find("HEP");
    bool ok = true;
    std::string d;
    for (double p : {0.5, 0.8}) {
        const double q = stack_delivery_rate(StackConfig{}, cell, hep, p);
        ok = ok && q >= 10.0 && q <= 100.0;
        d += "Q(" + fmt("%.1f", p) + ") " + fmt("%.2f", q) + " uL/s, ";
    }
    std::vector<double> times;
    for (int i = 0; i <= 300; ++i) times.push_back(i);
    const auto curve = cell_polarization_curve(cell, hep, times);
    const double p_inf = CellKinetics(cell, hep).saturation();
    bool monotone = true;
    for (std::size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i].second >= curve[i - 1].second;
    const bool saturating = curve.back().second <= p_inf && curve.back().second > 0.99 * p_inf;
    const double t80 = time_to_polarization(cell, hep, 0.8);
    ok = ok && monotone && saturating && std::isfinite(t80) && t80 > 0.0;
    d += std::string("monotone ") + (monotone ? "yes" : "no") + ", P(300 s) " + fmt("%.4f", curve.back().second) +
         " of P_inf " + fmt("%.4f", p_inf) + ", t80 " + fmt("%.3f", t80) + " s";
    return {ok, d};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism_check() {
    const auto root = std::filesystem::temp_directory_path() / "crip_acceptance_determinism";
    std::filesystem::remove_all(root);
    std::vector<cli::RunResult> runs;
    for (const char* sub : {"a", "b"}) {
        cli::RunOptions o;
        o.output_directory = (root / sub).string();
        o.seed = 20240611;
        runs.push_back(cli::run(bundled("oracle_compare"), o));
    }
    std::size_t compared = 0;
    bool same = runs[0].files == runs[1].files;
    for (const auto& f : runs[0].files) {
        if (std::filesystem::path(f).extension() != ".csv") continue;
        same = same && slurp(runs[0].directory / f) == slurp(runs[1].directory / f);
        ++compared;
    }
    std::filesystem::remove_all(root);
    return {same && compared > 0, std::to_string(compared) + " CSV files compared byte for byte"};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "resonance fields", resonance_fields);
    report(2, "transition frequencies", transition_frequencies);

    std::vector<PmmaRun> pmma;
    std::string pmma_error;
    try {
        pmma = pmma_runs();
    } catch (const std::exception& e) {
        pmma_error = e.what();
    }
    auto need_pmma = [&] {
        require(!pmma.empty(), "PMMA steady state failed: " + pmma_error);
    };
    report(3, "PMMA steady-state ratio", [&] { need_pmma(); return pmma_ratio_check(pmma); });

    CarbonRun carbon;
    std::string carbon_error;
    try {
        carbon = carbon_run();
    } catch (const std::exception& e) {
        carbon_error = e.what();
    }
    auto need_carbon = [&] { require(carbon_error.empty(), "13C evolution failed: " + carbon_error); };
    report(4, "13C polarisation front", [&] { need_carbon(); return carbon_front_check(carbon); });
    report(5, "1H polarised spin count", [&] { need_pmma(); return pmma_count_check(pmma); });
    report(6, "enhancement factors", [&] { need_carbon(); return enhancement_check(carbon); });
    report(7, "oracle equivalence", oracle_check);
    report(8, "analytic reaction", reaction_check);
    report(9, "diffusion spreading and conservation", diffusion_check);
    report(10, "Lorentzian spectrum", lorentzian_check);
    report(11, "scale-up brackets", scaleup_check);
    report(12, "determinism", determinism_check);

    std::printf("%d of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
