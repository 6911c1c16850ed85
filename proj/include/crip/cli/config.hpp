#pragma once

// Experiment configuration: strict JSON parsing with defaults, exhaustive
// validation messages keyed by dotted path, and serialisation of the
// resolved config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "crip/discrete.hpp"
#include "crip/mesh.hpp"
#include "crip/pde.hpp"
#include "crip/scaleup.hpp"
#include "crip/spin.hpp"

namespace crip::cli {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { Spectrum, RelaxCurve, Evolve, SteadyState, OracleCompare, Scaleup };

inline const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
    static const std::vector<std::pair<ExperimentKind, std::string>> names{
        {ExperimentKind::Spectrum, "spectrum"},           {ExperimentKind::RelaxCurve, "relax-curve"},
        {ExperimentKind::Evolve, "evolve"},               {ExperimentKind::SteadyState, "steady-state"},
        {ExperimentKind::OracleCompare, "oracle-compare"}, {ExperimentKind::Scaleup, "scaleup"}};
    return names;
}

inline std::string to_string(ExperimentKind k) {
    for (const auto& [kind, name] : kind_names())
        if (kind == k) return name;
    return "?";
}

/// Syntax or validation failure. `problems` lists every violation found.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems, std::optional<int> line = std::nullopt)
        : std::runtime_error(join(problems)), problems_(std::move(problems)), line_(line) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }
    std::optional<int> line() const noexcept { return line_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid config";
        for (const auto& x : p) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> problems_;
    std::optional<int> line_;
};

// ---------------------------------------------------------------------------
//  Config sections
// ---------------------------------------------------------------------------

struct CouplingConfig {
    AngularKernel kernel = AngularKernel::Transverse;
    std::optional<double> cutoff_radius;  ///< default: bond length, or depth minus one cell for surface ensembles
    double prefactor_scale = 1.0;
    std::optional<AngularKernel> match_variance_to;
    bool operator==(const CouplingConfig&) const = default;
};

struct ScheduleConfig {
    double t_end = 0.0;
    std::vector<double> snapshots;
    bool steady_state = false;
    bool operator==(const ScheduleConfig&) const = default;
};

struct SpectrumConfig {
    double span_hz = 0.0;  ///< 0: twenty linewidths
    int points = 401;
    double tau = 1e-3;
    double baseline = default_pl_baseline;
    double amplitude = default_pl_amplitude;
    bool operator==(const SpectrumConfig&) const = default;
};

struct RelaxConfig {
    double tau_max = 0.0;  ///< 0: five decay times of the slower curve
    int points = 60;
    double noise = 0.0;  ///< additive Gaussian noise on the PL signal
    double baseline = default_pl_baseline;
    double amplitude = default_pl_amplitude;
    bool operator==(const RelaxConfig&) const = default;
};

struct AnalysisConfig {
    double threshold = 0.99;    ///< contour level for counts and radii
    double target_mean = 0.5;   ///< mean polarisation of the reported polarised region
    double temperature = 300.0; ///< K, for enhancement
    double region_radius = 0.0; ///< enhancement sphere radius; 0 uses the contour radius
    double profile_bin = 0.0;   ///< radial binning for Cartesian fields; 0 uses the cell size
    bool operator==(const AnalysisConfig&) const = default;
};

struct OracleConfig {
    Box region{{-3.0, -3.0, 2.0}, {3.0, 3.0, 9.2}};
    int spins = 500;
    int seeds = 20;
    std::vector<double> times{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    double cell_size = 0.1;
    bool operator==(const OracleConfig&) const = default;
};

struct ScaleupConfig {
    std::vector<std::string> agents{"15N-TMPA", "H2O", "HEP"};
    PolarizationCell cell;
    StackConfig stack;
    double spin_lattice_rate = 1.0 / 60.0;
    double t_end = 60.0;
    int points = 601;
    std::vector<double> targets{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    bool operator==(const ScaleupConfig&) const = default;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Spectrum;
    std::string name;
    std::string description;
    std::uint64_t seed = 1;
    std::string output_directory = "out";

    NvProbe probe;
    TargetEnsemble ensemble;
    CouplingConfig coupling;
    GridSpec grid = RadialGrid{};
    SolverConfig solver;
    ScheduleConfig schedule;
    SpectrumConfig spectrum;
    RelaxConfig relax;
    AnalysisConfig analysis;
    OracleConfig oracle;
    ScaleupConfig scaleup;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Sections each kind reads; every other section is rejected.
inline std::set<std::string> sections_for(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Spectrum:
            return {"probe", "ensemble", "coupling", "grid", "solver", "schedule", "spectrum"};
        case ExperimentKind::RelaxCurve:
            return {"probe", "ensemble", "coupling", "grid", "solver", "schedule", "relax"};
        case ExperimentKind::Evolve:
            return {"probe", "ensemble", "coupling", "grid", "solver", "schedule", "analysis"};
        case ExperimentKind::SteadyState:
            return {"probe", "ensemble", "coupling", "grid", "solver", "analysis"};
        case ExperimentKind::OracleCompare:
            return {"probe", "ensemble", "coupling", "oracle"};
        case ExperimentKind::Scaleup:
            return {"scaleup"};
    }
    return {};
}

// ---------------------------------------------------------------------------
//  Name tables
// ---------------------------------------------------------------------------

namespace detail {

template <class E>
using NameTable = std::vector<std::pair<E, std::string>>;

inline const NameTable<AngularKernel>& kernel_table() {
    static const NameTable<AngularKernel> t{{AngularKernel::Isotropic, "isotropic"},
                                            {AngularKernel::Secular, "secular"},
                                            {AngularKernel::Transverse, "transverse"}};
    return t;
}
inline const NameTable<BoundaryKind>& boundary_table() {
    static const NameTable<BoundaryKind> t{{BoundaryKind::ZeroFlux, "zero-flux"},
                                           {BoundaryKind::FixedZero, "fixed-zero"}};
    return t;
}
inline const NameTable<SplitScheme>& scheme_table() {
    static const NameTable<SplitScheme> t{{SplitScheme::StrangSplit, "strang"},
                                          {SplitScheme::ImplicitEuler, "implicit-euler"}};
    return t;
}
inline const NameTable<RadialSpacing>& spacing_table() {
    static const NameTable<RadialSpacing> t{{RadialSpacing::Linear, "linear"},
                                            {RadialSpacing::Logarithmic, "logarithmic"}};
    return t;
}

template <class E>
std::string name_of(const NameTable<E>& t, E e) {
    for (const auto& [v, n] : t)
        if (v == e) return n;
    return "?";
}

template <class E>
std::string choices(const NameTable<E>& t) {
    std::string s;
    for (const auto& [v, n] : t) s += (s.empty() ? "" : ", ") + ("'" + n + "'");
    return s;
}

/// Typed, key-tracking reader over one JSON object.
class Reader {
public:
    Reader(const Json* object, std::string path, std::vector<std::string>& errors)
        : obj_(object), path_(std::move(path)), errors_(errors) {}

    bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void fail(const std::string& key, const std::string& msg) { errors_.push_back(key_path(key) + ": " + msg); }

    /// Child object (possibly absent: then every lookup yields its default).
    Reader section(const std::string& key) {
        seen_.insert(key);
        const Json* child = nullptr;
        if (has(key)) {
            if (obj_->at(key).is_object()) child = &obj_->at(key);
            else fail(key, "must be an object");
        }
        return Reader(child, key_path(key), errors_);
    }

    double number(const std::string& key, double def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_number()) {
            fail(key, "must be a number");
            return def;
        }
        return v.get<double>();
    }

    std::optional<double> optional_number(const std::string& key) {
        if (!has(key)) {
            seen_.insert(key);
            return std::nullopt;
        }
        return number(key, 0.0);
    }

    int integer(const std::string& key, int def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_number_integer()) {
            fail(key, "must be an integer");
            return def;
        }
        return v.get<int>();
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_number_unsigned()) {
            fail(key, "must be a non-negative integer");
            return def;
        }
        return v.get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_boolean()) {
            fail(key, "must be true or false");
            return def;
        }
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_string()) {
            fail(key, "must be a string");
            return def;
        }
        return v.get<std::string>();
    }

    std::optional<std::string> optional_string(const std::string& key) {
        if (!has(key)) {
            seen_.insert(key);
            return std::nullopt;
        }
        return string(key, "");
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number(); })) {
            fail(key, "must be an array of numbers");
            return def;
        }
        return v.get<std::vector<double>>();
    }

    std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
        seen_.insert(key);
        if (!has(key)) return def;
        const auto& v = obj_->at(key);
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_string(); })) {
            fail(key, "must be an array of strings");
            return def;
        }
        return v.get<std::vector<std::string>>();
    }

    Vec3 vec3(const std::string& key, Vec3 def) {
        if (!has(key)) {
            seen_.insert(key);
            return def;
        }
        const auto v = numbers(key, {});
        if (v.size() != 3) {
            if (!v.empty() || obj_->at(key).is_array()) fail(key, "must have exactly 3 components");
            return def;
        }
        return {v[0], v[1], v[2]};
    }

    template <class E>
    E choice(const std::string& key, const NameTable<E>& table, E def) {
        const auto s = optional_string(key);
        if (!s) return def;
        for (const auto& [v, n] : table)
            if (n == *s) return v;
        fail(key, "must be one of " + choices(table) + " (got '" + *s + "')");
        return def;
    }

    /// Report keys that were never read.
    void finish() {
        if (!obj_) return;
        for (const auto& [k, v] : obj_->items())
            if (!seen_.count(k)) errors_.push_back(key_path(k) + ": unknown key");
    }

    /// Mark a key as consumed without reading it.
    void ignore(const std::string& key) { seen_.insert(key); }

private:
    const Json* obj_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

/// Accumulates "key: constraint (got value)" violations.
struct Checker {
    Reader& r;
    void operator()(bool ok, const std::string& key, const std::string& constraint, double got) const {
        if (!ok) {
            std::ostringstream s;
            s << constraint << " (got " << got << ")";
            r.fail(key, s.str());
        }
    }
};

inline int line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

inline bool strictly_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return true;
}

inline double default_cell_size(const GridSpec& g) {
    if (const auto* c = std::get_if<CartesianGrid>(&g)) return c->cell_size;
    const auto& r = std::get<RadialGrid>(g);
    return (r.r_max - r.r_min) / r.n_cells;
}

}  // namespace detail

// ---------------------------------------------------------------------------
//  Parsing
// ---------------------------------------------------------------------------

namespace detail {

/// Probe section; the axis is kept as written and normalised when the run starts.
inline NvProbe parse_probe(Reader r, NvProbe p = {}) {
    Checker check{r};
    p.zero_field_splitting = r.number("zero_field_splitting", p.zero_field_splitting);
    p.gamma_nv = r.number("gamma_nv", p.gamma_nv);
    p.dephasing_rate = r.number("dephasing_rate", p.dephasing_rate);
    p.background_rate = r.number("background_rate", p.background_rate);
    p.depth = r.number("depth", p.depth);
    p.axis = r.vec3("axis", p.axis);
    check(p.zero_field_splitting > 0.0, "zero_field_splitting", "must be > 0", p.zero_field_splitting);
    check(p.gamma_nv > 0.0, "gamma_nv", "must be > 0", p.gamma_nv);
    check(p.dephasing_rate > 0.0, "dephasing_rate", "must be > 0", p.dephasing_rate);
    check(p.background_rate >= 0.0, "background_rate", "must be >= 0", p.background_rate);
    check(p.depth > 0.0, "depth", "must be > 0", p.depth);
    if (!(p.axis.norm() > 0.0)) r.fail("axis", "must be a nonzero vector");
    r.finish();
    return p;
}

inline TargetEnsemble parse_ensemble(Reader r) {
    Checker check{r};
    TargetEnsemble e;
    const auto& registry = SpeciesRegistry::builtin();
    const auto species = r.optional_string("species");
    if (!species) r.fail("species", "is required");
    else if (!registry.contains(*species)) r.fail("species", "unknown species '" + *species + "'");
    else e.species = registry.find(*species);
    if (!r.has("number_density")) r.fail("number_density", "is required");
    e.number_density = r.number("number_density", 1.0);
    e.diffusion = r.number("diffusion", 0.0);
    e.spin_lattice_rate = r.number("spin_lattice_rate", 0.0);
    check(e.number_density > 0.0, "number_density", "must be > 0", e.number_density);
    check(e.diffusion >= 0.0, "diffusion", "must be >= 0", e.diffusion);
    check(e.spin_lattice_rate >= 0.0, "spin_lattice_rate", "must be >= 0", e.spin_lattice_rate);
    const auto geo = r.string("geometry", "full-space");
    const auto bounds = r.numbers("slab", {});
    if (geo == "full-space") e.geometry = FullSpace{};
    else if (geo == "half-space") e.geometry = HalfSpaceAboveSurface{};
    else if (geo == "slab") {
        if (bounds.size() != 2 || !(bounds[0] < bounds[1])) r.fail("slab", "must be [z_lo, z_hi] with z_lo < z_hi");
        else e.geometry = Slab{bounds[0], bounds[1]};
    } else {
        r.fail("geometry", "must be one of 'full-space', 'half-space', 'slab' (got '" + geo + "')");
    }
    if (geo != "slab" && r.has("slab")) r.fail("slab", "only valid with geometry 'slab'");
    r.finish();
    return e;
}

inline GridSpec parse_grid(Reader r, const Geometry& geometry) {
    Checker check{r};
    const bool full = std::holds_alternative<FullSpace>(geometry);
    const auto type = r.string("type", full ? "radial" : "cartesian");
    if (type == "radial") {
        RadialGrid g;
        g.r_min = r.number("r_min", g.r_min);
        g.r_max = r.number("r_max", g.r_max);
        g.n_cells = r.integer("cells", g.n_cells);
        g.spacing = r.choice("spacing", spacing_table(), g.spacing);
        check(g.r_min > 0.0, "r_min", "must be > 0", g.r_min);
        check(g.r_max > g.r_min, "r_max", "must exceed r_min", g.r_max);
        check(g.n_cells >= 8, "cells", "must be >= 8", g.n_cells);
        if (!full) r.fail("type", "radial grids require geometry 'full-space'");
        r.finish();
        return g;
    }
    CartesianGrid g;
    if (type != "cartesian") r.fail("type", "must be 'radial' or 'cartesian' (got '" + type + "')");
    g.lower = r.vec3("lower", g.lower);
    g.upper = r.vec3("upper", g.upper);
    g.cell_size = r.number("cell_size", g.cell_size);
    check(g.cell_size > 0.0, "cell_size", "must be > 0", g.cell_size);
    if (g.cell_size > 0.0) {
        const double ext[3] = {g.upper.x - g.lower.x, g.upper.y - g.lower.y, g.upper.z - g.lower.z};
        for (double e : ext) {
            const double n = e / g.cell_size;
            if (!(e > 0.0) || std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n) || std::round(n) < 2.0) {
                r.fail("upper", "box extent must be a whole number (>= 2) of cells along every axis");
                break;
            }
        }
    }
    r.finish();
    return g;
}

inline Boundaries parse_boundaries(Reader r) {
    Boundaries b;
    b.radial_inner = r.choice("radial_inner", boundary_table(), b.radial_inner);
    b.radial_outer = r.choice("radial_outer", boundary_table(), b.radial_outer);
    static const char* faces[6] = {"x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi"};
    for (int f = 0; f < 6; ++f) b.box[f] = r.choice(faces[f], boundary_table(), b.box[f]);
    r.finish();
    return b;
}

inline SolverConfig parse_solver(Reader r) {
    Checker check{r};
    SolverConfig s;
    s.dt = r.number("dt", s.dt);
    s.scheme = r.choice("scheme", scheme_table(), s.scheme);
    s.steady_tolerance = r.number("steady_tolerance", s.steady_tolerance);
    s.max_iterations = r.integer("max_iterations", s.max_iterations);
    s.duty_factor = r.number("duty_factor", s.duty_factor);
    s.boundaries = parse_boundaries(r.section("boundaries"));
    check(s.dt >= 0.0, "dt", "must be >= 0 (0 selects the automatic step)", s.dt);
    check(s.steady_tolerance > 0.0 && s.steady_tolerance < 1.0, "steady_tolerance", "must be in (0, 1)",
          s.steady_tolerance);
    check(s.max_iterations > 0, "max_iterations", "must be > 0", s.max_iterations);
    check(s.duty_factor > 0.0 && s.duty_factor <= 1.0, "duty_factor", "must be in (0, 1]", s.duty_factor);
    r.finish();
    return s;
}

inline CouplingConfig parse_coupling(Reader r) {
    Checker check{r};
    CouplingConfig c;
    c.kernel = r.choice("kernel", kernel_table(), c.kernel);
    c.cutoff_radius = r.optional_number("cutoff_radius");
    c.prefactor_scale = r.number("prefactor_scale", c.prefactor_scale);
    if (r.has("match_variance_to")) c.match_variance_to = r.choice("match_variance_to", kernel_table(), c.kernel);
    else r.ignore("match_variance_to");
    if (c.cutoff_radius) check(*c.cutoff_radius > 0.0, "cutoff_radius", "must be > 0", *c.cutoff_radius);
    check(c.prefactor_scale > 0.0, "prefactor_scale", "must be > 0", c.prefactor_scale);
    r.finish();
    return c;
}

inline ScheduleConfig parse_schedule(Reader r) {
    Checker check{r};
    ScheduleConfig s;
    s.t_end = r.number("t_end", s.t_end);
    s.snapshots = r.numbers("snapshots", s.snapshots);
    s.steady_state = r.boolean("steady_state", s.steady_state);
    check(s.t_end >= 0.0, "t_end", "must be >= 0", s.t_end);
    std::vector<double> sorted = s.snapshots;
    std::sort(sorted.begin(), sorted.end());
    if (!detail::strictly_increasing(sorted)) r.fail("snapshots", "must not contain duplicates");
    for (double t : s.snapshots)
        if (t < 0.0) {
            r.fail("snapshots", "times must be >= 0");
            break;
        }
    r.finish();
    return s;
}

inline SpectrumConfig parse_spectrum(Reader r) {
    Checker check{r};
    SpectrumConfig s;
    s.span_hz = r.number("span_hz", s.span_hz);
    s.points = r.integer("points", s.points);
    s.tau = r.number("tau", s.tau);
    s.baseline = r.number("baseline", s.baseline);
    s.amplitude = r.number("amplitude", s.amplitude);
    check(s.span_hz >= 0.0, "span_hz", "must be >= 0 (0 selects twenty linewidths)", s.span_hz);
    check(s.points >= 3, "points", "must be >= 3", s.points);
    check(s.tau > 0.0, "tau", "must be > 0", s.tau);
    r.finish();
    return s;
}

inline RelaxConfig parse_relax(Reader r) {
    Checker check{r};
    RelaxConfig s;
    s.tau_max = r.number("tau_max", s.tau_max);
    s.points = r.integer("points", s.points);
    s.noise = r.number("noise", s.noise);
    s.baseline = r.number("baseline", s.baseline);
    s.amplitude = r.number("amplitude", s.amplitude);
    check(s.tau_max >= 0.0, "tau_max", "must be >= 0 (0 selects five decay times)", s.tau_max);
    check(s.points >= 4, "points", "must be >= 4", s.points);
    check(s.noise >= 0.0, "noise", "must be >= 0", s.noise);
    check(s.amplitude != 0.0, "amplitude", "must be nonzero", s.amplitude);
    r.finish();
    return s;
}

inline AnalysisConfig parse_analysis(Reader r) {
    Checker check{r};
    AnalysisConfig a;
    a.threshold = r.number("threshold", a.threshold);
    a.target_mean = r.number("target_mean", a.target_mean);
    a.temperature = r.number("temperature", a.temperature);
    a.region_radius = r.number("region_radius", a.region_radius);
    a.profile_bin = r.number("profile_bin", a.profile_bin);
    check(a.threshold > 0.0 && a.threshold <= 1.0, "threshold", "must be in (0, 1]", a.threshold);
    check(a.target_mean > 0.0 && a.target_mean <= 1.0, "target_mean", "must be in (0, 1]", a.target_mean);
    check(a.temperature > 0.0, "temperature", "must be > 0", a.temperature);
    check(a.region_radius >= 0.0, "region_radius", "must be >= 0", a.region_radius);
    check(a.profile_bin >= 0.0, "profile_bin", "must be >= 0", a.profile_bin);
    r.finish();
    return a;
}

inline OracleConfig parse_oracle(Reader r) {
    Checker check{r};
    OracleConfig o;
    o.region.lower = r.vec3("lower", o.region.lower);
    o.region.upper = r.vec3("upper", o.region.upper);
    o.spins = r.integer("spins", o.spins);
    o.seeds = r.integer("seeds", o.seeds);
    o.times = r.numbers("times", o.times);
    o.cell_size = r.number("cell_size", o.cell_size);
    if (!(o.region.volume() > 0.0)) r.fail("upper", "region must have positive volume");
    check(o.spins >= 1, "spins", "must be >= 1", o.spins);
    check(o.seeds >= 1, "seeds", "must be >= 1", o.seeds);
    check(o.cell_size > 0.0, "cell_size", "must be > 0", o.cell_size);
    if (o.times.empty() || !strictly_increasing(o.times) || o.times.front() <= 0.0)
        r.fail("times", "must be a non-empty, strictly increasing list of positive times");
    r.finish();
    return o;
}

inline ScaleupConfig parse_scaleup(Reader r) {
    Checker check{r};
    ScaleupConfig s;
    s.agents = r.strings("agents", s.agents);
    const auto registry = AgentRegistry::builtin();
    if (s.agents.empty()) r.fail("agents", "must name at least one agent");
    for (const auto& a : s.agents)
        if (!registry.contains(a)) r.fail("agents", "unknown agent '" + a + "'");
    {
        Reader c = r.section("cell");
        Checker cc{c};
        auto& cell = s.cell;
        cell.area_mm2 = c.number("area_mm2", cell.area_mm2);
        cell.channel_height_um = c.number("channel_height_um", cell.channel_height_um);
        cell.nv_density_per_cm2 = c.number("nv_density_per_cm2", cell.nv_density_per_cm2);
        cell.nv_layers = c.integer("nv_layers", cell.nv_layers);
        cell.per_nv_cap = c.number("per_nv_cap", cell.per_nv_cap);
        cell.kernel = c.choice("kernel", kernel_table(), cell.kernel);
        cell.probe = parse_probe(c.section("probe"), PolarizationCell::cell_probe());
        cc(cell.area_mm2 > 0.0, "area_mm2", "must be > 0", cell.area_mm2);
        cc(cell.channel_height_um > 0.0, "channel_height_um", "must be > 0", cell.channel_height_um);
        cc(cell.nv_density_per_cm2 > 0.0, "nv_density_per_cm2", "must be > 0", cell.nv_density_per_cm2);
        cc(cell.nv_layers == 1 || cell.nv_layers == 2, "nv_layers", "must be 1 or 2", cell.nv_layers);
        cc(cell.per_nv_cap > 0.0, "per_nv_cap", "must be > 0", cell.per_nv_cap);
        c.finish();
    }
    {
        Reader st = r.section("stack");
        Checker sc{st};
        s.stack.cells = st.integer("cells", s.stack.cells);
        s.stack.dilution_factor = st.number("dilution_factor", s.stack.dilution_factor);
        sc(s.stack.cells >= 1, "cells", "must be >= 1", s.stack.cells);
        sc(s.stack.dilution_factor >= 1.0, "dilution_factor", "must be >= 1", s.stack.dilution_factor);
        st.finish();
    }
    s.spin_lattice_rate = r.number("spin_lattice_rate", s.spin_lattice_rate);
    s.t_end = r.number("t_end", s.t_end);
    s.points = r.integer("points", s.points);
    s.targets = r.numbers("targets", s.targets);
    check(s.spin_lattice_rate >= 0.0, "spin_lattice_rate", "must be >= 0", s.spin_lattice_rate);
    check(s.t_end > 0.0, "t_end", "must be > 0", s.t_end);
    check(s.points >= 2, "points", "must be >= 2", s.points);
    for (double p : s.targets)
        if (!(p > 0.0 && p < 1.0)) {
            r.fail("targets", "polarisation targets must lie in (0, 1)");
            break;
        }
    r.finish();
    return s;
}

}  // namespace detail

/// Parse and validate a JSON experiment description.
inline ExperimentConfig parse_config(const std::string& text) {
    Json root;
    try {
        root = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const int line = detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError({"syntax error at line " + std::to_string(line) + ": " + e.what()}, line);
    }
    if (!root.is_object()) throw ConfigError({"config root must be an object"}, 1);

    std::vector<std::string> errors;
    detail::Reader r(&root, "", errors);
    ExperimentConfig c;

    const auto kind = r.optional_string("experiment");
    bool kind_ok = false;
    if (!kind) r.fail("experiment", "is required");
    else {
        for (const auto& [k, n] : kind_names())
            if (n == *kind) {
                c.kind = k;
                kind_ok = true;
            }
        if (!kind_ok) {
            std::string all;
            for (const auto& [k, n] : kind_names()) all += (all.empty() ? "'" : ", '") + n + "'";
            r.fail("experiment", "must be one of " + all + " (got '" + *kind + "')");
        }
    }
    c.name = r.string("name", c.name);
    c.description = r.string("description", c.description);
    c.seed = r.unsigned_integer("seed", c.seed);
    {
        auto out = r.section("output");
        c.output_directory = out.string("directory", c.output_directory);
        if (c.output_directory.empty()) out.fail("directory", "must not be empty");
        out.finish();
    }

    if (kind_ok) {
        const auto used = sections_for(c.kind);
        for (const char* s : {"probe", "ensemble", "coupling", "grid", "solver", "schedule", "spectrum", "relax",
                              "analysis", "oracle", "scaleup"}) {
            if (!used.count(s)) {
                if (r.has(s)) r.fail(s, "section is not used by experiment '" + to_string(c.kind) + "'");
                r.ignore(s);
            }
        }
        if (used.count("probe")) c.probe = detail::parse_probe(r.section("probe"));
        if (used.count("ensemble")) c.ensemble = detail::parse_ensemble(r.section("ensemble"));
        if (used.count("coupling")) c.coupling = detail::parse_coupling(r.section("coupling"));
        if (used.count("grid")) c.grid = detail::parse_grid(r.section("grid"), c.ensemble.geometry);
        if (used.count("solver")) c.solver = detail::parse_solver(r.section("solver"));
        if (used.count("schedule")) c.schedule = detail::parse_schedule(r.section("schedule"));
        if (used.count("spectrum")) c.spectrum = detail::parse_spectrum(r.section("spectrum"));
        if (used.count("relax")) c.relax = detail::parse_relax(r.section("relax"));
        if (used.count("analysis")) c.analysis = detail::parse_analysis(r.section("analysis"));
        if (used.count("oracle")) c.oracle = detail::parse_oracle(r.section("oracle"));
        if (used.count("scaleup")) c.scaleup = detail::parse_scaleup(r.section("scaleup"));

        if (used.count("coupling") && !c.coupling.cutoff_radius) {
            const double spacing = used.count("grid") ? detail::default_cell_size(c.grid) : c.oracle.cell_size;
            c.coupling.cutoff_radius = default_cutoff_radius(c.ensemble, c.probe, spacing);
        }
        if (c.kind == ExperimentKind::Evolve && c.schedule.t_end <= 0.0 && c.schedule.snapshots.empty())
            errors.push_back("schedule.t_end: evolve needs t_end > 0 or snapshot times");
        if (c.kind == ExperimentKind::Evolve && c.schedule.steady_state)
            errors.push_back("schedule.steady_state: not valid for evolve (use experiment 'steady-state')");
    } else {
        for (const char* s : {"probe", "ensemble", "coupling", "grid", "solver", "schedule", "spectrum", "relax",
                              "analysis", "oracle", "scaleup"})
            r.ignore(s);
    }
    r.finish();
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

// ---------------------------------------------------------------------------
//  Serialisation
// ---------------------------------------------------------------------------

namespace detail {

inline Json to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

inline Json probe_json(const NvProbe& p) {
    return Json{{"zero_field_splitting", p.zero_field_splitting},
                {"gamma_nv", p.gamma_nv},
                {"dephasing_rate", p.dephasing_rate},
                {"background_rate", p.background_rate},
                {"depth", p.depth},
                {"axis", to_json(p.axis)}};
}

}  // namespace detail

/// Resolved config as JSON; parse_config(serialize(c)) == c.
inline Json to_json(const ExperimentConfig& c) {
    using namespace detail;
    Json j;
    j["experiment"] = to_string(c.kind);
    j["name"] = c.name;
    j["description"] = c.description;
    j["seed"] = c.seed;
    j["output"] = Json{{"directory", c.output_directory}};
    const auto used = sections_for(c.kind);
    if (used.count("probe")) j["probe"] = probe_json(c.probe);
    if (used.count("ensemble")) {
        Json e{{"species", c.ensemble.species.name},
               {"number_density", c.ensemble.number_density},
               {"diffusion", c.ensemble.diffusion},
               {"spin_lattice_rate", c.ensemble.spin_lattice_rate}};
        std::visit(
            [&](const auto& g) {
                using T = std::decay_t<decltype(g)>;
                if constexpr (std::is_same_v<T, FullSpace>) e["geometry"] = "full-space";
                else if constexpr (std::is_same_v<T, HalfSpaceAboveSurface>) e["geometry"] = "half-space";
                else {
                    e["geometry"] = "slab";
                    e["slab"] = Json::array({g.z_lo, g.z_hi});
                }
            },
            c.ensemble.geometry);
        j["ensemble"] = e;
    }
    if (used.count("coupling")) {
        Json k{{"kernel", name_of(kernel_table(), c.coupling.kernel)}};
        if (c.coupling.cutoff_radius) k["cutoff_radius"] = *c.coupling.cutoff_radius;
        k["prefactor_scale"] = c.coupling.prefactor_scale;
        if (c.coupling.match_variance_to) k["match_variance_to"] = name_of(kernel_table(), *c.coupling.match_variance_to);
        j["coupling"] = k;
    }
    if (used.count("grid")) {
        if (const auto* g = std::get_if<RadialGrid>(&c.grid))
            j["grid"] = Json{{"type", "radial"},
                             {"r_min", g->r_min},
                             {"r_max", g->r_max},
                             {"cells", g->n_cells},
                             {"spacing", name_of(spacing_table(), g->spacing)}};
        else {
            const auto& b = std::get<CartesianGrid>(c.grid);
            j["grid"] = Json{{"type", "cartesian"},
                             {"lower", to_json(b.lower)},
                             {"upper", to_json(b.upper)},
                             {"cell_size", b.cell_size}};
        }
    }
    if (used.count("solver")) {
        const auto& b = c.solver.boundaries;
        Json bj{{"radial_inner", name_of(boundary_table(), b.radial_inner)},
                {"radial_outer", name_of(boundary_table(), b.radial_outer)}};
        static const char* faces[6] = {"x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi"};
        for (int f = 0; f < 6; ++f) bj[faces[f]] = name_of(boundary_table(), b.box[f]);
        j["solver"] = Json{{"dt", c.solver.dt},
                           {"scheme", name_of(scheme_table(), c.solver.scheme)},
                           {"steady_tolerance", c.solver.steady_tolerance},
                           {"max_iterations", c.solver.max_iterations},
                           {"duty_factor", c.solver.duty_factor},
                           {"boundaries", bj}};
    }
    if (used.count("schedule"))
        j["schedule"] = Json{{"t_end", c.schedule.t_end},
                             {"snapshots", c.schedule.snapshots},
                             {"steady_state", c.schedule.steady_state}};
    if (used.count("spectrum"))
        j["spectrum"] = Json{{"span_hz", c.spectrum.span_hz},
                             {"points", c.spectrum.points},
                             {"tau", c.spectrum.tau},
                             {"baseline", c.spectrum.baseline},
                             {"amplitude", c.spectrum.amplitude}};
    if (used.count("relax"))
        j["relax"] = Json{{"tau_max", c.relax.tau_max},
                          {"points", c.relax.points},
                          {"noise", c.relax.noise},
                          {"baseline", c.relax.baseline},
                          {"amplitude", c.relax.amplitude}};
    if (used.count("analysis"))
        j["analysis"] = Json{{"threshold", c.analysis.threshold},
                             {"target_mean", c.analysis.target_mean},
                             {"temperature", c.analysis.temperature},
                             {"region_radius", c.analysis.region_radius},
                             {"profile_bin", c.analysis.profile_bin}};
    if (used.count("oracle"))
        j["oracle"] = Json{{"lower", to_json(c.oracle.region.lower)},
                           {"upper", to_json(c.oracle.region.upper)},
                           {"spins", c.oracle.spins},
                           {"seeds", c.oracle.seeds},
                           {"times", c.oracle.times},
                           {"cell_size", c.oracle.cell_size}};
    if (used.count("scaleup")) {
        const auto& s = c.scaleup;
        j["scaleup"] = Json{{"agents", s.agents},
                            {"cell",
                             {{"area_mm2", s.cell.area_mm2},
                              {"channel_height_um", s.cell.channel_height_um},
                              {"nv_density_per_cm2", s.cell.nv_density_per_cm2},
                              {"nv_layers", s.cell.nv_layers},
                              {"per_nv_cap", s.cell.per_nv_cap},
                              {"kernel", name_of(kernel_table(), s.cell.kernel)},
                              {"probe", probe_json(s.cell.probe)}}},
                            {"stack", {{"cells", s.stack.cells}, {"dilution_factor", s.stack.dilution_factor}}},
                            {"spin_lattice_rate", s.spin_lattice_rate},
                            {"t_end", s.t_end},
                            {"points", s.points},
                            {"targets", s.targets}};
    }
    return j;
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

/// 64-bit FNV-1a, used to fingerprint resolved configs.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace crip::cli
