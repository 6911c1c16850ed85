#pragma once

/**
 * @file pde.hpp
 * @brief Reaction-diffusion model of probe-driven nuclear polarisation:
 *
 *     dP/dt = beta lap(P) - (u + Gamma_SL) P + u,     P(R, 0) = P0.
 *
 * The local term is integrated exactly per cell; diffusion is implicit
 * (backward Euler, or Crank-Nicolson sub-stepped to stay positivity
 * preserving). A time step is Strang split: half diffusion, full reaction,
 * half diffusion.
 */

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crip/error.hpp"
#include "crip/linear.hpp"
#include "crip/mesh.hpp"
#include "crip/spin.hpp"

namespace crip {

struct PolarizationField {
    std::shared_ptr<const Mesh> mesh;
    std::vector<double> values;
    double time = 0.0;

    std::size_t size() const { return values.size(); }

    /// Volume integral of P [nm^3].
    double integral() const {
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * mesh->volumes()[i];
        return s;
    }
    double mean() const { return integral() / mesh->total_volume(); }

    void validate() const {
        require(mesh && values.size() == mesh->size(), "field: value count does not match mesh");
        require(time >= 0.0, "field: time must be >= 0");
        for (double v : values) require(v >= 0.0 && v <= 1.0, "field: polarisation outside [0, 1]");
    }
};

inline PolarizationField init_field(std::shared_ptr<const Mesh> mesh, double p0) {
    require(p0 >= 0.0 && p0 <= 1.0, "init_field: P0 must be in [0, 1]");
    PolarizationField f{std::move(mesh), {}, 0.0};
    f.values.assign(f.mesh->size(), p0);
    return f;
}

inline PolarizationField init_field(const GridSpec& grid, double p0) { return init_field(Mesh::build(grid), p0); }

enum class SplitScheme { StrangSplit, ImplicitEuler };

struct SolverConfig {
    double dt = 0.0;  ///< 0 selects suggest_time_step()
    SplitScheme scheme = SplitScheme::StrangSplit;
    Boundaries boundaries;
    double steady_tolerance = 1e-8;
    int max_iterations = 20000;
    /// Pumping duty factor tau / (tau + t_init) applied to u.
    double duty_factor = 1.0;

    void validate() const {
        require(dt >= 0.0, "solver.dt must be > 0 (or 0 for automatic)");
        require(steady_tolerance > 0.0 && steady_tolerance < 1.0, "solver.steady_tolerance must be in (0, 1)");
        require(max_iterations > 0, "solver.max_iterations must be > 0");
        require(duty_factor > 0.0 && duty_factor <= 1.0, "solver.duty_factor must be in (0, 1]");
    }
    bool operator==(const SolverConfig&) const = default;
};

/// Per-cell cooling coefficient u: shell-averaged on radial meshes, cell-centre value on Cartesian ones.
inline std::vector<double> cooling_field(const Mesh& mesh, const CouplingModel& model, const NvProbe& probe,
                                         double duty_factor = 1.0) {
    std::vector<double> u(mesh.size());
    if (mesh.radial()) {
        const double scale = model.prefactor * model.prefactor * kernel_mean_square(model.kernel) /
                             (2.0 * probe.dephasing_rate);
        const auto& f = mesh.faces();
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = duty_factor * scale * shell_integral_inv_r6(f[i], f[i + 1], model.cutoff_radius) /
                   mesh.volumes()[i];
    } else {
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = duty_factor * cooling_coefficient(model, probe, mesh.centers()[i]);
    }
    return u;
}

namespace detail {

inline double clamp_unit(double p) {
    assert(p > -1e-9 && p < 1.0 + 1e-9);
    return std::clamp(p, 0.0, 1.0);
}

inline void clamp_field(std::vector<double>& values) {
    for (double& v : values) v = clamp_unit(v);
}

}  // namespace detail

/// Exact solution of dP/dt = u (1 - P) - Gamma_SL P over dt, cell by cell. Time is not advanced.
inline PolarizationField reaction_update(PolarizationField field, std::span<const double> u, double spin_lattice_rate,
                                         double dt) {
    require(dt > 0.0, "reaction_update: dt must be > 0");
    require(u.size() == field.size(), "reaction_update: cooling field size mismatch");
    for (std::size_t i = 0; i < field.size(); ++i) {
        const double k = u[i] + spin_lattice_rate;
        if (k == 0.0) continue;
        const double p_inf = u[i] / k;
        field.values[i] = detail::clamp_unit(p_inf + (field.values[i] - p_inf) * std::exp(-k * dt));
    }
    return field;
}

namespace detail {

/// Largest Crank-Nicolson step whose explicit half keeps a nonnegative matrix.
inline double crank_nicolson_step_limit(const Mesh& mesh, std::span<const double> dirichlet, double beta) {
    double limit = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        double g = dirichlet[i];
        for (double w : mesh.conductances(i)) g += w;
        if (g > 0.0) limit = std::min(limit, 2.0 * mesh.volumes()[i] / (beta * g));
    }
    return limit;
}

inline constexpr double diffusion_solve_tolerance = 1e-12;

inline void implicit_diffusion(std::vector<double>& p, const Mesh& mesh, std::span<const double> dirichlet, double beta,
                               double h, SplitScheme scheme, int max_iterations) {
    const auto& vol = mesh.volumes();
    std::vector<double> rhs(p.size());
    if (scheme == SplitScheme::ImplicitEuler) {
        for (std::size_t i = 0; i < p.size(); ++i) rhs[i] = vol[i] * p[i];
        const HelmholtzOperator op{mesh, vol, h * beta, dirichlet};
        solve_helmholtz(op, rhs, p, diffusion_solve_tolerance, max_iterations);
        return;
    }
    const double limit = crank_nicolson_step_limit(mesh, dirichlet, beta);
    const int substeps = std::max(1, static_cast<int>(std::ceil(h / limit * (1.0 - 1e-12))));
    const double hs = h / substeps;
    const HelmholtzOperator explicit_half{mesh, vol, -0.5 * hs * beta, dirichlet};
    const HelmholtzOperator implicit_half{mesh, vol, 0.5 * hs * beta, dirichlet};
    for (int s = 0; s < substeps; ++s) {
        explicit_half.apply(p, rhs);
        solve_helmholtz(implicit_half, rhs, p, diffusion_solve_tolerance, max_iterations);
    }
}

}  // namespace detail

/// One implicit diffusion step of length dt. Time is not advanced.
inline PolarizationField diffusion_update(PolarizationField field, double beta, double dt, const SolverConfig& config) {
    require(dt > 0.0, "diffusion_update: dt must be > 0");
    if (beta == 0.0) return field;
    const auto dirichlet = dirichlet_conductance(*field.mesh, config.boundaries);
    detail::implicit_diffusion(field.values, *field.mesh, dirichlet, beta, dt, config.scheme, config.max_iterations);
    detail::clamp_field(field.values);
    return field;
}

/**
 * Default step: h^2 / 2 beta, so each diffusion half-step is a single
 * Crank-Nicolson solve inside its positivity limit. Longer steps are stable but
 * the splitting error near the probe, where u dt >> 1, decays slowly. Without
 * diffusion the reaction update is exact for any step length, so the step is
 * unbounded and evolve() jumps straight between observer times.
 */
inline double suggest_time_step(const Mesh& mesh, std::span<const double> /*u*/, const TargetEnsemble& ensemble) {
    if (ensemble.diffusion > 0.0) {
        const double h = mesh.min_spacing();
        return h * h / (2.0 * ensemble.diffusion);
    }
    return std::numeric_limits<double>::infinity();
}

/// True for mesh faces that truncate the ensemble (the diamond surface and the radial core are not far faces).
inline bool is_far_boundary_face(const Mesh& mesh, const TargetEnsemble& ensemble, const NvProbe& probe, int face) {
    if (mesh.radial()) return face == 1;
    const auto& g = std::get<CartesianGrid>(mesh.spec());
    const bool surface_below =
        !std::holds_alternative<FullSpace>(ensemble.geometry) && g.lower.z <= probe.depth + 1e-9;
    return !(face == 4 && surface_below);
}

struct SteadyStateResult {
    PolarizationField field;
    SolveReport report;
    /// No sink anywhere (Gamma_SL = 0 and no FixedZero face): P = 1 wherever pumping reaches.
    bool degenerate = false;
};

/// Snapshot hook for evolve(): called once the field reaches each requested time.
struct Observer {
    std::vector<double> times;
    std::function<void(const PolarizationField&)> callback;
};

/**
 * Reaction-diffusion solver bound to one mesh and parameter set.
 *
 * Caches the cooling field and boundary conductances so repeated steps only
 * pay for the linear solves.
 */
class CripSolver {
public:
    CripSolver(std::shared_ptr<const Mesh> mesh, TargetEnsemble ensemble, NvProbe probe, CouplingModel model,
               SolverConfig config)
        : mesh_(std::move(mesh)),
          ensemble_(std::move(ensemble)),
          probe_(probe),
          model_(model),
          config_(config) {
        ensemble_.validate();
        probe_.validate();
        model_.validate();
        config_.validate();
        require(!mesh_->radial() || std::holds_alternative<FullSpace>(ensemble_.geometry),
                "radial grids model spherically symmetric (full-space) ensembles only");
        cooling_ = cooling_field(*mesh_, model_, probe_, config_.duty_factor);
        dirichlet_ = dirichlet_conductance(*mesh_, config_.boundaries);
        dt_ = config_.dt > 0.0 ? config_.dt : suggest_time_step(*mesh_, cooling_, ensemble_);
    }

    const std::shared_ptr<const Mesh>& mesh() const { return mesh_; }
    const std::vector<double>& cooling() const { return cooling_; }
    const TargetEnsemble& ensemble() const { return ensemble_; }
    const NvProbe& probe() const { return probe_; }
    const CouplingModel& coupling() const { return model_; }
    const SolverConfig& config() const { return config_; }
    double time_step() const { return dt_; }

    /// Advance by h (default: the configured step) with Strang splitting.
    void step(PolarizationField& field, double h = 0.0) const {
        if (h <= 0.0) h = dt_;
        const double beta = ensemble_.diffusion;
        if (beta > 0.0) diffuse(field, 0.5 * h);
        field = reaction_update(std::move(field), cooling_, ensemble_.spin_lattice_rate, h);
        if (beta > 0.0) diffuse(field, 0.5 * h);
        field.time += h;
    }

    /// Step until t_end, landing exactly on every observer time in range.
    PolarizationField evolve(PolarizationField field, double t_end, const std::vector<Observer>& observers = {}) const {
        require(t_end >= field.time, "evolve: t_end precedes the field time");
        require(field.mesh == mesh_, "evolve: field lives on a different mesh");
        struct Stop {
            double t;
            std::size_t observer;
        };
        std::vector<Stop> stops;
        for (std::size_t o = 0; o < observers.size(); ++o)
            for (double t : observers[o].times)
                if (t >= field.time && t <= t_end) stops.push_back({t, o});
        std::stable_sort(stops.begin(), stops.end(), [](const Stop& a, const Stop& b) { return a.t < b.t; });

        auto advance_to = [&](double target) {
            const double eps = 1e-12 * std::max(1.0, std::abs(target));
            while (target - field.time > eps) {
                const double remaining = target - field.time;
                // avoid a sliver step at the end of the interval
                const double h = remaining <= 1.5 * dt_ ? (remaining <= dt_ ? remaining : 0.5 * remaining) : dt_;
                step(field, h);
            }
            field.time = std::max(field.time, target);
        };
        for (const auto& s : stops) {
            advance_to(s.t);
            observers[s.observer].callback(field);
        }
        advance_to(t_end);
        return field;
    }

    /// Solve (beta lap - u - Gamma_SL) P = -u.
    SteadyStateResult steady_state() const {
        const std::size_t n = mesh_->size();
        const auto& vol = mesh_->volumes();
        bool has_sink = ensemble_.spin_lattice_rate > 0.0;
        for (double d : dirichlet_) has_sink = has_sink || d > 0.0;
        SteadyStateResult result{init_field(mesh_, 0.0), {}, false};
        if (!has_sink) {
            result.degenerate = true;
            result.field.values = pumped_components();
            return result;
        }
        std::vector<double> diag(n), rhs(n);
        for (std::size_t i = 0; i < n; ++i) {
            diag[i] = vol[i] * (cooling_[i] + ensemble_.spin_lattice_rate);
            rhs[i] = vol[i] * cooling_[i];
            const double k = cooling_[i] + ensemble_.spin_lattice_rate;
            result.field.values[i] = k > 0.0 ? cooling_[i] / k : 0.0;  // beta = 0 solution as the initial guess
        }
        if (ensemble_.diffusion == 0.0) return result;
        const HelmholtzOperator op{*mesh_, diag, ensemble_.diffusion, dirichlet_};
        result.report =
            solve_helmholtz(op, rhs, result.field.values, config_.steady_tolerance, config_.max_iterations);
        detail::clamp_field(result.field.values);
        return result;
    }

    /**
     * Largest polarisation gradient on cells touching a far boundary, relative to
     * the largest gradient anywhere. Above 1e-3 the domain is too small for the
     * far boundary condition to be immaterial.
     */
    double far_boundary_gradient_ratio(const PolarizationField& field) const {
        const auto& c = mesh_->centers();
        auto face_gradient = [&](std::size_t i) {
            double g = 0.0;
            for (auto j : mesh_->neighbours(i))
                g = std::max(g, std::abs(field.values[i] - field.values[j]) / (c[i] - c[j]).norm());
            return g;
        };
        double peak = 0.0;
        for (std::size_t i = 0; i < mesh_->size(); ++i) peak = std::max(peak, face_gradient(i));
        if (peak == 0.0) return 0.0;
        double far = 0.0;
        for (const auto& f : mesh_->boundary_faces())
            if (is_far_face(f.face)) far = std::max(far, face_gradient(f.cell));
        return far / peak;
    }

private:
    void diffuse(PolarizationField& field, double h) const {
        detail::implicit_diffusion(field.values, *mesh_, dirichlet_, ensemble_.diffusion, h, config_.scheme,
                                   config_.max_iterations);
        detail::clamp_field(field.values);
    }

    bool is_far_face(int face) const { return is_far_boundary_face(*mesh_, ensemble_, probe_, face); }

    /// P = 1 on every connected component that contains a pumped cell.
    std::vector<double> pumped_components() const {
        const std::size_t n = mesh_->size();
        std::vector<double> p(n, 0.0);
        std::vector<std::size_t> stack;
        for (std::size_t i = 0; i < n; ++i)
            if (cooling_[i] > 0.0 && p[i] == 0.0) {
                p[i] = 1.0;
                stack.push_back(i);
                while (!stack.empty() && ensemble_.diffusion > 0.0) {
                    const auto k = stack.back();
                    stack.pop_back();
                    for (auto j : mesh_->neighbours(k))
                        if (p[j] == 0.0) {
                            p[j] = 1.0;
                            stack.push_back(j);
                        }
                }
                stack.clear();
            }
        return p;
    }

    std::shared_ptr<const Mesh> mesh_;
    TargetEnsemble ensemble_;
    NvProbe probe_;
    CouplingModel model_;
    SolverConfig config_;
    std::vector<double> cooling_;
    std::vector<double> dirichlet_;
    double dt_ = 0.0;
};

// Free-function forms of the solver operations.

inline PolarizationField step(PolarizationField field, const TargetEnsemble& ensemble, const NvProbe& probe,
                              const CouplingModel& model, const SolverConfig& config) {
    CripSolver solver(field.mesh, ensemble, probe, model, config);
    solver.step(field);
    return field;
}

inline PolarizationField evolve(PolarizationField field, const TargetEnsemble& ensemble, const NvProbe& probe,
                                const CouplingModel& model, const SolverConfig& config, double t_end,
                                const std::vector<Observer>& observers = {}) {
    CripSolver solver(field.mesh, ensemble, probe, model, config);
    return solver.evolve(std::move(field), t_end, observers);
}

inline SteadyStateResult steady_state(const TargetEnsemble& ensemble, const NvProbe& probe, const CouplingModel& model,
                                      const GridSpec& grid, const SolverConfig& config) {
    return CripSolver(Mesh::build(grid), ensemble, probe, model, config).steady_state();
}

/// Shell-binned radial profile (r, mean P) of a Cartesian field; radial fields map directly.
struct RadialProfile {
    std::vector<double> radius;
    std::vector<double> mean;
};

inline RadialProfile radial_profile(const PolarizationField& field, double bin_width = 0.0) {
    RadialProfile out;
    const auto& mesh = *field.mesh;
    if (mesh.radial()) {
        for (std::size_t i = 0; i < field.size(); ++i) {
            out.radius.push_back(mesh.centers()[i].z);
            out.mean.push_back(field.values[i]);
        }
        return out;
    }
    if (bin_width <= 0.0) bin_width = mesh.min_spacing();
    double rmax = 0.0;
    for (const auto& c : mesh.centers()) rmax = std::max(rmax, c.norm());
    const auto bins = static_cast<std::size_t>(rmax / bin_width) + 1;
    std::vector<double> sum(bins, 0.0), vol(bins, 0.0);
    for (std::size_t i = 0; i < field.size(); ++i) {
        const auto b = static_cast<std::size_t>(mesh.centers()[i].norm() / bin_width);
        sum[b] += field.values[i] * mesh.volumes()[i];
        vol[b] += mesh.volumes()[i];
    }
    for (std::size_t b = 0; b < bins; ++b)
        if (vol[b] > 0.0) {
            out.radius.push_back((b + 0.5) * bin_width);
            out.mean.push_back(sum[b] / vol[b]);
        }
    return out;
}

/**
 * Radius where the profile first falls below `level`, interpolated linearly
 * between bins. Returns 0 if the innermost bin is already below and the
 * outermost radius if the profile never drops.
 */
inline double contour_radius(const RadialProfile& profile, double level) {
    const auto& r = profile.radius;
    const auto& p = profile.mean;
    require(!r.empty(), "contour_radius: empty profile");
    if (p.front() < level) return 0.0;
    for (std::size_t i = 1; i < r.size(); ++i)
        if (p[i] < level) return r[i - 1] + (r[i] - r[i - 1]) * (p[i - 1] - level) / (p[i - 1] - p[i]);
    return r.back();
}

}  // namespace crip
