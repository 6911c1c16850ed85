#pragma once

/**
 * @file scaleup.hpp
 * @brief Throughput model for a flowing solution in NV-array polarisation cells.
 *
 * The channel is perfectly mixed, so a single average polarisation obeys
 *
 *     dP/dt = layers * sigma * pump(P) / (n_s * h) - Gamma_SL * P
 *
 * where pump(P) = min(n_s (1 - P) * integral(u dV), cap) is the number of spins
 * one NV flips per second.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "crip/constants.hpp"
#include "crip/error.hpp"
#include "crip/spin.hpp"

namespace crip {

struct ContrastAgent {
    std::string name;
    SpinSpecies species;
    int spins_per_molecule = 1;
    double molarity = 1.0;                      ///< mol/L
    double spin_lattice_rate = 1.0 / 60.0;      ///< 1/s

    void validate() const {
        species.validate();
        require(spins_per_molecule >= 1, "agent.spins_per_molecule must be >= 1");
        require(molarity > 0.0, "agent.molarity must be > 0");
        require(spin_lattice_rate >= 0.0, "agent.spin_lattice_rate must be >= 0");
    }

    /// Target spin density n_s [1/nm^3].
    double spin_density() const {
        return molarity * constants::avogadro * spins_per_molecule / constants::nm3_per_litre;
    }
    bool operator==(const ContrastAgent&) const = default;
};

class AgentRegistry {
public:
    static AgentRegistry builtin() {
        const auto& sp = SpeciesRegistry::builtin();
        AgentRegistry r;
        r.add({"HEP", sp.find("13C"), 5});
        r.add({"H2O", sp.find("1H"), 2});
        r.add({"15N-TMPA", sp.find("15N"), 1});
        return r;
    }
    void add(ContrastAgent a) {
        a.validate();
        agents_[a.name] = std::move(a);
    }
    bool contains(const std::string& name) const { return agents_.count(name) != 0; }
    const ContrastAgent& find(const std::string& name) const {
        const auto it = agents_.find(name);
        if (it == agents_.end()) throw InvalidArgument("unknown contrast agent '" + name + "'");
        return it->second;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : agents_) out.push_back(k);
        return out;
    }

private:
    std::map<std::string, ContrastAgent> agents_;
};

/// One polarisation per CRIP cycle of length tau + t_init.
inline double cycle_limited_cap(double tau, double t_init) {
    require(tau > 0.0 && t_init >= 0.0, "cycle_limited_cap: invalid cycle timing");
    return 1.0 / (tau + t_init);
}

struct PolarizationCell {
    double area_mm2 = 16.0;
    double channel_height_um = 1.0;
    double nv_density_per_cm2 = 4e11;
    int nv_layers = 2;
    NvProbe probe = cell_probe();
    AngularKernel kernel = AngularKernel::Transverse;
    double per_nv_cap = cycle_limited_cap(20e-6, 2e-6);  ///< 1/s

    /// Shallow (5 nm) probe; the dephasing rate is the effective value used for the PMMA dataset.
    static NvProbe cell_probe() {
        NvProbe p;
        p.depth = 5.0;
        p.dephasing_rate = 150.0;
        return p;
    }

    void validate() const {
        require(area_mm2 > 0.0, "cell.area_mm2 must be > 0");
        require(channel_height_um > 0.0, "cell.channel_height_um must be > 0");
        require(nv_density_per_cm2 > 0.0, "cell.nv_density_per_cm2 must be > 0");
        require(nv_layers == 1 || nv_layers == 2, "cell.nv_layers must be 1 or 2");
        require(per_nv_cap > 0.0, "cell.per_nv_cap must be > 0");
        probe.validate();
    }
    double volume_ul() const { return area_mm2 * channel_height_um * 1e-3; }
    bool operator==(const PolarizationCell&) const = default;
};

struct StackConfig {
    int cells = 10;
    double dilution_factor = 1000.0;

    void validate() const {
        require(cells >= 1, "stack.cells must be >= 1");
        require(dilution_factor >= 1.0, "stack.dilution_factor must be >= 1");
    }
    bool operator==(const StackConfig&) const = default;
};

inline CouplingModel cell_coupling(const PolarizationCell& cell, const ContrastAgent& agent) {
    return default_coupling(cell.probe, agent.species, cell.kernel, diamond_bond_length);
}

/// Spins polarised per second by one NV at average polarisation p.
inline double per_nv_pump_rate(const NvProbe& probe, const CouplingModel& model, const ContrastAgent& agent, double p,
                               double cap = std::numeric_limits<double>::infinity()) {
    require(p >= 0.0 && p <= 1.0, "per_nv_pump_rate: polarisation must be in [0, 1]");
    const double linear = agent.spin_density() * (1.0 - p) * half_space_cooling_integral(model, probe);
    return std::min(linear, cap);
}

inline double per_nv_pump_rate(const PolarizationCell& cell, const ContrastAgent& agent, double p) {
    return per_nv_pump_rate(cell.probe, cell_coupling(cell, agent), agent, p, cell.per_nv_cap);
}

/// Right-hand side dP/dt of the mixed-cell model.
class CellKinetics {
public:
    CellKinetics(const PolarizationCell& cell, const ContrastAgent& agent)
        : linear_(agent.spin_density() * half_space_cooling_integral(cell_coupling(cell, agent), cell.probe)),
          cap_(cell.per_nv_cap),
          gain_(cell.nv_layers * cell.nv_density_per_cm2 / constants::nm2_per_cm2 /
                (agent.spin_density() * cell.channel_height_um * constants::nm_per_um)),
          relax_(agent.spin_lattice_rate) {
        cell.validate();
        agent.validate();
    }

    double operator()(double p) const {
        const double q = std::clamp(p, 0.0, 1.0);
        return gain_ * std::min(linear_ * (1.0 - q), cap_) - relax_ * q;
    }

    /// Initial slope 2 sigma cap / (n_s h) when pump-limited.
    double capped_slope() const { return gain_ * cap_; }

    /// Fixed point P_inf (F(P_inf) = 0).
    double saturation() const {
        if ((*this)(1.0) >= 0.0) return 1.0;
        double lo = 0.0, hi = 1.0;
        for (int k = 0; k < 200 && hi - lo > 1e-15; ++k) {
            const double mid = 0.5 * (lo + hi);
            ((*this)(mid) > 0.0 ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

private:
    double linear_;
    double cap_;
    double gain_;
    double relax_;
};

inline constexpr double cell_ode_tolerance = 1e-10;

/// Targets closer than this to P_inf are reported unreachable.
inline constexpr double unreachable_margin = 1e-8;

/// P_avg(t) from P(0) = 0 on an increasing time grid starting at 0.
inline std::vector<std::pair<double, double>> cell_polarization_curve(const PolarizationCell& cell,
                                                                      const ContrastAgent& agent,
                                                                      const std::vector<double>& times) {
    require(!times.empty() && times.front() == 0.0, "cell_polarization_curve: time grid must start at 0");
    for (std::size_t i = 1; i < times.size(); ++i)
        require(times[i] > times[i - 1], "cell_polarization_curve: time grid must be increasing");
    const CellKinetics f(cell, agent);
    namespace ode = boost::numeric::odeint;
    using State = std::vector<double>;
    State state{0.0};
    std::vector<std::pair<double, double>> out;
    auto system = [&](const State& x, State& dxdt, double) { dxdt[0] = f(x[0]); };
    // The exact solution rises monotonically towards P_inf; keep integrator noise from crossing it.
    const double p_inf = f.saturation();
    auto record = [&](const State& x, double t) {
        const double floor = out.empty() ? 0.0 : out.back().second;
        out.emplace_back(t, std::clamp(x[0], floor, std::max(floor, p_inf)));
    };
    if (times.size() == 1) {
        record(state, 0.0);
        return out;
    }
    const double dt0 = std::min(1e-3, times[1] - times[0]);
    ode::integrate_times(ode::make_dense_output(cell_ode_tolerance, cell_ode_tolerance,
                                                ode::runge_kutta_dopri5<State>()),
                         system, state, times.begin(), times.end(), dt0, record);
    return out;
}

/// Time at which the mixed cell first reaches p_target, by bisection on the integrated curve.
inline double time_to_polarization(const PolarizationCell& cell, const ContrastAgent& agent, double p_target) {
    const CellKinetics f(cell, agent);
    const double p_inf = f.saturation();
    require(p_target > 0.0, "flow rate: target polarisation must be > 0");
    // within the integrator tolerance of P_inf the crossing time is not resolvable
    if (!(p_target < p_inf - unreachable_margin))
        throw InvalidArgument("target polarisation " + std::to_string(p_target) +
                              " is unreachable (steady state " + std::to_string(p_inf) + ")");
    auto p_at = [&](double t) { return cell_polarization_curve(cell, agent, {0.0, t}).back().second; };
    double hi = p_target / std::max(f(0.0), 1e-300);
    for (int k = 0; p_at(hi) < p_target; ++k) {
        if (k == 200) throw SolverError("time_to_polarization: no crossing found", p_inf - p_target);
        hi *= 2.0;
    }
    double lo = 0.0;
    for (int k = 0; k < 100 && hi - lo > 1e-12 * hi; ++k) {
        const double mid = 0.5 * (lo + hi);
        (p_at(mid) < p_target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Concentrate outflow of one cell [uL/s] delivering polarisation p_target.
inline double flow_rate_for_polarization(const PolarizationCell& cell, const ContrastAgent& agent, double p_target) {
    return cell.volume_ul() / time_to_polarization(cell, agent, p_target);
}

/// Post-dilution delivery of a stack [uL/s].
inline double stack_delivery_rate(const StackConfig& stack, const PolarizationCell& cell, const ContrastAgent& agent,
                                  double p_target) {
    stack.validate();
    return stack.cells * flow_rate_for_polarization(cell, agent, p_target) * stack.dilution_factor;
}

}  // namespace crip
