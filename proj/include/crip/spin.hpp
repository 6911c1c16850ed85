#pragma once

/**
 * @file spin.hpp
 * @brief Spin species, the NV probe, target ensembles and the probe-target
 *        hyperfine coupling that drives cross-relaxation pumping.
 *
 * Frame: the NV sits at the origin. For ensembles outside the diamond the
 * surface is the plane z = depth and spins fill z > depth.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "crip/constants.hpp"
#include "crip/error.hpp"
#include "crip/vec3.hpp"

namespace crip {

// ---------------------------------------------------------------------------
//  Species
// ---------------------------------------------------------------------------

struct SpinSpecies {
    std::string name;
    double gamma = 0.0;  ///< signed gyromagnetic ratio [Hz/T]

    void validate() const {
        require(std::isfinite(gamma) && gamma != 0.0,
                "species '" + name + "': gamma must be finite and nonzero");
    }
    bool operator==(const SpinSpecies&) const = default;
};

/// Lookup table of spin species; seeded with 1H, 13C, 15N and the NV electron.
class SpeciesRegistry {
public:
    SpeciesRegistry() {
        add({"1H", constants::gamma_1h});
        add({"13C", constants::gamma_13c});
        add({"15N", constants::gamma_15n});
        add({"e-NV", constants::nv_gyromagnetic_ratio});
    }

    static const SpeciesRegistry& builtin() {
        static const SpeciesRegistry registry;
        return registry;
    }

    void add(SpinSpecies s) {
        s.validate();
        species_[s.name] = std::move(s);
    }

    bool contains(const std::string& name) const { return species_.count(name) != 0; }

    const SpinSpecies& find(const std::string& name) const {
        auto it = species_.find(name);
        if (it == species_.end()) throw InvalidArgument("unknown spin species '" + name + "'");
        return it->second;
    }

    std::vector<SpinSpecies> all() const {
        std::vector<SpinSpecies> out;
        for (const auto& [_, s] : species_) out.push_back(s);
        return out;
    }

private:
    std::map<std::string, SpinSpecies> species_;
};

// ---------------------------------------------------------------------------
//  Probe and ensemble
// ---------------------------------------------------------------------------

/// NV axis for a (100)-cut diamond: a <111> direction, 54.7 deg from the surface normal.
inline Vec3 default_nv_axis() { return Vec3{1.0, 1.0, 1.0}.normalized(); }

struct NvProbe {
    double zero_field_splitting = constants::nv_zero_field_splitting;  ///< D [Hz]
    double gamma_nv = constants::nv_gyromagnetic_ratio;                ///< [Hz/T]
    double dephasing_rate = 1e6;                                       ///< Gamma_2 [1/s]
    double background_rate = 200.0;                                    ///< Gamma_bg [1/s]
    double depth = 10.0;                                               ///< below surface [nm]
    Vec3 axis = default_nv_axis();

    void validate() const {
        require(zero_field_splitting > 0.0, "probe.zero_field_splitting must be > 0");
        require(gamma_nv > 0.0, "probe.gamma_nv must be > 0");
        require(dephasing_rate > 0.0, "probe.dephasing_rate must be > 0");
        require(background_rate >= 0.0, "probe.background_rate must be >= 0");
        require(depth > 0.0, "probe.depth must be > 0");
        require(std::abs(axis.norm() - 1.0) <= 1e-12, "probe.axis must be a unit vector");
    }
    bool operator==(const NvProbe&) const = default;
};

struct FullSpace {
    bool operator==(const FullSpace&) const = default;
};
/// Spins fill z > probe depth (material deposited on the diamond surface).
struct HalfSpaceAboveSurface {
    bool operator==(const HalfSpaceAboveSurface&) const = default;
};
struct Slab {
    double z_lo = 0.0;
    double z_hi = 0.0;
    bool operator==(const Slab&) const = default;
};

using Geometry = std::variant<FullSpace, HalfSpaceAboveSurface, Slab>;

inline bool geometry_contains(const Geometry& g, const Vec3& r, double depth) {
    return std::visit(
        [&](const auto& geo) -> bool {
            using T = std::decay_t<decltype(geo)>;
            if constexpr (std::is_same_v<T, FullSpace>) return true;
            else if constexpr (std::is_same_v<T, HalfSpaceAboveSurface>) return r.z > depth;
            else return r.z > geo.z_lo && r.z < geo.z_hi;
        },
        g);
}

struct TargetEnsemble {
    SpinSpecies species;
    double number_density = 0.0;     ///< n_t [1/nm^3]
    double diffusion = 0.0;          ///< beta [nm^2/s]
    double spin_lattice_rate = 0.0;  ///< Gamma_SL [1/s]
    Geometry geometry = FullSpace{};

    void validate() const {
        species.validate();
        require(number_density > 0.0, "ensemble.number_density must be > 0");
        require(diffusion >= 0.0, "ensemble.diffusion must be >= 0");
        require(spin_lattice_rate >= 0.0, "ensemble.spin_lattice_rate must be >= 0");
        if (const auto* slab = std::get_if<Slab>(&geometry))
            require(slab->z_hi > slab->z_lo, "ensemble.geometry: slab needs z_hi > z_lo");
    }
    bool operator==(const TargetEnsemble&) const = default;
};

// ---------------------------------------------------------------------------
//  Coupling
// ---------------------------------------------------------------------------

enum class AngularKernel { Isotropic, Secular, Transverse };

/// Angular factor f(theta) of the dipolar coupling.
inline double kernel_value(AngularKernel k, double cos_theta) {
    const double c = std::clamp(cos_theta, -1.0, 1.0);
    switch (k) {
        case AngularKernel::Isotropic: return 1.0;
        case AngularKernel::Secular: return 0.5 * (3.0 * c * c - 1.0);
        case AngularKernel::Transverse: return 1.5 * std::sqrt(1.0 - c * c) * c;
    }
    return 0.0;
}

/// Spherical mean of f^2 for each kernel.
inline double kernel_mean_square(AngularKernel k) {
    switch (k) {
        case AngularKernel::Isotropic: return 1.0;
        case AngularKernel::Secular: return 1.0 / 5.0;
        case AngularKernel::Transverse: return (9.0 / 4.0) * (2.0 / 15.0);
    }
    return 0.0;
}

struct CouplingModel {
    double prefactor = 0.0;  ///< C [rad/s nm^3]
    AngularKernel kernel = AngularKernel::Transverse;
    double cutoff_radius = 0.154;  ///< r_min [nm]

    void validate() const {
        require(prefactor >= 0.0 && std::isfinite(prefactor), "coupling.prefactor must be >= 0");
        require(cutoff_radius > 0.0, "coupling.cutoff_radius must be > 0");
    }
    bool operator==(const CouplingModel&) const = default;
};

/// Dipolar prefactor mu0 hbar gamma_NV gamma_n / 4 pi, gammas in angular units, in rad/s nm^3.
inline double dipolar_prefactor(const NvProbe& probe, const SpinSpecies& species) {
    return constants::mu0_over_4pi * constants::hbar * angular(probe.gamma_nv) *
           angular(std::abs(species.gamma)) * constants::nm3_per_m3;
}

/// Nearest-neighbour distance in diamond, the default exclusion radius for in-lattice spins.
inline constexpr double diamond_bond_length = 0.154;

/// Default cutoff: bond length for spins in the diamond, depth minus one grid spacing for spins above it.
inline double default_cutoff_radius(const TargetEnsemble& e, const NvProbe& probe, double grid_spacing) {
    if (std::holds_alternative<FullSpace>(e.geometry)) return diamond_bond_length;
    return std::max(probe.depth - grid_spacing, diamond_bond_length);
}

inline CouplingModel default_coupling(const NvProbe& probe, const SpinSpecies& species,
                                      AngularKernel kernel = AngularKernel::Transverse,
                                      double cutoff = diamond_bond_length) {
    return {dipolar_prefactor(probe, species), kernel, cutoff};
}

// ---------------------------------------------------------------------------
//  Resonance and frequencies
// ---------------------------------------------------------------------------

/// Field [T] above the ground-state anti-crossing where the |0>-|-1> splitting equals the Larmor frequency.
inline double resonance_field(const NvProbe& probe, const SpinSpecies& species) {
    require(species.gamma < probe.gamma_nv,
            "resonance_field: species '" + species.name + "' has gamma >= gamma_NV, no crossing");
    return probe.zero_field_splitting / (probe.gamma_nv - species.gamma);
}

/// NV |0>-|-1> transition frequency [Hz].
inline double nv_transition_frequency(const NvProbe& probe, double field) {
    require(field >= 0.0, "nv_transition_frequency: field must be >= 0");
    return std::abs(probe.gamma_nv * field - probe.zero_field_splitting);
}

inline double larmor_frequency(const SpinSpecies& species, double field) {
    require(field >= 0.0, "larmor_frequency: field must be >= 0");
    return std::abs(species.gamma) * field;
}

// ---------------------------------------------------------------------------
//  Hyperfine coupling and cooling coefficient
// ---------------------------------------------------------------------------

/// A(R) [rad/s], clamped inside the cutoff radius.
inline double hyperfine_coupling(const CouplingModel& model, const Vec3& r, const Vec3& axis) {
    const double rn = r.norm();
    const double cos_theta = rn > 0.0 ? r.dot(axis) / rn : 1.0;
    const double reff = std::max(rn, model.cutoff_radius);
    return model.prefactor * kernel_value(model.kernel, cos_theta) / (reff * reff * reff);
}

/// u(R) = A(R)^2 / (2 Gamma_2) [1/s]
inline double cooling_coefficient(const CouplingModel& model, const NvProbe& probe, const Vec3& r) {
    const double a = hyperfine_coupling(model, r, probe.axis);
    return a * a / (2.0 * probe.dephasing_rate);
}

/// Sphere-averaged u at radius r.
inline double angular_averaged_cooling(const CouplingModel& model, const NvProbe& probe, double r) {
    require(r > 0.0, "angular_averaged_cooling: r must be > 0");
    const double reff = std::max(r, model.cutoff_radius);
    const double r6 = std::pow(reff, 6);
    return model.prefactor * model.prefactor * kernel_mean_square(model.kernel) /
           (2.0 * probe.dephasing_rate * r6);
}

/// Integral of 4 pi r^2 max(r, cutoff)^-6 over the shell a <= r <= b.
inline double shell_integral_inv_r6(double a, double b, double cutoff) {
    double total = 0.0;
    if (a < cutoff) {
        const double hi = std::min(b, cutoff);
        total += 4.0 * constants::pi * (hi * hi * hi - a * a * a) / (3.0 * std::pow(cutoff, 6));
        a = hi;
    }
    if (b > a) total += 4.0 * constants::pi / 3.0 * (1.0 / (a * a * a) - 1.0 / (b * b * b));
    return total;
}

/**
 * Integral of f^2(R.axis) / r^6 over the half-space z > distance, in 1/nm^3.
 *
 * Along each upward direction the radial part integrates to cos^3(theta_z) / (3 d^3);
 * the remaining hemisphere integral is done by Gauss-Legendre in (cos theta_z, phi).
 * The cutoff is ignored, so distance must exceed it.
 */
inline double half_space_kernel_integral(AngularKernel kernel, const Vec3& axis, double distance) {
    using boost::math::quadrature::gauss;
    auto over_phi = [&](double mu) {
        const double s = std::sqrt(std::max(0.0, 1.0 - mu * mu));
        auto integrand = [&](double phi) {
            const Vec3 n{s * std::cos(phi), s * std::sin(phi), mu};
            const double f = kernel_value(kernel, n.dot(axis));
            return f * f;
        };
        return gauss<double, 64>::integrate(integrand, 0.0, 2.0 * constants::pi);
    };
    const double moment =
        gauss<double, 64>::integrate([&](double mu) { return over_phi(mu) * mu * mu * mu; }, 0.0, 1.0);
    return moment / (3.0 * distance * distance * distance);
}

/// Integral of u over the half-space above the surface [nm^3/s].
inline double half_space_cooling_integral(const CouplingModel& model, const NvProbe& probe) {
    return model.prefactor * model.prefactor / (2.0 * probe.dephasing_rate) *
           half_space_kernel_integral(model.kernel, probe.axis, probe.depth);
}

/**
 * Coupling for `kernel` rescaled so that an unpolarised ensemble produces the
 * same hyperfine variance as `reference` with the bare dipolar prefactor.
 */
inline CouplingModel variance_matched_coupling(const NvProbe& probe, const SpinSpecies& species,
                                               AngularKernel kernel, AngularKernel reference,
                                               const Geometry& geometry, double cutoff) {
    auto weight = [&](AngularKernel k) {
        if (std::holds_alternative<FullSpace>(geometry)) return kernel_mean_square(k);
        return half_space_kernel_integral(k, probe.axis, probe.depth);
    };
    CouplingModel m = default_coupling(probe, species, kernel, cutoff);
    m.prefactor *= std::sqrt(weight(reference) / weight(kernel));
    return m;
}

// ---------------------------------------------------------------------------
//  Thermal polarisation
// ---------------------------------------------------------------------------

/// Boltzmann polarisation tanh(h |gamma| B / 2 k_B T).
inline double thermal_polarization(const SpinSpecies& species, double field, double temperature) {
    require(temperature > 0.0, "thermal_polarization: temperature must be > 0");
    return std::tanh(constants::planck * std::abs(species.gamma) * field /
                     (2.0 * constants::boltzmann * temperature));
}

/// Field [T] whose thermal polarisation equals p.
inline double equivalent_field(double p, const SpinSpecies& species, double temperature) {
    require(p >= 0.0 && p < 1.0, "equivalent_field: polarisation must be in [0, 1)");
    require(temperature > 0.0, "equivalent_field: temperature must be > 0");
    return 2.0 * constants::boltzmann * temperature * std::atanh(p) /
           (constants::planck * std::abs(species.gamma));
}

}  // namespace crip
