// Finite-volume reaction-diffusion solver: reaction and diffusion sub-steps,
// Strang stepping, evolution with observers and steady states.

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "crip/observables.hpp"
#include "crip/pde.hpp"

using namespace crip;

namespace {

const SpinSpecies& species(const char* name) { return SpeciesRegistry::builtin().find(name); }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

CartesianGrid cube(double half, double h) { return CartesianGrid{{-half, -half, -half}, {half, half, half}, h}; }

PolarizationField random_field(std::shared_ptr<const Mesh> mesh, std::uint64_t seed) {
    auto f = init_field(std::move(mesh), 0.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : f.values) v = u(rng);
    return f;
}

TargetEnsemble carbon(double beta, double gsl) { return {species("13C"), 1.94, beta, gsl, FullSpace{}}; }

}  // namespace

// ---------------------------------------------------------------------------

TEST(InitField, Values) {
    auto mesh = Mesh::build(RadialGrid{});
    auto zero = init_field(mesh, 0.0);
    EXPECT_EQ(zero.time, 0.0);
    EXPECT_TRUE(std::all_of(zero.values.begin(), zero.values.end(), [](double v) { return v == 0.0; }));
    EXPECT_DOUBLE_EQ(init_field(mesh, 0.5).mean(), 0.5);
    const auto one = init_field(mesh, 1.0);
    const NvProbe p;
    const auto e = carbon(0.0, 0.0);
    EXPECT_EQ(hyperfine_variance(one, e, default_coupling(p, e.species), p), 0.0);
    EXPECT_THROW(init_field(mesh, 1.5), InvalidArgument);
    EXPECT_THROW(init_field(mesh, -0.1), InvalidArgument);
}

TEST(GridSpec, Invariants) {
    EXPECT_THROW(Mesh::build(RadialGrid{1.0, 1.0, 100}), InvalidArgument);
    EXPECT_THROW(Mesh::build(RadialGrid{0.1, 10.0, 4}), InvalidArgument);
    EXPECT_THROW(Mesh::build(CartesianGrid{{0, 0, 0}, {1, 1, 1}, 0.0}), InvalidArgument);
    EXPECT_THROW(Mesh::build(CartesianGrid{{0, 0, 0}, {1, 1, 1.05}, 0.1}), InvalidArgument);
    CartesianGrid below{{-2, -2, -2}, {2, 2, 0}, 0.5, HalfSpaceAboveSurface{}, 1.0};
    EXPECT_THROW(Mesh::build(below), InvalidArgument);
}

TEST(Mesh, RadialVolumesAndMasking) {
    const RadialGrid g{0.5, 20.0, 64, RadialSpacing::Logarithmic};
    const auto m = Mesh::build(g);
    EXPECT_NEAR(m->total_volume(), 4.0 * constants::pi / 3.0 * (8000.0 - 0.125), 1e-8);
    CartesianGrid half{{-4, -4, -4}, {4, 4, 4}, 1.0, HalfSpaceAboveSurface{}, 0.0};
    const auto hm = Mesh::build(half);
    EXPECT_EQ(hm->size(), 8u * 8u * 4u);
    for (const auto& c : hm->centers()) EXPECT_GT(c.z, 0.0);
}

// ---------------------------------------------------------------------------
//  Reaction
// ---------------------------------------------------------------------------

TEST(Reaction, NoRatesLeavesFieldUnchanged) {
    auto f = random_field(Mesh::build(RadialGrid{}), 3);
    const std::vector<double> u(f.size(), 0.0);
    EXPECT_EQ(reaction_update(f, u, 0.0, 5.0).values, f.values);
}

TEST(Reaction, HalfLifeOfPumping) {
    auto f = init_field(Mesh::build(RadialGrid{}), 0.0);
    const std::vector<double> u(f.size(), 2.0);
    const auto g = reaction_update(f, u, 0.0, std::log(2.0) / 2.0);
    for (double v : g.values) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Reaction, BalancedSteadyValue) {
    auto f = init_field(Mesh::build(RadialGrid{}), 0.0);
    const std::vector<double> u(f.size(), 3.0);
    const auto g = reaction_update(f, u, 3.0, 20.0 / 3.0);
    for (double v : g.values) EXPECT_NEAR(v, 0.5, 1e-8);
}

TEST(Reaction, ClosedFormPerCell) {
    const auto mesh = Mesh::build(cube(3.0, 0.5));
    const NvProbe p;
    const auto m = default_coupling(p, species("13C"), AngularKernel::Transverse, 0.3);
    const auto u = cooling_field(*mesh, m, p);
    const double gsl = 0.7;
    auto f = init_field(mesh, 0.0);
    f = reaction_update(std::move(f), u, gsl, 0.05);
    f = reaction_update(std::move(f), u, gsl, 0.15);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double k = u[i] + gsl;
        EXPECT_NEAR(f.values[i], u[i] / k * (1.0 - std::exp(-k * 0.2)), 1e-12);
    }
    EXPECT_EQ(f.time, 0.0);
}

// ---------------------------------------------------------------------------
//  Diffusion
// ---------------------------------------------------------------------------

TEST(Diffusion, ZeroBetaIsIdentity) {
    const auto f = random_field(Mesh::build(cube(2.0, 0.5)), 5);
    EXPECT_EQ(diffusion_update(f, 0.0, 1.0, SolverConfig{}).values, f.values);
}

TEST(Diffusion, UniformFieldIsStationary) {
    for (auto scheme : {SplitScheme::StrangSplit, SplitScheme::ImplicitEuler}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        for (const GridSpec& g : {GridSpec(cube(2.0, 0.5)), GridSpec(RadialGrid{0.2, 10.0, 50})}) {
            const auto f = init_field(g, 0.37);
            const auto out = diffusion_update(f, 3.0, 0.7, cfg);
            EXPECT_LT(max_abs_diff(out.values, f.values), 1e-11);
        }
    }
}

TEST(Diffusion, HeatKernelVariance) {
    // Point bump in a box wide enough that the far faces are never reached.
    const double h = 1.0, beta = 1.0, dt = 0.1;
    const auto mesh = Mesh::build(cube(30.5, h));
    for (auto scheme : {SplitScheme::StrangSplit, SplitScheme::ImplicitEuler}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        auto f = init_field(mesh, 0.0);
        std::size_t centre = 0;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (mesh->centers()[i].norm() < 1e-9) centre = i;
        f.values[centre] = 1.0;
        auto second_moment = [&](const PolarizationField& x) {
            double m0 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double r = mesh->centers()[i].norm();
                m0 += x.values[i];
                m2 += x.values[i] * r * r;
            }
            return m2 / m0;
        };
        for (int s = 0; s < 100; ++s) f = diffusion_update(std::move(f), beta, dt, cfg);
        const double expected = 6.0 * beta * 100 * dt;
        EXPECT_NEAR(second_moment(f), expected, 0.02 * expected);
    }
}

TEST(Diffusion, ConservesIntegralUnderZeroFlux) {
    for (auto scheme : {SplitScheme::StrangSplit, SplitScheme::ImplicitEuler}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        for (const GridSpec& g :
             {GridSpec(cube(4.0, 0.5)), GridSpec(RadialGrid{0.154, 30.0, 200}),
              GridSpec(RadialGrid{0.154, 30.0, 200, RadialSpacing::Logarithmic}),
              GridSpec(CartesianGrid{{-4, -4, 1}, {4, 4, 9}, 0.5, HalfSpaceAboveSurface{}, 3.0})}) {
            auto f = random_field(Mesh::build(g), 9);
            for (int s = 0; s < 20; ++s) {
                const double before = f.integral();
                f = diffusion_update(std::move(f), 0.8, 0.3, cfg);
                EXPECT_LT(std::abs(f.integral() - before), 1e-10 * before);
            }
        }
    }
}

TEST(Diffusion, FixedZeroBoundaryDrains) {
    SolverConfig cfg;
    cfg.boundaries = Boundaries::all(BoundaryKind::FixedZero);
    auto f = init_field(Mesh::build(cube(2.0, 0.5)), 1.0);
    const double before = f.integral();
    f = diffusion_update(std::move(f), 1.0, 0.5, cfg);
    EXPECT_LT(f.integral(), before);
    for (double v : f.values) EXPECT_GE(v, 0.0);
}

// ---------------------------------------------------------------------------
//  Stepping
// ---------------------------------------------------------------------------

TEST(Step, WithoutDiffusionEqualsReaction) {
    const auto mesh = Mesh::build(cube(3.0, 0.5));
    const NvProbe p;
    const auto e = carbon(0.0, 0.3);
    const auto m = default_coupling(p, e.species, AngularKernel::Secular, 0.3);
    SolverConfig cfg;
    cfg.dt = 0.01;
    auto f = random_field(mesh, 4);
    const auto stepped = step(f, e, p, m, cfg);
    const auto reacted = reaction_update(f, cooling_field(*mesh, m, p), e.spin_lattice_rate, cfg.dt);
    EXPECT_LT(max_abs_diff(stepped.values, reacted.values), 1e-12);
    EXPECT_DOUBLE_EQ(stepped.time, 0.01);
}

TEST(Step, MeanNonDecreasingWithoutRelaxation) {
    const NvProbe p;
    const auto e = carbon(0.05, 0.0);
    const auto m = default_coupling(p, e.species);
    const CripSolver s(Mesh::build(RadialGrid{0.154, 30.0, 300}), e, p, m, SolverConfig{});
    auto f = init_field(s.mesh(), 0.0);
    auto prev = f;
    for (int i = 0; i < 200; ++i) {
        s.step(f, 5.0);
        EXPECT_GE(f.integral(), prev.integral() - 1e-12);
        for (std::size_t k = 0; k < f.size(); ++k) EXPECT_GE(f.values[k], prev.values[k] - 1e-12);
        prev = f;
    }
}

TEST(Step, StaysInUnitInterval) {
    const NvProbe p;
    auto e = carbon(5.0, 0.2);
    const auto m = default_coupling(p, e.species, AngularKernel::Isotropic, 0.3);
    for (auto scheme : {SplitScheme::StrangSplit, SplitScheme::ImplicitEuler}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        cfg.boundaries.box[1] = BoundaryKind::FixedZero;
        const CripSolver s(Mesh::build(cube(3.0, 0.5)), e, p, m, cfg);
        auto f = random_field(s.mesh(), 8);
        for (int i = 0; i < 30; ++i) {
            s.step(f, 0.2);
            for (double v : f.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        }
    }
}

TEST(Step, StrangSecondOrder) {
    // Richardson self-convergence at fixed t with dt, dt/2, dt/4.
    const NvProbe p;
    const auto e = carbon(1.0, 0.5);
    const auto m = default_coupling(p, e.species, AngularKernel::Isotropic, 1.0);
    const auto mesh = Mesh::build(cube(4.0, 1.0));
    auto run = [&](double dt) {
        SolverConfig cfg;
        cfg.dt = dt;
        auto mm = m;
        mm.prefactor *= 0.05;
        const CripSolver s(mesh, e, p, mm, cfg);
        return s.evolve(init_field(mesh, 0.0), 1.0).values;
    };
    const auto a = run(0.2), b = run(0.1), c = run(0.05);
    const double order = std::log2(max_abs_diff(a, b) / max_abs_diff(b, c));
    EXPECT_GE(order, 1.8);
}

TEST(Evolve, NoOpWhenAlreadyAtEnd) {
    const NvProbe p;
    const auto e = carbon(0.0335, 0.0);
    const CripSolver s(Mesh::build(RadialGrid{0.154, 20.0, 64}), e, p, default_coupling(p, e.species), SolverConfig{});
    auto f = random_field(s.mesh(), 2);
    f.time = 4.0;
    const auto g = s.evolve(f, 4.0);
    EXPECT_EQ(g.values, f.values);
    EXPECT_EQ(g.time, 4.0);
    EXPECT_THROW(s.evolve(f, 3.0), InvalidArgument);
}

TEST(Evolve, ObserversSeeExactTimes) {
    const NvProbe p;
    const auto e = carbon(0.0335, 0.0);
    SolverConfig cfg;
    cfg.dt = 0.3;
    const CripSolver s(Mesh::build(RadialGrid{0.154, 20.0, 64}), e, p, default_coupling(p, e.species), cfg);
    std::vector<double> seen;
    const auto f = s.evolve(init_field(s.mesh(), 0.0), 2.0,
                            {Observer{{0.5, 1.0, 1.7}, [&](const PolarizationField& x) { seen.push_back(x.time); }}});
    ASSERT_EQ(seen.size(), 3u);
    EXPECT_DOUBLE_EQ(seen[0], 0.5);
    EXPECT_DOUBLE_EQ(seen[1], 1.0);
    EXPECT_DOUBLE_EQ(seen[2], 1.7);
    EXPECT_DOUBLE_EQ(f.time, 2.0);
}

TEST(Evolve, PmmaReachesSteadyStateWithinTenSeconds) {
    NvProbe p;
    p.dephasing_rate = 150.0;
    const TargetEnsemble e{species("1H"), 57.0, 781.0, 1.0, HalfSpaceAboveSurface{}};
    const auto m = default_coupling(p, e.species, AngularKernel::Transverse, 7.5);
    const CartesianGrid g{{-40, -40, 10}, {40, 40, 90}, 2.5, HalfSpaceAboveSurface{}, 10.0};
    const CripSolver s(Mesh::build(g), e, p, m, SolverConfig{});
    const auto steady = s.steady_state();
    const auto evolved = s.evolve(init_field(s.mesh(), 0.0), 10.0);
    const double v_s = hyperfine_variance(steady.field, e, m, p);
    const double v_e = hyperfine_variance(evolved, e, m, p);
    EXPECT_LT(std::abs(v_e - v_s) / v_s, 0.01);
    EXPECT_LT(max_abs_diff(evolved.values, steady.field.values), 0.01);
}

// ---------------------------------------------------------------------------
//  Steady state
// ---------------------------------------------------------------------------

TEST(SteadyState, WithoutDiffusionIsLocalBalance) {
    const NvProbe p;
    const auto e = carbon(0.0, 0.4);
    const auto m = default_coupling(p, e.species);
    const auto mesh = Mesh::build(cube(3.0, 0.5));
    const auto r = CripSolver(mesh, e, p, m, SolverConfig{}).steady_state();
    const auto u = cooling_field(*mesh, m, p);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(r.field.values[i], u[i] / (u[i] + 0.4));
    EXPECT_FALSE(r.degenerate);
}

TEST(SteadyState, NoPumpingMeansNoPolarisation) {
    const NvProbe p;
    const auto e = carbon(0.5, 0.4);
    auto m = default_coupling(p, e.species);
    m.prefactor = 0.0;
    const auto r = steady_state(e, p, m, RadialGrid{0.154, 20.0, 100}, SolverConfig{});
    for (double v : r.field.values) EXPECT_EQ(v, 0.0);
}

TEST(SteadyState, DegenerateWithoutSink) {
    const NvProbe p;
    const auto e = carbon(0.5, 0.0);
    const auto r = steady_state(e, p, default_coupling(p, e.species), RadialGrid{0.154, 20.0, 100}, SolverConfig{});
    EXPECT_TRUE(r.degenerate);
    for (double v : r.field.values) EXPECT_EQ(v, 1.0);

    SolverConfig drained;
    drained.boundaries.radial_outer = BoundaryKind::FixedZero;
    const auto d = steady_state(e, p, default_coupling(p, e.species), RadialGrid{0.154, 20.0, 100}, drained);
    EXPECT_FALSE(d.degenerate);
    EXPECT_LT(d.field.values.back(), 0.5);
}

TEST(SteadyState, ComparisonPrinciple) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> scale(1.0, 5.0);
    NvProbe p;
    const auto e = carbon(0.2, 0.3);
    const auto grid = RadialGrid{0.154, 25.0, 200};
    for (int trial = 0; trial < 5; ++trial) {
        auto weak = default_coupling(p, e.species);
        weak.prefactor *= 0.01 * scale(rng);
        auto strong = weak;
        strong.prefactor *= scale(rng);
        const auto a = steady_state(e, p, weak, grid, SolverConfig{});
        const auto b = steady_state(e, p, strong, grid, SolverConfig{});
        for (std::size_t i = 0; i < a.field.size(); ++i) EXPECT_GE(b.field.values[i], a.field.values[i] - 1e-9);
    }
}

TEST(SteadyState, GridConvergence) {
    const NvProbe p;
    const auto e = carbon(0.5, 0.05);
    auto m = default_coupling(p, e.species, AngularKernel::Isotropic, 1.0);
    auto observable = [&](int cells) {
        const auto r = steady_state(e, p, m, RadialGrid{1.0, 21.0, cells}, SolverConfig{});
        return hyperfine_variance(r.field, e, m, p);
    };
    const double a = observable(50), b = observable(100), c = observable(200);
    EXPECT_GE(std::log2(std::abs(a - b) / std::abs(b - c)), 1.8);
}

TEST(SteadyState, OneDimensionalMatchesShellAveragedThreeDimensional) {
    // Isotropic kernel: u depends on r only, so the 3D field is spherically symmetric
    // up to box-corner effects.
    const NvProbe p;
    const auto e = carbon(0.5, 0.05);
    const auto m = default_coupling(p, e.species, AngularKernel::Isotropic, 1.0);
    const auto r1 = steady_state(e, p, m, RadialGrid{0.05, 19.85, 400}, SolverConfig{});
    const auto r3 = steady_state(e, p, m, cube(16.0, 0.5), SolverConfig{});
    const auto prof = radial_profile(r3.field, 0.5);
    const auto& c1 = r1.field.mesh->centers();
    for (std::size_t b = 0; b < prof.radius.size(); ++b) {
        const double r = prof.radius[b];
        if (r <= 2.0 * m.cutoff_radius || r > 12.0) continue;
        // linear interpolation of the 1D solution
        std::size_t k = 1;
        while (k + 1 < c1.size() && c1[k].z < r) ++k;
        const double w = (r - c1[k - 1].z) / (c1[k].z - c1[k - 1].z);
        const double p1 = (1.0 - w) * r1.field.values[k - 1] + w * r1.field.values[k];
        EXPECT_LT(std::abs(prof.mean[b] - p1), 0.05 * p1) << "r=" << r;
    }
}

TEST(Profile, ContourRadius) {
    RadialProfile prof{{1.0, 2.0, 3.0, 4.0}, {1.0, 0.995, 0.985, 0.5}};
    EXPECT_NEAR(contour_radius(prof, 0.99), 2.5, 1e-12);
    EXPECT_EQ(contour_radius(prof, 0.2), 4.0);
    EXPECT_EQ(contour_radius(RadialProfile{{1.0}, {0.1}}, 0.5), 0.0);
}
