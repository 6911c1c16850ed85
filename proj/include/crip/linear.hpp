#pragma once

/**
 * @file linear.hpp
 * @brief Solvers for the discrete Helmholtz systems  (D + s K) x = b.
 *
 * D is a positive diagonal, s >= 0 and K the finite-volume stiffness of a
 * Mesh: (K x)_i = sum_j g_ij (x_i - x_j) + d_i x_i with d the FixedZero
 * boundary conductance. The matrix is symmetric positive definite whenever D > 0
 * or d has a nonzero entry in every connected component.
 */

#include <algorithm>
#include <cmath>
#include <string>
#include <span>
#include <vector>

#include "crip/error.hpp"
#include "crip/mesh.hpp"

namespace crip {

struct HelmholtzOperator {
    const Mesh& mesh;
    std::span<const double> diagonal_term;  ///< D
    double stiffness_scale;                 ///< s
    std::span<const double> dirichlet;      ///< d

    double diagonal(std::size_t i) const {
        double g = dirichlet[i];
        for (double w : mesh.conductances(i)) g += w;
        return diagonal_term[i] + stiffness_scale * g;
    }

    void apply(std::span<const double> x, std::span<double> y) const {
        const std::size_t n = mesh.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto nb = mesh.neighbours(i);
            const auto g = mesh.conductances(i);
            double flux = dirichlet[i] * x[i];
            for (std::size_t k = 0; k < nb.size(); ++k) flux += g[k] * (x[i] - x[nb[k]]);
            y[i] = diagonal_term[i] * x[i] + stiffness_scale * flux;
        }
    }
};

/// y = K x (unscaled stiffness, including Dirichlet terms).
inline void apply_stiffness(const Mesh& mesh, std::span<const double> dirichlet, std::span<const double> x,
                            std::span<double> y) {
    const std::vector<double> zero(mesh.size(), 0.0);
    HelmholtzOperator{mesh, zero, 1.0, dirichlet}.apply(x, y);
}

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient; x holds the initial guess on entry.
inline SolveReport conjugate_gradient(const HelmholtzOperator& op, std::span<const double> b,
                                      std::span<double> x, double tolerance, int max_iterations) {
    const std::size_t n = b.size();
    std::vector<double> r(n), z(n), p(n), q(n), inv_diag(n);
    for (std::size_t i = 0; i < n; ++i) inv_diag[i] = 1.0 / op.diagonal(i);

    double bnorm = 0.0;
    for (double v : b) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        return {};
    }

    op.apply(x, r);
    double rr = 0.0, rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = b[i] - r[i];
        z[i] = inv_diag[i] * r[i];
        p[i] = z[i];
        rr += r[i] * r[i];
        rz += r[i] * z[i];
    }
    SolveReport report;
    report.relative_residual = std::sqrt(rr) / bnorm;
    while (report.relative_residual > tolerance) {
        if (report.iterations >= max_iterations)
            throw SolverError("conjugate gradient did not converge in " + std::to_string(max_iterations) +
                                  " iterations",
                              report.relative_residual);
        op.apply(p, q);
        double pq = 0.0;
        for (std::size_t i = 0; i < n; ++i) pq += p[i] * q[i];
        const double alpha = rz / pq;
        rr = 0.0;
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = inv_diag[i] * r[i];
            rr += r[i] * r[i];
            rz_new += r[i] * z[i];
        }
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        ++report.iterations;
        report.relative_residual = std::sqrt(rr) / bnorm;
    }
    return report;
}

/// Direct solve for radial meshes, whose conductance graph is a chain.
inline void solve_tridiagonal(const HelmholtzOperator& op, std::span<const double> b, std::span<double> x) {
    const std::size_t n = b.size();
    std::vector<double> lower(n, 0.0), upper(n, 0.0), diag(n), c(n), d(n);
    for (std::size_t i = 0; i < n; ++i) {
        diag[i] = op.diagonal(i);
        const auto nb = op.mesh.neighbours(i);
        const auto g = op.mesh.conductances(i);
        for (std::size_t k = 0; k < nb.size(); ++k) {
            if (nb[k] + 1 == i) lower[i] = -op.stiffness_scale * g[k];
            else if (nb[k] == i + 1) upper[i] = -op.stiffness_scale * g[k];
        }
    }
    c[0] = upper[0] / diag[0];
    d[0] = b[0] / diag[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (b[i] - lower[i] * d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
}

/// Solve with the mesh-appropriate method: direct for radial chains, CG otherwise.
inline SolveReport solve_helmholtz(const HelmholtzOperator& op, std::span<const double> b, std::span<double> x,
                                   double tolerance, int max_iterations) {
    if (op.mesh.radial()) {
        solve_tridiagonal(op, b, x);
        std::vector<double> r(b.size());
        op.apply(x, r);
        double rr = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            rr += (b[i] - r[i]) * (b[i] - r[i]);
            bb += b[i] * b[i];
        }
        return {1, bb > 0.0 ? std::sqrt(rr / bb) : 0.0};
    }
    return conjugate_gradient(op, b, x, tolerance, max_iterations);
}

}  // namespace crip
