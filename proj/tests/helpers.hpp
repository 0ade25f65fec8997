#pragma once

#include "sgdual/dynamics.hpp"
#include "sgdual/laguerre.hpp"
#include "sgdual/measures.hpp"

namespace testutil {

using namespace sgdual;

inline FluidDomain free_surface_domain(int n, double cap = 2.0, double lx = 1.0, double ly = 1.0) {
    FluidDomain d;
    d.mode = BoundaryMode::FreeSurface;
    d.lx = lx;
    d.ly = ly;
    d.cap = cap;
    d.nx = d.ny = n;
    return d;
}

inline FluidDomain rigid_domain(int n, double lx = 1.0, double ly = 1.0) {
    FluidDomain d;
    d.mode = BoundaryMode::RigidLid;
    d.lx = lx;
    d.ly = ly;
    d.lid_height = 1.0 / (lx * ly);
    d.cap = d.lid_height;
    d.nx = d.ny = n;
    return d;
}

inline DualCloud single_atom(const Vec3& y, double delta = 0.5) {
    DualCloud c;
    c.particles.push_back({y, 1.0});
    c.density_band = delta;
    return c;
}

inline DualCloud cloud_of(std::initializer_list<Particle> ps, double delta = 0.4) {
    DualCloud c;
    c.particles = ps;
    c.density_band = delta;
    return c;
}

/// Random valid cloud with positions near the unit footprint and y3 inside
/// the band for delta = 0.4.
inline DualCloud random_cloud(int n, DetRng& rng, double delta = 0.4) {
    DualCloud c;
    c.density_band = delta;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec3 y{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(-2.0, -0.5)};
        const double m = 1.0 + rng.uniform();
        c.particles.push_back({y, m});
        total += m;
    }
    for (auto& p : c.particles) p.mass /= total;
    return c;
}

inline SolverConfig quick_solver(int threads = 1) {
    SolverConfig cfg;
    cfg.mass_tolerance = 1e-8;
    cfg.max_ascent_iterations = 20000;
    cfg.threads = threads;
    return cfg;
}

}  // namespace testutil
