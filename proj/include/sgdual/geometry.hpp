#pragma once

#include <limits>
#include <vector>

#include "sgdual/core.hpp"
#include "sgdual/measures.hpp"

namespace sgdual {

/// One Kantorovich weight per particle of the generating cloud. The weights
/// define the max-affine geopotential P(x) = max_i (x . y_i - R_i) on lifted
/// coordinates, and through it the pressure and the tessellation.
struct PotentialWeights {
    std::vector<double> r;

    int size() const { return static_cast<int>(r.size()); }
};

/// Scalar samples on the (nx, ny) column grid, row-major with i fastest.
struct GridField {
    int nx = 0;
    int ny = 0;
    double dx = 0.0;
    double dy = 0.0;
    std::vector<double> values;

    GridField() = default;
    GridField(int nx_, int ny_, double dx_, double dy_)
        : nx(nx_), ny(ny_), dx(dx_), dy(dy_), values(static_cast<size_t>(nx_) * ny_, 0.0) {}

    double& at(int i, int j) { return values[static_cast<size_t>(j) * nx + i]; }
    double at(int i, int j) const { return values[static_cast<size_t>(j) * nx + i]; }
    int count() const { return nx * ny; }
};

/// Maps a physical point (x1, x2, v) to lifted coordinates (x1, x2, zeta(v)).
inline Vec3 lift(const CostModel& cost, const Vec3& physical) {
    return {physical.x1, physical.x2, cost.zeta(physical.x3)};
}

/// Transport cost between a physical point and a dual point:
/// half the squared horizontal distance minus (lifted vertical) * y3.
inline double cost_value(const CostModel& cost, const Vec3& x_physical, const Vec3& y) {
    const double d1 = x_physical.x1 - y.x1;
    const double d2 = x_physical.x2 - y.x2;
    return 0.5 * (d1 * d1 + d2 * d2) - cost.zeta(x_physical.x3) * y.x3;
}

/// Max-affine geopotential on lifted coordinates. Ties go to the lowest
/// particle index; the winner is written to *winner when requested.
inline double geopotential(const Vec3& lifted_x, const DualCloud& cloud,
                           const PotentialWeights& w, int* winner = nullptr) {
    if (cloud.size() == 0) throw Error("empty-cloud", "geopotential of an empty ensemble");
    if (w.size() != cloud.size())
        throw Error("invalid-weights", "weight count does not match particle count");
    double best = -std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (int i = 0; i < cloud.size(); ++i) {
        const Vec3& y = cloud.particles[i].pos;
        const double s = lifted_x.x1 * y.x1 + lifted_x.x2 * y.x2 + lifted_x.x3 * y.x3 - w.r[i];
        if (s > best) {
            best = s;
            best_idx = i;
        }
    }
    if (winner) *winner = best_idx;
    return best;
}

/// Pressure p(x) = P(x) - (x1^2 + x2^2)/2 on lifted coordinates.
inline double pressure(const Vec3& lifted_x, const DualCloud& cloud, const PotentialWeights& w,
                       int* winner = nullptr) {
    return geopotential(lifted_x, cloud, w, winner) -
           0.5 * (lifted_x.x1 * lifted_x.x1 + lifted_x.x2 * lifted_x.x2);
}

/// Geostrophic velocity recovered from a dual point and its physical anchor:
/// (u1, u2) = (xbar2 - y2, y1 - xbar1).
inline Vec2 geostrophic_velocity(const Vec3& y, const Vec3& x_bar) {
    return {x_bar.x2 - y.x2, y.x1 - x_bar.x1};
}

/// Degenerate rotation applied to a velocity field at y, scaled by y3.
inline Vec3 tilde_j(const Vec3& y, const Vec3& v) {
    return {y.x3 * (-v.x2), y.x3 * v.x1, 0.0};
}

/// c-transform of grid samples: for each probe y, the minimum over the grid of
/// cost(x, y) - f(x). A grid lower bound of the true infimum; test instrument,
/// exhaustive scan by design.
inline std::vector<double> c_transform(const std::vector<Vec3>& grid_physical,
                                       const std::vector<double>& f, const CostModel& cost,
                                       const std::vector<Vec3>& probes) {
    if (grid_physical.empty()) throw Error("invalid-grid", "c-transform over an empty grid");
    if (grid_physical.size() != f.size())
        throw Error("invalid-grid", "grid/value size mismatch in c-transform");
    std::vector<double> out;
    out.reserve(probes.size());
    for (const auto& y : probes) {
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < grid_physical.size(); ++k) {
            best = std::min(best, cost_value(cost, grid_physical[k], y) - f[k]);
        }
        out.push_back(best);
    }
    return out;
}

/// Legendre transform of the geopotential restricted to a finite set of lifted
/// sample points: sup_x (x . y - P(x)). Grid lower bound, test instrument.
inline double legendre_transform_grid(const std::vector<Vec3>& lifted_samples,
                                      const DualCloud& cloud, const PotentialWeights& w,
                                      const Vec3& y) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& x : lifted_samples) {
        const double p = geopotential(x, cloud, w);
        best = std::max(best, x.x1 * y.x1 + x.x2 * y.x2 + x.x3 * y.x3 - p);
    }
    return best;
}

struct ConvexityReport {
    double max_violation = 0.0;
    int samples = 0;
    bool pass = true;
};

/// Samples random segment midpoints in the lifted box and checks the midpoint
/// convexity inequality for the geopotential. The max-affine form makes this
/// exact up to rounding; the report carries the worst excess.
inline ConvexityReport check_c_concavity(const DualCloud& cloud, const PotentialWeights& w,
                                         const CostModel& cost, const FluidDomain& dom,
                                         int samples, uint64_t seed = 0) {
    ConvexityReport rep;
    rep.samples = samples;
    DetRng rng(seed);
    const double z_lo = cost.zeta(cost.vertical_origin());
    const double z_hi = cost.zeta(dom.vertical_top(cost));
    for (int s = 0; s < samples; ++s) {
        Vec3 a{rng.uniform(0.0, dom.lx), rng.uniform(0.0, dom.ly), rng.uniform(z_lo, z_hi)};
        Vec3 b{rng.uniform(0.0, dom.lx), rng.uniform(0.0, dom.ly), rng.uniform(z_lo, z_hi)};
        Vec3 mid{0.5 * (a.x1 + b.x1), 0.5 * (a.x2 + b.x2), 0.5 * (a.x3 + b.x3)};
        const double excess = geopotential(mid, cloud, w) -
                              0.5 * (geopotential(a, cloud, w) + geopotential(b, cloud, w));
        rep.max_violation = std::max(rep.max_violation, excess);
    }
    rep.max_violation = std::max(rep.max_violation, 0.0);
    rep.pass = rep.max_violation <= 1e-12;
    return rep;
}

}  // namespace sgdual
