#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "sgdual/core.hpp"
#include "sgdual/geometry.hpp"
#include "sgdual/measures.hpp"

namespace sgdual {

// ---------------------------------------------------------------------------
// Column decomposition
// ---------------------------------------------------------------------------

/// Vertical interval of one column, in lifted (z) and physical (v) coordinates,
/// owned by one particle or by the vacuum (particle = -1).
struct ColumnSegment {
    double z_lo = 0.0;
    double z_hi = 0.0;
    double v_lo = 0.0;
    double v_hi = 0.0;
    int particle = -1;
};

struct ColumnDecomposition {
    double x1 = 0.0;
    double x2 = 0.0;
    double surface = 0.0;  // physical vertical coordinate of the fluid top
    bool cap_hit = false;
    std::vector<ColumnSegment> segments;  // bottom-up, fluid first, vacuum last
};

/// Generalized Laguerre decomposition of the container: per-particle volumes
/// and barycenters, per-cell transport cost, the surface field, and the raw
/// per-column segment structure.
struct Tessellation {
    std::vector<double> volume;
    std::vector<Vec3> barycenter;
    std::vector<double> cell_cost;
    GridField height;
    std::vector<ColumnDecomposition> columns;
    double fluid_volume = 0.0;
    double fluid_term = 0.0;      // integral of (|x_h|^2/2 - P) over the fluid region
    double transport_cost = 0.0;  // sum of cell costs
    bool cap_hit = false;
};

namespace envdetail {

struct EnvLine {
    double slope = 0.0;  // y3 of the particle
    double icept = 0.0;  // x1*y1 + x2*y2 - R
    int idx = -1;
};

struct EnvPiece {
    double z_lo = 0.0;
    double z_hi = 0.0;
    EnvLine line;
};

/// Upper envelope of affine functions of the lifted vertical coordinate,
/// clipped to [z_lo, z_hi]. Lines with equal slopes keep the highest intercept
/// (lowest index on exact ties).
inline void upper_envelope(std::vector<EnvLine>& lines, double z_lo, double z_hi,
                           std::vector<EnvPiece>& out) {
    out.clear();
    std::sort(lines.begin(), lines.end(), [](const EnvLine& a, const EnvLine& b) {
        if (a.slope != b.slope) return a.slope < b.slope;
        if (a.icept != b.icept) return a.icept > b.icept;
        return a.idx < b.idx;
    });
    // strip duplicate slopes, keeping the first (dominant) line of each group
    size_t w = 0;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (w > 0 && lines[i].slope == lines[w - 1].slope) continue;
        lines[w++] = lines[i];
    }
    lines.resize(w);

    struct Active {
        EnvLine line;
        double start;
    };
    static thread_local std::vector<Active> stack;
    stack.clear();
    for (const auto& ln : lines) {
        double start = -std::numeric_limits<double>::infinity();
        while (!stack.empty()) {
            const Active& top = stack.back();
            // crossing where the steeper (earlier) line hands over to ln
            const double z = (ln.icept - top.line.icept) / (top.line.slope - ln.slope);
            if (z <= top.start) {
                stack.pop_back();
            } else {
                start = z;
                break;
            }
        }
        stack.push_back({ln, start});
    }
    for (size_t k = 0; k < stack.size(); ++k) {
        const double a = std::max(z_lo, stack[k].start);
        const double b = (k + 1 < stack.size()) ? std::min(z_hi, stack[k + 1].start) : z_hi;
        if (b > a) out.push_back({a, b, stack[k].line});
    }
}

}  // namespace envdetail

// ---------------------------------------------------------------------------
// Tessellation
// ---------------------------------------------------------------------------

/// Decomposes every column against the current weights. Columns use midpoint
/// quadrature horizontally; the vertical direction is handled in closed form
/// along the envelope segments. In free-surface mode a point is fluid exactly
/// where the envelope clears the vacuum threshold |x_h|^2/2, and the surface
/// is the unique crossing of the (strictly decreasing) envelope.
inline Tessellation tessellate(const DualCloud& cloud, const FluidDomain& domain,
                               const CostModel& cost, const PotentialWeights& w,
                               int threads = 1) {
    const int n = cloud.size();
    if (n == 0) throw Error("empty-cloud", "tessellation of an empty ensemble");
    if (w.size() != n) throw Error("invalid-weights", "weight count does not match particle count");
    if (domain.mode == BoundaryMode::FreeSurface) {
        for (int i = 0; i < n; ++i) {
            if (!(cloud.particles[i].pos.x3 < 0.0))
                throw Error("vertical-sign",
                            "free-surface mode requires y3 < 0 for every particle (particle " +
                                std::to_string(i) + ")");
        }
    }

    const double v_lo = cost.vertical_origin();
    const double v_hi = domain.vertical_top(cost);
    const double z_lo = cost.zeta(v_lo);
    const double z_hi = cost.zeta(v_hi);
    const int cols = domain.column_count();

    Tessellation tess;
    tess.columns.resize(static_cast<size_t>(cols));
    tess.height = GridField(domain.nx, domain.ny, domain.dx(), domain.dy());

    auto v_of = [&](double z) {
        if (z <= z_lo) return v_lo;
        if (z >= z_hi) return v_hi;
        return cost.zeta_inverse(z);
    };

    parallel_for(cols, threads, [&](int begin, int end) {
        std::vector<envdetail::EnvLine> lines;
        std::vector<envdetail::EnvPiece> pieces;
        lines.reserve(static_cast<size_t>(n));
        for (int col = begin; col < end; ++col) {
            const int i = col % domain.nx;
            const int j = col / domain.nx;
            const Vec2 c = domain.column_center(i, j);
            const double q = 0.5 * (c.x1 * c.x1 + c.x2 * c.x2);

            lines.clear();
            for (int k = 0; k < n; ++k) {
                const Vec3& y = cloud.particles[k].pos;
                lines.push_back({y.x3, c.x1 * y.x1 + c.x2 * y.x2 - w.r[k], k});
            }
            envdetail::upper_envelope(lines, z_lo, z_hi, pieces);

            ColumnDecomposition& out = tess.columns[static_cast<size_t>(col)];
            out.x1 = c.x1;
            out.x2 = c.x2;
            out.segments.clear();
            out.cap_hit = false;

            double z_surface = z_hi;
            if (domain.mode == BoundaryMode::FreeSurface) {
                const auto& first = pieces.front();
                if (first.line.icept + first.line.slope * z_lo < q) {
                    z_surface = z_lo;  // dry column
                } else {
                    z_surface = z_hi;
                    bool crossed = false;
                    for (const auto& pc : pieces) {
                        if (pc.line.icept + pc.line.slope * pc.z_hi >= q) continue;
                        z_surface = (q - pc.line.icept) / pc.line.slope;
                        z_surface = std::clamp(z_surface, pc.z_lo, pc.z_hi);
                        crossed = true;
                        break;
                    }
                    out.cap_hit = !crossed;
                }
            }

            for (const auto& pc : pieces) {
                if (pc.z_lo >= z_surface) break;
                const double a = pc.z_lo;
                const double b = std::min(pc.z_hi, z_surface);
                if (b <= a) continue;
                out.segments.push_back({a, b, v_of(a), v_of(b), pc.line.idx});
            }
            out.surface = out.segments.empty() ? v_lo : out.segments.back().v_hi;
            if (z_surface < z_hi) {
                out.segments.push_back({z_surface, z_hi, out.surface, v_hi, -1});
            }
        }
    });

    // Sequential reduction in fixed column order so results are identical for
    // every thread count.
    tess.volume.assign(static_cast<size_t>(n), 0.0);
    tess.cell_cost.assign(static_cast<size_t>(n), 0.0);
    std::vector<Vec3> bary_num(static_cast<size_t>(n));
    const double area = domain.column_area();

    for (int col = 0; col < cols; ++col) {
        const ColumnDecomposition& cd = tess.columns[static_cast<size_t>(col)];
        const double q = 0.5 * (cd.x1 * cd.x1 + cd.x2 * cd.x2);
        for (const auto& seg : cd.segments) {
            if (seg.particle < 0) continue;
            const Vec3& y = cloud.particles[static_cast<size_t>(seg.particle)].pos;
            const double len = seg.v_hi - seg.v_lo;
            const double vol = area * len;
            const double zint = cost.zeta_integral(seg.v_lo, seg.v_hi);
            const double d1 = cd.x1 - y.x1;
            const double d2 = cd.x2 - y.x2;
            auto& b = bary_num[static_cast<size_t>(seg.particle)];
            tess.volume[static_cast<size_t>(seg.particle)] += vol;
            b.x1 += cd.x1 * vol;
            b.x2 += cd.x2 * vol;
            b.x3 += area * 0.5 * (seg.v_hi * seg.v_hi - seg.v_lo * seg.v_lo);
            tess.cell_cost[static_cast<size_t>(seg.particle)] +=
                area * (0.5 * (d1 * d1 + d2 * d2) * len - y.x3 * zint);
            const double icept = cd.x1 * y.x1 + cd.x2 * y.x2 - w.r[static_cast<size_t>(seg.particle)];
            tess.fluid_term += area * ((q - icept) * len - y.x3 * zint);
            tess.fluid_volume += vol;
        }
        tess.height.values[static_cast<size_t>(col)] = cd.surface;
        tess.cap_hit = tess.cap_hit || cd.cap_hit;
    }

    tess.barycenter.assign(static_cast<size_t>(n), Vec3{});
    for (int k = 0; k < n; ++k) {
        if (tess.volume[static_cast<size_t>(k)] > 0.0) {
            const double inv = 1.0 / tess.volume[static_cast<size_t>(k)];
            tess.barycenter[static_cast<size_t>(k)] = {bary_num[static_cast<size_t>(k)].x1 * inv,
                                                       bary_num[static_cast<size_t>(k)].x2 * inv,
                                                       bary_num[static_cast<size_t>(k)].x3 * inv};
        }
        tess.transport_cost += tess.cell_cost[static_cast<size_t>(k)];
    }
    return tess;
}

// ---------------------------------------------------------------------------
// Dual functional and its gradient
// ---------------------------------------------------------------------------

/// Value of the concave dual objective at the given weights, with the inner
/// minimization over surfaces realized by the nonnegative-pressure region.
inline double dual_functional_from(const DualCloud& cloud, const PotentialWeights& w,
                                   const Tessellation& tess) {
    double f = tess.fluid_term;
    for (int i = 0; i < cloud.size(); ++i) {
        const Vec3& y = cloud.particles[static_cast<size_t>(i)].pos;
        f += cloud.particles[static_cast<size_t>(i)].mass *
             (0.5 * (y.x1 * y.x1 + y.x2 * y.x2) - w.r[static_cast<size_t>(i)]);
    }
    return f;
}

inline double dual_functional(const DualCloud& cloud, const FluidDomain& domain,
                              const CostModel& cost, const PotentialWeights& w, int threads = 1) {
    return dual_functional_from(cloud, w, tessellate(cloud, domain, cost, w, threads));
}

/// Ascent direction: cell volume minus target mass, per particle.
inline std::vector<double> dual_gradient_from(const DualCloud& cloud, const Tessellation& tess) {
    std::vector<double> g(static_cast<size_t>(cloud.size()));
    for (int i = 0; i < cloud.size(); ++i)
        g[static_cast<size_t>(i)] =
            tess.volume[static_cast<size_t>(i)] - cloud.particles[static_cast<size_t>(i)].mass;
    return g;
}

inline std::vector<double> dual_gradient(const DualCloud& cloud, const FluidDomain& domain,
                                         const CostModel& cost, const PotentialWeights& w,
                                         int threads = 1) {
    return dual_gradient_from(cloud, tessellate(cloud, domain, cost, w, threads));
}

// ---------------------------------------------------------------------------
// Weight solve
// ---------------------------------------------------------------------------

struct SolveStats {
    int iterations = 0;
    int evaluations = 0;  // tessellations performed
    double residual = std::numeric_limits<double>::infinity();
    double functional = 0.0;
};

struct SolveResult {
    PotentialWeights weights;
    Tessellation tess;
    SolveStats stats;
};

namespace solvedetail {

inline void recenter(std::vector<double>& r) {
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    for (double& v : r) v -= mean;
}

/// Zero-cost starting guess: half the squared horizontal norm per particle,
/// shifted by a common constant found by bisection so the initial fluid volume
/// is close to the unit total mass.
inline PotentialWeights initial_weights(const DualCloud& cloud, const FluidDomain& domain,
                                        const CostModel& cost, int threads, SolveStats& stats) {
    const int n = cloud.size();
    PotentialWeights w;
    w.r.resize(static_cast<size_t>(n));
    std::vector<double> base(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Vec3& y = cloud.particles[static_cast<size_t>(i)].pos;
        base[static_cast<size_t>(i)] = 0.5 * (y.x1 * y.x1 + y.x2 * y.x2);
    }
    if (domain.mode == BoundaryMode::RigidLid) {
        w.r = base;
        recenter(w.r);
        return w;
    }
    auto volume_at = [&](double c0) {
        for (int i = 0; i < n; ++i) w.r[static_cast<size_t>(i)] = base[static_cast<size_t>(i)] - c0;
        ++stats.evaluations;
        return tessellate(cloud, domain, cost, w, threads).fluid_volume;
    };
    double lo = 0.0;
    double hi = 1.0;
    for (int k = 0; k < 80 && volume_at(hi) < 1.0; ++k) hi *= 2.0;
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (volume_at(mid) < 1.0)
            lo = mid;
        else
            hi = mid;
    }
    const double c0 = 0.5 * (lo + hi);
    for (int i = 0; i < n; ++i) w.r[static_cast<size_t>(i)] = base[static_cast<size_t>(i)] - c0;
    return w;
}

}  // namespace solvedetail

/// Finds weights balancing every cell's volume with its particle's mass, by
/// gradient ascent on the dual functional with the two-point (Barzilai and
/// Borwein) step size. The step is clamped to a sane curvature window and the
/// iteration falls back to the best iterate seen whenever the residual blows
/// up, which keeps the non-monotone scheme globally stable. Deterministic for
/// a fixed configuration. The rigid-lid objective is invariant under common
/// shifts, so that mode pins the gauge sum(R) = 0.
inline SolveResult solve_weights(const DualCloud& cloud, const FluidDomain& domain,
                                 const CostModel& cost, const SolverConfig& config,
                                 const PotentialWeights* initial = nullptr) {
    cost.validate();
    domain.validate(cost);
    config.validate();
    const ValidationReport rep = validate_cloud(cloud, cost);
    if (!rep.pass()) throw Error("invalid-cloud", rep.summary());

    const int n = cloud.size();
    const bool rigid = domain.mode == BoundaryMode::RigidLid;
    double max_mass = 0.0;
    for (const auto& p : cloud.particles) max_mass = std::max(max_mass, p.mass);
    const double tol = config.mass_tolerance * max_mass;

    SolveResult res;
    if (initial) {
        if (initial->size() != n)
            throw Error("invalid-weights", "initial weight count does not match particle count");
        res.weights = *initial;
        if (rigid) solvedetail::recenter(res.weights.r);
    } else {
        res.weights = solvedetail::initial_weights(cloud, domain, cost, config.threads, res.stats);
    }

    auto inf_norm = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };

    auto two_norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    res.tess = tessellate(cloud, domain, cost, res.weights, config.threads);
    ++res.stats.evaluations;
    std::vector<double> g = dual_gradient_from(cloud, res.tess);
    double residual = inf_norm(g);

    PotentialWeights best = res.weights;
    Tessellation best_tess = res.tess;
    std::vector<double> best_g = g;
    double best_residual = residual;
    double alpha = config.ascent_step;
    PotentialWeights prev;
    std::vector<double> g_prev;
    int iter = 0;
    int since_improvement = 0;

    // fast phase: two-point step size, non-monotone but reverted on runaway
    for (; iter < config.max_ascent_iterations && residual > tol && since_improvement < 150;
         ++iter) {
        prev = res.weights;
        g_prev = g;
        for (int i = 0; i < n; ++i)
            res.weights.r[static_cast<size_t>(i)] += alpha * g[static_cast<size_t>(i)];
        if (rigid) solvedetail::recenter(res.weights.r);

        res.tess = tessellate(cloud, domain, cost, res.weights, config.threads);
        ++res.stats.evaluations;
        g = dual_gradient_from(cloud, res.tess);
        residual = inf_norm(g);
        res.stats.iterations = iter + 1;

        if (residual < best_residual) {
            best_residual = residual;
            best = res.weights;
            best_tess = res.tess;
            best_g = g;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (iter > 4 && residual > 100.0 * std::max(best_residual, 1e-14)) {
                // runaway step: restart from the best iterate with a shorter step
                res.weights = best;
                res.tess = best_tess;
                g = best_g;
                residual = best_residual;
                alpha = std::max(0.25 * alpha, 1e-3);
                continue;
            }
        }

        double s_dot_s = 0.0;
        double s_dot_dg = 0.0;
        for (int i = 0; i < n; ++i) {
            const double s =
                res.weights.r[static_cast<size_t>(i)] - prev.r[static_cast<size_t>(i)];
            s_dot_s += s * s;
            s_dot_dg += s * (g_prev[static_cast<size_t>(i)] - g[static_cast<size_t>(i)]);
        }
        if (s_dot_dg > 0.0) alpha = std::clamp(s_dot_s / s_dot_dg, 1e-3, 1e4);
    }

    // robust phase: damped steps accepted only when the residual two-norm
    // shrinks, which the concavity of the objective guarantees for small
    // enough steps
    if (residual > tol) {
        res.weights = best;
        res.tess = best_tess;
        g = best_g;
        residual = best_residual;
        double g2 = two_norm(g);
        int rejects_in_a_row = 0;
        for (; iter < config.max_ascent_iterations && residual > tol; ++iter) {
            PotentialWeights trial = res.weights;
            for (int i = 0; i < n; ++i)
                trial.r[static_cast<size_t>(i)] += alpha * g[static_cast<size_t>(i)];
            if (rigid) solvedetail::recenter(trial.r);
            Tessellation trial_tess = tessellate(cloud, domain, cost, trial, config.threads);
            ++res.stats.evaluations;
            std::vector<double> trial_g = dual_gradient_from(cloud, trial_tess);
            const double trial_g2 = two_norm(trial_g);
            res.stats.iterations = iter + 1;
            if (trial_g2 < g2) {
                res.weights = std::move(trial);
                res.tess = std::move(trial_tess);
                g = std::move(trial_g);
                g2 = trial_g2;
                residual = inf_norm(g);
                alpha = std::min(alpha * 1.3, 1e4);
                rejects_in_a_row = 0;
            } else {
                alpha *= 0.5;
                if (++rejects_in_a_row > 60) break;
            }
        }
    }

    res.stats.residual = residual;
    res.stats.functional = dual_functional_from(cloud, res.weights, res.tess);
    if (residual > tol)
        throw Error("no-convergence", "mass residual " + fmt17(residual) + " after " +
                                          std::to_string(res.stats.iterations) + " iterations");
    if (res.tess.cap_hit)
        throw Error("cap-too-low", "free surface reached the container top at convergence");
    return res;
}

// ---------------------------------------------------------------------------
// Surface cross-check
// ---------------------------------------------------------------------------

struct SurfaceReport {
    GridField height;
    double max_height_mismatch = 0.0;
    double max_surface_residual = 0.0;
    double lipschitz = 0.0;           // max |dh| / |dx| over adjacent columns
    double gradient_residual = 0.0;   // sup |grad_h p - rho grad_h h| below the surface
};

/// Recomputes the surface per column by explicit minimization of the column
/// functional (cumulative integral of threshold minus envelope) over the
/// envelope breakpoints, independently of the crossing walk used by
/// tessellate. Verifies both paths agree and that the pressure vanishes on the
/// recovered surface. Throws on disagreement beyond 1e-10. Rigid-lid mode has
/// no surface condition; the report is trivially consistent there.
inline SurfaceReport surface_height_crosscheck(const DualCloud& cloud, const FluidDomain& domain,
                                               const CostModel& cost, const PotentialWeights& w,
                                               const Tessellation& tess) {
    const int n = cloud.size();
    SurfaceReport rep;
    rep.height = GridField(domain.nx, domain.ny, domain.dx(), domain.dy());

    const double v_lo = cost.vertical_origin();
    const double v_hi = domain.vertical_top(cost);
    const double z_lo = cost.zeta(v_lo);
    const double z_hi = cost.zeta(v_hi);

    auto v_of = [&](double z) {
        if (z <= z_lo) return v_lo;
        if (z >= z_hi) return v_hi;
        return cost.zeta_inverse(z);
    };

    if (domain.mode == BoundaryMode::RigidLid) {
        for (double& h : rep.height.values) h = v_hi;
        for (int col = 0; col < domain.column_count(); ++col) {
            rep.max_height_mismatch = std::max(
                rep.max_height_mismatch,
                std::abs(rep.height.values[static_cast<size_t>(col)] -
                         tess.height.values[static_cast<size_t>(col)]));
        }
        return rep;
    }

    std::vector<envdetail::EnvLine> lines;
    std::vector<envdetail::EnvPiece> pieces;
    for (int col = 0; col < domain.column_count(); ++col) {
        const int i = col % domain.nx;
        const int j = col / domain.nx;
        const Vec2 c = domain.column_center(i, j);
        const double q = 0.5 * (c.x1 * c.x1 + c.x2 * c.x2);

        lines.clear();
        for (int k = 0; k < n; ++k) {
            const Vec3& y = cloud.particles[static_cast<size_t>(k)].pos;
            lines.push_back({y.x3, c.x1 * y.x1 + c.x2 * y.x2 - w.r[static_cast<size_t>(k)], k});
        }
        envdetail::upper_envelope(lines, z_lo, z_hi, pieces);

        // cumulative column functional, minimized over breakpoints and the
        // interior sign change of its derivative (threshold minus envelope)
        double best_s = v_lo;
        double best_val = 0.0;
        double acc = 0.0;
        for (const auto& pc : pieces) {
            const double va = v_of(pc.z_lo);
            const double vb = v_of(pc.z_hi);
            if (vb <= va) continue;
            const double d_lo = q - (pc.line.icept + pc.line.slope * pc.z_lo);
            const double d_hi = q - (pc.line.icept + pc.line.slope * pc.z_hi);
            if (d_lo < 0.0 && d_hi > 0.0) {
                const double z_star = (q - pc.line.icept) / pc.line.slope;
                const double v_star = v_of(std::clamp(z_star, pc.z_lo, pc.z_hi));
                const double val = acc + (q - pc.line.icept) * (v_star - va) -
                                   pc.line.slope * cost.zeta_integral(va, v_star);
                if (val < best_val) {
                    best_val = val;
                    best_s = v_star;
                }
            }
            acc += (q - pc.line.icept) * (vb - va) - pc.line.slope * cost.zeta_integral(va, vb);
            if (acc < best_val) {
                best_val = acc;
                best_s = vb;
            }
        }
        rep.height.values[static_cast<size_t>(col)] = best_s;

        rep.max_height_mismatch =
            std::max(rep.max_height_mismatch,
                     std::abs(best_s - tess.height.values[static_cast<size_t>(col)]));
        const bool capped = tess.columns[static_cast<size_t>(col)].cap_hit;
        if (best_s > v_lo && !capped) {
            const double p = pressure({c.x1, c.x2, cost.zeta(best_s)}, cloud, w);
            rep.max_surface_residual = std::max(rep.max_surface_residual, std::abs(p));
        }
    }

    // Surface roughness and the pressure/height gradient relation, reported as
    // diagnostics over adjacent wet column pairs.
    auto pair_diag = [&](int ca, int cb, double dist) {
        const double ha = tess.height.values[static_cast<size_t>(ca)];
        const double hb = tess.height.values[static_cast<size_t>(cb)];
        rep.lipschitz = std::max(rep.lipschitz, std::abs(hb - ha) / dist);
        if (ha > v_lo && hb > v_lo) {
            const double s_bar = v_lo + 0.9 * (std::min(ha, hb) - v_lo);
            const ColumnDecomposition& a = tess.columns[static_cast<size_t>(ca)];
            const ColumnDecomposition& b = tess.columns[static_cast<size_t>(cb)];
            const double z_bar = cost.zeta(s_bar);
            int win = 0;
            const double pa = pressure({a.x1, a.x2, z_bar}, cloud, w);
            const double pb = pressure({b.x1, b.x2, z_bar}, cloud, w, &win);
            const double rho = -cloud.particles[static_cast<size_t>(win)].pos.x3;
            rep.gradient_residual = std::max(
                rep.gradient_residual, std::abs((pb - pa) / dist - rho * (hb - ha) / dist));
        }
    };
    for (int j = 0; j < domain.ny; ++j)
        for (int i = 0; i + 1 < domain.nx; ++i)
            pair_diag(j * domain.nx + i, j * domain.nx + i + 1, domain.dx());
    for (int j = 0; j + 1 < domain.ny; ++j)
        for (int i = 0; i < domain.nx; ++i)
            pair_diag(j * domain.nx + i, (j + 1) * domain.nx + i, domain.dy());

    if (rep.max_height_mismatch > 1e-10 || rep.max_surface_residual > 1e-10)
        throw Error("consistency", "surface cross-check failed: height mismatch " +
                                       fmt17(rep.max_height_mismatch) + ", surface residual " +
                                       fmt17(rep.max_surface_residual));
    return rep;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline void write_heights_csv(std::ostream& os, const Tessellation& tess) {
    os << "# schema=sg-heights-v1\n";
    os << "column,x1,x2,h\n";
    for (size_t col = 0; col < tess.columns.size(); ++col) {
        const auto& c = tess.columns[col];
        os << col << ',' << fmt17(c.x1) << ',' << fmt17(c.x2) << ',' << fmt17(c.surface) << '\n';
    }
}

inline void write_cells_csv(std::ostream& os, const Tessellation& tess,
                            const PotentialWeights& w) {
    os << "# schema=sg-cells-v1\n";
    os << "particle,volume,barycenter_x1,barycenter_x2,barycenter_x3,weight\n";
    for (size_t i = 0; i < tess.volume.size(); ++i) {
        os << i << ',' << fmt17(tess.volume[i]) << ',' << fmt17(tess.barycenter[i].x1) << ','
           << fmt17(tess.barycenter[i].x2) << ',' << fmt17(tess.barycenter[i].x3) << ','
           << fmt17(w.r[i]) << '\n';
    }
}

}  // namespace sgdual
