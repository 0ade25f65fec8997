#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "sgdual/core.hpp"
#include "sgdual/geometry.hpp"
#include "sgdual/laguerre.hpp"
#include "sgdual/measures.hpp"

namespace sgdual::oracle {

// ---------------------------------------------------------------------------
// Discrete measure pairs
// ---------------------------------------------------------------------------

struct DiscreteMeasurePair {
    std::vector<Vec3> source_pos;
    std::vector<double> source_mass;
    std::vector<Vec3> target_pos;
    std::vector<double> target_mass;

    int source_count() const { return static_cast<int>(source_pos.size()); }
    int target_count() const { return static_cast<int>(target_pos.size()); }

    void validate() const {
        if (source_pos.empty() || target_pos.empty())
            throw Error("invalid-pair", "both sides need at least one atom");
        if (source_pos.size() != source_mass.size() || target_pos.size() != target_mass.size())
            throw Error("invalid-pair", "position/mass size mismatch");
        if (source_pos.size() > 32768 || target_pos.size() > 64)
            throw Error("invalid-pair", "atom counts exceed the supported scale");
        auto total = [](const std::vector<double>& m) {
            return std::accumulate(m.begin(), m.end(), 0.0);
        };
        if (std::abs(total(source_mass) - 1.0) > 1e-12 || std::abs(total(target_mass) - 1.0) > 1e-12)
            throw Error("invalid-pair", "both sides must be mass-normalized to 1");
        for (double m : source_mass)
            if (!(m > 0.0)) throw Error("invalid-pair", "source masses must be positive");
        for (double m : target_mass)
            if (!(m > 0.0)) throw Error("invalid-pair", "target masses must be positive");
    }
};

struct TransportPlan {
    int m = 0;
    int n = 0;
    std::vector<double> flow;  // row-major m x n
    double cost = 0.0;
    double max_marginal_error = 0.0;

    double at(int i, int j) const { return flow[static_cast<size_t>(i) * n + j]; }
};

// ---------------------------------------------------------------------------
// Exact transportation LP (simplex on the spanning-tree basis)
// ---------------------------------------------------------------------------

namespace lpdetail {

/// Solves min sum f_ij C_ij subject to the marginal constraints, exactly up to
/// floating arithmetic. Demands carry a deterministic perturbation of order
/// 1e-13 so the spanning-tree basis never degenerates; the perturbation is far
/// below the 1e-10 marginal guarantee. Optimality is certified at the end by a
/// full reduced-cost scan.
inline TransportPlan transportation_simplex(const std::vector<double>& a_in,
                                            const std::vector<double>& b_in,
                                            const std::vector<double>& cost) {
    const int m = static_cast<int>(a_in.size());
    const int n = static_cast<int>(b_in.size());
    const int nodes = m + n;

    std::vector<double> a = a_in;
    std::vector<double> b = b_in;
    {
        const double eps = 1e-13 / (static_cast<double>(n) * (n + 1) / 2.0 + 1.0);
        double added = 0.0;
        for (int j = 0; j < n; ++j) {
            b[static_cast<size_t>(j)] += eps * (j + 1);
            added += eps * (j + 1);
        }
        a[static_cast<size_t>(m - 1)] += added;
    }

    struct Arc {
        int i;
        int j;
        double flow;
        bool basic;
    };
    std::vector<Arc> arcs;
    arcs.reserve(static_cast<size_t>(nodes) * 2);
    std::vector<std::vector<int>> adj(static_cast<size_t>(nodes));  // arc ids per node

    auto add_arc = [&](int i, int j, double f) {
        arcs.push_back({i, j, f, true});
        const int id = static_cast<int>(arcs.size()) - 1;
        adj[static_cast<size_t>(i)].push_back(id);
        adj[static_cast<size_t>(m + j)].push_back(id);
        return id;
    };
    auto drop_arc = [&](int id) {
        arcs[static_cast<size_t>(id)].basic = false;
        auto scrub = [&](int node) {
            auto& v = adj[static_cast<size_t>(node)];
            v.erase(std::remove(v.begin(), v.end(), id), v.end());
        };
        scrub(arcs[static_cast<size_t>(id)].i);
        scrub(m + arcs[static_cast<size_t>(id)].j);
    };

    // Bootstrap near-optimal column duals with a safeguarded two-point
    // subgradient ascent on the concave piecewise-linear dual. Only used to
    // order the greedy initial basis; correctness never depends on it.
    std::vector<double> psi(static_cast<size_t>(n), 0.0);
    {
        std::vector<double> assigned(static_cast<size_t>(n));
        std::vector<double> grad(static_cast<size_t>(n));
        std::vector<double> grad_prev(static_cast<size_t>(n));
        std::vector<double> psi_prev(static_cast<size_t>(n));
        auto eval_grad = [&]() {
            std::fill(assigned.begin(), assigned.end(), 0.0);
            for (int i = 0; i < m; ++i) {
                const double* row = cost.data() + static_cast<size_t>(i) * n;
                int amin = 0;
                double vmin = row[0] - psi[0];
                for (int j = 1; j < n; ++j) {
                    const double v = row[j] - psi[static_cast<size_t>(j)];
                    if (v < vmin) {
                        vmin = v;
                        amin = j;
                    }
                }
                assigned[static_cast<size_t>(amin)] += a[static_cast<size_t>(i)];
            }
            for (int j = 0; j < n; ++j)
                grad[static_cast<size_t>(j)] = b[static_cast<size_t>(j)] - assigned[static_cast<size_t>(j)];
        };
        eval_grad();
        double alpha = 1.0;
        for (int it = 0; it < 200; ++it) {
            double g_inf = 0.0;
            for (double g : grad) g_inf = std::max(g_inf, std::abs(g));
            if (g_inf < 1e-3 / n) break;
            psi_prev = psi;
            grad_prev = grad;
            for (int j = 0; j < n; ++j) psi[static_cast<size_t>(j)] += alpha * grad[static_cast<size_t>(j)];
            eval_grad();
            double ss = 0.0;
            double sdg = 0.0;
            for (int j = 0; j < n; ++j) {
                const double s = psi[static_cast<size_t>(j)] - psi_prev[static_cast<size_t>(j)];
                ss += s * s;
                sdg += s * (grad_prev[static_cast<size_t>(j)] - grad[static_cast<size_t>(j)]);
            }
            if (sdg > 0.0) alpha = std::clamp(ss / sdg, 1e-3, 1e5);
        }
    }

    // greedy basis: walk the cells by increasing reduced cost, exhausting one
    // side per allocation, then connect the remaining forest with zero-flow
    // arcs
    std::vector<int> order(static_cast<size_t>(m) * n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> rkey(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            rkey[static_cast<size_t>(i) * n + j] = static_cast<float>(
                cost[static_cast<size_t>(i) * n + j] - psi[static_cast<size_t>(j)]);
    std::sort(order.begin(), order.end(), [&](int p, int q) {
        if (rkey[static_cast<size_t>(p)] != rkey[static_cast<size_t>(q)])
            return rkey[static_cast<size_t>(p)] < rkey[static_cast<size_t>(q)];
        return p < q;
    });
    {
        std::vector<double> rem_a = a;
        std::vector<double> rem_b = b;
        for (int id : order) {
            const int i = id / n;
            const int j = id % n;
            if (rem_a[static_cast<size_t>(i)] <= 0.0 || rem_b[static_cast<size_t>(j)] <= 0.0)
                continue;
            if (rem_a[static_cast<size_t>(i)] <= rem_b[static_cast<size_t>(j)]) {
                const double f = rem_a[static_cast<size_t>(i)];
                rem_b[static_cast<size_t>(j)] -= f;
                rem_a[static_cast<size_t>(i)] = 0.0;
                add_arc(i, j, f);
            } else {
                const double f = rem_b[static_cast<size_t>(j)];
                rem_a[static_cast<size_t>(i)] -= f;
                rem_b[static_cast<size_t>(j)] = 0.0;
                add_arc(i, j, f);
            }
        }
    }
    {
        std::vector<int> uf(static_cast<size_t>(nodes));
        std::iota(uf.begin(), uf.end(), 0);
        std::function<int(int)> find = [&](int x) {
            while (uf[static_cast<size_t>(x)] != x) {
                uf[static_cast<size_t>(x)] = uf[static_cast<size_t>(uf[static_cast<size_t>(x)])];
                x = uf[static_cast<size_t>(x)];
            }
            return x;
        };
        int components = nodes;
        for (const auto& arc : arcs) {
            const int ra = find(arc.i);
            const int rb = find(m + arc.j);
            if (ra != rb) {
                uf[static_cast<size_t>(ra)] = rb;
                --components;
            }
        }
        for (int id : order) {
            if (components == 1) break;
            const int i = id / n;
            const int j = id % n;
            const int ra = find(i);
            const int rb = find(m + j);
            if (ra != rb) {
                uf[static_cast<size_t>(ra)] = rb;
                --components;
                add_arc(i, j, 0.0);
            }
        }
    }

    std::vector<int> parent(static_cast<size_t>(nodes), -1);
    std::vector<int> parent_arc(static_cast<size_t>(nodes), -1);
    std::vector<int> depth(static_cast<size_t>(nodes), 0);
    std::vector<double> dual(static_cast<size_t>(nodes), 0.0);
    std::vector<int> bfs;
    bfs.reserve(static_cast<size_t>(nodes));

    auto rebuild_tree = [&]() {
        const int root = m;  // first target
        std::fill(parent.begin(), parent.end(), -1);
        std::fill(parent_arc.begin(), parent_arc.end(), -1);
        bfs.clear();
        bfs.push_back(root);
        parent[static_cast<size_t>(root)] = root;
        depth[static_cast<size_t>(root)] = 0;
        dual[static_cast<size_t>(root)] = 0.0;
        for (size_t head = 0; head < bfs.size(); ++head) {
            const int node = bfs[head];
            for (int id : adj[static_cast<size_t>(node)]) {
                const Arc& arc = arcs[static_cast<size_t>(id)];
                const int other = (node == arc.i) ? m + arc.j : arc.i;
                if (parent[static_cast<size_t>(other)] != -1) continue;
                parent[static_cast<size_t>(other)] = node;
                parent_arc[static_cast<size_t>(other)] = id;
                depth[static_cast<size_t>(other)] = depth[static_cast<size_t>(node)] + 1;
                // basic arcs are tight: u_i + v_j = C_ij
                const double c = cost[static_cast<size_t>(arc.i) * n + arc.j];
                dual[static_cast<size_t>(other)] = c - dual[static_cast<size_t>(node)];
                bfs.push_back(other);
            }
        }
        if (static_cast<int>(bfs.size()) != nodes)
            throw Error("lp-failure", "basis lost connectivity");
    };

    rebuild_tree();

    double cost_scale = 1.0;
    for (double c : cost) cost_scale = std::max(cost_scale, std::abs(c));
    const double tol = 1e-12 * cost_scale;

    const long max_pivots = 64L * (m + n) + 4096L;
    std::vector<int> cycle;  // arc ids in cycle order, entering arc first
    for (long pivot = 0;; ++pivot) {
        if (pivot > max_pivots) throw Error("lp-failure", "pivot limit exceeded");

        int enter = -1;
        double best_rc = -tol;
        for (int i = 0; i < m; ++i) {
            const double ui = dual[static_cast<size_t>(i)];
            const double* row = cost.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double rc = row[j] - ui - dual[static_cast<size_t>(m + j)];
                if (rc < best_rc) {
                    best_rc = rc;
                    enter = i * n + j;
                }
            }
        }
        if (enter < 0) break;

        const int ei = enter / n;
        const int ej = enter % n;
        // cycle through the tree path between the entering endpoints
        cycle.clear();
        cycle.push_back(-1);  // placeholder for the entering arc
        std::vector<int> up_i;
        std::vector<int> up_j;
        int x = ei;
        int y = m + ej;
        while (depth[static_cast<size_t>(x)] > depth[static_cast<size_t>(y)]) {
            up_i.push_back(parent_arc[static_cast<size_t>(x)]);
            x = parent[static_cast<size_t>(x)];
        }
        while (depth[static_cast<size_t>(y)] > depth[static_cast<size_t>(x)]) {
            up_j.push_back(parent_arc[static_cast<size_t>(y)]);
            y = parent[static_cast<size_t>(y)];
        }
        while (x != y) {
            up_i.push_back(parent_arc[static_cast<size_t>(x)]);
            x = parent[static_cast<size_t>(x)];
            up_j.push_back(parent_arc[static_cast<size_t>(y)]);
            y = parent[static_cast<size_t>(y)];
        }
        for (int id : up_j) cycle.push_back(id);
        for (size_t k = up_i.size(); k-- > 0;) cycle.push_back(up_i[k]);

        // arcs alternate sign around the cycle, entering arc positive
        double delta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (size_t k = 1; k < cycle.size(); ++k) {
            if (k % 2 == 1) {  // negative position
                const double f = arcs[static_cast<size_t>(cycle[k])].flow;
                if (f < delta) {
                    delta = f;
                    leave = cycle[k];
                }
            }
        }
        if (leave < 0) throw Error("lp-failure", "degenerate cycle");

        for (size_t k = 1; k < cycle.size(); ++k) {
            arcs[static_cast<size_t>(cycle[k])].flow += (k % 2 == 1) ? -delta : delta;
        }
        drop_arc(leave);
        add_arc(ei, ej, delta);
        rebuild_tree();
    }

    TransportPlan plan;
    plan.m = m;
    plan.n = n;
    plan.flow.assign(static_cast<size_t>(m) * n, 0.0);
    for (const auto& arc : arcs) {
        if (arc.basic) plan.flow[static_cast<size_t>(arc.i) * n + arc.j] += arc.flow;
    }
    for (size_t k = 0; k < plan.flow.size(); ++k) plan.cost += plan.flow[k] * cost[k];
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += plan.at(i, j);
        plan.max_marginal_error = std::max(plan.max_marginal_error, std::abs(s - a_in[static_cast<size_t>(i)]));
    }
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += plan.at(i, j);
        plan.max_marginal_error = std::max(plan.max_marginal_error, std::abs(s - b_in[static_cast<size_t>(j)]));
    }
    if (plan.max_marginal_error > 1e-10) throw Error("lp-failure", "marginals violated");
    return plan;
}

}  // namespace lpdetail

/// Exact optimal plan between two small discrete measures for an arbitrary
/// ground cost. Reference implementation for tests; never on the solver path.
inline TransportPlan lp_transport_with(const DiscreteMeasurePair& pair,
                                       const std::function<double(const Vec3&, const Vec3&)>& ground) {
    pair.validate();
    const int m = pair.source_count();
    const int n = pair.target_count();
    std::vector<double> cost(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            cost[static_cast<size_t>(i) * n + j] =
                ground(pair.source_pos[static_cast<size_t>(i)], pair.target_pos[static_cast<size_t>(j)]);
    return lpdetail::transportation_simplex(pair.source_mass, pair.target_mass, cost);
}

inline TransportPlan lp_transport(const DiscreteMeasurePair& pair, const CostModel& cost) {
    return lp_transport_with(
        pair, [&cost](const Vec3& x, const Vec3& y) { return cost_value(cost, x, y); });
}

/// Exact quadratic Wasserstein distance between two small discrete measures.
inline double exact_w2(const DiscreteMeasurePair& pair) {
    const TransportPlan plan = lp_transport_with(pair, [](const Vec3& x, const Vec3& y) {
        const double d1 = x.x1 - y.x1;
        const double d2 = x.x2 - y.x2;
        const double d3 = x.x3 - y.x3;
        return d1 * d1 + d2 * d2 + d3 * d3;
    });
    return std::sqrt(std::max(plan.cost, 0.0));
}

// ---------------------------------------------------------------------------
// Brute-force helpers
// ---------------------------------------------------------------------------

struct WeightScanResult {
    PotentialWeights weights;
    double functional = -std::numeric_limits<double>::infinity();
};

/// Exhaustive maximization of the dual functional over a rectangular weight
/// lattice, re-centered and halved for the requested number of refinement
/// passes. Validation instrument for clouds of at most two particles.
inline WeightScanResult weight_scan(const DualCloud& cloud, const FluidDomain& domain,
                                    const CostModel& cost, std::vector<double> lo,
                                    std::vector<double> hi, int points, int passes = 1) {
    const int n = cloud.size();
    if (n > 2) throw Error("invalid-pair", "weight scan supports at most 2 particles");
    if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n)
        throw Error("invalid-pair", "lattice bounds must match the particle count");
    if (points < 2) throw Error("invalid-pair", "lattice needs at least 2 points per axis");

    WeightScanResult best;
    best.weights.r.assign(static_cast<size_t>(n), 0.0);
    for (int pass = 0; pass < passes; ++pass) {
        PotentialWeights w;
        w.r.resize(static_cast<size_t>(n));
        WeightScanResult pass_best;
        pass_best.weights.r = best.weights.r;
        const int outer = (n == 2) ? points : 1;
        for (int k1 = 0; k1 < outer; ++k1) {
            if (n == 2) w.r[1] = lo[1] + (hi[1] - lo[1]) * k1 / (points - 1);
            for (int k0 = 0; k0 < points; ++k0) {
                w.r[0] = lo[0] + (hi[0] - lo[0]) * k0 / (points - 1);
                const double f = dual_functional(cloud, domain, cost, w);
                if (f > pass_best.functional) {
                    pass_best.functional = f;
                    pass_best.weights = w;
                }
            }
        }
        best = pass_best;
        for (int i = 0; i < n; ++i) {
            const double half = 0.25 * (hi[static_cast<size_t>(i)] - lo[static_cast<size_t>(i)]);
            const double c = best.weights.r[static_cast<size_t>(i)];
            lo[static_cast<size_t>(i)] = c - half;
            hi[static_cast<size_t>(i)] = c + half;
        }
    }
    return best;
}

/// Central finite differences, component-wise.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& fn, std::vector<double> point,
    double step) {
    if (!(step > 0.0)) throw Error("invalid-pair", "finite-difference step must be positive");
    std::vector<double> g(point.size());
    for (size_t k = 0; k < point.size(); ++k) {
        const double saved = point[k];
        point[k] = saved + step;
        const double fp = fn(point);
        point[k] = saved - step;
        const double fm = fn(point);
        point[k] = saved;
        g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Voxelizations
// ---------------------------------------------------------------------------

/// Uniform voxelization of the full container (rigid-lid comparisons). Voxel
/// centers reuse the solver's column midpoints horizontally.
inline DiscreteMeasurePair voxelize_box(const FluidDomain& domain, const CostModel& cost,
                                        int nz, const DualCloud& cloud) {
    DiscreteMeasurePair pair;
    const double v_lo = cost.vertical_origin();
    const double v_hi = domain.vertical_top(cost);
    const double dz = (v_hi - v_lo) / nz;
    const double mass = domain.column_area() * dz;
    for (int j = 0; j < domain.ny; ++j) {
        for (int i = 0; i < domain.nx; ++i) {
            const Vec2 c = domain.column_center(i, j);
            for (int k = 0; k < nz; ++k) {
                pair.source_pos.push_back({c.x1, c.x2, v_lo + (k + 0.5) * dz});
                pair.source_mass.push_back(mass);
            }
        }
    }
    double total = std::accumulate(pair.source_mass.begin(), pair.source_mass.end(), 0.0);
    for (double& m : pair.source_mass) m /= total;
    for (const auto& p : cloud.particles) {
        pair.target_pos.push_back(p.pos);
        pair.target_mass.push_back(p.mass);
    }
    return pair;
}

/// Voxelization of the fluid region described by a converged tessellation:
/// every column contributes nz equal slabs of its own fluid interval.
inline DiscreteMeasurePair voxelize_fluid(const Tessellation& tess, const FluidDomain& domain,
                                          const CostModel& cost, int nz, const DualCloud& cloud) {
    DiscreteMeasurePair pair;
    const double v_lo = cost.vertical_origin();
    const double area = domain.column_area();
    for (size_t col = 0; col < tess.columns.size(); ++col) {
        const auto& cd = tess.columns[col];
        const double depth = cd.surface - v_lo;
        if (depth <= 0.0) continue;
        const double dz = depth / nz;
        for (int k = 0; k < nz; ++k) {
            pair.source_pos.push_back({cd.x1, cd.x2, v_lo + (k + 0.5) * dz});
            pair.source_mass.push_back(area * dz);
        }
    }
    if (pair.source_pos.empty()) throw Error("invalid-pair", "fluid region is empty");
    double total = std::accumulate(pair.source_mass.begin(), pair.source_mass.end(), 0.0);
    for (double& m : pair.source_mass) m /= total;
    for (const auto& p : cloud.particles) {
        pair.target_pos.push_back(p.pos);
        pair.target_mass.push_back(p.mass);
    }
    return pair;
}

/// Independent reference for the single-atom free-surface weight: dense
/// midpoint quadrature of the wet volume using the closed-form column surface,
/// bisected in the weight until the volume is 1. Shares nothing with the
/// envelope solver.
inline double single_atom_weight_oracle(const FluidDomain& domain, const CostModel& cost,
                                        const Vec3& y, int quad_n) {
    if (!(y.x3 < 0.0)) throw Error("vertical-sign", "single-atom oracle needs y3 < 0");
    const double v_lo = cost.vertical_origin();
    const double v_hi = domain.vertical_top(cost);
    const double ddx = domain.lx / quad_n;
    const double ddy = domain.ly / quad_n;
    const double cell = ddx * ddy;

    auto volume_at = [&](double r) {
        double vol = 0.0;
        for (int j = 0; j < quad_n; ++j) {
            const double x2 = (j + 0.5) * ddy;
            for (int i = 0; i < quad_n; ++i) {
                const double x1 = (i + 0.5) * ddx;
                const double q = 0.5 * (x1 * x1 + x2 * x2);
                const double icept = x1 * y.x1 + x2 * y.x2 - r;
                const double z_star = (q - icept) / y.x3;
                double h = v_lo;
                if (z_star >= cost.zeta(v_hi)) {
                    h = v_hi;
                } else if (z_star > cost.zeta(v_lo)) {
                    h = cost.zeta_inverse(z_star);
                }
                vol += cell * (h - v_lo);
            }
        }
        return vol;
    };

    double lo = -1.0;
    while (volume_at(lo) < 1.0) lo *= 2.0;
    double hi = 1.0;
    while (volume_at(hi) > 1.0) hi *= 2.0;
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (volume_at(mid) > 1.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-14 * std::max(1.0, std::abs(mid))) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace sgdual::oracle
