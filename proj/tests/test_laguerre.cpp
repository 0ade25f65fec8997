#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "helpers.hpp"
#include "sgdual/laguerre.hpp"
#include "sgdual/oracle.hpp"

using namespace sgdual;
using Catch::Approx;

namespace {

/// Independent dense-quadrature energy for a single-atom free surface: closed
/// form column depth, fine midpoint grid, no shared solver code.
double dense_single_atom_energy(const FluidDomain& dom, const CostModel& cost, const Vec3& y,
                                double r, int quad_n) {
    const double v_lo = cost.vertical_origin();
    const double v_hi = dom.vertical_top(cost);
    const double ddx = dom.lx / quad_n;
    const double ddy = dom.ly / quad_n;
    double e = 0.0;
    for (int j = 0; j < quad_n; ++j) {
        const double x2 = (j + 0.5) * ddy;
        for (int i = 0; i < quad_n; ++i) {
            const double x1 = (i + 0.5) * ddx;
            const double q = 0.5 * (x1 * x1 + x2 * x2);
            const double icept = x1 * y.x1 + x2 * y.x2 - r;
            const double z_star = (q - icept) / y.x3;
            double h = v_lo;
            if (z_star >= cost.zeta(v_hi))
                h = v_hi;
            else if (z_star > cost.zeta(v_lo))
                h = cost.zeta_inverse(z_star);
            const double d1 = x1 - y.x1;
            const double d2 = x2 - y.x2;
            e += ddx * ddy *
                 (0.5 * (d1 * d1 + d2 * d2) * (h - v_lo) - y.x3 * cost.zeta_integral(v_lo, h));
        }
    }
    return e;
}

void check_column_structure(const Tessellation& tess) {
    for (const auto& col : tess.columns) {
        bool vacuum_seen = false;
        double prev_hi = -1e300;
        bool first = true;
        for (const auto& seg : col.segments) {
            if (!first) REQUIRE(seg.v_lo == Approx(prev_hi).margin(1e-12));
            prev_hi = seg.v_hi;
            first = false;
            if (seg.particle < 0)
                vacuum_seen = true;
            else
                REQUIRE_FALSE(vacuum_seen);  // no fluid above vacuum
        }
    }
}

}  // namespace

TEST_CASE("single-sheet tessellation has the closed-form surface") {
    const CostModel cost;
    FluidDomain dom = testutil::free_surface_domain(1);
    const DualCloud c = testutil::single_atom({0, 0, -1});
    PotentialWeights w;
    w.r = {-0.7};
    const Tessellation tess = tessellate(c, dom, cost, w);
    // one column with midpoint (0.5, 0.5)
    REQUIRE(tess.height.values[0] == Approx(0.45).margin(1e-14));
    check_column_structure(tess);
}

TEST_CASE("rigid-lid single cell spans the whole box") {
    const CostModel cost;
    const FluidDomain dom = testutil::rigid_domain(16);
    const DualCloud c = testutil::single_atom({0.7, 0.2, -1.0});
    PotentialWeights w;
    w.r = {0.0};
    const Tessellation tess = tessellate(c, dom, cost, w);
    REQUIRE(tess.volume[0] == Approx(1.0).margin(1e-12));
    REQUIRE(tess.barycenter[0].x1 == Approx(0.5).margin(1e-14));
    REQUIRE(tess.barycenter[0].x2 == Approx(0.5).margin(1e-14));
    REQUIRE(tess.barycenter[0].x3 == Approx(0.5).margin(1e-14));
}

TEST_CASE("free-surface tessellation rejects nonnegative y3") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(4);
    DualCloud c = testutil::single_atom({0.5, 0.5, 0.5});
    PotentialWeights w;
    w.r = {0.0};
    REQUIRE_THROWS_AS(tessellate(c, dom, cost, w), Error);
}

TEST_CASE("mirror-symmetric pair converges to equal volumes") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(32);
    const DualCloud c =
        testutil::cloud_of({{{0.4, 0.5, -1.0}, 0.5}, {{0.6, 0.5, -1.0}, 0.5}});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    REQUIRE(res.tess.volume[0] == Approx(res.tess.volume[1]).margin(1e-7));
    REQUIRE(std::abs(res.tess.fluid_volume - 1.0) <= 1e-6);
    check_column_structure(res.tess);
}

TEST_CASE("dual functional is constant in the weight for one rigid-lid atom") {
    const CostModel cost;
    const FluidDomain dom = testutil::rigid_domain(8);
    const DualCloud c = testutil::single_atom({0.3, 0.8, -1.2});
    PotentialWeights w;
    for (double r : {-2.0, 0.0, 1.7}) {
        w.r = {r};
        const double f = dual_functional(c, dom, cost, w);
        w.r = {0.0};
        REQUIRE(f == Approx(dual_functional(c, dom, cost, w)).margin(1e-12));
    }
}

TEST_CASE("strong duality at the converged single-atom state") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(64);
    const DualCloud c = testutil::single_atom({0, 0, -1});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    const double f = dual_functional_from(c, res.weights, res.tess);
    // functional value equals the transport cost at the optimum
    REQUIRE(f == Approx(res.tess.transport_cost).margin(1e-9));
    // and both match an independent dense quadrature of the cost integral
    const double dense = dense_single_atom_energy(dom, cost, {0, 0, -1}, res.weights.r[0], 1024);
    REQUIRE(std::abs(f - dense) / std::abs(dense) <= 1e-3);
}

TEST_CASE("no weight vector beats the converged functional") {
    DetRng rng(3);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(24);
    const DualCloud c = testutil::random_cloud(4, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    const double f_star = dual_functional_from(c, res.weights, res.tess);
    for (int trial = 0; trial < 10; ++trial) {
        PotentialWeights w = res.weights;
        for (double& r : w.r) r += rng.uniform(-0.2, 0.2);
        REQUIRE(dual_functional(c, dom, cost, w) <= f_star + 1e-9);
    }
}

TEST_CASE("gradient matches central finite differences") {
    DetRng rng(9);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(24);
    const DualCloud c = testutil::random_cloud(4, rng);
    const SolveResult base = solve_weights(c, dom, cost, testutil::quick_solver());
    auto fn = [&](const std::vector<double>& rr) {
        PotentialWeights w;
        w.r = rr;
        return dual_functional(c, dom, cost, w);
    };
    for (int trial = 0; trial < 3; ++trial) {
        PotentialWeights w = base.weights;
        for (double& r : w.r) r += rng.uniform(-0.1, 0.1);
        const std::vector<double> g = dual_gradient(c, dom, cost, w);
        const std::vector<double> fd = oracle::finite_difference_gradient(fn, w.r, 1e-5);
        double num = 0.0;
        double den = 0.0;
        for (size_t k = 0; k < g.size(); ++k) {
            num += (g[k] - fd[k]) * (g[k] - fd[k]);
            den += g[k] * g[k];
        }
        REQUIRE(std::sqrt(num) <= 1e-6 * std::max(std::sqrt(den), 1e-3));
    }
}

TEST_CASE("equal weights give equal gradients for a symmetric pair") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(32);
    const DualCloud c =
        testutil::cloud_of({{{0.4, 0.5, -1.0}, 0.5}, {{0.6, 0.5, -1.0}, 0.5}});
    PotentialWeights w;
    w.r = {-1.0, -1.0};
    const std::vector<double> g = dual_gradient(c, dom, cost, w);
    REQUIRE(g[0] == Approx(g[1]).margin(1e-13));
}

TEST_CASE("single-atom weight matches the dense root-find reference") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(64);
    const DualCloud c = testutil::single_atom({0, 0, -1});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    const double reference = oracle::single_atom_weight_oracle(dom, cost, {0, 0, -1}, 1024);
    REQUIRE(std::abs(res.weights.r[0] - reference) <= 1e-4);
    // every column surface follows the paraboloid formula
    for (const auto& col : res.tess.columns) {
        const double expect =
            std::max(0.0, -res.weights.r[0] - 0.5 * (col.x1 * col.x1 + col.x2 * col.x2));
        REQUIRE(col.surface == Approx(expect).margin(1e-10));
    }
}

TEST_CASE("two-atom weights agree with the lattice scan") {
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(24);
    const DualCloud c =
        testutil::cloud_of({{{-0.25, 0.5, -1.0}, 0.5}, {{0.25, 0.5, -1.0}, 0.5}});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    std::vector<double> lo;
    std::vector<double> hi;
    for (int i = 0; i < 2; ++i) {
        lo.push_back(res.weights.r[static_cast<size_t>(i)] - 0.5);
        hi.push_back(res.weights.r[static_cast<size_t>(i)] + 0.5);
    }
    // 64 points per axis, refined twice; the argmax identifies the optimum up
    // to the final lattice spacing
    const oracle::WeightScanResult scan = oracle::weight_scan(c, dom, cost, lo, hi, 64, 3);
    const double spacing = (hi[0] - lo[0]) / 63.0 * 0.25;
    REQUIRE(std::abs(scan.weights.r[0] - res.weights.r[0]) <= 2.0 * spacing);
    REQUIRE(std::abs(scan.weights.r[1] - res.weights.r[1]) <= 2.0 * spacing);
    REQUIRE(scan.functional <= dual_functional_from(c, res.weights, res.tess) + 1e-9);
}

TEST_CASE("rigid-lid solve pins the gauge and balances a symmetric pair") {
    const CostModel cost;
    const FluidDomain dom = testutil::rigid_domain(24);
    const DualCloud c =
        testutil::cloud_of({{{0.35, 0.5, -1.0}, 0.5}, {{0.65, 0.5, -1.0}, 0.5}});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    REQUIRE(res.weights.r[0] + res.weights.r[1] == Approx(0.0).margin(1e-12));
    REQUIRE(res.weights.r[0] == Approx(res.weights.r[1]).margin(1e-7));
    REQUIRE(res.tess.volume[0] == Approx(0.5).margin(1e-7));
}

TEST_CASE("rigid-lid functional is shift invariant, free-surface is not") {
    DetRng rng(13);
    const CostModel cost;
    const DualCloud c = testutil::random_cloud(3, rng);

    const FluidDomain rigid = testutil::rigid_domain(16);
    PotentialWeights w;
    for (int i = 0; i < 3; ++i) w.r.push_back(rng.uniform(-0.5, 0.5));
    const double f0 = dual_functional(c, rigid, cost, w);
    PotentialWeights shifted = w;
    for (double& r : shifted.r) r += 0.4;
    REQUIRE(dual_functional(c, rigid, cost, shifted) == Approx(f0).margin(1e-12));

    const FluidDomain free_dom = testutil::free_surface_domain(16);
    const SolveResult res = solve_weights(c, free_dom, cost, testutil::quick_solver());
    const double f_star = dual_functional_from(c, res.weights, res.tess);
    for (double shift : {-0.1, 0.1}) {
        PotentialWeights ws = res.weights;
        for (double& r : ws.r) r += shift;
        // the vacuum threshold breaks the common-shift symmetry
        REQUIRE(dual_functional(c, free_dom, cost, ws) < f_star - 1e-6);
    }
}

TEST_CASE("functional is concave along random segments") {
    DetRng rng(21);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(16);
    const DualCloud c = testutil::random_cloud(5, rng);
    const SolveResult base = solve_weights(c, dom, cost, testutil::quick_solver());
    for (int trial = 0; trial < 5; ++trial) {
        PotentialWeights a = base.weights;
        PotentialWeights b = base.weights;
        for (double& r : a.r) r += rng.uniform(-0.3, 0.3);
        for (double& r : b.r) r += rng.uniform(-0.3, 0.3);
        const double fa = dual_functional(c, dom, cost, a);
        const double fb = dual_functional(c, dom, cost, b);
        for (double t : {0.25, 0.5, 0.75}) {
            PotentialWeights mid;
            mid.r.resize(a.r.size());
            for (size_t k = 0; k < a.r.size(); ++k) mid.r[k] = t * a.r[k] + (1 - t) * b.r[k];
            REQUIRE(dual_functional(c, dom, cost, mid) >= t * fa + (1 - t) * fb - 1e-9);
        }
    }
}

TEST_CASE("cap collision at convergence is reported") {
    const CostModel cost;
    FluidDomain dom = testutil::free_surface_domain(16, /*cap=*/1.05);
    const DualCloud c = testutil::single_atom({0, 0, -1});
    REQUIRE_THROWS_AS(solve_weights(c, dom, cost, testutil::quick_solver()), Error);
    try {
        solve_weights(c, dom, cost, testutil::quick_solver());
    } catch (const Error& e) {
        REQUIRE(e.code() == "cap-too-low");
    }
}

TEST_CASE("surface cross-check agrees on dry and wet columns") {
    const CostModel cost;
    // wide footprint so corner columns stay dry
    FluidDomain dom = testutil::free_surface_domain(32, 2.0, 2.0, 2.0);
    const DualCloud c = testutil::single_atom({0.6, 0.6, -1.0});
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    int dry = 0;
    for (const auto& col : res.tess.columns)
        if (col.surface == 0.0) ++dry;
    REQUIRE(dry > 0);  // the configuration really exercises the clamp
    const SurfaceReport rep = surface_height_crosscheck(c, dom, cost, res.weights, res.tess);
    REQUIRE(rep.max_height_mismatch <= 1e-10);
    REQUIRE(rep.max_surface_residual <= 1e-10);
    check_column_structure(res.tess);
    // single-sheet pressure is quadratic, so the surface-gradient relation is
    // discretely exact
    REQUIRE(rep.gradient_residual <= 1e-10);
}

TEST_CASE("surface cross-check passes on a random converged ensemble") {
    DetRng rng(29);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(32);
    const DualCloud c = testutil::random_cloud(5, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    const SurfaceReport rep = surface_height_crosscheck(c, dom, cost, res.weights, res.tess);
    REQUIRE(rep.max_height_mismatch <= 1e-10);
    REQUIRE(rep.max_surface_residual <= 1e-10);
}

TEST_CASE("push-forward winners reproduce the target masses") {
    DetRng rng(41);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(32);
    const DualCloud c = testutil::random_cloud(6, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());

    const int samples = 1000;
    std::vector<double> cum(res.tess.columns.size());
    double total = 0.0;
    for (size_t k = 0; k < res.tess.columns.size(); ++k) {
        total += res.tess.columns[k].surface;
        cum[k] = total;
    }
    std::vector<double> winner_mass(6, 0.0);
    for (int s = 0; s < samples; ++s) {
        const double u = rng.uniform() * total;
        const size_t k =
            static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& col = res.tess.columns[std::min(k, cum.size() - 1)];
        const double v = rng.uniform() * col.surface;
        int win = -1;
        geopotential({col.x1, col.x2, cost.zeta(v)}, c, res.weights, &win);
        winner_mass[static_cast<size_t>(win)] += 1.0 / samples;
    }
    double tv = 0.0;
    for (int i = 0; i < 6; ++i)
        tv += 0.5 * std::abs(winner_mass[static_cast<size_t>(i)] -
                             c.particles[static_cast<size_t>(i)].mass);
    REQUIRE(tv <= 4.0 / std::sqrt(static_cast<double>(samples)));
}

TEST_CASE("per-column envelope decreases strictly through the fluid") {
    DetRng rng(43);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(16);
    const DualCloud c = testutil::random_cloud(6, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    for (const auto& col : res.tess.columns) {
        double prev = std::numeric_limits<double>::infinity();
        for (const auto& seg : col.segments) {
            if (seg.particle < 0) continue;
            const Vec3& y = c.particles[static_cast<size_t>(seg.particle)].pos;
            const double icept =
                col.x1 * y.x1 + col.x2 * y.x2 - res.weights.r[static_cast<size_t>(seg.particle)];
            const double lo_val = icept + y.x3 * seg.z_lo;
            const double hi_val = icept + y.x3 * seg.z_hi;
            REQUIRE(hi_val < lo_val);  // strict decay inside a segment
            REQUIRE(lo_val <= prev + 1e-9);
            prev = hi_val;
        }
    }
}

TEST_CASE("conjugate values at the atoms match the converged weights") {
    DetRng rng(47);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(24);
    const DualCloud c = testutil::random_cloud(4, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());

    // lifted sample points throughout the fluid region
    std::vector<Vec3> samples;
    for (const auto& col : res.tess.columns) {
        for (int k = 0; k < 12; ++k) {
            const double v = (k + 0.5) / 12.0 * col.surface;
            if (col.surface > 0.0) samples.push_back({col.x1, col.x2, cost.zeta(v)});
        }
    }
    for (int i = 0; i < c.size(); ++i) {
        const double conj =
            legendre_transform_grid(samples, c, res.weights, c.particles[static_cast<size_t>(i)].pos);
        // grid supremum never exceeds the weight, and comes close because the
        // cell carries positive mass
        REQUIRE(conj <= res.weights.r[static_cast<size_t>(i)] + 1e-9);
        REQUIRE(conj >= res.weights.r[static_cast<size_t>(i)] - 0.08);
    }
}

TEST_CASE("tessellation is identical for any thread count") {
    DetRng rng(53);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(32);
    const DualCloud c = testutil::random_cloud(6, rng);
    const SolveResult res = solve_weights(c, dom, cost, testutil::quick_solver());
    const Tessellation t1 = tessellate(c, dom, cost, res.weights, 1);
    for (int threads : {2, 8}) {
        const Tessellation tn = tessellate(c, dom, cost, res.weights, threads);
        std::ostringstream a;
        std::ostringstream b;
        write_heights_csv(a, t1);
        write_heights_csv(b, tn);
        REQUIRE(a.str() == b.str());
        std::ostringstream ca;
        std::ostringstream cb;
        write_cells_csv(ca, t1, res.weights);
        write_cells_csv(cb, tn, res.weights);
        REQUIRE(ca.str() == cb.str());
    }
}

TEST_CASE("unit-exponent pressure coordinates reproduce the plain pipeline bit for bit") {
    DetRng rng(59);
    const DualCloud c = testutil::random_cloud(4, rng);
    const FluidDomain dom = testutil::free_surface_domain(24);
    const CostModel inc;
    CostModel comp;
    comp.kind = CostKind::Compressible;
    comp.kappa = 1.0;
    comp.surface_pressure = 0.0;
    const SolveResult a = solve_weights(c, dom, inc, testutil::quick_solver());
    const SolveResult b = solve_weights(c, dom, comp, testutil::quick_solver());
    std::ostringstream ha;
    std::ostringstream hb;
    write_heights_csv(ha, a.tess);
    write_heights_csv(hb, b.tess);
    REQUIRE(ha.str() == hb.str());
    std::ostringstream cella;
    std::ostringstream cellb;
    write_cells_csv(cella, a.tess, a.weights);
    write_cells_csv(cellb, b.tess, b.weights);
    REQUIRE(cella.str() == cellb.str());
    REQUIRE(a.tess.transport_cost == b.tess.transport_cost);
}

TEST_CASE("quadratic-exponent pressure coordinates converge and cross-check") {
    CostModel comp;
    comp.kind = CostKind::Compressible;
    comp.kappa = 2.0;
    comp.surface_pressure = 0.1;
    FluidDomain dom = testutil::free_surface_domain(24, /*cap=*/2.5);
    DualCloud c = testutil::cloud_of({{{0.45, 0.5, -0.9}, 0.5}, {{0.55, 0.5, -1.2}, 0.5}});
    const SolveResult res = solve_weights(c, dom, comp, testutil::quick_solver());
    REQUIRE(std::abs(res.tess.fluid_volume - 1.0) <= 1e-6);
    const SurfaceReport rep = surface_height_crosscheck(c, dom, comp, res.weights, res.tess);
    REQUIRE(rep.max_height_mismatch <= 1e-10);
    REQUIRE(rep.max_surface_residual <= 1e-10);
    // surfaces start at the reference pressure, not zero
    for (const auto& col : res.tess.columns) REQUIRE(col.surface >= comp.surface_pressure);
}

TEST_CASE("warm starts converge quickly after a small perturbation") {
    DetRng rng(61);
    const CostModel cost;
    const FluidDomain dom = testutil::free_surface_domain(24);
    DualCloud c = testutil::random_cloud(4, rng);
    const SolveResult cold = solve_weights(c, dom, cost, testutil::quick_solver());
    for (auto& p : c.particles) {
        p.pos.x1 += rng.uniform(-0.005, 0.005);
        p.pos.x2 += rng.uniform(-0.005, 0.005);
    }
    const SolveResult warm = solve_weights(c, dom, cost, testutil::quick_solver(), &cold.weights);
    REQUIRE(warm.stats.evaluations < cold.stats.evaluations);
}
