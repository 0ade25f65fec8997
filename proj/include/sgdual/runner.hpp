#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "sgdual/config.hpp"
#include "sgdual/dynamics.hpp"
#include "sgdual/oracle.hpp"

namespace sgdual::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

inline std::string step_tag(int step) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", step);
    return buf;
}

inline std::string diagnostics_line(const DiagnosticsRecord& r) {
    std::ostringstream os;
    os << "{\"step\":" << r.step << ",\"time\":" << fmt17(r.time)
       << ",\"energy\":" << fmt17(r.energy) << ",\"energy_drift\":" << fmt17(r.energy_drift)
       << ",\"mass_residual\":" << fmt17(r.mass_residual)
       << ",\"mass_total\":" << fmt17(r.mass_total)
       << ",\"support_radius\":" << fmt17(r.support_radius)
       << ",\"max_speed\":" << fmt17(r.max_speed) << ",\"w2_step\":" << fmt17(r.w2_step)
       << ",\"w2_step_bound\":" << fmt17(r.w2_step_bound) << ",\"h_min\":" << fmt17(r.h_min)
       << ",\"h_max\":" << fmt17(r.h_max) << "}";
    return os.str();
}

inline void write_particles_csv(std::ostream& os, const SimState& state,
                                const std::vector<Vec3>& velocities) {
    os << "# schema=sg-particles-v1\n";
    os << "step,particle,y1,y2,y3,w1,w2\n";
    for (int i = 0; i < state.cloud.size(); ++i) {
        const Vec3& y = state.cloud.particles[static_cast<size_t>(i)].pos;
        const Vec3& w = velocities[static_cast<size_t>(i)];
        os << state.step_index << ',' << i << ',' << fmt17(y.x1) << ',' << fmt17(y.x2) << ','
           << fmt17(y.x3) << ',' << fmt17(w.x1) << ',' << fmt17(w.x2) << '\n';
    }
}

inline void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write " + path.string());
    out << content;
}

inline void write_snapshot(const fs::path& dir, const SimState& state,
                           const SolverConfig& solver) {
    const std::string tag = step_tag(state.step_index);
    {
        std::ostringstream os;
        write_heights_csv(os, state.tess);
        write_text_file(dir / ("heights_" + tag + ".csv"), os.str());
    }
    {
        std::ostringstream os;
        write_cells_csv(os, state.tess, state.weights);
        write_text_file(dir / ("cells_" + tag + ".csv"), os.str());
    }
    {
        std::ostringstream os;
        write_particles_csv(os, state, dual_velocity(state, solver));
        write_text_file(dir / ("particles_" + tag + ".csv"), os.str());
    }
}

inline void write_effective_config(const fs::path& dir, const RunConfig& rc) {
    write_text_file(dir / "effective_config.json", effective_config(rc).dump() + "\n");
}

// ---------------------------------------------------------------------------
// Verification battery
// ---------------------------------------------------------------------------

struct BatteryResult {
    struct Row {
        std::string name;
        std::string status;  // PASS | FAIL | SKIP
        std::string detail;
    };
    std::vector<Row> rows;

    bool pass() const {
        for (const auto& r : rows)
            if (r.status == "FAIL") return false;
        return true;
    }
};

/// Property battery run at the configured scale: validation, convergence,
/// surface structure, convexity and concavity checks, gradient consistency,
/// the transport reference comparison, flow bounds, push-forward fidelity,
/// short-run conservation, and thread determinism.
inline BatteryResult verify_battery(const DualCloud& cloud, const FluidDomain& domain,
                                    const CostModel& cost, const SolverConfig& solver,
                                    uint64_t seed) {
    BatteryResult out;
    auto row = [&](const std::string& name, bool ok, const std::string& detail) {
        out.rows.push_back({name, ok ? "PASS" : "FAIL", detail});
        return ok;
    };
    auto skip_rest = [&](const std::string& why) {
        static const char* names[] = {"solve-convergence",  "single-valued-surface",
                                      "envelope-monotone",  "surface-crosscheck",
                                      "c-concavity",        "dual-concavity",
                                      "gradient-check",     "oracle-transport",
                                      "velocity-bound",     "pushforward-fidelity",
                                      "short-run-conservation", "thread-determinism",
                                      "horizon-estimate"};
        for (const char* n : names) out.rows.push_back({n, "SKIP", why});
    };

    const ValidationReport vr = validate_cloud(cloud, cost);
    if (!row("cloud-validation", vr.pass(), vr.summary())) {
        skip_rest("skipped: invalid cloud");
        return out;
    }

    SolveResult solved;
    try {
        solved = solve_weights(cloud, domain, cost, solver);
    } catch (const Error& e) {
        row("solve-convergence", false, e.what());
        skip_rest("skipped: no converged state");
        return out;
    }
    {
        std::string detail = "residual " + fmt17(solved.stats.residual) + " after " +
                             std::to_string(solved.stats.iterations) + " iterations";
        if (domain.mode == BoundaryMode::RigidLid) {
            double s = 0.0;
            for (double r : solved.weights.r) s += r;
            detail += ", gauge sum " + fmt17(s);
        }
        row("solve-convergence", true, detail);
    }

    {
        int gaps = 0;
        int fluid_above_vacuum = 0;
        for (const auto& col : solved.tess.columns) {
            bool vacuum_seen = false;
            double prev_hi = -std::numeric_limits<double>::infinity();
            bool first = true;
            for (const auto& seg : col.segments) {
                if (!first && std::abs(seg.v_lo - prev_hi) > 1e-12) ++gaps;
                prev_hi = seg.v_hi;
                first = false;
                if (seg.particle < 0)
                    vacuum_seen = true;
                else if (vacuum_seen)
                    ++fluid_above_vacuum;
            }
        }
        row("single-valued-surface", gaps == 0 && fluid_above_vacuum == 0,
            std::to_string(solved.tess.columns.size()) + " columns, " + std::to_string(gaps) +
                " gaps, " + std::to_string(fluid_above_vacuum) + " fluid-above-vacuum");
    }

    {
        // the envelope must decrease strictly along each column
        bool monotone = true;
        for (const auto& col : solved.tess.columns) {
            double prev = std::numeric_limits<double>::infinity();
            for (const auto& seg : col.segments) {
                if (seg.particle < 0) continue;
                const Vec3& y = cloud.particles[static_cast<size_t>(seg.particle)].pos;
                const double icept = col.x1 * y.x1 + col.x2 * y.x2 -
                                     solved.weights.r[static_cast<size_t>(seg.particle)];
                const double top = icept + y.x3 * seg.z_hi;
                const double bottom = icept + y.x3 * seg.z_lo;
                if (bottom > prev + 1e-9 || top > bottom + 1e-12) monotone = false;
                prev = top;
            }
        }
        row("envelope-monotone", monotone, "");
    }

    try {
        const SurfaceReport sr =
            surface_height_crosscheck(cloud, domain, cost, solved.weights, solved.tess);
        row("surface-crosscheck", true,
            "height mismatch " + fmt17(sr.max_height_mismatch) + ", surface residual " +
                fmt17(sr.max_surface_residual) + ", lipschitz " + fmt17(sr.lipschitz) +
                ", grad residual " + fmt17(sr.gradient_residual));
    } catch (const Error& e) {
        row("surface-crosscheck", false, e.what());
    }

    {
        const ConvexityReport cr = check_c_concavity(cloud, solved.weights, cost, domain, 200, seed);
        row("c-concavity", cr.pass, "max violation " + fmt17(cr.max_violation));
    }

    {
        DetRng rng(seed + 1);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            PotentialWeights a = solved.weights;
            PotentialWeights b = solved.weights;
            for (double& r : a.r) r += rng.uniform(-0.3, 0.3);
            for (double& r : b.r) r += rng.uniform(-0.3, 0.3);
            const double fa = dual_functional(cloud, domain, cost, a, solver.threads);
            const double fb = dual_functional(cloud, domain, cost, b, solver.threads);
            for (double t : {0.25, 0.5, 0.75}) {
                PotentialWeights mid;
                mid.r.resize(a.r.size());
                for (size_t k = 0; k < a.r.size(); ++k)
                    mid.r[k] = t * a.r[k] + (1.0 - t) * b.r[k];
                const double fm = dual_functional(cloud, domain, cost, mid, solver.threads);
                worst = std::max(worst, t * fa + (1.0 - t) * fb - fm);
            }
        }
        row("dual-concavity", worst <= 1e-9, "max midpoint deficit " + fmt17(worst));
    }

    {
        DetRng rng(seed + 2);
        PotentialWeights probe = solved.weights;
        for (double& r : probe.r) r += rng.uniform(-0.05, 0.05);
        const std::vector<double> g = dual_gradient(cloud, domain, cost, probe, solver.threads);
        auto fn = [&](const std::vector<double>& rr) {
            PotentialWeights w2;
            w2.r = rr;
            return dual_functional(cloud, domain, cost, w2, solver.threads);
        };
        const std::vector<double> fd = oracle::finite_difference_gradient(fn, probe.r, 1e-5);
        double num = 0.0;
        double den = 0.0;
        for (size_t k = 0; k < g.size(); ++k) {
            num += (g[k] - fd[k]) * (g[k] - fd[k]);
            den += g[k] * g[k];
        }
        const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
        row("gradient-check", rel <= 1e-6, "relative mismatch " + fmt17(rel));
    }

    {
        // transport cost against the exact plan on a coarse voxelization
        FluidDomain coarse = domain;
        coarse.nx = std::min(domain.nx, 16);
        coarse.ny = std::min(domain.ny, 16);
        try {
            SolveResult cs = solve_weights(cloud, coarse, cost, solver);
            oracle::DiscreteMeasurePair pair =
                domain.mode == BoundaryMode::RigidLid
                    ? oracle::voxelize_box(coarse, cost, 16, cloud)
                    : oracle::voxelize_fluid(cs.tess, coarse, cost, 16, cloud);
            const oracle::TransportPlan plan = oracle::lp_transport(pair, cost);
            const double rel = std::abs(cs.tess.transport_cost - plan.cost) /
                               std::max(std::abs(plan.cost), 1e-12);
            row("oracle-transport", rel <= 0.02,
                "relative gap " + fmt17(rel) + " at " + std::to_string(coarse.nx) + "x" +
                    std::to_string(coarse.ny) + "x16");
        } catch (const Error& e) {
            row("oracle-transport", false, e.what());
        }
    }

    SimState state;
    state.t = 0.0;
    state.step_index = 0;
    state.cloud = cloud;
    state.weights = solved.weights;
    state.tess = solved.tess;
    const HamiltonianConstants hc = make_hamiltonian_constants(cloud, domain, cost, solver.horizon);
    {
        const HamiltonianReport hr = hamiltonian_checks(state, solver, hc);
        row("velocity-bound", hr.velocity_ok,
            "worst ratio " + fmt17(hr.worst_velocity_ratio));
        out.rows.push_back({"horizon-estimate", "PASS",
                            hr.horizon_ok ? "within the admissible-radius bound"
                                          : "warning: horizon exceeds the admissible-radius bound"});
    }

    if (cloud.size() <= 8) {
        DetRng rng(seed + 3);
        const int samples = 1000;
        // sample fluid points by fluid volume per column
        std::vector<double> cum(solved.tess.columns.size());
        double total = 0.0;
        const double v_lo = cost.vertical_origin();
        for (size_t c = 0; c < solved.tess.columns.size(); ++c) {
            total += solved.tess.columns[c].surface - v_lo;
            cum[c] = total;
        }
        std::vector<double> winner_mass(static_cast<size_t>(cloud.size()), 0.0);
        for (int s = 0; s < samples; ++s) {
            const double u = rng.uniform() * total;
            const size_t c = static_cast<size_t>(
                std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
            const auto& col = solved.tess.columns[std::min(c, cum.size() - 1)];
            const double v = v_lo + rng.uniform() * (col.surface - v_lo);
            int win = 0;
            geopotential({col.x1, col.x2, cost.zeta(v)}, cloud, solved.weights, &win);
            winner_mass[static_cast<size_t>(win)] += 1.0 / samples;
        }
        double tv = 0.0;
        for (int i = 0; i < cloud.size(); ++i)
            tv += 0.5 * std::abs(winner_mass[static_cast<size_t>(i)] -
                                 cloud.particles[static_cast<size_t>(i)].mass);
        const double bound = 4.0 / std::sqrt(static_cast<double>(samples));
        row("pushforward-fidelity", tv <= bound,
            "total variation " + fmt17(tv) + " vs bound " + fmt17(bound));
    } else {
        out.rows.push_back({"pushforward-fidelity", "SKIP", "ensemble larger than 8"});
    }

    {
        SolverConfig short_cfg = solver;
        short_cfg.horizon = 3.0 * solver.time_step;
        const RunResult rr = run(cloud, domain, cost, short_cfg);
        double y3_drift = 0.0;
        for (int i = 0; i < cloud.size(); ++i)
            y3_drift = std::max(
                y3_drift, std::abs(rr.final_state.cloud.particles[static_cast<size_t>(i)].pos.x3 -
                                   cloud.particles[static_cast<size_t>(i)].pos.x3));
        const double mass_drift = std::abs(rr.final_state.cloud.total_mass() - 1.0);
        row("short-run-conservation",
            y3_drift == 0.0 && mass_drift <= 1e-12 && rr.support_violations == 0 &&
                rr.velocity_violations == 0,
            "y3 drift " + fmt17(y3_drift) + ", mass drift " + fmt17(mass_drift));
    }

    {
        const Tessellation t1 = tessellate(cloud, domain, cost, solved.weights, 1);
        const Tessellation t2 =
            tessellate(cloud, domain, cost, solved.weights, std::max(2, solver.threads));
        std::ostringstream a;
        std::ostringstream b;
        write_heights_csv(a, t1);
        write_heights_csv(b, t2);
        std::ostringstream ca;
        std::ostringstream cb;
        write_cells_csv(ca, t1, solved.weights);
        write_cells_csv(cb, t2, solved.weights);
        row("thread-determinism", a.str() == b.str() && ca.str() == cb.str(),
            "single-thread and multi-thread tessellations compared byte-wise");
    }

    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int fail_with(std::ostream& out, const Error& e) {
    out << "{\"error\":\"" << e.code() << "\",\"message\":\"" << e.what() << "\"}\n";
    return 1;
}

/// Single minimization at t = 0: converged weights, surface and cell tables,
/// energy, and the surface cross-check residual.
inline int cmd_solve(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    try {
        fs::create_directories(rc.output_dir);
        write_effective_config(rc.output_dir, rc);
        const DualCloud cloud = make_cloud(rc);
        SimState state = init_state(cloud, rc.domain, rc.cost, rc.solver);
        const SurfaceReport sr =
            surface_height_crosscheck(cloud, rc.domain, rc.cost, state.weights, state.tess);

        write_snapshot(rc.output_dir, state, rc.solver);
        {
            DiagnosticsRecord rec;
            rec.step = 0;
            rec.time = 0.0;
            rec.energy = energy(state);
            rec.energy_drift = 0.0;
            rec.mass_residual = mass_residual(state);
            rec.mass_total = cloud.total_mass();
            rec.support_radius = support_radius(cloud);
            rec.max_speed = max_speed(dual_velocity(state, rc.solver));
            double h_min = std::numeric_limits<double>::infinity();
            double h_max = -h_min;
            for (double h : state.tess.height.values) {
                h_min = std::min(h_min, h);
                h_max = std::max(h_max, h);
            }
            rec.h_min = h_min;
            rec.h_max = h_max;
            std::ostringstream os;
            os << "{\"schema\":\"sg-diagnostics-v1\"}\n" << diagnostics_line(rec) << "\n";
            write_text_file(fs::path(rc.output_dir) / "diagnostics.jsonl", os.str());
        }
        out << "{\"command\":\"solve\",\"energy\":" << fmt17(energy(state))
            << ",\"mass_residual\":" << fmt17(mass_residual(state))
            << ",\"surface_residual\":" << fmt17(sr.max_surface_residual)
            << ",\"height_mismatch\":" << fmt17(sr.max_height_mismatch)
            << ",\"iterations\":" << state.last_solve.iterations << "}\n";
        return 0;
    } catch (const Error& e) {
        return fail_with(err, e);
    }
}

/// Full trajectory: per-step diagnostics stream plus snapshots at the
/// configured cadence.
inline int cmd_run(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    try {
        fs::create_directories(rc.output_dir);
        write_effective_config(rc.output_dir, rc);
        const DualCloud cloud = make_cloud(rc);

        std::ofstream diag(fs::path(rc.output_dir) / "diagnostics.jsonl", std::ios::binary);
        if (!diag) throw Error("io", "cannot write diagnostics stream");
        diag << "{\"schema\":\"sg-diagnostics-v1\"}\n";

        const int total_steps =
            rc.solver.horizon <= 0.0
                ? 0
                : static_cast<int>(std::ceil(rc.solver.horizon / rc.solver.time_step - 1e-9));
        const RunResult rr = run(
            cloud, rc.domain, rc.cost, rc.solver,
            [&](const DiagnosticsRecord& rec) { diag << diagnostics_line(rec) << "\n"; },
            [&](const SimState& st, const DiagnosticsRecord&) {
                if (st.step_index % rc.solver.output_cadence == 0 || st.step_index == total_steps)
                    write_snapshot(rc.output_dir, st, rc.solver);
            });
        diag.close();
        if (rr.horizon_warning)
            err << "warning: requested horizon exceeds the admissible-radius estimate\n";

        const DiagnosticsRecord& last = rr.records.back();
        out << "{\"command\":\"run\",\"steps\":" << last.step
            << ",\"final_time\":" << fmt17(last.time) << ",\"final_energy\":" << fmt17(last.energy)
            << ",\"energy_drift\":" << fmt17(last.energy_drift)
            << ",\"velocity_violations\":" << rr.velocity_violations
            << ",\"support_violations\":" << rr.support_violations << "}\n";
        return 0;
    } catch (const Error& e) {
        return fail_with(err, e);
    }
}

/// Property battery at the configured scale; prints one row per check.
inline int cmd_verify(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    try {
        fs::create_directories(rc.output_dir);
        write_effective_config(rc.output_dir, rc);
        DualCloud cloud = make_cloud(rc);
        const BatteryResult battery =
            verify_battery(cloud, rc.domain, rc.cost, rc.solver, rc.seed);
        for (const auto& r : battery.rows) {
            out << "[" << r.status << "] " << r.name;
            if (!r.detail.empty()) out << " (" << r.detail << ")";
            out << "\n";
        }
        out << (battery.pass() ? "verify: all checks passed\n" : "verify: FAILURES present\n");
        return battery.pass() ? 0 : 1;
    } catch (const Error& e) {
        return fail_with(err, e);
    }
}

}  // namespace sgdual::cli
