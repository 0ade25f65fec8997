#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sgdual/core.hpp"
#include "sgdual/laguerre.hpp"

namespace sgdual {

/// One point of the dual-space trajectory: the measure, its converged weights,
/// and the tessellation they induce.
struct SimState {
    double t = 0.0;
    int step_index = 0;
    DualCloud cloud;
    PotentialWeights weights;
    Tessellation tess;
    SolveStats last_solve;
};

struct DiagnosticsRecord {
    int step = 0;
    double time = 0.0;
    double energy = 0.0;
    double energy_drift = 0.0;   // relative to the start of the run
    double mass_residual = 0.0;  // worst |V_i - m_i|
    double mass_total = 0.0;
    double support_radius = 0.0;
    double max_speed = 0.0;
    double w2_step = 0.0;        // sqrt(sum m_i |dy_i|^2) for the step just taken
    double w2_step_bound = 0.0;  // max speed before the step times dt
    double h_min = 0.0;
    double h_max = 0.0;
};

inline double energy(const SimState& state) { return state.tess.transport_cost; }

inline double mass_residual(const SimState& state) {
    double r = 0.0;
    for (int i = 0; i < state.cloud.size(); ++i)
        r = std::max(r, std::abs(state.tess.volume[static_cast<size_t>(i)] -
                                 state.cloud.particles[static_cast<size_t>(i)].mass));
    return r;
}

namespace dyndetail {
inline void require_converged(const SimState& state, const SolverConfig& config) {
    double max_mass = 0.0;
    for (const auto& p : state.cloud.particles) max_mass = std::max(max_mass, p.mass);
    if (mass_residual(state) > config.mass_tolerance * max_mass * (1.0 + 1e-9))
        throw Error("not-converged", "state tessellation is out of mass balance");
}
}  // namespace dyndetail

/// Per-particle dual velocity J(y - xbar), with the cell barycenter standing in
/// for the gradient of the conjugate potential at the atom. The third component
/// is identically zero.
inline std::vector<Vec3> dual_velocity(const SimState& state, const SolverConfig& config) {
    dyndetail::require_converged(state, config);
    std::vector<Vec3> w(static_cast<size_t>(state.cloud.size()));
    for (int i = 0; i < state.cloud.size(); ++i) {
        const Vec3& y = state.cloud.particles[static_cast<size_t>(i)].pos;
        const Vec3& xb = state.tess.barycenter[static_cast<size_t>(i)];
        w[static_cast<size_t>(i)] = {-(y.x2 - xb.x2), y.x1 - xb.x1, 0.0};
    }
    return w;
}

inline double max_speed(const std::vector<Vec3>& w) {
    double m = 0.0;
    for (const auto& v : w) m = std::max(m, norm(v));
    return m;
}

/// Solves the weights for a cloud and assembles a state at time t.
inline SimState make_state(DualCloud cloud, const FluidDomain& domain, const CostModel& cost,
                           const SolverConfig& config, double t, int step_index,
                           const PotentialWeights* warm_start = nullptr) {
    SolveResult sr = solve_weights(cloud, domain, cost, config, warm_start);
    SimState st;
    st.t = t;
    st.step_index = step_index;
    st.cloud = std::move(cloud);
    st.weights = std::move(sr.weights);
    st.tess = std::move(sr.tess);
    st.last_solve = sr.stats;
    return st;
}

inline SimState init_state(const DualCloud& cloud, const FluidDomain& domain,
                           const CostModel& cost, const SolverConfig& config) {
    return make_state(cloud, domain, cost, config, 0.0, 0, nullptr);
}

namespace dyndetail {

/// Velocities for arbitrary particle positions, via a warm-started solve.
inline std::vector<Vec3> velocity_at(const DualCloud& cloud, const FluidDomain& domain,
                                     const CostModel& cost, const SolverConfig& config,
                                     const PotentialWeights& warm) {
    SolveResult sr = solve_weights(cloud, domain, cost, config, &warm);
    std::vector<Vec3> w(static_cast<size_t>(cloud.size()));
    for (int i = 0; i < cloud.size(); ++i) {
        const Vec3& y = cloud.particles[static_cast<size_t>(i)].pos;
        const Vec3& xb = sr.tess.barycenter[static_cast<size_t>(i)];
        w[static_cast<size_t>(i)] = {-(y.x2 - xb.x2), y.x1 - xb.x1, 0.0};
    }
    return w;
}

}  // namespace dyndetail

/// Advances the state by one time step. The default stepper rotates each
/// particle around its frozen cell barycenter by the angle dt, which solves
/// the per-step velocity field exactly and preserves the rotation radius; the
/// fourth-order stepper re-solves the weights at every stage point. Vertical
/// coordinates and masses never change; weights are re-converged at the new
/// positions, warm-started from the current ones.
inline SimState step(const SimState& state, const FluidDomain& domain, const CostModel& cost,
                     const SolverConfig& config) {
    dyndetail::require_converged(state, config);
    const double dt = config.time_step;
    DualCloud next = state.cloud;

    if (config.stepper == Stepper::ExactRotation) {
        const double c = std::cos(dt);
        const double s = std::sin(dt);
        for (int i = 0; i < next.size(); ++i) {
            const Vec3& xb = state.tess.barycenter[static_cast<size_t>(i)];
            Vec3& y = next.particles[static_cast<size_t>(i)].pos;
            const double d1 = y.x1 - xb.x1;
            const double d2 = y.x2 - xb.x2;
            y.x1 = xb.x1 + c * d1 - s * d2;
            y.x2 = xb.x2 + s * d1 + c * d2;
        }
    } else {
        auto shifted = [&](const std::vector<Vec3>& k, double factor) {
            DualCloud c2 = state.cloud;
            for (int i = 0; i < c2.size(); ++i) {
                c2.particles[static_cast<size_t>(i)].pos.x1 += factor * k[static_cast<size_t>(i)].x1;
                c2.particles[static_cast<size_t>(i)].pos.x2 += factor * k[static_cast<size_t>(i)].x2;
            }
            return c2;
        };
        const std::vector<Vec3> k1 = dual_velocity(state, config);
        const std::vector<Vec3> k2 =
            dyndetail::velocity_at(shifted(k1, 0.5 * dt), domain, cost, config, state.weights);
        const std::vector<Vec3> k3 =
            dyndetail::velocity_at(shifted(k2, 0.5 * dt), domain, cost, config, state.weights);
        const std::vector<Vec3> k4 =
            dyndetail::velocity_at(shifted(k3, dt), domain, cost, config, state.weights);
        for (int i = 0; i < next.size(); ++i) {
            Vec3& y = next.particles[static_cast<size_t>(i)].pos;
            const size_t k = static_cast<size_t>(i);
            y.x1 += dt / 6.0 * (k1[k].x1 + 2.0 * k2[k].x1 + 2.0 * k3[k].x1 + k4[k].x1);
            y.x2 += dt / 6.0 * (k1[k].x2 + 2.0 * k2[k].x2 + 2.0 * k3[k].x2 + k4[k].x2);
        }
    }

    return make_state(std::move(next), domain, cost, config, state.t + dt, state.step_index + 1,
                      &state.weights);
}

// ---------------------------------------------------------------------------
// Flow-structure checks
// ---------------------------------------------------------------------------

/// Constants fixed at the start of a run: the linear-growth velocity constant,
/// the combined initial-support and container bound, and the admissible radius
/// used by the horizon estimate.
struct HamiltonianConstants {
    double c0 = 0.0;       // velocity growth constant, 1 + container diameter
    double s_bound = 0.0;  // initial support radius plus container corner radius
    double r0 = 0.0;       // admissible support radius over the whole run
    double tau = 0.0;
    double m2 = 0.0;       // initial second moment
};

inline HamiltonianConstants make_hamiltonian_constants(const DualCloud& initial,
                                                       const FluidDomain& domain,
                                                       const CostModel& cost, double tau) {
    HamiltonianConstants hc;
    hc.c0 = 1.0 + domain.diameter(cost);
    hc.s_bound = support_radius(initial) + domain.corner_radius(cost);
    hc.tau = tau;
    hc.r0 = hc.s_bound * (1.0 + tau);
    hc.m2 = initial.second_moment();
    return hc;
}

/// Largest admissible horizon estimate. Exceeding it only degrades the a
/// priori support guarantee, so callers warn rather than fail.
inline double horizon_bound_lhs(const HamiltonianConstants& hc, double tau) {
    const double grow = std::exp((25.0 * hc.c0 * hc.c0 + 1.0) * tau);
    return hc.c0 * tau * std::sqrt(24.0 * (1.0 + grow * (1.0 + hc.m2)));
}

struct HamiltonianReport {
    bool velocity_ok = true;
    double worst_velocity_ratio = 0.0;  // max |w_i| / (c0 (1 + |y_i|))
    bool support_ok = true;
    double support_radius = 0.0;
    double support_bound = 0.0;
    bool horizon_ok = true;  // false is a warning, not an error
    double horizon_lhs = 0.0;
    double horizon_rhs = 0.0;
};

/// Verifies the linear velocity growth bound and the linear-in-time support
/// bound at the current state, and evaluates the horizon estimate for the
/// configured run length.
inline HamiltonianReport hamiltonian_checks(const SimState& state, const SolverConfig& config,
                                            const HamiltonianConstants& hc) {
    HamiltonianReport rep;
    const std::vector<Vec3> w = dual_velocity(state, config);
    for (int i = 0; i < state.cloud.size(); ++i) {
        const double ratio = norm(w[static_cast<size_t>(i)]) /
                             (hc.c0 * (1.0 + norm(state.cloud.particles[static_cast<size_t>(i)].pos)));
        rep.worst_velocity_ratio = std::max(rep.worst_velocity_ratio, ratio);
    }
    rep.velocity_ok = rep.worst_velocity_ratio <= 1.0;
    rep.support_radius = support_radius(state.cloud);
    rep.support_bound = hc.s_bound * (1.0 + state.t);
    rep.support_ok = rep.support_radius <= rep.support_bound;
    rep.horizon_lhs = horizon_bound_lhs(hc, hc.tau);
    rep.horizon_rhs = hc.r0;
    rep.horizon_ok = std::isfinite(rep.horizon_lhs) && rep.horizon_lhs < rep.horizon_rhs;
    return rep;
}

// ---------------------------------------------------------------------------
// Trajectory driver
// ---------------------------------------------------------------------------

struct RunResult {
    std::vector<DiagnosticsRecord> records;
    SimState final_state;
    HamiltonianConstants constants;
    int velocity_violations = 0;
    int support_violations = 0;
    bool horizon_warning = false;
};

/// Integrates from t = 0 until the configured horizon, emitting one
/// diagnostics record per step (including the initial state). Weight solves
/// are warm-started across steps. The optional sink sees every record; the
/// optional snapshot hook sees the state alongside its record.
inline RunResult run(const DualCloud& initial, const FluidDomain& domain, const CostModel& cost,
                     const SolverConfig& config,
                     const std::function<void(const DiagnosticsRecord&)>& sink = {},
                     const std::function<void(const SimState&, const DiagnosticsRecord&)>&
                         snapshot = {}) {
    RunResult result;
    result.constants = make_hamiltonian_constants(initial, domain, cost, config.horizon);

    SimState state = init_state(initial, domain, cost, config);
    const double e0 = energy(state);

    auto record_of = [&](const SimState& st, double w2_step, double w2_bound) {
        DiagnosticsRecord rec;
        rec.step = st.step_index;
        rec.time = st.t;
        rec.energy = energy(st);
        rec.energy_drift = std::abs(rec.energy - e0) / std::max(std::abs(e0), 1e-300);
        rec.mass_residual = mass_residual(st);
        rec.mass_total = st.cloud.total_mass();
        rec.support_radius = support_radius(st.cloud);
        rec.max_speed = max_speed(dual_velocity(st, config));
        rec.w2_step = w2_step;
        rec.w2_step_bound = w2_bound;
        double h_min = std::numeric_limits<double>::infinity();
        double h_max = -std::numeric_limits<double>::infinity();
        for (double h : st.tess.height.values) {
            h_min = std::min(h_min, h);
            h_max = std::max(h_max, h);
        }
        rec.h_min = h_min;
        rec.h_max = h_max;
        return rec;
    };

    auto audit = [&](const SimState& st) {
        const HamiltonianReport hr = hamiltonian_checks(st, config, result.constants);
        if (!hr.velocity_ok) ++result.velocity_violations;
        if (!hr.support_ok) ++result.support_violations;
        if (!hr.horizon_ok) result.horizon_warning = true;
    };

    DiagnosticsRecord rec = record_of(state, 0.0, 0.0);
    result.records.push_back(rec);
    audit(state);
    if (sink) sink(rec);
    if (snapshot) snapshot(state, rec);

    const int steps =
        config.horizon <= 0.0
            ? 0
            : static_cast<int>(std::ceil(config.horizon / config.time_step - 1e-9));
    for (int k = 0; k < steps; ++k) {
        const double speed_before = max_speed(dual_velocity(state, config));
        const DualCloud before = state.cloud;
        state = step(state, domain, cost, config);
        double w2sq = 0.0;
        for (int i = 0; i < state.cloud.size(); ++i) {
            const Vec3& a = before.particles[static_cast<size_t>(i)].pos;
            const Vec3& b = state.cloud.particles[static_cast<size_t>(i)].pos;
            const double d1 = b.x1 - a.x1;
            const double d2 = b.x2 - a.x2;
            const double d3 = b.x3 - a.x3;
            w2sq += state.cloud.particles[static_cast<size_t>(i)].mass *
                    (d1 * d1 + d2 * d2 + d3 * d3);
        }
        rec = record_of(state, std::sqrt(w2sq), speed_before * config.time_step);
        result.records.push_back(rec);
        audit(state);
        if (sink) sink(rec);
        if (snapshot) snapshot(state, rec);
    }

    result.final_state = std::move(state);
    return result;
}

}  // namespace sgdual
