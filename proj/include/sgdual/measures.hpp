#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sgdual/core.hpp"

namespace sgdual {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Particle {
    Vec3 pos;           // dual-space position (y1, y2, y3)
    double mass = 0.0;  // nonnegative, cloud total is 1
};

/// Weighted atomic measure in dual (geostrophic) coordinates. The third
/// coordinate carries minus the density, so valid incompressible clouds keep
/// y3 inside [-1/delta, -delta].
struct DualCloud {
    std::vector<Particle> particles;
    double density_band = 0.1;  // delta in (0, 1)

    int size() const { return static_cast<int>(particles.size()); }

    double total_mass() const {
        double s = 0.0;
        for (const auto& p : particles) s += p.mass;
        return s;
    }

    /// Second moment sum m_i |y_i|^2.
    double second_moment() const {
        double s = 0.0;
        for (const auto& p : particles) {
            s += p.mass * (p.pos.x1 * p.pos.x1 + p.pos.x2 * p.pos.x2 + p.pos.x3 * p.pos.x3);
        }
        return s;
    }
};

enum class BoundaryMode { FreeSurface, RigidLid };

enum class CostKind { Incompressible, Compressible };

/// Transport cost configuration. Both cost kinds are bilinear in the pair
/// (horizontal position, lifted vertical coordinate), so all geometry runs on
/// lifted coordinates (x1, x2, zeta(v)) with zeta(v) = v for the incompressible
/// cost and zeta(v) = v^kappa for the pressure-coordinate cost.
struct CostModel {
    CostKind kind = CostKind::Incompressible;
    double kappa = 1.0;             // vertical exponent, pressure coordinates only
    double surface_pressure = 0.0;  // p_h, bottom of the vertical range in pressure coordinates
    double c_p = 1.0;               // bookkeeping constants for recovering the
    double p_ref = 1.0;             // potential temperature from y3
    double f_cor = 1.0;             // fixed rotation rate

    /// The vertical map is linear (and hence the incompressible code path is
    /// reproduced exactly) when kappa == 1.
    bool linear_vertical() const { return kind == CostKind::Incompressible || kappa == 1.0; }

    double vertical_origin() const {
        return kind == CostKind::Compressible ? surface_pressure : 0.0;
    }

    double zeta(double v) const {
        if (linear_vertical()) return v;
        if (v < 0.0) throw Error("negative-vertical", "negative vertical coordinate in compressible mode");
        return std::pow(v, kappa);
    }

    double zeta_inverse(double z) const {
        if (linear_vertical()) return z;
        if (z < 0.0) throw Error("negative-vertical", "negative lifted coordinate in compressible mode");
        return std::pow(z, 1.0 / kappa);
    }

    /// Integral of zeta over [a, b], closed form.
    double zeta_integral(double a, double b) const {
        if (linear_vertical()) return 0.5 * (b * b - a * a);
        const double e = kappa + 1.0;
        return (std::pow(b, e) - std::pow(a, e)) / e;
    }

    void validate() const {
        if (kind == CostKind::Compressible && kappa < 1.0)
            throw Error("invalid-cost", "kappa must be >= 1 in pressure coordinates");
        if (surface_pressure < 0.0)
            throw Error("invalid-cost", "surface_pressure must be nonnegative");
        if (c_p <= 0.0 || p_ref <= 0.0)
            throw Error("invalid-cost", "c_p and p_ref must be positive");
    }
};

/// Physical container: rectangular footprint [0,L1]x[0,L2], a vertical range
/// starting at the cost model's origin, and the column grid used for
/// tessellation quadrature.
struct FluidDomain {
    double lx = 1.0;
    double ly = 1.0;
    double cap = 2.0;        // absolute top of the vertical range (free-surface mode)
    int nx = 64;
    int ny = 64;
    BoundaryMode mode = BoundaryMode::FreeSurface;
    double lid_height = 1.0;  // fluid thickness in rigid-lid mode

    double footprint_area() const { return lx * ly; }
    double column_area() const { return footprint_area() / (static_cast<double>(nx) * ny); }
    int column_count() const { return nx * ny; }
    double dx() const { return lx / nx; }
    double dy() const { return ly / ny; }

    Vec2 column_center(int i, int j) const {
        return {(i + 0.5) * dx(), (j + 0.5) * dy()};
    }

    double vertical_top(const CostModel& cost) const {
        return mode == BoundaryMode::RigidLid ? cost.vertical_origin() + lid_height : cap;
    }

    /// Euclidean diameter of the ambient box.
    double diameter(const CostModel& cost) const {
        const double depth = vertical_top(cost) - cost.vertical_origin();
        return std::sqrt(lx * lx + ly * ly + depth * depth);
    }

    /// Largest |x| over the ambient box (corner farthest from the origin).
    double corner_radius(const CostModel& cost) const {
        const double top = vertical_top(cost);
        return std::sqrt(lx * lx + ly * ly + top * top);
    }

    void validate(const CostModel& cost) const {
        if (lx <= 0.0 || ly <= 0.0) throw Error("invalid-domain", "footprint sides must be positive");
        if (nx < 1 || ny < 1) throw Error("invalid-domain", "grid counts must be >= 1");
        if (mode == BoundaryMode::FreeSurface) {
            const double capacity = footprint_area() * (cap - cost.vertical_origin());
            if (!(capacity > 1.0))
                throw Error("invalid-domain",
                            "free-surface container must hold more than unit volume (cap too low)");
        } else {
            if (std::abs(footprint_area() * lid_height - 1.0) > 1e-9)
                throw Error("invalid-domain", "rigid-lid volume must be normalized to 1");
        }
    }
};

enum class Stepper { ExactRotation, Rk4 };

struct SolverConfig {
    double mass_tolerance = 1e-6;    // relative to the largest particle mass
    int max_ascent_iterations = 5000;
    double ascent_step = 1.0;        // initial trial step for the weight ascent
    double time_step = 0.01;
    double horizon = 1.0;
    Stepper stepper = Stepper::ExactRotation;
    int output_cadence = 10;         // snapshot every k steps
    int threads = 1;

    void validate() const {
        if (mass_tolerance <= 0.0) throw Error("invalid-config", "mass_tolerance must be positive");
        if (max_ascent_iterations < 1) throw Error("invalid-config", "max_ascent_iterations must be >= 1");
        if (ascent_step <= 0.0) throw Error("invalid-config", "ascent_step must be positive");
        if (time_step <= 0.0) throw Error("invalid-config", "time_step must be positive");
        if (horizon < 0.0) throw Error("invalid-config", "horizon must be nonnegative");
        if (horizon > 0.0 && time_step > horizon + 1e-15)
            throw Error("invalid-config", "time_step must not exceed the horizon");
        if (output_cadence < 1) throw Error("invalid-config", "output_cadence must be >= 1");
        if (threads < 1) throw Error("invalid-config", "threads must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;

    bool pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }

    std::string summary() const {
        std::string s;
        for (const auto& c : checks) {
            if (!c.pass) {
                if (!s.empty()) s += "; ";
                s += c.name + ": " + c.detail;
            }
        }
        return s.empty() ? "ok" : s;
    }
};

/// Per-invariant pass/fail report for a cloud under a given cost model.
/// Reports rather than throws so callers can surface every violation at once.
inline ValidationReport validate_cloud(const DualCloud& cloud, const CostModel& cost) {
    ValidationReport rep;
    const double delta = cloud.density_band;

    {
        ValidationCheck c{"density-band-parameter", delta > 0.0 && delta < 1.0, ""};
        if (!c.pass) c.detail = "delta = " + fmt17(delta) + " outside (0,1)";
        rep.checks.push_back(c);
    }
    {
        ValidationCheck c{"nonempty", cloud.size() > 0, cloud.size() > 0 ? "" : "no particles"};
        rep.checks.push_back(c);
    }
    {
        bool ok = true;
        std::string detail;
        for (int i = 0; i < cloud.size(); ++i) {
            if (!finite(cloud.particles[i].pos) || !std::isfinite(cloud.particles[i].mass)) {
                ok = false;
                detail = "particle " + std::to_string(i) + " not finite";
                break;
            }
        }
        rep.checks.push_back({"finite", ok, detail});
    }
    {
        bool ok = true;
        std::string detail;
        for (int i = 0; i < cloud.size(); ++i) {
            if (!(cloud.particles[i].mass > 0.0)) {
                ok = false;
                detail = "particle " + std::to_string(i) + " has mass " + fmt17(cloud.particles[i].mass);
                break;
            }
        }
        rep.checks.push_back({"positive-mass", ok, detail});
    }
    {
        const double total = cloud.total_mass();
        const bool ok = std::abs(total - 1.0) <= 1e-12;
        rep.checks.push_back({"unit-mass", ok, ok ? "" : "mass sum " + fmt17(total)});
    }
    if (cost.kind == CostKind::Incompressible) {
        bool ok = true;
        std::string detail;
        const double lo = -1.0 / delta;
        const double hi = -delta;
        for (int i = 0; i < cloud.size(); ++i) {
            const double y3 = cloud.particles[i].pos.x3;
            if (!(y3 >= lo && y3 <= hi)) {
                ok = false;
                detail = "particle " + std::to_string(i) + " has y3 = " + fmt17(y3) +
                         " outside [" + fmt17(lo) + ", " + fmt17(hi) + "]";
                break;
            }
        }
        rep.checks.push_back({"density-band", ok, detail});
    } else {
        // Pressure coordinates: y3 carries minus the (positive) potential
        // temperature, so it must be strictly negative.
        bool ok = true;
        std::string detail;
        for (int i = 0; i < cloud.size(); ++i) {
            if (!(cloud.particles[i].pos.x3 < 0.0)) {
                ok = false;
                detail = "particle " + std::to_string(i) + " has y3 = " +
                         fmt17(cloud.particles[i].pos.x3) + " >= 0";
                break;
            }
        }
        rep.checks.push_back({"negative-y3", ok, detail});
    }
    return rep;
}

/// Largest Euclidean norm over the ensemble.
inline double support_radius(const DualCloud& cloud) {
    if (cloud.particles.empty()) throw Error("empty-cloud", "support radius of an empty ensemble");
    double r = 0.0;
    for (const auto& p : cloud.particles) r = std::max(r, norm(p.pos));
    return r;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace detail {
inline std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace detail

/// Reads a cloud from CSV with mandatory header "y1,y2,y3,mass". Total mass is
/// rescaled to 1 on ingestion; zero or negative masses are rejected.
inline DualCloud load_cloud_csv(const std::string& path, double density_band = 0.1) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open cloud file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("io", "empty cloud file: " + path);
    {
        std::string header = detail::strip(line);
        header.erase(std::remove(header.begin(), header.end(), ' '), header.end());
        if (header != "y1,y2,y3,mass")
            throw Error("io", path + ": expected header 'y1,y2,y3,mass', got '" + line + "'");
    }
    DualCloud cloud;
    cloud.density_band = density_band;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string s = detail::strip(line);
        if (s.empty()) continue;
        std::istringstream row(s);
        std::string field;
        double vals[4];
        for (int k = 0; k < 4; ++k) {
            if (!std::getline(row, field, ','))
                throw Error("io", path + ":" + std::to_string(line_no) + ": expected 4 fields");
            try {
                size_t used = 0;
                vals[k] = std::stod(detail::strip(field), &used);
            } catch (const std::exception&) {
                throw Error("io", path + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
            }
        }
        if (std::getline(row, field, ','))
            throw Error("io", path + ":" + std::to_string(line_no) + ": expected 4 fields");
        if (!(vals[3] > 0.0))
            throw Error("io", path + ":" + std::to_string(line_no) + ": mass must be positive");
        cloud.particles.push_back({{vals[0], vals[1], vals[2]}, vals[3]});
    }
    if (cloud.particles.empty()) throw Error("io", path + ": no particles");
    const double total = cloud.total_mass();
    for (auto& p : cloud.particles) p.mass /= total;
    return cloud;
}

// ---------------------------------------------------------------------------
// Analytic generators
// ---------------------------------------------------------------------------

struct GeneratorParams {
    int count = 16;
    double spread = 0.25;        // horizontal extent as a fraction of min(L1, L2)
    double y3_min = -1.25;
    double y3_max = -0.75;
    double blob_separation = 0.5;  // two-blob: center distance as a fraction of min(L1, L2)
    double shear = 0.5;            // sheared band: d y1 / d y2
    double density_band = 0.1;
    uint64_t seed = 0;
};

namespace detail {
inline void finish_masses(DualCloud& cloud) {
    const double m = 1.0 / cloud.size();
    for (auto& p : cloud.particles) p.mass = m;
}
}  // namespace detail

inline DualCloud generate_uniform_block(const FluidDomain& dom, const GeneratorParams& gp) {
    if (gp.count < 1) throw Error("invalid-config", "particle_count must be >= 1");
    DetRng rng(gp.seed);
    DualCloud cloud;
    cloud.density_band = gp.density_band;
    const double half = 0.5 * gp.spread * std::min(dom.lx, dom.ly);
    const Vec2 c{0.5 * dom.lx, 0.5 * dom.ly};
    for (int i = 0; i < gp.count; ++i) {
        Vec3 y;
        y.x1 = rng.uniform(c.x1 - half, c.x1 + half);
        y.x2 = rng.uniform(c.x2 - half, c.x2 + half);
        y.x3 = rng.uniform(gp.y3_min, gp.y3_max);
        cloud.particles.push_back({y, 0.0});
    }
    detail::finish_masses(cloud);
    return cloud;
}

inline DualCloud generate_two_blob(const FluidDomain& dom, const GeneratorParams& gp) {
    if (gp.count < 2) throw Error("invalid-config", "two-blob needs at least 2 particles");
    DetRng rng(gp.seed);
    DualCloud cloud;
    cloud.density_band = gp.density_band;
    const double scale = std::min(dom.lx, dom.ly);
    const double sep = 0.5 * gp.blob_separation * scale;
    const double radius = 0.5 * gp.spread * scale;
    const Vec2 c{0.5 * dom.lx, 0.5 * dom.ly};
    for (int i = 0; i < gp.count; ++i) {
        const double cx = (i % 2 == 0) ? c.x1 - sep : c.x1 + sep;
        // rejection-free disk sample
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const double rad = radius * std::sqrt(rng.uniform());
        Vec3 y;
        y.x1 = cx + rad * std::cos(ang);
        y.x2 = c.x2 + rad * std::sin(ang);
        y.x3 = rng.uniform(gp.y3_min, gp.y3_max);
        cloud.particles.push_back({y, 0.0});
    }
    detail::finish_masses(cloud);
    return cloud;
}

inline DualCloud generate_sheared_band(const FluidDomain& dom, const GeneratorParams& gp) {
    if (gp.count < 1) throw Error("invalid-config", "particle_count must be >= 1");
    DetRng rng(gp.seed);
    DualCloud cloud;
    cloud.density_band = gp.density_band;
    const double scale = std::min(dom.lx, dom.ly);
    const double half = 0.5 * gp.spread * scale;
    const Vec2 c{0.5 * dom.lx, 0.5 * dom.ly};
    for (int i = 0; i < gp.count; ++i) {
        const double t = rng.uniform(-half, half);
        Vec3 y;
        y.x2 = c.x2 + t;
        y.x1 = c.x1 + gp.shear * t + rng.uniform(-0.2 * half, 0.2 * half);
        y.x3 = rng.uniform(gp.y3_min, gp.y3_max);
        cloud.particles.push_back({y, 0.0});
    }
    detail::finish_masses(cloud);
    return cloud;
}

}  // namespace sgdual
