#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "sgdual/core.hpp"
#include "sgdual/measures.hpp"

namespace sgdual {

/// Fully resolved run description: domain, cost, cloud source, solver knobs,
/// and output location. Built only through parse_config so every field is
/// validated and every default is recorded.
struct RunConfig {
    FluidDomain domain;
    CostModel cost;
    SolverConfig solver;
    std::string cloud_source;  // csv | uniform-block | two-blob | sheared-band
    std::string cloud_path;
    GeneratorParams gen;
    uint64_t seed = 0;
    std::string output_dir = "out";
};

namespace cfgdetail {

using json = nlohmann::json;

[[noreturn]] inline void bad_key(const std::string& key, const std::string& why) {
    throw Error("invalid-config", "config key '" + key + "': " + why);
}

inline double num(const json& j, const std::string& key) {
    if (!j.at(key).is_number()) bad_key(key, "expected a number");
    return j.at(key).get<double>();
}

inline long long integer(const json& j, const std::string& key) {
    if (!j.at(key).is_number_integer()) bad_key(key, "expected an integer");
    return j.at(key).get<long long>();
}

inline std::string str(const json& j, const std::string& key) {
    if (!j.at(key).is_string()) bad_key(key, "expected a string");
    return j.at(key).get<std::string>();
}

}  // namespace cfgdetail

/// Strict parser for the flat key-value run schema. Unknown keys are rejected
/// by name; keys that do not apply to the selected mode, cost, or cloud source
/// are rejected as well, so silent typos cannot survive.
inline RunConfig parse_config(const std::string& text) {
    using cfgdetail::bad_key;
    using cfgdetail::integer;
    using cfgdetail::num;
    using cfgdetail::str;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw Error("invalid-config", std::string("malformed config document: ") + e.what());
    }
    if (!j.is_object()) throw Error("invalid-config", "config must be a JSON object");

    static const std::set<std::string> known = {
        "schema",          "mode",
        "cost",            "kappa",
        "surface_pressure", "c_p",
        "p_ref",           "footprint_lx",
        "footprint_ly",    "cap_height",
        "lid_height",      "grid_nx",
        "grid_ny",         "cloud_source",
        "cloud_path",      "particle_count",
        "density_band",    "generator_spread",
        "generator_y3_min", "generator_y3_max",
        "blob_separation", "shear",
        "mass_tolerance",  "max_ascent_iterations",
        "ascent_step",     "time_step",
        "horizon",         "stepper",
        "output_cadence",  "seed",
        "threads",         "output_dir"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw Error("invalid-config", "unknown config key '" + it.key() + "'");
    }
    auto has = [&](const char* k) { return j.contains(k); };
    auto require = [&](const char* k) {
        if (!has(k)) throw Error("invalid-config", std::string("missing required key '") + k + "'");
    };

    RunConfig rc;
    if (has("schema") && str(j, "schema") != "sg-config-v1")
        bad_key("schema", "expected 'sg-config-v1'");

    require("mode");
    const std::string mode = str(j, "mode");
    if (mode == "free-surface")
        rc.domain.mode = BoundaryMode::FreeSurface;
    else if (mode == "rigid-lid")
        rc.domain.mode = BoundaryMode::RigidLid;
    else
        bad_key("mode", "expected 'free-surface' or 'rigid-lid'");

    const std::string cost_kind = has("cost") ? str(j, "cost") : "incompressible";
    if (cost_kind == "incompressible")
        rc.cost.kind = CostKind::Incompressible;
    else if (cost_kind == "compressible")
        rc.cost.kind = CostKind::Compressible;
    else
        bad_key("cost", "expected 'incompressible' or 'compressible'");

    const bool compressible = rc.cost.kind == CostKind::Compressible;
    if (has("kappa")) {
        if (!compressible) bad_key("kappa", "only applies to the compressible cost");
        rc.cost.kappa = num(j, "kappa");
        if (rc.cost.kappa < 1.0) bad_key("kappa", "must be >= 1");
    } else if (compressible) {
        rc.cost.kappa = 2.0;
    }
    if (has("surface_pressure")) {
        if (!compressible) bad_key("surface_pressure", "only applies to the compressible cost");
        rc.cost.surface_pressure = num(j, "surface_pressure");
        if (rc.cost.surface_pressure < 0.0) bad_key("surface_pressure", "must be nonnegative");
    }
    if (has("c_p")) {
        if (!compressible) bad_key("c_p", "only applies to the compressible cost");
        rc.cost.c_p = num(j, "c_p");
        if (rc.cost.c_p <= 0.0) bad_key("c_p", "must be positive");
    }
    if (has("p_ref")) {
        if (!compressible) bad_key("p_ref", "only applies to the compressible cost");
        rc.cost.p_ref = num(j, "p_ref");
        if (rc.cost.p_ref <= 0.0) bad_key("p_ref", "must be positive");
    }

    rc.domain.lx = has("footprint_lx") ? num(j, "footprint_lx") : 1.0;
    rc.domain.ly = has("footprint_ly") ? num(j, "footprint_ly") : 1.0;
    if (rc.domain.lx <= 0.0) bad_key("footprint_lx", "must be positive");
    if (rc.domain.ly <= 0.0) bad_key("footprint_ly", "must be positive");
    rc.domain.nx = static_cast<int>(has("grid_nx") ? integer(j, "grid_nx") : 64);
    rc.domain.ny = static_cast<int>(has("grid_ny") ? integer(j, "grid_ny") : 64);
    if (rc.domain.nx < 1) bad_key("grid_nx", "must be >= 1");
    if (rc.domain.ny < 1) bad_key("grid_ny", "must be >= 1");

    if (rc.domain.mode == BoundaryMode::FreeSurface) {
        if (has("lid_height")) bad_key("lid_height", "only applies to rigid-lid mode");
        rc.domain.cap = has("cap_height") ? num(j, "cap_height") : 2.0;
        const double capacity =
            rc.domain.footprint_area() * (rc.domain.cap - rc.cost.vertical_origin());
        if (!(capacity > 1.0)) bad_key("cap_height", "cap too low: container must exceed unit volume");
    } else {
        if (has("cap_height")) bad_key("cap_height", "only applies to free-surface mode");
        rc.domain.lid_height =
            has("lid_height") ? num(j, "lid_height") : 1.0 / rc.domain.footprint_area();
        if (std::abs(rc.domain.footprint_area() * rc.domain.lid_height - 1.0) > 1e-9)
            bad_key("lid_height", "rigid-lid volume must be normalized to 1");
        rc.domain.cap = rc.cost.vertical_origin() + rc.domain.lid_height;
    }

    require("cloud_source");
    rc.cloud_source = str(j, "cloud_source");
    const bool is_csv = rc.cloud_source == "csv";
    const bool is_two_blob = rc.cloud_source == "two-blob";
    const bool is_band = rc.cloud_source == "sheared-band";
    if (!is_csv && rc.cloud_source != "uniform-block" && !is_two_blob && !is_band)
        bad_key("cloud_source", "expected csv, uniform-block, two-blob, or sheared-band");
    if (is_csv) {
        require("cloud_path");
        rc.cloud_path = str(j, "cloud_path");
        if (!std::filesystem::exists(rc.cloud_path))
            bad_key("cloud_path", "file does not exist: " + rc.cloud_path);
        if (has("particle_count")) bad_key("particle_count", "only applies to generators");
        if (has("generator_spread")) bad_key("generator_spread", "only applies to generators");
        if (has("generator_y3_min")) bad_key("generator_y3_min", "only applies to generators");
        if (has("generator_y3_max")) bad_key("generator_y3_max", "only applies to generators");
    } else {
        if (has("cloud_path")) bad_key("cloud_path", "only applies to cloud_source=csv");
        rc.gen.count = static_cast<int>(has("particle_count") ? integer(j, "particle_count") : 16);
        if (rc.gen.count < 1) bad_key("particle_count", "must be >= 1");
        if (has("generator_spread")) {
            rc.gen.spread = num(j, "generator_spread");
            if (!(rc.gen.spread > 0.0)) bad_key("generator_spread", "must be positive");
        }
        if (has("generator_y3_min")) rc.gen.y3_min = num(j, "generator_y3_min");
        if (has("generator_y3_max")) rc.gen.y3_max = num(j, "generator_y3_max");
        if (!(rc.gen.y3_min <= rc.gen.y3_max))
            bad_key("generator_y3_min", "must not exceed generator_y3_max");
        if (!(rc.gen.y3_max < 0.0)) bad_key("generator_y3_max", "must be negative");
    }
    if (has("blob_separation")) {
        if (!is_two_blob) bad_key("blob_separation", "only applies to cloud_source=two-blob");
        rc.gen.blob_separation = num(j, "blob_separation");
        if (!(rc.gen.blob_separation > 0.0)) bad_key("blob_separation", "must be positive");
    }
    if (has("shear")) {
        if (!is_band) bad_key("shear", "only applies to cloud_source=sheared-band");
        rc.gen.shear = num(j, "shear");
    }
    if (has("density_band")) {
        rc.gen.density_band = num(j, "density_band");
        if (!(rc.gen.density_band > 0.0 && rc.gen.density_band < 1.0))
            bad_key("density_band", "must lie in (0, 1)");
    }

    if (has("mass_tolerance")) {
        rc.solver.mass_tolerance = num(j, "mass_tolerance");
        if (!(rc.solver.mass_tolerance > 0.0)) bad_key("mass_tolerance", "must be positive");
    }
    if (has("max_ascent_iterations")) {
        rc.solver.max_ascent_iterations = static_cast<int>(integer(j, "max_ascent_iterations"));
        if (rc.solver.max_ascent_iterations < 1) bad_key("max_ascent_iterations", "must be >= 1");
    }
    if (has("ascent_step")) {
        rc.solver.ascent_step = num(j, "ascent_step");
        if (!(rc.solver.ascent_step > 0.0)) bad_key("ascent_step", "must be positive");
    }
    require("time_step");
    rc.solver.time_step = num(j, "time_step");
    if (!(rc.solver.time_step > 0.0)) bad_key("time_step", "must be positive");
    require("horizon");
    rc.solver.horizon = num(j, "horizon");
    if (rc.solver.horizon < 0.0) bad_key("horizon", "must be nonnegative");
    if (rc.solver.horizon > 0.0 && rc.solver.time_step > rc.solver.horizon + 1e-15)
        bad_key("time_step", "must not exceed the horizon");
    if (has("stepper")) {
        const std::string s = str(j, "stepper");
        if (s == "exact-rotation")
            rc.solver.stepper = Stepper::ExactRotation;
        else if (s == "rk4")
            rc.solver.stepper = Stepper::Rk4;
        else
            bad_key("stepper", "expected 'exact-rotation' or 'rk4'");
    }
    if (has("output_cadence")) {
        rc.solver.output_cadence = static_cast<int>(integer(j, "output_cadence"));
        if (rc.solver.output_cadence < 1) bad_key("output_cadence", "must be >= 1");
    }
    if (has("seed")) {
        const long long s = integer(j, "seed");
        if (s < 0) bad_key("seed", "must be nonnegative");
        rc.seed = static_cast<uint64_t>(s);
    }
    rc.gen.seed = rc.seed;
    if (has("threads")) {
        rc.solver.threads = static_cast<int>(integer(j, "threads"));
        if (rc.solver.threads < 1) bad_key("threads", "must be >= 1");
    }
    if (has("output_dir")) rc.output_dir = str(j, "output_dir");

    return rc;
}

/// Every effective field, defaults included, in canonical key order. Feeding
/// the dump back through parse_config reproduces the same configuration.
inline nlohmann::ordered_json effective_config(const RunConfig& rc) {
    nlohmann::ordered_json j;
    j["schema"] = "sg-config-v1";
    j["mode"] = rc.domain.mode == BoundaryMode::FreeSurface ? "free-surface" : "rigid-lid";
    j["cost"] = rc.cost.kind == CostKind::Compressible ? "compressible" : "incompressible";
    if (rc.cost.kind == CostKind::Compressible) {
        j["kappa"] = rc.cost.kappa;
        j["surface_pressure"] = rc.cost.surface_pressure;
        j["c_p"] = rc.cost.c_p;
        j["p_ref"] = rc.cost.p_ref;
    }
    j["footprint_lx"] = rc.domain.lx;
    j["footprint_ly"] = rc.domain.ly;
    if (rc.domain.mode == BoundaryMode::FreeSurface)
        j["cap_height"] = rc.domain.cap;
    else
        j["lid_height"] = rc.domain.lid_height;
    j["grid_nx"] = rc.domain.nx;
    j["grid_ny"] = rc.domain.ny;
    j["cloud_source"] = rc.cloud_source;
    if (rc.cloud_source == "csv") {
        j["cloud_path"] = rc.cloud_path;
    } else {
        j["particle_count"] = rc.gen.count;
        j["generator_spread"] = rc.gen.spread;
        j["generator_y3_min"] = rc.gen.y3_min;
        j["generator_y3_max"] = rc.gen.y3_max;
        if (rc.cloud_source == "two-blob") j["blob_separation"] = rc.gen.blob_separation;
        if (rc.cloud_source == "sheared-band") j["shear"] = rc.gen.shear;
    }
    j["density_band"] = rc.gen.density_band;
    j["mass_tolerance"] = rc.solver.mass_tolerance;
    j["max_ascent_iterations"] = rc.solver.max_ascent_iterations;
    j["ascent_step"] = rc.solver.ascent_step;
    j["time_step"] = rc.solver.time_step;
    j["horizon"] = rc.solver.horizon;
    j["stepper"] = rc.solver.stepper == Stepper::Rk4 ? "rk4" : "exact-rotation";
    j["output_cadence"] = rc.solver.output_cadence;
    j["seed"] = rc.seed;
    j["threads"] = rc.solver.threads;
    j["output_dir"] = rc.output_dir;
    return j;
}

inline DualCloud make_cloud(const RunConfig& rc) {
    if (rc.cloud_source == "csv") return load_cloud_csv(rc.cloud_path, rc.gen.density_band);
    if (rc.cloud_source == "uniform-block") return generate_uniform_block(rc.domain, rc.gen);
    if (rc.cloud_source == "two-blob") return generate_two_blob(rc.domain, rc.gen);
    return generate_sheared_band(rc.domain, rc.gen);
}

}  // namespace sgdual
