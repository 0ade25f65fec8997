#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "sgdual/measures.hpp"

using namespace sgdual;
using Catch::Approx;

namespace {
std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}
}  // namespace

TEST_CASE("cloud validation accepts a unit atom inside the band") {
    const CostModel cost;
    const DualCloud c = testutil::single_atom({0.0, 0.0, -1.0}, 0.5);
    REQUIRE(validate_cloud(c, cost).pass());
}

TEST_CASE("cloud validation rejects a bad mass sum") {
    const CostModel cost;
    DualCloud c;
    c.particles.push_back({{0.0, 0.0, -1.0}, 0.6});
    c.particles.push_back({{1.0, 0.0, -1.0}, 0.6});
    c.density_band = 0.5;
    const ValidationReport rep = validate_cloud(c, cost);
    REQUIRE_FALSE(rep.pass());
    bool unit_mass_failed = false;
    for (const auto& chk : rep.checks)
        if (chk.name == "unit-mass" && !chk.pass) unit_mass_failed = true;
    REQUIRE(unit_mass_failed);
}

TEST_CASE("cloud validation rejects a vertical coordinate outside the band") {
    const CostModel cost;
    const DualCloud c = testutil::single_atom({0.0, 0.0, -0.1}, 0.5);
    const ValidationReport rep = validate_cloud(c, cost);
    REQUIRE_FALSE(rep.pass());
    bool band_failed = false;
    for (const auto& chk : rep.checks)
        if (chk.name == "density-band" && !chk.pass) band_failed = true;
    REQUIRE(band_failed);
}

TEST_CASE("cloud validation flags non-finite positions and nonpositive masses") {
    const CostModel cost;
    DualCloud c;
    c.particles.push_back({{0.0, 0.0, -1.0}, 1.0});
    c.particles[0].pos.x1 = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(validate_cloud(c, cost).pass());

    DualCloud c2 = testutil::single_atom({0.0, 0.0, -1.0});
    c2.particles[0].mass = 0.0;
    REQUIRE_FALSE(validate_cloud(c2, cost).pass());
}

TEST_CASE("compressible validation requires negative y3") {
    CostModel cost;
    cost.kind = CostKind::Compressible;
    cost.kappa = 2.0;
    DualCloud c = testutil::single_atom({0.0, 0.0, 0.5});
    REQUIRE_FALSE(validate_cloud(c, cost).pass());
    c.particles[0].pos.x3 = -0.5;
    REQUIRE(validate_cloud(c, cost).pass());
}

TEST_CASE("support radius matches the norm arithmetic") {
    REQUIRE(support_radius(testutil::single_atom({0.0, 0.0, -1.0})) == Approx(1.0));
    DualCloud c;
    c.particles.push_back({{3.0, 4.0, -1.0}, 0.5});
    c.particles.push_back({{0.0, 0.0, -1.0}, 0.5});
    REQUIRE(support_radius(c) == Approx(std::sqrt(26.0)));
}

TEST_CASE("support radius of an empty ensemble is an error") {
    DualCloud empty;
    REQUIRE_THROWS_AS(support_radius(empty), Error);
}

TEST_CASE("support radius is invariant under particle permutation") {
    DetRng rng(11);
    DualCloud c = testutil::random_cloud(7, rng);
    const double base = support_radius(c);
    for (int trial = 0; trial < 10; ++trial) {
        const int i = rng.uniform_int(7);
        const int j = rng.uniform_int(7);
        std::swap(c.particles[static_cast<size_t>(i)], c.particles[static_cast<size_t>(j)]);
        REQUIRE(support_radius(c) == base);
    }
}

TEST_CASE("vertical map is the identity for the linear cases") {
    CostModel inc;
    REQUIRE(inc.zeta(0.37) == 0.37);
    CostModel unit_power;
    unit_power.kind = CostKind::Compressible;
    unit_power.kappa = 1.0;
    // identical bits, so the pressure-coordinate pipeline with exponent 1
    // reproduces the plain path exactly
    REQUIRE(unit_power.zeta(0.37) == 0.37);
    REQUIRE(unit_power.zeta_integral(0.2, 0.9) == inc.zeta_integral(0.2, 0.9));
}

TEST_CASE("compressible vertical map rejects negative coordinates") {
    CostModel cost;
    cost.kind = CostKind::Compressible;
    cost.kappa = 2.0;
    REQUIRE(cost.zeta(2.0) == Approx(4.0));
    REQUIRE_THROWS_AS(cost.zeta(-0.1), Error);
}

TEST_CASE("free-surface container must exceed unit volume") {
    const CostModel cost;
    FluidDomain d = testutil::free_surface_domain(8, /*cap=*/0.9);
    REQUIRE_THROWS_AS(d.validate(cost), Error);
    d.cap = 1.5;
    REQUIRE_NOTHROW(d.validate(cost));
}

TEST_CASE("rigid-lid volume must be normalized") {
    const CostModel cost;
    FluidDomain d = testutil::rigid_domain(8);
    REQUIRE_NOTHROW(d.validate(cost));
    d.lid_height = 1.1;
    REQUIRE_THROWS_AS(d.validate(cost), Error);
}

TEST_CASE("csv ingestion rescales mass and enforces the header") {
    const std::string path = write_temp("sg_cloud_ok.csv",
                                        "y1,y2,y3,mass\n"
                                        "0.2,0.3,-1.0,2.0\n"
                                        "0.8,0.7,-1.5,6.0\n");
    const DualCloud c = load_cloud_csv(path, 0.4);
    REQUIRE(c.size() == 2);
    REQUIRE(c.total_mass() == Approx(1.0).margin(1e-15));
    REQUIRE(c.particles[0].mass == Approx(0.25));
    REQUIRE(c.particles[1].pos.x3 == Approx(-1.5));

    const std::string bad_header = write_temp("sg_cloud_bad_header.csv", "a,b,c,d\n0,0,-1,1\n");
    REQUIRE_THROWS_AS(load_cloud_csv(bad_header), Error);

    const std::string bad_row = write_temp("sg_cloud_bad_row.csv", "y1,y2,y3,mass\n0,0,-1\n");
    REQUIRE_THROWS_AS(load_cloud_csv(bad_row), Error);

    const std::string bad_mass = write_temp("sg_cloud_bad_mass.csv", "y1,y2,y3,mass\n0,0,-1,0\n");
    REQUIRE_THROWS_AS(load_cloud_csv(bad_mass), Error);
}

TEST_CASE("generators produce valid deterministic clouds") {
    const FluidDomain dom = testutil::free_surface_domain(8);
    const CostModel cost;
    GeneratorParams gp;
    gp.count = 12;
    gp.seed = 42;

    const DualCloud a = generate_uniform_block(dom, gp);
    const DualCloud b = generate_uniform_block(dom, gp);
    REQUIRE(a.size() == 12);
    REQUIRE(validate_cloud(a, cost).pass());
    for (int i = 0; i < a.size(); ++i) {
        REQUIRE(a.particles[static_cast<size_t>(i)].pos.x1 ==
                b.particles[static_cast<size_t>(i)].pos.x1);
        REQUIRE(a.particles[static_cast<size_t>(i)].pos.x3 ==
                b.particles[static_cast<size_t>(i)].pos.x3);
    }

    gp.seed = 43;
    const DualCloud c = generate_uniform_block(dom, gp);
    bool all_same = true;
    for (int i = 0; i < a.size(); ++i)
        all_same = all_same && a.particles[static_cast<size_t>(i)].pos.x1 ==
                                   c.particles[static_cast<size_t>(i)].pos.x1;
    REQUIRE_FALSE(all_same);

    REQUIRE(validate_cloud(generate_two_blob(dom, gp), cost).pass());
    REQUIRE(validate_cloud(generate_sheared_band(dom, gp), cost).pass());
}

TEST_CASE("two-blob generator separates the blobs") {
    const FluidDomain dom = testutil::free_surface_domain(8);
    GeneratorParams gp;
    gp.count = 40;
    gp.spread = 0.1;
    gp.blob_separation = 0.6;
    const DualCloud c = generate_two_blob(dom, gp);
    int left = 0;
    for (const auto& p : c.particles)
        if (p.pos.x1 < 0.5) ++left;
    REQUIRE(left == 20);
}
