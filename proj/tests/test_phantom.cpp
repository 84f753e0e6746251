#include <catch2/catch.hpp>

#include "planforge/phantom.hpp"
#include "planforge/types.hpp"

using namespace planforge;

TEST_CASE("hnc template produces the canonical 19 structures") {
  const Case c = generate_case(42, GridSpec{}, "hnc");
  REQUIRE(c.structures.size() == 19);
  const auto& names = canonical_structure_names();
  for (Index i = 0; i < 19; ++i) {
    CHECK(c.structures.at(i).name == names[static_cast<size_t>(i)]);
    CHECK(c.structures.at(i).voxel_count() > 0);
  }
  CHECK(c.structures.ctv().name == "CTV");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("tiny template produces a two-structure phantom") {
  GridSpec grid;
  grid.nx = 32;
  grid.ny = 32;
  const Case c = generate_case(3, grid, "tiny");
  REQUIRE(c.structures.size() == 2);
  CHECK(c.structures.at(0).name == "CTV");
  CHECK(c.structures.at(1).name == "SpinalCord");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("case generation is deterministic") {
  const Case a = generate_case(7, GridSpec{}, "hnc");
  const Case b = generate_case(7, GridSpec{}, "hnc");
  REQUIRE(a.influence.rows() == b.influence.rows());
  CHECK(a.influence == b.influence);
  for (Index i = 0; i < a.structures.size(); ++i)
    CHECK(a.structures.at(i).mask == b.structures.at(i).mask);
  CHECK(a.beams.depth_profile == b.beams.depth_profile);
  CHECK(a.beams.beamlet_offsets_mm == b.beams.beamlet_offsets_mm);

  const Case c = generate_case(8, GridSpec{}, "hnc");
  CHECK(a.influence != c.influence);
}

TEST_CASE("influence entries are nonnegative with no dead beamlet") {
  const Case c = generate_case(11, GridSpec{}, "hnc");
  CHECK((c.influence.array() >= 0.0).all());
  for (Index j = 0; j < c.influence.cols(); ++j)
    CHECK(c.influence.col(j).maxCoeff() > 0.0);
}

TEST_CASE("dose is linear in fluence") {
  GridSpec grid;
  grid.nx = 32;
  grid.ny = 32;
  const Case c = generate_case(5, grid, "tiny");
  const Index nb = c.influence.cols();
  Vector f1(nb), f2(nb);
  for (Index i = 0; i < nb; ++i) {
    f1[i] = 0.25 + 0.01 * static_cast<double>(i);
    f2[i] = 1.0 / (1.0 + static_cast<double>(i));
  }
  const Vector lhs = dose(c.influence, 2.0 * f1 + 0.5 * f2);
  const Vector rhs = 2.0 * dose(c.influence, f1) + 0.5 * dose(c.influence, f2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <
        1e-12 * rhs.cwiseAbs().maxCoeff());

  CHECK(dose(c.influence, Vector::Zero(nb)).isZero(0.0));
}

TEST_CASE("uniform unit fluence delivers the prescription to the CTV") {
  const Case c = generate_case(21, GridSpec{}, "hnc");
  const Vector d = dose(c.influence, Vector::Ones(c.influence.cols()));
  double mean = 0.0;
  const auto idx = c.structures.ctv().voxel_indices();
  for (int i : idx) mean += d[i];
  mean /= static_cast<double>(idx.size());
  CHECK(mean == Approx(c.prescription_gy).epsilon(1e-9));
}

TEST_CASE("grid and volume bookkeeping") {
  GridSpec g;
  CHECK(g.voxel_count() == 64 * 64);
  CHECK(g.voxel_volume_cc() == Approx(0.027));
  CHECK(g.index(3, 2) == 2 * 64 + 3);

  GridSpec small;
  small.nx = 8;
  CHECK_THROWS_AS(small.validate(), ConfigError);

  GridSpec bad;
  bad.voxel_size_mm = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("unknown template and dimension mismatches are rejected") {
  CHECK_THROWS_AS(generate_case(1, GridSpec{}, "nope"), ConfigError);

  const Case c = generate_case(1, GridSpec{}, "hnc");
  CHECK_THROWS_AS(dose(c.influence, Vector::Zero(3)), ConfigError);
}
