#include <catch2/catch.hpp>

#include <cmath>

#include <nlohmann/json.hpp>

#include "planforge/fmo.hpp"
#include "planforge/rng.hpp"

using namespace planforge;

namespace {

// Random 8-voxel / 4-beamlet instance with two structures (5 + 3 voxels).
struct Small {
  StructureSet structures;
  InfluenceMatrix influence;
  GridSpec grid;  // only used for mask sizing

  explicit Small(std::uint64_t seed) {
    grid.nx = 4;
    grid.ny = 2;
    grid.voxel_size_mm = 3.0;
    Structure a{"CTV", {1, 1, 1, 1, 1, 0, 0, 0}};
    Structure b{"SpinalCord", {0, 0, 0, 0, 0, 1, 1, 1}};
    structures.structures = {a, b};
    Rng rng(seed);
    influence.resize(8, 4);
    for (Index i = 0; i < 8; ++i)
      for (Index j = 0; j < 4; ++j) influence(i, j) = rng.uniform(0.1, 1.0);
  }
};

double fd_gradient(const std::function<double(const Vector&)>& f,
                   const Vector& x, Index i, double h) {
  Vector lo = x, hi = x;
  lo[i] -= h;
  hi[i] += h;
  return (f(hi) - f(lo)) / (2.0 * h);
}

void check_gradient(const Objective& obj, const Small& inst,
                    const Vector& fluence) {
  const Vector dose = inst.influence * fluence;
  const Vector analytic =
      objective_gradient(obj, dose, inst.influence, inst.structures);
  auto value = [&](const Vector& f) {
    return objective_value(obj, inst.influence * f, inst.structures);
  };
  for (Index i = 0; i < fluence.size(); ++i) {
    const double fd = fd_gradient(value, fluence, i, 1e-6);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    CHECK(std::abs(analytic[i] - fd) / scale < 1e-5);
  }
}

}  // namespace

TEST_CASE("objective values match hand evaluation") {
  Small inst(1);
  Vector dose(8);
  dose << 40, 45, 50, 30, 20, 10, 5, 0;

  // All doses below the Max threshold: inactive.
  Objective omax{0, ObjectiveKind::Max, 50.0, 0, 1, 1.0};
  CHECK(objective_value(omax, dose, inst.structures) == 0.0);

  // Uniform exactly met.
  Vector flat = Vector::Constant(8, 60.0);
  Objective ouni{0, ObjectiveKind::Uniform, 60.0, 0, 1, 1.0};
  CHECK(objective_value(ouni, flat, inst.structures) == 0.0);

  // Single-voxel organ one Gy over threshold, weight 2 -> 2.
  StructureSet single;
  single.structures = {Structure{"CTV", {1, 0, 0, 0, 0, 0, 0, 0}}};
  Vector d2 = Vector::Zero(8);
  d2[0] = 51.0;
  Objective o2{0, ObjectiveKind::Max, 50.0, 0, 1, 2.0};
  CHECK(objective_value(o2, d2, single) == Approx(2.0));

  // Min penalty: mean over the 5 CTV voxels of the squared deficit.
  Objective omin{0, ObjectiveKind::Min, 48.0, 0, 1, 3.0};
  const double expect =
      3.0 * (8.0 * 8.0 + 3.0 * 3.0 + 0.0 + 18.0 * 18.0 + 28.0 * 28.0) / 5.0;
  CHECK(objective_value(omin, dose, inst.structures) == Approx(expect));
}

TEST_CASE("dvhmin penalizes the deficit of the hottest required fraction") {
  StructureSet organ;
  organ.structures = {Structure{"CTV", {1, 1, 1, 1, 0, 0, 0, 0}}};
  Vector dose(8);
  dose << 60, 50, 40, 30, 0, 0, 0, 0;

  // V = 0.5 -> two hottest voxels (60, 50); D = 55 -> only the 50 falls short.
  Objective dvh{0, ObjectiveKind::DVHmin, 0, 55.0, 0.5, 1.0};
  CHECK(objective_value(dvh, dose, organ) == Approx(25.0 / 2.0));

  // Raising V never lowers the penalty.
  double prev = 0.0;
  for (double v = 0.25; v <= 1.0; v += 0.25) {
    Objective o{0, ObjectiveKind::DVHmin, 0, 55.0, v, 1.0};
    const double val = objective_value(o, dose, organ);
    CHECK(val >= prev - 1e-15);
    prev = val;
  }
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Small inst(seed);
    Rng rng(seed + 100);
    Vector f(4);
    for (Index i = 0; i < 4; ++i) f[i] = rng.uniform(5.0, 40.0);

    check_gradient({0, ObjectiveKind::Max, 20.0, 0, 1, 2.0}, inst, f);
    check_gradient({0, ObjectiveKind::Min, 30.0, 0, 1, 1.5}, inst, f);
    check_gradient({0, ObjectiveKind::Uniform, 25.0, 0, 1, 0.7}, inst, f);
    check_gradient({1, ObjectiveKind::Max, 10.0, 0, 1, 1.0}, inst, f);
    check_gradient({0, ObjectiveKind::DVHmin, 0, 28.0, 0.6, 1.2}, inst, f);
  }
}

TEST_CASE("gradient is linear in the weight and zero when inactive") {
  Small inst(4);
  Vector f = Vector::Constant(4, 10.0);
  const Vector dose = inst.influence * f;

  Objective w1{0, ObjectiveKind::Uniform, 15.0, 0, 1, 1.0};
  Objective w2 = w1;
  w2.weight = 2.0;
  const Vector g1 = objective_gradient(w1, dose, inst.influence, inst.structures);
  const Vector g2 = objective_gradient(w2, dose, inst.influence, inst.structures);
  CHECK((g2 - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-14);

  Objective inactive{0, ObjectiveKind::Max, 1000.0, 0, 1, 5.0};
  CHECK(objective_gradient(inactive, dose, inst.influence, inst.structures)
            .isZero(0.0));
}

TEST_CASE("solver leaves the warm start alone when all weights vanish") {
  Small inst(5);
  ObjectiveSet set;
  set.objectives = {{0, ObjectiveKind::Uniform, 60.0, 0, 1, 0.0}};
  Vector warm = Vector::Constant(4, 3.0);
  const SolveResult res =
      solve_fmo(inst.influence, inst.structures, set, warm, SolverOptions{});
  CHECK(res.converged);
  CHECK(res.fluence == warm);
  CHECK(res.objective == 0.0);
}

TEST_CASE("single voxel closed form is recovered") {
  StructureSet organ;
  organ.structures = {Structure{"CTV", {1}}};
  InfluenceMatrix influence(1, 1);
  influence(0, 0) = 1.0;
  ObjectiveSet set;
  set.objectives = {{0, ObjectiveKind::Min, 1.0, 0, 1, 1.0}};
  SolverOptions opts;
  opts.max_iters = 2000;
  const SolveResult res =
      solve_fmo(influence, organ, set, Vector::Zero(1), opts);
  CHECK(res.converged);
  CHECK(res.fluence[0] == Approx(1.0).margin(1e-6));
}

TEST_CASE("objective descends monotonically along the iteration budget") {
  Small inst(6);
  ObjectiveSet set;
  set.objectives = {{0, ObjectiveKind::Min, 55.0, 0, 1, 2.0},
                    {0, ObjectiveKind::Max, 62.0, 0, 1, 1.0},
                    {1, ObjectiveKind::Max, 20.0, 0, 1, 3.0}};
  const Vector warm = Vector::Constant(4, 1.0);
  const double start =
      total_objective(set, inst.influence * warm, inst.structures);

  double prev = start;
  for (int iters = 1; iters <= 12; ++iters) {
    SolverOptions opts;
    opts.max_iters = iters;
    const SolveResult res =
        solve_fmo(inst.influence, inst.structures, set, warm, opts);
    CHECK(res.objective <= prev + 1e-12);
    prev = res.objective;
  }
  CHECK(prev < start);
}

TEST_CASE("solver reaches stationarity on convex instances") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Small inst(seed + 40);
    ObjectiveSet set;
    set.objectives = {{0, ObjectiveKind::Min, 50.0, 0, 1, 1.0},
                      {0, ObjectiveKind::Uniform, 55.0, 0, 1, 0.5},
                      {1, ObjectiveKind::Max, 15.0, 0, 1, 2.0}};
    SolverOptions opts;
    opts.max_iters = 5000;
    opts.grad_tol = 1e-6;
    const SolveResult res = solve_fmo(inst.influence, inst.structures, set,
                                      Vector::Zero(4), opts);
    CHECK(res.converged);
    CHECK(res.projected_grad_norm <= 1e-5);
    CHECK((res.fluence.array() >= 0.0).all());
  }
}

TEST_CASE("objective set construction follows registry slots") {
  GridSpec grid;
  grid.nx = 32;
  grid.ny = 32;
  const Case c = generate_case(3, grid, "tiny");
  const ParameterRegistry reg =
      ParameterRegistry::reduced_for_structures(c.structures, 60.0);
  Vector params(4);
  params << 61.0, 50.0, 25.0, 10.0;
  const ObjectiveSet set = ObjectiveSet::from_parameters(reg, params);
  REQUIRE(set.objectives.size() == 2);
  CHECK(set.objectives[0].kind == ObjectiveKind::Uniform);
  CHECK(set.objectives[0].obj_value_gy == 61.0);
  CHECK(set.objectives[0].weight == 50.0);
  CHECK(set.objectives[1].kind == ObjectiveKind::Max);
  CHECK(set.objectives[1].organ_index == 1);
  CHECK(set.objectives[1].obj_value_gy == 25.0);
  CHECK(set.objectives[1].weight == 10.0);

  // Full registry: 45 slots fold into 22 objectives.
  const Case full = generate_case(42, GridSpec{}, "hnc");
  const ParameterRegistry reg45 =
      ParameterRegistry::for_structures(full.structures, 60.0);
  TunerState x = TunerState::initial(reg45.size());
  const ObjectiveSet set22 =
      ObjectiveSet::from_parameters(reg45, to_values(x, reg45));
  CHECK(set22.objectives.size() == 22);
  CHECK_NOTHROW(set22.validate(full.structures));
}

TEST_CASE("objective sets round-trip through json") {
  GridSpec grid;
  grid.nx = 32;
  grid.ny = 32;
  const Case c = generate_case(3, grid, "tiny");
  ObjectiveSet set;
  set.objectives = {{0, ObjectiveKind::Uniform, 60.5, 0, 1, 12.0},
                    {0, ObjectiveKind::DVHmin, 0, 57.0, 0.95, 3.0},
                    {1, ObjectiveKind::Max, 30.0, 0, 1, 7.0}};
  const nlohmann::json j = objective_set_to_json(set, c.structures);
  const ObjectiveSet back = objective_set_from_json(j, c.structures);
  REQUIRE(back.objectives.size() == set.objectives.size());
  for (size_t i = 0; i < set.objectives.size(); ++i) {
    CHECK(back.objectives[i].organ_index == set.objectives[i].organ_index);
    CHECK(back.objectives[i].kind == set.objectives[i].kind);
    CHECK(back.objectives[i].weight == set.objectives[i].weight);
    CHECK(back.objectives[i].obj_value_gy == set.objectives[i].obj_value_gy);
    CHECK(back.objectives[i].dvh_dose_gy == set.objectives[i].dvh_dose_gy);
    CHECK(back.objectives[i].dvh_volume_frac ==
          set.objectives[i].dvh_volume_frac);
  }
}

TEST_CASE("environment step is deterministic and warm-startable") {
  GridSpec grid;
  grid.nx = 32;
  grid.ny = 32;
  const Case c = generate_case(9, grid, "tiny");
  const ParameterRegistry reg =
      ParameterRegistry::reduced_for_structures(c.structures, c.prescription_gy);
  TunerState x = TunerState::initial(reg.size());
  const Vector params = to_values(x, reg);
  SolverOptions opts;
  opts.max_iters = 100;

  const Vector zero = Vector::Zero(c.influence.cols());
  const PlanState s1 = step_environment(c, reg, params, zero, opts);
  const PlanState s2 = step_environment(c, reg, params, zero, opts);
  CHECK(s1.dose == s2.dose);
  CHECK(s1.fluence == s2.fluence);
  CHECK(s1.dvh == s2.dvh);
  CHECK((s1.fluence.array() >= 0.0).all());

  // Warm start from the previous solution converges at least as well.
  const PlanState s3 = step_environment(c, reg, params, s1.fluence, opts);
  const ObjectiveSet set = ObjectiveSet::from_parameters(reg, params);
  CHECK(total_objective(set, s3.dose, c.structures) <=
        total_objective(set, s1.dose, c.structures) + 1e-12);
}
