#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "planforge/phantom.hpp"
#include "planforge/planeval.hpp"
#include "planforge/tppspace.hpp"
#include "planforge/types.hpp"

namespace planforge {

// One weighted penalty term of the plan optimization.
struct Objective {
  int organ_index = 0;
  ObjectiveKind kind = ObjectiveKind::Max;
  double obj_value_gy = 0.0;    // Max/Min/Uniform dose threshold
  double dvh_dose_gy = 0.0;     // DVHmin dose D
  double dvh_volume_frac = 1.0; // DVHmin volume fraction V
  double weight = 0.0;

  void validate() const;
};

struct ObjectiveSet {
  std::vector<Objective> objectives;

  void validate(const StructureSet& structures) const;

  // Fill the objective scalars from a tuned parameter vector in registry
  // slot order (one objective per (organ, kind) group).
  static ObjectiveSet from_parameters(const ParameterRegistry& registry,
                                      const Vector& params);
};

nlohmann::json objective_set_to_json(const ObjectiveSet& set,
                                     const StructureSet& structures);
ObjectiveSet objective_set_from_json(const nlohmann::json& j,
                                     const StructureSet& structures);

// Penalty forms, all means over the organ's voxels:
//   Max:     w * mean(max(0, d - D)^2)
//   Min:     w * mean(max(0, D - d)^2)
//   Uniform: w * mean((d - D)^2)
//   DVHmin:  w * mean over the ceil(V*n) hottest voxels of max(0, D - d)^2
double objective_value(const Objective& obj, const Vector& dose,
                       const StructureSet& structures);

// d(objective)/d(fluence) via the chain rule through dose = influence * f.
Vector objective_gradient(const Objective& obj, const Vector& dose,
                          const InfluenceMatrix& influence,
                          const StructureSet& structures);

// Sum of all objective values and, optionally, the dose-space gradient.
double total_objective(const ObjectiveSet& set, const Vector& dose,
                       const StructureSet& structures,
                       Vector* dose_gradient = nullptr);

struct SolverOptions {
  int max_iters = 200;
  double grad_tol = 1e-6;       // projected-gradient infinity norm
  double armijo_sigma = 1e-4;   // sufficient-decrease constant
  double step_shrink = 0.5;
  double step_grow = 2.0;
  double initial_step = 1.0;
  int max_backtracks = 60;

  void validate() const;
};

struct SolveResult {
  Vector fluence;
  double objective = 0.0;
  double projected_grad_norm = 0.0;  // infinity norm at the returned point
  int iterations = 0;
  bool converged = false;
};

// Projected gradient descent on f >= 0 with Armijo backtracking along the
// projection arc. Deterministic; never increases the objective relative to
// the warm start.
SolveResult solve_fmo(const InfluenceMatrix& influence,
                      const StructureSet& structures,
                      const ObjectiveSet& objectives, const Vector& warm_start,
                      const SolverOptions& opts);

// One environment transition: tuned parameters -> objectives -> warm-started
// solve -> dose -> DVH.
PlanState step_environment(const Case& c, const ParameterRegistry& registry,
                           const Vector& params, const Vector& prev_fluence,
                           const SolverOptions& opts);

}  // namespace planforge
