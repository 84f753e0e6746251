#pragma once

#include <string>
#include <vector>

#include "planforge/phantom.hpp"
#include "planforge/types.hpp"

namespace planforge {

enum class ObjectiveKind { Max, Min, Uniform, DVHmin };
enum class ScalarRole { ObjValue, Dose, Volume, Weight };

std::string to_string(ObjectiveKind k);
std::string to_string(ScalarRole r);
ObjectiveKind objective_kind_from_string(const std::string& s);
ScalarRole scalar_role_from_string(const std::string& s);

// One tunable scalar of the plan optimization: which organ/objective it
// belongs to, what it controls, and its human-set bounds.
struct ParameterSpec {
  int index = 0;
  int organ_index = 0;
  std::string organ;
  ObjectiveKind objective = ObjectiveKind::Max;
  ScalarRole role = ScalarRole::Weight;
  double lower_bound = 0.0;
  double upper_bound = 1.0;
};

// Ordered parameter slots: the CTV's Max/Min/Uniform/DVHmin scalars first,
// then (obj_value, weight) per organ-at-risk in structure order.
struct ParameterRegistry {
  std::vector<ParameterSpec> specs;

  Index size() const { return static_cast<Index>(specs.size()); }
  void validate() const;

  // Default bounds: CTV thresholds bracket the prescription, OAR thresholds
  // bracket that organ's scoring hard limit, weights in [0, 100].
  static ParameterRegistry for_structures(const StructureSet& structures,
                                          double prescription_gy);

  // Cut-down variant for small phantoms: a single CTV Uniform objective plus
  // one Max objective per OAR (2 slots each).
  static ParameterRegistry reduced_for_structures(const StructureSet& structures,
                                                  double prescription_gy);
};

// Tuning resolution: each parameter moves on a (2b+1)-point integer lattice.
constexpr int kTunerResolution = 5;

// Integer tuning coordinates, one per parameter, all starting at 0.
struct TunerState {
  IntVector x;

  static TunerState initial(Index n);
};

// a_i in {-1, 0, +1}: move left, stay still, move right.
using ActionVector = IntVector;

// x'_i = clamp(x_i + a_i, -b, +b).
TunerState apply_actions(const TunerState& x, const ActionVector& a,
                         int b = kTunerResolution);

// Piecewise-linear action-to-value map: LB at x <= -b, UB at x >= +b,
// uniform steps of (UB-LB)/(2b) in between.
double tuned_value(int x, double lower_bound, double upper_bound,
                   int b = kTunerResolution);

Vector to_values(const TunerState& x, const ParameterRegistry& registry,
                 int b = kTunerResolution);

}  // namespace planforge
