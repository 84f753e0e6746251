#include "planforge/tppspace.hpp"

#include <algorithm>

#include "planforge/planeval.hpp"

namespace planforge {

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::Max: return "Max";
    case ObjectiveKind::Min: return "Min";
    case ObjectiveKind::Uniform: return "Uniform";
    case ObjectiveKind::DVHmin: return "DVHmin";
  }
  throw ConfigError("bad objective kind");
}

std::string to_string(ScalarRole r) {
  switch (r) {
    case ScalarRole::ObjValue: return "obj_value";
    case ScalarRole::Dose: return "dose";
    case ScalarRole::Volume: return "volume";
    case ScalarRole::Weight: return "weight";
  }
  throw ConfigError("bad scalar role");
}

ObjectiveKind objective_kind_from_string(const std::string& s) {
  if (s == "Max") return ObjectiveKind::Max;
  if (s == "Min") return ObjectiveKind::Min;
  if (s == "Uniform") return ObjectiveKind::Uniform;
  if (s == "DVHmin") return ObjectiveKind::DVHmin;
  throw ConfigError("unknown objective kind: " + s);
}

ScalarRole scalar_role_from_string(const std::string& s) {
  if (s == "obj_value") return ScalarRole::ObjValue;
  if (s == "dose") return ScalarRole::Dose;
  if (s == "volume") return ScalarRole::Volume;
  if (s == "weight") return ScalarRole::Weight;
  throw ConfigError("unknown scalar role: " + s);
}

void ParameterRegistry::validate() const {
  if (specs.empty()) throw ConfigError("parameter registry is empty");
  for (size_t i = 0; i < specs.size(); ++i) {
    const auto& p = specs[i];
    if (p.index != static_cast<int>(i))
      throw ConfigError("parameter index out of order at slot " +
                        std::to_string(i));
    if (!(p.lower_bound < p.upper_bound))
      throw ConfigError("parameter bounds must satisfy lower < upper for " +
                        p.organ + " " + to_string(p.objective) + "." +
                        to_string(p.role));
  }
}

namespace {

// The highest dose (Gy) an OAR's scoring rows tolerate before scoring zero.
double scoring_dose_limit(const std::string& organ) {
  double limit = 0.0;
  for (const auto& rule : canonical_score_rules()) {
    if (rule.spec.structure != organ) continue;
    const double d = rule.spec.kind == MetricKind::VabsCc ? rule.spec.arg
                                                          : rule.x[2];
    limit = std::max(limit, d);
  }
  if (limit <= 0.0)
    throw ConfigError("no scoring dose limit known for organ " + organ);
  return limit;
}

constexpr double kWeightUpper = 100.0;

}  // namespace

ParameterRegistry ParameterRegistry::for_structures(
    const StructureSet& structures, double prescription_gy) {
  ParameterRegistry reg;
  int slot = 0;
  auto add = [&](int organ_index, ObjectiveKind kind, ScalarRole role,
                 double lo, double hi) {
    reg.specs.push_back({slot++, organ_index,
                         structures.at(organ_index).name, kind, role, lo, hi});
  };

  const double rx = prescription_gy;
  add(0, ObjectiveKind::Max, ScalarRole::ObjValue, 0.9 * rx, 1.1 * rx);
  add(0, ObjectiveKind::Max, ScalarRole::Weight, 0.0, kWeightUpper);
  add(0, ObjectiveKind::Min, ScalarRole::ObjValue, 0.95 * rx, 1.05 * rx);
  add(0, ObjectiveKind::Min, ScalarRole::Weight, 0.0, kWeightUpper);
  add(0, ObjectiveKind::Uniform, ScalarRole::ObjValue, 0.9 * rx, 1.1 * rx);
  add(0, ObjectiveKind::Uniform, ScalarRole::Weight, 0.0, kWeightUpper);
  add(0, ObjectiveKind::DVHmin, ScalarRole::Dose, 0.9 * rx, 1.0 * rx);
  add(0, ObjectiveKind::DVHmin, ScalarRole::Volume, 0.9, 1.0);
  add(0, ObjectiveKind::DVHmin, ScalarRole::Weight, 0.0, kWeightUpper);

  for (Index i = 1; i < structures.size(); ++i) {
    const double limit = scoring_dose_limit(structures.at(i).name);
    add(static_cast<int>(i), ObjectiveKind::Max, ScalarRole::ObjValue,
        0.3 * limit, 1.0 * limit);
    add(static_cast<int>(i), ObjectiveKind::Max, ScalarRole::Weight, 0.0,
        kWeightUpper);
  }

  reg.validate();
  return reg;
}

ParameterRegistry ParameterRegistry::reduced_for_structures(
    const StructureSet& structures, double prescription_gy) {
  ParameterRegistry reg;
  int slot = 0;
  auto add = [&](int organ_index, ObjectiveKind kind, ScalarRole role,
                 double lo, double hi) {
    reg.specs.push_back({slot++, organ_index,
                         structures.at(organ_index).name, kind, role, lo, hi});
  };

  const double rx = prescription_gy;
  add(0, ObjectiveKind::Uniform, ScalarRole::ObjValue, 0.9 * rx, 1.1 * rx);
  add(0, ObjectiveKind::Uniform, ScalarRole::Weight, 0.0, kWeightUpper);
  for (Index i = 1; i < structures.size(); ++i) {
    const double limit = scoring_dose_limit(structures.at(i).name);
    add(static_cast<int>(i), ObjectiveKind::Max, ScalarRole::ObjValue,
        0.3 * limit, 1.0 * limit);
    add(static_cast<int>(i), ObjectiveKind::Max, ScalarRole::Weight, 0.0,
        kWeightUpper);
  }

  reg.validate();
  return reg;
}

TunerState TunerState::initial(Index n) {
  TunerState t;
  t.x = IntVector::Zero(n);
  return t;
}

TunerState apply_actions(const TunerState& x, const ActionVector& a, int b) {
  if (a.size() != x.x.size())
    throw ConfigError("action vector length mismatch");
  TunerState out;
  out.x.resize(x.x.size());
  for (Index i = 0; i < x.x.size(); ++i) {
    if (a[i] < -1 || a[i] > 1)
      throw ConfigError("action values must be in {-1, 0, +1}");
    out.x[i] = std::clamp(x.x[i] + a[i], -b, b);
  }
  return out;
}

double tuned_value(int x, double lower_bound, double upper_bound, int b) {
  if (x >= b) return upper_bound;
  if (x <= -b) return lower_bound;
  return lower_bound +
         (x + b) * (upper_bound - lower_bound) / (2.0 * b);
}

Vector to_values(const TunerState& x, const ParameterRegistry& registry,
                 int b) {
  if (x.x.size() != registry.size())
    throw ConfigError("tuner state length does not match registry");
  Vector v(registry.size());
  for (Index i = 0; i < registry.size(); ++i) {
    const auto& s = registry.specs[static_cast<size_t>(i)];
    v[i] = tuned_value(x.x[i], s.lower_bound, s.upper_bound, b);
  }
  return v;
}

}  // namespace planforge
