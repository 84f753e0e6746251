#pragma once

#include <array>
#include <string>
#include <vector>

#include "planforge/phantom.hpp"
#include "planforge/types.hpp"

namespace planforge {

// ---------------------------------------------------------------------------
// Cumulative DVH
// ---------------------------------------------------------------------------

constexpr int kDvhBins = 150;
constexpr double kDvhMaxRel = 1.5;  // top bin edge = 1.5 x prescription

// Bin edge k in Gy; edges span [0, kDvhMaxRel * prescription] inclusive.
double dvh_edge_gy(int k, double prescription_gy, int bins = kDvhBins);

// Rows in structure order, column k = fraction of the structure's volume
// receiving at least dvh_edge_gy(k). Row entries are non-increasing and the
// first column is always 1.
Matrix compute_dvh(const Vector& dose, const StructureSet& structures,
                   double prescription_gy, int bins = kDvhBins);

// The MDP state: what the plan looks like after one optimization call.
struct PlanState {
  Matrix dvh;
  Vector dose;
  Vector fluence;
  int step_index = 0;
};

// ---------------------------------------------------------------------------
// Plan metrics
// ---------------------------------------------------------------------------

enum class MetricKind {
  VrelPct,  // fraction of volume receiving >= arg * prescription
  VabsCc,   // absolute volume (cc) receiving >= arg Gy
  Dmax,     // maximum dose
  DqPct,    // dose to the hottest arg% of the volume
  Dmean,    // mean dose
  CI,       // Paddick conformity of the CTV at 95% of prescription
  HI        // CTV homogeneity (D2% - D98%) / D50%
};

struct MetricSpec {
  std::string structure;
  MetricKind kind = MetricKind::Dmax;
  double arg = 0.0;
  std::string label;  // display name, e.g. "CTV V95%"
};

// Quantile dose of a voxel-dose sample: rank interpolation on the descending
// sort, q as a percentage of the volume.
double dose_quantile(const Vector& organ_dose, double q_pct);

double metric(const Vector& dose, const StructureSet& structures,
              const GridSpec& grid, double prescription_gy,
              const MetricSpec& spec);

// ---------------------------------------------------------------------------
// Piecewise-linear scoring
// ---------------------------------------------------------------------------

// One scoring row: three breakpoints (x[i], s[i]) with x[0] = 0, constant
// clamps outside [x[0], x[2]], linear in between.
struct ScoreRule {
  MetricSpec spec;
  std::array<double, 3> x{};
  std::array<double, 3> s{};

  double max_score() const;
  double min_score() const;
};

double score_metric(const ScoreRule& rule, double v);

// The full 25-row criteria table (CTV coverage/conformity/homogeneity plus
// one or two rows per OAR).
const std::vector<ScoreRule>& canonical_score_rules();

struct MetricScore {
  std::string structure;
  std::string label;
  double value = 0.0;
  double score = 0.0;
  double max_score = 0.0;
};

struct ScoreBreakdown {
  std::vector<MetricScore> entries;
  double total = 0.0;
  double max_total = 0.0;

  double relative() const { return max_total > 0.0 ? total / max_total : 0.0; }
};

// Scoring rows restricted to the structures actually present in a case.
struct ScoringSystem {
  std::vector<ScoreRule> rules;

  double max_total() const;
  static ScoringSystem for_structures(const StructureSet& structures);
  static ScoringSystem for_names(const std::vector<std::string>& names);
};

ScoreBreakdown plan_score(const Vector& dose, const Case& c,
                          const ScoringSystem& sys);

// Absolute reward: next-state score minus half the attainable ceiling.
double reward(double next_score, double max_total);

// ---------------------------------------------------------------------------
// Scoring an externally supplied DVH (no voxel data available)
// ---------------------------------------------------------------------------

// Named cumulative DVH rows with per-structure absolute volumes. A "BODY"
// row (whole grid) makes conformity computable without voxel data.
struct DVHTable {
  std::vector<std::string> names;
  Vector volumes_cc;
  Vector edges_gy;
  Matrix values;

  int find(const std::string& name) const;  // -1 if absent
  void validate() const;
};

// Metric evaluation from a cumulative curve alone (interpolated).
double metric_from_dvh(const DVHTable& table, double prescription_gy,
                       const MetricSpec& spec);

ScoreBreakdown score_dvh(const DVHTable& table, double prescription_gy,
                         const ScoringSystem& sys);

}  // namespace planforge
