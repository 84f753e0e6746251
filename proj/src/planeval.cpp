#include "planforge/planeval.hpp"

#include <algorithm>
#include <cmath>

namespace planforge {

double dvh_edge_gy(int k, double prescription_gy, int bins) {
  return k * (kDvhMaxRel * prescription_gy) / (bins - 1);
}

Matrix compute_dvh(const Vector& dose, const StructureSet& structures,
                   double prescription_gy, int bins) {
  if (bins < 2) throw ConfigError("dvh bins must be >= 2");
  Matrix dvh(structures.size(), bins);
  std::vector<double> organ;
  for (Index r = 0; r < structures.size(); ++r) {
    const auto idx = structures.at(r).voxel_indices();
    organ.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) organ[i] = dose[idx[i]];
    std::sort(organ.begin(), organ.end());
    const double n = static_cast<double>(organ.size());
    for (int k = 0; k < bins; ++k) {
      const double edge = dvh_edge_gy(k, prescription_gy, bins);
      const auto below =
          std::lower_bound(organ.begin(), organ.end(), edge) - organ.begin();
      dvh(r, k) = (n - static_cast<double>(below)) / n;
    }
  }
  return dvh;
}

double dose_quantile(const Vector& organ_dose, double q_pct) {
  const Index n = organ_dose.size();
  if (n == 0) throw ConfigError("dose_quantile on empty organ");
  std::vector<double> d(organ_dose.data(), organ_dose.data() + n);
  std::sort(d.begin(), d.end(), std::greater<double>());
  const double rank = q_pct / 100.0 * static_cast<double>(n);
  if (rank <= 1.0) return d.front();
  if (rank >= static_cast<double>(n)) return d.back();
  const auto k = static_cast<size_t>(rank);  // 1-based rank of the lower point
  const double frac = rank - static_cast<double>(k);
  return d[k - 1] + frac * (d[k] - d[k - 1]);
}

namespace {

Vector gather(const Vector& dose, const Structure& s) {
  const auto idx = s.voxel_indices();
  Vector organ(static_cast<Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i)
    organ[static_cast<Index>(i)] = dose[idx[i]];
  return organ;
}

double conformity(const Vector& dose, const StructureSet& structures,
                  double prescription_gy) {
  const double level = 0.95 * prescription_gy;
  const double piv =
      static_cast<double>((dose.array() >= level).count());
  if (piv <= 0.0) return 0.0;
  const auto ctv_idx = structures.ctv().voxel_indices();
  double tv_piv = 0.0;
  for (int i : ctv_idx) tv_piv += dose[i] >= level ? 1.0 : 0.0;
  const double tv = static_cast<double>(ctv_idx.size());
  return tv_piv * tv_piv / (tv * piv);
}

double homogeneity(const Vector& ctv_dose) {
  const double d50 = dose_quantile(ctv_dose, 50.0);
  if (d50 <= 0.0) return 0.0;
  return (dose_quantile(ctv_dose, 2.0) - dose_quantile(ctv_dose, 98.0)) / d50;
}

}  // namespace

double metric(const Vector& dose, const StructureSet& structures,
              const GridSpec& grid, double prescription_gy,
              const MetricSpec& spec) {
  if (spec.kind == MetricKind::CI)
    return conformity(dose, structures, prescription_gy);

  const int r = structures.find(spec.structure);
  if (r < 0) throw ConfigError("metric on unknown structure " + spec.structure);
  const Vector organ = gather(dose, structures.at(r));

  switch (spec.kind) {
    case MetricKind::VrelPct: {
      const double level = spec.arg * prescription_gy;
      return (organ.array() >= level).count() /
             static_cast<double>(organ.size());
    }
    case MetricKind::VabsCc:
      return (organ.array() >= spec.arg).count() * grid.voxel_volume_cc();
    case MetricKind::Dmax:
      return organ.maxCoeff();
    case MetricKind::DqPct:
      return dose_quantile(organ, spec.arg);
    case MetricKind::Dmean:
      return organ.mean();
    case MetricKind::HI:
      return homogeneity(organ);
    case MetricKind::CI:
      break;  // handled above
  }
  throw ConfigError("unhandled metric kind");
}

double ScoreRule::max_score() const { return std::max({s[0], s[1], s[2]}); }
double ScoreRule::min_score() const { return std::min({s[0], s[1], s[2]}); }

double score_metric(const ScoreRule& rule, double v) {
  const auto& x = rule.x;
  const auto& s = rule.s;
  if (v <= x[0]) return s[0];
  if (v <= x[1]) return s[0] + (v - x[0]) * (s[1] - s[0]) / (x[1] - x[0]);
  if (v < x[2]) return s[1] + (v - x[1]) * (s[2] - s[1]) / (x[2] - x[1]);
  return s[2];
}

const std::vector<ScoreRule>& canonical_score_rules() {
  using K = MetricKind;
  auto row = [](std::string organ, K kind, double arg, std::string label,
                std::array<double, 3> x, std::array<double, 3> s) {
    return ScoreRule{{std::move(organ), kind, arg, std::move(label)}, x, s};
  };
  static const std::vector<ScoreRule> rules = {
      row("CTV", K::VrelPct, 0.95, "CTV V95%", {0, 0.98, 1}, {-40, 12, 40}),
      row("CTV", K::VrelPct, 1.05, "CTV V105%", {0, 0.1, 1}, {20, 6, 0}),
      row("CTV", K::CI, 0, "CTV CI", {0, 0.6, 1}, {0, 6, 20}),
      row("CTV", K::HI, 0, "CTV HI", {0, 0.1, 1}, {20, 6, 0}),
      row("BrainStem", K::Dmax, 0, "BrainStem Dmax", {0, 45, 54}, {7.2, 6, 0}),
      row("BrainStem", K::DqPct, 1, "BrainStem D1%", {0, 38.5, 50}, {7.2, 6, 0}),
      row("SpinalCord", K::Dmax, 0, "SpinalCord Dmax", {0, 30, 40}, {14.4, 12, 0}),
      row("OpticChiasm", K::DqPct, 20, "OpticChiasm D20%", {0, 30, 40}, {14.4, 12, 0}),
      row("Opt-R", K::DqPct, 20, "Opt-R D20%", {0, 30, 40}, {7.2, 6, 0}),
      row("Opt-L", K::DqPct, 20, "Opt-L D20%", {0, 30, 40}, {7.2, 6, 0}),
      row("TemporalLobe-R", K::VabsCc, 40, "TemporalLobe-R V40cc", {0, 7.66, 10}, {3.6, 3, 0}),
      row("TemporalLobe-R", K::VabsCc, 50, "TemporalLobe-R V50cc", {0, 4.66, 6}, {3.6, 3, 0}),
      row("TemporalLobe-L", K::VabsCc, 40, "TemporalLobe-L V40cc", {0, 7.66, 10}, {3.6, 3, 0}),
      row("TemporalLobe-L", K::VabsCc, 50, "TemporalLobe-L V50cc", {0, 4.66, 6}, {3.6, 3, 0}),
      row("Mandible", K::Dmean, 0, "Mandible Dmean", {0, 30, 40}, {6, 5, 0}),
      row("TMJ-R", K::Dmean, 0, "TMJ-R Dmean", {0, 30, 40}, {3, 2.5, 0}),
      row("TMJ-L", K::Dmean, 0, "TMJ-L Dmean", {0, 30, 40}, {3, 2.5, 0}),
      row("Parotid-R", K::Dmean, 0, "Parotid-R Dmean", {0, 21, 25}, {3, 2.5, 0}),
      row("Parotid-L", K::Dmean, 0, "Parotid-L Dmean", {0, 21, 25}, {3, 2.5, 0}),
      row("Lens-R", K::DqPct, 1, "Lens-R D1%", {0, 6, 10}, {3, 2.5, 0}),
      row("Lens-L", K::DqPct, 1, "Lens-L D1%", {0, 6, 10}, {3, 2.5, 0}),
      row("Eye-R", K::Dmean, 0, "Eye-R Dmean", {0, 30, 40}, {1.8, 1.5, 0}),
      row("Eye-L", K::Dmean, 0, "Eye-L Dmean", {0, 30, 40}, {1.8, 1.5, 0}),
      row("InnerEar-R", K::Dmean, 0, "InnerEar-R Dmean", {0, 30, 40}, {2.4, 2, 0}),
      row("InnerEar-L", K::Dmean, 0, "InnerEar-L Dmean", {0, 30, 40}, {2.4, 2, 0}),
  };
  return rules;
}

double ScoringSystem::max_total() const {
  double total = 0.0;
  for (const auto& r : rules) total += r.max_score();
  return total;
}

ScoringSystem ScoringSystem::for_structures(const StructureSet& structures) {
  std::vector<std::string> names;
  names.reserve(static_cast<size_t>(structures.size()));
  for (const auto& s : structures.structures) names.push_back(s.name);
  return for_names(names);
}

ScoringSystem ScoringSystem::for_names(const std::vector<std::string>& names) {
  ScoringSystem sys;
  for (const auto& rule : canonical_score_rules()) {
    const bool present = std::find(names.begin(), names.end(),
                                   rule.spec.structure) != names.end();
    if (present) sys.rules.push_back(rule);
  }
  if (sys.rules.empty())
    throw ConfigError("no scoring rules apply to this structure set");
  return sys;
}

ScoreBreakdown plan_score(const Vector& dose, const Case& c,
                          const ScoringSystem& sys) {
  ScoreBreakdown out;
  out.entries.reserve(sys.rules.size());
  for (const auto& rule : sys.rules) {
    const double v =
        metric(dose, c.structures, c.grid, c.prescription_gy, rule.spec);
    const double s = score_metric(rule, v);
    out.entries.push_back(
        {rule.spec.structure, rule.spec.label, v, s, rule.max_score()});
    out.total += s;
    out.max_total += rule.max_score();
  }
  return out;
}

double reward(double next_score, double max_total) {
  return next_score - 0.5 * max_total;
}

// ---------------------------------------------------------------------------
// DVH-route evaluation
// ---------------------------------------------------------------------------

int DVHTable::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

void DVHTable::validate() const {
  const auto rows = static_cast<Index>(names.size());
  if (rows == 0) throw ConfigError("dvh table has no rows");
  if (values.rows() != rows || volumes_cc.size() != rows)
    throw ConfigError("dvh table row count mismatch");
  if (values.cols() != edges_gy.size() || edges_gy.size() < 2)
    throw ConfigError("dvh table edge count mismatch");
  for (Index k = 1; k < edges_gy.size(); ++k)
    if (edges_gy[k] <= edges_gy[k - 1])
      throw ConfigError("dvh edges must be strictly increasing");
  if (edges_gy[0] < 0.0) throw ConfigError("dvh edges must be >= 0");
  for (Index r = 0; r < rows; ++r) {
    if (volumes_cc[r] <= 0.0)
      throw ConfigError("dvh volume must be > 0 for " + names[static_cast<size_t>(r)]);
    for (Index k = 0; k < values.cols(); ++k) {
      const double v = values(r, k);
      if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError("dvh values must lie in [0,1]");
      if (k > 0 && v > values(r, k - 1) + 1e-12)
        throw ConfigError("dvh rows must be non-increasing");
    }
  }
}

namespace {

// Cumulative volume fraction at dose d, linearly interpolated.
double volume_at_dose(const DVHTable& t, Index r, double d) {
  const auto& e = t.edges_gy;
  const Index n = e.size();
  if (d <= e[0]) return t.values(r, 0);
  if (d >= e[n - 1]) return t.values(r, n - 1);
  Index k = 1;
  while (e[k] < d) ++k;
  const double w = (d - e[k - 1]) / (e[k] - e[k - 1]);
  return t.values(r, k - 1) * (1.0 - w) + t.values(r, k) * w;
}

// Dose at which the cumulative curve first drops to volume fraction `frac`.
double dose_at_volume(const DVHTable& t, Index r, double frac) {
  const auto& e = t.edges_gy;
  const Index n = e.size();
  if (frac >= t.values(r, 0)) return e[0];
  for (Index k = 0; k + 1 < n; ++k) {
    const double hi = t.values(r, k), lo = t.values(r, k + 1);
    if (lo < frac && frac <= hi)
      return e[k] + (e[k + 1] - e[k]) * (hi - frac) / (hi - lo);
  }
  return e[n - 1];
}

double dmax_from_curve(const DVHTable& t, Index r) {
  for (Index k = t.edges_gy.size() - 1; k >= 0; --k)
    if (t.values(r, k) > 0.0) return t.edges_gy[k];
  return 0.0;
}

double dmean_from_curve(const DVHTable& t, Index r) {
  // Mean dose = integral of the cumulative curve over dose.
  double acc = 0.0;
  for (Index k = 0; k + 1 < t.edges_gy.size(); ++k)
    acc += 0.5 * (t.values(r, k) + t.values(r, k + 1)) *
           (t.edges_gy[k + 1] - t.edges_gy[k]);
  return acc;
}

}  // namespace

double metric_from_dvh(const DVHTable& table, double prescription_gy,
                       const MetricSpec& spec) {
  const auto need = [&](const std::string& name) {
    const int r = table.find(name);
    if (r < 0) throw ConfigError("dvh table is missing row " + name);
    return static_cast<Index>(r);
  };

  if (spec.kind == MetricKind::CI) {
    const Index ctv = need("CTV");
    const Index body = need("BODY");
    const double level = 0.95 * prescription_gy;
    const double piv = volume_at_dose(table, body, level) * table.volumes_cc[body];
    if (piv <= 0.0) return 0.0;
    const double tv = table.volumes_cc[ctv];
    const double v95 = volume_at_dose(table, ctv, level);
    return v95 * v95 * tv / piv;
  }

  const Index r = need(spec.structure);
  switch (spec.kind) {
    case MetricKind::VrelPct:
      return volume_at_dose(table, r, spec.arg * prescription_gy);
    case MetricKind::VabsCc:
      return volume_at_dose(table, r, spec.arg) * table.volumes_cc[r];
    case MetricKind::Dmax:
      return dmax_from_curve(table, r);
    case MetricKind::DqPct:
      return dose_at_volume(table, r, spec.arg / 100.0);
    case MetricKind::Dmean:
      return dmean_from_curve(table, r);
    case MetricKind::HI: {
      // An unirradiated structure has homogeneity 0 by convention (the voxel
      // route's d50 guard); the interpolated d50 of a curve that drops
      // straight from full volume would otherwise sit mid-bin.
      if (dmax_from_curve(table, r) == 0.0) return 0.0;
      const double d50 = dose_at_volume(table, r, 0.50);
      if (d50 <= 0.0) return 0.0;
      return (dose_at_volume(table, r, 0.02) - dose_at_volume(table, r, 0.98)) /
             d50;
    }
    case MetricKind::CI:
      break;  // handled above
  }
  throw ConfigError("unhandled metric kind");
}

ScoreBreakdown score_dvh(const DVHTable& table, double prescription_gy,
                         const ScoringSystem& sys) {
  table.validate();
  ScoreBreakdown out;
  out.entries.reserve(sys.rules.size());
  for (const auto& rule : sys.rules) {
    const double v = metric_from_dvh(table, prescription_gy, rule.spec);
    const double s = score_metric(rule, v);
    out.entries.push_back(
        {rule.spec.structure, rule.spec.label, v, s, rule.max_score()});
    out.total += s;
    out.max_total += rule.max_score();
  }
  return out;
}

}  // namespace planforge
