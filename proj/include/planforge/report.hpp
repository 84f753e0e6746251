#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "planforge/io.hpp"
#include "planforge/planeval.hpp"
#include "planforge/rollout.hpp"

namespace planforge {

// ---------------------------------------------------------------------------
// Score tables
// ---------------------------------------------------------------------------

// Columns: metric,value,score,max_score,organ — one row per criteria entry.
void write_score_csv(const ScoreBreakdown& breakdown, std::ostream& out);
void save_score_csv(const ScoreBreakdown& breakdown, const std::string& path);

// ---------------------------------------------------------------------------
// Plots: standalone SVG documents, each with a CSV twin of the plotted values
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  double width = 640.0, height = 420.0;
};

struct Panel {
  std::vector<Series> series;
  PlotSpec spec;
};

void save_svg_plot(const std::vector<Series>& series, const PlotSpec& spec,
                   const std::string& path);
// Several plots laid out on a grid in one document.
void save_svg_panels(const std::vector<Panel>& panels, int cols,
                     const std::string& path);
// Long-form twin: series,x,y.
void save_series_csv(const std::vector<Series>& series, const std::string& path);

// ---------------------------------------------------------------------------
// Training telemetry
// ---------------------------------------------------------------------------

struct TelemetryRow {
  long update = 0;    // learner updates completed
  long episode = 0;   // episodes collected when this update ran
  double epsilon = 0.0;
  double loss = 0.0;
  double mean_q_tot = 0.0;
  double mean_return = 0.0;         // mean episode return of the last round
  double mean_best_relative = 0.0;  // mean best relative score of the last round
};

bool operator==(const TelemetryRow& a, const TelemetryRow& b);

void save_telemetry_csv(const std::vector<TelemetryRow>& rows,
                        const std::string& path);
std::vector<TelemetryRow> load_telemetry_csv(const std::string& path);

// Four panels — relative performance, episode return, TD loss, mean mixed Q —
// plus a CSV twin next to the SVG.
void save_training_curves(const std::vector<TelemetryRow>& rows,
                          const std::string& svg_path);

// ---------------------------------------------------------------------------
// DVH and episode presentation
// ---------------------------------------------------------------------------

// Rebuilds a named DVH table from a stored episode state matrix (rows in the
// case's structure order; no BODY row, so this is for plotting, not scoring).
DVHTable dvh_table_from_state(const Matrix& state, const Case& c);

// Elementwise mean of tables with identical names and edges.
DVHTable mean_dvh(const std::vector<DVHTable>& tables);

void save_dvh_svg(const DVHTable& table, const std::string& title,
                  const std::string& svg_path);

// Relative plan score (%) over the steps of one episode.
Series score_trajectory(const EpisodeRecord& rec, const std::string& label);

// ---------------------------------------------------------------------------
// Two-sample comparison
// ---------------------------------------------------------------------------

// Welch's unequal-variance t-test, two-sided.  Needs >= 2 values per sample.
struct TwoSampleTest {
  double mean_a = 0.0, mean_b = 0.0;
  double t = 0.0;
  double dof = 0.0;      // Welch–Satterthwaite degrees of freedom
  double p_value = 1.0;  // P(|T| >= |t|) under equal means
};

TwoSampleTest welch_t_test(const std::vector<double>& a,
                           const std::vector<double>& b);

}  // namespace planforge
