#include <catch2/catch.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "planforge/report.hpp"

using namespace planforge;

namespace {

namespace fs = std::filesystem;

// Fresh scratch directory per test case, removed on destruction.
struct TempDir {
  std::string path;

  explicit TempDir(const std::string& name) : path("report_scratch_" + name) {
    fs::remove_all(path);
    ensure_dir(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string file(const std::string& name) const {
    return path_join(path, name);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

bool exact_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

Case tiny_case(std::uint64_t seed) {
  GridSpec g;
  g.nx = 32;
  g.ny = 32;
  return generate_case(seed, g, "tiny");
}

std::vector<TelemetryRow> sample_rows() {
  return {
      {1, 8, 0.9, 0.25, -1.5, 3.0, 0.41},
      {2, 8, 0.9, 1.0 / 3.0, 0.75, 3.0, 0.41},
      {3, 16, 0.81, 1.2e-7, 2.0, -4.25, 0.515},
      {4, 16, 0.81, 0.125, 2.5, -4.25, 0.515},
  };
}

}  // namespace

TEST_CASE("score table CSV mirrors the breakdown rows") {
  TempDir dir("score_csv");
  const Case c = tiny_case(91);
  const ScoringSystem sys = ScoringSystem::for_structures(c.structures);
  const Vector dose =
      Vector::Constant(c.grid.voxel_count(), 0.97 * c.prescription_gy);
  const ScoreBreakdown sb = plan_score(dose, c, sys);
  REQUIRE_FALSE(sb.entries.empty());

  const std::string path = dir.file("scores.csv");
  save_score_csv(sb, path);

  const auto lines = lines_of(path);
  REQUIRE(lines.size() == sb.entries.size() + 1);
  CHECK(lines[0] == "metric,value,score,max_score,organ");
  for (std::size_t i = 0; i < sb.entries.size(); ++i) {
    const auto fields = split_csv(lines[i + 1]);
    REQUIRE(fields.size() == 5);
    const MetricScore& e = sb.entries[i];
    CHECK(fields[0] == e.label);
    CHECK(parse_csv_double(fields[1], path, static_cast<int>(i) + 2) ==
          e.value);
    CHECK(parse_csv_double(fields[2], path, static_cast<int>(i) + 2) ==
          e.score);
    CHECK(parse_csv_double(fields[3], path, static_cast<int>(i) + 2) ==
          e.max_score);
    CHECK(fields[4] == e.structure);
  }
}

TEST_CASE("line plots embed every series and write a parseable CSV twin") {
  TempDir dir("svg_plot");
  const std::vector<Series> series = {
      {"greedy", {0, 1, 2, 3}, {10.0, 12.5, 40.0, 41.25}},
      {"random", {0, 1, 2, 3}, {10.0, 9.0, 11.0, 10.5}},
  };
  PlotSpec spec;
  spec.title = "Plan score per step";
  spec.x_label = "step";
  spec.y_label = "score (%)";
  const std::string svg_path = dir.file("traj.svg");
  save_svg_plot(series, spec, svg_path);

  const std::string svg = slurp(svg_path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("Plan score per step") != std::string::npos);
  CHECK(svg.find("step") != std::string::npos);
  CHECK(svg.find("score (%)") != std::string::npos);
  // Legend carries both labels.
  CHECK(svg.find("greedy") != std::string::npos);
  CHECK(svg.find("random") != std::string::npos);

  const std::string csv_path = dir.file("traj.csv");
  const auto lines = lines_of(csv_path);
  REQUIRE(lines.size() == 1 + 4 + 4);
  CHECK(lines[0] == "series,x,y");
  CHECK(lines[1] == "greedy,0,10");
  CHECK(lines[4] == "greedy,3,41.25");
  CHECK(lines[5] == "random,0,10");
  CHECK(lines[8] == "random,3,10.5");
}

TEST_CASE("plot text is XML-escaped") {
  TempDir dir("svg_escape");
  // Two series so the legend (which prints the labels) is drawn.
  const std::vector<Series> series = {{"a<b & c", {0, 1}, {0, 1}},
                                      {"plain", {0, 1}, {1, 0}}};
  PlotSpec spec;
  spec.title = "V95% > \"limit\"";
  const std::string path = dir.file("escape.svg");
  save_svg_plot(series, spec, path);
  const std::string svg = slurp(path);
  CHECK(svg.find("a&lt;b &amp; c") != std::string::npos);
  CHECK(svg.find("&quot;limit&quot;") != std::string::npos);
  CHECK(svg.find("a<b") == std::string::npos);
}

TEST_CASE("single-point series render as markers") {
  TempDir dir("svg_point");
  const std::vector<Series> series = {{"one update", {5.0}, {0.25}}};
  const std::string path = dir.file("point.svg");
  save_svg_plot(series, {"Loss", "update", "loss"}, path);
  const std::string svg = slurp(path);
  CHECK(svg.find("<circle") != std::string::npos);
}

TEST_CASE("panel grids tile the page by the largest cell") {
  TempDir dir("svg_panels");
  Panel a{{{"s1", {0, 1}, {0, 1}}}, {"First", "x", "y", 300, 200}};
  Panel b{{{"s2", {0, 1}, {1, 0}}}, {"Second", "x", "y", 320, 180}};
  Panel c{{{"s3", {0, 1}, {2, 2}}}, {"Third", "x", "y", 300, 200}};
  const std::string path = dir.file("grid.svg");
  save_svg_panels({a, b, c}, 2, path);

  const std::string svg = slurp(path);
  // 2 columns x 2 rows of the 320x200 bounding cell.
  CHECK(svg.find("width=\"640\" height=\"400\"") != std::string::npos);
  CHECK(svg.find("First") != std::string::npos);
  CHECK(svg.find("Second") != std::string::npos);
  CHECK(svg.find("Third") != std::string::npos);
  // Third panel starts the second row.
  CHECK(svg.find("translate(0,200)") != std::string::npos);
}

TEST_CASE("degenerate plot inputs are rejected") {
  TempDir dir("svg_bad");
  CHECK_THROWS_AS(save_svg_plot({}, {}, dir.file("none.svg")), ConfigError);
  const std::vector<Series> ragged = {{"r", {0, 1, 2}, {0, 1}}};
  CHECK_THROWS_AS(save_svg_plot(ragged, {}, dir.file("ragged.svg")),
                  ConfigError);
  CHECK_THROWS_AS(save_svg_panels({}, 2, dir.file("empty.svg")), ConfigError);
  Panel p{{{"s", {0}, {0}}}, {}};
  CHECK_THROWS_AS(save_svg_panels({p}, 0, dir.file("cols.svg")), ConfigError);
}

TEST_CASE("telemetry rows survive a round trip byte for byte") {
  TempDir dir("telemetry");
  const auto rows = sample_rows();
  const std::string path = dir.file("telemetry.csv");
  save_telemetry_csv(rows, path);

  const auto loaded = load_telemetry_csv(path);
  REQUIRE(loaded.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(loaded[i] == rows[i]);

  // Re-serialising the loaded rows reproduces the file exactly.
  const std::string second = dir.file("telemetry2.csv");
  save_telemetry_csv(loaded, second);
  CHECK(slurp(path) == slurp(second));
}

TEST_CASE("telemetry diagnostics carry file and line positions") {
  TempDir dir("telemetry_bad");

  SECTION("wrong header") {
    const std::string path = dir.file("header.csv");
    std::ofstream(path) << "update,loss\n";
    CHECK_THROWS_WITH(load_telemetry_csv(path), Catch::Contains(":1:"));
  }
  SECTION("missing fields") {
    const std::string path = dir.file("fields.csv");
    std::ofstream(path)
        << "update,episode,epsilon,loss,mean_q_tot,mean_return,"
           "mean_best_relative\n1,8,0.9\n";
    CHECK_THROWS_WITH(load_telemetry_csv(path), Catch::Contains(":2:"));
  }
  SECTION("non-numeric field") {
    const std::string path = dir.file("numeric.csv");
    std::ofstream(path)
        << "update,episode,epsilon,loss,mean_q_tot,mean_return,"
           "mean_best_relative\n1,8,0.9,0.5,0,3,0.4\n2,8,oops,0.5,0,3,0.4\n";
    CHECK_THROWS_WITH(load_telemetry_csv(path), Catch::Contains(":3:"));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_telemetry_csv(dir.file("absent.csv")), ConfigError);
  }
}

TEST_CASE("training curves produce a four-panel figure with a telemetry twin") {
  TempDir dir("curves");
  const auto rows = sample_rows();
  const std::string svg_path = dir.file("training_curves.svg");
  save_training_curves(rows, svg_path);

  const std::string svg = slurp(svg_path);
  CHECK(svg.find("Best relative score") != std::string::npos);
  CHECK(svg.find("Episode return") != std::string::npos);
  CHECK(svg.find("TD loss") != std::string::npos);
  CHECK(svg.find("Mean mixed Q") != std::string::npos);

  const auto twin = load_telemetry_csv(dir.file("training_curves.csv"));
  REQUIRE(twin.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(twin[i] == rows[i]);

  CHECK_THROWS_AS(save_training_curves({}, dir.file("none.svg")), ConfigError);
}

TEST_CASE("state matrices rebuild the case's DVH table") {
  const Case c = tiny_case(17);
  Rng rng(3);
  Vector dose(c.grid.voxel_count());
  for (Index i = 0; i < dose.size(); ++i)
    dose(i) = rng.uniform(0.0, 1.2 * c.prescription_gy);
  const Matrix state = compute_dvh(dose, c.structures, c.prescription_gy);

  const DVHTable table = dvh_table_from_state(state, c);
  REQUIRE(table.names.size() == static_cast<std::size_t>(c.structures.size()));
  CHECK(exact_equal(table.values, state));
  for (Index i = 0; i < c.structures.size(); ++i) {
    CHECK(table.names[static_cast<std::size_t>(i)] == c.structures.at(i).name);
    CHECK(table.volumes_cc(i) ==
          Approx(c.structures.at(i).voxel_count() * c.grid.voxel_volume_cc()));
  }
  for (Index k = 0; k < table.edges_gy.size(); ++k)
    CHECK(table.edges_gy(k) ==
          dvh_edge_gy(static_cast<int>(k), c.prescription_gy,
                      static_cast<int>(state.cols())));

  // Row-count mismatch with the case is rejected.
  CHECK_THROWS_AS(dvh_table_from_state(state.topRows(1), c), ConfigError);
}

TEST_CASE("mean DVH averages values and volumes elementwise") {
  const Case c = tiny_case(23);
  Rng rng(5);
  auto random_dose = [&] {
    Vector d(c.grid.voxel_count());
    for (Index i = 0; i < d.size(); ++i)
      d(i) = rng.uniform(0.0, 1.1 * c.prescription_gy);
    return d;
  };
  const DVHTable a = dvh_table_from_state(
      compute_dvh(random_dose(), c.structures, c.prescription_gy), c);
  const DVHTable b = dvh_table_from_state(
      compute_dvh(random_dose(), c.structures, c.prescription_gy), c);

  const DVHTable m = mean_dvh({a, b});
  CHECK(exact_equal(m.values, Matrix(((a.values + b.values) / 2.0).eval())));
  CHECK(m.names == a.names);

  SECTION("identity on a single table") {
    const DVHTable one = mean_dvh({a});
    CHECK(exact_equal(one.values, a.values));
  }
  SECTION("name mismatch is rejected") {
    DVHTable renamed = b;
    renamed.names[0] = "elsewhere";
    CHECK_THROWS_AS(mean_dvh({a, renamed}), ConfigError);
  }
  SECTION("edge mismatch is rejected") {
    DVHTable shifted = b;
    shifted.edges_gy(1) += 0.25;
    CHECK_THROWS_AS(mean_dvh({a, shifted}), ConfigError);
  }
  SECTION("empty input is rejected") {
    CHECK_THROWS_AS(mean_dvh({}), ConfigError);
  }
}

TEST_CASE("DVH figure lists each structure as a labelled curve") {
  TempDir dir("dvh_svg");
  const Case c = tiny_case(29);
  const Vector dose =
      Vector::Constant(c.grid.voxel_count(), 0.5 * c.prescription_gy);
  const DVHTable table = dvh_table_from_state(
      compute_dvh(dose, c.structures, c.prescription_gy), c);
  const std::string path = dir.file("dvh.svg");
  save_dvh_svg(table, "Mean DVH", path);

  const std::string svg = slurp(path);
  CHECK(svg.find("Mean DVH") != std::string::npos);
  CHECK(svg.find("dose (Gy)") != std::string::npos);
  CHECK(svg.find("volume (%)") != std::string::npos);
  for (const std::string& name : table.names)
    CHECK(svg.find(name) != std::string::npos);
}

TEST_CASE("two-sample test matches reference statistics") {
  // Reference values computed with an independent implementation
  // (unequal-variance t-test, Welch-Satterthwaite degrees of freedom).
  const std::vector<double> a = {82.1, 85.3, 79.8, 88.0, 84.2};
  const std::vector<double> b = {75.0, 77.5, 73.2, 76.8, 74.1, 78.9, 72.0};
  const TwoSampleTest r = welch_t_test(a, b);
  CHECK(r.t == Approx(5.072634107761831).epsilon(1e-12));
  CHECK(r.dof == Approx(7.416558953319361).epsilon(1e-12));
  CHECK(r.p_value == Approx(0.0012115512045229014).epsilon(1e-9));
  CHECK(r.mean_a == Approx(83.88));
  CHECK(r.mean_b == Approx(75.35714285714286));

  const std::vector<double> a2 = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> b2 = {1.5, 2.5, 2.0, 3.0, 2.2};
  const TwoSampleTest r2 = welch_t_test(a2, b2);
  CHECK(r2.t == Approx(0.37556467431472923).epsilon(1e-12));
  CHECK(r2.dof == Approx(3.903080750167329).epsilon(1e-12));
  CHECK(r2.p_value == Approx(0.7267570424308352).epsilon(1e-9));

  SECTION("order swap flips the sign, keeps the p-value") {
    const TwoSampleTest swapped = welch_t_test(b, a);
    CHECK(swapped.t == Approx(-r.t));
    CHECK(swapped.p_value == Approx(r.p_value));
  }
  SECTION("identical constant samples are indistinguishable") {
    const TwoSampleTest same = welch_t_test({2.0, 2.0, 2.0}, {2.0, 2.0});
    CHECK(same.t == 0.0);
    CHECK(same.p_value == 1.0);
  }
  SECTION("distinct constant samples separate with certainty") {
    const TwoSampleTest apart = welch_t_test({3.0, 3.0}, {2.0, 2.0});
    CHECK(std::isinf(apart.t));
    CHECK(apart.t > 0.0);
    CHECK(apart.p_value == 0.0);
  }
  SECTION("undersized samples are rejected") {
    CHECK_THROWS_AS(welch_t_test({1.0}, {1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(welch_t_test({1.0, 2.0}, {}), ConfigError);
  }
}

TEST_CASE("episode score trajectories are relative percentages per step") {
  EpisodeRecord rec;
  const double max_total = 204.4;
  for (double total : {51.1, 102.2, 204.4}) {
    ScoreBreakdown sb;
    sb.total = total;
    sb.max_total = max_total;
    rec.scores.push_back(sb);
  }
  const Series s = score_trajectory(rec, "case A");
  CHECK(s.label == "case A");
  REQUIRE(s.x.size() == 3);
  CHECK(s.x == std::vector<double>{0.0, 1.0, 2.0});
  CHECK(s.y[0] == Approx(25.0));
  CHECK(s.y[1] == Approx(50.0));
  CHECK(s.y[2] == Approx(100.0));
}
