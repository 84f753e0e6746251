#include "planforge/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace planforge {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr int kPaletteSize = 8;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range data_range(const std::vector<Series>& series, bool use_x) {
  bool any = false;
  Range r{0.0, 0.0};
  for (const Series& s : series)
    for (double v : (use_x ? s.x : s.y)) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        r.lo = r.hi = v;
        any = true;
      } else {
        r.lo = std::min(r.lo, v);
        r.hi = std::max(r.hi, v);
      }
    }
  if (!any) return {0.0, 1.0};
  if (r.hi == r.lo) {
    const double pad = std::max(1.0, std::abs(r.lo) * 0.1);
    return {r.lo - pad, r.hi + pad};
  }
  const double pad = 0.05 * (r.hi - r.lo);
  return {r.lo - pad, r.hi + pad};
}

// Tick spacing of the form {1,2,5}*10^k giving 3-7 ticks over the range.
double nice_step(const Range& r) {
  const double raw = (r.hi - r.lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  double step;
  if (frac <= 1.5)
    step = 1.0;
  else if (frac <= 3.5)
    step = 2.0;
  else if (frac <= 7.5)
    step = 5.0;
  else
    step = 10.0;
  return step * mag;
}

// One axes-area plot rendered as an SVG group at (ox, oy).
void render_plot(std::ostream& out, const std::vector<Series>& series,
                 const PlotSpec& spec, double ox, double oy) {
  const double ml = 62, mr = 16, mt = 34, mb = 46;
  const double px = ml, py = mt;
  const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
  const Range rx = data_range(series, true);
  const Range ry = data_range(series, false);
  const auto sx = [&](double v) {
    return px + (v - rx.lo) / (rx.hi - rx.lo) * pw;
  };
  const auto sy = [&](double v) {
    return py + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph;
  };

  out << "<g transform=\"translate(" << num(ox) << "," << num(oy) << ")\" "
      << "font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect x=\"" << num(px) << "\" y=\"" << num(py) << "\" width=\""
      << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"white\" stroke=\"#444\"/>\n";

  // Ticks and grid.
  const double xstep = nice_step(rx);
  for (double t = std::ceil(rx.lo / xstep) * xstep; t <= rx.hi + 1e-12 * xstep;
       t += xstep) {
    const double gx = sx(t);
    out << "<line x1=\"" << num(gx) << "\" y1=\"" << num(py) << "\" x2=\""
        << num(gx) << "\" y2=\"" << num(py + ph)
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << num(gx) << "\" y=\"" << num(py + ph + 16)
        << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
  }
  const double ystep = nice_step(ry);
  for (double t = std::ceil(ry.lo / ystep) * ystep; t <= ry.hi + 1e-12 * ystep;
       t += ystep) {
    const double gy = sy(t);
    out << "<line x1=\"" << num(px) << "\" y1=\"" << num(gy) << "\" x2=\""
        << num(px + pw) << "\" y2=\"" << num(gy) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << num(px - 6) << "\" y=\"" << num(gy + 4)
        << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
  }

  // Series polylines (markers when a series has a single point).
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* color = kPalette[i % kPaletteSize];
    std::ostringstream pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      pts << num(sx(s.x[k])) << "," << num(sy(s.y[k])) << " ";
    }
    if (s.x.size() == 1) {
      out << "<circle cx=\"" << num(sx(s.x[0])) << "\" cy=\"" << num(sy(s.y[0]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    } else {
      out << "<polyline points=\"" << pts.str()
          << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n";
    }
  }

  // Labels.
  out << "<text x=\"" << num(px + pw / 2) << "\" y=\"" << num(py - 12)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(spec.title)
      << "</text>\n";
  out << "<text x=\"" << num(px + pw / 2) << "\" y=\""
      << num(spec.height - 10) << "\" text-anchor=\"middle\">"
      << xml_escape(spec.x_label) << "</text>\n";
  out << "<text transform=\"translate(14," << num(py + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(spec.y_label)
      << "</text>\n";

  // Legend for small series counts.
  if (series.size() > 1 && series.size() <= 8) {
    double ly = py + 14;
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double lx = px + pw - 130;
      out << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly - 4)
          << "\" x2=\"" << num(lx + 18) << "\" y2=\"" << num(ly - 4)
          << "\" stroke=\"" << kPalette[i % kPaletteSize]
          << "\" stroke-width=\"2\"/>\n";
      out << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(ly) << "\">"
          << xml_escape(series[i].label) << "</text>\n";
      ly += 15;
    }
  }
  out << "</g>\n";
}

void check_series(const std::vector<Series>& series) {
  if (series.empty()) throw ConfigError("plot: no series to draw");
  for (const Series& s : series)
    if (s.x.size() != s.y.size())
      throw ConfigError("plot: series \"" + s.label +
                        "\" has mismatched x/y lengths");
}

std::string csv_twin_path(const std::string& svg_path) {
  std::string p = svg_path;
  const auto dot = p.rfind('.');
  if (dot != std::string::npos) p.resize(dot);
  return p + ".csv";
}

}  // namespace

void write_score_csv(const ScoreBreakdown& breakdown, std::ostream& out) {
  out << "metric,value,score,max_score,organ\n";
  for (const MetricScore& e : breakdown.entries)
    out << e.label << "," << format_double(e.value) << ","
        << format_double(e.score) << "," << format_double(e.max_score) << ","
        << e.structure << "\n";
}

void save_score_csv(const ScoreBreakdown& breakdown, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_score_csv(breakdown, out);
}

void save_svg_plot(const std::vector<Series>& series, const PlotSpec& spec,
                   const std::string& path) {
  check_series(series);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << num(spec.width) << "\" height=\"" << num(spec.height)
      << "\" viewBox=\"0 0 " << num(spec.width) << " " << num(spec.height)
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  render_plot(out, series, spec, 0, 0);
  out << "</svg>\n";
  save_series_csv(series, csv_twin_path(path));
}

void save_svg_panels(const std::vector<Panel>& panels, int cols,
                     const std::string& path) {
  if (panels.empty()) throw ConfigError("plot: no panels to draw");
  if (cols < 1) throw ConfigError("plot: panel columns must be positive");
  for (const Panel& p : panels) check_series(p.series);
  double cell_w = 0, cell_h = 0;
  for (const Panel& p : panels) {
    cell_w = std::max(cell_w, p.spec.width);
    cell_h = std::max(cell_h, p.spec.height);
  }
  const int rows =
      (static_cast<int>(panels.size()) + cols - 1) / cols;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << num(cell_w * cols) << "\" height=\"" << num(cell_h * rows)
      << "\" viewBox=\"0 0 " << num(cell_w * cols) << " " << num(cell_h * rows)
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const double ox = static_cast<double>(i % static_cast<std::size_t>(cols)) * cell_w;
    const double oy = static_cast<double>(i / static_cast<std::size_t>(cols)) * cell_h;
    render_plot(out, panels[i].series, panels[i].spec, ox, oy);
  }
  out << "</svg>\n";
}

void save_series_csv(const std::vector<Series>& series,
                     const std::string& path) {
  check_series(series);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "series,x,y\n";
  for (const Series& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k)
      out << s.label << "," << format_double(s.x[k]) << ","
          << format_double(s.y[k]) << "\n";
}

bool operator==(const TelemetryRow& a, const TelemetryRow& b) {
  return a.update == b.update && a.episode == b.episode &&
         a.epsilon == b.epsilon && a.loss == b.loss &&
         a.mean_q_tot == b.mean_q_tot && a.mean_return == b.mean_return &&
         a.mean_best_relative == b.mean_best_relative;
}

void save_telemetry_csv(const std::vector<TelemetryRow>& rows,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "update,episode,epsilon,loss,mean_q_tot,mean_return,"
         "mean_best_relative\n";
  for (const TelemetryRow& r : rows)
    out << r.update << "," << r.episode << "," << format_double(r.epsilon)
        << "," << format_double(r.loss) << "," << format_double(r.mean_q_tot)
        << "," << format_double(r.mean_return) << ","
        << format_double(r.mean_best_relative) << "\n";
}

std::vector<TelemetryRow> load_telemetry_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError(path + ":1: empty file, expected a header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line !=
      "update,episode,epsilon,loss,mean_q_tot,mean_return,mean_best_relative")
    throw ConfigError(path + ":1: unexpected telemetry header");
  std::vector<TelemetryRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 7)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 7 fields, got " +
                        std::to_string(fields.size()));
    TelemetryRow r;
    r.update = static_cast<long>(parse_csv_double(fields[0], path, line_no));
    r.episode = static_cast<long>(parse_csv_double(fields[1], path, line_no));
    r.epsilon = parse_csv_double(fields[2], path, line_no);
    r.loss = parse_csv_double(fields[3], path, line_no);
    r.mean_q_tot = parse_csv_double(fields[4], path, line_no);
    r.mean_return = parse_csv_double(fields[5], path, line_no);
    r.mean_best_relative = parse_csv_double(fields[6], path, line_no);
    rows.push_back(r);
  }
  return rows;
}

void save_training_curves(const std::vector<TelemetryRow>& rows,
                          const std::string& svg_path) {
  if (rows.empty())
    throw ConfigError("training curves: no telemetry rows to plot");
  Series perf{"performance", {}, {}}, ret{"return", {}, {}},
      loss{"td loss", {}, {}}, q{"mean Q_tot", {}, {}};
  for (const TelemetryRow& r : rows) {
    const double u = static_cast<double>(r.update);
    const double e = static_cast<double>(r.episode);
    perf.x.push_back(e);
    perf.y.push_back(100.0 * r.mean_best_relative);
    ret.x.push_back(e);
    ret.y.push_back(r.mean_return);
    loss.x.push_back(u);
    loss.y.push_back(r.loss);
    q.x.push_back(u);
    q.y.push_back(r.mean_q_tot);
  }
  const std::vector<Panel> panels = {
      {{perf}, {"Best relative score", "episode", "score (%)"}},
      {{ret}, {"Episode return", "episode", "return"}},
      {{loss}, {"TD loss", "update", "loss"}},
      {{q}, {"Mean mixed Q", "update", "Q_tot"}},
  };
  save_svg_panels(panels, 2, svg_path);
  save_telemetry_csv(rows, csv_twin_path(svg_path));
}

DVHTable dvh_table_from_state(const Matrix& state, const Case& c) {
  if (state.rows() != c.structures.size())
    throw ConfigError("state rows do not match the case's structures");
  DVHTable table;
  table.edges_gy.resize(state.cols());
  for (Index k = 0; k < state.cols(); ++k)
    table.edges_gy(k) =
        dvh_edge_gy(static_cast<int>(k), c.prescription_gy,
                    static_cast<int>(state.cols()));
  table.volumes_cc.resize(state.rows());
  for (Index i = 0; i < state.rows(); ++i) {
    table.names.push_back(c.structures.at(i).name);
    table.volumes_cc(i) =
        c.structures.at(i).voxel_count() * c.grid.voxel_volume_cc();
  }
  table.values = state;
  table.validate();
  return table;
}

DVHTable mean_dvh(const std::vector<DVHTable>& tables) {
  if (tables.empty()) throw ConfigError("mean dvh: no tables");
  DVHTable acc = tables.front();
  acc.validate();
  for (std::size_t i = 1; i < tables.size(); ++i) {
    const DVHTable& t = tables[i];
    if (t.names != acc.names)
      throw ConfigError("mean dvh: structure names differ between tables");
    if (t.edges_gy.size() != acc.edges_gy.size() ||
        (t.edges_gy.array() != acc.edges_gy.array()).any())
      throw ConfigError("mean dvh: dose edges differ between tables");
    acc.values += t.values;
    acc.volumes_cc += t.volumes_cc;
  }
  const double n = static_cast<double>(tables.size());
  acc.values /= n;
  acc.volumes_cc /= n;
  acc.validate();
  return acc;
}

void save_dvh_svg(const DVHTable& table, const std::string& title,
                  const std::string& svg_path) {
  table.validate();
  std::vector<Series> series;
  for (std::size_t i = 0; i < table.names.size(); ++i) {
    Series s;
    s.label = table.names[i];
    for (Index k = 0; k < table.edges_gy.size(); ++k) {
      s.x.push_back(table.edges_gy(k));
      s.y.push_back(100.0 * table.values(static_cast<Index>(i), k));
    }
    series.push_back(std::move(s));
  }
  save_svg_plot(series, {title, "dose (Gy)", "volume (%)"}, svg_path);
}

Series score_trajectory(const EpisodeRecord& rec, const std::string& label) {
  Series s;
  s.label = label;
  for (std::size_t t = 0; t < rec.scores.size(); ++t) {
    s.x.push_back(static_cast<double>(t));
    s.y.push_back(100.0 * rec.scores[t].relative());
  }
  return s;
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

// Regularized incomplete beta I_x(a, b).
double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

void mean_and_var(const std::vector<double>& v, double& mean, double& var) {
  const double n = static_cast<double>(v.size());
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
}

}  // namespace

TwoSampleTest welch_t_test(const std::vector<double>& a,
                           const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ConfigError("two-sample test: need at least two values per sample");
  TwoSampleTest r;
  double var_a = 0.0, var_b = 0.0;
  mean_and_var(a, r.mean_a, var_a);
  mean_and_var(b, r.mean_b, var_b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = var_a / na, sb = var_b / nb;
  const double se2 = sa + sb;
  if (se2 == 0.0) {
    // Constant samples: identical means are indistinguishable, different
    // means are separated with certainty.
    r.dof = na + nb - 2.0;
    if (r.mean_a == r.mean_b) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(),
                          r.mean_a - r.mean_b);
      r.p_value = 0.0;
    }
    return r;
  }
  r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.dof =
      se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  // Two-sided Student-t tail: p = I_{nu/(nu+t^2)}(nu/2, 1/2).
  r.p_value = reg_inc_beta(r.dof / 2.0, 0.5, r.dof / (r.dof + r.t * r.t));
  return r;
}

}  // namespace planforge
