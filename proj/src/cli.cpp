#include "planforge/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "planforge/report.hpp"

namespace planforge {

namespace {

namespace fs = std::filesystem;

const std::map<std::string, std::set<std::string>>& command_flags() {
  static const std::map<std::string, std::set<std::string>> table = {
      {"gen", {"config", "seed", "out", "train", "test"}},
      {"train", {"config", "seed", "out", "workers", "episodes", "checkpoint"}},
      {"eval", {"config", "seed", "out", "checkpoint", "episodes"}},
      {"score", {"dvh", "rx", "case", "fluence", "out"}},
      {"replay", {"config", "out"}},
  };
  return table;
}

long parse_long_flag(const CliArgs& args, const std::string& name,
                     long fallback) {
  if (!args.has(name)) return fallback;
  const std::string& text = args.get(name);
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("--" + name + ": expected an integer, got \"" + text +
                      "\"");
  }
}

std::uint64_t parse_u64_flag(const CliArgs& args, const std::string& name) {
  const std::string& text = args.get(name);
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("--" + name + ": expected an unsigned integer, got \"" +
                      text + "\"");
  }
}

double parse_double_flag(const CliArgs& args, const std::string& name,
                         double fallback) {
  if (!args.has(name)) return fallback;
  const std::string& text = args.get(name);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v))
      throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("--" + name + ": expected a number, got \"" + text +
                      "\"");
  }
}

// Configuration file plus the overrides shared by every run command.
RunConfig base_config(const CliArgs& args) {
  RunConfig cfg;
  if (args.has("config")) cfg = load_config(args.get("config"));
  if (args.has("seed")) cfg.base_seed = parse_u64_flag(args, "seed");
  if (args.has("out")) cfg.out_dir = args.get("out");
  return cfg;
}

void sample_stats(const std::vector<double>& v, double& mean, double& stddev) {
  mean = 0.0;
  stddev = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string file_stem(const std::string& path) {
  const auto slash = path.find_last_of('/');
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = name.rfind('.');
  if (dot != std::string::npos) name.resize(dot);
  return name;
}

int cmd_gen(const CliArgs& args, std::ostream& out) {
  RunConfig cfg = base_config(args);
  if (args.has("train"))
    cfg.train_cases = static_cast<int>(parse_long_flag(args, "train", 0));
  if (args.has("test"))
    cfg.test_cases = static_cast<int>(parse_long_flag(args, "test", 0));
  cfg.validate();
  DirLock lock(cfg.out_dir);

  const std::string cases_dir = path_join(cfg.out_dir, "cases");
  ensure_dir(cases_dir);
  int written = 0;
  for (const Case& c : make_train_cases(cfg)) {
    save_case(c, path_join(cases_dir, c.id + ".json"));
    ++written;
  }
  for (const Case& c : make_test_cases(cfg)) {
    save_case(c, path_join(cases_dir, c.id + ".json"));
    ++written;
  }
  out << "wrote " << written << " case files to " << cases_dir << "\n";
  return kExitOk;
}

int cmd_train(const CliArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(args);
  if (args.has("workers"))
    cfg.workers = static_cast<int>(parse_long_flag(args, "workers", 0));
  if (args.has("episodes"))
    cfg.episodes = static_cast<int>(parse_long_flag(args, "episodes", 0));
  cfg.validate();
  DirLock lock(cfg.out_dir);

  const TrainOutcome outcome =
      train_run(cfg, args.has("checkpoint") ? args.get("checkpoint") : "");
  out << "collected " << outcome.episodes_collected << " episodes, "
      << outcome.updates_done << " learner updates\n"
      << "telemetry: " << path_join(cfg.out_dir, "telemetry.csv") << "\n"
      << "checkpoint: " << outcome.final_checkpoint << "\n";
  if (outcome.aborted) {
    err << "training aborted: " << outcome.abort_reason << "\n"
        << "last good checkpoint: " << outcome.final_checkpoint << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_eval(const CliArgs& args, std::ostream& out) {
  RunConfig cfg = base_config(args);
  cfg.validate();
  DirLock lock(cfg.out_dir);
  const long baseline_n = parse_long_flag(args, "episodes", 5);
  if (baseline_n < 1)
    throw ConfigError("--episodes: need at least one baseline episode");

  const std::string ck_path =
      args.has("checkpoint")
          ? args.get("checkpoint")
          : path_join(path_join(cfg.out_dir, "checkpoints"), "final.json");
  const Checkpoint ck = load_checkpoint(ck_path);

  // Prefer the persisted case files; fall back to regenerating the same
  // deterministic set from the configuration.
  std::vector<Case> cases;
  const std::string cases_dir = path_join(cfg.out_dir, "cases");
  if (fs::is_directory(cases_dir)) {
    const auto files = list_files(cases_dir, "test_", ".json");
    if (files.empty())
      throw ConfigError(cases_dir + ": no test_*.json case files found");
    for (const std::string& f : files) cases.push_back(load_case(f));
  } else {
    cases = make_test_cases(cfg);
  }
  const std::vector<Environment> envs = make_environments(cases, cfg);
  const Policy policy = policy_from_checkpoint(ck, envs.front());

  const std::string eval_dir = path_join(cfg.out_dir, "eval");
  const std::string ep_dir = path_join(eval_dir, "episodes");
  ensure_dir(eval_dir);
  ensure_dir(ep_dir);

  std::vector<double> greedy_pct, baseline_pct;
  std::vector<Series> trajectories;
  std::vector<DVHTable> best_tables;
  std::ostringstream summary;
  summary << "case,greedy_best_pct,baseline_mean_pct,baseline_std_pct\n";

  for (std::size_t i = 0; i < envs.size(); ++i) {
    const Environment& env = envs[i];
    const std::string& id = env.plan_case.id;
    const std::uint64_t block =
        kEvalStream + i * static_cast<std::uint64_t>(baseline_n + 1);

    const EpisodeRecord greedy = run_episode(
        env, policy, 0.0, derive_seed(cfg.base_seed, block), cfg.horizon);
    save_episode(greedy, path_join(ep_dir, "greedy_" + id + ".json"));
    greedy_pct.push_back(100.0 * greedy.best_relative);

    std::vector<double> case_baseline;
    for (long j = 1; j <= baseline_n; ++j) {
      const EpisodeRecord random_ep = run_episode(
          env, policy, 1.0,
          derive_seed(cfg.base_seed, block + static_cast<std::uint64_t>(j)),
          cfg.horizon);
      save_episode(random_ep,
                   path_join(ep_dir, "baseline_" + id + "_" +
                                         std::to_string(j) + ".json"));
      if (!random_ep.failed) {
        case_baseline.push_back(100.0 * random_ep.best_relative);
        baseline_pct.push_back(case_baseline.back());
      }
    }
    double base_mean = 0.0, base_std = 0.0;
    sample_stats(case_baseline, base_mean, base_std);
    summary << id << "," << format_double(greedy_pct.back()) << ","
            << format_double(base_mean) << "," << format_double(base_std)
            << "\n";

    if (!greedy.failed && !greedy.scores.empty()) {
      const auto best = std::max_element(
          greedy.scores.begin(), greedy.scores.end(),
          [](const ScoreBreakdown& a, const ScoreBreakdown& b) {
            return a.total < b.total;
          });
      save_score_csv(*best, path_join(eval_dir, "metrics_" + id + ".csv"));
      const std::size_t best_t =
          static_cast<std::size_t>(best - greedy.scores.begin());
      best_tables.push_back(
          dvh_table_from_state(greedy.states[best_t], env.plan_case));
      trajectories.push_back(score_trajectory(greedy, id));
    }
  }

  double greedy_mean = 0.0, greedy_std = 0.0, base_mean = 0.0, base_std = 0.0;
  sample_stats(greedy_pct, greedy_mean, greedy_std);
  sample_stats(baseline_pct, base_mean, base_std);
  summary << "TOTAL," << format_double(greedy_mean) << ","
          << format_double(base_mean) << "," << format_double(base_std)
          << "\n";
  {
    std::ofstream f(path_join(eval_dir, "eval_summary.csv"));
    if (!f) throw ConfigError("cannot write eval_summary.csv");
    f << summary.str();
  }

  if (!best_tables.empty())
    save_dvh_svg(mean_dvh(best_tables), "Mean DVH across test cases",
                 path_join(eval_dir, "mean_dvh.svg"));
  if (!trajectories.empty())
    save_svg_plot(trajectories,
                  {"Greedy plan score per step", "step", "score (%)"},
                  path_join(eval_dir, "trajectories.svg"));

  std::ostringstream comparison;
  comparison << "quantity,value\n"
             << "cases," << envs.size() << "\n"
             << "baseline_episodes_per_case," << baseline_n << "\n"
             << "greedy_mean_pct," << format_double(greedy_mean) << "\n"
             << "baseline_mean_pct," << format_double(base_mean) << "\n";
  if (greedy_pct.size() >= 2 && baseline_pct.size() >= 2) {
    const TwoSampleTest tt = welch_t_test(greedy_pct, baseline_pct);
    comparison << "welch_t," << format_double(tt.t) << "\n"
               << "welch_dof," << format_double(tt.dof) << "\n"
               << "welch_p_value," << format_double(tt.p_value) << "\n";
  }
  {
    std::ofstream f(path_join(eval_dir, "comparison.csv"));
    if (!f) throw ConfigError("cannot write comparison.csv");
    f << comparison.str();
  }

  out << summary.str() << comparison.str() << "reports: " << eval_dir << "\n";
  return kExitOk;
}

int cmd_score(const CliArgs& args, std::ostream& out, std::ostream& err) {
  ScoreBreakdown sb;
  if (args.has("dvh")) {
    if (args.has("case") || args.has("fluence"))
      throw ConfigError(
          "score: give either --dvh or --case with --fluence, not both");
    const DVHTable table = load_dvh_csv(args.get("dvh"));
    const double rx = parse_double_flag(args, "rx", 60.0);
    if (rx <= 0.0) throw ConfigError("--rx: prescription must be positive");
    sb = score_dvh(table, rx, ScoringSystem::for_names(table.names));
  } else if (args.has("case") && args.has("fluence")) {
    if (args.has("rx"))
      throw ConfigError(
          "--rx applies only to --dvh input; cases carry their own "
          "prescription");
    const Case c = load_case(args.get("case"));
    const Vector fluence = load_fluence(args.get("fluence"));
    if (fluence.size() != c.influence.cols())
      throw ConfigError(
          "fluence length " + std::to_string(fluence.size()) +
          " does not match the case's " + std::to_string(c.influence.cols()) +
          " beamlets");
    sb = plan_score(c.influence * fluence, c,
                    ScoringSystem::for_structures(c.structures));
  } else {
    throw ConfigError("score: need --dvh FILE or --case FILE --fluence FILE");
  }

  if (args.has("out"))
    save_score_csv(sb, args.get("out"));
  else
    write_score_csv(sb, out);
  // Summary on stderr so stdout stays machine-readable CSV.
  err << "total " << format_double(sb.total) << " of "
      << format_double(sb.max_total) << " ("
      << format_double(100.0 * sb.relative()) << "%)\n";
  return kExitOk;
}

int cmd_replay(const CliArgs& args, std::ostream& out) {
  if (!args.has("config") && !args.has("out"))
    throw ConfigError("replay: need --config or --out to locate the run");
  RunConfig cfg = base_config(args);
  DirLock lock(cfg.out_dir);
  const std::string replay_dir = path_join(cfg.out_dir, "replay");
  ensure_dir(replay_dir);
  bool rendered = false;

  const std::string telemetry_path = path_join(cfg.out_dir, "telemetry.csv");
  if (file_exists(telemetry_path)) {
    const auto rows = load_telemetry_csv(telemetry_path);
    if (!rows.empty()) {
      save_training_curves(rows,
                           path_join(replay_dir, "training_curves.svg"));
      out << "training curves from " << rows.size() << " telemetry rows\n";
      rendered = true;
    }
  }

  const std::string episodes_dir = path_join(cfg.out_dir, "episodes");
  if (fs::is_directory(episodes_dir)) {
    const auto files = list_files(episodes_dir, "ep_", ".json");
    if (!files.empty()) {
      std::ofstream summary(path_join(replay_dir, "episode_summary.csv"));
      if (!summary) throw ConfigError("cannot write episode_summary.csv");
      summary << "episode,case,epsilon,best_pct,return,failed\n";
      std::vector<Series> tail;
      for (const std::string& path : files) {
        const EpisodeRecord rec = load_episode(path);
        const std::string stem = file_stem(path);
        summary << stem << "," << rec.case_id << ","
                << format_double(rec.epsilon) << ","
                << format_double(100.0 * rec.best_relative) << ","
                << format_double(rec.episode_return) << ","
                << (rec.failed ? 1 : 0) << "\n";
        if (!rec.failed) {
          tail.push_back(score_trajectory(rec, stem));
          if (tail.size() > 8) tail.erase(tail.begin());
        }
      }
      if (!tail.empty())
        save_svg_plot(tail,
                      {"Plan score per step (latest episodes)", "step",
                       "score (%)"},
                      path_join(replay_dir, "trajectories.svg"));
      out << "episodes summarised: " << files.size() << "\n";
      rendered = true;
    }
  }

  if (!rendered)
    throw ConfigError(cfg.out_dir +
                      ": nothing to replay (no telemetry.csv or episodes/)");
  out << "reports: " << replay_dir << "\n";
  return kExitOk;
}

}  // namespace

CliArgs parse_cli(const std::vector<std::string>& args) {
  if (args.empty()) throw ConfigError("no command given\n" + cli_usage());
  CliArgs parsed;
  parsed.command = args[0];
  if (parsed.command == "help" || parsed.command == "--help" ||
      parsed.command == "-h") {
    parsed.command = "help";
    if (args.size() > 1) throw ConfigError("help takes no arguments");
    return parsed;
  }
  const auto& table = command_flags();
  const auto it = table.find(parsed.command);
  if (it == table.end())
    throw ConfigError("unknown command \"" + parsed.command + "\"\n" +
                      cli_usage());
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& flag = args[i];
    if (flag.rfind("--", 0) != 0)
      throw ConfigError("expected a --flag, got \"" + flag + "\"");
    const std::string name = flag.substr(2);
    if (it->second.count(name) == 0)
      throw ConfigError("unknown flag --" + name + " for command " +
                        parsed.command);
    if (i + 1 >= args.size()) throw ConfigError("--" + name + " needs a value");
    if (parsed.flags.count(name) != 0)
      throw ConfigError("--" + name + " given twice");
    parsed.flags[name] = args[++i];
  }
  return parsed;
}

DirLock::DirLock(const std::string& dir) {
  ensure_dir(dir);
  const std::string path = path_join(dir, ".lock");
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw ConfigError("cannot open lock file " + path);
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError("another command is already running in " + dir);
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) ::close(fd_);  // closing drops the advisory lock
}

std::string cli_usage() {
  return
      "usage: planforge <command> [--flag value ...]\n"
      "\n"
      "commands:\n"
      "  gen     write synthetic case files\n"
      "          --config FILE --seed N --out DIR --train N --test N\n"
      "  train   run training in the output directory\n"
      "          --config FILE --seed N --out DIR --workers K --episodes N\n"
      "          --checkpoint FILE (resume)\n"
      "  eval    evaluate a checkpoint on the test cases\n"
      "          --config FILE --seed N --out DIR --checkpoint FILE\n"
      "          --episodes N (random-baseline episodes per case, default 5)\n"
      "  score   score a DVH table or a case + fluence pair\n"
      "          --dvh FILE [--rx GY] | --case FILE --fluence FILE  [--out FILE]\n"
      "  replay  re-render reports from persisted artifacts\n"
      "          --config FILE | --out DIR\n"
      "  help    show this text\n"
      "\n"
      "exit codes: 0 success, 2 configuration error, 3 numerical failure\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  try {
    const CliArgs parsed = parse_cli(args);
    if (parsed.command == "help") {
      out << cli_usage();
      return kExitOk;
    }
    if (parsed.command == "gen") return cmd_gen(parsed, out);
    if (parsed.command == "train") return cmd_train(parsed, out, err);
    if (parsed.command == "eval") return cmd_eval(parsed, out);
    if (parsed.command == "score") return cmd_score(parsed, out, err);
    return cmd_replay(parsed, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace planforge
