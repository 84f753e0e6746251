#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "planforge/trainer.hpp"

namespace planforge {

// Parsed command line: one subcommand plus --flag value pairs.
struct CliArgs {
  std::string command;
  std::map<std::string, std::string> flags;

  bool has(const std::string& name) const { return flags.count(name) != 0; }
  const std::string& get(const std::string& name) const {
    return flags.at(name);
  }
};

// Accepts exactly the documented commands and their flags; every flag takes
// a value.  Throws ConfigError on anything unrecognised, duplicated, or
// missing its value.
CliArgs parse_cli(const std::vector<std::string>& args);

// Exclusive advisory lock on <dir>/.lock, held for the object's lifetime.
// A second holder on the same directory fails immediately instead of
// waiting, so two commands cannot write into one run directory at once.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

std::string cli_usage();

// Dispatches a full command line (argv without the program name).  Normal
// output goes to `out`, diagnostics to `err`.  Returns kExitOk, kExitConfig
// for configuration/usage errors, or kExitNumeric for numerical failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace planforge
