#include "planforge/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace planforge {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items())
    if (allowed.find(item.key()) == allowed.end())
      throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
}

const json& member(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError(where + ": missing key \"" + key + "\"");
  return *it;
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return member(j, key, where).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": bad value for \"" + key + "\": " + e.what());
  }
}

double checked_finite(double v, const std::string& where) {
  if (!std::isfinite(v))
    throw ConfigError(where + ": non-finite value cannot be written as JSON");
  return v;
}

json vector_to_json(const Vector& v, const std::string& where) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i)
    a.push_back(checked_finite(v(i), where));
  return a;
}

Vector vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const json& e = j[static_cast<std::size_t>(i)];
    if (!e.is_number())
      throw ConfigError(where + ": element " + std::to_string(i) +
                        " is not a number");
    v(i) = e.get<double>();
  }
  return v;
}

json intvector_to_json(const IntVector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

IntVector intvector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  IntVector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const json& e = j[static_cast<std::size_t>(i)];
    if (!e.is_number_integer())
      throw ConfigError(where + ": element " + std::to_string(i) +
                        " is not an integer");
    v(i) = e.get<int>();
  }
  return v;
}

json matrix_to_json(const Matrix& m, const std::string& where) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r)
      data.push_back(checked_finite(m(r, c), where));
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"rows", "cols", "data"});
  const Index rows = get_as<Index>(j, "rows", where);
  const Index cols = get_as<Index>(j, "cols", where);
  if (rows < 0 || cols < 0)
    throw ConfigError(where + ": negative matrix dimensions");
  const json& data = member(j, "data", where);
  if (!data.is_array() ||
      static_cast<Index>(data.size()) != rows * cols)
    throw ConfigError(where + ": data length does not match rows*cols");
  Matrix m(rows, cols);
  Index k = 0;
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) {
      const json& e = data[static_cast<std::size_t>(k++)];
      if (!e.is_number())
        throw ConfigError(where + ": matrix entry is not a number");
      m(r, c) = e.get<double>();
    }
  return m;
}

// Raw float64 sidecar, native (little-endian) byte order.
void write_blob(const std::string& path, const double* data,
                std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw ConfigError("short write to " + path);
}

std::vector<double> read_blob(const std::string& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ConfigError("cannot open " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(double))
    throw ConfigError(path + ": expected " +
                      std::to_string(count * sizeof(double)) + " bytes, found " +
                      std::to_string(bytes));
  std::vector<double> data(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw ConfigError("short read from " + path);
  return data;
}

// <dir>/<stem>.json -> <dir>/<stem>.bin; the JSON stores only the basename so
// the pair stays valid when the directory moves.
std::string sidecar_path(const std::string& json_path) {
  fs::path p(json_path);
  p.replace_extension(".bin");
  return p.string();
}

std::string sibling(const std::string& json_path, const std::string& name) {
  return (fs::path(json_path).parent_path() / name).string();
}

// Mask as [start, length, start, length, ...] runs over the flat index.
json rle_encode(const std::vector<std::uint8_t>& mask) {
  json runs = json::array();
  const int n = static_cast<int>(mask.size());
  for (int i = 0; i < n;) {
    if (!mask[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    const int start = i;
    while (i < n && mask[static_cast<std::size_t>(i)]) ++i;
    runs.push_back(start);
    runs.push_back(i - start);
  }
  return runs;
}

std::vector<std::uint8_t> rle_decode(const json& runs, int n,
                                     const std::string& where) {
  if (!runs.is_array() || runs.size() % 2 != 0)
    throw ConfigError(where + ": mask runs must be [start, length] pairs");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 0; k + 1 < runs.size(); k += 2) {
    if (!runs[k].is_number_integer() || !runs[k + 1].is_number_integer())
      throw ConfigError(where + ": mask run entries must be integers");
    const int start = runs[k].get<int>();
    const int len = runs[k + 1].get<int>();
    if (start < 0 || len <= 0 || start + len > n)
      throw ConfigError(where + ": mask run out of range");
    for (int i = start; i < start + len; ++i)
      mask[static_cast<std::size_t>(i)] = 1;
  }
  return mask;
}

json score_to_json(const ScoreBreakdown& b, const std::string& where) {
  json j;
  json entries = json::array();
  for (const MetricScore& e : b.entries) {
    entries.push_back({{"structure", e.structure},
                       {"label", e.label},
                       {"value", checked_finite(e.value, where)},
                       {"score", checked_finite(e.score, where)},
                       {"max_score", checked_finite(e.max_score, where)}});
  }
  j["entries"] = std::move(entries);
  j["total"] = checked_finite(b.total, where);
  j["max_total"] = checked_finite(b.max_total, where);
  return j;
}

ScoreBreakdown score_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"entries", "total", "max_total"});
  ScoreBreakdown b;
  const json& entries = member(j, "entries", where);
  if (!entries.is_array()) throw ConfigError(where + ": entries must be an array");
  for (const json& e : entries) {
    require_keys(e, where + " entry",
                 {"structure", "label", "value", "score", "max_score"});
    MetricScore m;
    m.structure = get_as<std::string>(e, "structure", where);
    m.label = get_as<std::string>(e, "label", where);
    m.value = get_as<double>(e, "value", where);
    m.score = get_as<double>(e, "score", where);
    m.max_score = get_as<double>(e, "max_score", where);
    b.entries.push_back(std::move(m));
  }
  b.total = get_as<double>(j, "total", where);
  b.max_total = get_as<double>(j, "max_total", where);
  return b;
}

// Fixed set order shared by the checkpoint writer and reader.
struct SetDescriptor {
  const char* label;
  ParamSet Checkpoint::*member;
};

constexpr std::array<SetDescriptor, 8> kCheckpointSets{{
    {"online_agent", &Checkpoint::online_agent},
    {"online_mixer", &Checkpoint::online_mixer},
    {"target_agent", &Checkpoint::target_agent},
    {"target_mixer", &Checkpoint::target_mixer},
    {"adam_agent_m", &Checkpoint::adam_agent_m},
    {"adam_agent_v", &Checkpoint::adam_agent_v},
    {"adam_mixer_m", &Checkpoint::adam_mixer_m},
    {"adam_mixer_v", &Checkpoint::adam_mixer_v},
}};

}  // namespace

// ---------------------------------------------------------------------------
// Filesystem helpers
// ---------------------------------------------------------------------------

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw ConfigError("cannot create directory " + path + ": " + ec.message());
}

std::string path_join(const std::string& a, const std::string& b) {
  return (fs::path(a) / b).string();
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_csv_double(const std::string& field, const std::string& path,
                        int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ConfigError(path + ":" + std::to_string(line_no) +
                      ": not a number: \"" + field + "\"");
  return v;
}

std::vector<std::string> list_files(const std::string& dir,
                                    const std::string& prefix,
                                    const std::string& suffix) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return {};
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < prefix.size() + suffix.size()) continue;
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::vector<std::string> paths;
  paths.reserve(names.size());
  for (const std::string& n : names) paths.push_back(path_join(dir, n));
  return paths;
}

// ---------------------------------------------------------------------------
// Cases
// ---------------------------------------------------------------------------

void save_case(const Case& c, const std::string& json_path) {
  c.validate();
  const std::string bin_path = sidecar_path(json_path);
  json j;
  j["id"] = c.id;
  j["prescription_gy"] = checked_finite(c.prescription_gy, "case");
  j["grid"] = {{"nx", c.grid.nx},
               {"ny", c.grid.ny},
               {"voxel_size_mm", c.grid.voxel_size_mm}};
  json structures = json::array();
  for (const Structure& s : c.structures.structures)
    structures.push_back({{"name", s.name}, {"mask_rle", rle_encode(s.mask)}});
  j["structures"] = std::move(structures);
  j["beams"] = {{"gantry_angles_deg", c.beams.gantry_angles_deg},
                {"beamlets_per_field", c.beams.beamlets_per_field},
                {"lateral_sigma_mm", c.beams.lateral_sigma_mm},
                {"beamlet_offsets_mm", c.beams.beamlet_offsets_mm},
                {"depth_profile", c.beams.depth_profile},
                {"depth_step_mm", c.beams.depth_step_mm}};
  j["influence"] = {{"rows", c.influence.rows()},
                    {"cols", c.influence.cols()},
                    {"file", fs::path(bin_path).filename().string()}};
  write_blob(bin_path, c.influence.data(),
             static_cast<std::size_t>(c.influence.size()));
  std::ofstream out(json_path);
  if (!out) throw ConfigError("cannot write " + json_path);
  out << j.dump(2) << "\n";
}

Case load_case(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ConfigError("cannot open " + json_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(json_path + " is not valid JSON: " + e.what());
  }
  const std::string where = "case " + json_path;
  require_keys(j, where,
               {"id", "prescription_gy", "grid", "structures", "beams",
                "influence"});
  Case c;
  c.id = get_as<std::string>(j, "id", where);
  c.prescription_gy = get_as<double>(j, "prescription_gy", where);

  const json& g = member(j, "grid", where);
  require_keys(g, where + ".grid", {"nx", "ny", "voxel_size_mm"});
  c.grid.nx = get_as<int>(g, "nx", where);
  c.grid.ny = get_as<int>(g, "ny", where);
  c.grid.voxel_size_mm = get_as<double>(g, "voxel_size_mm", where);
  c.grid.validate();

  const json& structures = member(j, "structures", where);
  if (!structures.is_array())
    throw ConfigError(where + ": structures must be an array");
  for (const json& sj : structures) {
    require_keys(sj, where + " structure", {"name", "mask_rle"});
    Structure s;
    s.name = get_as<std::string>(sj, "name", where);
    s.mask = rle_decode(member(sj, "mask_rle", where), c.grid.voxel_count(),
                        where + " structure " + s.name);
    c.structures.structures.push_back(std::move(s));
  }

  const json& b = member(j, "beams", where);
  require_keys(b, where + ".beams",
               {"gantry_angles_deg", "beamlets_per_field", "lateral_sigma_mm",
                "beamlet_offsets_mm", "depth_profile", "depth_step_mm"});
  c.beams.gantry_angles_deg =
      get_as<std::vector<double>>(b, "gantry_angles_deg", where);
  c.beams.beamlets_per_field = get_as<int>(b, "beamlets_per_field", where);
  c.beams.lateral_sigma_mm = get_as<double>(b, "lateral_sigma_mm", where);
  c.beams.beamlet_offsets_mm =
      get_as<std::vector<double>>(b, "beamlet_offsets_mm", where);
  c.beams.depth_profile = get_as<std::vector<double>>(b, "depth_profile", where);
  c.beams.depth_step_mm = get_as<double>(b, "depth_step_mm", where);

  const json& inf = member(j, "influence", where);
  require_keys(inf, where + ".influence", {"rows", "cols", "file"});
  const Index rows = get_as<Index>(inf, "rows", where);
  const Index cols = get_as<Index>(inf, "cols", where);
  if (rows != c.grid.voxel_count())
    throw ConfigError(where + ": influence rows do not match the grid");
  const std::string bin_path =
      sibling(json_path, get_as<std::string>(inf, "file", where));
  const std::vector<double> blob =
      read_blob(bin_path, static_cast<std::size_t>(rows * cols));
  c.influence = Eigen::Map<const Matrix>(blob.data(), rows, cols);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

void save_episode(const EpisodeRecord& rec, const std::string& path) {
  const std::string where = "episode";
  json j;
  j["case_id"] = rec.case_id;
  j["seed"] = rec.seed;
  j["epsilon"] = checked_finite(rec.epsilon, where);
  json states = json::array();
  for (const Matrix& s : rec.states) states.push_back(matrix_to_json(s, where));
  j["states"] = std::move(states);
  json scores = json::array();
  for (const ScoreBreakdown& b : rec.scores)
    scores.push_back(score_to_json(b, where));
  j["scores"] = std::move(scores);
  json tuner = json::array();
  for (const TunerState& t : rec.tuner) tuner.push_back(intvector_to_json(t.x));
  j["tuner"] = std::move(tuner);
  json parameters = json::array();
  for (const Vector& p : rec.parameters)
    parameters.push_back(vector_to_json(p, where));
  j["parameters"] = std::move(parameters);
  json actions = json::array();
  for (const ActionVector& a : rec.actions)
    actions.push_back(intvector_to_json(a));
  j["actions"] = std::move(actions);
  j["rewards"] = vector_to_json(rec.rewards, where);
  j["episode_return"] = checked_finite(rec.episode_return, where);
  j["best_relative"] = checked_finite(rec.best_relative, where);
  j["failed"] = rec.failed;
  j["failure_reason"] = rec.failure_reason;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump() << "\n";
}

EpisodeRecord load_episode(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
  const std::string where = "episode " + path;
  require_keys(j, where,
               {"case_id", "seed", "epsilon", "states", "scores", "tuner",
                "parameters", "actions", "rewards", "episode_return",
                "best_relative", "failed", "failure_reason"});
  EpisodeRecord rec;
  rec.case_id = get_as<std::string>(j, "case_id", where);
  rec.seed = get_as<std::uint64_t>(j, "seed", where);
  rec.epsilon = get_as<double>(j, "epsilon", where);
  for (const json& s : member(j, "states", where))
    rec.states.push_back(matrix_from_json(s, where + ".states"));
  for (const json& s : member(j, "scores", where))
    rec.scores.push_back(score_from_json(s, where + ".scores"));
  for (const json& t : member(j, "tuner", where)) {
    TunerState ts;
    ts.x = intvector_from_json(t, where + ".tuner");
    rec.tuner.push_back(std::move(ts));
  }
  for (const json& p : member(j, "parameters", where))
    rec.parameters.push_back(vector_from_json(p, where + ".parameters"));
  for (const json& a : member(j, "actions", where))
    rec.actions.push_back(intvector_from_json(a, where + ".actions"));
  rec.rewards = vector_from_json(member(j, "rewards", where), where + ".rewards");
  rec.episode_return = get_as<double>(j, "episode_return", where);
  rec.best_relative = get_as<double>(j, "best_relative", where);
  rec.failed = get_as<bool>(j, "failed", where);
  rec.failure_reason = get_as<std::string>(j, "failure_reason", where);
  if (!rec.failed) rec.validate(rec.horizon());
  return rec;
}

void reload_bank(DataBank& bank, const std::string& episodes_dir) {
  for (const std::string& path : list_files(episodes_dir, "ep_", ".json")) {
    EpisodeRecord rec = load_episode(path);
    if (!rec.failed) bank.push(std::move(rec));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const std::string& json_path) {
  const std::string bin_path = sidecar_path(json_path);
  json j;
  j["config"] = config_to_json(ckpt.config);
  j["counters"] = {{"update_count", ckpt.update_count},
                   {"episode_count", ckpt.episode_count},
                   {"last_sync_step", ckpt.last_sync_step},
                   {"adam_agent_t", ckpt.adam_agent_t},
                   {"adam_mixer_t", ckpt.adam_mixer_t}};
  j["sampler_state"] = ckpt.sampler_state;

  std::vector<double> blob;
  json sets;
  for (const SetDescriptor& d : kCheckpointSets) {
    const ParamSet& ps = ckpt.*(d.member);
    json tensors = json::array();
    for (const Tensor& t : ps.tensors) {
      tensors.push_back({{"name", t.name},
                         {"rows", t.rows},
                         {"cols", t.cols},
                         {"offset", blob.size()}});
      blob.insert(blob.end(), t.data.data(), t.data.data() + t.data.size());
    }
    sets[d.label] = std::move(tensors);
  }
  j["tensors"] = {{"file", fs::path(bin_path).filename().string()},
                  {"total", blob.size()},
                  {"sets", std::move(sets)}};
  write_blob(bin_path, blob.data(), blob.size());
  std::ofstream out(json_path);
  if (!out) throw ConfigError("cannot write " + json_path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ConfigError("cannot open " + json_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(json_path + " is not valid JSON: " + e.what());
  }
  const std::string where = "checkpoint " + json_path;
  require_keys(j, where, {"config", "counters", "sampler_state", "tensors"});

  Checkpoint ckpt;
  ckpt.config = config_from_json(member(j, "config", where));

  const json& counters = member(j, "counters", where);
  require_keys(counters, where + ".counters",
               {"update_count", "episode_count", "last_sync_step",
                "adam_agent_t", "adam_mixer_t"});
  ckpt.update_count = get_as<long>(counters, "update_count", where);
  ckpt.episode_count = get_as<long>(counters, "episode_count", where);
  ckpt.last_sync_step = get_as<long>(counters, "last_sync_step", where);
  ckpt.adam_agent_t = get_as<long>(counters, "adam_agent_t", where);
  ckpt.adam_mixer_t = get_as<long>(counters, "adam_mixer_t", where);

  const json& rng_state = member(j, "sampler_state", where);
  if (!rng_state.is_array() || rng_state.size() != ckpt.sampler_state.size())
    throw ConfigError(where + ": sampler_state must hold 4 words");
  for (std::size_t i = 0; i < ckpt.sampler_state.size(); ++i)
    ckpt.sampler_state[i] = rng_state[i].get<std::uint64_t>();

  const json& tj = member(j, "tensors", where);
  require_keys(tj, where + ".tensors", {"file", "total", "sets"});
  const auto total = get_as<std::size_t>(tj, "total", where);
  const std::string bin_path =
      sibling(json_path, get_as<std::string>(tj, "file", where));
  const std::vector<double> blob = read_blob(bin_path, total);

  const json& sets = member(tj, "sets", where);
  std::set<std::string> labels;
  for (const SetDescriptor& d : kCheckpointSets) labels.insert(d.label);
  require_keys(sets, where + ".tensors.sets", labels);
  std::size_t expected_offset = 0;
  for (const SetDescriptor& d : kCheckpointSets) {
    ParamSet& ps = ckpt.*(d.member);
    for (const json& t : member(sets, d.label, where)) {
      require_keys(t, where + " tensor", {"name", "rows", "cols", "offset"});
      const auto name = get_as<std::string>(t, "name", where);
      const Index rows = get_as<Index>(t, "rows", where);
      const Index cols = get_as<Index>(t, "cols", where);
      const auto offset = get_as<std::size_t>(t, "offset", where);
      if (offset != expected_offset)
        throw ConfigError(where + ": tensor \"" + name +
                          "\" offset does not match the layout");
      const auto count = static_cast<std::size_t>(rows * cols);
      if (offset + count > blob.size())
        throw ConfigError(where + ": tensor \"" + name +
                          "\" overruns the data file");
      Tensor& tensor = ps.add(name, rows, cols);
      std::copy(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                blob.begin() + static_cast<std::ptrdiff_t>(offset + count),
                tensor.data.data());
      expected_offset += count;
    }
    if (!ps.tensors.empty()) ps.validate();
  }
  if (expected_offset != blob.size())
    throw ConfigError(where + ": data file has unreferenced trailing bytes");
  return ckpt;
}

// ---------------------------------------------------------------------------
// DVH tables
// ---------------------------------------------------------------------------

void save_dvh_csv(const DVHTable& table, const std::string& path) {
  table.validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "structure,volume_cc";
  for (Index k = 0; k < table.edges_gy.size(); ++k)
    out << "," << format_double(table.edges_gy(k));
  out << "\n";
  for (std::size_t i = 0; i < table.names.size(); ++i) {
    out << table.names[i] << ","
        << format_double(table.volumes_cc(static_cast<Index>(i)));
    for (Index k = 0; k < table.values.cols(); ++k)
      out << "," << format_double(table.values(static_cast<Index>(i), k));
    out << "\n";
  }
}

DVHTable load_dvh_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  int line_no = 0;

  if (!std::getline(in, line))
    throw ConfigError(path + ":1: empty file, expected a header row");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv(line);
  if (header.size() < 3 || header[0] != "structure" || header[1] != "volume_cc")
    throw ConfigError(path +
                      ":1: header must be structure,volume_cc,<dose edges>");
  const std::size_t n_edges = header.size() - 2;

  DVHTable table;
  table.edges_gy.resize(static_cast<Index>(n_edges));
  for (std::size_t k = 0; k < n_edges; ++k)
    table.edges_gy(static_cast<Index>(k)) =
        parse_csv_double(header[k + 2], path, 1);

  std::vector<Vector> rows;
  std::vector<double> volumes;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != header.size())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    if (fields[0].empty())
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": empty structure name");
    table.names.push_back(fields[0]);
    volumes.push_back(parse_csv_double(fields[1], path, line_no));
    Vector row(static_cast<Index>(n_edges));
    for (std::size_t k = 0; k < n_edges; ++k)
      row(static_cast<Index>(k)) = parse_csv_double(fields[k + 2], path, line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw ConfigError(path + ": no structure rows after the header");

  table.volumes_cc = Eigen::Map<const Vector>(volumes.data(),
                                              static_cast<Index>(volumes.size()));
  table.values.resize(static_cast<Index>(rows.size()),
                      static_cast<Index>(n_edges));
  for (std::size_t i = 0; i < rows.size(); ++i)
    table.values.row(static_cast<Index>(i)) = rows[i].transpose();
  try {
    table.validate();
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return table;
}

DVHTable dvh_table_for(const Vector& dose, const Case& c) {
  const int bins = kDvhBins;
  DVHTable table;
  table.edges_gy.resize(bins);
  for (int k = 0; k < bins; ++k)
    table.edges_gy(k) = dvh_edge_gy(k, c.prescription_gy, bins);

  const Index ns = c.structures.size();
  table.volumes_cc.resize(ns + 1);
  table.values.resize(ns + 1, bins);
  const Matrix curves = compute_dvh(dose, c.structures, c.prescription_gy, bins);
  for (Index i = 0; i < ns; ++i) {
    table.names.push_back(c.structures.at(i).name);
    table.volumes_cc(i) =
        c.structures.at(i).voxel_count() * c.grid.voxel_volume_cc();
    table.values.row(i) = curves.row(i);
  }

  // Whole-grid row so conformity stays computable from the table alone.
  table.names.push_back("BODY");
  table.volumes_cc(ns) = c.grid.voxel_count() * c.grid.voxel_volume_cc();
  std::vector<double> sorted(dose.data(), dose.data() + dose.size());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (int k = 0; k < bins; ++k) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(),
                                     table.edges_gy(k));
    table.values(ns, k) =
        static_cast<double>(sorted.end() - it) / n;
  }
  table.validate();
  return table;
}

// ---------------------------------------------------------------------------
// Fluence
// ---------------------------------------------------------------------------

void save_fluence(const Vector& fluence, const std::string& path) {
  json j;
  j["fluence"] = vector_to_json(fluence, "fluence");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump() << "\n";
}

Vector load_fluence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
  const std::string where = "fluence " + path;
  require_keys(j, where, {"fluence"});
  const Vector f = vector_from_json(member(j, "fluence", where), where);
  for (Index i = 0; i < f.size(); ++i)
    if (f(i) < 0.0)
      throw ConfigError(where + ": beamlet " + std::to_string(i) +
                        " is negative");
  return f;
}

}  // namespace planforge
