#include "physssm/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "physssm/errors.hpp"

namespace physssm {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointHeader = "physssm-checkpoint 1";
constexpr int kDatasetVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError(where + ": cannot parse number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

json range_json(const UniformRange& r) { return json::array({r.lo, r.hi}); }
UniformRange range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t split) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), 0x5eedu};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void write_split_csv(const fs::path& path, const IrregularSet& set) {
  std::ostringstream os;
  if (set.trajectories.empty()) {
    os << "traj,index,orig_index,time\n";
    write_text_file(path, os.str());
    return;
  }
  const auto& first = set.trajectories.front();
  const auto dx = first.observations.front().size();
  const auto du = first.controls.front().size();
  const auto dz = first.states.front().size();
  os << "traj,index,orig_index,time";
  for (Eigen::Index d = 0; d < dx; ++d) os << ",x" << d;
  for (Eigen::Index d = 0; d < dx; ++d) os << ",clean" << d;
  for (Eigen::Index d = 0; d < du; ++d) os << ",u" << d;
  for (Eigen::Index d = 0; d < dz; ++d) os << ",z" << d;
  os << '\n';
  for (std::size_t k = 0; k < set.trajectories.size(); ++k) {
    const auto& tr = set.trajectories[k];
    for (std::size_t i = 0; i < tr.size(); ++i) {
      os << k << ',' << i << ',' << tr.retained_indices[i] << ',' << fmt_double(tr.times[i]);
      for (Eigen::Index d = 0; d < dx; ++d) os << ',' << fmt_double(tr.observations[i](d));
      for (Eigen::Index d = 0; d < dx; ++d) os << ',' << fmt_double(tr.clean_observations[i](d));
      for (Eigen::Index d = 0; d < du; ++d) os << ',' << fmt_double(tr.controls[i](d));
      for (Eigen::Index d = 0; d < dz; ++d) os << ',' << fmt_double(tr.states[i](d));
      os << '\n';
    }
  }
  write_text_file(path, os.str());
}

IrregularSet read_split_csv(const fs::path& path, const DataConfig& cfg, int dx, int du, int dz) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  const auto header = split(line, ',');
  const std::size_t expected = 4 + 2 * static_cast<std::size_t>(dx) + du + dz;
  IrregularSet set;
  set.system = cfg.system;
  set.dt = cfg.dt;
  if (header.size() == 4) return set;
  if (header.size() != expected) {
    throw ConfigError(path.string() + ": expected " + std::to_string(expected) + " columns");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != expected) throw ConfigError(where + ": wrong column count");
    const auto k = static_cast<std::size_t>(std::stoul(cells[0]));
    if (k == set.trajectories.size()) {
      IrregularTrajectory tr;
      tr.noise_sigma = cfg.noise_sigma;
      tr.drop_rate = cfg.drop_rate;
      set.trajectories.push_back(std::move(tr));
    } else if (k + 1 != set.trajectories.size()) {
      throw ConfigError(where + ": trajectories must be contiguous and ordered");
    }
    auto& tr = set.trajectories.back();
    std::size_t c = 2;
    tr.retained_indices.push_back(static_cast<std::size_t>(std::stoul(cells[c++])));
    tr.times.push_back(parse_double(cells[c++], where));
    auto read_vec = [&](int n) {
      Vector v(n);
      for (int d = 0; d < n; ++d) v(d) = parse_double(cells[c++], where);
      return v;
    };
    tr.observations.push_back(read_vec(dx));
    tr.clean_observations.push_back(read_vec(dx));
    tr.controls.push_back(read_vec(du));
    tr.states.push_back(read_vec(dz));
  }
  for (auto& tr : set.trajectories) tr.validate();
  return set;
}

}  // namespace

// ---------------------------------------------------------------- dataset

void DataConfig::validate() const {
  if (system != "pendulum" && system != "sir") throw ConfigError("unknown system: " + system);
  if (n_train < 1 || n_val < 0 || n_test < 0) throw ConfigError("split sizes must be positive");
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  if (!(noise_sigma >= 0)) throw ConfigError("noise must be non-negative");
  if (!(drop_rate >= 0 && drop_rate < 1)) throw ConfigError("drop rate must lie in [0, 1)");
}

int Dataset::obs_dim() const {
  return static_cast<int>(train.trajectories.at(0).observations.at(0).size());
}
int Dataset::control_dim() const {
  return static_cast<int>(train.trajectories.at(0).controls.at(0).size());
}
int Dataset::state_dim() const {
  return static_cast<int>(train.trajectories.at(0).states.at(0).size());
}

Dataset build_dataset(const DataConfig& config) {
  config.validate();
  Dataset d;
  d.config = config;
  const int sizes[3] = {config.n_train, config.n_val, config.n_test};
  TrajectorySet clean[3];
  for (int s = 0; s < 3; ++s) {
    clean[s] = generate_dataset(config.system, sizes[s], config.horizon, config.dt, config.sampler,
                                split_seed(config.seed, static_cast<std::uint64_t>(s)));
  }
  const auto dx = clean[0].trajectories.front().observations.front().size();
  d.normalization = config.normalize ? fit_normalization(clean[0]) : Normalization::identity(dx);
  if (config.normalize) {
    for (auto& c : clean) apply_normalization(c, d.normalization);
  }
  IrregularSet* out[3] = {&d.train, &d.val, &d.test};
  for (int s = 0; s < 3; ++s) {
    *out[s] = corrupt(clean[s], config.noise_sigma, config.drop_rate,
                      split_seed(config.seed, 100 + static_cast<std::uint64_t>(s)));
  }
  return d;
}

json data_config_to_json(const DataConfig& c) {
  const auto& p = c.sampler.pendulum;
  const auto& s = c.sampler.sir;
  return json{
      {"system", c.system},
      {"n_train", c.n_train},
      {"n_val", c.n_val},
      {"n_test", c.n_test},
      {"horizon", c.horizon},
      {"dt", c.dt},
      {"noise_sigma", c.noise_sigma},
      {"drop_rate", c.drop_rate},
      {"seed", c.seed},
      {"normalize", c.normalize},
      {"pendulum",
       {{"length", range_json(p.length)},
        {"amplitude", range_json(p.amplitude)},
        {"theta0", range_json(p.theta0)},
        {"omega0", range_json(p.omega0)},
        {"mass", p.mass},
        {"gravity", p.gravity},
        {"damping", p.damping},
        {"control_frequency", p.control_frequency}}},
      {"sir",
       {{"contact_rate", range_json(s.contact_rate)},
        {"removal_rate", range_json(s.removal_rate)},
        {"infected0", range_json(s.infected0)},
        {"population", s.population},
        {"profile_knots", s.profile_knots},
        {"profile_spread", s.profile_spread}}},
  };
}

DataConfig data_config_from_json(const json& j) {
  DataConfig c;
  c.system = j.at("system").get<std::string>();
  c.n_train = j.at("n_train").get<int>();
  c.n_val = j.at("n_val").get<int>();
  c.n_test = j.at("n_test").get<int>();
  c.horizon = j.at("horizon").get<int>();
  c.dt = j.at("dt").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.drop_rate = j.at("drop_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.normalize = j.at("normalize").get<bool>();
  const auto& p = j.at("pendulum");
  auto& ps = c.sampler.pendulum;
  ps.length = range_from(p.at("length"));
  ps.amplitude = range_from(p.at("amplitude"));
  ps.theta0 = range_from(p.at("theta0"));
  ps.omega0 = range_from(p.at("omega0"));
  ps.mass = p.at("mass").get<double>();
  ps.gravity = p.at("gravity").get<double>();
  ps.damping = p.at("damping").get<double>();
  ps.control_frequency = p.at("control_frequency").get<double>();
  const auto& s = j.at("sir");
  auto& ss = c.sampler.sir;
  ss.contact_rate = range_from(s.at("contact_rate"));
  ss.removal_rate = range_from(s.at("removal_rate"));
  ss.infected0 = range_from(s.at("infected0"));
  ss.population = s.at("population").get<double>();
  ss.profile_knots = s.at("profile_knots").get<int>();
  ss.profile_spread = s.at("profile_spread").get<double>();
  return c;
}

void write_dataset(const Dataset& data, const fs::path& dir, bool overwrite) {
  const fs::path manifest = dir / "manifest.json";
  ensure_writable(manifest, overwrite);
  fs::create_directories(dir);
  json m;
  m["format"] = "physssm-dataset";
  m["version"] = kDatasetVersion;
  m["config"] = data_config_to_json(data.config);
  m["obs_dim"] = data.obs_dim();
  m["control_dim"] = data.control_dim();
  m["state_dim"] = data.state_dim();
  m["normalization"] = {{"mean", std::vector<double>(data.normalization.mean.data(),
                                                     data.normalization.mean.data() +
                                                         data.normalization.mean.size())},
                        {"std", std::vector<double>(data.normalization.std.data(),
                                                    data.normalization.std.data() +
                                                        data.normalization.std.size())}};
  json files = json::object();
  const std::pair<const char*, const IrregularSet*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, set] : splits) {
    const std::string file = std::string(name) + ".csv";
    ensure_writable(dir / file, overwrite);
    write_split_csv(dir / file, *set);
    files[name] = {{"file", file}, {"trajectories", set->trajectories.size()}};
  }
  m["splits"] = files;
  write_text_file(manifest, m.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw ConfigError("no dataset manifest at " + manifest.string());
  json m;
  try {
    m = json::parse(read_text_file(manifest));
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + manifest.string() + ": " + e.what());
  }
  if (m.value("format", "") != "physssm-dataset" || m.value("version", 0) != kDatasetVersion) {
    throw ConfigError(manifest.string() + ": unsupported dataset format");
  }
  Dataset d;
  try {
    d.config = data_config_from_json(m.at("config"));
    const int dx = m.at("obs_dim").get<int>();
    const int du = m.at("control_dim").get<int>();
    const int dz = m.at("state_dim").get<int>();
    const auto mean = m.at("normalization").at("mean").get<std::vector<double>>();
    const auto sd = m.at("normalization").at("std").get<std::vector<double>>();
    d.normalization.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    d.normalization.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    const auto& splits = m.at("splits");
    d.train = read_split_csv(dir / splits.at("train").at("file").get<std::string>(), d.config, dx, du, dz);
    d.val = read_split_csv(dir / splits.at("val").at("file").get<std::string>(), d.config, dx, du, dz);
    d.test = read_split_csv(dir / splits.at("test").at("file").get<std::string>(), d.config, dx, du, dz);
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + manifest.string() + ": " + e.what());
  }
  if (d.train.trajectories.empty()) throw ConfigError("dataset has no training trajectories");
  return d;
}

// ---------------------------------------------------------------- model config

namespace {

json stack_json(const SSMStackConfig& s) {
  return {{"width", s.width},
          {"state_size", s.state_size},
          {"layers", s.layers},
          {"delta_mode", to_string(s.delta_mode)}};
}

SSMStackConfig stack_from(const json& j) {
  SSMStackConfig s;
  s.width = j.at("width").get<int>();
  s.state_size = j.at("state_size").get<int>();
  s.layers = j.at("layers").get<int>();
  s.delta_mode = delta_mode_from_string(j.at("delta_mode").get<std::string>());
  return s;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {
      {"system", c.system},
      {"obs_dim", c.obs_dim},
      {"population", c.population},
      {"prenet_hidden", c.prenet_hidden},
      {"prenet_layers", c.prenet_layers},
      {"encoder", stack_json(c.encoder)},
      {"transition", to_string(c.transition)},
      {"learner",
       {{"kind", c.learner.kind == LearnerKind::Stack ? "stack" : "constant"},
        {"stack_A", stack_json(c.learner.stack_A)},
        {"stack_B", stack_json(c.learner.stack_B)},
        {"learn_B", c.learner.learn_B},
        {"output_scale", c.learner.output_scale}}},
      {"data_driven", stack_json(c.data_driven)},
      {"decoder_hidden", c.decoder_hidden},
      {"decoder_layers", c.decoder_layers},
      {"log_std_min", c.log_std_min},
      {"log_std_max", c.log_std_max},
      {"prior_log_std_init", c.prior_log_std_init},
      {"prior_mean_linear", c.prior_mean_linear},
      {"obs_scale", c.obs_scale},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.system = j.at("system").get<std::string>();
  c.obs_dim = j.at("obs_dim").get<int>();
  c.population = j.at("population").get<double>();
  c.prenet_hidden = j.at("prenet_hidden").get<int>();
  c.prenet_layers = j.at("prenet_layers").get<int>();
  c.encoder = stack_from(j.at("encoder"));
  c.transition = transition_from_string(j.at("transition").get<std::string>());
  const auto& l = j.at("learner");
  const auto kind = l.at("kind").get<std::string>();
  if (kind != "stack" && kind != "constant") throw ConfigError("unknown learner kind: " + kind);
  c.learner.kind = kind == "stack" ? LearnerKind::Stack : LearnerKind::Constant;
  c.learner.stack_A = stack_from(l.at("stack_A"));
  c.learner.stack_B = stack_from(l.at("stack_B"));
  c.learner.learn_B = l.at("learn_B").get<bool>();
  c.learner.output_scale = l.at("output_scale").get<double>();
  c.data_driven = stack_from(j.at("data_driven"));
  c.decoder_hidden = j.at("decoder_hidden").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.log_std_min = j.at("log_std_min").get<double>();
  c.log_std_max = j.at("log_std_max").get<double>();
  c.prior_log_std_init = j.at("prior_log_std_init").get<double>();
  c.prior_mean_linear = j.at("prior_mean_linear").get<bool>();
  c.obs_scale = j.at("obs_scale").get<double>();
  return c;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const PhySSMModel& model, const fs::path& path, const json& meta) {
  std::ostringstream os;
  os << kCheckpointHeader << '\n';
  os << "config " << model_config_to_json(model.config()).dump() << '\n';
  os << "meta " << meta.dump() << '\n';
  const auto params = model.params().all();
  os << "tensors " << params.size() << '\n';
  for (const auto* p : params) {
    os << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        if (c) os << ' ';
        os << fmt_hex(p->value(r, c));
      }
      os << '\n';
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, os.str());
}

PhySSMModel load_checkpoint(const fs::path& path, json* meta) {
  std::istringstream in(read_text_file(path));
  std::string line;
  const std::string where = "checkpoint " + path.string();
  if (!std::getline(in, line) || line != kCheckpointHeader) throw ConfigError(where + ": bad header");
  auto read_tagged = [&](const std::string& tag) {
    if (!std::getline(in, line) || line.rfind(tag + " ", 0) != 0) {
      throw ConfigError(where + ": missing '" + tag + "' line");
    }
    return line.substr(tag.size() + 1);
  };
  ModelConfig cfg;
  json meta_json;
  try {
    cfg = model_config_from_json(json::parse(read_tagged("config")));
    meta_json = json::parse(read_tagged("meta"));
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  const std::size_t count = std::stoul(read_tagged("tensors"));
  PhySSMModel model(cfg, 0);
  auto params = model.params().all();
  if (params.size() != count) {
    throw ConfigError(where + ": tensor count " + std::to_string(count) + " does not match model (" +
                      std::to_string(params.size()) + ")");
  }
  for (auto* p : params) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw ConfigError(where + ": truncated tensor header");
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
      throw ConfigError(where + ": tensor " + name + " does not match " + p->name);
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::string tok;
        if (!(in >> tok)) throw ConfigError(where + ": truncated tensor " + name);
        p->value(r, c) = parse_double(tok, where);
      }
    }
  }
  if (meta) *meta = std::move(meta_json);
  return model;
}

// ---------------------------------------------------------------- prediction dumps

void write_prediction_dump(const fs::path& path, const IrregularSet& set,
                           const Prediction& prediction, std::size_t window, std::size_t horizon) {
  if (prediction.recon.size() != window || prediction.extrap.size() != horizon) {
    throw ShapeError("prediction dump: window/horizon do not match the prediction");
  }
  std::ostringstream os;
  const auto dx = set.trajectories.at(0).observations.at(0).size();
  os << "traj,source,step,time";
  for (Eigen::Index d = 0; d < dx; ++d) os << ",x" << d;
  os << '\n';
  for (std::size_t k = 0; k < set.trajectories.size(); ++k) {
    const auto& tr = set.trajectories[k];
    const auto col = static_cast<Eigen::Index>(k);
    auto row = [&](const char* source, std::size_t step, const Eigen::Ref<const Vector>& x) {
      os << k << ',' << source << ',' << step << ',' << fmt_double(tr.times[step]);
      for (Eigen::Index d = 0; d < dx; ++d) os << ',' << fmt_double(x(d));
      os << '\n';
    };
    for (std::size_t i = 0; i < window + horizon; ++i) row("truth", i, tr.clean_observations[i]);
    for (std::size_t i = 0; i < window; ++i) row("recon", i, prediction.recon[i].col(col));
    for (std::size_t j = 0; j < horizon; ++j) {
      row("extrap", window + j, prediction.extrap[j].col(col));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, os.str());
}

std::vector<DumpRow> read_prediction_dump(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty dump");
  const auto header = split(line, ',');
  if (header.size() < 5 || header[0] != "traj" || header[1] != "source") {
    throw ConfigError(path.string() + ": not a prediction dump");
  }
  const auto dx = static_cast<int>(header.size()) - 4;
  std::vector<DumpRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (static_cast<int>(cells.size()) != dx + 4) throw ConfigError(where + ": wrong column count");
    DumpRow r;
    r.traj = std::stoi(cells[0]);
    r.source = cells[1];
    if (r.source != "truth" && r.source != "recon" && r.source != "extrap") {
      throw ConfigError(where + ": unknown source " + r.source);
    }
    r.step = std::stoi(cells[2]);
    r.time = parse_double(cells[3], where);
    r.x.resize(dx);
    for (int d = 0; d < dx; ++d) r.x(d) = parse_double(cells[4 + static_cast<std::size_t>(d)], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------- files

void ensure_writable(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    throw ConfigError(path.string() + " exists; pass --overwrite to replace it");
  }
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace physssm
