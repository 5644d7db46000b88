#include "physssm/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "physssm/errors.hpp"

namespace physssm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const std::string t = trim(v);
  const double x = std::strtod(t.c_str(), &end);
  if (t.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (t.empty() || pos != t.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_range(const UniformRange& r) { return fmt(r.lo) + "," + fmt(r.hi); }

UniformRange to_range(const std::string& key, const std::string& v) {
  const auto xs = parse_double_list(v);
  if (xs.size() != 2 || xs[0] > xs[1]) throw ConfigError(key + ": expected 'lo,hi'");
  return {xs[0], xs[1]};
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define PHYSSM_DOUBLE(expr)                                                                     \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.expr); }                                  \
  }
#define PHYSSM_INT(expr)                                                                        \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) {                       \
      c.expr = static_cast<decltype(c.expr)>(to_int(k, v));                                     \
    },                                                                                          \
        [](const ExperimentConfig& c) { return std::to_string(c.expr); }                       \
  }
#define PHYSSM_BOOL(expr)                                                                       \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.expr = to_bool(k, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.expr ? "true" : "false"); }       \
  }
#define PHYSSM_STRING(expr)                                                                     \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string&, const std::string& v) { c.expr = trim(v); },    \
        [](const ExperimentConfig& c) { return c.expr; }                                       \
  }
#define PHYSSM_RANGE(expr)                                                                      \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.expr = to_range(k, v); }, \
        [](const ExperimentConfig& c) { return fmt_range(c.expr); }                            \
  }
#define PHYSSM_DELTA(expr)                                                                      \
  Field {                                                                                       \
    [](ExperimentConfig& c, const std::string&, const std::string& v) {                         \
      c.expr = delta_mode_from_string(trim(v));                                                 \
    },                                                                                          \
        [](const ExperimentConfig& c) { return to_string(c.expr); }                            \
  }

// Ordered so to_ini groups keys by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"experiment.name", PHYSSM_STRING(name)},
      {"experiment.data_dir", PHYSSM_STRING(data_dir)},

      {"data.system", PHYSSM_STRING(data.system)},
      {"data.n_train", PHYSSM_INT(data.n_train)},
      {"data.n_val", PHYSSM_INT(data.n_val)},
      {"data.n_test", PHYSSM_INT(data.n_test)},
      {"data.horizon", PHYSSM_INT(data.horizon)},
      {"data.dt", PHYSSM_DOUBLE(data.dt)},
      {"data.noise", PHYSSM_DOUBLE(data.noise_sigma)},
      {"data.drop", PHYSSM_DOUBLE(data.drop_rate)},
      {"data.seed", PHYSSM_INT(data.seed)},
      {"data.normalize", PHYSSM_BOOL(data.normalize)},
      {"data.pendulum_length", PHYSSM_RANGE(data.sampler.pendulum.length)},
      {"data.pendulum_amplitude", PHYSSM_RANGE(data.sampler.pendulum.amplitude)},
      {"data.pendulum_theta0", PHYSSM_RANGE(data.sampler.pendulum.theta0)},
      {"data.pendulum_omega0", PHYSSM_RANGE(data.sampler.pendulum.omega0)},
      {"data.pendulum_mass", PHYSSM_DOUBLE(data.sampler.pendulum.mass)},
      {"data.pendulum_gravity", PHYSSM_DOUBLE(data.sampler.pendulum.gravity)},
      {"data.pendulum_damping", PHYSSM_DOUBLE(data.sampler.pendulum.damping)},
      {"data.pendulum_control_frequency", PHYSSM_DOUBLE(data.sampler.pendulum.control_frequency)},
      {"data.sir_contact_rate", PHYSSM_RANGE(data.sampler.sir.contact_rate)},
      {"data.sir_removal_rate", PHYSSM_RANGE(data.sampler.sir.removal_rate)},
      {"data.sir_infected0", PHYSSM_RANGE(data.sampler.sir.infected0)},
      {"data.sir_population", PHYSSM_DOUBLE(data.sampler.sir.population)},
      {"data.sir_profile_knots", PHYSSM_INT(data.sampler.sir.profile_knots)},
      {"data.sir_profile_spread", PHYSSM_DOUBLE(data.sampler.sir.profile_spread)},

      {"model.prenet_hidden", PHYSSM_INT(model.prenet_hidden)},
      {"model.prenet_layers", PHYSSM_INT(model.prenet_layers)},
      {"model.encoder_width", PHYSSM_INT(model.encoder.width)},
      {"model.encoder_state", PHYSSM_INT(model.encoder.state_size)},
      {"model.encoder_layers", PHYSSM_INT(model.encoder.layers)},
      {"model.encoder_delta", PHYSSM_DELTA(model.encoder.delta_mode)},
      {"model.transition",
       Field{[](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.model.transition = transition_from_string(trim(v));
             },
             [](const ExperimentConfig& c) { return to_string(c.model.transition); }}},
      {"model.learner",
       Field{[](ExperimentConfig& c, const std::string& k, const std::string& v) {
               const std::string t = trim(v);
               if (t == "stack") {
                 c.model.learner.kind = LearnerKind::Stack;
               } else if (t == "constant") {
                 c.model.learner.kind = LearnerKind::Constant;
               } else {
                 throw ConfigError(k + ": expected stack or constant");
               }
             },
             [](const ExperimentConfig& c) {
               return std::string(c.model.learner.kind == LearnerKind::Stack ? "stack"
                                                                             : "constant");
             }}},
      {"model.learner_a_width", PHYSSM_INT(model.learner.stack_A.width)},
      {"model.learner_a_state", PHYSSM_INT(model.learner.stack_A.state_size)},
      {"model.learner_a_layers", PHYSSM_INT(model.learner.stack_A.layers)},
      {"model.learner_a_delta", PHYSSM_DELTA(model.learner.stack_A.delta_mode)},
      {"model.learner_b_width", PHYSSM_INT(model.learner.stack_B.width)},
      {"model.learner_b_state", PHYSSM_INT(model.learner.stack_B.state_size)},
      {"model.learner_b_layers", PHYSSM_INT(model.learner.stack_B.layers)},
      {"model.learner_b_delta", PHYSSM_DELTA(model.learner.stack_B.delta_mode)},
      {"model.learn_b", PHYSSM_BOOL(model.learner.learn_B)},
      {"model.output_scale", PHYSSM_DOUBLE(model.learner.output_scale)},
      {"model.data_driven_width", PHYSSM_INT(model.data_driven.width)},
      {"model.data_driven_state", PHYSSM_INT(model.data_driven.state_size)},
      {"model.data_driven_layers", PHYSSM_INT(model.data_driven.layers)},
      {"model.data_driven_delta", PHYSSM_DELTA(model.data_driven.delta_mode)},
      {"model.decoder_hidden", PHYSSM_INT(model.decoder_hidden)},
      {"model.decoder_layers", PHYSSM_INT(model.decoder_layers)},
      {"model.log_std_min", PHYSSM_DOUBLE(model.log_std_min)},
      {"model.log_std_max", PHYSSM_DOUBLE(model.log_std_max)},
      {"model.prior_log_std_init", PHYSSM_DOUBLE(model.prior_log_std_init)},
      {"model.prior_mean_linear", PHYSSM_BOOL(model.prior_mean_linear)},
      {"model.obs_scale", PHYSSM_DOUBLE(model.obs_scale)},

      {"train.epochs", PHYSSM_INT(train.epochs)},
      {"train.batch_size", PHYSSM_INT(train.batch_size)},
      {"train.lr", PHYSSM_DOUBLE(train.adam.lr)},
      {"train.clip_norm", PHYSSM_DOUBLE(train.adam.clip_norm)},
      {"train.beta", PHYSSM_DOUBLE(train.beta)},
      {"train.lambda", PHYSSM_DOUBLE(train.lambda)},
      {"train.metric",
       Field{[](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.train.metric = reg_metric_from_string(trim(v));
             },
             [](const ExperimentConfig& c) { return to_string(c.train.metric); }}},
      {"train.reg_augmented", PHYSSM_BOOL(train.reg_augmented)},
      {"train.prior_on_mean", PHYSSM_BOOL(train.prior_on_mean)},
      {"train.window", PHYSSM_INT(train.window)},
      {"train.extrap_horizon", PHYSSM_INT(train.extrap_horizon)},
      {"train.train_window", PHYSSM_INT(train.train_window)},
      {"train.eval_every", PHYSSM_INT(train.eval_every)},
      {"train.seeds",
       Field{[](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.train.seeds = parse_seed_list(v);
             },
             [](const ExperimentConfig& c) {
               std::string s;
               for (std::size_t i = 0; i < c.train.seeds.size(); ++i) {
                 if (i) s += ",";
                 s += std::to_string(c.train.seeds[i]);
               }
               return s;
             }}},
  };
  return table;
}

#undef PHYSSM_DOUBLE
#undef PHYSSM_INT
#undef PHYSSM_BOOL
#undef PHYSSM_STRING
#undef PHYSSM_RANGE
#undef PHYSSM_DELTA

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (trim(item).empty()) throw ConfigError("empty entry in list '" + s + "'");
    out.push_back(to_double("list", item));
  }
  if (out.empty()) throw ConfigError("expected a comma-separated list of numbers, got '" + s + "'");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (trim(item).empty()) continue;
    const long long v = to_int("seeds", item);
    if (v < 0) throw ConfigError("seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ConfigError("expected a comma-separated list of seeds, got '" + s + "'");
  return out;
}

ExperimentConfig default_config(const std::string& system) {
  ExperimentConfig c;
  if (system == "pendulum") {
    c.name = "pendulum";
    c.model.obs_scale = 0.3;
    c.model.learner.output_scale = 10.0;
    return c;
  }
  if (system == "sir") {
    c.name = "sir";
    c.data.system = "sir";
    c.data.dt = 1.0;
    c.data.noise_sigma = 0.1;
    c.data.drop_rate = 0.1;
    c.data.normalize = true;
    c.model.system = "sir";
    c.model.learner.learn_B = false;
    c.model.learner.output_scale = 1.0;
    return c;
  }
  throw ConfigError("unknown system: " + system);
}

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown configuration key: " + key);
  f->set(config, key, value);
  if (key == "data.system") config.model.system = config.data.system;
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.key=value, got " + assignment);
  apply_override(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

ExperimentConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  std::string system = "pendulum";
  if (auto s = tree.get_optional<std::string>("data.system")) system = trim(*s);
  ExperimentConfig c = default_config(system);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key outside a section: " + section);
    }
    for (const auto& [key, value] : body) {
      apply_override(c, section + "." + key, value.data());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get(config) << '\n';
  }
  return os.str();
}

std::string config_hash(const ExperimentConfig& config) { return hash_hex(to_ini(config)); }

}  // namespace physssm
