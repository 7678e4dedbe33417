#include "advss/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace advss {

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::ostringstream os;
  os << "invalid configuration:";
  for (const auto& issue : issues) os << "\n  " << issue;
  return os.str();
}

/// Reads the fields of one JSON object, recording problems under `path`.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>& issues)
      : j_(j), path_(std::move(path)), issues_(issues) {
    if (!j_.is_object()) issue("", "expected an object");
  }

  ~ObjectReader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) issue(key, "unknown field");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }

  const json& at(const std::string& key) const { return j_.at(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void issue(const std::string& key, const std::string& problem) {
    issues_.push_back((key.empty() ? path_ : field(key)) + ": " + problem);
  }

  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    if (!at(key).is_number()) return issue(key, "expected a number");
    out = at(key).get<double>();
  }
  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    if (!parse_switch(at(key), out)) issue(key, "expected true/false or \"on\"/\"off\"");
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    if (!at(key).is_string()) return issue(key, "expected a string");
    out = at(key).get<std::string>();
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_number_integer()) return issue(key, "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) {
        out = static_cast<Int>(v.get<std::uint64_t>());
      } else if (v.get<std::int64_t>() < 0) {
        issue(key, "expected a non-negative integer");
      } else {
        out = static_cast<Int>(v.get<std::int64_t>());
      }
    } else {
      out = static_cast<Int>(v.get<std::int64_t>());
    }
  }
  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    if (at(key).is_null()) {
      out.reset();
      return;
    }
    T value{};
    if (out) value = *out;
    get(key, value);
    out = value;
  }
  template <typename Enum, typename Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse) {
    if (!has(key)) return;
    if (!at(key).is_string()) return issue(key, "expected a string");
    try {
      out = parse(at(key).get<std::string>());
    } catch (const std::invalid_argument& e) {
      issue(key, e.what());
    }
  }

  static bool parse_switch(const json& v, bool& out) {
    if (v.is_boolean()) {
      out = v.get<bool>();
      return true;
    }
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "on") return out = true, true;
      if (s == "off") return out = false, true;
    }
    return false;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
};

/// Runs a semantic validator, recording its message against `path`.
template <typename F>
void check(std::vector<std::string>& issues, const std::string& path, F&& validator) {
  try {
    validator();
  } catch (const std::invalid_argument& e) {
    issues.push_back(path + ": " + e.what());
  }
}

ArchitectureSpec read_arch(const json& j, const std::string& path, std::vector<std::string>& issues) {
  ArchitectureSpec spec;
  ObjectReader r(j, path, issues);
  r.get_enum("family", spec.family, parse_family);
  r.get("image_side", spec.image_side);
  r.get("latent_dim", spec.latent_dim);
  r.get("base_width", spec.base_width);
  r.get("num_transforms", spec.num_transforms);
  r.get("channels", spec.channels);
  r.get("sn_power_iterations", spec.sn_power_iterations);
  check(issues, path, [&] { validate(spec); });
  return spec;
}

LossWeights read_weights(const json& j, const std::string& path, std::vector<std::string>& issues) {
  LossWeights w;
  ObjectReader r(j, path, issues);
  r.get("lambda_d", w.lambda_d);
  r.get("lambda_g", w.lambda_g);
  r.get("lambda_p", w.lambda_p);
  r.get("lambda_r", w.lambda_r);
  r.get("alpha0", w.alpha0);
  check(issues, path, [&] { w.validate(); });
  return w;
}

FidSettings read_fid(const json& j, const std::string& path, std::vector<std::string>& issues) {
  FidSettings f;
  ObjectReader r(j, path, issues);
  r.get("n_real", f.n_real);
  r.get("n_fake", f.n_fake);
  r.get("extractor", f.extractor);
  r.get("extractor_path", f.extractor_path);
  return f;
}

TrainConfig read_train(const json& j, const std::string& path, std::vector<std::string>& issues) {
  TrainConfig c;
  {
    ObjectReader r(j, path, issues);
    if (r.has("weights")) c.weights = read_weights(r.at("weights"), r.field("weights"), issues);
    r.get_enum("mode", c.mode, parse_gan_loss_mode);
    if (r.has("arch")) c.arch = read_arch(r.at("arch"), r.field("arch"), issues);
    r.get("n_iter", c.n_iter);
    r.get("n_decay", c.n_decay);
    r.get("batch_size", c.batch_size);
    r.get("lr", c.lr);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("seed", c.seed);
    r.get("fid_every", c.fid_every);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("log_every", c.log_every);
    r.get("n_critic", c.n_critic);
    r.get_enum("g_cls_mode", c.g_cls_mode, parse_generator_cls_mode);
    r.get("d_cls_fake_term", c.d_cls_fake_term);
    r.get("rotate_fakes_for_d", c.rotate_fakes_for_d);
    r.get("alpha_literal_ramp", c.alpha_literal_ramp);
    if (r.has("fid")) c.fid = read_fid(r.at("fid"), r.field("fid"), issues);
  }
  // Weights and architecture were reported at their own paths already.
  TrainConfig rest = c;
  rest.weights = {};
  rest.arch = {};
  rest.arch.family = c.arch.family;
  check(issues, path, [&] { rest.validate(); });
  return c;
}

DatasetSpec read_dataset(const json& j, const std::string& path, std::vector<std::string>& issues) {
  DatasetSpec d;
  {
    ObjectReader r(j, path, issues);
    r.get("name", d.name);
    r.get("image_side", d.image_side);
    r.get("n_train", d.n_train);
    r.get("cache_dir", d.cache_dir);
    r.get("seed", d.seed);
  }
  check(issues, path, [&] { d.validate(); });
  return d;
}

template <typename T, typename Read>
void read_axis(ObjectReader& r, const std::string& key, std::vector<T>& out, Read read_one) {
  if (!r.has(key)) return;
  const auto& v = r.at(key);
  std::vector<json> items = v.is_array() ? std::vector<json>(v.begin(), v.end()) : std::vector<json>{v};
  if (items.empty()) return r.issue(key, "grid axis must not be empty");
  out.clear();
  for (const auto& item : items) {
    T value{};
    if (!read_one(item, value)) return r.issue(key, "invalid grid value " + item.dump());
    out.push_back(value);
  }
}

AblationGrid read_grid(const json& j, const std::string& path, std::vector<std::string>& issues) {
  AblationGrid g;
  ObjectReader r(j, path, issues);
  auto number = [](const json& v, double& out) {
    if (!v.is_number() || v.get<double>() < 0) return false;
    out = v.get<double>();
    return true;
  };
  read_axis(r, "lambda_d", g.lambda_d, number);
  read_axis(r, "lambda_g", g.lambda_g, number);
  read_axis(r, "g_cls_mode", g.g_cls_mode, [](const json& v, GeneratorClsMode& out) {
    if (!v.is_string()) return false;
    try {
      out = parse_generator_cls_mode(v.get<std::string>());
      return true;
    } catch (const std::invalid_argument&) {
      return false;
    }
  });
  auto flag = [](const json& v, bool& out) { return ObjectReader::parse_switch(v, out); };
  // std::vector<bool> has no addressable elements; read through a shim.
  auto read_flags = [&](const std::string& key, std::vector<bool>& out) {
    std::vector<char> tmp;
    read_axis(r, key, tmp, [&](const json& v, char& o) {
      bool b = false;
      if (!flag(v, b)) return false;
      o = b;
      return true;
    });
    if (!tmp.empty()) out.assign(tmp.begin(), tmp.end());
  };
  read_flags("d_cls_fake_term", g.d_cls_fake_term);
  read_flags("rotate_fakes_for_d", g.rotate_fakes_for_d);
  read_axis(r, "seed", g.seed, [](const json& v, std::uint64_t& out) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) return false;
    out = v.get<std::uint64_t>();
    return true;
  });
  if (g.size() == 0) r.issue("", "ablation grid has no axes");
  return g;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error(join_issues(issues)), issues_(std::move(issues)) {}

// ---------------------------------------------------------------------------

json to_json(const ArchitectureSpec& s) {
  return {{"family", to_string(s.family)},     {"image_side", s.image_side},
          {"latent_dim", s.latent_dim},        {"base_width", s.base_width},
          {"num_transforms", s.num_transforms}, {"channels", s.channels},
          {"sn_power_iterations", s.sn_power_iterations}};
}

json to_json(const LossWeights& w) {
  return {{"lambda_d", w.lambda_d},
          {"lambda_g", w.lambda_g},
          {"lambda_p", w.lambda_p},
          {"lambda_r", w.lambda_r},
          {"alpha0", w.alpha0}};
}

json to_json(const TrainConfig& c) {
  json j;
  j["weights"] = to_json(c.weights);
  j["mode"] = to_string(c.mode);
  j["arch"] = to_json(c.arch);
  j["n_iter"] = c.n_iter;
  j["n_decay"] = c.n_decay ? json(*c.n_decay) : json(nullptr);
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1 ? json(*c.beta1) : json(nullptr);
  j["beta2"] = c.beta2;
  j["seed"] = c.seed;
  j["fid_every"] = c.fid_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["n_critic"] = c.n_critic;
  j["g_cls_mode"] = to_string(c.g_cls_mode);
  j["d_cls_fake_term"] = c.d_cls_fake_term;
  j["rotate_fakes_for_d"] = c.rotate_fakes_for_d;
  j["alpha_literal_ramp"] = c.alpha_literal_ramp;
  j["fid"] = {{"n_real", c.fid.n_real},
              {"n_fake", c.fid.n_fake},
              {"extractor", c.fid.extractor},
              {"extractor_path", c.fid.extractor_path}};
  return j;
}

json to_json(const DatasetSpec& d) {
  return {{"name", d.name}, {"image_side", d.image_side}, {"n_train", d.n_train}, {"cache_dir", d.cache_dir},
          {"seed", d.seed}};
}

json to_json(const AblationGrid& g) {
  json j = json::object();
  if (!g.lambda_d.empty()) j["lambda_d"] = g.lambda_d;
  if (!g.lambda_g.empty()) j["lambda_g"] = g.lambda_g;
  if (!g.g_cls_mode.empty()) {
    json modes = json::array();
    for (auto m : g.g_cls_mode) modes.push_back(to_string(m));
    j["g_cls_mode"] = modes;
  }
  auto flags = [](const std::vector<bool>& v) {
    json a = json::array();
    for (bool b : v) a.push_back(b ? "on" : "off");
    return a;
  };
  if (!g.d_cls_fake_term.empty()) j["d_cls_fake_term"] = flags(g.d_cls_fake_term);
  if (!g.rotate_fakes_for_d.empty()) j["rotate_fakes_for_d"] = flags(g.rotate_fakes_for_d);
  if (!g.seed.empty()) j["seed"] = g.seed;
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["train"] = to_json(c.train);
  j["dataset"] = to_json(c.dataset);
  if (c.ablation) j["ablation"] = to_json(*c.ablation);
  j["output_dir"] = c.output_dir;
  j["sample_count"] = c.sample_count;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  std::vector<std::string> issues;
  auto c = read_train(j, "train", issues);
  if (!issues.empty()) throw ConfigError(issues);
  return c;
}

ExperimentConfig experiment_from_json(const json& j) {
  std::vector<std::string> issues;
  ExperimentConfig c;
  {
    ObjectReader r(j, "", issues);
    r.get("name", c.name);
    if (r.has("train")) c.train = read_train(r.at("train"), "train", issues);
    if (r.has("dataset")) c.dataset = read_dataset(r.at("dataset"), "dataset", issues);
    if (r.has("ablation") && !r.at("ablation").is_null()) c.ablation = read_grid(r.at("ablation"), "ablation", issues);
    r.get("output_dir", c.output_dir);
    r.get("sample_count", c.sample_count);
  }
  if (c.name.empty()) issues.push_back("name: must not be empty");
  if (c.output_dir.empty()) issues.push_back("output_dir: must not be empty");
  if (c.sample_count < 1) issues.push_back("sample_count: must be >= 1");
  if (c.dataset.image_side != c.train.arch.image_side)
    issues.push_back("dataset.image_side: " + std::to_string(c.dataset.image_side) +
                     " does not match train.arch.image_side " + std::to_string(c.train.arch.image_side));
  if (c.dataset.name == "synthetic-blobs" && c.train.batch_size > c.dataset.n_train)
    issues.push_back("train.batch_size: exceeds dataset.n_train");
  if (c.train.fid_every > 0 && c.dataset.n_train > 0 && c.train.fid.n_real > c.dataset.n_train)
    issues.push_back("train.fid.n_real: " + std::to_string(c.train.fid.n_real) + " exceeds dataset.n_train " +
                     std::to_string(c.dataset.n_train));
  if (!issues.empty()) throw ConfigError(issues);
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open config file"});
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return experiment_from_json(j);
}

void save_experiment(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

// ---------------------------------------------------------------------------

std::size_t AblationGrid::size() const {
  auto axis = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
  if (lambda_d.empty() && lambda_g.empty() && g_cls_mode.empty() && d_cls_fake_term.empty() &&
      rotate_fakes_for_d.empty() && seed.empty())
    return 0;
  return axis(lambda_d.size()) * axis(lambda_g.size()) * axis(g_cls_mode.size()) * axis(d_cls_fake_term.size()) *
         axis(rotate_fakes_for_d.size()) * axis(seed.size());
}

std::vector<AblationGrid::Cell> AblationGrid::expand(const TrainConfig& base) const {
  std::vector<Cell> cells;
  auto or_base = [](const auto& axis, auto base_value) {
    using T = std::decay_t<decltype(base_value)>;
    return axis.empty() ? std::vector<T>{base_value} : std::vector<T>(axis.begin(), axis.end());
  };
  for (double ld : or_base(lambda_d, base.weights.lambda_d))
    for (double lg : or_base(lambda_g, base.weights.lambda_g))
      for (auto mode : or_base(g_cls_mode, base.g_cls_mode))
        for (bool fake_term : or_base(d_cls_fake_term, base.d_cls_fake_term))
          for (bool rotate : or_base(rotate_fakes_for_d, base.rotate_fakes_for_d))
            for (auto s : or_base(seed, base.seed)) {
              Cell cell;
              cell.train = base;
              cell.train.weights.lambda_d = ld;
              cell.train.weights.lambda_g = lg;
              cell.train.g_cls_mode = mode;
              cell.train.d_cls_fake_term = fake_term;
              cell.train.rotate_fakes_for_d = rotate;
              cell.train.seed = s;
              char index[16];
              std::snprintf(index, sizeof(index), "cell%03zu", cells.size());
              cell.label = std::string(index) + "_ld" + format_number(ld) + "_lg" + format_number(lg) + "_" +
                           to_string(mode) + "_fake-" + (fake_term ? "on" : "off") + "_rot-" +
                           (rotate ? "on" : "off") + "_seed" + std::to_string(s);
              cells.push_back(std::move(cell));
            }
  return cells;
}

}  // namespace advss
