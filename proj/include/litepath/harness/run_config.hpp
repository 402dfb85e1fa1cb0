#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/harness/bench.hpp"
#include "litepath/harness/synthetic.hpp"
#include "litepath/io/hash.hpp"
#include "litepath/model/config.hpp"
#include "litepath/training/distill.hpp"
#include "litepath/training/supervised.hpp"

namespace litepath {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One experiment, start to finish. Stage seeds derive from `seed` so one flag reseeds everything.
struct RunConfig {
  std::string name = "default";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  std::size_t workers = 1;

  EncoderConfig encoder;
  SyntheticCohortSpec cohort;
  std::vector<std::size_t> teacher_dims = {48, 32, 32};
  DistillConfig distill;
  AbmilConfig abmil;
  SupervisedConfig mil_train;
  ScorerConfig scorer;
  SupervisedConfig aps_train;
  std::vector<std::size_t> grid_k_u = {0, 950, 1000, 1900, 1950, 2000, 2900, 3000, 3900, 3950, 4000};
  std::vector<std::size_t> grid_k_a = {0, 50, 100, 1000};
  std::size_t n_bootstrap = 1000;
  double ci_level = 0.95;
  double margin = -0.025;
  BenchSpec bench;

  RunConfig() { sync(); }

  // Keeps derived dimensions in step with the encoder and cohort.
  void sync() {
    abmil.input_dim = encoder.output_dim;
    abmil.num_classes = cohort.n_classes;
    scorer.input_dim = encoder.shallow_dim();
    cohort.in_channels = encoder.in_channels;
    cohort.image_size = encoder.input_size;
  }

  std::uint64_t stage_seed(const std::string& stage) const {
    Fnv1a64 h;
    h.update(stage);
    return SeededRng(seed).fork(h.digest()).next_u64();
  }

  void reseed(std::uint64_t s) {
    seed = s;
    cohort.seed = stage_seed("cohort");
    distill.seed = stage_seed("distill");
    mil_train.seed = stage_seed("mil_train");
    aps_train.seed = stage_seed("aps_train");
    bench.seed = stage_seed("bench");
  }

  std::vector<SelectionConfig> grid() const {
    std::vector<SelectionConfig> g;
    for (auto ku : grid_k_u)
      for (auto ka : grid_k_a)
        if (ku + ka > 0) g.push_back({ku, ka});
    return g;
  }

  void validate() const {
    encoder.validate();
    cohort.validate();
    distill.validate();
    abmil.validate();
    scorer.validate();
    mil_train.validate();
    aps_train.validate();
    bench.validate();
    if (teacher_dims.size() != distill.teacher_weights.size())
      throw ConfigError("distill.teacher_dims and distill.teacher_weights differ in length");
    if (grid().empty()) throw ConfigError("selection grid is empty");
    if (workers == 0) throw ConfigError("run.workers must be positive");
    if (n_bootstrap < 100) throw ConfigError("eval.bootstrap must be at least 100");
  }

  std::string to_ini() const;
  // Covers every value that can change a result; the output location and worker count cannot.
  std::string hash() const;
  ConfigRecord meta() const { return {{"config", name}, {"config_hash", hash()}, {"seed", std::to_string(seed)}}; }

  static RunConfig from_ini(std::istream& is, const std::string& source = "config");
  static RunConfig load(const std::filesystem::path& path);
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline std::string fmt(std::size_t v) { return std::to_string(v); }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

inline std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}
inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}
inline double parse_real(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}
inline bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}
template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    std::string item = s.substr(pos, next - pos);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out.push_back(parse(item));
    pos = next + 1;
  }
  return out;
}

struct Field {
  std::string section, key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// Every configurable value, in file order. Reading, writing and hashing all go through this list.
inline std::vector<Field> config_fields(RunConfig& c) {
  std::vector<Field> f;
  auto size = [&](std::string sec, std::string key, std::size_t& ref) {
    f.push_back({sec, key, [&ref] { return fmt(ref); }, [&ref](const std::string& s) { ref = parse_size(s); }});
  };
  auto real = [&](std::string sec, std::string key, double& ref) {
    f.push_back({sec, key, [&ref] { return fmt(ref); }, [&ref](const std::string& s) { ref = parse_real(s); }});
  };
  auto text = [&](std::string sec, std::string key, std::function<std::string()> get,
                  std::function<void(const std::string&)> set) { f.push_back({sec, key, std::move(get), std::move(set)}); };

  text("run", "name", [&c] { return c.name; }, [&c](const std::string& s) { c.name = s; });
  text("run", "seed", [&c] { return std::to_string(c.seed); }, [&c](const std::string& s) { c.seed = parse_u64(s); });
  text("run", "output_dir", [&c] { return c.output_dir.string(); },
       [&c](const std::string& s) { c.output_dir = s; });
  size("run", "workers", c.workers);

  size("encoder", "input_size", c.encoder.input_size);
  size("encoder", "patch_size", c.encoder.patch_size);
  size("encoder", "in_channels", c.encoder.in_channels);
  size("encoder", "embed_dim", c.encoder.embed_dim);
  size("encoder", "depth", c.encoder.depth);
  size("encoder", "heads", c.encoder.heads);
  size("encoder", "mlp_ratio", c.encoder.mlp_ratio);
  size("encoder", "output_dim", c.encoder.output_dim);
  size("encoder", "split_after_block", c.encoder.split_after_block);

  size("cohort", "n_slides", c.cohort.n_slides);
  size("cohort", "min_patches", c.cohort.min_patches);
  size("cohort", "max_patches", c.cohort.max_patches);
  size("cohort", "n_classes", c.cohort.n_classes);
  real("cohort", "lesion_fraction", c.cohort.lesion_fraction);
  real("cohort", "signal_strength", c.cohort.signal_strength);
  real("cohort", "pixel_fraction", c.cohort.pixel_fraction);
  real("cohort", "slide_offset_std", c.cohort.slide_offset_std);

  text("distill", "teacher_dims", [&c] { return fmt_list(c.teacher_dims); },
       [&c](const std::string& s) { c.teacher_dims = parse_list<std::size_t>(s, parse_size); });
  text("distill", "teacher_weights", [&c] { return fmt_list(c.distill.teacher_weights); },
       [&c](const std::string& s) { c.distill.teacher_weights = parse_list<double>(s, parse_real); });
  size("distill", "steps", c.distill.steps);
  size("distill", "batch_size", c.distill.batch_size);
  real("distill", "lr", c.distill.lr);
  real("distill", "min_lr", c.distill.min_lr);
  size("distill", "warmup_steps", c.distill.warmup_steps);
  real("distill", "weight_decay", c.distill.weight_decay);
  real("distill", "grad_clip", c.distill.grad_clip);

  size("abmil", "hidden_dim", c.abmil.hidden_dim);
  size("abmil", "attention_dim", c.abmil.attention_dim);
  text("abmil", "gated", [&c] { return std::string(c.abmil.gated ? "true" : "false"); },
       [&c](const std::string& s) { c.abmil.gated = parse_bool(s); });
  real("abmil", "dropout", c.abmil.dropout);

  for (auto [sec, t] : {std::pair{"mil_train", &c.mil_train}, std::pair{"aps_train", &c.aps_train}}) {
    real(sec, "lr", t->lr);
    real(sec, "min_lr", t->min_lr);
    size(sec, "epochs", t->epochs);
    real(sec, "weight_decay", t->weight_decay);
    size(sec, "patience", t->patience);
    text(sec, "whiten", [t] { return std::string(t->whiten ? "true" : "false"); },
         [t](const std::string& s) { t->whiten = parse_bool(s); });
  }
  real("aps_train", "temperature", c.aps_train.temperature);

  text("scorer", "hidden", [&c] { return fmt_list(c.scorer.hidden); },
       [&c](const std::string& s) { c.scorer.hidden = parse_list<std::size_t>(s, parse_size); });
  real("scorer", "dropout", c.scorer.dropout);

  text("grid", "k_u", [&c] { return fmt_list(c.grid_k_u); },
       [&c](const std::string& s) { c.grid_k_u = parse_list<std::size_t>(s, parse_size); });
  text("grid", "k_a", [&c] { return fmt_list(c.grid_k_a); },
       [&c](const std::string& s) { c.grid_k_a = parse_list<std::size_t>(s, parse_size); });

  size("eval", "bootstrap", c.n_bootstrap);
  real("eval", "level", c.ci_level);
  real("eval", "margin", c.margin);

  size("bench", "n_patches", c.bench.n_patches);
  size("bench", "repetitions", c.bench.repetitions);
  size("bench", "warmup", c.bench.warmup);
  size("bench", "k_u", c.bench.selection.k_u);
  size("bench", "k_a", c.bench.selection.k_a);
  text("bench", "precision", [&c] { return to_string(c.bench.precision); },
       [&c](const std::string& s) { c.bench.precision = parse_precision(s); });
  size("bench", "pool", c.bench.pool);
  real("bench", "min_sample_seconds", c.bench.min_sample_seconds);
  return f;
}

}  // namespace detail

inline std::string RunConfig::to_ini() const {
  RunConfig copy = *this;
  std::ostringstream os;
  std::string section;
  for (const auto& f : detail::config_fields(copy)) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

inline std::string RunConfig::hash() const {
  RunConfig copy = *this;
  Fnv1a64 h;
  for (const auto& f : detail::config_fields(copy)) {
    if (f.section == "run" && (f.key == "output_dir" || f.key == "workers")) continue;
    h.update(f.section + "." + f.key + "=" + f.get() + "\n");
  }
  return h.hex();
}

// Missing keys keep their defaults; unknown sections or keys are errors.
inline RunConfig RunConfig::from_ini(std::istream& is, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  auto fields = detail::config_fields(c);
  std::map<std::string, detail::Field*> index;
  for (auto& f : fields) index[f.section + "." + f.key] = &f;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      auto it = index.find(section + "." + key);
      if (it == index.end()) throw ConfigError(source + ": unknown key '" + key + "' in [" + section + "]");
      try {
        it->second->set(value.data());
      } catch (const std::exception& e) {
        throw ConfigError(source + ": [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  c.sync();
  c.reseed(c.seed);
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  return from_ini(is, path.string());
}

// Full-size encoder: the cost model and benchmarks refer to this one.
inline RunConfig default_run_config() {
  std::istringstream empty;
  return RunConfig::from_ini(empty, "default");
}

// Desk scale: 32x32 patches through a proportionally reduced encoder, sized for a laptop.
inline RunConfig desk_run_config() {
  std::istringstream is(R"(
[run]
name = desk
output_dir = runs/desk
[encoder]
input_size = 32
patch_size = 8
embed_dim = 32
depth = 4
heads = 2
output_dim = 32
[distill]
teacher_dims = 24,16,16
steps = 200
[abmil]
hidden_dim = 64
attention_dim = 32
[mil_train]
lr = 1e-3
epochs = 30
patience = 8
[aps_train]
lr = 1e-3
epochs = 20
patience = 5
[scorer]
hidden = 32,16
[grid]
k_u = 0,64,128
k_a = 0,64,128,256
[bench]
n_patches = 2000
k_a = 100
)");
  return RunConfig::from_ini(is, "desk");
}

// Throughput benchmark model: deep enough that the pre-stage is a small fraction, small
// enough that 30,000 patches per slide finish in seconds on one core.
inline RunConfig bench_run_config() {
  std::istringstream is(R"(
[run]
name = bench
output_dir = runs/bench
[encoder]
input_size = 16
patch_size = 4
embed_dim = 32
depth = 12
heads = 2
output_dim = 64
[abmil]
hidden_dim = 64
attention_dim = 32
[scorer]
hidden = 32,16
[bench]
n_patches = 30000
k_u = 0
k_a = 1000
)");
  return RunConfig::from_ini(is, "bench");
}

// A path to an INI file, or the name of a built-in config.
inline RunConfig resolve_run_config(const std::string& name_or_path) {
  if (std::filesystem::is_regular_file(name_or_path)) return RunConfig::load(name_or_path);
  if (name_or_path == "default") return default_run_config();
  if (name_or_path == "desk") return desk_run_config();
  if (name_or_path == "bench") return bench_run_config();
  throw ConfigError("no config file or built-in config named '" + name_or_path + "' (built-ins: default, desk, bench)");
}

}  // namespace litepath
