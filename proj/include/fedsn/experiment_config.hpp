#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/federation.hpp"
#include "fedsn/objectives.hpp"
#include "fedsn/optim.hpp"
#include "fedsn/supernet_config.hpp"
#include "fedsn/synth_data.hpp"
#include <nlohmann/json.hpp>

namespace fedsn {

/// Pipeline stages in the order they run.
inline const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"unet-local", "unet-fed", "sn-local", "sn-fed", "adapt", "crosseval"};
  return modes;
}

/// Every problem found in a configuration, one "field: reason" per entry.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : std::invalid_argument(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid experiment config:";
    for (const auto& i : v) s += "\n  " + i;
    return s;
  }
  std::vector<std::string> issues_;
};

struct TrainSettings {
  OptimizerConfig optimizer = OptimizerConfig::novograd(1e-3);
  std::size_t crops_per_image = 3;
  std::size_t images_per_batch = 2;
  Shape crop_size{16, 16};
  bool augment = true;
  AugmentConfig augmentation;
  double dice_smooth = 1e-5;
  bool dice_only = false;
  bool sample_paths = true;

  template <std::floating_point T>
  TrainConfig<T> to_train_config() const {
    TrainConfig<T> t;
    t.optimizer = optimizer;
    t.crops_per_image = crops_per_image;
    t.images_per_batch = images_per_batch;
    t.crop_size = crop_size;
    t.augment = augment;
    t.augmentation = augmentation;
    t.loss = {static_cast<T>(dice_smooth), dice_only};
    t.sample_paths = sample_paths;
    return t;
  }
};

struct AdaptSettings {
  std::string method = "gradient";  // or "exhaustive"
  std::size_t epochs = 1;
  std::size_t images_per_step = 1;
  OptimizerConfig optimizer = OptimizerConfig::adam(1e-3);
  std::uint64_t exhaustive_budget = 4096;
};

/// Expected number of times each path is drawn during supernet training.
struct TrainingLengthCheck {
  bool pass = false;
  std::uint64_t path_count = 0;
  std::uint64_t iterations = 0;
  double expected_selections = 0;
  double multiplier = 0;  // iterations / baseline iterations, 0 when no baseline is given
};

inline TrainingLengthCheck check_training_length(const SupernetConfig& config, std::uint64_t iterations,
                                                 std::uint64_t batch_paths_per_step = 1,
                                                 std::uint64_t baseline_iterations = 0) {
  TrainingLengthCheck c;
  c.path_count = config.path_count();
  c.iterations = iterations;
  c.expected_selections =
      static_cast<double>(iterations) * static_cast<double>(batch_paths_per_step) / static_cast<double>(c.path_count);
  c.pass = c.path_count == 1 || c.expected_selections >= 1.0;
  if (baseline_iterations > 0) c.multiplier = static_cast<double>(iterations) / static_cast<double>(baseline_iterations);
  return c;
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::string precision = "f64";
  std::vector<std::string> modes = known_modes();
  std::uint64_t data_seed = 7;
  Shape image_size{32, 32};
  std::vector<SiteProfile> sites = default_site_profiles();
  std::vector<std::uint64_t> split_seeds{1, 2, 3};
  std::uint64_t model_seed = 11;
  SupernetConfig supernet = desk_supernet_config();
  FLConfig fl = [] {
    FLConfig f;
    f.rounds = 5;  // baseline rounds; supernet modes run rounds x multiplier
    f.local_iterations = 20;
    return f;
  }();
  TrainSettings train;
  double supernet_multiplier = 10;
  AdaptSettings adapt;
  bool include_central = false;

  bool has_mode(const std::string& m) const { return std::find(modes.begin(), modes.end(), m) != modes.end(); }

  std::size_t baseline_rounds() const { return fl.rounds; }
  std::size_t supernet_rounds() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(fl.rounds) * supernet_multiplier));
  }
  std::size_t iterations_per_round(const std::string& site) const { return fl.iterations_for(site); }

  /// Local steps a supernet client takes over the whole run (smallest over sites).
  std::uint64_t supernet_iterations() const {
    std::uint64_t n = 0;
    bool first = true;
    for (const auto& s : sites) {
      const std::uint64_t k = static_cast<std::uint64_t>(supernet_rounds()) * iterations_per_round(s.id);
      n = first ? k : std::min(n, k);
      first = false;
    }
    return n;
  }

  TrainingLengthCheck training_length() const {
    std::uint64_t base = 0;
    if (!sites.empty()) base = static_cast<std::uint64_t>(baseline_rounds()) * iterations_per_round(sites.front().id);
    return check_training_length(supernet, supernet_iterations(), 1, base);
  }

  /// Field-level problems; empty when the config can run.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (name.empty()) p.push_back("name: must not be empty");
    if (precision != "f64" && precision != "f32") p.push_back("precision: must be \"f64\" or \"f32\"");
    if (modes.empty()) p.push_back("modes: at least one mode is required");
    std::set<std::string> seen_modes;
    for (const auto& m : modes) {
      if (std::find(known_modes().begin(), known_modes().end(), m) == known_modes().end()) {
        p.push_back("modes: unknown mode '" + m + "'");
      } else if (!seen_modes.insert(m).second) {
        p.push_back("modes: '" + m + "' listed twice");
      }
    }
    if (split_seeds.empty()) p.push_back("data.split_seeds: at least one seed is required");
    if (std::set<std::uint64_t>(split_seeds.begin(), split_seeds.end()).size() != split_seeds.size()) {
      p.push_back("data.split_seeds: seeds must be distinct");
    }
    if (sites.empty()) p.push_back("data.sites: at least one site is required");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto& s = sites[i];
      const std::string f = "data.sites[" + std::to_string(i) + "]";
      const bool id_ok = !s.id.empty() && std::all_of(s.id.begin(), s.id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
      });
      if (!id_ok) p.push_back(f + ".id: use letters, digits, '_' or '-'");
      if (s.id == "central") p.push_back(f + ".id: 'central' is reserved");
      if (!ids.insert(s.id).second) p.push_back(f + ".id: duplicate site id '" + s.id + "'");
      if (s.case_count < 3) p.push_back(f + ".case_count: need at least 3 cases for train/validation/test");
      try {
        if (image_size.size() >= 2) s.validate(image_size);
      } catch (const std::exception& e) {
        p.push_back(f + ": " + e.what());
      }
    }
    bool arch_ok = true;
    try {
      (void)supernet.slots();
    } catch (const std::exception& e) {
      arch_ok = false;
      p.push_back(std::string("supernet: ") + e.what());
    }
    if (image_size.size() != supernet.spatial_rank) {
      p.push_back("data.image_size: needs " + std::to_string(supernet.spatial_rank) + " axes for this supernet");
    } else if (arch_ok) {
      const std::size_t div = supernet.spatial_divisor();
      for (std::size_t a = 0; a < image_size.size(); ++a) {
        if (image_size[a] == 0 || image_size[a] % div != 0) {
          p.push_back("data.image_size: extent " + std::to_string(image_size[a]) + " is not a multiple of " +
                      std::to_string(div));
        }
      }
    }
    if (train.crop_size.size() != image_size.size()) {
      p.push_back("train.crop_size: needs " + std::to_string(image_size.size()) + " axes");
    } else if (arch_ok) {
      for (std::size_t a = 0; a < image_size.size(); ++a) {
        if (train.crop_size[a] == 0 || train.crop_size[a] > image_size[a]) {
          p.push_back("train.crop_size: extent " + std::to_string(train.crop_size[a]) + " outside 1.." +
                      std::to_string(image_size[a]));
        } else if (train.crop_size[a] % supernet.spatial_divisor() != 0) {
          p.push_back("train.crop_size: extent " + std::to_string(train.crop_size[a]) + " is not a multiple of " +
                      std::to_string(supernet.spatial_divisor()));
        }
      }
    }
    if (train.crops_per_image == 0) p.push_back("train.crops_per_image: must be >= 1");
    if (train.images_per_batch == 0) p.push_back("train.images_per_batch: must be >= 1");
    if (!(train.optimizer.lr > 0)) p.push_back("train.optimizer.lr: must be > 0");
    if (!(train.dice_smooth >= 0)) p.push_back("train.dice_smooth: must be >= 0");
    if (train.augmentation.intensity_shift < 0 || train.augmentation.contrast < 0 || train.augmentation.noise_sigma < 0) {
      p.push_back("train.augmentation: magnitudes must be >= 0");
    }
    if (fl.rounds == 0) p.push_back("fl.rounds: must be >= 1");
    if (fl.local_iterations == 0) p.push_back("fl.local_iterations: must be >= 1");
    for (const auto& [id, n] : fl.per_client_iterations) {
      if (!ids.count(id)) p.push_back("fl.per_client_iterations: unknown site '" + id + "'");
      if (n == 0) p.push_back("fl.per_client_iterations." + id + ": must be >= 1");
    }
    if (fl.weighting == Weighting::Fixed) {
      for (const auto& s : sites) {
        if (!fl.fixed_weights.count(s.id)) p.push_back("fl.fixed_weights: missing weight for site '" + s.id + "'");
      }
      for (const auto& [id, w] : fl.fixed_weights) {
        if (!(w >= 0)) p.push_back("fl.fixed_weights." + id + ": must be >= 0");
      }
    }
    if (!(fl.participation > 0 && fl.participation <= 1)) p.push_back("fl.participation: must lie in (0, 1]");
    if (!(supernet_multiplier >= 1)) p.push_back("supernet_multiplier: must be >= 1");
    if (adapt.method != "gradient" && adapt.method != "exhaustive") {
      p.push_back("adapt.method: must be \"gradient\" or \"exhaustive\"");
    }
    if (adapt.epochs == 0) p.push_back("adapt.epochs: must be >= 1");
    if (adapt.images_per_step == 0) p.push_back("adapt.images_per_step: must be >= 1");
    if (!(adapt.optimizer.lr > 0)) p.push_back("adapt.optimizer.lr: must be > 0");
    if (arch_ok && adapt.method == "exhaustive" && has_mode("adapt") && supernet.path_count() > adapt.exhaustive_budget) {
      p.push_back("adapt.exhaustive_budget: " + std::to_string(supernet.path_count()) + " paths exceed the budget of " +
                  std::to_string(adapt.exhaustive_budget));
    }
    // Without path sampling only the default path is trained, so coverage of
    // the other paths is moot.
    const bool trains_supernet = (has_mode("sn-local") || has_mode("sn-fed")) && train.sample_paths;
    if (arch_ok && p.empty() && trains_supernet) {
      const TrainingLengthCheck c = training_length();
      if (!c.pass) {
        p.push_back("supernet_multiplier: " + std::to_string(c.iterations) + " supernet iterations give " +
                    format_value(c.expected_selections) + " expected selections per path over " +
                    std::to_string(c.path_count) + " paths (need >= 1)");
      }
    }
    return p;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError(std::move(p));
  }
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const OptimizerConfig& o) {
  return {{"kind", std::string(to_string(o.kind))},
          {"lr", o.lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"weight_decay", o.weight_decay}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : c.sites) sites.push_back(to_json(s));
  nlohmann::json fl{{"rounds", c.fl.rounds},
                    {"local_iterations", c.fl.local_iterations},
                    {"per_client_iterations", c.fl.per_client_iterations},
                    {"weighting", c.fl.weighting == Weighting::Fixed ? "fixed" : "iterations"},
                    {"fixed_weights", c.fl.fixed_weights},
                    {"participation", c.fl.participation},
                    {"parallel", c.fl.parallel}};
  nlohmann::json train{{"optimizer", to_json(c.train.optimizer)},
                       {"crops_per_image", c.train.crops_per_image},
                       {"images_per_batch", c.train.images_per_batch},
                       {"crop_size", c.train.crop_size},
                       {"augment", c.train.augment},
                       {"augmentation",
                        {{"intensity_shift", c.train.augmentation.intensity_shift},
                         {"contrast", c.train.augmentation.contrast},
                         {"noise_sigma", c.train.augmentation.noise_sigma}}},
                       {"dice_smooth", c.train.dice_smooth},
                       {"dice_only", c.train.dice_only},
                       {"sample_paths", c.train.sample_paths}};
  nlohmann::json adapt{{"method", c.adapt.method},
                       {"epochs", c.adapt.epochs},
                       {"images_per_step", c.adapt.images_per_step},
                       {"optimizer", to_json(c.adapt.optimizer)},
                       {"exhaustive_budget", c.adapt.exhaustive_budget}};
  return {{"name", c.name},
          {"precision", c.precision},
          {"modes", c.modes},
          {"data",
           {{"seed", c.data_seed}, {"image_size", c.image_size}, {"split_seeds", c.split_seeds}, {"sites", sites}}},
          {"model_seed", c.model_seed},
          {"supernet", to_json(c.supernet)},
          {"fl", fl},
          {"train", train},
          {"supernet_multiplier", c.supernet_multiplier},
          {"adapt", adapt},
          {"include_central", c.include_central}};
}

namespace detail {

/// Reads optional keys into existing defaults, collecting problems instead of
/// stopping at the first one.
class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& issues) : issues_(issues) {}

  bool object(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      issues_.push_back(where + ": expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        issues_.push_back(qualify(where, key) + ": unknown key");
      }
    }
    return true;
  }

  void get(const nlohmann::json& j, const std::string& where, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) return fail(where, key, "expected a string");
    out = j[key].get<std::string>();
  }
  void get(const nlohmann::json& j, const std::string& where, const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean()) return fail(where, key, "expected true or false");
    out = j[key].get<bool>();
  }
  void get(const nlohmann::json& j, const std::string& where, const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) return fail(where, key, "expected a number");
    out = j[key].get<double>();
  }
  template <class U>
    requires std::is_unsigned_v<U>
  void get(const nlohmann::json& j, const std::string& where, const char* key, U& out) {
    if (!j.contains(key)) return;
    if (!non_negative_integer(j[key])) return fail(where, key, "expected a non-negative integer");
    out = j[key].get<U>();
  }
  template <class U>
    requires std::is_unsigned_v<U>
  void get(const nlohmann::json& j, const std::string& where, const char* key, std::vector<U>& out) {
    if (!j.contains(key)) return;
    const auto& a = j[key];
    if (!a.is_array() || !std::all_of(a.begin(), a.end(), [](const auto& v) { return non_negative_integer(v); })) {
      return fail(where, key, "expected an array of non-negative integers");
    }
    out = a.get<std::vector<U>>();
  }

  void optimizer(const nlohmann::json& j, const std::string& where, OptimizerConfig& out) {
    if (!object(j, where, {"kind", "lr", "beta1", "beta2", "eps", "weight_decay"})) return;
    if (j.contains("kind")) {
      std::string k;
      get(j, where, "kind", k);
      try {
        const OptimizerKind kind = parse_optimizer_kind(k);
        out = kind == OptimizerKind::Sgd    ? OptimizerConfig::sgd(out.lr)
              : kind == OptimizerKind::Adam ? OptimizerConfig::adam(out.lr)
                                            : OptimizerConfig::novograd(out.lr);
      } catch (const std::exception&) {
        fail(where, "kind", "expected \"sgd\", \"adam\" or \"novograd\"");
      }
    }
    get(j, where, "lr", out.lr);
    get(j, where, "beta1", out.beta1);
    get(j, where, "beta2", out.beta2);
    get(j, where, "eps", out.eps);
    get(j, where, "weight_decay", out.weight_decay);
  }

  static bool non_negative_integer(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  void fail(const std::string& where, const std::string& key, const std::string& why) {
    issues_.push_back(qualify(where, key) + ": " + why);
  }

 private:
  static std::string qualify(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
  }
  std::vector<std::string>& issues_;
};

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Parses an experiment description. String references to supernet or site
/// files are resolved against `base_dir`. Throws ConfigError listing every
/// bad field, including the semantic checks of ExperimentConfig::problems().
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  std::vector<std::string> issues;
  detail::ConfigReader r(issues);
  ExperimentConfig c;
  if (!r.object(j, "", {"name", "precision", "modes", "data", "model_seed", "supernet", "fl", "train",
                        "supernet_multiplier", "adapt", "include_central"})) {
    throw ConfigError(std::move(issues));
  }
  r.get(j, "", "name", c.name);
  r.get(j, "", "precision", c.precision);
  if (j.contains("modes")) {
    const auto& m = j["modes"];
    if (m.is_string()) {
      c.modes = {m.get<std::string>()};
    } else if (m.is_array() && std::all_of(m.begin(), m.end(), [](const auto& v) { return v.is_string(); })) {
      c.modes = m.get<std::vector<std::string>>();
    } else {
      r.fail("", "modes", "expected a mode name or an array of mode names");
    }
  }
  r.get(j, "", "model_seed", c.model_seed);
  r.get(j, "", "supernet_multiplier", c.supernet_multiplier);
  r.get(j, "", "include_central", c.include_central);

  if (j.contains("data") && r.object(j["data"], "data", {"seed", "image_size", "split_seeds", "sites"})) {
    const auto& d = j["data"];
    r.get(d, "data", "seed", c.data_seed);
    r.get(d, "data", "image_size", c.image_size);
    r.get(d, "data", "split_seeds", c.split_seeds);
    if (d.contains("sites")) {
      nlohmann::json sites = d["sites"];
      if (sites.is_string()) {
        const auto path = base_dir / sites.get<std::string>();
        if (!std::filesystem::exists(path)) {
          r.fail("data", "sites", "file not found: " + path.string());
          sites = nlohmann::json::array();
        } else {
          sites = detail::read_json_file(path);
        }
      }
      if (!sites.is_array()) {
        r.fail("data", "sites", "expected an array of site profiles or a file name");
      } else {
        c.sites.clear();
        for (std::size_t i = 0; i < sites.size(); ++i) {
          try {
            c.sites.push_back(site_profile_from_json(sites[i]));
          } catch (const std::exception& e) {
            r.fail("data", "sites[" + std::to_string(i) + "]", e.what());
          }
        }
      }
    }
  }

  if (j.contains("supernet")) {
    nlohmann::json s = j["supernet"];
    try {
      if (s.is_string()) {
        const std::string ref = s.get<std::string>();
        if (ref == "desk") {
          c.supernet = desk_supernet_config();
        } else if (ref == "full") {
          c.supernet = full_supernet_config();
        } else if (const auto path = base_dir / ref; std::filesystem::exists(path)) {
          c.supernet = supernet_config_from_json(detail::read_json_file(path));
        } else {
          r.fail("", "supernet", "not a preset (desk, full) and file not found: " + path.string());
        }
      } else if (s.is_object()) {
        c.supernet = supernet_config_from_json(s);
      } else {
        r.fail("", "supernet", "expected a preset name, a file name or an inline object");
      }
    } catch (const std::exception& e) {
      r.fail("", "supernet", e.what());
    }
  }

  if (j.contains("fl") && r.object(j["fl"], "fl", {"rounds", "local_iterations", "per_client_iterations", "weighting",
                                                   "fixed_weights", "participation", "parallel"})) {
    const auto& f = j["fl"];
    r.get(f, "fl", "rounds", c.fl.rounds);
    r.get(f, "fl", "local_iterations", c.fl.local_iterations);
    r.get(f, "fl", "participation", c.fl.participation);
    r.get(f, "fl", "parallel", c.fl.parallel);
    if (f.contains("weighting")) {
      std::string w;
      r.get(f, "fl", "weighting", w);
      if (w == "iterations") {
        c.fl.weighting = Weighting::ByIterations;
      } else if (w == "fixed") {
        c.fl.weighting = Weighting::Fixed;
      } else {
        r.fail("fl", "weighting", "expected \"iterations\" or \"fixed\"");
      }
    }
    if (f.contains("per_client_iterations")) {
      const auto& m = f["per_client_iterations"];
      if (!m.is_object()) {
        r.fail("fl", "per_client_iterations", "expected an object of site -> iterations");
      } else {
        for (const auto& [id, v] : m.items()) {
          if (!detail::ConfigReader::non_negative_integer(v)) {
            r.fail("fl", "per_client_iterations." + id, "expected a non-negative integer");
          } else {
            c.fl.per_client_iterations[id] = v.get<std::size_t>();
          }
        }
      }
    }
    if (f.contains("fixed_weights")) {
      const auto& m = f["fixed_weights"];
      if (!m.is_object()) {
        r.fail("fl", "fixed_weights", "expected an object of site -> weight");
      } else {
        for (const auto& [id, v] : m.items()) {
          if (!v.is_number()) {
            r.fail("fl", "fixed_weights." + id, "expected a number");
          } else {
            c.fl.fixed_weights[id] = v.get<double>();
          }
        }
      }
    }
  }

  if (j.contains("train") &&
      r.object(j["train"], "train", {"optimizer", "crops_per_image", "images_per_batch", "crop_size", "augment",
                                     "augmentation", "dice_smooth", "dice_only", "sample_paths"})) {
    const auto& t = j["train"];
    if (t.contains("optimizer")) r.optimizer(t["optimizer"], "train.optimizer", c.train.optimizer);
    r.get(t, "train", "crops_per_image", c.train.crops_per_image);
    r.get(t, "train", "images_per_batch", c.train.images_per_batch);
    r.get(t, "train", "crop_size", c.train.crop_size);
    r.get(t, "train", "augment", c.train.augment);
    r.get(t, "train", "dice_smooth", c.train.dice_smooth);
    r.get(t, "train", "dice_only", c.train.dice_only);
    r.get(t, "train", "sample_paths", c.train.sample_paths);
    if (t.contains("augmentation") &&
        r.object(t["augmentation"], "train.augmentation", {"intensity_shift", "contrast", "noise_sigma"})) {
      const auto& a = t["augmentation"];
      r.get(a, "train.augmentation", "intensity_shift", c.train.augmentation.intensity_shift);
      r.get(a, "train.augmentation", "contrast", c.train.augmentation.contrast);
      r.get(a, "train.augmentation", "noise_sigma", c.train.augmentation.noise_sigma);
    }
  }

  if (j.contains("adapt") &&
      r.object(j["adapt"], "adapt", {"method", "epochs", "images_per_step", "optimizer", "exhaustive_budget"})) {
    const auto& a = j["adapt"];
    r.get(a, "adapt", "method", c.adapt.method);
    r.get(a, "adapt", "epochs", c.adapt.epochs);
    r.get(a, "adapt", "images_per_step", c.adapt.images_per_step);
    r.get(a, "adapt", "exhaustive_budget", c.adapt.exhaustive_budget);
    if (a.contains("optimizer")) r.optimizer(a["optimizer"], "adapt.optimizer", c.adapt.optimizer);
  }

  if (issues.empty()) issues = c.problems();
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("config file not found: " + path.string());
  return experiment_from_json(detail::read_json_file(path), path.parent_path());
}

}  // namespace fedsn
