#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsn/adaptation.hpp"
#include "fedsn/evaluation.hpp"
#include "fedsn/experiment_config.hpp"
#include "fedsn/federation.hpp"
#include "fedsn/metrics.hpp"
#include "fedsn/report.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/synth_data.hpp"
#include <nlohmann/json.hpp>

namespace fedsn {

namespace fs = std::filesystem;

/// Per-seed comparison of the supernet modes; empty optionals mean the
/// needed runs are missing.
struct SeedComparison {
  std::uint64_t split_seed = 0;
  std::optional<double> local_avg_sn_local, local_avg_sn_fed, local_avg_adapt;
  std::optional<double> val_avg_sn_fed, val_avg_adapt;
  std::optional<double> gen_sn_local, gen_sn_fed;
};

/// Reads one seed directory's CSVs back and compares the supernet modes.
inline SeedComparison compare_seed(const fs::path& seed_dir, std::uint64_t split_seed) {
  SeedComparison c;
  c.split_seed = split_seed;
  auto load = [&](const char* mode) -> std::optional<RunScores> {
    const fs::path p = seed_dir / (std::string(mode) + ".csv");
    if (!fs::exists(p)) return std::nullopt;
    return scores_from_rows(read_metrics_file(p.string()), mode);
  };
  if (auto r = load("sn-local")) {
    c.local_avg_sn_local = r->local_average();
    if (r->cross.size() > 1) c.gen_sn_local = r->mean_generalization();
  }
  if (auto r = load("sn-fed")) {
    c.local_avg_sn_fed = r->local_average();
    c.val_avg_sn_fed = r->validation_average();
    if (r->cross.size() > 1) c.gen_sn_fed = r->mean_generalization();
  }
  if (auto r = load("adapt")) {
    c.local_avg_adapt = r->local_average();
    c.val_avg_adapt = r->validation_average();
  }
  return c;
}

inline nlohmann::json to_json(const SeedComparison& c) {
  nlohmann::json j{{"split_seed", c.split_seed}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("avg_loc_sn_local", c.local_avg_sn_local);
  put("avg_loc_sn_fed", c.local_avg_sn_fed);
  put("avg_loc_adapt", c.local_avg_adapt);
  put("avg_val_sn_fed", c.val_avg_sn_fed);
  put("avg_val_adapt", c.val_avg_adapt);
  put("gen_sn_local", c.gen_sn_local);
  put("gen_sn_fed", c.gen_sn_fed);
  if (c.local_avg_sn_fed && c.local_avg_sn_local) j["fed_ge_local"] = *c.local_avg_sn_fed >= *c.local_avg_sn_local;
  if (c.val_avg_adapt && c.val_avg_sn_fed) j["adapt_ge_fed_val"] = *c.val_avg_adapt >= *c.val_avg_sn_fed;
  if (c.local_avg_adapt && c.local_avg_sn_local) j["adapt_ge_local"] = *c.local_avg_adapt >= *c.local_avg_sn_local;
  if (c.gen_sn_fed && c.gen_sn_local) j["fed_gen_gt_local"] = *c.gen_sn_fed > *c.gen_sn_local;
  return j;
}

/// One trained model ready for evaluation: weights plus the path to run.
template <std::floating_point T>
struct TrainedModel {
  SupernetModel<T> model;
  PathSpec path;
};

/// Runs the configured pipeline for every split seed, writing under `out`:
///   config.json                      resolved configuration
///   seed_<s>/<mode>.csv              metrics (round, client, split, metric, value)
///   seed_<s>/<mode>/<site>.ckpt      best checkpoint per client
///   seed_<s>/adapt/<site>.json       adaptation trace and chosen path
///   summary.json                     per-seed comparison of the supernet modes
/// Stages listed in `stages` run in pipeline order; adapt and crosseval load
/// earlier checkpoints from disk when those stages are not part of the call.
template <std::floating_point T>
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, fs::path out) : cfg_(std::move(config)), out_(std::move(out)) {
    cfg_.validate();
    for (const auto& p : cfg_.sites) {
      std::vector<Case<T>> cases;
      for (auto& c : generate_site<T>(p, cfg_.image_size, cfg_.data_seed)) cases.push_back(normalize(std::move(c)));
      data_.push_back(std::move(cases));
    }
  }

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const std::vector<std::vector<Case<T>>>& data() const noexcept { return data_; }

  SplitSet site_split(std::size_t site, std::uint64_t split_seed) const {
    return split(data_[site].size(), derive_seed(split_seed, "split:" + cfg_.sites[site].id));
  }

  void run() { run(cfg_.modes); }

  void run(const std::vector<std::string>& stages) {
    fs::create_directories(out_);
    {
      std::ofstream os(out_ / "config.json");
      os << to_json(cfg_).dump(2) << "\n";
    }
    nlohmann::json summary = nlohmann::json::array();
    for (std::uint64_t s : cfg_.split_seeds) {
      run_seed(s, stages);
      summary.push_back(to_json(compare_seed(seed_dir(s), s)));
    }
    std::ofstream os(out_ / "summary.json");
    os << summary.dump(2) << "\n";
  }

  fs::path seed_dir(std::uint64_t s) const { return out_ / ("seed_" + std::to_string(s)); }

 private:
  static bool is_unet(const std::string& mode) { return mode.rfind("unet-", 0) == 0; }

  SupernetConfig architecture(const std::string& mode) const {
    return is_unet(mode) ? cfg_.supernet.default_path_only() : cfg_.supernet;
  }

  std::size_t rounds(const std::string& mode) const {
    return is_unet(mode) ? cfg_.baseline_rounds() : cfg_.supernet_rounds();
  }

  TrainConfig<T> train_config(const std::string& mode) const {
    TrainConfig<T> t = cfg_.train.template to_train_config<T>();
    if (is_unet(mode)) t.sample_paths = false;  // one path; no draws
    return t;
  }

  std::uint64_t client_seed(std::uint64_t split_seed, const std::string& site) const {
    return derive_seed(derive_seed(split_seed, "client"), site);
  }

  LossOptions<T> loss() const { return {static_cast<T>(cfg_.train.dice_smooth), cfg_.train.dice_only}; }

  struct SeedState {
    std::uint64_t seed = 0;
    fs::path dir;
    std::vector<SplitSet> splits;
    std::map<std::string, std::vector<TrainedModel<T>>> models;  // mode -> per site
    std::map<std::string, MetricsLog> logs;
  };

  void run_seed(std::uint64_t s, const std::vector<std::string>& stages) {
    SeedState st;
    st.seed = s;
    st.dir = seed_dir(s);
    fs::create_directories(st.dir);
    for (std::size_t k = 0; k < data_.size(); ++k) st.splits.push_back(site_split(k, s));
    auto wants = [&](const std::string& m) { return std::find(stages.begin(), stages.end(), m) != stages.end(); };
    for (const std::string mode : {"unet-local", "sn-local"}) {
      if (wants(mode)) train_local(st, mode);
      if (wants(mode) && cfg_.include_central) train_central(st, mode);
    }
    for (const std::string mode : {"unet-fed", "sn-fed"}) {
      if (wants(mode)) train_federated(st, mode);
    }
    if (wants("adapt")) adapt(st);
    if (wants("crosseval")) crosseval(st);
  }

  void final_rows(MetricsLog& log, const std::string& client, const TrainedModel<T>& m, const std::vector<Case<T>>& cases,
                  const SplitSet& sp) const {
    if (!sp.validation.empty()) {
      const Evaluation v = evaluate(m.model, m.path, cases, sp.validation, loss());
      log.add("final", client, "val", "dice", v.mean_dice);
      log.add("final", client, "val", "loss", v.loss);
    }
    const Evaluation e = evaluate(m.model, m.path, cases, sp.test, loss());
    log.add("final", client, "test", "dice", e.mean_dice);
    log.add("final", client, "test", "loss", e.loss);
    for (std::size_t i = 0; i < e.case_ids.size(); ++i) {
      log.add("final", client, "test", "case_dice:" + std::to_string(e.case_ids[i]), e.case_dice[i]);
    }
  }

  void save_mode(SeedState& st, const std::string& mode) const {
    st.logs[mode].save((st.dir / (mode + ".csv")).string());
    if (mode == "adapt") return;
    fs::create_directories(st.dir / mode);
    const auto& models = st.models.at(mode);
    for (std::size_t k = 0; k < models.size(); ++k) {
      save_checkpoint((st.dir / mode / (site_name(mode, k) + ".ckpt")).string(), models[k].model.parameters());
    }
  }

  std::string site_name(const std::string& mode, std::size_t k) const {
    return mode.find("-central") != std::string::npos ? std::string("central") : cfg_.sites[k].id;
  }

  void train_local(SeedState& st, const std::string& mode) {
    const auto proto = SupernetModel<T>::build(architecture(mode), cfg_.model_seed);
    MetricsLog log;
    std::vector<TrainedModel<T>> trained;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const std::string& id = cfg_.sites[k].id;
      Client<T> client(id, data_[k], st.splits[k], proto, train_config(mode), client_seed(st.seed, id));
      const std::size_t n_k = cfg_.iterations_per_round(id);
      auto [best, history] = run_local(client, rounds(mode) * n_k, n_k, proto.default_path());
      log.append(history);
      SupernetModel<T> m = proto;
      m.set_parameters(best.params);
      trained.push_back({std::move(m), proto.default_path()});
    }
    for (std::size_t k = 0; k < data_.size(); ++k) final_rows(log, cfg_.sites[k].id, trained[k], data_[k], st.splits[k]);
    st.logs[mode] = std::move(log);
    st.models[mode] = std::move(trained);
    save_mode(st, mode);
  }

  /// All sites' training data pooled into one client; scored per site.
  void train_central(SeedState& st, const std::string& local_mode) {
    const std::string mode = local_mode.substr(0, local_mode.find('-')) + "-central";
    const auto proto = SupernetModel<T>::build(architecture(local_mode), cfg_.model_seed);
    std::vector<Case<T>> pooled;
    std::vector<std::size_t> sizes;
    for (const auto& d : data_) {
      pooled.insert(pooled.end(), d.begin(), d.end());
      sizes.push_back(d.size());
    }
    const SplitSet sp = pool_splits(st.splits, sizes);
    std::size_t n = 0;
    for (const auto& s : cfg_.sites) n += cfg_.iterations_per_round(s.id);
    Client<T> client("central", pooled, sp, proto, train_config(local_mode), client_seed(st.seed, "central"));
    auto [best, log] = run_local(client, rounds(local_mode) * n, n, proto.default_path());
    SupernetModel<T> m = proto;
    m.set_parameters(best.params);
    TrainedModel<T> tm{std::move(m), proto.default_path()};
    for (std::size_t k = 0; k < data_.size(); ++k) final_rows(log, cfg_.sites[k].id, tm, data_[k], st.splits[k]);
    st.logs[mode] = std::move(log);
    st.models[mode] = {std::move(tm)};
    save_mode(st, mode);
  }

  void train_federated(SeedState& st, const std::string& mode) {
    const auto proto = SupernetModel<T>::build(architecture(mode), cfg_.model_seed);
    std::vector<Client<T>> clients;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const std::string& id = cfg_.sites[k].id;
      clients.emplace_back(id, data_[k], st.splits[k], proto, train_config(mode), client_seed(st.seed, id));
    }
    FLConfig fl = cfg_.fl;
    fl.rounds = rounds(mode);
    fl.seed = derive_seed(st.seed, "fl");
    FederatedResult<T> r = run_federated(fl, clients, proto.parameters(), proto.default_path());
    std::vector<TrainedModel<T>> trained;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      SupernetModel<T> m = proto;
      const auto it = r.best.find(cfg_.sites[k].id);
      m.set_parameters(it == r.best.end() ? r.global : it->second.params);
      trained.push_back({std::move(m), proto.default_path()});
    }
    for (std::size_t k = 0; k < data_.size(); ++k) final_rows(r.log, cfg_.sites[k].id, trained[k], data_[k], st.splits[k]);
    st.logs[mode] = std::move(r.log);
    st.models[mode] = std::move(trained);
    save_mode(st, mode);
  }

  /// Checkpoints of `mode` from memory, or from disk when trained earlier.
  std::optional<std::vector<TrainedModel<T>>> models_for(SeedState& st, const std::string& mode) {
    if (const auto it = st.models.find(mode); it != st.models.end()) return it->second;
    const bool central = mode.find("-central") != std::string::npos;
    const std::string weights_mode = mode == "adapt" ? "sn-fed" : mode;
    const std::string arch_mode = central ? mode.substr(0, mode.find('-')) + "-local" : weights_mode;
    const auto proto = SupernetModel<T>::build(architecture(arch_mode), cfg_.model_seed);
    std::vector<TrainedModel<T>> out;
    const std::size_t n = central ? 1 : data_.size();
    for (std::size_t k = 0; k < n; ++k) {
      const std::string site = site_name(mode, k);
      const fs::path ckpt = st.dir / weights_mode / (site + ".ckpt");
      if (!fs::exists(ckpt)) return std::nullopt;
      SupernetModel<T> m = proto;
      m.set_parameters(load_checkpoint<T>(ckpt.string()));
      PathSpec path = proto.default_path();
      if (mode == "adapt") {
        const fs::path trace = st.dir / "adapt" / (site + ".json");
        if (!fs::exists(trace)) return std::nullopt;
        path.choices = detail::read_json_file(trace).at("chosen_path").template get<std::vector<std::size_t>>();
        m.validate(path);
      }
      out.push_back({std::move(m), std::move(path)});
    }
    return out;
  }

  std::optional<MetricsLog> log_for(SeedState& st, const std::string& mode) {
    if (const auto it = st.logs.find(mode); it != st.logs.end()) return it->second;
    const fs::path p = st.dir / (mode + ".csv");
    if (!fs::exists(p)) return std::nullopt;
    MetricsLog log;
    for (auto& r : read_metrics_file(p.string())) log.add_row(std::move(r));
    return log;
  }

  void adapt(SeedState& st) {
    auto fed = models_for(st, "sn-fed");
    if (!fed) throw std::runtime_error("adapt: no sn-fed checkpoints under " + st.dir.string() + "; train sn-fed first");
    fs::create_directories(st.dir / "adapt");
    MetricsLog log;
    std::vector<TrainedModel<T>> adapted;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const std::string& id = cfg_.sites[k].id;
      const auto& base = (*fed)[k];
      AdaptationResult r;
      if (cfg_.adapt.method == "exhaustive") {
        r = adapt_exhaustive(base.model, data_[k], st.splits[k].validation, cfg_.adapt.exhaustive_budget, loss());
      } else {
        AdaptConfig<T> ac;
        ac.epochs = cfg_.adapt.epochs;
        ac.images_per_step = cfg_.adapt.images_per_step;
        ac.optimizer = cfg_.adapt.optimizer;
        ac.loss = loss();
        ac.seed = derive_seed(st.seed, "adapt:" + id);
        r = adapt_gradient(base.model, data_[k], st.splits[k].validation, ac);
      }
      std::ofstream os(st.dir / "adapt" / (id + ".json"));
      os << to_json(r).dump(2) << "\n";
      for (const auto& step : r.trajectory) log.add(step.step, id, "val", "adapt_loss", step.loss);
      adapted.push_back({base.model, r.chosen});
    }
    for (std::size_t k = 0; k < data_.size(); ++k) final_rows(log, cfg_.sites[k].id, adapted[k], data_[k], st.splits[k]);
    st.logs["adapt"] = std::move(log);
    st.models["adapt"] = std::move(adapted);
    save_mode(st, "adapt");
  }

  /// Adds Dice of every site's model on every site's test split to each
  /// available mode's CSV (split "test:<site>"); replaces earlier such rows.
  void crosseval(SeedState& st) {
    std::vector<std::string> modes{"unet-local", "unet-fed", "sn-local", "sn-fed", "adapt"};
    bool any = false;
    for (const auto& mode : modes) {
      auto models = models_for(st, mode);
      auto log = log_for(st, mode);
      if (!models || !log) continue;
      any = true;
      MetricsLog out;
      for (const auto& r : log->rows()) {
        if (r.split.rfind("test:", 0) != 0) out.add_row(r);
      }
      for (std::size_t i = 0; i < models->size(); ++i) {
        for (std::size_t j = 0; j < data_.size(); ++j) {
          const Evaluation e = evaluate((*models)[i].model, (*models)[i].path, data_[j], st.splits[j].test, loss());
          out.add("final", cfg_.sites[i].id, "test:" + cfg_.sites[j].id, "dice", e.mean_dice);
        }
      }
      st.logs[mode] = out;
      out.save((st.dir / (mode + ".csv")).string());
    }
    if (!any) throw std::runtime_error("crosseval: no trained models under " + st.dir.string());
  }

  ExperimentConfig cfg_;
  fs::path out_;
  std::vector<std::vector<Case<T>>> data_;
};

/// Dispatches on the configured precision.
inline void run_pipeline(const ExperimentConfig& cfg, const fs::path& out, const std::vector<std::string>& stages) {
  if (cfg.precision == "f32") {
    Pipeline<float>(cfg, out).run(stages);
  } else {
    Pipeline<double>(cfg, out).run(stages);
  }
}

/// Writes every site's cases plus the split indices for each seed.
template <std::floating_point T>
void write_dataset(const Pipeline<T>& p, const fs::path& out) {
  const auto& cfg = p.config();
  nlohmann::json manifest{{"image_size", cfg.image_size}, {"data_seed", cfg.data_seed}};
  for (std::size_t k = 0; k < cfg.sites.size(); ++k) {
    const std::string& id = cfg.sites[k].id;
    const fs::path dir = out / "data" / id;
    fs::create_directories(dir);
    const auto& cases = p.data()[k];
    for (const auto& c : cases) write_case((dir / ("case_" + std::to_string(c.case_id) + ".bin")).string(), c);
    nlohmann::json site{{"profile", to_json(cfg.sites[k])}, {"cases", cases.size()}, {"splits", nlohmann::json::object()}};
    for (std::uint64_t s : cfg.split_seeds) {
      const SplitSet sp = p.site_split(k, s);
      site["splits"][std::to_string(s)] = {{"train", sp.train}, {"validation", sp.validation}, {"test", sp.test}};
    }
    manifest["sites"][id] = site;
  }
  std::ofstream os(out / "data" / "manifest.json");
  os << manifest.dump(2) << "\n";
}

}  // namespace fedsn
