#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <future>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/evaluation.hpp"
#include "fedsn/metrics.hpp"
#include "fedsn/optim.hpp"
#include "fedsn/parameters.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/synth_data.hpp"

namespace fedsn {

/// What a client sends back after a round: parameter delta and the number
/// of local iterations behind it. Nothing else crosses the boundary.
template <std::floating_point T>
struct ClientUpdate {
  std::string client_id;
  std::size_t round = 0;
  std::size_t iterations = 0;  // n_k
  ParameterSet<T> delta;
};

// Wire format: "FEDSNUPD" u32 version u32 id_len id u64 round u64 n_k, then
// the delta as a checkpoint.
inline constexpr char kUpdateMagic[8] = {'F', 'E', 'D', 'S', 'N', 'U', 'P', 'D'};

template <std::floating_point T>
void write_update(std::ostream& os, const ClientUpdate<T>& u) {
  os.write(kUpdateMagic, sizeof(kUpdateMagic));
  io::put<std::uint32_t>(os, 1);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(u.client_id.size()));
  os.write(u.client_id.data(), static_cast<std::streamsize>(u.client_id.size()));
  io::put<std::uint64_t>(os, u.round);
  io::put<std::uint64_t>(os, u.iterations);
  write_checkpoint(os, u.delta);
}

template <std::floating_point T>
ClientUpdate<T> read_update(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kUpdateMagic, 8) != 0) throw std::runtime_error("update: bad magic");
  if (io::get<std::uint32_t>(is, "version") != 1) throw std::runtime_error("update: unsupported version");
  ClientUpdate<T> u;
  u.client_id.resize(io::get<std::uint32_t>(is, "id length"));
  if (!is.read(u.client_id.data(), static_cast<std::streamsize>(u.client_id.size()))) {
    throw std::runtime_error("update: truncated client id");
  }
  u.round = io::get<std::uint64_t>(is, "round");
  u.iterations = io::get<std::uint64_t>(is, "iterations");
  u.delta = read_checkpoint<T>(is);
  return u;
}

/// Local optimisation settings shared by every training mode.
template <std::floating_point T>
struct TrainConfig {
  OptimizerConfig optimizer = OptimizerConfig::novograd(1e-3);
  std::size_t crops_per_image = 3;
  std::size_t images_per_batch = 6;
  Shape crop_size{16, 16};
  bool augment = true;
  AugmentConfig augmentation;
  LossOptions<T> loss;
  bool sample_paths = true;  // false trains only the default path
};

/// One site: its data, a private model copy, optimiser state and RNG. All
/// state persists across rounds. `seed` drives crop, augmentation and path
/// sampling draws.
template <std::floating_point T>
class Client {
 public:
  Client(std::string id, std::vector<Case<T>> cases, SplitSet split, const SupernetModel<T>& prototype,
         TrainConfig<T> train, std::uint64_t seed)
      : id_(std::move(id)),
        cases_(std::move(cases)),
        split_(std::move(split)),
        model_(prototype),
        train_(std::move(train)),
        optimizer_(train_.optimizer),
        rng_(seed) {
    model_.parameters().set_requires_grad(true);
  }

  const std::string& id() const noexcept { return id_; }
  const std::vector<Case<T>>& cases() const noexcept { return cases_; }
  const SplitSet& split() const noexcept { return split_; }
  const SupernetModel<T>& model() const noexcept { return model_; }
  const TrainConfig<T>& train_config() const noexcept { return train_; }
  std::uint64_t steps_taken() const noexcept { return steps_; }

  /// Overwrites the local weights.
  void load(const ParameterSet<T>& params) { model_.set_parameters(params); }

  /// `n` minibatch steps from the current local weights.
  void train_steps(std::size_t n) {
    if (split_.train.empty()) throw std::invalid_argument("client " + id_ + ": empty training split");
    for (std::size_t k = 0; k < n; ++k) step();
  }

  /// Algorithm-1 local training: start from `global`, run `n_k` steps and
  /// return the delta. Local weights end at exactly global + delta.
  ClientUpdate<T> local_training(const ParameterSet<T>& global, std::size_t n_k, std::size_t round = 0) {
    if (n_k == 0) throw std::invalid_argument("client " + id_ + ": local iteration count must be >= 1");
    if (split_.train.empty()) throw std::invalid_argument("client " + id_ + ": empty training split");
    load(global);
    train_steps(n_k);
    ClientUpdate<T> u{id_, round, n_k, global.detached()};
    auto& local = model_.parameters().entries();
    for (std::size_t i = 0; i < local.size(); ++i) {
      auto d = u.delta.entries()[i].field.values();
      const auto g = global.entries()[i].field.values();
      auto l = local[i].field.values();
      for (std::size_t j = 0; j < d.size(); ++j) {
        d[j] = l[j] - g[j];
        l[j] = g[j] + d[j];
      }
    }
    return u;
  }

  Evaluation evaluate_split(const ParameterSet<T>& params, const PathSpec& path,
                            const std::vector<std::size_t>& which) const {
    SupernetModel<T> probe = model_;
    probe.set_parameters(params);
    return evaluate(std::as_const(probe), path, cases_, which, train_.loss);
  }

 private:
  void step() {
    Batch<T> batch = sample_minibatch(cases_, split_.train, train_.crops_per_image, train_.images_per_batch,
                                      train_.crop_size, rng_);
    if (train_.augment) fedsn::augment(batch, train_.augmentation, rng_);
    const PathSpec path = train_.sample_paths ? sample_path(model_, rng_) : model_.default_path();
    model_.parameters().clear_grad();
    {
      Tape<T> tape;
      const Var<T> logits = forward(tape, model_, path, tape.constant(batch.images));
      tape.backward(combined_loss(logits, batch.masks, train_.loss));
    }
    optimizer_.step(model_.parameters(), model_.path_parameter_names(path));
    ++steps_;
  }

  std::string id_;
  std::vector<Case<T>> cases_;
  SplitSet split_;
  SupernetModel<T> model_;
  TrainConfig<T> train_;
  Optimizer<T> optimizer_;
  Rng rng_;
  std::uint64_t steps_ = 0;
};

enum class Weighting { ByIterations, Fixed };

struct FLConfig {
  std::size_t rounds = 50;             // T
  std::size_t local_iterations = 20;   // n_k, used when per_client_iterations is empty
  std::map<std::string, std::size_t> per_client_iterations;
  Weighting weighting = Weighting::ByIterations;
  std::map<std::string, double> fixed_weights;  // w_k for Weighting::Fixed
  double participation = 1.0;                   // fraction of clients per round
  bool parallel = true;
  std::uint64_t seed = 0;

  std::size_t iterations_for(const std::string& client) const {
    const auto it = per_client_iterations.find(client);
    return it == per_client_iterations.end() ? local_iterations : it->second;
  }
};

/// phi = sum_k w_k (phi_prev + delta_k) with w_k = n_k / sum n (or
/// normalised fixed weights). Updates are combined in client-id order, so
/// the result does not depend on the order they arrive in.
template <std::floating_point T>
ParameterSet<T> aggregate(std::vector<ClientUpdate<T>> updates, const ParameterSet<T>& previous,
                          Weighting weighting = Weighting::ByIterations,
                          const std::map<std::string, double>& fixed_weights = {}) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
  std::sort(updates.begin(), updates.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (k && updates[k].client_id == updates[k - 1].client_id) {
      throw std::invalid_argument("aggregate: duplicate update from client " + updates[k].client_id);
    }
    if (!updates[k].delta.congruent(previous)) {
      throw std::invalid_argument("aggregate: update from client " + updates[k].client_id +
                                  " is not congruent with the global parameters");
    }
    if (updates[k].iterations == 0) {
      throw std::invalid_argument("aggregate: client " + updates[k].client_id + " reported zero iterations");
    }
  }
  std::vector<double> w(updates.size());
  double total = 0;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (weighting == Weighting::ByIterations) {
      w[k] = static_cast<double>(updates[k].iterations);
    } else {
      const auto it = fixed_weights.find(updates[k].client_id);
      if (it == fixed_weights.end() || !(it->second > 0)) {
        throw std::invalid_argument("aggregate: no positive fixed weight for client " + updates[k].client_id);
      }
      w[k] = it->second;
    }
    total += w[k];
  }
  for (double& x : w) x /= total;

  ParameterSet<T> out = previous.detached();
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto dst = out.entries()[i].field.values();
    const auto prev = previous.entries()[i].field.values();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      T acc{0};
      for (std::size_t k = 0; k < updates.size(); ++k) {
        acc += static_cast<T>(w[k]) * (prev[j] + updates[k].delta.entries()[i].field[j]);
      }
      dst[j] = acc;
    }
  }
  return out;
}

/// Best parameters a client has seen on its validation split.
template <std::floating_point T>
struct BestCheckpoint {
  std::size_t round = 0;
  double dice = -1;
  ParameterSet<T> params;
};

template <std::floating_point T>
struct FederatedResult {
  ParameterSet<T> global;
  std::size_t rounds_run = 0;
  std::map<std::string, BestCheckpoint<T>> best;
  MetricsLog log;
};

/// Runs T synchronous rounds of FederatedAveraging. After each round the new
/// global model is scored on every client's validation split along `probe`;
/// each client keeps the global model that scored best for it.
template <std::floating_point T>
FederatedResult<T> run_federated(const FLConfig& config, std::vector<Client<T>>& clients,
                                 const ParameterSet<T>& initial, const PathSpec& probe) {
  if (clients.empty()) throw std::invalid_argument("run_federated: no clients");
  if (!(config.participation > 0 && config.participation <= 1)) {
    throw std::invalid_argument("run_federated: participation must lie in (0, 1]");
  }
  FederatedResult<T> result{initial.detached(), 0, {}, {}};
  Rng rng(derive_seed(config.seed, "participation"));
  const std::size_t per_round =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.participation * clients.size() - 1e-9)));

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    std::vector<std::size_t> chosen(clients.size());
    for (std::size_t k = 0; k < chosen.size(); ++k) chosen[k] = k;
    if (per_round < clients.size()) {
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(per_round);
      std::sort(chosen.begin(), chosen.end());
    }
    std::vector<ClientUpdate<T>> updates(chosen.size());
    auto work = [&](std::size_t slot) {
      Client<T>& c = clients[chosen[slot]];
      updates[slot] = c.local_training(result.global, config.iterations_for(c.id()), t);
    };
    std::vector<std::string> failures;
    if (config.parallel && chosen.size() > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t s = 0; s < chosen.size(); ++s) jobs.push_back(std::async(std::launch::async, work, s));
      for (std::size_t s = 0; s < jobs.size(); ++s) {
        try {
          jobs[s].get();
        } catch (const std::exception& e) {
          failures.push_back(clients[chosen[s]].id() + ": " + e.what());
        }
      }
    } else {
      for (std::size_t s = 0; s < chosen.size(); ++s) {
        try {
          work(s);
        } catch (const std::exception& e) {
          failures.push_back(clients[chosen[s]].id() + ": " + e.what());
        }
      }
    }
    if (!failures.empty()) {
      std::string msg = "round " + std::to_string(t) + " aborted:";
      for (const auto& f : failures) msg += " [" + f + "]";
      throw std::runtime_error(msg);
    }
    result.global = aggregate(std::move(updates), result.global, config.weighting, config.fixed_weights);
    result.rounds_run = t;

    for (const auto& c : clients) {
      if (c.split().validation.empty()) continue;
      const Evaluation e = c.evaluate_split(result.global, probe, c.split().validation);
      result.log.add(t, c.id(), "val", "dice", e.mean_dice);
      result.log.add(t, c.id(), "val", "loss", e.loss);
      auto& best = result.best[c.id()];
      if (e.mean_dice > best.dice) best = {t, e.mean_dice, result.global.detached()};
    }
  }
  return result;
}

/// Continuous training on one client's own data, scored every `eval_every`
/// steps; keeps the best parameters by validation Dice.
template <std::floating_point T>
std::pair<BestCheckpoint<T>, MetricsLog> run_local(Client<T>& client, std::size_t total_steps,
                                                   std::size_t eval_every, const PathSpec& probe) {
  if (eval_every == 0) throw std::invalid_argument("run_local: eval_every must be >= 1");
  BestCheckpoint<T> best;
  MetricsLog log;
  std::size_t done = 0, chunk = 0;
  while (done < total_steps) {
    const std::size_t n = std::min(eval_every, total_steps - done);
    client.train_steps(n);
    done += n;
    ++chunk;
    if (client.split().validation.empty()) continue;
    const auto& params = client.model().parameters();
    const Evaluation e = client.evaluate_split(params, probe, client.split().validation);
    log.add(chunk, client.id(), "val", "dice", e.mean_dice);
    log.add(chunk, client.id(), "val", "loss", e.loss);
    if (e.mean_dice > best.dice) best = {chunk, e.mean_dice, params.detached()};
  }
  if (best.dice < 0) best = {chunk, -1, client.model().parameters().detached()};
  return {std::move(best), std::move(log)};
}

}  // namespace fedsn
