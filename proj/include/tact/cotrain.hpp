#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tact/buffer.hpp"
#include "tact/config.hpp"
#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/explorer.hpp"
#include "tact/icp.hpp"
#include "tact/objects_io.hpp"
#include "tact/policy.hpp"
#include "tact/rng.hpp"

namespace tact {

struct CotrainConfig {
  long long max_total_steps = 300000;              // training action budget
  int disc_epochs = 2;                             // classifier epochs per iteration (N_d)
  long long explorer_steps_per_iteration = 20000;  // collection actions per iteration (N_e)
  std::size_t buffer_capacity = 30000;
  int initial_episodes = 25;
  double noise_rate = 0.005;  // sensor failure rate during training
  double threshold = 0.98;    // termination confidence

  void validate() const {
    if (max_total_steps < 1) throw ConfigError("cotrain: max_total_steps must be >= 1");
    if (disc_epochs < 0) throw ConfigError("cotrain: disc_epochs must be >= 0");
    if (explorer_steps_per_iteration < 0) {
      throw ConfigError("cotrain: explorer_steps_per_iteration must be >= 0");
    }
    if (buffer_capacity < 1) throw ConfigError("cotrain: buffer_capacity must be >= 1");
    if (initial_episodes < 0) throw ConfigError("cotrain: initial_episodes must be >= 0");
    if (noise_rate < 0.0 || noise_rate > 1.0) throw ConfigError("cotrain: noise_rate in [0, 1]");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("cotrain: threshold in (0, 1]");
  }
};

struct IterationStats {
  int iteration = 0;
  long long total_steps = 0;
  double success_rate_100 = 0.0;
  double mean_actions_100 = 0.0;
  double disc_loss = 0.0;
  std::size_t buffer_size = 0;
  double mean_reward_100 = 0.0;
  double policy_entropy = 0.0;
};

// Serialized pair of trained components, the artifact `train` writes and
// `evaluate` reads.
struct ModelBundle {
  std::string method = "ppo";
  bool has_disc = false;
  Discriminator<float> disc;
  bool has_actor = false;
  ActorCritic<float> actor;

  void save(std::ostream& os) {
    detail::write_string(os, std::string("TACTMDL1"));
    detail::write_string(os, method);
    detail::write_pod<std::uint8_t>(os, has_disc ? 1 : 0);
    detail::write_pod<std::uint8_t>(os, has_actor ? 1 : 0);
    if (has_disc) disc.save(os);
    if (has_actor) actor.save(os);
    if (!os) throw DataError("model bundle: write failed");
  }

  static ModelBundle load(std::istream& is, const DiscriminatorConfig& disc_cfg,
                          double actor_learning_rate) {
    if (detail::read_string(is) != "TACTMDL1") {
      throw ConfigError("model bundle: bad magic (not a model file?)");
    }
    ModelBundle b;
    b.method = detail::read_string(is);
    b.has_disc = detail::read_pod<std::uint8_t>(is) != 0;
    b.has_actor = detail::read_pod<std::uint8_t>(is) != 0;
    if (b.has_disc) b.disc = Discriminator<float>::load(is, disc_cfg);
    if (b.has_actor) b.actor = ActorCritic<float>::load(is, actor_learning_rate);
    return b;
  }

  void save_file(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("model bundle: cannot open for writing: " + path);
    save(os);
  }

  static ModelBundle load_file(const std::string& path, const DiscriminatorConfig& disc_cfg,
                               double actor_learning_rate) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("model bundle: cannot open: " + path);
    return load(is, disc_cfg, actor_learning_rate);
  }
};

namespace detail_cotrain {

struct EpisodeOutcome {
  int actions = 0;
  bool terminated_by_confidence = false;
  int predicted = -1;
  bool correct = false;
  double reward = 0.0;
};

// Trailing window of per-episode outcomes for the iteration log.
class EpisodeWindow {
 public:
  void add(const EpisodeOutcome& e) {
    entries_.push_back(e);
    if (entries_.size() > 100) entries_.pop_front();
  }
  std::size_t count() const { return entries_.size(); }
  double success_rate() const {
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries_) s += e.correct ? 1.0 : 0.0;
    return s / static_cast<double>(entries_.size());
  }
  double mean_actions() const {
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries_) s += e.actions;
    return s / static_cast<double>(entries_.size());
  }
  double mean_reward() const {
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries_) s += e.reward;
    return s / static_cast<double>(entries_.size());
  }

 private:
  std::deque<EpisodeOutcome> entries_;
};

// One full episode driven by an EpisodePolicy (heuristics, or a learned actor
// outside the PPO-collection path). Pushes the classifier view after every
// environment step when a buffer is given. No confidence check happens before
// the first action: training episodes always make progress even when the
// classifier is (degenerately) confident on the empty grid.
inline EpisodeOutcome run_training_episode(TactileEnv& env, int object, std::uint64_t seed,
                                           EpisodePolicy& policy, TerminationJudge& judge,
                                           DataBuffer* buffer, RewardMode reward_mode,
                                           long long* action_counter) {
  env.reset(object, seed);
  policy.begin_episode(derive_seed(seed, 0x706f6c696379ULL));
  judge.begin_episode();
  EpisodeOutcome out;
  while (true) {
    const ActionChoice choice = policy.select(env.encoder(), env.finger());
    if (choice.action >= kMoveActionCount) {  // all-in-one prediction action
      ++out.actions;
      if (action_counter) ++*action_counter;
      out.predicted = choice.action - kMoveActionCount;
      out.terminated_by_confidence = true;
      break;
    }
    const StepResult r = env.step(static_cast<Action>(choice.action));
    policy.observe(r.signal);
    ++out.actions;
    if (action_counter) ++*action_counter;
    if (buffer) buffer->push({env.encoder().cells(), static_cast<std::int32_t>(object)});
    const Prediction p = judge.predict(env.encoder());
    if (judge.should_terminate(p)) {
      out.terminated_by_confidence = true;
      out.predicted = p.label;
      break;
    }
    if (r.done) {
      out.predicted = p.label;  // argmax scored on timeout
      break;
    }
  }
  out.correct = out.predicted == object;
  if (reward_mode == RewardMode::AllInOne) {
    out.reward = out.predicted >= 0 && out.terminated_by_confidence && out.correct ? 1.0 : 0.0;
  } else {
    out.reward = out.terminated_by_confidence ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace detail_cotrain

// Fill a buffer by running episodes with the (randomly initialized or
// heuristic) exploration policy; one classifier-view push per step.
inline DataBuffer collect_initial_buffer(TactileEnv& env, EpisodePolicy& policy,
                                         TerminationJudge& judge, int episodes,
                                         std::size_t capacity, std::uint64_t seed,
                                         RewardMode reward_mode = RewardMode::Standard,
                                         std::vector<detail_cotrain::EpisodeOutcome>* outcomes = nullptr) {
  DataBuffer buffer(capacity);
  Rng object_rng(derive_seed(seed, 0x696e69746f626aULL));
  for (int e = 0; e < episodes; ++e) {
    const int object = static_cast<int>(object_rng.uniform_int(
        static_cast<std::uint64_t>(env.object_count())));
    const auto outcome = detail_cotrain::run_training_episode(
        env, object, derive_seed(seed, 0x696e6974ULL + static_cast<std::uint64_t>(e)), policy,
        judge, &buffer, reward_mode, nullptr);
    if (outcomes) outcomes->push_back(outcome);
  }
  return buffer;
}

struct CotrainOutcome {
  Discriminator<float> disc;
  ActorCritic<float> actor;  // meaningful only for learned methods
  bool has_actor = false;
  std::vector<IterationStats> log;
  long long total_steps = 0;
  DataBuffer buffer{1};
};

namespace detail_cotrain {

// PPO collection/update driver for the learned methods. Owns the per-episode
// transition bookkeeping; flushes advantage-annotated segments into a pool and
// updates once per horizon.
class PpoDriver {
 public:
  PpoDriver(ActorCritic<float>& actor, const PPOConfig& cfg, RewardMode mode, std::uint64_t seed)
      : actor_(actor), cfg_(cfg), mode_(mode), rng_(derive_seed(seed, 0x70706fULL)),
        update_rng_(derive_seed(seed, 0x757064617465ULL)) {}

  // Collects one policy action for the current state. Returns the choice.
  ActionChoice select(const GridEncoder& grid, CellIndex finger, std::vector<float>& image) {
    grid.write_image(image.data(), finger);
    const Transition t = actor_.act(image.data(), rng_);
    Transition stored = t;
    stored.observation = image;
    segment_.push_back(std::move(stored));
    return {t.action, t.log_prob, t.value};
  }

  // Marks the episode finished and flushes its remaining segment.
  void finish_episode(bool terminated_by_confidence, bool correct) {
    assign_rewards(segment_, terminated_by_confidence, correct, mode_);
    if (!segment_.empty()) segment_.back().done = true;
    flush_segment(/*terminal=*/true, 0.0);
  }

  // At a horizon boundary inside an episode, bootstrap from the value of the
  // state the policy is about to act on.
  void cut_segment(const GridEncoder& grid, CellIndex finger, std::vector<float>& image) {
    if (segment_.empty()) return;
    for (Transition& t : segment_) t.reward = 0.0;  // no terminal event yet
    grid.write_image(image.data(), finger);
    const double bootstrap = actor_.policy(image.data()).value;
    flush_segment(/*terminal=*/false, bootstrap);
  }

  bool update_due() const {
    return static_cast<int>(pool_.size()) + static_cast<int>(segment_.size()) >= cfg_.horizon;
  }

  // Runs one PPO update over the pooled transitions. Returns stats.
  UpdateStats update() {
    if (pool_.empty()) return {};
    std::vector<double> adv = pool_adv_;
    normalize_advantages(adv);
    const UpdateStats stats = ppo_update(actor_, pool_, adv, pool_ret_, cfg_, update_rng_);
    pool_.clear();
    pool_adv_.clear();
    pool_ret_.clear();
    return stats;
  }

  bool pool_empty() const { return pool_.empty() && segment_.empty(); }

 private:
  void flush_segment(bool terminal, double bootstrap) {
    if (segment_.empty()) return;
    const std::size_t n = segment_.size();
    std::vector<double> rewards(n), values(n + 1);
    std::vector<std::uint8_t> dones(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      rewards[i] = segment_[i].reward;
      values[i] = segment_[i].value;
      dones[i] = segment_[i].done ? 1 : 0;
    }
    values[n] = terminal ? 0.0 : bootstrap;
    const GaeResult g = compute_gae(rewards, values, dones, cfg_.gamma, cfg_.lambda);
    for (std::size_t i = 0; i < n; ++i) {
      pool_.push_back(std::move(segment_[i]));
      pool_adv_.push_back(g.advantages[i]);
      pool_ret_.push_back(g.returns[i]);
    }
    segment_.clear();
  }

  ActorCritic<float>& actor_;
  PPOConfig cfg_;
  RewardMode mode_;
  Rng rng_, update_rng_;
  std::vector<Transition> segment_;
  std::vector<Transition> pool_;
  std::vector<double> pool_adv_, pool_ret_;
};

}  // namespace detail_cotrain

// Alternating optimization: (a) train the classifier for disc_epochs on the
// shared buffer; (b) freeze it and collect explorer_steps_per_iteration
// actions with the exploration policy, pushing every visited classifier view,
// and (for learned methods) updating the policy by PPO once per horizon.
// Repeats until the action budget is exhausted. On a numeric error the current
// models are dumped next to the checkpoints before the error propagates.
inline CotrainOutcome cotrain_loop(const EnvConfig& env_cfg_in,
                                   const std::vector<Polygon>& objects, Method method,
                                   const DiscriminatorConfig& disc_cfg_in,
                                   const PPOConfig& ppo_cfg, const CotrainConfig& cfg,
                                   const ICPConfig& icp_cfg, std::uint64_t seed,
                                   const std::string& checkpoint_dir = "",
                                   std::ostream* progress = nullptr) {
  cfg.validate();
  ppo_cfg.validate();
  if (method == Method::EdgeIcp) {
    throw ConfigError("cotrain: edge_icp has no trainable components");
  }
  EnvConfig env_cfg = env_cfg_in;
  env_cfg.sensor_failure_rate = method_trains_noise_free(method) ? 0.0 : cfg.noise_rate;
  DiscriminatorConfig disc_cfg = disc_cfg_in;
  disc_cfg.confidence_threshold = cfg.threshold;

  TactileEnv env(env_cfg, objects);
  const int n = env_cfg.grid_cells();
  const int classes = static_cast<int>(objects.size());

  CotrainOutcome out;
  out.disc = Discriminator<float>(classes, n, n, disc_cfg, derive_seed(seed, 0x64697363ULL));
  const bool learned = method_uses_actor(method);
  const int action_count = method == Method::AllInOne ? kMoveActionCount + classes
                                                      : kMoveActionCount;
  if (learned) {
    out.actor = ActorCritic<float>(action_count, n, n, ppo_cfg.learning_rate,
                                   derive_seed(seed, 0x6163746f72ULL));
    out.has_actor = true;
  }
  const RewardMode reward_mode =
      method == Method::AllInOne ? RewardMode::AllInOne : RewardMode::Standard;

  // Termination judge: the ICP matcher for ppo_icp; no judge at all for
  // all_in_one (its policy ends episodes via prediction actions); the CNN for
  // everything else. Only CNN-judged methods consume the buffer, so the other
  // two skip buffer collection and classifier phases entirely.
  std::vector<BoundaryModel> icp_models;
  std::optional<IcpPredictor> icp;
  const bool uses_cnn_judge = method != Method::PpoIcp && method != Method::AllInOne;
  if (method == Method::PpoIcp) {
    icp_cfg.validate();
    icp_models = make_boundary_models(objects, icp_cfg.boundary_spacing);
    icp.emplace(&icp_models, icp_cfg, env_cfg.cell_size);
  }
  TerminationJudge judge;
  if (uses_cnn_judge) {
    judge = TerminationJudge(&out.disc, cfg.threshold);
  } else if (icp) {
    judge = TerminationJudge(&*icp, cfg.threshold);
  }

  EpisodePolicy policy(method, out.has_actor ? &out.actor : nullptr,
                       method == Method::InfoGain ? &out.disc : nullptr, n, n);

  const auto checkpoint = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    ModelBundle bundle;
    bundle.method = method_name(method);
    bundle.has_disc = uses_cnn_judge;
    if (uses_cnn_judge) bundle.disc = out.disc;
    bundle.has_actor = out.has_actor;
    if (out.has_actor) bundle.actor = out.actor;
    bundle.save_file(checkpoint_dir + "/" + name);
  };

  try {
    // Initial buffer: episodes with the randomly initialized policy.
    out.buffer = collect_initial_buffer(env, policy, judge,
                                        uses_cnn_judge ? cfg.initial_episodes : 0,
                                        cfg.buffer_capacity, derive_seed(seed, 0x627566ULL),
                                        reward_mode);

    Rng object_rng(derive_seed(seed, 0x6f626a73ULL));
    detail_cotrain::EpisodeWindow window;
    std::optional<detail_cotrain::PpoDriver> driver;
    if (learned) driver.emplace(out.actor, ppo_cfg, reward_mode, derive_seed(seed, 0x647276ULL));
    std::vector<float> image(static_cast<std::size_t>(n) * n);

    long long total_steps = 0;
    int iteration = 0;
    long long episode_counter = 0;
    while (total_steps < cfg.max_total_steps) {
      ++iteration;

      // Phase (a): classifier epochs on the frozen buffer.
      double disc_loss = 0.0;
      if (uses_cnn_judge && cfg.disc_epochs > 0) {
        const std::vector<double> losses = out.disc.train_epochs(out.buffer, cfg.disc_epochs);
        disc_loss = losses.back();
      }

      // Phase (b): frozen-classifier collection (and PPO updates).
      double entropy = 0.0;
      long long steps_this_iteration = 0;
      while (steps_this_iteration < cfg.explorer_steps_per_iteration) {
        const int object = static_cast<int>(
            object_rng.uniform_int(static_cast<std::uint64_t>(env.object_count())));
        const std::uint64_t ep_seed =
            derive_seed(seed, 0x65700000ULL + static_cast<std::uint64_t>(episode_counter++));
        if (!learned) {
          window.add(detail_cotrain::run_training_episode(
              env, object, ep_seed, policy, judge, uses_cnn_judge ? &out.buffer : nullptr,
              reward_mode, &steps_this_iteration));
          continue;
        }

        // Learned collection: per-step transition recording with horizon cuts.
        env.reset(object, ep_seed);
        judge.begin_episode();
        detail_cotrain::EpisodeOutcome eo;
        while (true) {
          if (driver->update_due()) {
            driver->cut_segment(env.encoder(), env.finger(), image);
            entropy = driver->update().entropy;
          }
          const ActionChoice choice = driver->select(env.encoder(), env.finger(), image);
          if (choice.action >= kMoveActionCount) {
            ++eo.actions;
            ++steps_this_iteration;
            eo.predicted = choice.action - kMoveActionCount;
            eo.terminated_by_confidence = true;
            eo.correct = eo.predicted == object;
            driver->finish_episode(true, eo.correct);
            break;
          }
          const StepResult r = env.step(static_cast<Action>(choice.action));
          ++eo.actions;
          ++steps_this_iteration;
          if (uses_cnn_judge) {
            out.buffer.push({env.encoder().cells(), static_cast<std::int32_t>(object)});
          }
          const Prediction p = judge.predict(env.encoder());
          if (judge.should_terminate(p)) {
            eo.terminated_by_confidence = true;
            eo.predicted = p.label;
            eo.correct = eo.predicted == object;
            driver->finish_episode(true, eo.correct);
            break;
          }
          if (r.done) {
            eo.predicted = p.label;
            eo.correct = eo.predicted == object;
            driver->finish_episode(false, eo.correct);
            break;
          }
        }
        eo.reward = reward_mode == RewardMode::AllInOne
                        ? (eo.terminated_by_confidence && eo.correct ? 1.0 : 0.0)
                        : (eo.terminated_by_confidence ? 1.0 : 0.0);
        window.add(eo);
        if (learned && driver->update_due()) {
          entropy = driver->update().entropy;
        }
      }
      total_steps += steps_this_iteration;

      IterationStats stats;
      stats.iteration = iteration;
      stats.total_steps = total_steps;
      stats.success_rate_100 = window.success_rate();
      stats.mean_actions_100 = window.mean_actions();
      stats.disc_loss = disc_loss;
      stats.buffer_size = out.buffer.size();
      stats.mean_reward_100 = window.mean_reward();
      stats.policy_entropy = entropy;
      out.log.push_back(stats);
      if (progress) {
        *progress << "iteration " << iteration << ": steps=" << total_steps
                  << " success_100=" << stats.success_rate_100
                  << " actions_100=" << stats.mean_actions_100 << " disc_loss=" << disc_loss
                  << " buffer=" << stats.buffer_size << "\n";
      }
      checkpoint("checkpoint_iter_" + std::to_string(iteration) + ".model");

      if (cfg.explorer_steps_per_iteration == 0) break;  // degenerate smoke-test mode
    }
    out.total_steps = total_steps;
  } catch (const NumericError&) {
    checkpoint("crash_dump.model");
    throw;
  }
  return out;
}

inline void write_iteration_csv(const std::string& path, const std::vector<IterationStats>& log,
                                std::uint64_t config_hash) {
  std::ostringstream os;
  os << "# format=1 config=" << std::hex << std::setw(16) << std::setfill('0') << config_hash
     << std::dec << "\n";
  os << "iteration,total_steps,success_rate_100,mean_actions_100,disc_loss,buffer_size,"
        "mean_reward_100,policy_entropy\n";
  os.precision(17);
  for (const IterationStats& s : log) {
    os << s.iteration << ',' << s.total_steps << ',' << s.success_rate_100 << ','
       << s.mean_actions_100 << ',' << s.disc_loss << ',' << s.buffer_size << ','
       << s.mean_reward_100 << ',' << s.policy_entropy << "\n";
  }
  write_text_atomic(path, os.str());
}

}  // namespace tact
