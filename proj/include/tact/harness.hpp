#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tact/config.hpp"
#include "tact/cotrain.hpp"
#include "tact/discriminator.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/explorer.hpp"
#include "tact/icp.hpp"
#include "tact/policy.hpp"
#include "tact/rng.hpp"

namespace tact {

enum class TerminationKind { Confidence, Timeout };

inline const char* termination_name(TerminationKind k) {
  return k == TerminationKind::Confidence ? "confidence" : "timeout";
}

struct TrialRecord {
  int trial = 0;
  int object_id = 0;
  Pose2D pose;
  std::uint64_t seed = 0;
  int actions = 0;
  int explored = 0;
  int predicted = -1;
  bool correct = false;
  TerminationKind termination = TerminationKind::Timeout;
};

struct Metrics {
  int trials = 0;
  double success_rate = 0.0;
  double actions_mean = 0.0;
  double actions_std = 0.0;
  double explored_mean = 0.0;
  double explored_std = 0.0;
  double ear_mean = 0.0;  // per-trial explored/actions, over trials with > 0 actions
  double ear_std = 0.0;
};

// Everything needed to build a per-worker policy + termination judge.
struct MethodContext {
  Method method = Method::RandomWalk;
  const ActorCritic<float>* actor = nullptr;           // learned methods
  const Discriminator<float>* disc = nullptr;          // CNN judge and info-gain
  const std::vector<BoundaryModel>* icp_models = nullptr;  // ICP judge
  ICPConfig icp_cfg;
  double threshold = 0.98;
  bool greedy = false;

  bool uses_cnn_judge() const {
    return method != Method::PpoIcp && method != Method::AllInOne &&
           method != Method::EdgeIcp;
  }

  void validate() const {
    if (method_uses_actor(method) && actor == nullptr) {
      throw ConfigError("evaluate: method needs a trained policy network");
    }
    if ((uses_cnn_judge() || method == Method::InfoGain) && disc == nullptr) {
      throw ConfigError("evaluate: method needs a trained classifier");
    }
    if (method_uses_icp(method) && (icp_models == nullptr || icp_models->empty())) {
      throw ConfigError("evaluate: method needs boundary models");
    }
    if (!(threshold > 0.0 && threshold <= 1.0)) {
      throw ConfigError("evaluate: threshold must be in (0, 1]");
    }
  }
};

// One evaluation episode. The judge is consulted on the fresh, all-unexplored
// grid before the first action: a judge already confident there ends the
// trial with zero actions, and that first prediction is what gets scored.
inline TrialRecord run_trial(TactileEnv& env, int object, std::uint64_t seed,
                             EpisodePolicy& policy, TerminationJudge& judge) {
  env.reset(object, seed);
  policy.begin_episode(derive_seed(seed, 0x706f6c696379ULL));
  judge.begin_episode();
  TrialRecord rec;
  rec.object_id = object;
  rec.seed = seed;
  rec.pose = env.pose();
  Prediction p = judge.predict(env.encoder());
  int actions = 0;
  if (judge.should_terminate(p)) {
    rec.termination = TerminationKind::Confidence;
    rec.predicted = p.label;
  } else {
    while (true) {
      const ActionChoice choice = policy.select(env.encoder(), env.finger());
      if (choice.action >= kMoveActionCount) {  // prediction action ends the episode
        ++actions;
        rec.predicted = choice.action - kMoveActionCount;
        rec.termination = TerminationKind::Confidence;
        break;
      }
      const StepResult r = env.step(static_cast<Action>(choice.action));
      policy.observe(r.signal);
      ++actions;
      p = judge.predict(env.encoder());
      if (judge.should_terminate(p)) {
        rec.termination = TerminationKind::Confidence;
        rec.predicted = p.label;
        break;
      }
      if (r.done) {  // action cap: score the judge's current best guess anyway
        rec.termination = TerminationKind::Timeout;
        rec.predicted = p.label;
        break;
      }
    }
  }
  rec.actions = actions;
  rec.explored = env.encoder().explored_count();
  rec.correct = rec.predicted == object;
  return rec;
}

inline Metrics compute_metrics(const std::vector<TrialRecord>& records) {
  Metrics m;
  m.trials = static_cast<int>(records.size());
  if (records.empty()) return m;
  const double n = static_cast<double>(records.size());
  double success = 0.0, actions_sum = 0.0, explored_sum = 0.0, ear_sum = 0.0;
  int ear_n = 0;
  for (const TrialRecord& r : records) {
    success += r.correct ? 1.0 : 0.0;
    actions_sum += r.actions;
    explored_sum += r.explored;
    if (r.actions > 0) {
      ear_sum += static_cast<double>(r.explored) / static_cast<double>(r.actions);
      ++ear_n;
    }
  }
  m.success_rate = success / n;
  m.actions_mean = actions_sum / n;
  m.explored_mean = explored_sum / n;
  const double ear_mean = ear_n > 0 ? ear_sum / static_cast<double>(ear_n) : 0.0;
  m.ear_mean = ear_mean;
  double actions_var = 0.0, explored_var = 0.0, ear_var = 0.0;
  for (const TrialRecord& r : records) {
    const double da = r.actions - m.actions_mean;
    const double de = r.explored - m.explored_mean;
    actions_var += da * da;
    explored_var += de * de;
    if (r.actions > 0) {
      const double dr = static_cast<double>(r.explored) / static_cast<double>(r.actions) - ear_mean;
      ear_var += dr * dr;
    }
  }
  m.actions_std = std::sqrt(actions_var / n);
  m.explored_std = std::sqrt(explored_var / n);
  m.ear_std = ear_n > 0 ? std::sqrt(ear_var / static_cast<double>(ear_n)) : 0.0;
  return m;
}

struct EvaluateResult {
  Metrics metrics;
  std::vector<TrialRecord> records;
};

// Round-robin evaluation: trial t probes object t mod N with a seed derived
// purely from (master_seed, t), so results are independent of thread count and
// bitwise reproducible. Each worker owns copies of the stateful models.
inline EvaluateResult evaluate(const EnvConfig& env_cfg, const std::vector<Polygon>& objects,
                               const MethodContext& ctx, int n_trials,
                               std::uint64_t master_seed, int threads = 0) {
  if (n_trials <= 0) throw ConfigError("evaluate: n_trials must be > 0");
  if (objects.empty()) throw ConfigError("evaluate: empty object set");
  ctx.validate();
  env_cfg.validate();

  int worker_count = threads;
  if (worker_count <= 0) {
    worker_count = static_cast<int>(std::thread::hardware_concurrency());
    if (worker_count <= 0) worker_count = 1;
  }
  worker_count = std::min(worker_count, n_trials);

  EvaluateResult result;
  result.records.resize(static_cast<std::size_t>(n_trials));
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  const int grid = env_cfg.grid_cells();
  const int object_count = static_cast<int>(objects.size());

  const auto worker = [&]() {
    try {
      TactileEnv env(env_cfg, objects);
      // Per-worker model copies: the networks keep mutable inference scratch,
      // so sharing one instance across threads would race.
      std::optional<Discriminator<float>> disc;
      if (ctx.disc) disc.emplace(*ctx.disc);
      std::optional<ActorCritic<float>> actor;
      if (ctx.actor) actor.emplace(*ctx.actor);
      std::optional<IcpPredictor> icp;
      if (method_uses_icp(ctx.method)) {
        icp.emplace(ctx.icp_models, ctx.icp_cfg, env_cfg.cell_size);
      }
      EpisodePolicy policy(ctx.method, actor ? &*actor : nullptr, disc ? &*disc : nullptr,
                           grid, grid, ctx.greedy);
      TerminationJudge judge;
      if (ctx.uses_cnn_judge()) {
        judge = TerminationJudge(&*disc, ctx.threshold);
      } else if (icp) {
        judge = TerminationJudge(&*icp, ctx.threshold);
      }
      for (int t = next.fetch_add(1); t < n_trials; t = next.fetch_add(1)) {
        if (failed.load()) return;
        TrialRecord rec = run_trial(env, t % object_count, derive_seed(master_seed, t),
                                    policy, judge);
        rec.trial = t;
        result.records[static_cast<std::size_t>(t)] = rec;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      failed.store(true);
      if (!error) error = std::current_exception();
    }
  };

  if (worker_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(worker_count));
    for (int w = 0; w < worker_count; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  result.metrics = compute_metrics(result.records);
  return result;
}

// --- CSV output ------------------------------------------------------------

namespace detail_csv {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string header(std::uint64_t config_hash) {
  std::ostringstream os;
  os << "# format=1 config=" << std::hex << std::setw(16) << std::setfill('0') << config_hash
     << "\n";
  return os.str();
}

}  // namespace detail_csv

struct MetricsRow {
  std::string method;
  double noise_rate = 0.0;
  double threshold = 0.98;
  Metrics metrics;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              std::uint64_t config_hash) {
  std::ostringstream os;
  os << detail_csv::header(config_hash);
  os << "method,noise_rate,threshold,trials,success_rate,actions_mean,actions_std,"
        "explored_mean,explored_std,ear_mean,ear_std\n";
  for (const MetricsRow& r : rows) {
    const Metrics& m = r.metrics;
    os << r.method << ',' << detail_csv::fmt(r.noise_rate) << ','
       << detail_csv::fmt(r.threshold) << ',' << m.trials << ','
       << detail_csv::fmt(m.success_rate) << ',' << detail_csv::fmt(m.actions_mean) << ','
       << detail_csv::fmt(m.actions_std) << ',' << detail_csv::fmt(m.explored_mean) << ','
       << detail_csv::fmt(m.explored_std) << ',' << detail_csv::fmt(m.ear_mean) << ','
       << detail_csv::fmt(m.ear_std) << "\n";
  }
  write_text_atomic(path, os.str());
}

inline void write_trials_csv(const std::string& path, const std::vector<TrialRecord>& records,
                             std::uint64_t config_hash) {
  std::ostringstream os;
  os << detail_csv::header(config_hash);
  os << "trial,object_id,rotation_rad,tx_m,ty_m,seed,actions,explored,predicted,correct,"
        "termination\n";
  for (const TrialRecord& r : records) {
    os << r.trial << ',' << r.object_id << ',' << detail_csv::fmt(r.pose.rotation) << ','
       << detail_csv::fmt(r.pose.translation.x) << ',' << detail_csv::fmt(r.pose.translation.y)
       << ',' << r.seed << ',' << r.actions << ',' << r.explored << ',' << r.predicted << ','
       << (r.correct ? 1 : 0) << ',' << termination_name(r.termination) << "\n";
  }
  write_text_atomic(path, os.str());
}

// --- Experiment sweeps -------------------------------------------------------

struct NoiseSweepResult {
  std::vector<double> rates;
  std::vector<Metrics> metrics;
  std::vector<std::vector<TrialRecord>> records;
};

// Re-evaluates the same method at several sensor failure rates. Every rate
// reuses the same master seed, so the rate-0 column reproduces a plain
// evaluate() call bit for bit.
inline NoiseSweepResult noise_sweep(const EnvConfig& env_cfg,
                                    const std::vector<Polygon>& objects,
                                    const MethodContext& ctx, int n_trials,
                                    std::uint64_t master_seed, const std::vector<double>& rates,
                                    int threads = 0) {
  if (rates.empty()) throw ConfigError("noise sweep: no rates given");
  NoiseSweepResult out;
  for (const double rate : rates) {
    if (rate < 0.0 || rate > 1.0) throw ConfigError("noise sweep: rate must be in [0, 1]");
    EnvConfig cfg = env_cfg;
    cfg.sensor_failure_rate = rate;
    EvaluateResult r = evaluate(cfg, objects, ctx, n_trials, master_seed, threads);
    out.rates.push_back(rate);
    out.metrics.push_back(r.metrics);
    out.records.push_back(std::move(r.records));
  }
  return out;
}

struct ThresholdRunResult {
  double threshold = 0.0;
  Metrics metrics;
  std::vector<TrialRecord> records;
  std::vector<IterationStats> log;
};

// Trains the full pipeline once per termination threshold, then evaluates
// each trained pair at its own threshold. Evaluation noise follows the
// training noise rate.
inline std::vector<ThresholdRunResult> threshold_sweep(
    const EnvConfig& env_cfg, const std::vector<Polygon>& objects, Method method,
    const DiscriminatorConfig& disc_cfg, const PPOConfig& ppo_cfg,
    const CotrainConfig& cfg_base, const ICPConfig& icp_cfg,
    const std::vector<double>& thresholds, int eval_trials, std::uint64_t seed,
    int threads = 0, std::ostream* progress = nullptr) {
  if (thresholds.empty()) throw ConfigError("threshold sweep: no thresholds given");
  std::vector<ThresholdRunResult> out;
  std::vector<BoundaryModel> icp_models;
  if (method_uses_icp(method)) {
    icp_models = make_boundary_models(objects, icp_cfg.boundary_spacing);
  }
  for (const double threshold : thresholds) {
    CotrainConfig cfg = cfg_base;
    cfg.threshold = threshold;
    if (progress) *progress << "threshold " << threshold << ": training\n";
    CotrainOutcome trained = cotrain_loop(env_cfg, objects, method, disc_cfg, ppo_cfg, cfg,
                                          icp_cfg, seed, "", progress);
    MethodContext ctx;
    ctx.method = method;
    ctx.actor = trained.has_actor ? &trained.actor : nullptr;
    ctx.disc = &trained.disc;
    ctx.icp_models = icp_models.empty() ? nullptr : &icp_models;
    ctx.icp_cfg = icp_cfg;
    ctx.threshold = threshold;
    EnvConfig eval_cfg = env_cfg;
    eval_cfg.sensor_failure_rate = cfg.noise_rate;
    EvaluateResult r = evaluate(eval_cfg, objects, ctx, eval_trials,
                                derive_seed(seed, 0x6576616cULL), threads);
    ThresholdRunResult row;
    row.threshold = threshold;
    row.metrics = r.metrics;
    row.records = std::move(r.records);
    row.log = std::move(trained.log);
    out.push_back(std::move(row));
    if (progress) {
      *progress << "threshold " << threshold << ": success=" << row.metrics.success_rate
                << " actions=" << row.metrics.actions_mean << "\n";
    }
  }
  return out;
}

}  // namespace tact
