#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/neuralnet.hpp"
#include "tact/rng.hpp"

namespace tact {

struct PolicyOutput {
  std::vector<double> distribution;
  std::vector<double> log_probs;
  double value = 0.0;
};

namespace detail {

// Log-softmax in double. The update recomputes collection-time log-probs with
// this exact function so the importance ratio is bitwise 1 before the first
// optimizer step.
template <typename T>
inline void log_softmax_double(const T* logits, int k, std::vector<double>& lp) {
  lp.resize(static_cast<std::size_t>(k));
  double zmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    const double z = static_cast<double>(logits[i]);
    if (!std::isfinite(z)) throw NumericError("explorer: non-finite logit");
    zmax = std::max(zmax, z);
  }
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(logits[i]) - zmax);
  const double log_z = std::log(sum) + zmax;
  for (int i = 0; i < k; ++i) lp[static_cast<std::size_t>(i)] = static_cast<double>(logits[i]) - log_z;
}

}  // namespace detail

struct Transition {
  std::vector<float> observation;  // explorer view, marker included
  int action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
};

struct PPOConfig {
  long long steps_per_iteration = 200000;  // environment steps collected per co-training iteration
  int horizon = 2048;                      // steps per update batch, across parallel episodes
  int epochs = 4;
  int minibatch = 256;
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 3e-4;

  void validate() const {
    if (steps_per_iteration < 1) throw ConfigError("explorer: steps_per_iteration must be >= 1");
    if (horizon < 1) throw ConfigError("explorer: horizon must be >= 1");
    if (epochs < 0) throw ConfigError("explorer: epochs must be >= 0");
    if (minibatch < 1) throw ConfigError("explorer: minibatch must be >= 1");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("explorer: clip must be in (0, 1)");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("explorer: gamma must be in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("explorer: lambda must be in [0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("explorer: learning_rate must be > 0");
    if (!(value_coef >= 0.0)) throw ConfigError("explorer: value_coef must be >= 0");
    if (!(entropy_coef >= 0.0)) throw ConfigError("explorer: entropy_coef must be >= 0");
  }
};

// Torso reuses the classifier topology up to the embedding, with dropout
// disabled so that update-time activations reproduce collection-time ones
// (the probability ratio must be exactly 1 before the first optimizer step).
inline std::vector<LayerSpec> explorer_torso_specs() {
  return {
      LayerSpec::conv2d(16, 5, 2), LayerSpec::relu(),
      LayerSpec::conv2d(32, 3, 2), LayerSpec::relu(),
      LayerSpec::maxpool(2),       LayerSpec::dropout(0.0),
      LayerSpec::flatten(),        LayerSpec::dense(0, 128),
      LayerSpec::relu(),
  };
}

// Actor-critic policy: a shared convolutional torso feeding one dense head for
// action logits and one for the state value. Optimized jointly by one Adam.
template <typename T = float>
class ActorCritic {
 public:
  ActorCritic() = default;

  ActorCritic(int num_actions, int grid_w, int grid_h, double learning_rate, std::uint64_t seed)
      : num_actions_(num_actions),
        torso_(explorer_torso_specs(), Shape3{1, grid_h, grid_w}, derive_seed(seed, 0x746f72736fULL)),
        actor_({LayerSpec::dense(128, num_actions)}, Shape3{128, 1, 1},
               derive_seed(seed, 0x6163746fULL)),
        critic_({LayerSpec::dense(128, 1)}, Shape3{128, 1, 1}, derive_seed(seed, 0x6372697441ULL)) {
    if (num_actions < 2) throw ConfigError("explorer: need at least 2 actions");
    if (!(learning_rate > 0.0)) throw ConfigError("explorer: learning_rate must be > 0");
    adam_ = Adam<T>(all_params(), learning_rate);
  }

  ActorCritic(const ActorCritic& other) { *this = other; }
  ActorCritic& operator=(const ActorCritic& other) {
    if (this == &other) return *this;
    num_actions_ = other.num_actions_;
    torso_ = other.torso_;
    actor_ = other.actor_;
    critic_ = other.critic_;
    adam_ = other.adam_;
    adam_.rebind(all_params());
    eval_torso_ = {};
    eval_actor_ = {};
    eval_critic_ = {};
    input_ = {};
    return *this;
  }
  ActorCritic(ActorCritic&&) = default;
  ActorCritic& operator=(ActorCritic&&) = default;

  int num_actions() const { return num_actions_; }
  Net<T>& torso() { return torso_; }
  Net<T>& actor() { return actor_; }
  Net<T>& critic() { return critic_; }
  Adam<T>& optimizer() { return adam_; }
  const Shape3& input_shape() const { return torso_.input_shape(); }

  std::vector<ParamRef<T>> all_params() {
    std::vector<ParamRef<T>> refs = torso_.params();
    for (auto& r : actor_.params()) refs.push_back(r);
    for (auto& r : critic_.params()) refs.push_back(r);
    return refs;
  }

  // Eval-mode distributions and values for a batch of explorer views. Every
  // image must carry the finger marker.
  std::vector<PolicyOutput> policy_batch(const T* images, int n) const {
    const Shape3& s = torso_.input_shape();
    const std::size_t features = static_cast<std::size_t>(s.features());
    input_.resize(n, s.c, s.h, s.w);
    for (int b = 0; b < n; ++b) {
      const T* src = images + static_cast<std::size_t>(b) * features;
      bool marker = false;
      T* dst = input_.sample(b);
      for (std::size_t i = 0; i < features; ++i) {
        marker = marker || src[i] == static_cast<T>(kImageFinger);
        dst[i] = src[i] - static_cast<T>(0.5);
      }
      if (!marker) throw StateError("explorer: input lacks the finger marker");
    }
    const Tensor<T>& emb = torso_.forward(input_, eval_torso_, /*train=*/false);
    const Tensor<T>& logits = actor_.forward(emb, eval_actor_, /*train=*/false);
    const Tensor<T>& values = critic_.forward(emb, eval_critic_, /*train=*/false);

    std::vector<PolicyOutput> out(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      PolicyOutput& po = out[static_cast<std::size_t>(b)];
      detail::log_softmax_double(logits.sample(b), num_actions_, po.log_probs);
      po.distribution.resize(po.log_probs.size());
      for (std::size_t a = 0; a < po.log_probs.size(); ++a) {
        po.distribution[a] = std::exp(po.log_probs[a]);
      }
      po.value = static_cast<double>(values.sample(b)[0]);
      if (!std::isfinite(po.value)) throw NumericError("explorer: non-finite value estimate");
    }
    return out;
  }

  PolicyOutput policy(const T* image) const { return policy_batch(image, 1)[0]; }

  // Sample an action from the actor head; returns (action, log_prob, value).
  Transition act(const T* image, Rng& rng) const {
    const PolicyOutput po = policy(image);
    const double u = rng.uniform();
    double cum = 0.0;
    int action = num_actions_ - 1;
    for (int a = 0; a < num_actions_; ++a) {
      cum += po.distribution[static_cast<std::size_t>(a)];
      if (u < cum) {
        action = a;
        break;
      }
    }
    Transition t;
    t.action = action;
    t.log_prob = po.log_probs[static_cast<std::size_t>(action)];
    t.value = po.value;
    return t;
  }

  // Deterministic argmax action; ties resolve to the lowest index.
  int act_greedy(const T* image) const {
    const PolicyOutput po = policy(image);
    int best = 0;
    for (int a = 1; a < num_actions_; ++a) {
      if (po.distribution[static_cast<std::size_t>(a)] >
          po.distribution[static_cast<std::size_t>(best)]) {
        best = a;
      }
    }
    return best;
  }

  void save(std::ostream& os) {
    save_net(torso_, os);
    save_net(actor_, os);
    save_net(critic_, os);
    adam_.save(os);
    if (!os) throw DataError("explorer: checkpoint write failed");
  }

  static ActorCritic load(std::istream& is, double learning_rate) {
    ActorCritic ac;
    ac.torso_ = load_net<T>(is);
    ac.actor_ = load_net<T>(is);
    ac.critic_ = load_net<T>(is);
    ac.num_actions_ = ac.actor_.specs().back().out;
    ac.adam_ = Adam<T>(ac.all_params(), learning_rate);
    ac.adam_.load(is);
    return ac;
  }

 private:
  int num_actions_ = 0;
  Net<T> torso_, actor_, critic_;
  Adam<T> adam_;
  mutable NetState<T> eval_torso_, eval_actor_, eval_critic_;
  mutable Tensor<T> input_;
};

enum class RewardMode { Standard, AllInOne };

// Terminal-reward rule. Standard (and ICP-terminated) episodes earn 1 only
// when the discriminator's confidence ended the episode — correctness never
// enters. All-in-one episodes earn 1 only when the final action was a
// prediction action and that prediction was correct. Every other reward is 0.
inline void assign_rewards(std::vector<Transition>& episode, bool terminated_by_confidence,
                           bool correct, RewardMode mode) {
  for (Transition& t : episode) t.reward = 0.0;
  if (episode.empty()) return;
  bool rewarded = false;
  if (mode == RewardMode::Standard) {
    rewarded = terminated_by_confidence;
  } else {
    rewarded = episode.back().action >= kMoveActionCount && correct;
  }
  episode.back().reward = rewarded ? 1.0 : 0.0;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation over one trajectory. `values` carries one
// extra trailing entry: the bootstrap value of the state after the last step.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<std::uint8_t>& dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (dones.size() != n || values.size() != n + 1) {
    throw ShapeError("compute_gae: sequence lengths disagree");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * values[i + 1] * not_done - values[i];
    gae = delta + gamma * lambda * not_done * gae;
    out.advantages[i] = gae;
    out.returns[i] = gae + values[i];
  }
  return out;
}

// Zero-mean, unit-variance normalization with an epsilon guard on the std.
inline void normalize_advantages(std::vector<double>& adv, double eps = 1e-8) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double inv = 1.0 / (std::sqrt(var) + eps);
  for (double& a : adv) a = (a - mean) * inv;
}

// min(rho*A, clip(rho)*A): the per-sample objective PPO maximizes.
inline double clipped_surrogate(double rho, double advantage, double clip) {
  const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip);
  return std::min(rho * advantage, clipped * advantage);
}

struct UpdateStats {
  double policy_loss = 0.0;   // mean over samples of -surrogate, last epoch
  double value_loss = 0.0;    // mean squared value error, last epoch
  double entropy = 0.0;       // mean policy entropy, last epoch
  double clip_fraction = 0.0; // share of samples with rho outside the clip band, last epoch
  int minibatches = 0;
};

// One PPO update over a collected batch: `epochs` shuffled passes of clipped
// surrogate + value regression + entropy bonus, stepping Adam per minibatch.
// Advantages are expected normalized (see PPOConfig); returns pair with them.
template <typename T>
UpdateStats ppo_update(ActorCritic<T>& ac, const std::vector<Transition>& batch,
                       const std::vector<double>& advantages, const std::vector<double>& returns,
                       const PPOConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.empty()) throw DataError("ppo_update: empty batch");
  if (advantages.size() != batch.size() || returns.size() != batch.size()) {
    throw ShapeError("ppo_update: batch/advantage/return sizes disagree");
  }
  for (double a : advantages) {
    if (!std::isfinite(a)) throw NumericError("ppo_update: non-finite advantage");
  }
  const Shape3& s = ac.torso().input_shape();
  const std::size_t features = static_cast<std::size_t>(s.features());
  const int k = ac.num_actions();

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  UpdateStats stats;
  NetState<T> torso_state, actor_state, critic_state;
  Tensor<T> input, dlogits, dvalues, demb_actor, demb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    double policy_loss = 0.0, value_loss = 0.0, entropy_sum = 0.0;
    std::size_t clipped_count = 0;
    int minibatches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.minibatch)) {
      const int n = static_cast<int>(std::min<std::size_t>(cfg.minibatch, order.size() - at));
      input.resize(n, s.c, s.h, s.w);
      for (int b = 0; b < n; ++b) {
        const Transition& t = batch[order[at + static_cast<std::size_t>(b)]];
        if (t.observation.size() != features) {
          throw ShapeError("ppo_update: observation size mismatch");
        }
        T* dst = input.sample(b);
        for (std::size_t j = 0; j < features; ++j) {
          dst[j] = static_cast<T>(t.observation[j]) - static_cast<T>(0.5);
        }
      }
      const Tensor<T>& emb = ac.torso().forward(input, torso_state, /*train=*/true);
      const Tensor<T>& logits = ac.actor().forward(emb, actor_state, /*train=*/true);
      const Tensor<T>& values = ac.critic().forward(emb, critic_state, /*train=*/true);

      dlogits.resize(n, k, 1, 1);
      dvalues.resize(n, 1, 1, 1);
      const double inv_n = 1.0 / static_cast<double>(n);
      std::vector<double> lp;
      for (int b = 0; b < n; ++b) {
        const Transition& t = batch[order[at + static_cast<std::size_t>(b)]];
        const double adv = advantages[order[at + static_cast<std::size_t>(b)]];
        const double ret = returns[order[at + static_cast<std::size_t>(b)]];

        detail::log_softmax_double(logits.sample(b), k, lp);
        const double lp_new = lp[static_cast<std::size_t>(t.action)];
        const double rho = std::exp(lp_new - t.log_prob);
        const bool outside = rho > 1.0 + cfg.clip || rho < 1.0 - cfg.clip;
        if (outside) ++clipped_count;
        policy_loss -= clipped_surrogate(rho, adv, cfg.clip) * inv_n;
        // d(-surrogate)/dlogp is -rho*adv unless the min saturates at the clip.
        const bool zero_grad = (rho > 1.0 + cfg.clip && adv > 0.0) ||
                               (rho < 1.0 - cfg.clip && adv < 0.0);
        const double dlp = zero_grad ? 0.0 : -rho * adv * inv_n;

        double h = 0.0;
        for (int a = 0; a < k; ++a) {
          h -= std::exp(lp[static_cast<std::size_t>(a)]) * lp[static_cast<std::size_t>(a)];
        }
        entropy_sum += h * inv_n;

        T* dz = dlogits.sample(b);
        for (int a = 0; a < k; ++a) {
          const double p = std::exp(lp[static_cast<std::size_t>(a)]);
          const double indicator = a == t.action ? 1.0 : 0.0;
          double g = dlp * (indicator - p);
          // Entropy bonus enters the loss as -entropy_coef * H.
          g += cfg.entropy_coef * p * (lp[static_cast<std::size_t>(a)] + h) * inv_n;
          dz[a] = static_cast<T>(g);
        }

        const double v = static_cast<double>(values.sample(b)[0]);
        value_loss += (v - ret) * (v - ret) * inv_n;
        dvalues.sample(b)[0] = static_cast<T>(cfg.value_coef * 2.0 * (v - ret) * inv_n);
      }

      ac.actor().backward(actor_state, dlogits, &demb_actor);
      ac.critic().backward(critic_state, dvalues, &demb);
      for (std::size_t j = 0; j < demb.data.size(); ++j) demb.data[j] += demb_actor.data[j];
      ac.torso().backward(torso_state, demb);
      ac.optimizer().step();
      ++minibatches;
    }
    const double batches = static_cast<double>(minibatches);
    stats.policy_loss = policy_loss / batches;
    stats.value_loss = value_loss / batches;
    stats.entropy = entropy_sum / batches;
    stats.clip_fraction =
        static_cast<double>(clipped_count) / static_cast<double>(order.size());
    stats.minibatches = minibatches;
  }
  return stats;
}

}  // namespace tact
