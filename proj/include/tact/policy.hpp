#pragma once

#include <optional>
#include <vector>

#include "tact/baselines.hpp"
#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/explorer.hpp"
#include "tact/icp.hpp"
#include "tact/rng.hpp"

namespace tact {

inline bool method_uses_actor(Method m) {
  return m == Method::Ppo || m == Method::AllInOne || m == Method::PpoIcp;
}

inline bool method_uses_icp(Method m) { return m == Method::EdgeIcp || m == Method::PpoIcp; }

// Methods whose discriminator is trained with sensor noise disabled.
inline bool method_trains_noise_free(Method m) { return m == Method::EdgeFollower; }

struct ActionChoice {
  int action = 0;        // 0..3 move; >= 4 predicts object (action - 4) and terminates
  double log_prob = 0.0; // learned policies only
  double value = 0.0;    // learned policies only
};

// One episode's action source: wraps the heuristics and the learned actor
// behind a single interface. Single-owner per episode/worker.
class EpisodePolicy {
 public:
  EpisodePolicy(Method method, const ActorCritic<float>* actor, const Discriminator<float>* disc,
                int grid_w, int grid_h, bool greedy = false)
      : method_(method),
        actor_(actor),
        disc_(disc),
        grid_w_(grid_w),
        grid_h_(grid_h),
        greedy_(greedy),
        follower_(grid_w, grid_h) {
    if (method_uses_actor(method_) && actor_ == nullptr) {
      throw ConfigError("policy: method needs a trained actor");
    }
    if (method_ == Method::InfoGain && disc_ == nullptr) {
      throw ConfigError("policy: info_gain needs a discriminator");
    }
    image_.resize(static_cast<std::size_t>(grid_w) * grid_h);
  }

  Method method() const { return method_; }

  void begin_episode(std::uint64_t seed) {
    rng_.seed(seed);
    follower_ = EdgeFollower(grid_w_, grid_h_);
    last_signal_.reset();
  }

  ActionChoice select(const GridEncoder& grid, CellIndex finger) {
    ActionChoice choice;
    switch (method_) {
      case Method::RandomWalk:
        choice.action = static_cast<int>(random_walk_action(rng_));
        break;
      case Method::NotGoBack:
        choice.action = static_cast<int>(not_go_back_action(grid, finger, rng_));
        break;
      case Method::InfoGain:
        choice.action = static_cast<int>(info_gain_action(grid, finger, *disc_, rng_));
        break;
      case Method::EdgeFollower:
      case Method::EdgeIcp:
        choice.action = static_cast<int>(follower_.act(grid, finger, last_signal_));
        break;
      case Method::Ppo:
      case Method::AllInOne:
      case Method::PpoIcp: {
        grid.write_image(image_.data(), finger);
        if (greedy_) {
          choice.action = actor_->act_greedy(image_.data());
          const PolicyOutput po = actor_->policy(image_.data());
          choice.log_prob = po.log_probs[static_cast<std::size_t>(choice.action)];
          choice.value = po.value;
        } else {
          const Transition t = actor_->act(image_.data(), rng_);
          choice.action = t.action;
          choice.log_prob = t.log_prob;
          choice.value = t.value;
        }
        break;
      }
    }
    return choice;
  }

  // Feed back the reported signal after the environment step (the contour
  // follower's memory; ignored by the other policies).
  void observe(ContactSignal reported) { last_signal_ = reported; }

 private:
  Method method_;
  const ActorCritic<float>* actor_;
  const Discriminator<float>* disc_;
  int grid_w_, grid_h_;
  bool greedy_;
  Rng rng_;
  EdgeFollower follower_;
  std::optional<ContactSignal> last_signal_;
  std::vector<float> image_;
};

// Termination oracle: either the CNN classifier's softmax confidence or the
// ICP matcher's match-set confidence, against one threshold. The default
// construction judges nothing — for policies that terminate episodes
// themselves via prediction actions — and reports label -1 so a timeout in
// that mode scores as incorrect.
class TerminationJudge {
 public:
  TerminationJudge() = default;

  TerminationJudge(const Discriminator<float>* cnn, double threshold)
      : cnn_(cnn), threshold_(threshold) {
    if (cnn_ == nullptr) throw ConfigError("judge: null classifier");
    check_threshold();
  }

  TerminationJudge(IcpPredictor* icp, double threshold) : icp_(icp), threshold_(threshold) {
    if (icp_ == nullptr) throw ConfigError("judge: null matcher");
    check_threshold();
  }

  double threshold() const { return threshold_; }

  void begin_episode() {
    if (icp_) icp_->invalidate();
  }

  Prediction predict(const GridEncoder& grid) {
    if (cnn_) {
      image_.resize(static_cast<std::size_t>(grid.width()) * grid.height());
      grid.write_image(image_.data());
      return cnn_->predict(image_.data());
    }
    if (icp_) return icp_->predict(grid);
    Prediction none;
    none.label = -1;
    none.confidence = 0.0;
    return none;
  }

  bool should_terminate(const Prediction& p) const {
    return (cnn_ || icp_) && p.confidence > threshold_;
  }

 private:
  void check_threshold() const {
    if (!(threshold_ > 0.0 && threshold_ <= 1.0)) {
      throw ConfigError("judge: threshold must be in (0, 1]");
    }
  }

  const Discriminator<float>* cnn_ = nullptr;
  IcpPredictor* icp_ = nullptr;
  double threshold_ = 1.0;
  std::vector<float> image_;
};

}  // namespace tact
