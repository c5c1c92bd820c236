#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tact/encoder.hpp"
#include "tact/errors.hpp"
#include "tact/geometry.hpp"
#include "tact/rng.hpp"

namespace tact {

enum class Action : int { Up = 0, Right = 1, Down = 2, Left = 3 };
inline constexpr int kMoveActionCount = 4;

inline CellIndex action_delta(Action a) {
  switch (a) {
    case Action::Up: return {0, 1};
    case Action::Right: return {1, 0};
    case Action::Down: return {0, -1};
    case Action::Left: return {-1, 0};
  }
  throw StateError("action_delta: bad action");
}

// Raw sensor reading: the probe either hits the object or swings free.
enum class ContactSignal : int { Collision = 0, Free = 1 };

inline ContactSignal flip(ContactSignal s) {
  return s == ContactSignal::Collision ? ContactSignal::Free : ContactSignal::Collision;
}

// Sensor failure model: with probability `rate` the reading is flipped.
inline ContactSignal apply_sensor_noise(ContactSignal true_signal, double rate, Rng& rng) {
  if (rate > 0.0 && rng.bernoulli(rate)) return flip(true_signal);
  return true_signal;
}

enum class OrientationMode { Continuous, Discrete };

struct EnvConfig {
  double workspace_size = 0.30;      // meters, square
  double cell_size = 0.005;          // meters
  int max_actions = 2000;
  double sensor_failure_rate = 0.0;  // probability a probe reading is flipped
  double translation_noise = 0.01;   // meters, per axis
  OrientationMode orientation_mode = OrientationMode::Continuous;
  int orientation_count = 8;         // used in Discrete mode

  int grid_cells() const {
    const double cells = workspace_size / cell_size;
    const int n = static_cast<int>(std::lround(cells));
    if (n <= 0 || std::abs(cells - n) > 1e-9) {
      throw ConfigError("EnvConfig: workspace_size must be an integer multiple of cell_size");
    }
    return n;
  }

  GridSpec grid_spec() const {
    const int n = grid_cells();
    return {n, n, cell_size};
  }

  void validate() const {
    grid_cells();
    if (max_actions <= 0) throw ConfigError("EnvConfig: max_actions must be >= 1");
    if (sensor_failure_rate < 0.0 || sensor_failure_rate > 1.0) {
      throw ConfigError("EnvConfig: sensor_failure_rate must be in [0, 1]");
    }
    if (translation_noise < 0.0) throw ConfigError("EnvConfig: translation_noise must be >= 0");
    if (orientation_mode == OrientationMode::Discrete && orientation_count <= 0) {
      throw ConfigError("EnvConfig: orientation_count must be > 0");
    }
  }
};

struct StepResult {
  ContactSignal signal = ContactSignal::Free;
  bool moved = false;     // finger ended on the target cell
  bool wall = false;      // target was outside the workspace; nothing probed
  bool done = false;      // step budget exhausted after this step
};

// One finger exploring one hidden object. A step pushes toward the adjacent
// cell: a wall bump reports Free without probing, an in-bounds probe reads
// the cell (subject to sensor noise) and the finger advances only when the
// reported reading is Free. Every probe result lands in the encoder, latest
// reading wins.
class TactileEnv {
 public:
  TactileEnv(EnvConfig config, std::vector<Polygon> objects)
      : config_(config), objects_(std::move(objects)) {
    config_.validate();
    if (objects_.empty()) throw ConfigError("TactileEnv: no objects");
    spec_ = config_.grid_spec();
  }

  const EnvConfig& config() const { return config_; }
  int object_count() const { return static_cast<int>(objects_.size()); }
  const Polygon& object(int i) const { return objects_[static_cast<std::size_t>(i)]; }

  // Start a fresh episode on objects[object_index] at a pose drawn from this
  // seed's stream: rotation uniform (continuous or one of K notches),
  // translation uniform per axis in [-t_max, t_max], finger start uniform
  // over free cells of the boundary ring.
  void reset(int object_index, std::uint64_t seed) {
    if (object_index < 0 || object_index >= object_count()) {
      throw ConfigError("TactileEnv::reset: object index out of range");
    }
    rng_.seed(seed);
    object_index_ = object_index;

    Pose2D pose;
    if (config_.orientation_mode == OrientationMode::Discrete) {
      const auto k = rng_.uniform_int(static_cast<std::uint64_t>(config_.orientation_count));
      pose.rotation = kTwoPi * static_cast<double>(k) / config_.orientation_count;
    } else {
      pose.rotation = rng_.uniform() * kTwoPi;
    }
    pose.translation.x = (2.0 * rng_.uniform() - 1.0) * config_.translation_noise;
    pose.translation.y = (2.0 * rng_.uniform() - 1.0) * config_.translation_noise;
    pose_ = pose;

    truth_ = rasterize_truth(objects_[static_cast<std::size_t>(object_index)], pose_, spec_);
    encoder_.reset(spec_.width, spec_.height);
    steps_ = 0;
    done_ = false;

    std::vector<CellIndex> ring;
    ring.reserve(4 * spec_.width);
    for (int x = 0; x < spec_.width; ++x) {
      for (int y = 0; y < spec_.height; ++y) {
        const bool edge = x == 0 || x == spec_.width - 1 || y == 0 || y == spec_.height - 1;
        if (edge && !truth_.at(x, y)) ring.push_back({x, y});
      }
    }
    if (ring.empty()) {
      throw ConfigError("TactileEnv::reset: object occupies the entire boundary ring");
    }
    finger_ = ring[rng_.uniform_int(ring.size())];
  }

  StepResult step(Action a) {
    if (done_) throw StateError("TactileEnv::step: episode already done");
    StepResult result;
    const CellIndex d = action_delta(a);
    const CellIndex target{finger_.x + d.x, finger_.y + d.y};

    if (!encoder_.in_bounds(target.x, target.y)) {
      result.signal = ContactSignal::Free;
      result.wall = true;
      result.moved = false;
    } else {
      const ContactSignal truth =
          truth_.at(target.x, target.y) ? ContactSignal::Collision : ContactSignal::Free;
      const ContactSignal reported =
          apply_sensor_noise(truth, config_.sensor_failure_rate, rng_);
      result.signal = reported;
      if (reported == ContactSignal::Free) {
        finger_ = target;
        result.moved = true;
        encoder_.mark(target.x, target.y, CellState::Free);
      } else {
        result.moved = false;
        encoder_.mark(target.x, target.y, CellState::Contact);
      }
    }

    ++steps_;
    if (steps_ >= config_.max_actions) done_ = true;
    result.done = done_;
    return result;
  }

  CellIndex finger() const { return finger_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  int object_index() const { return object_index_; }
  const Pose2D& pose() const { return pose_; }
  const TruthGrid& truth() const { return truth_; }
  const GridEncoder& encoder() const { return encoder_; }
  const GridSpec& grid_spec() const { return spec_; }

  // The classifier sees the bare map; the explorer additionally sees where
  // the finger is.
  std::vector<double> discriminator_image() const { return encoder_.image(); }
  std::vector<double> explorer_image() const { return encoder_.image(finger_); }

 private:
  EnvConfig config_;
  std::vector<Polygon> objects_;
  GridSpec spec_;
  Rng rng_;

  int object_index_ = 0;
  Pose2D pose_;
  TruthGrid truth_;
  GridEncoder encoder_;
  CellIndex finger_;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace tact
