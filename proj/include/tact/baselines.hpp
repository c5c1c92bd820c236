#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/rng.hpp"

namespace tact {

enum class Method {
  RandomWalk,
  NotGoBack,
  InfoGain,
  EdgeFollower,
  Ppo,
  AllInOne,
  PpoIcp,
  EdgeIcp,
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::RandomWalk: return "random_walk";
    case Method::NotGoBack: return "not_go_back";
    case Method::InfoGain: return "info_gain";
    case Method::EdgeFollower: return "edge_follower";
    case Method::Ppo: return "ppo";
    case Method::AllInOne: return "all_in_one";
    case Method::PpoIcp: return "ppo_icp";
    case Method::EdgeIcp: return "edge_icp";
  }
  throw ConfigError("unknown method");
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::RandomWalk, Method::NotGoBack, Method::InfoGain, Method::EdgeFollower,
                   Method::Ppo, Method::AllInOne, Method::PpoIcp, Method::EdgeIcp}) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown method: " + name);
}

inline Action turn_right(Action a) { return static_cast<Action>((static_cast<int>(a) + 1) % 4); }
inline Action turn_left(Action a) { return static_cast<Action>((static_cast<int>(a) + 3) % 4); }
inline Action reverse(Action a) { return static_cast<Action>((static_cast<int>(a) + 2) % 4); }

inline Action random_walk_action(Rng& rng) {
  return static_cast<Action>(rng.uniform_int(kMoveActionCount));
}

// Uniform over moves onto in-bounds unexplored cells; uniform over all four
// moves when every neighbor is explored or out of bounds.
inline Action not_go_back_action(const GridEncoder& grid, CellIndex finger, Rng& rng) {
  Action candidates[kMoveActionCount];
  int n = 0;
  for (int a = 0; a < kMoveActionCount; ++a) {
    const CellIndex d = action_delta(static_cast<Action>(a));
    const int tx = finger.x + d.x, ty = finger.y + d.y;
    if (grid.in_bounds(tx, ty) && grid.at(tx, ty) == CellState::Unknown) {
      candidates[n++] = static_cast<Action>(a);
    }
  }
  if (n == 0) return static_cast<Action>(rng.uniform_int(kMoveActionCount));
  return candidates[rng.uniform_int(static_cast<std::uint64_t>(n))];
}

inline double entropy_nats(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

struct GainScore {
  Action action;
  double gain;
};

// Expected-entropy-reduction score for each move onto an in-bounds unexplored
// cell: the candidate cell is hypothetically set to contact and to free, the
// classifier is queried on both grids, and the score is the drop from the
// current prediction's entropy to the mean of the two hypothetical entropies.
template <typename T>
std::vector<GainScore> info_gain_scores(const GridEncoder& grid, CellIndex finger,
                                        const Discriminator<T>& disc) {
  std::vector<Action> candidates;
  for (int a = 0; a < kMoveActionCount; ++a) {
    const CellIndex d = action_delta(static_cast<Action>(a));
    const int tx = finger.x + d.x, ty = finger.y + d.y;
    if (grid.in_bounds(tx, ty) && grid.at(tx, ty) == CellState::Unknown) {
      candidates.push_back(static_cast<Action>(a));
    }
  }
  if (candidates.empty()) return {};

  const std::size_t features = static_cast<std::size_t>(grid.width()) * grid.height();
  std::vector<T> batch((1 + 2 * candidates.size()) * features);
  grid.write_image(batch.data());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CellIndex d = action_delta(candidates[i]);
    const std::size_t cell = static_cast<std::size_t>(finger.y + d.y) * grid.width() +
                             static_cast<std::size_t>(finger.x + d.x);
    T* contact_img = batch.data() + (1 + 2 * i) * features;
    T* free_img = batch.data() + (2 + 2 * i) * features;
    std::copy_n(batch.data(), features, contact_img);
    std::copy_n(batch.data(), features, free_img);
    contact_img[cell] = static_cast<T>(kImageContact);
    free_img[cell] = static_cast<T>(kImageFree);
  }
  const std::vector<Prediction> preds =
      disc.predict_batch(batch.data(), static_cast<int>(1 + 2 * candidates.size()));

  const double h_now = entropy_nats(preds[0].distribution);
  std::vector<GainScore> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double h_contact = entropy_nats(preds[1 + 2 * i].distribution);
    const double h_free = entropy_nats(preds[2 + 2 * i].distribution);
    scores.push_back({candidates[i], h_now - (0.5 * h_contact + 0.5 * h_free)});
  }
  return scores;
}

template <typename T>
Action info_gain_action(const GridEncoder& grid, CellIndex finger, const Discriminator<T>& disc,
                        Rng& rng) {
  const std::vector<GainScore> scores = info_gain_scores(grid, finger, disc);
  if (scores.empty()) return static_cast<Action>(rng.uniform_int(kMoveActionCount));
  double best = scores[0].gain;
  for (const GainScore& s : scores) best = std::max(best, s.gain);
  Action tied[kMoveActionCount];
  int n = 0;
  for (const GainScore& s : scores) {
    if (s.gain == best) tied[n++] = s.action;
  }
  if (n == 1) return tied[0];
  return tied[rng.uniform_int(static_cast<std::uint64_t>(n))];
}

// Contour follower. Before any contact it raster-sweeps rows toward the
// workspace center; after the first reported contact it wall-follows with the
// contact on its left, trying turn-left, straight, turn-right, reverse and
// skipping moves whose target the grid already records as contact (or that
// leave the workspace). Reported contacts persist in the grid, so a blocked
// move is never proposed twice in a row from the same cell.
class EdgeFollower {
 public:
  EdgeFollower(int grid_width, int grid_height)
      : width_(grid_width), height_(grid_height), target_row_(grid_height / 2) {}

  bool following() const { return following_; }

  Action act(const GridEncoder& grid, CellIndex finger, std::optional<ContactSignal> last_signal) {
    if (last_signal) {
      if (*last_signal == ContactSignal::Collision) {
        if (!following_) {
          following_ = true;
          heading_ = turn_right(last_proposed_);
        }
        // Blocked while following: the grid now records the contact; keep heading.
      } else if (following_) {
        heading_ = last_proposed_;  // follow-phase moves never target walls
      } else if (is_horizontal(last_proposed_) && finger.x == prev_finger_.x &&
                 finger.y == target_row_) {
        advance_row();  // swept off the row's end into the wall: next row, back the other way
        sweep_dir_ = reverse(sweep_dir_);
      }
    }
    if (!started_) {
      started_ = true;
      sweep_dir_ = finger.x <= width_ / 2 ? Action::Right : Action::Left;
    }

    const Action proposed = following_ ? follow_action(grid, finger) : approach_action(finger);
    last_proposed_ = proposed;
    prev_finger_ = finger;
    return proposed;
  }

 private:
  static bool is_horizontal(Action a) { return a == Action::Right || a == Action::Left; }

  Action approach_action(CellIndex finger) const {
    if (finger.y != target_row_) return finger.y < target_row_ ? Action::Up : Action::Down;
    return sweep_dir_;
  }

  void advance_row() {
    // Visit rows center, center+1, …, top, center−1, …, bottom, then repeat.
    ++row_step_;
    const int center = height_ / 2;
    const int up_rows = height_ - center;
    const int step = row_step_ % height_;
    target_row_ = step < up_rows ? center + step : center - 1 - (step - up_rows);
  }

  Action follow_action(const GridEncoder& grid, CellIndex finger) {
    const Action order[4] = {turn_left(heading_), heading_, turn_right(heading_),
                             reverse(heading_)};
    for (Action a : order) {
      const CellIndex d = action_delta(a);
      const int tx = finger.x + d.x, ty = finger.y + d.y;
      if (!grid.in_bounds(tx, ty)) continue;
      if (grid.at(tx, ty) == CellState::Contact) continue;
      return a;
    }
    // Enclosed by recorded contacts and walls: rotate through the actions so
    // consecutive proposals always differ.
    return static_cast<Action>((fallback_++) % 4);
  }

  int width_, height_;
  bool started_ = false;
  bool following_ = false;
  Action heading_ = Action::Up;
  Action last_proposed_ = Action::Up;
  Action sweep_dir_ = Action::Right;
  CellIndex prev_finger_{-1, -1};
  int target_row_;
  int row_step_ = 0;
  int fallback_ = 0;
};

}  // namespace tact
