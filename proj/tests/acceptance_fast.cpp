// Acceptance checks that run in about a minute: analytic-gradient fidelity
// against central finite differences, geometry against an independent winding
// oracle, the expected-entropy-gain selection against brute force, sensor
// noise calibration, registration properties, bitwise determinism of the
// evaluation harness, and the cross-cutting invariant suite. Each top-level
// check prints one [PASS]/[FAIL] line; the exit code is the number of
// failures.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tact/baselines.hpp"
#include "tact/buffer.hpp"
#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/env.hpp"
#include "tact/explorer.hpp"
#include "tact/geometry.hpp"
#include "tact/harness.hpp"
#include "tact/icp.hpp"
#include "tact/neuralnet.hpp"
#include "tact/objects_io.hpp"
#include "tact/policy.hpp"
#include "tact/rng.hpp"

using namespace tact;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::printf("[%s] %s: %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  if (!o.ok) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient fidelity: analytic gradients vs central finite differences
// (h = 1e-5, relative error <= 1e-4 with an absolute floor of 1e-7).
// ---------------------------------------------------------------------------

constexpr double kFdStep = 1e-5;
constexpr double kFdRel = 1e-4;
constexpr double kFdFloor = 1e-7;

struct FdTally {
  std::size_t checked = 0;
  double worst = 0.0;  // worst |analytic - fd| / max(|analytic|, |fd|)
  bool ok = true;

  void record(double analytic, double fd) {
    ++checked;
    const double diff = std::abs(analytic - fd);
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    if (diff > kFdFloor) {
      const double rel = diff / scale;
      worst = std::max(worst, rel);
      if (rel > kFdRel) ok = false;
    }
  }
};

// Fills a tensor with pseudo-random values in [lo, hi].
void fill_uniform(Tensor<double>& t, Rng& rng, double lo, double hi) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

// Scalar readout loss: sum of fixed pseudo-random weights times the outputs.
// Its output gradient is just the weight tensor, which keeps the finite
// difference focused on the network body rather than on a loss head.
struct Readout {
  Tensor<double> weights;

  void init(const Tensor<double>& out_like, Rng& rng) {
    weights.resize(out_like.n, out_like.c, out_like.h, out_like.w);
    for (double& v : weights.data) v = rng.uniform(-1.0, 1.0);
  }
  double loss(const Tensor<double>& out) const {
    double l = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) l += weights.data[i] * out.data[i];
    return l;
  }
};

// Checks every parameter of `net`, and optionally every input entry, for one
// weighted-sum readout on a train-mode forward.
void fd_check_net(Net<double>& net, Tensor<double>& input, Rng& rng, bool check_inputs,
                  FdTally& tally) {
  NetState<double> state;
  Readout readout;
  readout.init(net.forward(input, state, /*train=*/true), rng);

  const auto loss_now = [&]() { return readout.loss(net.forward(input, state, true)); };

  net.zero_grads();
  (void)net.forward(input, state, true);
  Tensor<double> din;
  net.backward(state, readout.weights, &din);

  std::vector<std::vector<double>> grads;
  for (const ParamRef<double>& p : net.params()) grads.push_back(*p.grad);

  std::size_t pi = 0;
  for (const ParamRef<double>& p : net.params()) {
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double keep = (*p.value)[i];
      (*p.value)[i] = keep + kFdStep;
      const double up = loss_now();
      (*p.value)[i] = keep - kFdStep;
      const double dn = loss_now();
      (*p.value)[i] = keep;
      tally.record(grads[pi][i], (up - dn) / (2.0 * kFdStep));
    }
    ++pi;
  }

  if (check_inputs) {
    for (std::size_t i = 0; i < input.data.size(); ++i) {
      const double keep = input.data[i];
      input.data[i] = keep + kFdStep;
      const double up = loss_now();
      input.data[i] = keep - kFdStep;
      const double dn = loss_now();
      input.data[i] = keep;
      tally.record(din.data[i], (up - dn) / (2.0 * kFdStep));
    }
  }
}

// Every pooling window must have a clear winner so the finite-difference
// probe cannot flip the argmax.
bool pool_windows_well_separated(const Tensor<double>& in, int stride) {
  for (int c = 0; c < in.c; ++c) {
    for (int oy = 0; oy + stride <= in.h; oy += stride) {
      for (int ox = 0; ox + stride <= in.w; ox += stride) {
        double best = -std::numeric_limits<double>::infinity(), second = best;
        for (int ky = 0; ky < stride; ++ky) {
          for (int kx = 0; kx < stride; ++kx) {
            const double v =
                in.data[(static_cast<std::size_t>(c) * in.h + oy + ky) * in.w + ox + kx];
            if (v > best) {
              second = best;
              best = v;
            } else {
              second = std::max(second, v);
            }
          }
        }
        if (best - second < 1e-3) return false;
      }
    }
  }
  return true;
}

Outcome check_gradient_fidelity() {
  FdTally tally;
  Rng rng(20240811);

  // --- every layer kind alone on a 12x12 input ---
  {  // convolution: parameters and input gradients
    Net<double> net({LayerSpec::conv2d(3, 3, 2)}, {1, 12, 12}, 11);
    Tensor<double> in;
    in.resize(2, 1, 12, 12);
    fill_uniform(in, rng, -1.0, 1.0);
    fd_check_net(net, in, rng, true, tally);
  }
  {  // dense: parameters and input gradients
    Net<double> net({LayerSpec::dense(0, 9)}, {1, 12, 12}, 12);
    Tensor<double> in;
    in.resize(2, 1, 12, 12);
    fill_uniform(in, rng, -1.0, 1.0);
    fd_check_net(net, in, rng, true, tally);
  }
  {  // relu: input gradients, activations kept away from the kink
    Net<double> net({LayerSpec::relu()}, {1, 12, 12}, 13);
    Tensor<double> in;
    in.resize(2, 1, 12, 12);
    for (double& v : in.data) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
    fd_check_net(net, in, rng, true, tally);
  }
  {  // max pooling: input gradients, windows with separated maxima
    Net<double> net({LayerSpec::maxpool(2)}, {1, 12, 12}, 14);
    Tensor<double> in;
    in.resize(2, 1, 12, 12);
    do {
      fill_uniform(in, rng, 0.0, 10.0);
    } while (!pool_windows_well_separated(in, 2));
    fd_check_net(net, in, rng, true, tally);
  }
  {  // dropout (frozen all-keep mask) and flatten: input gradients
    Net<double> net({LayerSpec::dropout(0.0), LayerSpec::flatten()}, {1, 12, 12}, 15);
    Tensor<double> in;
    in.resize(2, 1, 12, 12);
    fill_uniform(in, rng, -1.0, 1.0);
    fd_check_net(net, in, rng, true, tally);
  }

  const std::size_t layer_checked = tally.checked;

  // --- the full classifier network on a 12x12 input ---
  // Same topology as production; at 12 pixels the second convolution already
  // reduces the map to 1x1, so the pooling stride drops to 1 (identity pool).
  // Stride-2 pooling is covered by the isolated-layer check above.
  const int classes = 10;
  std::vector<LayerSpec> disc_specs = {
      LayerSpec::conv2d(16, 5, 2), LayerSpec::relu(),
      LayerSpec::conv2d(32, 3, 2), LayerSpec::relu(),
      LayerSpec::maxpool(1),       LayerSpec::dropout(0.0),
      LayerSpec::flatten(),        LayerSpec::dense(0, 128),
      LayerSpec::relu(),           LayerSpec::dense(128, classes)};
  {
    Net<double> net(disc_specs, {1, 12, 12}, 21);
    Tensor<double> in;
    in.resize(3, 1, 12, 12);
    fill_uniform(in, rng, 0.0, 1.0);
    const std::vector<int> labels = {1, 7, 4};

    NetState<double> state;
    const auto loss_now = [&]() {
      return static_cast<double>(softmax_cross_entropy(net.forward(in, state, true), labels));
    };
    net.zero_grads();
    Tensor<double> dlogits;
    (void)softmax_cross_entropy(net.forward(in, state, true), labels, nullptr, &dlogits);
    net.backward(state, dlogits);
    std::vector<std::vector<double>> grads;
    for (const ParamRef<double>& p : net.params()) grads.push_back(*p.grad);

    std::size_t pi = 0;
    for (const ParamRef<double>& p : net.params()) {
      for (std::size_t i = 0; i < p.value->size(); ++i) {
        const double keep = (*p.value)[i];
        (*p.value)[i] = keep + kFdStep;
        const double up = loss_now();
        (*p.value)[i] = keep - kFdStep;
        const double dn = loss_now();
        (*p.value)[i] = keep;
        tally.record(grads[pi][i], (up - dn) / (2.0 * kFdStep));
      }
      ++pi;
    }
  }

  // --- the full policy/value network on a 12x12 input ---
  // Shared torso feeding separate action and value heads, trained jointly,
  // exactly as the learned explorer wires them.
  {
    std::vector<LayerSpec> torso_specs = {
        LayerSpec::conv2d(16, 5, 2), LayerSpec::relu(),
        LayerSpec::conv2d(32, 3, 2), LayerSpec::relu(),
        LayerSpec::maxpool(1),       LayerSpec::dropout(0.0),
        LayerSpec::flatten(),        LayerSpec::dense(0, 128),
        LayerSpec::relu()};
    Net<double> torso(torso_specs, {1, 12, 12}, 31);
    Net<double> actor({LayerSpec::dense(128, 4)}, {128, 1, 1}, 32);
    Net<double> critic({LayerSpec::dense(128, 1)}, {128, 1, 1}, 33);

    Tensor<double> in;
    in.resize(3, 1, 12, 12);
    fill_uniform(in, rng, 0.0, 1.0);
    const std::vector<int> actions = {2, 0, 3};
    const std::vector<double> targets = {0.3, -0.1, 0.9};

    NetState<double> ts, as, cs;
    const auto loss_now = [&]() {
      const Tensor<double>& emb = torso.forward(in, ts, true);
      const double policy_loss =
          static_cast<double>(softmax_cross_entropy(actor.forward(emb, as, true), actions));
      const Tensor<double>& value = critic.forward(emb, cs, true);
      double value_loss = 0.0;
      for (int b = 0; b < value.n; ++b) {
        const double d = value.sample(b)[0] - targets[static_cast<std::size_t>(b)];
        value_loss += d * d;
      }
      return policy_loss + 0.5 * value_loss / value.n;
    };

    torso.zero_grads();
    actor.zero_grads();
    critic.zero_grads();
    const Tensor<double>& emb = torso.forward(in, ts, true);
    Tensor<double> dlogits;
    (void)softmax_cross_entropy(actor.forward(emb, as, true), actions, nullptr, &dlogits);
    const Tensor<double>& value = critic.forward(emb, cs, true);
    Tensor<double> dvalue;
    dvalue.resize(value.n, 1, 1, 1);
    for (int b = 0; b < value.n; ++b) {
      dvalue.sample(b)[0] = (value.sample(b)[0] - targets[static_cast<std::size_t>(b)]) / value.n;
    }
    Tensor<double> demb_actor, demb_critic;
    actor.backward(as, dlogits, &demb_actor);
    critic.backward(cs, dvalue, &demb_critic);
    Tensor<double> demb = demb_actor;
    for (std::size_t i = 0; i < demb.data.size(); ++i) demb.data[i] += demb_critic.data[i];
    torso.backward(ts, demb);

    Net<double>* nets[] = {&torso, &actor, &critic};
    for (Net<double>* net : nets) {
      std::vector<std::vector<double>> grads;
      for (const ParamRef<double>& p : net->params()) grads.push_back(*p.grad);
      std::size_t pi = 0;
      for (const ParamRef<double>& p : net->params()) {
        for (std::size_t i = 0; i < p.value->size(); ++i) {
          const double keep = (*p.value)[i];
          (*p.value)[i] = keep + kFdStep;
          const double up = loss_now();
          (*p.value)[i] = keep - kFdStep;
          const double dn = loss_now();
          (*p.value)[i] = keep;
          tally.record(grads[pi][i], (up - dn) / (2.0 * kFdStep));
        }
        ++pi;
      }
    }
  }

  Outcome o;
  o.ok = tally.ok;
  o.detail = std::to_string(layer_checked) + " isolated-layer + " +
             std::to_string(tally.checked - layer_checked) +
             " composed-network derivatives vs central differences, worst rel err " +
             fmt(tally.worst);
  return o;
}

// ---------------------------------------------------------------------------
// Geometry: production point test vs an independent winding-number oracle,
// and the rasterizer vs a per-cell brute-force loop over that oracle.
// ---------------------------------------------------------------------------

double distance_to_boundary(Vec2 p, const Polygon& poly) {
  double best = std::numeric_limits<double>::infinity();
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Vec2 a = v[j], b = v[i], ab = b - a, ap = p - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(ap, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q{a.x + t * ab.x, a.y + t * ab.y};
    best = std::min(best, norm(p - q));
  }
  return best;
}

// Signed-angle winding number; boundary points (within eps) count as inside,
// mirroring the production rule.
bool oracle_point_in_polygon(Vec2 p, const Polygon& poly) {
  if (distance_to_boundary(p, poly) <= 1e-12) return true;
  double total = 0.0;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Vec2 a = v[j] - p, b = v[i] - p;
    total += std::atan2(cross(a, b), dot(a, b));
  }
  return std::abs(total) > kTwoPi / 4.0;  // ~2pi inside, ~0 outside
}

Outcome check_geometry_oracle() {
  Rng rng(4242);
  int disagreements = 0;
  const int pairs = 10000;
  for (int t = 0; t < pairs; ++t) {
    const Polygon poly = generate_polygon(rng, 3 + static_cast<int>(rng.uniform_int(6)), 0.10);
    const Vec2 p{rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)};
    if (point_in_polygon(p, poly) != oracle_point_in_polygon(p, poly)) ++disagreements;
  }

  int raster_mismatch = 0;
  const GridSpec spec{60, 60, 0.005};
  for (int t = 0; t < 20; ++t) {
    const Polygon poly = generate_polygon(rng, 8, 0.10);
    Pose2D pose;
    pose.rotation = rng.uniform(0.0, kTwoPi);
    pose.translation = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)};
    const TruthGrid truth = rasterize_truth(poly, pose, spec);
    const Polygon posed = transform(poly, pose);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (truth.at(x, y) != oracle_point_in_polygon(spec.cell_center(x, y), posed)) {
          ++raster_mismatch;
        }
      }
    }
  }

  Outcome o;
  o.ok = disagreements == 0 && raster_mismatch == 0;
  o.detail = std::to_string(pairs) + " point tests vs winding oracle (" +
             std::to_string(disagreements) + " disagreements), 20 grids re-rasterized (" +
             std::to_string(raster_mismatch) + " cell mismatches)";
  return o;
}

// ---------------------------------------------------------------------------
// Expected-entropy-gain action selection vs brute force.
// ---------------------------------------------------------------------------

double oracle_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

Outcome check_info_gain() {
  const int grid = 16;
  DiscriminatorConfig dcfg;
  const Discriminator<float> disc(5, grid, grid, dcfg, 909);
  Rng rng(31337);
  Rng pick_rng(555);

  int mismatches = 0;
  const int instances = 1000;
  for (int t = 0; t < instances; ++t) {
    GridEncoder enc(grid, grid);
    const int marks = static_cast<int>(rng.uniform_int(80));
    for (int m = 0; m < marks; ++m) {
      const int x = static_cast<int>(rng.uniform_int(grid));
      const int y = static_cast<int>(rng.uniform_int(grid));
      enc.mark(x, y, rng.bernoulli(0.25) ? CellState::Contact : CellState::Free);
    }
    CellIndex finger{static_cast<int>(rng.uniform_int(grid)),
                     static_cast<int>(rng.uniform_int(grid))};

    // Brute force: evaluate H(now) - (H(contact) + H(free)) / 2 for each move
    // onto an in-bounds unexplored cell, building every hypothetical image
    // from scratch.
    std::vector<double> base_img = enc.image();
    std::vector<float> base(base_img.begin(), base_img.end());
    const Prediction now = disc.predict(base.data());
    const double h_now = oracle_entropy(now.distribution);

    std::vector<Action> cands;
    std::vector<double> gains;
    for (int a = 0; a < kMoveActionCount; ++a) {
      const CellIndex d = action_delta(static_cast<Action>(a));
      const int tx = finger.x + d.x, ty = finger.y + d.y;
      if (!enc.in_bounds(tx, ty) || enc.at(tx, ty) != CellState::Unknown) continue;
      std::vector<float> img_contact = base, img_free = base;
      const std::size_t cell = static_cast<std::size_t>(ty) * grid + tx;
      img_contact[cell] = static_cast<float>(kImageContact);
      img_free[cell] = static_cast<float>(kImageFree);
      const double h_c = oracle_entropy(disc.predict(img_contact.data()).distribution);
      const double h_f = oracle_entropy(disc.predict(img_free.data()).distribution);
      cands.push_back(static_cast<Action>(a));
      gains.push_back(h_now - 0.5 * (h_c + h_f));
    }
    if (cands.empty()) continue;  // selection falls back to a fair coin; nothing to compare

    const Action chosen = info_gain_action(enc, finger, disc, pick_rng);
    double best = gains[0];
    for (double g : gains) best = std::max(best, g);
    bool chosen_is_best = false;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (cands[i] == chosen && gains[i] == best) chosen_is_best = true;
    }
    if (!chosen_is_best) ++mismatches;
  }

  Outcome o;
  o.ok = mismatches == 0;
  o.detail = std::to_string(instances) + " randomized instances vs brute-force gain (" +
             std::to_string(mismatches) + " selections off the exact argmax set)";
  return o;
}

// ---------------------------------------------------------------------------
// Sensor noise calibration: configured flip rate 0.005 over 1e6 probes.
// ---------------------------------------------------------------------------

Outcome check_noise_calibration() {
  EnvConfig cfg;
  cfg.sensor_failure_rate = 0.005;
  Rng shape_rng(17);
  TactileEnv env(cfg, {generate_polygon(shape_rng, 8, 0.10)});

  Rng walk(2718);
  long long probes = 0, flips = 0;
  const long long target = 1000000;
  std::uint64_t episode = 0;
  env.reset(0, derive_seed(99, episode));
  while (probes < target) {
    if (env.done()) env.reset(0, derive_seed(99, ++episode));
    const Action a = static_cast<Action>(walk.uniform_int(kMoveActionCount));
    const CellIndex d = action_delta(a);
    const CellIndex target_cell{env.finger().x + d.x, env.finger().y + d.y};
    const bool in_bounds = env.encoder().in_bounds(target_cell.x, target_cell.y);
    const bool truth_contact = in_bounds && env.truth().at(target_cell.x, target_cell.y);
    const StepResult r = env.step(a);
    if (r.wall) continue;  // nothing probed
    ++probes;
    const bool reported_contact = r.signal == ContactSignal::Collision;
    if (reported_contact != truth_contact) ++flips;
  }
  const double rate = static_cast<double>(flips) / static_cast<double>(probes);

  Outcome o;
  o.ok = rate >= 0.003 && rate <= 0.007;
  o.detail = "flip rate " + fmt(rate) + " over 1e6 probes (target band [0.003, 0.007])";
  return o;
}

// ---------------------------------------------------------------------------
// Registration properties: monotone residuals, known-transform recovery,
// self-match.
// ---------------------------------------------------------------------------

Outcome check_icp_properties() {
  Rng rng(8080);
  bool monotone = true;
  for (int trial = 0; trial < 100; ++trial) {
    const Polygon poly = generate_polygon(rng, 8, 0.10);
    const BoundaryModel model = make_boundary_model(poly, 0.001);
    Pose2D pose;
    pose.rotation = rng.uniform(0.0, kTwoPi);
    pose.translation = {rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
    const std::size_t start = rng.uniform_int(model.points.size());
    const std::size_t span = model.points.size() / 2 + rng.uniform_int(model.points.size() / 2);
    std::vector<Vec2> cloud;
    for (std::size_t i = 0; i < span; i += 3) {
      Vec2 p = apply_pose(pose, model.points[(start + i) % model.points.size()]);
      p.x += rng.uniform(-0.001, 0.001);
      p.y += rng.uniform(-0.001, 0.001);
      cloud.push_back(p);
    }
    std::vector<double> history;
    (void)icp_align(cloud, model, rng.uniform(0.0, kTwoPi), {}, &history);
    for (std::size_t i = 1; i < history.size(); ++i) {
      if (history[i] > history[i - 1]) monotone = false;
    }
  }

  // Known-transform recovery: full outline under a random rigid transform,
  // best pose over the rotation sweep within 1 degree / 2 mm.
  bool recovered = true;
  double worst_angle = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Polygon poly = generate_polygon(rng, 8, 0.10);
    const BoundaryModel model = make_boundary_model(poly, 0.001);
    Pose2D truth;
    truth.rotation = rng.uniform(0.0, kTwoPi);
    truth.translation = {rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
    std::vector<Vec2> cloud;
    for (const Vec2& p : model.points) cloud.push_back(apply_pose(truth, p));

    AlignResult best;
    for (int a = 0; a < 36; ++a) {
      const AlignResult r = icp_align(cloud, model, kTwoPi * a / 36.0, {});
      if (r.residual < best.residual) best = r;
    }
    const double wrapped = normalize_angle(best.pose.rotation - truth.rotation);
    const double dang = std::min(wrapped, kTwoPi - wrapped);
    const double dx = best.pose.translation.x - truth.translation.x;
    const double dy = best.pose.translation.y - truth.translation.y;
    const double shift = std::hypot(dx, dy);
    worst_angle = std::max(worst_angle, dang);
    worst_shift = std::max(worst_shift, shift);
    if (dang > kTwoPi / 360.0 || shift > 0.002) recovered = false;
  }

  // Self-match: a model aligned to its own points.
  const Polygon poly = generate_polygon(rng, 8, 0.10);
  const BoundaryModel model = make_boundary_model(poly, 0.001);
  const double self_residual = icp_align(model.points, model, 0.0, {}).residual;

  Outcome o;
  o.ok = monotone && recovered && self_residual < 1e-6;
  o.detail = std::string("residual history ") + (monotone ? "monotone" : "NOT monotone") +
             " on 100 alignments; recovery worst " + fmt(worst_angle * 360.0 / kTwoPi) +
             " deg / " + fmt(worst_shift * 1000.0) + " mm; self-match residual " +
             fmt(self_residual);
  return o;
}

// ---------------------------------------------------------------------------
// Determinism: identical config + master seed => bitwise-identical trial and
// metrics CSVs, serial and parallel.
// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome check_determinism() {
  EnvConfig env_cfg;
  env_cfg.workspace_size = 0.12;  // 24x24 grid
  env_cfg.max_actions = 150;
  env_cfg.sensor_failure_rate = 0.01;

  Rng shape_rng(4);
  std::vector<Polygon> objects;
  for (int i = 0; i < 4; ++i) objects.push_back(generate_polygon(shape_rng, 8, 0.045));

  DiscriminatorConfig dcfg;
  const Discriminator<float> disc(4, 24, 24, dcfg, 777);
  MethodContext ctx;
  ctx.method = Method::RandomWalk;
  ctx.disc = &disc;
  ctx.threshold = 0.98;

  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "tact_acceptance_determinism";
  std::filesystem::create_directories(dir);

  const auto run = [&](int threads, const std::string& tag) {
    const EvaluateResult res = evaluate(env_cfg, objects, ctx, 64, 20240811, threads);
    const std::string trials = (dir / ("trials_" + tag + ".csv")).string();
    const std::string metrics = (dir / ("metrics_" + tag + ".csv")).string();
    write_trials_csv(trials, res.records, 0xabcdef12u);
    write_metrics_csv(metrics, {{method_name(ctx.method), env_cfg.sensor_failure_rate,
                                 ctx.threshold, res.metrics}},
                      0xabcdef12u);
    return std::pair<std::string, std::string>(slurp(trials), slurp(metrics));
  };

  const auto serial_a = run(1, "serial_a");
  const auto serial_b = run(1, "serial_b");
  const auto parallel = run(4, "parallel");

  const bool repeat_ok = serial_a == serial_b;
  const bool parallel_ok = serial_a == parallel;

  Outcome o;
  o.ok = repeat_ok && parallel_ok && !serial_a.first.empty();
  o.detail = std::string("repeat run ") + (repeat_ok ? "bitwise identical" : "DIFFERS") +
             ", 4-thread run " + (parallel_ok ? "bitwise identical" : "DIFFERS") +
             " (64 trials, trial + metrics CSVs)";
  return o;
}

// ---------------------------------------------------------------------------
// Invariant suites.
// ---------------------------------------------------------------------------

Outcome check_invariants() {
  std::vector<std::string> problems;

  // Not-go-back never moves onto an explored cell while an unexplored
  // in-bounds neighbor exists.
  {
    EnvConfig env_cfg;
    Rng shape_rng(12);
    TactileEnv env(env_cfg, {generate_polygon(shape_rng, 8, 0.10)});
    EpisodePolicy policy(Method::NotGoBack, nullptr, nullptr, 60, 60);
    int violations = 0;
    std::uint64_t episode = 0;
    env.reset(0, derive_seed(7, episode));
    policy.begin_episode(derive_seed(1007, episode));
    for (int step = 0; step < 10000; ++step) {
      if (env.done()) {
        ++episode;
        env.reset(0, derive_seed(7, episode));
        policy.begin_episode(derive_seed(1007, episode));
      }
      const GridEncoder& grid = env.encoder();
      const CellIndex finger = env.finger();
      const ActionChoice choice = policy.select(grid, finger);
      bool has_unexplored = false;
      for (int a = 0; a < kMoveActionCount; ++a) {
        const CellIndex d = action_delta(static_cast<Action>(a));
        const int tx = finger.x + d.x, ty = finger.y + d.y;
        if (grid.in_bounds(tx, ty) && grid.at(tx, ty) == CellState::Unknown) {
          has_unexplored = true;
        }
      }
      const CellIndex d = action_delta(static_cast<Action>(choice.action));
      const int tx = finger.x + d.x, ty = finger.y + d.y;
      if (has_unexplored &&
          (!grid.in_bounds(tx, ty) || grid.at(tx, ty) != CellState::Unknown)) {
        ++violations;
      }
      const StepResult r = env.step(static_cast<Action>(choice.action));
      policy.observe(r.signal);
    }
    if (violations != 0) {
      problems.push_back("not-go-back violations: " + std::to_string(violations));
    }
  }

  // Per-trial efficiency bounds over a mixed evaluation.
  {
    EnvConfig env_cfg;
    env_cfg.workspace_size = 0.12;
    env_cfg.max_actions = 120;
    env_cfg.sensor_failure_rate = 0.005;
    Rng shape_rng(21);
    std::vector<Polygon> objects;
    for (int i = 0; i < 3; ++i) objects.push_back(generate_polygon(shape_rng, 7, 0.045));
    DiscriminatorConfig dcfg;
    const Discriminator<float> disc(3, 24, 24, dcfg, 31);
    MethodContext ctx;
    ctx.method = Method::NotGoBack;
    ctx.disc = &disc;
    ctx.threshold = 0.9;
    const EvaluateResult res = evaluate(env_cfg, objects, ctx, 60, 606, 1);
    int bad = 0;
    for (const TrialRecord& rec : res.records) {
      if (rec.explored > rec.actions) ++bad;
      if (rec.actions > 0) {
        const double ear = static_cast<double>(rec.explored) / rec.actions;
        if (!(ear > 0.0 && ear <= 1.0)) ++bad;
      }
    }
    if (bad != 0) problems.push_back("efficiency bound breaches: " + std::to_string(bad));
    if (!(res.metrics.ear_mean > 0.0 && res.metrics.ear_mean <= 1.0)) {
      problems.push_back("aggregate efficiency outside (0,1]");
    }
  }

  // Softmax rows form probability simplex points, including extreme logits.
  {
    Rng rng(606060);
    Tensor<double> logits;
    logits.resize(1, 10, 1, 1);
    Tensor<double> probs;
    int bad = 0;
    for (int t = 0; t < 10000; ++t) {
      const double scale = (t % 3 == 0) ? 50.0 : (t % 3 == 1 ? 1.0 : 1e-3);
      for (double& v : logits.data) v = rng.uniform(-scale, scale);
      if (t % 7 == 0) std::fill(logits.data.begin(), logits.data.end(), rng.uniform(-5.0, 5.0));
      softmax_rows(logits, probs);
      double sum = 0.0;
      for (double p : probs.data) {
        if (!(p >= 0.0) || !std::isfinite(p)) ++bad;
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) ++bad;
    }
    if (bad != 0) problems.push_back("softmax simplex breaches: " + std::to_string(bad));
  }

  // Ring buffer evicts oldest first and iterates oldest to newest.
  {
    DataBuffer buf(7);
    for (int i = 0; i < 20; ++i) {
      LabeledSample s;
      s.label = i;
      s.cells.assign(4, CellState::Unknown);
      buf.push(std::move(s));
    }
    bool ok = buf.size() == 7;
    for (std::size_t i = 0; ok && i < buf.size(); ++i) ok = buf[i].label == 13 + static_cast<int>(i);
    if (!ok) problems.push_back("ring buffer eviction order broken");
  }

  // Advantage estimation vs the brute-force double loop.
  {
    Rng rng(777777);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng.uniform_int(40);
      const double gamma = rng.uniform(0.8, 1.0), lambda = rng.uniform(0.8, 1.0);
      std::vector<double> rewards(n), values(n + 1);
      std::vector<std::uint8_t> dones(n);
      for (auto& r : rewards) r = rng.uniform(-1.0, 1.0);
      for (auto& v : values) v = rng.uniform(-1.0, 1.0);
      for (auto& d : dones) d = rng.bernoulli(0.15) ? 1 : 0;

      const GaeResult got = compute_gae(rewards, values, dones, gamma, lambda);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0, w = 1.0;
        for (std::size_t k = i; k < n; ++k) {
          const double not_done = dones[k] ? 0.0 : 1.0;
          const double delta = rewards[k] + gamma * values[k + 1] * not_done - values[k];
          acc += w * delta;
          w *= gamma * lambda * not_done;
          if (w == 0.0) break;
        }
        worst = std::max(worst, std::abs(acc - got.advantages[i]));
        worst = std::max(worst, std::abs((acc + values[i]) - got.returns[i]));
      }
    }
    if (worst > 1e-10) problems.push_back("advantage oracle gap " + fmt(worst));
  }

  Outcome o;
  o.ok = problems.empty();
  if (problems.empty()) {
    o.detail =
        "not-go-back (1e4 steps), per-trial efficiency bounds, softmax simplex (1e4 rows), "
        "ring-buffer eviction, advantage estimation vs double loop (<=1e-10)";
  } else {
    o.detail.clear();
    for (std::size_t i = 0; i < problems.size(); ++i) {
      if (i) o.detail += "; ";
      o.detail += problems[i];
    }
  }
  return o;
}

}  // namespace

int main() {
  report("gradient-fidelity", check_gradient_fidelity());
  report("geometry-oracle", check_geometry_oracle());
  report("info-gain-selection", check_info_gain());
  report("noise-calibration", check_noise_calibration());
  report("registration-properties", check_icp_properties());
  report("evaluation-determinism", check_determinism());
  report("invariant-suites", check_invariants());
  return g_failures;
}
