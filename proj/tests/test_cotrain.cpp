#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tact/cotrain.hpp"
#include "tact/objects_io.hpp"

using namespace tact;

namespace {

// Small, fast workspace: 24x24 grid.
EnvConfig tiny_env(int max_actions) {
  EnvConfig cfg;
  cfg.workspace_size = 0.12;
  cfg.cell_size = 0.005;
  cfg.max_actions = max_actions;
  cfg.sensor_failure_rate = 0.0;
  cfg.translation_noise = 0.005;
  cfg.orientation_mode = OrientationMode::Discrete;
  cfg.orientation_count = 4;
  return cfg;
}

std::vector<Polygon> tiny_objects(int count) {
  const ObjectSet set = generate_object_set(count, 7, 0.045, 321);
  return set.objects;
}

std::string serialize_disc(Discriminator<float>& d) {
  std::ostringstream os(std::ios::binary);
  d.save(os);
  return os.str();
}

std::string serialize_actor(ActorCritic<float>& a) {
  std::ostringstream os(std::ios::binary);
  a.save(os);
  return os.str();
}

}  // namespace

TEST_CASE("initial collection: one capped episode pushes one sample per step") {
  const EnvConfig env_cfg = tiny_env(50);
  const auto objects = tiny_objects(4);
  TactileEnv env(env_cfg, objects);
  DiscriminatorConfig dc;
  Discriminator<float> disc(4, env_cfg.grid_cells(), env_cfg.grid_cells(), dc, 11);
  // Threshold 1.0: finite softmax confidence can never exceed it, so the
  // episode must run to the action cap.
  TerminationJudge judge(&disc, 1.0);
  EpisodePolicy policy(Method::RandomWalk, nullptr, nullptr, env_cfg.grid_cells(),
                       env_cfg.grid_cells());
  DataBuffer buffer(1000);
  policy.begin_episode(7);
  const auto outcome =
      detail_cotrain::run_training_episode(env, 3, 99, policy, judge, &buffer,
                                           RewardMode::Standard, nullptr);
  REQUIRE(outcome.actions == 50);
  REQUIRE_FALSE(outcome.terminated_by_confidence);
  REQUIRE(outcome.reward == 0.0);
  REQUIRE(buffer.size() == 50);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    REQUIRE(buffer[i].label == 3);
  }
}

TEST_CASE("initial collection: uniform object sampling gives balanced labels") {
  EnvConfig env_cfg = tiny_env(20);
  const auto objects = tiny_objects(10);
  TactileEnv env(env_cfg, objects);
  DiscriminatorConfig dc;
  Discriminator<float> disc(10, env_cfg.grid_cells(), env_cfg.grid_cells(), dc, 5);
  TerminationJudge judge(&disc, 1.0);  // never terminates early
  EpisodePolicy policy(Method::RandomWalk, nullptr, nullptr, env_cfg.grid_cells(),
                       env_cfg.grid_cells());
  DataBuffer buffer = collect_initial_buffer(env, policy, judge, 1000, 100000, 2024);
  REQUIRE(buffer.size() == 20000);  // every episode hits the 20-action cap
  std::map<int, int> counts;
  for (std::size_t i = 0; i < buffer.size(); ++i) ++counts[buffer[i].label];
  for (const auto& [label, count] : counts) {
    const double share = static_cast<double>(count) / static_cast<double>(buffer.size());
    INFO("label " << label << " share " << share);
    CHECK(share > 0.05);
    CHECK(share < 0.15);
  }
}

TEST_CASE("cotrain: empty initial buffer fails at the first classifier phase") {
  CotrainConfig cfg;
  cfg.max_total_steps = 100;
  cfg.disc_epochs = 1;
  cfg.explorer_steps_per_iteration = 50;
  cfg.buffer_capacity = 100;
  cfg.initial_episodes = 0;
  cfg.threshold = 1.0;
  REQUIRE_THROWS_AS(cotrain_loop(tiny_env(20), tiny_objects(3), Method::RandomWalk,
                                 DiscriminatorConfig{}, PPOConfig{}, cfg, ICPConfig{}, 1),
                    DataError);
}

TEST_CASE("cotrain: degenerate zero-work iteration leaves parameters unchanged") {
  CotrainConfig cfg;
  cfg.max_total_steps = 100;
  cfg.disc_epochs = 0;
  cfg.explorer_steps_per_iteration = 0;
  cfg.buffer_capacity = 100;
  cfg.initial_episodes = 1;
  cfg.threshold = 1.0;
  const EnvConfig env_cfg = tiny_env(10);
  const auto objects = tiny_objects(3);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::RandomWalk, DiscriminatorConfig{},
                                    PPOConfig{}, cfg, ICPConfig{}, 77);
  REQUIRE(out.log.size() == 1);  // one iteration, then the loop advances out
  REQUIRE(out.total_steps == 0);
  // The classifier was never trained, so its parameters must equal a freshly
  // seeded copy bit for bit.
  Discriminator<float> fresh(3, env_cfg.grid_cells(), env_cfg.grid_cells(),
                             [&] {
                               DiscriminatorConfig dc;
                               dc.confidence_threshold = cfg.threshold;
                               return dc;
                             }(),
                             derive_seed(77, 0x64697363ULL));
  REQUIRE(serialize_disc(out.disc) == serialize_disc(fresh));
}

TEST_CASE("cotrain: classifier parameters frozen during collection phases") {
  // disc_epochs = 0 means the classifier is never trained; after a full run
  // with collection phases it must still match the freshly seeded network.
  CotrainConfig cfg;
  cfg.max_total_steps = 60;
  cfg.disc_epochs = 0;
  cfg.explorer_steps_per_iteration = 30;
  cfg.buffer_capacity = 500;
  cfg.initial_episodes = 2;
  cfg.threshold = 1.0;
  const EnvConfig env_cfg = tiny_env(15);
  const auto objects = tiny_objects(3);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::NotGoBack, DiscriminatorConfig{},
                                    PPOConfig{}, cfg, ICPConfig{}, 13);
  Discriminator<float> fresh(3, env_cfg.grid_cells(), env_cfg.grid_cells(),
                             [&] {
                               DiscriminatorConfig dc;
                               dc.confidence_threshold = cfg.threshold;
                               return dc;
                             }(),
                             derive_seed(13, 0x64697363ULL));
  REQUIRE(serialize_disc(out.disc) == serialize_disc(fresh));
  // And with training enabled the parameters do change.
  cfg.disc_epochs = 1;
  CotrainOutcome trained = cotrain_loop(env_cfg, objects, Method::NotGoBack,
                                        DiscriminatorConfig{}, PPOConfig{}, cfg, ICPConfig{}, 13);
  REQUIRE(serialize_disc(trained.disc) != serialize_disc(fresh));
}

TEST_CASE("cotrain: step accounting is exact with fixed-length episodes") {
  // Threshold 1.0 forces every episode to the 25-action cap, so each
  // 100-step iteration is exactly 4 episodes and the running step counter
  // hits 100, 200 precisely.
  CotrainConfig cfg;
  cfg.max_total_steps = 200;
  cfg.disc_epochs = 1;
  cfg.explorer_steps_per_iteration = 100;
  cfg.buffer_capacity = 1000;
  cfg.initial_episodes = 2;
  cfg.threshold = 1.0;
  const EnvConfig env_cfg = tiny_env(25);
  const auto objects = tiny_objects(2);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::RandomWalk, DiscriminatorConfig{},
                                    PPOConfig{}, cfg, ICPConfig{}, 5);
  REQUIRE(out.log.size() == 2);
  CHECK(out.log[0].iteration == 1);
  CHECK(out.log[0].total_steps == 100);
  CHECK(out.log[1].iteration == 2);
  CHECK(out.log[1].total_steps == 200);
  CHECK(out.total_steps == 200);
  CHECK(out.log[1].mean_actions_100 == 25.0);
  // Buffer: initial 2 episodes (50 pushes) + 200 collection pushes.
  CHECK(out.buffer.size() == 250);
  CHECK(out.log[0].buffer_size == 150);
  CHECK(out.log[1].buffer_size == 250);
}

TEST_CASE("cotrain: learned-policy run trains both networks") {
  CotrainConfig cfg;
  cfg.max_total_steps = 600;
  cfg.disc_epochs = 1;
  cfg.explorer_steps_per_iteration = 300;
  cfg.buffer_capacity = 2000;
  cfg.initial_episodes = 3;
  cfg.threshold = 0.98;
  PPOConfig ppo;
  ppo.horizon = 128;
  ppo.epochs = 2;
  ppo.minibatch = 64;
  const EnvConfig env_cfg = tiny_env(30);
  const auto objects = tiny_objects(3);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::Ppo, DiscriminatorConfig{}, ppo,
                                    cfg, ICPConfig{}, 9);
  REQUIRE(out.has_actor);
  REQUIRE(out.log.size() == 2);
  CHECK(out.total_steps >= 600);
  for (const IterationStats& s : out.log) {
    CHECK(std::isfinite(s.disc_loss));
    CHECK(s.disc_loss > 0.0);
    CHECK(std::isfinite(s.policy_entropy));
    CHECK(s.mean_actions_100 > 0.0);
  }
  // The actor moved away from its random initialization.
  ActorCritic<float> fresh(kMoveActionCount, env_cfg.grid_cells(), env_cfg.grid_cells(),
                           ppo.learning_rate, derive_seed(9, 0x6163746f72ULL));
  REQUIRE(serialize_actor(out.actor) != serialize_actor(fresh));
}

TEST_CASE("cotrain: all-in-one trains no classifier and keeps no buffer") {
  CotrainConfig cfg;
  cfg.max_total_steps = 300;
  cfg.disc_epochs = 2;  // ignored: there is no classifier to train
  cfg.explorer_steps_per_iteration = 150;
  cfg.buffer_capacity = 500;
  cfg.initial_episodes = 5;  // ignored for the same reason
  cfg.threshold = 0.98;
  PPOConfig ppo;
  ppo.horizon = 64;
  ppo.epochs = 1;
  ppo.minibatch = 32;
  const EnvConfig env_cfg = tiny_env(40);
  const auto objects = tiny_objects(3);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::AllInOne, DiscriminatorConfig{},
                                    ppo, cfg, ICPConfig{}, 3);
  REQUIRE(out.has_actor);
  CHECK(out.buffer.size() == 0);
  for (const IterationStats& s : out.log) {
    CHECK(s.disc_loss == 0.0);
    CHECK(s.buffer_size == 0);
  }
  // Prediction actions terminate episodes, so mean episode length can be
  // well under the cap even untrained (uniform policy predicts quickly).
  CHECK(out.log.back().mean_actions_100 < 40.0);
  CHECK(out.total_steps >= 300);
}

TEST_CASE("cotrain: matcher-judged learned run skips classifier phases") {
  CotrainConfig cfg;
  cfg.max_total_steps = 120;
  cfg.disc_epochs = 2;
  cfg.explorer_steps_per_iteration = 60;
  cfg.buffer_capacity = 500;
  cfg.initial_episodes = 4;
  cfg.threshold = 0.98;
  PPOConfig ppo;
  ppo.horizon = 64;
  ppo.epochs = 1;
  ppo.minibatch = 32;
  const EnvConfig env_cfg = tiny_env(30);
  const auto objects = tiny_objects(2);
  CotrainOutcome out = cotrain_loop(env_cfg, objects, Method::PpoIcp, DiscriminatorConfig{}, ppo,
                                    cfg, ICPConfig{}, 21);
  REQUIRE(out.has_actor);
  CHECK(out.buffer.size() == 0);
  for (const IterationStats& s : out.log) CHECK(s.disc_loss == 0.0);
  CHECK(out.total_steps >= 120);
}

TEST_CASE("cotrain: numeric blow-up dumps a crash checkpoint before rethrowing") {
  const std::string dir = "/tmp/tact_crash_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CotrainConfig cfg;
  cfg.max_total_steps = 400;
  cfg.disc_epochs = 4;
  cfg.explorer_steps_per_iteration = 100;
  cfg.buffer_capacity = 1000;
  cfg.initial_episodes = 4;
  cfg.threshold = 1.0;
  DiscriminatorConfig dc;
  dc.learning_rate = 1e18;  // guarantees the loss explodes within a few batches
  REQUIRE_THROWS_AS(cotrain_loop(tiny_env(25), tiny_objects(3), Method::RandomWalk, dc,
                                 PPOConfig{}, cfg, ICPConfig{}, 17, dir),
                    NumericError);
  REQUIRE(std::filesystem::exists(dir + "/crash_dump.model"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cotrain: rejects the fully non-learned method") {
  CotrainConfig cfg;
  REQUIRE_THROWS_AS(cotrain_loop(tiny_env(10), tiny_objects(2), Method::EdgeIcp,
                                 DiscriminatorConfig{}, PPOConfig{}, cfg, ICPConfig{}, 1),
                    ConfigError);
}

TEST_CASE("model bundle: file round-trip preserves both networks bitwise") {
  DiscriminatorConfig dc;
  ModelBundle bundle;
  bundle.method = "ppo";
  bundle.has_disc = true;
  bundle.disc = Discriminator<float>(4, 24, 24, dc, 31);
  bundle.has_actor = true;
  bundle.actor = ActorCritic<float>(4, 24, 24, 3e-4, 32);
  const std::string path = "/tmp/tact_bundle_test.model";
  bundle.save_file(path);
  ModelBundle back = ModelBundle::load_file(path, dc, 3e-4);
  REQUIRE(back.method == "ppo");
  REQUIRE(back.has_disc);
  REQUIRE(back.has_actor);
  REQUIRE(serialize_disc(back.disc) == serialize_disc(bundle.disc));
  REQUIRE(serialize_actor(back.actor) == serialize_actor(bundle.actor));
  std::remove(path.c_str());

  SECTION("bad magic rejected") {
    std::ostringstream os(std::ios::binary);
    detail::write_string(os, std::string("NOTMAGIC"));
    std::istringstream bad(os.str(), std::ios::binary);
    REQUIRE_THROWS_AS(ModelBundle::load(bad, dc, 3e-4), ConfigError);
  }
  SECTION("truncated stream rejected") {
    std::istringstream bad("garbage");
    REQUIRE_THROWS_AS(ModelBundle::load(bad, dc, 3e-4), DataError);
  }
}

TEST_CASE("cotrain: iteration log CSV has the contract columns") {
  std::vector<IterationStats> log(2);
  log[0] = {1, 100, 0.5, 25.0, 1.2, 150, 0.5, 1.3};
  log[1] = {2, 200, 0.75, 20.0, 0.9, 250, 0.75, 1.1};
  const std::string path = "/tmp/tact_iterlog_test.csv";
  write_iteration_csv(path, log, 0xabcdef0123456789ULL);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "# format=1 config=abcdef0123456789");
  std::getline(is, line);
  REQUIRE(line ==
          "iteration,total_steps,success_rate_100,mean_actions_100,disc_loss,buffer_size,"
          "mean_reward_100,policy_entropy");
  int rows = 0;
  while (std::getline(is, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 2);
  std::remove(path.c_str());
}
