// Command-line front end: object-set generation, training, evaluation,
// experiment sweeps, and grid rendering, driven by one INI run config.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tact/harness.hpp"
#include "tact/objects_io.hpp"

namespace {

using namespace tact;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string method;   // empty: use [evaluate].method
  std::string model;    // empty: use [evaluate].model
  std::string out_dir;  // empty: use [evaluate].out_dir
  int trials = -1;      // <0: use [evaluate].n_trials
  int threads = -1;     // <0: use [evaluate].threads
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_eval_opts = true) {
  cmd->add_option("--config,-c", args.config_path, "Run config file (INI)");
  cmd->add_option("--seed,-s", args.seed, "Master seed")->capture_default_str();
  if (with_eval_opts) {
    cmd->add_option("--method,-m", args.method,
                    "Method name (overrides [evaluate].method)");
    cmd->add_option("--model", args.model, "Model file (overrides [evaluate].model)");
    cmd->add_option("--out-dir", args.out_dir, "Output directory (overrides [evaluate].out_dir)");
    cmd->add_option("--trials,-n", args.trials, "Trial count (overrides [evaluate].n_trials)");
    cmd->add_option("--threads,-j", args.threads, "Worker threads (overrides [evaluate].threads)");
  }
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  if (!args.method.empty()) cfg.evaluate.method = args.method;
  if (!args.model.empty()) cfg.evaluate.model = args.model;
  if (!args.out_dir.empty()) cfg.evaluate.out_dir = args.out_dir;
  if (args.trials >= 0) cfg.evaluate.n_trials = args.trials;
  if (args.threads >= 0) cfg.evaluate.threads = args.threads;
  cfg.validate();
  return cfg;
}

std::vector<Polygon> load_objects(const RunConfig& cfg) {
  const ObjectSet set = read_object_set(cfg.objects.file);
  return set.objects;
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

CotrainConfig make_cotrain_config(const RunConfig& cfg) {
  CotrainConfig cc;
  cc.max_total_steps = cfg.cotrain.max_total_steps;
  cc.disc_epochs = cfg.cotrain.disc_epochs;
  cc.explorer_steps_per_iteration = cfg.cotrain.explorer_steps_per_iteration;
  cc.buffer_capacity = static_cast<std::size_t>(cfg.cotrain.buffer_capacity);
  cc.initial_episodes = cfg.cotrain.initial_episodes;
  cc.noise_rate = cfg.env.sensor_failure_rate;
  cc.threshold = cfg.discriminator.confidence_threshold;
  cc.validate();
  return cc;
}

std::string default_model_path(const RunConfig& cfg, Method m) {
  return cfg.evaluate.out_dir + "/" + method_name(m) + ".model";
}

// A method needs a trained artifact for everything except the fully
// non-learned contour-following + matcher pipeline.
bool needs_model(Method m) { return m != Method::EdgeIcp; }

// Loads the trained components and assembles the evaluation context. The
// boundary models and bundle live in the returned holder, which must outlive
// any use of the context.
struct ContextHolder {
  ModelBundle bundle;
  std::vector<BoundaryModel> icp_models;
  ICPConfig icp_cfg;
  MethodContext ctx;
};

ContextHolder make_context(const RunConfig& cfg, Method m,
                           const std::vector<Polygon>& objects) {
  ContextHolder holder;
  holder.ctx.method = m;
  holder.ctx.threshold = cfg.discriminator.confidence_threshold;
  holder.ctx.greedy = cfg.evaluate.greedy;
  if (method_uses_icp(m)) {
    holder.icp_models = make_boundary_models(objects, holder.icp_cfg.boundary_spacing);
    holder.ctx.icp_models = &holder.icp_models;
    holder.ctx.icp_cfg = holder.icp_cfg;
  }
  if (needs_model(m)) {
    const std::string path =
        cfg.evaluate.model.empty() ? default_model_path(cfg, m) : cfg.evaluate.model;
    holder.bundle = ModelBundle::load_file(path, cfg.discriminator, cfg.explorer.learning_rate);
    if (holder.bundle.method != method_name(m)) {
      throw ConfigError("model file was trained for method '" + holder.bundle.method +
                        "', not '" + method_name(m) + "'");
    }
    if (holder.bundle.has_disc) holder.ctx.disc = &holder.bundle.disc;
    if (holder.bundle.has_actor) holder.ctx.actor = &holder.bundle.actor;
  }
  holder.ctx.validate();
  return holder;
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::cout << label << ": trials=" << m.trials << " success=" << m.success_rate
            << " actions=" << m.actions_mean << "+-" << m.actions_std
            << " explored=" << m.explored_mean << "+-" << m.explored_std
            << " ear=" << m.ear_mean << "+-" << m.ear_std << "\n";
}

int cmd_generate_objects(const CommonArgs& args, const std::string& out_override) {
  const RunConfig cfg = load_config(args);
  const ObjectSet set = generate_object_set(cfg.objects.count, cfg.objects.max_edges,
                                            cfg.objects.max_radius_m, args.seed);
  const std::string path = out_override.empty() ? cfg.objects.file : out_override;
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_object_set(path, set);
  std::cout << "wrote " << set.objects.size() << " objects to " << path << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const Method m = parse_method(cfg.evaluate.method);
  if (m == Method::EdgeIcp) {
    std::cout << "edge_icp has no trainable components; nothing to do\n";
    return 0;
  }
  const std::vector<Polygon> objects = load_objects(cfg);
  const CotrainConfig cc = make_cotrain_config(cfg);
  ensure_dir(cfg.evaluate.out_dir);
  ensure_dir(cfg.cotrain.checkpoint_dir);
  const CotrainOutcome outcome =
      cotrain_loop(cfg.env, objects, m, cfg.discriminator, cfg.explorer, cc, ICPConfig{},
                   args.seed, cfg.cotrain.checkpoint_dir, &std::cout);
  ModelBundle bundle;
  bundle.method = method_name(m);
  bundle.has_disc = m != Method::PpoIcp && m != Method::AllInOne;
  if (bundle.has_disc) bundle.disc = outcome.disc;
  bundle.has_actor = outcome.has_actor;
  if (outcome.has_actor) bundle.actor = outcome.actor;
  const std::string model_path =
      cfg.evaluate.model.empty() ? default_model_path(cfg, m) : cfg.evaluate.model;
  bundle.save_file(model_path);
  const std::string log_path =
      cfg.evaluate.out_dir + "/train_" + method_name(m) + ".csv";
  write_iteration_csv(log_path, outcome.log, cfg.hash());
  std::cout << "trained " << method_name(m) << " for " << outcome.total_steps
            << " steps; model: " << model_path << "; log: " << log_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const Method m = parse_method(cfg.evaluate.method);
  const std::vector<Polygon> objects = load_objects(cfg);
  const ContextHolder holder = make_context(cfg, m, objects);
  const EvaluateResult result = evaluate(cfg.env, objects, holder.ctx, cfg.evaluate.n_trials,
                                         args.seed, cfg.evaluate.threads);
  ensure_dir(cfg.evaluate.out_dir);
  const std::string trials_path =
      cfg.evaluate.out_dir + "/trials_" + method_name(m) + ".csv";
  const std::string metrics_path =
      cfg.evaluate.out_dir + "/metrics_" + method_name(m) + ".csv";
  write_trials_csv(trials_path, result.records, cfg.hash());
  write_metrics_csv(metrics_path,
                    {{method_name(m), cfg.env.sensor_failure_rate,
                      cfg.discriminator.confidence_threshold, result.metrics}},
                    cfg.hash());
  print_metrics(method_name(m), result.metrics);
  std::cout << "trials: " << trials_path << "\nmetrics: " << metrics_path << "\n";
  return 0;
}

int cmd_sweep_noise(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const Method m = parse_method(cfg.evaluate.method);
  const std::vector<Polygon> objects = load_objects(cfg);
  const ContextHolder holder = make_context(cfg, m, objects);
  const NoiseSweepResult sweep =
      noise_sweep(cfg.env, objects, holder.ctx, cfg.evaluate.n_trials, args.seed,
                  cfg.evaluate.noise_rates, cfg.evaluate.threads);
  ensure_dir(cfg.evaluate.out_dir);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < sweep.rates.size(); ++i) {
    rows.push_back({method_name(m), sweep.rates[i], cfg.discriminator.confidence_threshold,
                    sweep.metrics[i]});
    const std::string trials_path = cfg.evaluate.out_dir + "/trials_" + method_name(m) +
                                    "_rate" + std::to_string(i) + ".csv";
    write_trials_csv(trials_path, sweep.records[i], cfg.hash());
    std::ostringstream label;
    label << method_name(m) << " @ rate " << sweep.rates[i];
    print_metrics(label.str(), sweep.metrics[i]);
  }
  const std::string metrics_path =
      cfg.evaluate.out_dir + "/noise_sweep_" + method_name(m) + ".csv";
  write_metrics_csv(metrics_path, rows, cfg.hash());
  std::cout << "metrics: " << metrics_path << "\n";
  return 0;
}

int cmd_sweep_threshold(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const Method m = parse_method(cfg.evaluate.method);
  if (m == Method::EdgeIcp) {
    throw ConfigError("sweep-threshold trains per threshold; edge_icp has nothing to train");
  }
  const std::vector<Polygon> objects = load_objects(cfg);
  const CotrainConfig cc = make_cotrain_config(cfg);
  const std::vector<ThresholdRunResult> results = threshold_sweep(
      cfg.env, objects, m, cfg.discriminator, cfg.explorer, cc, ICPConfig{},
      cfg.evaluate.thresholds, cfg.evaluate.n_trials, args.seed, cfg.evaluate.threads,
      &std::cout);
  ensure_dir(cfg.evaluate.out_dir);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ThresholdRunResult& r = results[i];
    rows.push_back({method_name(m), cfg.env.sensor_failure_rate, r.threshold, r.metrics});
    write_iteration_csv(cfg.evaluate.out_dir + "/train_" + method_name(m) + "_threshold" +
                            std::to_string(i) + ".csv",
                        r.log, cfg.hash());
    write_trials_csv(cfg.evaluate.out_dir + "/trials_" + method_name(m) + "_threshold" +
                         std::to_string(i) + ".csv",
                     r.records, cfg.hash());
    std::ostringstream label;
    label << method_name(m) << " @ threshold " << r.threshold;
    print_metrics(label.str(), r.metrics);
  }
  const std::string metrics_path =
      cfg.evaluate.out_dir + "/threshold_sweep_" + method_name(m) + ".csv";
  write_metrics_csv(metrics_path, rows, cfg.hash());
  std::cout << "metrics: " << metrics_path << "\n";
  return 0;
}

int cmd_render(const CommonArgs& args, int object, const std::string& out_override) {
  const RunConfig cfg = load_config(args);
  const Method m = parse_method(cfg.evaluate.method);
  const std::vector<Polygon> objects = load_objects(cfg);
  if (object < 0 || object >= static_cast<int>(objects.size())) {
    throw ConfigError("render: object index out of range");
  }
  const ContextHolder holder = make_context(cfg, m, objects);
  // Build the single-trial machinery exactly like one evaluation worker.
  TactileEnv env(cfg.env, objects);
  std::optional<Discriminator<float>> disc;
  if (holder.ctx.disc) disc.emplace(*holder.ctx.disc);
  std::optional<ActorCritic<float>> actor;
  if (holder.ctx.actor) actor.emplace(*holder.ctx.actor);
  std::optional<IcpPredictor> icp;
  if (method_uses_icp(m)) icp.emplace(holder.ctx.icp_models, holder.ctx.icp_cfg, cfg.env.cell_size);
  EpisodePolicy policy(m, actor ? &*actor : nullptr, disc ? &*disc : nullptr,
                       cfg.env.grid_cells(), cfg.env.grid_cells(), holder.ctx.greedy);
  TerminationJudge judge;
  if (holder.ctx.uses_cnn_judge()) {
    judge = TerminationJudge(&*disc, holder.ctx.threshold);
  } else if (icp) {
    judge = TerminationJudge(&*icp, holder.ctx.threshold);
  }
  const TrialRecord rec = run_trial(env, object, derive_seed(args.seed, 0), policy, judge);
  ensure_dir(cfg.evaluate.out_dir);
  const std::string path = out_override.empty()
                               ? cfg.evaluate.out_dir + "/render_" + method_name(m) + "_object" +
                                     std::to_string(object) + ".pgm"
                               : out_override;
  write_text_atomic(path, render_pgm(env.encoder(), env.finger()));
  std::cout << "object " << rec.object_id << ": actions=" << rec.actions
            << " explored=" << rec.explored << " predicted=" << rec.predicted
            << " correct=" << (rec.correct ? "yes" : "no")
            << " termination=" << termination_name(rec.termination) << "\n"
            << "render: " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile exploration and recognition workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, noise_args, thresh_args, render_args;
  std::string gen_out, render_out;
  int render_object = 0;

  CLI::App* gen = app.add_subcommand("generate-objects", "Generate a random object set (JSON)");
  add_common(gen, gen_args, /*with_eval_opts=*/false);
  gen->add_option("--out", gen_out, "Output path (overrides [objects].file)");

  CLI::App* train = app.add_subcommand("train", "Co-train classifier and exploration policy");
  add_common(train, train_args);

  CLI::App* eval = app.add_subcommand("evaluate", "Run seeded evaluation trials");
  add_common(eval, eval_args);

  CLI::App* noise = app.add_subcommand("sweep-noise", "Evaluate across sensor failure rates");
  add_common(noise, noise_args);

  CLI::App* thresh = app.add_subcommand(
      "sweep-threshold", "Train and evaluate across termination thresholds");
  add_common(thresh, thresh_args);

  CLI::App* render = app.add_subcommand("render", "Run one trial and write the grid as PGM");
  add_common(render, render_args);
  render->add_option("--object", render_object, "Object index to probe")->capture_default_str();
  render->add_option("--out", render_out, "Output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate_objects(gen_args, gen_out);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_evaluate(eval_args);
    if (noise->parsed()) return cmd_sweep_noise(noise_args);
    if (thresh->parsed()) return cmd_sweep_threshold(thresh_args);
    if (render->parsed()) return cmd_render(render_args, render_object, render_out);
  } catch (const tact::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tact::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
