#include <chrono>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stlkit/pipeline.hpp"
#include "stlkit/version.hpp"

using namespace stlkit;

namespace {

std::string join_args(int argc, char** argv) {
  std::ostringstream os;
  for (int i = 0; i < argc; ++i) {
    if (i) os << ' ';
    os << argv[i];
  }
  return os.str();
}

class WallClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

PoolKind pool_from_name(const std::string& name) {
  if (name == "max") return PoolKind::max;
  if (name == "avg") return PoolKind::avg;
  throw ConfigError("unknown pool '" + name + "' (expected max or avg)");
}

struct GenFlags {
  GenSpec spec;
  std::string out;
  int canvas = 64;
  std::string shape = "blob";

  void attach(CLI::App* cmd) {
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--n", spec.n_samples, "number of samples")->required();
    cmd->add_option("--seed", spec.seed, "generation seed")->required();
    cmd->add_option("--canvas", canvas, "square canvas size (default 64)");
    cmd->add_option("--positive-fraction", spec.positive_fraction,
                    "fraction of positive samples (default 0.5)");
    cmd->add_option("--shape", shape, "target shape: blob|bar|ring");
    cmd->add_option("--target-min", spec.target_min, "min target extent (px)");
    cmd->add_option("--target-max", spec.target_max, "max target extent (px)");
    cmd->add_option("--distractors-min", spec.distractors_min,
                    "min distractor count");
    cmd->add_option("--distractors-max", spec.distractors_max,
                    "max distractor count");
    cmd->add_option("--noise-std", spec.noise_std, "background noise std");
    cmd->add_option("--background", spec.background_level, "background level");
    cmd->add_option("--target-intensity-lo", spec.target_intensity_lo,
                    "target intensity low bound");
    cmd->add_option("--target-intensity-hi", spec.target_intensity_hi,
                    "target intensity high bound");
    cmd->add_option("--distractor-intensity-lo", spec.distractor_intensity_lo,
                    "distractor intensity low bound");
    cmd->add_option("--distractor-intensity-hi", spec.distractor_intensity_hi,
                    "distractor intensity high bound");
    cmd->set_config("--config");
  }

  GenSpec resolve() {
    spec.canvas_h = canvas;
    spec.canvas_w = canvas;
    spec.target_shape = target_shape_from_name(shape);
    validate_genspec(spec);
    return spec;
  }
};

struct TrainFlags {
  TrainOptions opts;
  std::string pool = "avg";
  std::string mode = "stl";
  std::string init = "gaussian";
  bool alpha_ramp = false;
  bool wd_grid = false;
  bool no_deterministic = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--manifest", opts.manifest_path, "training manifest")->required();
    cmd->add_option("--out", opts.out_dir, "output directory")->required();
    cmd->add_option("--preset", opts.preset,
                    "network preset: desk|paper|alexnet-conv (default desk)");
    cmd->add_option("--net-config", opts.config_file,
                    "network config file (overrides --preset)");
    cmd->add_option("--pool", pool, "localizer pooling: max|avg (default avg)");
    cmd->add_option("--mode", mode,
                    "stl|cls-only|loc-only (cls-only pins alpha=0, loc-only "
                    "pins alpha=1)");
    cmd->add_option("--epochs", opts.train.epochs, "training epochs (default 90)");
    cmd->add_option("--batch", opts.train.batch_size, "minibatch size (default 64)");
    cmd->add_option("--lr", opts.train.base_lr, "initial learning rate (default 0.01)");
    cmd->add_option("--lr-halve-every", opts.train.lr_halving_period,
                    "halve the learning rate every N epochs (default 30)");
    cmd->add_option("--momentum", opts.train.momentum, "SGD momentum (default 0.9)");
    cmd->add_option("--wd", opts.train.weight_decay, "weight decay (default 5e-4)");
    cmd->add_flag("--wd-grid", wd_grid,
                  "grid-search weight decay over {1e-3, 5e-4, 1e-4}");
    cmd->add_option("--alpha-init", opts.train.alpha_schedule.initial_alpha,
                    "initial localizer loss weight (default 0.1)");
    cmd->add_option("--alpha-final", opts.train.alpha_schedule.final_alpha,
                    "final localizer loss weight (default 0.9)");
    cmd->add_option("--alpha-switch", opts.train.alpha_schedule.switch_epoch,
                    "epoch at which alpha switches (default 60)");
    cmd->add_flag("--alpha-ramp", alpha_ramp,
                  "ramp alpha linearly up to the switch epoch instead of stepping");
    cmd->add_option("--split", opts.train.split_ratio,
                    "train fraction of the 80/20-style split (default 0.8)");
    cmd->add_option("--seed", opts.train.seed, "training seed (default 0)");
    cmd->add_flag("--no-deterministic", no_deterministic,
                  "drop the determinism guarantee (same code path)");
    cmd->add_option("--init", init,
                    "weight init: gaussian|fan-in (default gaussian, std 0.01)");
    cmd->add_option("--init-std", opts.train.init.gaussian_std,
                    "gaussian init std (default 0.01)");
    cmd->add_option("--input-scale", opts.input_scale,
                    "override the network input scale");
    cmd->set_config("--config");
  }

  TrainOptions resolve() {
    if (init == "fan-in") {
      opts.train.init.fan_in_scaled = true;
    } else if (init != "gaussian") {
      throw ConfigError("--init must be gaussian or fan-in");
    }
    opts.pool = pool_from_name(pool);
    opts.train.mode = train_mode_from_name(mode);
    opts.train.alpha_schedule.mode = alpha_ramp ? AlphaSchedule::Mode::ramp
                                                : AlphaSchedule::Mode::step;
    opts.train.deterministic = !no_deterministic;
    return opts;
  }
};

nlohmann::json train_config_json(const TrainOptions& opts) {
  nlohmann::json j;
  j["preset"] = opts.config_file.empty() ? opts.preset : opts.config_file;
  j["pool"] = opts.pool == PoolKind::max ? "max" : "avg";
  j["mode"] = train_mode_name(opts.train.mode);
  j["epochs"] = opts.train.epochs;
  j["batch"] = opts.train.batch_size;
  j["lr"] = opts.train.base_lr;
  j["lr_halve_every"] = opts.train.lr_halving_period;
  j["momentum"] = opts.train.momentum;
  j["weight_decay"] = opts.train.weight_decay;
  j["alpha_init"] = opts.train.alpha_schedule.initial_alpha;
  j["alpha_final"] = opts.train.alpha_schedule.final_alpha;
  j["alpha_switch"] = opts.train.alpha_schedule.switch_epoch;
  j["alpha_ramp"] = opts.train.alpha_schedule.mode == AlphaSchedule::Mode::ramp;
  j["split"] = opts.train.split_ratio;
  j["seed"] = opts.train.seed;
  j["deterministic"] = opts.train.deterministic;
  j["init"] = opts.train.init.fan_in_scaled ? "fan-in" : "gaussian";
  j["init_std"] = opts.train.init.gaussian_std;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stl: weakly supervised localization via self-transfer learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  const std::string command_line = join_args(argc, argv);

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  GenFlags gen_flags;
  gen_flags.attach(gen_cmd);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
  TrainFlags train_flags;
  train_flags.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  EvalRunOptions eval_opts;
  std::string tol_metric = "per-axis";
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint_path)->required();
  eval_cmd->add_option("--manifest", eval_opts.manifest_path)->required();
  eval_cmd->add_option("--out", eval_opts.out_dir)->required();
  eval_cmd->add_option("--tolerance", eval_opts.tolerance_px,
                       "peak tolerance in px (default: global stride / 2)");
  eval_cmd->add_option("--tolerance-metric", tol_metric,
                       "per-axis|euclidean (default per-axis)");
  eval_cmd->set_config("--config");

  // export-maps
  auto* export_cmd =
      app.add_subcommand("export-maps", "export positive-class score maps");
  ExportMapsOptions export_opts;
  std::string ids_arg;
  export_cmd->add_option("--checkpoint", export_opts.checkpoint_path)->required();
  export_cmd->add_option("--manifest", export_opts.manifest_path)->required();
  export_cmd->add_option("--ids", ids_arg, "comma-separated sample ids")->required();
  export_cmd->add_option("--out", export_opts.out_dir)->required();

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string grad_preset = "desk", grad_config, grad_pool = "avg";
  std::string grad_relu = "input_gate";
  GradCheckOptions grad_opts;
  double grad_threshold = 1e-4;
  grad_cmd->add_option("--preset", grad_preset);
  grad_cmd->add_option("--net-config", grad_config);
  grad_cmd->add_option("--pool", grad_pool);
  grad_cmd->add_option("--alpha", grad_opts.alpha, "loss weight (default 0.5)");
  grad_cmd->add_option("--eps", grad_opts.epsilon, "FD epsilon (default 1e-5)");
  grad_cmd->add_option("--subsample", grad_opts.subsample_fraction,
                       "fraction of elements checked per tensor (default 1)");
  grad_cmd->add_option("--seed", grad_opts.seed);
  grad_cmd->add_option("--batch", grad_opts.batch);
  grad_cmd->add_option("--threshold", grad_threshold,
                       "max relative error allowed (default 1e-4)");
  grad_cmd->add_option("--relu-backward", grad_relu, "input_gate|clamp_sum");

  // inspect
  auto* inspect_cmd =
      app.add_subcommand("inspect", "print stride / receptive field / map dims");
  std::string inspect_preset = "desk", inspect_config, inspect_pool = "avg";
  int inspect_input = 0;
  inspect_cmd->add_option("--preset", inspect_preset);
  inspect_cmd->add_option("--net-config", inspect_config);
  inspect_cmd->add_option("--pool", inspect_pool);
  inspect_cmd->add_option("--input", inspect_input,
                          "square input size (default: preset input)");

  // import
  auto* import_cmd =
      app.add_subcommand("import", "import a directory of PGM images");
  std::string import_dir, import_labels, import_boxes, import_out;
  int import_canvas = 64;
  import_cmd->add_option("--dir", import_dir)->required();
  import_cmd->add_option("--labels", import_labels, "csv: filename,label")->required();
  import_cmd->add_option("--boxes", import_boxes, "csv: filename,x0,y0,x1,y1");
  import_cmd->add_option("--canvas", import_canvas);
  import_cmd->add_option("--out", import_out)->required();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "comparative benchmark suites");
  std::string suite;
  Table1Options bench;
  int bench_canvas = 64;
  bench_cmd->add_option("--suite", suite, "suite name (table1)")->required();
  bench_cmd->add_option("--out", bench.out_dir)->required();
  bench_cmd->add_option("--seeds", bench.seeds, "number of repetitions (default 5)");
  bench_cmd->add_option("--seed", bench.base_seed, "base seed");
  bench_cmd->add_option("--n-train", bench.n_train);
  bench_cmd->add_option("--n-test", bench.n_test);
  bench_cmd->add_option("--canvas", bench_canvas);
  bench.train.epochs = 24;
  bench.train.alpha_schedule.switch_epoch = 12;
  bench.train.init.fan_in_scaled = true;
  std::string bench_init = "fan-in";
  bench_cmd->add_option("--init", bench_init, "weight init: gaussian|fan-in");
  bench_cmd->add_option("--input-scale", bench.input_scale,
                        "network input scale (default 1)");
  bench_cmd->add_option("--epochs", bench.train.epochs, "epochs per run");
  bench_cmd->add_option("--alpha-switch", bench.train.alpha_schedule.switch_epoch);
  bench_cmd->add_option("--lr", bench.train.base_lr);
  bench_cmd->add_option("--batch", bench.train.batch_size);
  bench_cmd->add_option("--wd", bench.train.weight_decay);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  WallClock clock;
  try {
    if (app.got_subcommand(gen_cmd)) {
      const GenSpec spec = gen_flags.resolve();
      const GenRunSummary summary = run_generate(spec, gen_flags.out);
      nlohmann::json j;
      j["n"] = spec.n_samples;
      j["canvas"] = spec.canvas_h;
      j["positive_fraction"] = spec.positive_fraction;
      j["shape"] = target_shape_name(spec.target_shape);
      write_run_manifest(gen_flags.out,
                         {command_line, j.dump(), spec.seed,
                          {summary.manifest_path}, clock.seconds()});
      std::cout << "wrote " << summary.manifest_path << " (" << summary.n_samples
                << " samples, " << summary.n_positive << " positive)\n";
      return 0;
    }

    if (app.got_subcommand(train_cmd)) {
      const TrainOptions opts = train_flags.resolve();
      TrainRunSummary summary;
      if (train_flags.wd_grid) {
        summary = run_train_wd_grid(opts, {1e-3, 5e-4, 1e-4});
      } else {
        summary = run_train(opts);
      }
      nlohmann::json j = train_config_json(opts);
      j["chosen_weight_decay"] = summary.chosen_weight_decay;
      write_run_manifest(opts.out_dir,
                         {command_line, j.dump(), opts.train.seed,
                          {summary.checkpoint_path, summary.log_path},
                          clock.seconds()});
      if (summary.diverged) {
        std::cerr << "training diverged: " << summary.message
                  << " (last good checkpoint retained)\n";
        return 3;
      }
      std::cout << "best epoch " << summary.best_epoch << " val_acc "
                << summary.best_val_acc << "\nwrote " << summary.checkpoint_path
                << "\n";
      return 0;
    }

    if (app.got_subcommand(eval_cmd)) {
      eval_opts.metric = tol_metric == "euclidean" ? ToleranceMetric::euclidean
                                                   : ToleranceMetric::per_axis;
      if (tol_metric != "euclidean" && tol_metric != "per-axis") {
        throw ConfigError("--tolerance-metric must be per-axis or euclidean");
      }
      const EvalRunSummary summary = run_eval(eval_opts);
      if (summary.loc_omitted) {
        std::cerr << "warning: manifest has no ground-truth boxes; "
                     "localization section omitted\n";
      }
      nlohmann::json j;
      j["tolerance_px"] = summary.report.tolerance_px;
      j["tolerance_metric"] = tol_metric;
      std::vector<std::string> artifacts{summary.report_path,
                                         summary.pr_cls_path};
      if (!summary.pr_loc_path.empty()) artifacts.push_back(summary.pr_loc_path);
      write_run_manifest(eval_opts.out_dir, {command_line, j.dump(), 0,
                                             artifacts, clock.seconds()});
      std::cout << "accuracy " << summary.report.cls.accuracy << " auc "
                << (summary.report.cls.auc ? std::to_string(*summary.report.cls.auc)
                                           : "nan")
                << " ap_pos " << summary.report.cls.ap_pos << " ap_neg "
                << summary.report.cls.ap_neg << " loc_ap "
                << (summary.report.loc ? std::to_string(summary.report.loc->loc_ap)
                                       : "nan")
                << "\n";
      return 0;
    }

    if (app.got_subcommand(export_cmd)) {
      std::istringstream is(ids_arg);
      std::string id;
      while (std::getline(is, id, ',')) {
        if (!id.empty()) export_opts.ids.push_back(id);
      }
      if (export_opts.ids.empty()) throw InputError("--ids lists no sample ids");
      const ExportMapsSummary summary = run_export_maps(export_opts);
      std::vector<std::string> artifacts = summary.pgm_paths;
      artifacts.insert(artifacts.end(), summary.csv_paths.begin(),
                       summary.csv_paths.end());
      write_run_manifest(export_opts.out_dir,
                         {command_line, "", 0, artifacts, clock.seconds()});
      std::cout << "exported " << summary.pgm_paths.size() << " maps\n";
      return 0;
    }

    if (app.got_subcommand(grad_cmd)) {
      NetworkConfig config = grad_config.empty()
                                 ? preset_by_name(grad_preset,
                                                  pool_from_name(grad_pool))
                                 : load_config_file(grad_config);
      if (grad_relu == "clamp_sum") {
        config.relu_backward = nn::ReluBackwardMode::clamp_sum;
      } else if (grad_relu != "input_gate") {
        throw ConfigError("--relu-backward must be input_gate or clamp_sum");
      }
      const GradCheckReport report = gradient_check(config, grad_opts);
      for (const auto& p : report.params) {
        std::cout << "param " << p.name << " checked " << p.checked
                  << " excluded " << p.excluded << " max_rel_err "
                  << p.max_rel_err << "\n";
      }
      std::cout << "max_rel_err " << report.max_rel_err << "\n";
      if (!report.passes(grad_threshold)) {
        std::cerr << "gradient check failed: " << report.max_rel_err
                  << " >= " << grad_threshold << "\n";
        return 3;
      }
      return 0;
    }

    if (app.got_subcommand(inspect_cmd)) {
      const NetworkConfig config =
          inspect_config.empty()
              ? preset_by_name(inspect_preset, pool_from_name(inspect_pool))
              : load_config_file(inspect_config);
      const int in_h = inspect_input > 0 ? inspect_input : config.input_h;
      const int in_w = inspect_input > 0 ? inspect_input : config.input_w;
      const Geometry g = geometry(config);
      const auto [mh, mw] = score_map_dims(config, in_h, in_w);
      std::cout << "name " << config.name << "\n";
      std::cout << "input " << in_h << ' ' << in_w << "\n";
      std::cout << "global_stride " << g.global_stride << "\n";
      std::cout << "receptive_field " << g.rf_h << ' ' << g.rf_w << "\n";
      std::cout << "map_dims " << mh << ' ' << mw << "\n";
      std::cout << "classes " << config.num_classes << "\n";
      return 0;
    }

    if (app.got_subcommand(import_cmd)) {
      const ImportResult result =
          import_directory(import_dir, import_labels, import_boxes,
                           import_canvas, import_canvas, import_out);
      for (const auto& sk : result.skipped) {
        std::cerr << "warning: skipped " << sk << "\n";
      }
      nlohmann::json j;
      j["canvas"] = import_canvas;
      j["imported"] = result.imported;
      j["skipped"] = result.skipped.size();
      write_run_manifest(import_out,
                         {command_line, j.dump(), 0,
                          {result.manifest_path, result.report_path},
                          clock.seconds()});
      std::cout << "imported " << result.imported << " images ("
                << result.skipped.size() << " skipped)\n";
      return 0;
    }

    if (app.got_subcommand(bench_cmd)) {
      if (suite != "table1") {
        throw ConfigError("unknown suite '" + suite + "' (expected table1)");
      }
      bench.train.init.fan_in_scaled = bench_init == "fan-in";
      bench.gen.canvas_h = bench_canvas;
      bench.gen.canvas_w = bench_canvas;
      const Table1Result result = run_table1(bench);
      nlohmann::json j;
      j["suite"] = suite;
      j["seeds"] = bench.seeds;
      j["n_train"] = bench.n_train;
      j["n_test"] = bench.n_test;
      j["epochs"] = bench.train.epochs;
      write_run_manifest(bench.out_dir,
                         {command_line, j.dump(), bench.base_seed,
                          {result.runs_csv_path, result.summary_csv_path},
                          clock.seconds()});
      std::cout << "variant,accuracy,auc,ap_pos,ap_neg,loc_ap\n";
      for (const auto& s : result.medians) {
        std::cout << s.variant << ',' << s.accuracy << ',' << s.auc << ','
                  << s.ap_pos << ',' << s.ap_neg << ',' << s.loc_ap << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
