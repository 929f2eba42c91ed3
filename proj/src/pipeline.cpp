#include "stlkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "stlkit/pgm.hpp"
#include "stlkit/version.hpp"

namespace fs = std::filesystem;

namespace stlkit {

void write_run_manifest(const std::string& out_dir, const RunManifestInfo& info) {
  nlohmann::json j;
  j["command_line"] = info.command_line;
  j["seed"] = info.seed;
  j["artifacts"] = info.artifacts;
  j["wall_seconds"] = info.wall_seconds;
  j["version"] = kVersion;
  if (!info.config_json.empty()) {
    j["resolved_config"] = nlohmann::json::parse(info.config_json);
  }
  fs::create_directories(out_dir);
  const fs::path tmp = fs::path(out_dir) / ".run_manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write run manifest in " + out_dir);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, fs::path(out_dir) / "run_manifest.json");
}

GenRunSummary run_generate(const GenSpec& spec, const std::string& out_dir) {
  GenResult res = generate(spec, out_dir);
  GenRunSummary summary;
  summary.manifest_path = res.manifest_path;
  summary.n_samples = static_cast<int>(res.dataset.samples.size());
  for (const auto& s : res.dataset.samples) summary.n_positive += s.label == 1;
  return summary;
}

namespace {

NetworkConfig resolve_config(const std::string& preset,
                             const std::string& config_file, PoolKind pool) {
  if (!config_file.empty()) return load_config_file(config_file);
  return preset_by_name(preset, pool);
}

}  // namespace

TrainRunSummary run_train(const TrainOptions& opts) {
  NetworkConfig config =
      resolve_config(opts.preset, opts.config_file, opts.pool);
  if (opts.input_scale > 0.0) config.input_scale = opts.input_scale;
  const Dataset dataset = load_manifest(opts.manifest_path, LoadMode::train);
  TrainResult result = train(config, opts.train, dataset);

  fs::create_directories(opts.out_dir);
  TrainRunSummary summary;
  summary.checkpoint_path = (fs::path(opts.out_dir) / "checkpoint.stlw").string();
  summary.log_path = (fs::path(opts.out_dir) / "train_log.csv").string();
  save_checkpoint(summary.checkpoint_path, result.best);
  write_train_log_csv(summary.log_path, result.log);
  summary.best_epoch = result.best_epoch;
  summary.best_val_acc = result.best.val_accuracy;
  summary.diverged = result.diverged;
  summary.message = result.divergence_message;
  summary.chosen_weight_decay = opts.train.weight_decay;
  return summary;
}

TrainRunSummary run_train_wd_grid(const TrainOptions& opts,
                                  const std::vector<double>& grid) {
  if (grid.empty()) return run_train(opts);
  TrainRunSummary best;
  double best_acc = -1.0;
  for (double wd : grid) {
    TrainOptions candidate = opts;
    candidate.train.weight_decay = wd;
    candidate.out_dir =
        (fs::path(opts.out_dir) / ("wd_" + std::to_string(wd))).string();
    TrainRunSummary summary = run_train(candidate);
    std::cerr << "wd-grid: weight_decay=" << wd
              << " best_val_acc=" << summary.best_val_acc << "\n";
    if (!summary.diverged && summary.best_val_acc > best_acc) {
      best_acc = summary.best_val_acc;
      best = summary;
      best.chosen_weight_decay = wd;
    }
  }
  if (best_acc < 0.0) throw InternalError("wd-grid: every candidate diverged");
  // Promote the winner's artifacts to the requested output directory.
  fs::create_directories(opts.out_dir);
  const auto ckpt = (fs::path(opts.out_dir) / "checkpoint.stlw").string();
  const auto log = (fs::path(opts.out_dir) / "train_log.csv").string();
  fs::copy_file(best.checkpoint_path, ckpt, fs::copy_options::overwrite_existing);
  fs::copy_file(best.log_path, log, fs::copy_options::overwrite_existing);
  best.checkpoint_path = ckpt;
  best.log_path = log;
  return best;
}

EvalRunSummary run_eval(const EvalRunOptions& opts) {
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  const NetworkConfig config = config_from_checkpoint(ckpt);
  const ModelParams<float> params = params_from_checkpoint(ckpt, config);
  const Dataset dataset = load_manifest(opts.manifest_path, LoadMode::eval);

  EvalOptions eval_opts;
  eval_opts.tolerance_px = opts.tolerance_px;
  eval_opts.metric = opts.metric;
  EvalRunSummary summary;
  summary.report = evaluate(config, params, dataset, eval_opts);

  fs::create_directories(opts.out_dir);
  summary.report_path = (fs::path(opts.out_dir) / "report.csv").string();
  summary.pr_cls_path =
      (fs::path(opts.out_dir) / "pr_classification.csv").string();
  write_report_csv(summary.report_path, summary.report);
  write_pr_csv(summary.pr_cls_path, summary.report.cls.pr_pos);
  if (summary.report.loc) {
    summary.pr_loc_path =
        (fs::path(opts.out_dir) / "pr_localization.csv").string();
    write_pr_csv(summary.pr_loc_path, summary.report.loc->pr);
  } else {
    summary.loc_omitted = true;
  }
  return summary;
}

ExportMapsSummary run_export_maps(const ExportMapsOptions& opts) {
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  const NetworkConfig config = config_from_checkpoint(ckpt);
  const ModelParams<float> params = params_from_checkpoint(ckpt, config);
  const Dataset dataset = load_manifest(opts.manifest_path, LoadMode::eval);
  const ModelPlan plan = plan_model(config);

  fs::create_directories(opts.out_dir);
  ExportMapsSummary summary;
  for (const std::string& id : opts.ids) {
    const Sample* sample = nullptr;
    for (const auto& s : dataset.samples) {
      if (s.id == id) {
        sample = &s;
        break;
      }
    }
    if (!sample) throw InputError("unknown sample id '" + id + "'");

    Tensor4f batch(1, 1, sample->h, sample->w);
    std::copy(sample->pixels.begin(), sample->pixels.end(), batch.data());
    auto fwd = model_forward(config, plan, params, batch, Mode::eval);
    const double prob = static_cast<double>(fwd.y_loc(0, 1, 0, 0));
    const int mh = fwd.score_maps.h(), mw = fwd.score_maps.w();

    std::vector<double> map(static_cast<std::size_t>(mh) * mw);
    for (int y = 0; y < mh; ++y) {
      for (int x = 0; x < mw; ++x) {
        map[static_cast<std::size_t>(y) * mw + x] =
            static_cast<double>(fwd.score_maps(0, 1, y, x));
      }
    }

    // Raw (score-map resolution) values.
    const std::string csv_path =
        (fs::path(opts.out_dir) / ("map_" + id + ".csv")).string();
    {
      std::ofstream out(csv_path, std::ios::binary);
      if (!out) throw InputError("cannot write " + csv_path);
      out.precision(9);
      for (int y = 0; y < mh; ++y) {
        for (int x = 0; x < mw; ++x) {
          if (x) out << ',';
          out << map[static_cast<std::size_t>(y) * mw + x];
        }
        out << '\n';
      }
    }

    // Upsampled map, linearly scaled to [0, round(255 * prob_positive)].
    const auto up = bilinear_upsample(map, mh, mw, sample->h, sample->w);
    const double lo = *std::min_element(up.begin(), up.end());
    const double hi = *std::max_element(up.begin(), up.end());
    std::vector<std::uint8_t> bytes(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double norm = hi > lo ? (up[i] - lo) / (hi - lo) : 1.0;
      bytes[i] = static_cast<std::uint8_t>(std::lround(norm * 255.0 * prob));
    }
    const std::string pgm_path =
        (fs::path(opts.out_dir) / ("map_" + id + ".pgm")).string();
    write_pgm_bytes(pgm_path, sample->w, sample->h, bytes);

    summary.csv_paths.push_back(csv_path);
    summary.pgm_paths.push_back(pgm_path);
  }
  return summary;
}

const char* const kTable1Variants[4] = {"MaxPool", "AvePool", "STL+MaxPool",
                                        "STL+AvePool"};

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Table1Result run_table1(const Table1Options& opts) {
  if (opts.seeds < 1) throw ConfigError("bench: seeds must be >= 1");
  Table1Result result;
  fs::create_directories(opts.out_dir);

  for (int rep = 0; rep < opts.seeds; ++rep) {
    GenSpec train_spec = opts.gen;
    train_spec.n_samples = opts.n_train;
    train_spec.seed = derive_seed(opts.base_seed, "table1-train-data:" +
                                                      std::to_string(rep));
    GenSpec test_spec = opts.gen;
    test_spec.n_samples = opts.n_test;
    test_spec.seed = derive_seed(opts.base_seed, "table1-test-data:" +
                                                     std::to_string(rep));
    const Dataset train_set = generate_in_memory(train_spec);
    const Dataset test_set = generate_in_memory(test_spec);

    for (const char* variant : kTable1Variants) {
      const std::string name(variant);
      const bool is_stl = name.rfind("STL", 0) == 0;
      const PoolKind pool =
          name.find("Max") != std::string::npos ? PoolKind::max : PoolKind::avg;
      NetworkConfig config = preset_by_name(opts.preset, pool);
      if (opts.input_scale > 0.0) config.input_scale = opts.input_scale;

      TrainConfig tcfg = opts.train;
      tcfg.mode = is_stl ? TrainMode::stl : TrainMode::loc_only;
      tcfg.seed = derive_seed(opts.base_seed,
                              "table1-train:" + std::to_string(rep) + ":" + name);
      TrainResult tr = train(config, tcfg, train_set);
      const ModelParams<float> best_params =
          params_from_checkpoint(tr.best, config);
      const EvalReport report = evaluate(config, best_params, test_set);

      Table1Row row;
      row.variant = name;
      row.seed = tcfg.seed;
      row.accuracy = report.cls.accuracy;
      row.auc = report.cls.auc.value_or(0.0);
      row.ap_pos = report.cls.ap_pos;
      row.ap_neg = report.cls.ap_neg;
      row.loc_ap = report.loc ? report.loc->loc_ap : 0.0;
      result.rows.push_back(row);
      std::cerr << "table1: rep " << rep << " " << name
                << " acc=" << row.accuracy << " auc=" << row.auc
                << " ap_pos=" << row.ap_pos << " loc_ap=" << row.loc_ap << "\n";
    }
  }

  for (const char* variant : kTable1Variants) {
    std::vector<double> acc, auc, app, apn, lap;
    for (const auto& row : result.rows) {
      if (row.variant == variant) {
        acc.push_back(row.accuracy);
        auc.push_back(row.auc);
        app.push_back(row.ap_pos);
        apn.push_back(row.ap_neg);
        lap.push_back(row.loc_ap);
      }
    }
    Table1Summary s;
    s.variant = variant;
    s.accuracy = median_of(acc);
    s.auc = median_of(auc);
    s.ap_pos = median_of(app);
    s.ap_neg = median_of(apn);
    s.loc_ap = median_of(lap);
    result.medians.push_back(s);
  }

  result.runs_csv_path = (fs::path(opts.out_dir) / "table1_runs.csv").string();
  {
    std::ofstream out(result.runs_csv_path, std::ios::binary);
    out.precision(10);
    out << "variant,seed,accuracy,auc,ap_pos,ap_neg,loc_ap\n";
    for (const auto& r : result.rows) {
      out << r.variant << ',' << r.seed << ',' << r.accuracy << ',' << r.auc
          << ',' << r.ap_pos << ',' << r.ap_neg << ',' << r.loc_ap << '\n';
    }
  }
  result.summary_csv_path = (fs::path(opts.out_dir) / "table1.csv").string();
  {
    std::ofstream out(result.summary_csv_path, std::ios::binary);
    out.precision(10);
    out << "variant,accuracy,auc,ap_pos,ap_neg,loc_ap\n";
    for (const auto& s : result.medians) {
      out << s.variant << ',' << s.accuracy << ',' << s.auc << ',' << s.ap_pos
          << ',' << s.ap_neg << ',' << s.loc_ap << '\n';
    }
  }
  return result;
}

}  // namespace stlkit
