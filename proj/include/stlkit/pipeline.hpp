#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlkit/data.hpp"
#include "stlkit/gradcheck.hpp"
#include "stlkit/metrics.hpp"
#include "stlkit/trainer.hpp"

namespace stlkit {

// High-level operations behind the CLI subcommands and the Python bindings.

struct RunManifestInfo {
  std::string command_line;
  std::string config_json;  // resolved options as a JSON object string
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  double wall_seconds = 0.0;
};

// Atomic write of run_manifest.json next to the artifact set.
void write_run_manifest(const std::string& out_dir, const RunManifestInfo& info);

struct GenRunSummary {
  std::string manifest_path;
  int n_samples = 0;
  int n_positive = 0;
};

GenRunSummary run_generate(const GenSpec& spec, const std::string& out_dir);

struct TrainOptions {
  std::string manifest_path;
  std::string preset = "desk";
  std::string config_file;  // when set, overrides the preset
  PoolKind pool = PoolKind::avg;
  double input_scale = -1.0;  // > 0 overrides the config's input scale
  TrainConfig train;
  std::string out_dir;
};

struct TrainRunSummary {
  std::string checkpoint_path;
  std::string log_path;
  int best_epoch = -1;
  double best_val_acc = 0.0;
  bool diverged = false;
  std::string message;
  double chosen_weight_decay = 0.0;
};

TrainRunSummary run_train(const TrainOptions& opts);

// Grid search over weight decay values; keeps the run with the best
// validation accuracy.
TrainRunSummary run_train_wd_grid(const TrainOptions& opts,
                                  const std::vector<double>& grid);

struct EvalRunOptions {
  std::string checkpoint_path;
  std::string manifest_path;
  std::string out_dir;
  int tolerance_px = -1;
  ToleranceMetric metric = ToleranceMetric::per_axis;
};

struct EvalRunSummary {
  EvalReport report;
  std::string report_path;
  std::string pr_cls_path;
  std::string pr_loc_path;  // empty when the localization section is omitted
  bool loc_omitted = false;
};

EvalRunSummary run_eval(const EvalRunOptions& opts);

struct ExportMapsOptions {
  std::string checkpoint_path;
  std::string manifest_path;
  std::vector<std::string> ids;
  std::string out_dir;
};

struct ExportMapsSummary {
  std::vector<std::string> pgm_paths;
  std::vector<std::string> csv_paths;
};

ExportMapsSummary run_export_maps(const ExportMapsOptions& opts);

// The four-variant comparative benchmark (MaxPool / AvePool / STL+MaxPool /
// STL+AvePool) over shared per-seed synthetic data.
struct Table1Options {
  std::string out_dir;
  int seeds = 5;
  std::uint64_t base_seed = 0;
  int n_train = 2000;
  int n_test = 500;
  GenSpec gen;           // canvas/shape/difficulty knobs; n and seed overridden
  TrainConfig train;     // schedule template; mode and seed overridden
  double input_scale = 1.0;  // fan-in init expects unit-scale inputs
  std::string preset = "desk";
};

struct Table1Row {
  std::string variant;
  std::uint64_t seed = 0;
  double accuracy = 0.0, auc = 0.0, ap_pos = 0.0, ap_neg = 0.0, loc_ap = 0.0;
};

struct Table1Summary {
  std::string variant;
  double accuracy = 0.0, auc = 0.0, ap_pos = 0.0, ap_neg = 0.0, loc_ap = 0.0;
};

struct Table1Result {
  std::vector<Table1Row> rows;
  std::vector<Table1Summary> medians;  // MaxPool, AvePool, STL+MaxPool, STL+AvePool
  std::string runs_csv_path;
  std::string summary_csv_path;
};

Table1Result run_table1(const Table1Options& opts);

extern const char* const kTable1Variants[4];

}  // namespace stlkit
