#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlkit/rng.hpp"
#include "stlkit/tensor.hpp"

namespace stlkit {

// Inclusive pixel box: x0 <= x <= x1 lies inside. Generated boxes always
// have strict extent (x0 < x1, y0 < y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Sample {
  std::string id;
  std::string rel_path;
  int label = 0;
  std::vector<Box> boxes;  // stripped in training mode
  int h = 0, w = 0;
  std::vector<float> pixels;  // [0,1], row-major
};

struct DatasetMeta {
  int canvas_h = 0, canvas_w = 0;
  int num_classes = 2;
  std::uint64_t seed = 0;
  std::string genspec_echo;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;
};

enum class TargetShape { blob, bar, ring };

const char* target_shape_name(TargetShape s);
TargetShape target_shape_from_name(const std::string& name);

// Synthetic weakly-labeled localization task: positives carry exactly one
// target shape (with its tight bounding box recorded for evaluation only);
// distractor and noise statistics are identical across classes, so the
// target is the only class signal.
struct GenSpec {
  int canvas_h = 64, canvas_w = 64;
  int n_samples = 200;
  double positive_fraction = 0.5;
  TargetShape target_shape = TargetShape::blob;
  int target_min = 10, target_max = 14;  // target extent in pixels
  int distractors_min = 4, distractors_max = 7;
  double noise_std = 0.06;
  double background_level = 0.15;
  double target_intensity_lo = 0.50, target_intensity_hi = 0.75;
  double distractor_intensity_lo = 0.55, distractor_intensity_hi = 0.85;
  std::uint64_t seed = 0;
};

void validate_genspec(const GenSpec& spec);

// Renders the whole dataset in memory (pixels already 8-bit quantized, so
// the values match a generate() + load_manifest() round trip).
Dataset generate_in_memory(const GenSpec& spec);

struct GenResult {
  std::string manifest_path;
  Dataset dataset;
};

// Writes images/ (binary PGM) plus the manifest under out_dir.
GenResult generate(const GenSpec& spec, const std::string& out_dir);

enum class LoadMode { train, eval };

// Manifest format:
//   #stl-manifest v1 canvas=HxW classes=K seed=S
//   id<TAB>relative_path<TAB>label<TAB>x0,y0,x1,y1[;...] or '-'
// Training mode strips ground-truth boxes from every sample.
Dataset load_manifest(const std::string& manifest_path, LoadMode mode);

std::string write_manifest(const Dataset& dataset, const std::string& out_dir);

struct ImportResult {
  std::string manifest_path;
  std::string report_path;
  int imported = 0;
  std::vector<std::string> skipped;  // "file: reason"
};

// Imports PGM images listed in labels_csv (`filename,label` per line),
// resizing to the canvas via bilinear interpolation and rescaling any boxes
// from boxes_csv (`filename,x0,y0,x1,y1`) by the same factors. Undecodable
// images are skipped and listed in the import report.
ImportResult import_directory(const std::string& dir,
                              const std::string& labels_csv,
                              const std::string& boxes_csv, int canvas_h,
                              int canvas_w, const std::string& out_dir);

}  // namespace stlkit
