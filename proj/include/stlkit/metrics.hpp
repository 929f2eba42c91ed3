#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stlkit/data.hpp"
#include "stlkit/model.hpp"

namespace stlkit {

// One evaluated test image: localizer-head positive-class probability and
// the argmax of the upsampled positive-class score map in original pixels.
struct ScoredSample {
  std::string id;
  int true_label = 0;
  double prob_positive = 0.0;
  int peak_x = 0, peak_y = 0;
  std::vector<Box> boxes;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Align-corners bilinear interpolation of an (h x w) map to (out_h x out_w);
// degenerate source dims replicate. Exact on corner pixels and the identity
// when the sizes match.
std::vector<double> bilinear_upsample(const std::vector<double>& map, int h,
                                      int w, int out_h, int out_w);

enum class ToleranceMetric { per_axis, euclidean };

// True iff the peak lies inside any box dilated by `tolerance` (per-axis
// Chebyshev dilation by default). Empty box lists never hit.
bool peak_hit(int peak_x, int peak_y, const std::vector<Box>& boxes,
              int tolerance, ToleranceMetric metric = ToleranceMetric::per_axis);

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> auc;  // undefined when only one class is present
  double ap_pos = 0.0;
  double ap_neg = 0.0;
  std::vector<PrPoint> pr_pos;
};

// Accuracy at threshold 0.5; AUC by the rank statistic with half-credit
// ties; non-interpolated AP for both classes (negative class scored by
// 1 - prob). Equal scores are handled as one threshold group.
ClassificationMetrics classification_metrics(const std::vector<ScoredSample>& samples);

struct LocalizationMetrics {
  double loc_ap = 0.0;
  std::vector<PrPoint> pr;
};

// Threshold sweep over all distinct probabilities. A predicted-positive
// sample counts as a true positive only if it is positive-class AND its
// peak hits; the recall denominator is the total positive-class count.
LocalizationMetrics localization_ap(const std::vector<ScoredSample>& samples,
                                    int tolerance,
                                    ToleranceMetric metric = ToleranceMetric::per_axis);

struct EvalReport {
  ClassificationMetrics cls;
  std::optional<LocalizationMetrics> loc;  // absent when no boxes exist
  int tolerance_px = 0;
  std::vector<ScoredSample> scored;
};

struct EvalOptions {
  int tolerance_px = -1;  // -1: half the network's global stride
  ToleranceMetric metric = ToleranceMetric::per_axis;
  int batch_size = 32;
};

// Full protocol: inference, positive-class map upsampling, peak extraction
// (ties to the first row-major index), then all metrics.
EvalReport evaluate(const NetworkConfig& config, const ModelParams<float>& params,
                    const Dataset& dataset, const EvalOptions& opts = {});

// CSV writers. Report columns: accuracy,auc,ap_pos,ap_neg,loc_ap (auc/loc_ap
// may be `nan` when undefined). PR rows: threshold,precision,recall.
void write_report_csv(const std::string& path, const EvalReport& report);
void write_pr_csv(const std::string& path, const std::vector<PrPoint>& points);

}  // namespace stlkit
