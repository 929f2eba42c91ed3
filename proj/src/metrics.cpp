#include "stlkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace stlkit {

std::vector<double> bilinear_upsample(const std::vector<double>& map, int h,
                                      int w, int out_h, int out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1) {
    throw InternalError("bilinear_upsample: degenerate dims");
  }
  if (map.size() != static_cast<std::size_t>(h) * w) {
    throw InternalError("bilinear_upsample: map size mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  const double sy = (out_h > 1 && h > 1)
                        ? static_cast<double>(h - 1) / (out_h - 1)
                        : 0.0;
  const double sx = (out_w > 1 && w > 1)
                        ? static_cast<double>(w - 1) / (out_w - 1)
                        : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = map[static_cast<std::size_t>(y0) * w + x0] * (1.0 - wx) +
                         map[static_cast<std::size_t>(y0) * w + x1] * wx;
      const double bot = map[static_cast<std::size_t>(y1) * w + x0] * (1.0 - wx) +
                         map[static_cast<std::size_t>(y1) * w + x1] * wx;
      out[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

bool peak_hit(int peak_x, int peak_y, const std::vector<Box>& boxes,
              int tolerance, ToleranceMetric metric) {
  for (const Box& b : boxes) {
    if (metric == ToleranceMetric::per_axis) {
      if (peak_x >= b.x0 - tolerance && peak_x <= b.x1 + tolerance &&
          peak_y >= b.y0 - tolerance && peak_y <= b.y1 + tolerance) {
        return true;
      }
    } else {
      // Euclidean distance from the peak to the (undilated) box.
      const double dx = peak_x < b.x0   ? b.x0 - peak_x
                        : peak_x > b.x1 ? peak_x - b.x1
                                        : 0.0;
      const double dy = peak_y < b.y0   ? b.y0 - peak_y
                        : peak_y > b.y1 ? peak_y - b.y1
                                        : 0.0;
      if (dx * dx + dy * dy <= static_cast<double>(tolerance) * tolerance) {
        return true;
      }
    }
  }
  return false;
}

namespace {

// Indices sorted by score descending; equal scores keep input order.
std::vector<std::size_t> order_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return idx;
}

// Non-interpolated AP via a descending threshold sweep over distinct
// scores: AP = sum over groups of (recall step) * precision. `relevant`
// marks samples that can become true positives; `positives` is the recall
// denominator.
double sweep_ap(const std::vector<double>& scores,
                const std::vector<char>& relevant, std::size_t positives,
                std::vector<PrPoint>* pr_out) {
  if (pr_out) pr_out->clear();
  if (positives == 0) return 0.0;
  const auto idx = order_by_score(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, predicted = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double threshold = scores[idx[i]];
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == threshold) {
      if (relevant[idx[j]]) ++tp;
      ++predicted;
      ++j;
    }
    const double precision = static_cast<double>(tp) / predicted;
    const double recall = static_cast<double>(tp) / positives;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    if (pr_out) pr_out->push_back({threshold, precision, recall});
    i = j;
  }
  return ap;
}

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<ScoredSample>& samples) {
  ClassificationMetrics m;
  if (samples.empty()) return m;

  std::size_t n_pos = 0, n_neg = 0, correct = 0;
  std::vector<double> scores(samples.size());
  std::vector<char> is_pos(samples.size()), is_neg(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    scores[i] = samples[i].prob_positive;
    is_pos[i] = samples[i].true_label == 1;
    is_neg[i] = !is_pos[i];
    n_pos += is_pos[i];
    n_neg += is_neg[i];
    const int predicted = samples[i].prob_positive > 0.5 ? 1 : 0;
    correct += predicted == samples[i].true_label;
  }
  m.accuracy = static_cast<double>(correct) / samples.size();

  if (n_pos > 0 && n_neg > 0) {
    // Rank statistic with average ranks for ties.
    const auto idx = order_by_score(scores);
    std::vector<double> rank(samples.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
      // Descending position i..j-1 => ascending ranks n-j+1 .. n-i.
      const double avg_rank =
          (static_cast<double>(idx.size() - j + 1) + static_cast<double>(idx.size() - i)) / 2.0;
      for (std::size_t t = i; t < j; ++t) rank[idx[t]] = avg_rank;
      i = j;
    }
    double pos_rank_sum = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      if (is_pos[s]) pos_rank_sum += rank[s];
    }
    m.auc = (pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
            (static_cast<double>(n_pos) * n_neg);
  }

  m.ap_pos = sweep_ap(scores, is_pos, n_pos, &m.pr_pos);
  std::vector<double> neg_scores(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) neg_scores[s] = 1.0 - scores[s];
  m.ap_neg = sweep_ap(neg_scores, is_neg, n_neg, nullptr);
  return m;
}

LocalizationMetrics localization_ap(const std::vector<ScoredSample>& samples,
                                    int tolerance, ToleranceMetric metric) {
  LocalizationMetrics m;
  std::vector<double> scores(samples.size());
  std::vector<char> hit(samples.size());
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    scores[i] = samples[i].prob_positive;
    const bool pos = samples[i].true_label == 1;
    n_pos += pos;
    hit[i] = pos && peak_hit(samples[i].peak_x, samples[i].peak_y,
                             samples[i].boxes, tolerance, metric);
  }
  m.loc_ap = sweep_ap(scores, hit, n_pos, &m.pr);
  return m;
}

EvalReport evaluate(const NetworkConfig& config, const ModelParams<float>& params,
                    const Dataset& dataset, const EvalOptions& opts) {
  if (!config.has_localizer()) {
    throw ConfigError("evaluate: the network has no localizer head");
  }
  if (config.num_classes != 2) {
    throw ConfigError("evaluate: localization metrics assume 2 classes");
  }
  if (dataset.meta.canvas_h != config.input_h ||
      dataset.meta.canvas_w != config.input_w) {
    throw ConfigError("evaluate: dataset canvas " +
                      std::to_string(dataset.meta.canvas_w) + "x" +
                      std::to_string(dataset.meta.canvas_h) +
                      " does not match network input " +
                      std::to_string(config.input_w) + "x" +
                      std::to_string(config.input_h));
  }

  EvalReport report;
  report.tolerance_px = opts.tolerance_px >= 0
                            ? opts.tolerance_px
                            : geometry(config).global_stride / 2;

  const ModelPlan plan = plan_model(config);
  const int n = static_cast<int>(dataset.samples.size());
  const int bs = std::max(1, opts.batch_size);
  for (int begin = 0; begin < n; begin += bs) {
    const int count = std::min(bs, n - begin);
    Tensor4f batch(count, 1, config.input_h, config.input_w);
    for (int s = 0; s < count; ++s) {
      const auto& sample = dataset.samples[begin + s];
      std::copy(sample.pixels.begin(), sample.pixels.end(),
                batch.data() + batch.sample_offset(s));
    }
    auto fwd = model_forward(config, plan, params, batch, Mode::eval);
    const int mh = fwd.score_maps.h(), mw = fwd.score_maps.w();
    for (int s = 0; s < count; ++s) {
      const auto& sample = dataset.samples[begin + s];
      ScoredSample scored;
      scored.id = sample.id;
      scored.true_label = sample.label;
      scored.boxes = sample.boxes;
      scored.prob_positive = static_cast<double>(fwd.y_loc(s, 1, 0, 0));

      std::vector<double> map(static_cast<std::size_t>(mh) * mw);
      for (int y = 0; y < mh; ++y) {
        for (int x = 0; x < mw; ++x) {
          map[static_cast<std::size_t>(y) * mw + x] =
              static_cast<double>(fwd.score_maps(s, 1, y, x));
        }
      }
      const auto up = bilinear_upsample(map, mh, mw, sample.h, sample.w);
      std::size_t best = 0;
      for (std::size_t i = 1; i < up.size(); ++i) {
        if (up[i] > up[best]) best = i;
      }
      scored.peak_x = static_cast<int>(best % sample.w);
      scored.peak_y = static_cast<int>(best / sample.w);
      report.scored.push_back(std::move(scored));
    }
  }

  report.cls = classification_metrics(report.scored);
  const bool any_boxes =
      std::any_of(report.scored.begin(), report.scored.end(),
                  [](const ScoredSample& s) { return !s.boxes.empty(); });
  const bool any_positive =
      std::any_of(report.scored.begin(), report.scored.end(),
                  [](const ScoredSample& s) { return s.true_label == 1; });
  if (any_boxes || !any_positive) {
    report.loc = localization_ap(report.scored, report.tolerance_px, opts.metric);
  }
  return report;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write report: " + path);
  out.precision(10);
  out << "accuracy,auc,ap_pos,ap_neg,loc_ap\n";
  out << report.cls.accuracy << ',';
  if (report.cls.auc) {
    out << *report.cls.auc;
  } else {
    out << "nan";
  }
  out << ',' << report.cls.ap_pos << ',' << report.cls.ap_neg << ',';
  if (report.loc) {
    out << report.loc->loc_ap;
  } else {
    out << "nan";
  }
  out << '\n';
}

void write_pr_csv(const std::string& path, const std::vector<PrPoint>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write PR csv: " + path);
  out.precision(10);
  out << "threshold,precision,recall\n";
  for (const auto& p : points) {
    out << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
  }
}

}  // namespace stlkit
