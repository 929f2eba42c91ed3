#include "stlkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "stlkit/metrics.hpp"
#include "stlkit/pgm.hpp"

namespace fs = std::filesystem;

namespace stlkit {

const char* target_shape_name(TargetShape s) {
  switch (s) {
    case TargetShape::blob: return "blob";
    case TargetShape::bar: return "bar";
    case TargetShape::ring: return "ring";
  }
  return "?";
}

TargetShape target_shape_from_name(const std::string& name) {
  if (name == "blob") return TargetShape::blob;
  if (name == "bar") return TargetShape::bar;
  if (name == "ring") return TargetShape::ring;
  throw ConfigError("unknown target shape '" + name +
                    "' (expected blob, bar or ring)");
}

void validate_genspec(const GenSpec& spec) {
  if (spec.canvas_h < 8 || spec.canvas_w < 8) {
    throw ConfigError("gen: canvas must be at least 8x8");
  }
  if (spec.n_samples < 1) throw ConfigError("gen: n_samples must be >= 1");
  if (spec.positive_fraction <= 0.0 || spec.positive_fraction >= 1.0) {
    throw ConfigError("gen: positive_fraction must lie in (0,1), got " +
                      std::to_string(spec.positive_fraction));
  }
  if (spec.target_min < 4 || spec.target_max < spec.target_min) {
    throw ConfigError("gen: target size range must satisfy 4 <= min <= max");
  }
  if (spec.target_max + 2 >= std::min(spec.canvas_h, spec.canvas_w)) {
    throw ConfigError("gen: target larger than canvas");
  }
  if (spec.distractors_min < 0 || spec.distractors_max < spec.distractors_min) {
    throw ConfigError("gen: bad distractor count range");
  }
  if (spec.noise_std < 0.0) throw ConfigError("gen: noise_std must be >= 0");
}

namespace {

struct Canvas {
  int h, w;
  std::vector<float> px;
  std::vector<std::uint8_t> mask;  // target mask when requested

  float& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }

  void paint(int y, int x, float v, bool record) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    at(y, x) = v;
    if (record) mask[static_cast<std::size_t>(y) * w + x] = 1;
  }
};

void draw_blob(Canvas& c, int cx, int cy, int size, float v, bool record) {
  const double r = size / 2.0;
  const int ir = static_cast<int>(r) + 1;
  for (int y = cy - ir; y <= cy + ir; ++y) {
    for (int x = cx - ir; x <= cx + ir; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r * r) c.paint(y, x, v, record);
    }
  }
}

void draw_bar(Canvas& c, int cx, int cy, int size, bool horizontal, float v,
              bool record) {
  const int half = size / 2;
  for (int t = -1; t <= 1; ++t) {
    for (int s = -half; s <= half; ++s) {
      if (horizontal) {
        c.paint(cy + t, cx + s, v, record);
      } else {
        c.paint(cy + s, cx + t, v, record);
      }
    }
  }
}

void draw_ring(Canvas& c, int cx, int cy, int size, float v, bool record) {
  const double ro = size / 2.0;
  const double ri = std::max(1.0, ro - 3.0);
  const int ir = static_cast<int>(ro) + 1;
  for (int y = cy - ir; y <= cy + ir; ++y) {
    for (int x = cx - ir; x <= cx + ir; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 <= ro * ro && d2 >= ri * ri) c.paint(y, x, v, record);
    }
  }
}

void draw_shape(Canvas& c, TargetShape shape, int cx, int cy, int size,
                bool horizontal, float v, bool record) {
  switch (shape) {
    case TargetShape::blob: draw_blob(c, cx, cy, size, v, record); break;
    case TargetShape::bar: draw_bar(c, cx, cy, size, horizontal, v, record); break;
    case TargetShape::ring: draw_ring(c, cx, cy, size, v, record); break;
  }
}

double uniform_in(Rng& rng, double lo, double hi) {
  return lo + rng.next_double() * (hi - lo);
}

std::string genspec_echo(const GenSpec& spec) {
  std::ostringstream os;
  os << "shape=" << target_shape_name(spec.target_shape)
     << " n=" << spec.n_samples << " positive_fraction=" << spec.positive_fraction
     << " target=" << spec.target_min << '-' << spec.target_max
     << " distractors=" << spec.distractors_min << '-' << spec.distractors_max
     << " noise_std=" << spec.noise_std << " background=" << spec.background_level
     << " target_intensity=" << spec.target_intensity_lo << '-'
     << spec.target_intensity_hi << " distractor_intensity="
     << spec.distractor_intensity_lo << '-' << spec.distractor_intensity_hi;
  return os.str();
}

Sample render_sample(const GenSpec& spec, std::uint64_t sample_seed, int label,
                     const std::string& id) {
  Rng rng(sample_seed);
  Canvas canvas{spec.canvas_h, spec.canvas_w, {}, {}};
  canvas.px.resize(static_cast<std::size_t>(spec.canvas_h) * spec.canvas_w);
  canvas.mask.assign(canvas.px.size(), 0);

  for (auto& v : canvas.px) {
    const double raw = spec.background_level + spec.noise_std * rng.next_gaussian();
    v = static_cast<float>(std::clamp(raw, 0.0, 1.0));
  }

  // Distractors first: their count, shapes and placement consume the stream
  // identically for both classes.
  const int span = spec.distractors_max - spec.distractors_min + 1;
  const int n_distractors =
      spec.distractors_min + static_cast<int>(rng.below(span));
  const TargetShape others[2] = {
      spec.target_shape == TargetShape::blob ? TargetShape::bar : TargetShape::blob,
      spec.target_shape == TargetShape::ring ? TargetShape::bar : TargetShape::ring,
  };
  for (int d = 0; d < n_distractors; ++d) {
    const TargetShape shape = others[rng.below(2)];
    const int size = spec.target_min +
                     static_cast<int>(rng.below(spec.target_max - spec.target_min + 1));
    const float v = static_cast<float>(uniform_in(
        rng, spec.distractor_intensity_lo, spec.distractor_intensity_hi));
    const int cx = static_cast<int>(rng.below(spec.canvas_w));
    const int cy = static_cast<int>(rng.below(spec.canvas_h));
    const bool horizontal = rng.below(2) == 0;
    draw_shape(canvas, shape, cx, cy, size, horizontal, v, false);
  }

  Sample sample;
  sample.id = id;
  sample.label = label;
  sample.h = spec.canvas_h;
  sample.w = spec.canvas_w;

  if (label == 1) {
    const int size = spec.target_min +
                     static_cast<int>(rng.below(spec.target_max - spec.target_min + 1));
    const float v = static_cast<float>(
        uniform_in(rng, spec.target_intensity_lo, spec.target_intensity_hi));
    const int margin = size / 2 + 2;
    const int cx = margin + static_cast<int>(rng.below(spec.canvas_w - 2 * margin));
    const int cy = margin + static_cast<int>(rng.below(spec.canvas_h - 2 * margin));
    const bool horizontal = rng.below(2) == 0;
    draw_shape(canvas, spec.target_shape, cx, cy, size, horizontal, v, true);

    int x0 = spec.canvas_w, y0 = spec.canvas_h, x1 = -1, y1 = -1;
    for (int y = 0; y < spec.canvas_h; ++y) {
      for (int x = 0; x < spec.canvas_w; ++x) {
        if (canvas.mask[static_cast<std::size_t>(y) * spec.canvas_w + x]) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
      }
    }
    if (x1 <= x0 || y1 <= y0) {
      throw InternalError("generator: degenerate target mask for " + id);
    }
    sample.boxes.push_back({x0, y0, x1, y1});
  }

  // 8-bit quantization up front so in-memory pixels match a PGM round trip.
  sample.pixels.resize(canvas.px.size());
  for (std::size_t i = 0; i < canvas.px.size(); ++i) {
    const float clamped = std::clamp(canvas.px[i], 0.0f, 1.0f);
    sample.pixels[i] =
        static_cast<float>(std::lround(clamped * 255.0f)) / 255.0f;
  }
  return sample;
}

}  // namespace

Dataset generate_in_memory(const GenSpec& spec) {
  validate_genspec(spec);
  const int n_pos = static_cast<int>(
      std::llround(spec.positive_fraction * spec.n_samples));
  if (n_pos < 1 || n_pos >= spec.n_samples) {
    throw ConfigError("gen: positive_fraction leaves an empty class");
  }
  std::vector<int> labels(static_cast<std::size_t>(spec.n_samples), 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  Rng label_rng(derive_seed(spec.seed, "labels"));
  label_rng.shuffle(labels.begin(), labels.end());

  Dataset ds;
  ds.meta.canvas_h = spec.canvas_h;
  ds.meta.canvas_w = spec.canvas_w;
  ds.meta.num_classes = 2;
  ds.meta.seed = spec.seed;
  ds.meta.genspec_echo = genspec_echo(spec);
  ds.samples.resize(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%06d", i);
    const std::string id(buf);
    ds.samples[i] = render_sample(spec, derive_seed(spec.seed, "sample:" + id),
                                  labels[i], id);
    ds.samples[i].rel_path = "images/" + id + ".pgm";
  }
  return ds;
}

std::string write_manifest(const Dataset& dataset, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path final_path = fs::path(out_dir) / "manifest.tsv";
  const fs::path tmp_path = fs::path(out_dir) / ".manifest.tsv.tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary);
    if (!out) throw InputError("cannot write manifest in " + out_dir);
    out << "#stl-manifest v1 canvas=" << dataset.meta.canvas_h << 'x'
        << dataset.meta.canvas_w << " classes=" << dataset.meta.num_classes
        << " seed=" << dataset.meta.seed << "\n";
    if (!dataset.meta.genspec_echo.empty()) {
      out << "#genspec " << dataset.meta.genspec_echo << "\n";
    }
    for (const auto& s : dataset.samples) {
      out << s.id << '\t' << s.rel_path << '\t' << s.label << '\t';
      if (s.boxes.empty()) {
        out << '-';
      } else {
        for (std::size_t b = 0; b < s.boxes.size(); ++b) {
          if (b) out << ';';
          out << s.boxes[b].x0 << ',' << s.boxes[b].y0 << ','
              << s.boxes[b].x1 << ',' << s.boxes[b].y1;
        }
      }
      out << '\n';
    }
    if (!out) throw InputError("failed writing manifest in " + out_dir);
  }
  fs::rename(tmp_path, final_path);
  return final_path.string();
}

GenResult generate(const GenSpec& spec, const std::string& out_dir) {
  Dataset ds = generate_in_memory(spec);
  fs::create_directories(fs::path(out_dir) / "images");
  for (const auto& s : ds.samples) {
    std::vector<std::uint8_t> bytes(s.pixels.size());
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(std::lround(s.pixels[i] * 255.0f));
    }
    write_pgm_bytes((fs::path(out_dir) / s.rel_path).string(), s.w, s.h, bytes);
  }
  GenResult res;
  res.manifest_path = write_manifest(ds, out_dir);
  res.dataset = std::move(ds);
  return res;
}

namespace {

std::vector<Box> parse_boxes(const std::string& field, int canvas_h,
                             int canvas_w, int line_no) {
  std::vector<Box> boxes;
  if (field == "-") return boxes;
  std::istringstream is(field);
  std::string part;
  while (std::getline(is, part, ';')) {
    Box b;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream bs(part);
    if (!(bs >> b.x0 >> c1 >> b.y0 >> c2 >> b.x1 >> c3 >> b.y1) || c1 != ',' ||
        c2 != ',' || c3 != ',') {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": malformed box '" + part + "'");
    }
    if (b.x1 <= b.x0 || b.y1 <= b.y0) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": degenerate box (x1 <= x0 or y1 <= y0)");
    }
    if (b.x0 < 0 || b.y0 < 0 || b.x1 >= canvas_w || b.y1 >= canvas_h) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": box outside image bounds");
    }
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace

Dataset load_manifest(const std::string& manifest_path, LoadMode mode) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  Dataset ds;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!header_seen) {
        unsigned long long seed = 0;
        if (std::sscanf(line.c_str(), "#stl-manifest v1 canvas=%dx%d classes=%d seed=%llu",
                        &ds.meta.canvas_h, &ds.meta.canvas_w,
                        &ds.meta.num_classes, &seed) != 4) {
          throw LoadError("manifest line 1: bad header (expected "
                          "#stl-manifest v1 canvas=HxW classes=K seed=S)");
        }
        ds.meta.seed = seed;
        header_seen = true;
      } else if (line.rfind("#genspec ", 0) == 0) {
        ds.meta.genspec_echo = line.substr(9);
      }
      continue;
    }
    if (!header_seen) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": record before header");
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos
                                              ? std::string::npos
                                              : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    Sample s;
    s.id = fields[0];
    s.rel_path = fields[1];
    try {
      s.label = std::stoi(fields[2]);
    } catch (...) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": bad label '" + fields[2] + "'");
    }
    if (s.label < 0 || s.label >= ds.meta.num_classes) {
      throw LoadError("manifest line " + std::to_string(line_no) +
                      ": label out of range");
    }
    s.boxes = parse_boxes(fields[3], ds.meta.canvas_h, ds.meta.canvas_w, line_no);
    if (mode == LoadMode::train) s.boxes.clear();

    PgmImage img;
    try {
      img = read_pgm((base / s.rel_path).string());
    } catch (const LoadError& e) {
      throw LoadError("manifest line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    if (img.width != ds.meta.canvas_w || img.height != ds.meta.canvas_h) {
      throw LoadError("manifest line " + std::to_string(line_no) + ": image " +
                      s.rel_path + " is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", expected canvas " +
                      std::to_string(ds.meta.canvas_w) + "x" +
                      std::to_string(ds.meta.canvas_h));
    }
    s.w = img.width;
    s.h = img.height;
    s.pixels = std::move(img.pixels);
    ds.samples.push_back(std::move(s));
  }
  if (!header_seen) throw LoadError("manifest is empty: " + manifest_path);
  return ds;
}

ImportResult import_directory(const std::string& dir,
                              const std::string& labels_csv,
                              const std::string& boxes_csv, int canvas_h,
                              int canvas_w, const std::string& out_dir) {
  std::ifstream labels_in(labels_csv);
  if (!labels_in) throw LoadError("cannot open labels csv: " + labels_csv);

  std::map<std::string, std::vector<Box>> boxes_by_file;
  if (!boxes_csv.empty()) {
    std::ifstream boxes_in(boxes_csv);
    if (!boxes_in) throw LoadError("cannot open boxes csv: " + boxes_csv);
    std::string line;
    int line_no = 0;
    while (std::getline(boxes_in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line == "filename,x0,y0,x1,y1") continue;
      std::istringstream is(line);
      std::string fname;
      if (!std::getline(is, fname, ',')) continue;
      Box b;
      char c = 0;
      if (!(is >> b.x0 >> c >> b.y0 >> c >> b.x1 >> c >> b.y1)) {
        throw LoadError("boxes csv line " + std::to_string(line_no) +
                        ": malformed record");
      }
      boxes_by_file[fname].push_back(b);
    }
  }

  Dataset ds;
  ds.meta.canvas_h = canvas_h;
  ds.meta.canvas_w = canvas_w;
  ds.meta.num_classes = 2;
  ds.meta.seed = 0;

  ImportResult result;
  fs::create_directories(fs::path(out_dir) / "images");

  std::string line;
  int line_no = 0;
  while (std::getline(labels_in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == "filename,label") continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw LoadError("labels csv line " + std::to_string(line_no) +
                      ": expected `filename,label`");
    }
    const std::string fname = line.substr(0, comma);
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (...) {
      throw LoadError("labels csv line " + std::to_string(line_no) +
                      ": bad label");
    }

    PgmImage img;
    try {
      img = read_pgm((fs::path(dir) / fname).string());
    } catch (const std::exception& e) {
      result.skipped.push_back(fname + ": " + e.what());
      continue;
    }

    Sample s;
    s.id = fs::path(fname).stem().string();
    s.rel_path = "images/" + s.id + ".pgm";
    s.label = label;
    s.h = canvas_h;
    s.w = canvas_w;

    std::vector<double> src(img.pixels.begin(), img.pixels.end());
    const std::vector<double> resized =
        bilinear_upsample(src, img.height, img.width, canvas_h, canvas_w);
    std::vector<std::uint8_t> bytes(resized.size());
    s.pixels.resize(resized.size());
    for (std::size_t i = 0; i < resized.size(); ++i) {
      const double v = std::clamp(resized[i], 0.0, 1.0);
      bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      s.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    write_pgm_bytes((fs::path(out_dir) / s.rel_path).string(), canvas_w,
                    canvas_h, bytes);

    const auto it = boxes_by_file.find(fname);
    if (it != boxes_by_file.end()) {
      const double sx = static_cast<double>(canvas_w) / img.width;
      const double sy = static_cast<double>(canvas_h) / img.height;
      for (const Box& b : it->second) {
        Box scaled;
        scaled.x0 = std::clamp<int>(static_cast<int>(std::llround(b.x0 * sx)), 0, canvas_w - 1);
        scaled.y0 = std::clamp<int>(static_cast<int>(std::llround(b.y0 * sy)), 0, canvas_h - 1);
        scaled.x1 = std::clamp<int>(static_cast<int>(std::llround(b.x1 * sx)), 0, canvas_w - 1);
        scaled.y1 = std::clamp<int>(static_cast<int>(std::llround(b.y1 * sy)), 0, canvas_h - 1);
        if (scaled.x1 <= scaled.x0) scaled.x1 = std::min(scaled.x0 + 1, canvas_w - 1);
        if (scaled.y1 <= scaled.y0) scaled.y1 = std::min(scaled.y0 + 1, canvas_h - 1);
        s.boxes.push_back(scaled);
      }
    }
    ds.samples.push_back(std::move(s));
    ++result.imported;
  }

  result.manifest_path = write_manifest(ds, out_dir);
  const fs::path report = fs::path(out_dir) / "import_report.txt";
  {
    std::ofstream out(report);
    out << "imported " << result.imported << "\n";
    out << "skipped " << result.skipped.size() << "\n";
    for (const auto& sk : result.skipped) out << "skip " << sk << "\n";
  }
  result.report_path = report.string();
  return result;
}

}  // namespace stlkit
