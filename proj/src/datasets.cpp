#include "samm/datasets.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace samm {

void validate_trajectory(const TrajectorySample& t) {
  if (t.strokes.empty()) throw SchemaError("trajectory has no strokes");
  for (const auto& stroke : t.strokes) {
    if (stroke.size() < 2) throw SchemaError("stroke has fewer than 2 points");
    for (const auto& p : stroke) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw SchemaError("non-finite trajectory coordinate");
    }
  }
}

void validate_image(const ImageSample& img) {
  if (img.height <= 0 || img.width <= 0) throw SchemaError("image has non-positive dimensions");
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width)
    throw SchemaError("image pixel count does not match dimensions");
  for (float v : img.pixels) {
    if (v != 0.0f && v != 1.0f) throw SchemaError("image pixel outside {0,1}");
  }
}

}  // namespace samm

namespace samm::datasets {

// ---------------------------------------------------------------------------
// normalization and tensorization
// ---------------------------------------------------------------------------

TrajectorySample normalize_trajectory(const TrajectorySample& t) {
  validate_trajectory(t);
  double cx = 0.0, cy = 0.0;
  std::size_t n = 0;
  for (const auto& stroke : t.strokes) {
    for (const auto& p : stroke) {
      cx += p.x;
      cy += p.y;
      ++n;
    }
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);

  double extent = 0.0;
  for (const auto& stroke : t.strokes) {
    for (const auto& p : stroke)
      extent = std::max({extent, std::abs(p.x - cx), std::abs(p.y - cy)});
  }
  if (extent == 0.0) throw DegenerateInputError("all trajectory points coincide");

  TrajectorySample out;
  out.strokes.reserve(t.strokes.size());
  const double inv = 1.0 / extent;
  for (const auto& stroke : t.strokes) {
    auto& s = out.strokes.emplace_back();
    s.reserve(stroke.size());
    for (const auto& p : stroke) s.push_back({(p.x - cx) * inv, (p.y - cy) * inv});
  }
  return out;
}

std::vector<float> to_tensor(const TrajectorySample& t, int steps) {
  if (steps < 2) throw ArgumentError("to_tensor requires steps >= 2");
  validate_trajectory(t);

  // Concatenate strokes, remembering where each one starts.
  std::vector<Vec2> pts;
  std::vector<std::size_t> stroke_start;
  for (const auto& stroke : t.strokes) {
    stroke_start.push_back(pts.size());
    pts.insert(pts.end(), stroke.begin(), stroke.end());
  }

  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dx = pts[i].x - pts[i - 1].x;
    const double dy = pts[i].y - pts[i - 1].y;
    cum[i] = cum[i - 1] + std::hypot(dx, dy);
  }
  const double total = cum.back();
  if (total == 0.0) throw DegenerateInputError("trajectory has zero arc length");

  std::vector<float> out(static_cast<std::size_t>(3) * steps);
  float* xs = out.data();
  float* ys = out.data() + steps;
  float* pen = out.data() + 2 * steps;

  std::size_t seg = 0;
  for (int k = 0; k < steps; ++k) {
    const double s = total * k / (steps - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double u = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    xs[k] = static_cast<float>(pts[seg].x + u * (pts[seg + 1].x - pts[seg].x));
    ys[k] = static_cast<float>(pts[seg].y + u * (pts[seg + 1].y - pts[seg].y));
    pen[k] = 1.0f;
  }

  // Pen lift: first resampled index at or past each later stroke's start.
  for (std::size_t j = 1; j < stroke_start.size(); ++j) {
    const double a = cum[stroke_start[j]];
    int k = static_cast<int>(std::ceil(a * (steps - 1) / total));
    pen[std::clamp(k, 0, steps - 1)] = 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// stratified split
// ---------------------------------------------------------------------------

SplitPair stratified_split(const std::vector<LabeledPattern>& patterns, double train_fraction,
                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw SplitError("train_fraction must lie strictly between 0 and 1");
  if (patterns.empty()) throw SplitError("cannot split an empty pattern list");

  std::map<int, std::vector<std::size_t>> by_label;
  int max_label = 0;
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    if (patterns[i].label < 0) throw SplitError("negative label for id " + patterns[i].id);
    by_label[patterns[i].label].push_back(i);
    max_label = std::max(max_label, patterns[i].label);
  }

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  SplitPair out;
  out.train.name = "train";
  out.test.name = "test";
  out.train.class_count = out.test.class_count = max_label + 1;

  for (auto& [label, idx] : by_label) {
    if (idx.size() < 2)
      throw SplitError("class " + std::to_string(label) + " has fewer than 2 patterns");
    // Sort by id before shuffling so the outcome does not depend on input order.
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return patterns[a].id < patterns[b].id; });
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<long>(idx.size());
    const long want = std::lround(train_fraction * static_cast<double>(n));
    const long take = std::clamp(want, 1L, n - 1);
    for (long i = 0; i < n; ++i)
      (i < take ? out.train : out.test).patterns.push_back(patterns[idx[i]]);
  }

  auto by_id = [](const LabeledPattern& a, const LabeledPattern& b) { return a.id < b.id; };
  std::sort(out.train.patterns.begin(), out.train.patterns.end(), by_id);
  std::sort(out.test.patterns.begin(), out.test.patterns.end(), by_id);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic stroke shapes
// ---------------------------------------------------------------------------

namespace {

constexpr int kShapeCount = 10;
constexpr const char* kShapeNames[kShapeCount] = {
    "line",   "circle", "zigzag",   "spiral",  "corner",
    "s_bend", "cross",  "triangle", "u_curve", "figure_eight"};

std::vector<Vec2> sample_curve(int count, const std::function<Vec2(double)>& f) {
  std::vector<Vec2> pts(count);
  for (int i = 0; i < count; ++i) pts[i] = f(static_cast<double>(i) / (count - 1));
  return pts;
}

}  // namespace

const char* shape_name(int shape_index) {
  if (shape_index < 0 || shape_index >= kShapeCount)
    throw ArgumentError("shape index out of range");
  return kShapeNames[shape_index];
}

TrajectorySample shape_template(int shape_index) {
  using std::numbers::pi;
  TrajectorySample t;
  switch (shape_index) {
    case 0:  // line
      t.strokes.push_back(sample_curve(
          16, [](double u) { return Vec2{-0.8 + 1.6 * u, -0.8 + 1.6 * u}; }));
      break;
    case 1:  // circle
      t.strokes.push_back(sample_curve(48, [&](double u) {
        return Vec2{0.8 * std::cos(2 * pi * u), 0.8 * std::sin(2 * pi * u)};
      }));
      break;
    case 2: {  // zigzag, four alternating segments
      std::vector<Vec2> pts;
      for (int i = 0; i <= 4; ++i)
        pts.push_back({-0.8 + 0.4 * i, (i % 2 == 0) ? -0.6 : 0.6});
      t.strokes.push_back(std::move(pts));
      break;
    }
    case 3:  // spiral, two turns
      t.strokes.push_back(sample_curve(64, [&](double u) {
        const double r = 0.1 + 0.7 * u;
        return Vec2{r * std::cos(4 * pi * u), r * std::sin(4 * pi * u)};
      }));
      break;
    case 4:  // corner (vertical then horizontal)
      t.strokes.push_back(
          {{-0.5, 0.9}, {-0.5, 0.0}, {-0.5, -0.8}, {0.1, -0.8}, {0.7, -0.8}});
      break;
    case 5:  // s_bend, two stacked half circles
      t.strokes.push_back(sample_curve(48, [&](double u) {
        if (u < 0.5) {
          const double a = pi / 2 + 2 * pi * u;  // upper bowl, opens right
          return Vec2{0.4 * std::cos(a), 0.45 + 0.4 * std::sin(a)};
        }
        const double a = pi / 2 - 2 * pi * (u - 0.5);  // lower bowl, opens left
        return Vec2{-0.4 * std::cos(a), -0.45 + 0.4 * std::sin(a)};
      }));
      break;
    case 6:  // cross, two strokes
      t.strokes.push_back({{-0.8, 0.0}, {0.0, 0.0}, {0.8, 0.0}});
      t.strokes.push_back({{0.0, -0.8}, {0.0, 0.0}, {0.0, 0.8}});
      break;
    case 7:  // triangle, closed
      t.strokes.push_back(
          {{-0.8, -0.6}, {0.0, -0.6}, {0.8, -0.6}, {0.4, 0.15}, {0.0, 0.9}, {-0.4, 0.15}, {-0.8, -0.6}});
      break;
    case 8:  // u_curve, parabola
      t.strokes.push_back(sample_curve(32, [](double u) {
        const double x = -0.7 + 1.4 * u;
        return Vec2{x, -0.8 + 1.6 * (x * x) / 0.49};
      }));
      break;
    case 9:  // figure_eight, lemniscate
      t.strokes.push_back(sample_curve(64, [&](double u) {
        const double a = 2 * pi * u;
        return Vec2{0.8 * std::sin(a), 0.8 * std::sin(a) * std::cos(a)};
      }));
      break;
    default:
      throw ArgumentError("shape index out of range");
  }
  return t;
}

SplitPair synth_shapes(int class_count, int per_class, std::uint64_t seed,
                       const SynthOptions& options) {
  if (class_count < 2 || class_count > kShapeCount)
    throw ArgumentError("synth_shapes supports 2..10 classes");
  if (per_class < 4) throw ArgumentError("synth_shapes requires per_class >= 4");
  if (options.scale_min > options.scale_max || options.scale_min <= 0.0)
    throw ArgumentError("invalid scale range");

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<double> rot(-options.max_rotation_deg * std::numbers::pi / 180.0,
                                             options.max_rotation_deg * std::numbers::pi / 180.0);
  std::uniform_real_distribution<double> scale(options.scale_min, options.scale_max);
  std::normal_distribution<double> noise(0.0, options.noise_sigma);

  std::vector<LabeledPattern> patterns;
  patterns.reserve(static_cast<std::size_t>(class_count) * per_class);
  for (int c = 0; c < class_count; ++c) {
    const TrajectorySample base = shape_template(c);
    for (int i = 0; i < per_class; ++i) {
      const double theta = options.max_rotation_deg > 0.0 ? rot(rng) : 0.0;
      const double s = scale(rng);
      const double ct = std::cos(theta), st = std::sin(theta);
      TrajectorySample t;
      for (const auto& stroke : base.strokes) {
        auto& dst = t.strokes.emplace_back();
        dst.reserve(stroke.size());
        for (const auto& p : stroke) {
          double x = s * (ct * p.x - st * p.y);
          double y = s * (st * p.x + ct * p.y);
          if (options.noise_sigma > 0.0) {
            x += noise(rng);
            y += noise(rng);
          }
          dst.push_back({x, y});
        }
      }
      char idx[16];
      std::snprintf(idx, sizeof(idx), "%04d", i);
      LabeledPattern p;
      p.id = std::string(kShapeNames[c]) + "/" + idx;
      p.label = c;
      p.modality = Modality::TimeSeries;
      p.payload = std::move(t);
      patterns.push_back(std::move(p));
    }
  }

  SplitPair out = stratified_split(patterns, options.train_fraction, seed);
  out.train.class_count = out.test.class_count = class_count;
  for (int c = 0; c < class_count; ++c) {
    out.train.class_names.push_back(kShapeNames[c]);
    out.test.class_names.push_back(kShapeNames[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

TrajectorySample load_trajectory_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("strokes") || !j["strokes"].is_array())
    throw LoadError(path.string() + ": expected object with a \"strokes\" array");
  TrajectorySample t;
  for (const auto& stroke : j["strokes"]) {
    if (!stroke.is_array()) throw LoadError(path.string() + ": stroke is not an array");
    auto& dst = t.strokes.emplace_back();
    for (const auto& pt : stroke) {
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
        throw LoadError(path.string() + ": point is not a [x, y] number pair");
      dst.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
  }
  try {
    validate_trajectory(t);
  } catch (const Error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return t;
}

void save_trajectory_json(const fs::path& path, const TrajectorySample& t) {
  json strokes = json::array();
  for (const auto& stroke : t.strokes) {
    json s = json::array();
    for (const auto& p : stroke) s.push_back({p.x, p.y});
    strokes.push_back(std::move(s));
  }
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot write");
  out << json{{"strokes", std::move(strokes)}} << "\n";
}

namespace {

// Skips PGM whitespace and '#' comments.
int next_pgm_token(std::istream& in, const fs::path& path) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF) throw LoadError(path.string() + ": truncated header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

ImageSample load_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0).get(m1);
  if (m0 != 'P' || m1 != '5') throw LoadError(path.string() + ": not a binary PGM (P5)");
  const int width = next_pgm_token(in, path);
  const int height = next_pgm_token(in, path);
  const int maxval = next_pgm_token(in, path);
  if (width <= 0 || height <= 0) throw LoadError(path.string() + ": bad dimensions");
  if (maxval != 255) throw LoadError(path.string() + ": expected maxval 255");

  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw LoadError(path.string() + ": truncated pixel data");

  ImageSample img;
  img.height = height;
  img.width = width;
  img.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] >= 128 ? 1.0f : 0.0f;
  return img;
}

void save_pgm(const fs::path& path, const ImageSample& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot write");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = img.pixels[i] > 0.5f ? 255 : 0;
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------
// directory loader
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

SplitPair load_dataset(const fs::path& root, DatasetFormat format) {
  const std::string ext = format == DatasetFormat::TrajectoryJson ? ".json" : ".pgm";
  const Modality modality =
      format == DatasetFormat::TrajectoryJson ? Modality::TimeSeries : Modality::Image;

  std::array<fs::path, 2> dirs = {root / "train", root / "test"};
  for (const auto& d : dirs)
    if (!fs::is_directory(d)) throw LoadError("missing directory " + d.string());

  // Label indices come from the sorted union of class directory names.
  std::set<std::string> class_set;
  std::array<std::vector<std::string>, 2> split_classes;
  for (int s = 0; s < 2; ++s) {
    split_classes[s] = sorted_subdirs(dirs[s]);
    class_set.insert(split_classes[s].begin(), split_classes[s].end());
  }
  const bool has_split_file = fs::exists(root / "split.json");
  if (!has_split_file && split_classes[0] != split_classes[1])
    throw SchemaError("inconsistent class directories between train and test under " +
                      root.string());

  std::vector<std::string> class_names(class_set.begin(), class_set.end());
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < class_names.size(); ++i)
    label_of[class_names[i]] = static_cast<int>(i);

  SplitPair out;
  out.train.name = "train";
  out.test.name = "test";
  int expect_h = -1, expect_w = -1;

  for (int s = 0; s < 2; ++s) {
    DatasetSplit& split = s == 0 ? out.train : out.test;
    for (const auto& cls : split_classes[s]) {
      for (const auto& file : sorted_files(dirs[s] / cls, ext)) {
        LabeledPattern p;
        p.id = cls + "/" + file.stem().string();
        p.label = label_of[cls];
        p.modality = modality;
        if (format == DatasetFormat::TrajectoryJson) {
          p.payload = load_trajectory_json(file);
        } else {
          ImageSample img = load_pgm(file);
          if (expect_h < 0) {
            expect_h = img.height;
            expect_w = img.width;
          } else if (img.height != expect_h || img.width != expect_w) {
            throw SchemaError(file.string() + ": image size differs from rest of dataset");
          }
          p.payload = std::move(img);
        }
        split.patterns.push_back(std::move(p));
      }
    }
  }
  if (out.train.patterns.empty() && out.test.patterns.empty())
    throw LoadError("empty dataset under " + root.string());

  if (has_split_file) {
    json j;
    std::ifstream in(root / "split.json");
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw SchemaError((root / "split.json").string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("train") || !j.contains("test"))
      throw SchemaError("split.json must contain \"train\" and \"test\" id lists");

    std::map<std::string, LabeledPattern> pool;
    for (auto& p : out.train.patterns) pool.emplace(p.id, std::move(p));
    for (auto& p : out.test.patterns) pool.emplace(p.id, std::move(p));
    out.train.patterns.clear();
    out.test.patterns.clear();

    std::set<std::string> seen;
    for (int s = 0; s < 2; ++s) {
      DatasetSplit& split = s == 0 ? out.train : out.test;
      for (const auto& id_json : j[s == 0 ? "train" : "test"]) {
        if (!id_json.is_string()) throw SchemaError("split.json ids must be strings");
        const std::string id = id_json.get<std::string>();
        auto it = pool.find(id);
        if (it == pool.end()) throw SchemaError("split.json references unknown id " + id);
        if (!seen.insert(id).second) throw SchemaError("split.json lists id twice: " + id);
        split.patterns.push_back(it->second);
      }
    }
    if (seen.size() != pool.size())
      throw SchemaError("split.json does not cover every pattern id");
  }

  auto by_id = [](const LabeledPattern& a, const LabeledPattern& b) { return a.id < b.id; };
  std::sort(out.train.patterns.begin(), out.train.patterns.end(), by_id);
  std::sort(out.test.patterns.begin(), out.test.patterns.end(), by_id);
  out.train.class_count = out.test.class_count = static_cast<int>(class_names.size());
  out.train.class_names = out.test.class_names = class_names;
  return out;
}

}  // namespace samm::datasets
