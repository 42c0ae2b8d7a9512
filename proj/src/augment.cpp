#include "samm/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iostream>
#include <numbers>
#include <random>
#include <set>

#include "samm/datasets.hpp"

namespace samm::augment {

// ---------------------------------------------------------------------------
// rasterization
// ---------------------------------------------------------------------------

namespace {

// [-1,1] -> [1, side-2]; the half-integer midpoint rounds down so the map is
// symmetric about the grid center.
int map_coord(double v, int side) {
  const double scaled = 1.0 + (v + 1.0) * 0.5 * (side - 3);
  const int p = static_cast<int>(std::ceil(scaled - 0.5));
  return std::clamp(p, 0, side - 1);
}

void draw_segment(ImageSample& img, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    img.pixels[static_cast<std::size_t>(y0) * img.width + x0] = 1.0f;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

ImageSample rasterize(const TrajectorySample& t, int side) {
  if (side < 8) throw ArgumentError("rasterize requires side >= 8");
  validate_trajectory(t);

  ImageSample img;
  img.height = img.width = side;
  img.pixels.assign(static_cast<std::size_t>(side) * side, 0.0f);
  for (const auto& stroke : t.strokes) {
    for (std::size_t i = 1; i < stroke.size(); ++i) {
      draw_segment(img, map_coord(stroke[i - 1].x, side), map_coord(stroke[i - 1].y, side),
                   map_coord(stroke[i].x, side), map_coord(stroke[i].y, side));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// contour tracing
// ---------------------------------------------------------------------------

namespace {

// Clockwise Moore neighborhood with y growing downward, starting north.
constexpr int kDr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDc[8] = {0, 1, 1, 1, 0, -1, -1, -1};

struct Grid {
  int h, w;
  const ImageSample* img;
  bool fg(int r, int c) const {
    return r >= 0 && r < h && c >= 0 && c < w &&
           img->pixels[static_cast<std::size_t>(r) * w + c] > 0.5f;
  }
};

}  // namespace

TrajectorySample trace_contour(const ImageSample& img) {
  // Structural checks only; the 0.5 threshold makes gray values harmless.
  if (img.height <= 0 || img.width <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * img.width)
    throw SchemaError("image dimensions do not match pixel count");
  const Grid g{img.height, img.width, &img};

  // Largest 8-connected component; ties go to the one holding the
  // lexicographically smallest (row, col) pixel, i.e. the first one found.
  std::vector<int> comp(static_cast<std::size_t>(g.h) * g.w, -1);
  int best = -1, best_size = 0, next_id = 0;
  for (int r = 0; r < g.h; ++r) {
    for (int c = 0; c < g.w; ++c) {
      if (!g.fg(r, c) || comp[static_cast<std::size_t>(r) * g.w + c] >= 0) continue;
      const int id = next_id++;
      int size = 0;
      std::deque<std::pair<int, int>> queue{{r, c}};
      comp[static_cast<std::size_t>(r) * g.w + c] = id;
      while (!queue.empty()) {
        auto [cr, cc] = queue.front();
        queue.pop_front();
        ++size;
        for (int k = 0; k < 8; ++k) {
          const int nr = cr + kDr[k], nc = cc + kDc[k];
          if (g.fg(nr, nc) && comp[static_cast<std::size_t>(nr) * g.w + nc] < 0) {
            comp[static_cast<std::size_t>(nr) * g.w + nc] = id;
            queue.push_back({nr, nc});
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best = id;
      }
    }
  }
  if (best < 0) throw DegenerateInputError("no foreground pixels");

  // Start pixel: topmost row, then leftmost column within the component.
  int sr = -1, sc = -1;
  for (int r = 0; r < g.h && sr < 0; ++r)
    for (int c = 0; c < g.w; ++c)
      if (comp[static_cast<std::size_t>(r) * g.w + c] == best) {
        sr = r;
        sc = c;
        break;
      }

  TrajectorySample out;
  auto& pts = out.strokes.emplace_back();
  pts.push_back({static_cast<double>(sc), static_cast<double>(sr)});
  if (best_size == 1) return out;

  // Moore-neighbor tracing. The initial backtrack is the west neighbor, which
  // is background because the start pixel is leftmost in the topmost row.
  int cr = sr, cc = sc;
  int br = sr, bc = sc - 1;
  const int b0r = br, b0c = bc;
  // The walk state is (pixel, backtrack). One-pixel-thick shapes can make the
  // initial state transient: the cycle re-enters the start pixel from another
  // backtrack, so closure is also detected by the first repeated state.
  std::set<std::array<int, 4>> seen;
  const long cap = 8L * best_size + 8;
  for (long iter = 0;; ++iter) {
    if (iter > cap) throw Error("contour trace failed to close");
    int start_k = 0;
    for (int k = 0; k < 8; ++k)
      if (cr + kDr[k] == br && cc + kDc[k] == bc) {
        start_k = k;
        break;
      }
    int mr = -1, mc = -1, pr = br, pc = bc;
    for (int j = 1; j <= 8; ++j) {
      const int k = (start_k + j) % 8;
      const int nr = cr + kDr[k], nc = cc + kDc[k];
      if (g.fg(nr, nc)) {
        mr = nr;
        mc = nc;
        break;
      }
      pr = nr;
      pc = nc;
    }
    // Stop on re-entering the start pixel from the starting backtrack.
    if (mr == sr && mc == sc && pr == b0r && pc == b0c) break;
    if (!seen.insert({mr, mc, pr, pc}).second) break;
    pts.push_back({static_cast<double>(mc), static_cast<double>(mr)});
    br = pr;
    bc = pc;
    cr = mr;
    cc = mc;
  }
  return out;
}

TrajectorySample contour_series(const ImageSample& img, int steps) {
  if (steps < 2) throw ArgumentError("contour_series requires steps >= 2");
  const TrajectorySample contour = trace_contour(img);
  const auto& pts = contour.strokes[0];
  if (pts.size() < 8)
    throw DegenerateInputError("contour has fewer than 8 boundary pixels");

  // Closed-curve resampling: segment i -> i+1 plus the wrap-around edge.
  const std::size_t m = pts.size();
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Vec2& a = pts[i];
    const Vec2& b = pts[(i + 1) % m];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double perimeter = cum[m];
  if (perimeter == 0.0) throw DegenerateInputError("contour has zero perimeter");

  TrajectorySample series;
  auto& dst = series.strokes.emplace_back();
  dst.reserve(steps);
  std::size_t seg = 0;
  for (int k = 0; k < steps; ++k) {
    const double s = perimeter * k / steps;
    while (seg + 1 < m && cum[seg + 1] < s) ++seg;
    const Vec2& a = pts[seg];
    const Vec2& b = pts[(seg + 1) % m];
    const double len = cum[seg + 1] - cum[seg];
    const double u = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    dst.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
  }
  return datasets::normalize_trajectory(series);
}

// ---------------------------------------------------------------------------
// rotation augmentation
// ---------------------------------------------------------------------------

ImageSample rotate_mask(const ImageSample& img, double degrees) {
  validate_image(img);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cy = (img.height - 1) * 0.5, cx = (img.width - 1) * 0.5;

  ImageSample out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.assign(img.pixels.size(), 0.0f);
  // Inverse map with nearest-neighbor lookup keeps the mask binary.
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const double y = r - cy, x = c - cx;
      const long src_c = std::lround(cx + ct * x + st * y);
      const long src_r = std::lround(cy - st * x + ct * y);
      if (src_r >= 0 && src_r < img.height && src_c >= 0 && src_c < img.width &&
          img.pixels[static_cast<std::size_t>(src_r) * img.width + src_c] > 0.5f)
        out.pixels[static_cast<std::size_t>(r) * out.width + c] = 1.0f;
    }
  }
  return out;
}

DatasetSplit rotate_augment(const DatasetSplit& split, int copies, double step_degrees) {
  if (copies < 1) throw ArgumentError("rotate_augment requires copies >= 1");
  DatasetSplit out;
  out.name = split.name;
  out.class_count = split.class_count;
  out.class_names = split.class_names;
  out.patterns.reserve(split.patterns.size() * copies);
  for (const auto& p : split.patterns) {
    if (p.modality != Modality::Image)
      throw ArgumentError("rotate_augment expects image patterns, got " + p.id);
    for (int k = 0; k < copies; ++k) {
      LabeledPattern q;
      q.id = p.id + "#rot" + std::to_string(k);
      q.label = p.label;
      q.modality = Modality::Image;
      q.payload = k == 0 ? p.image() : rotate_mask(p.image(), k * step_degrees);
      out.patterns.push_back(std::move(q));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// paired-set construction
// ---------------------------------------------------------------------------

namespace {

// Stable per-pattern seed so jitter does not depend on processing order.
std::uint32_t jitter_seed_for(const std::string& id, std::uint64_t base) {
  std::uint64_t h = 1469598103934665603ull ^ base;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<std::uint32_t>(h ^ (h >> 32));
}

TrajectorySample jitter_trajectory(const TrajectorySample& t, double sigma, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  TrajectorySample out;
  for (const auto& stroke : t.strokes) {
    auto& dst = out.strokes.emplace_back();
    dst.reserve(stroke.size());
    for (const auto& p : stroke) dst.push_back({p.x + noise(rng), p.y + noise(rng)});
  }
  return datasets::normalize_trajectory(out);
}

}  // namespace

BuildPairsResult build_pairs(const DatasetSplit& split, const AugmentConfig& cfg) {
  if (cfg.image_side < 8) throw ArgumentError("image_side must be >= 8");
  if (cfg.time_steps < 2) throw ArgumentError("time_steps must be >= 2");

  BuildPairsResult result;
  for (const auto& p : split.patterns) {
    try {
      PairedPattern pair;
      pair.id = p.id;
      pair.label = p.label;
      pair.org_modality = p.modality;
      if (p.modality == Modality::TimeSeries) {
        TrajectorySample norm = datasets::normalize_trajectory(p.trajectory());
        pair.image = rasterize(norm, cfg.image_side);
        if (cfg.ts_jitter_sigma > 0.0)
          norm = jitter_trajectory(norm, cfg.ts_jitter_sigma,
                                   jitter_seed_for(p.id, cfg.jitter_seed));
        pair.trajectory = std::move(norm);
        pair.provenance = "rasterize(side=" + std::to_string(cfg.image_side) + ")";
        if (cfg.ts_jitter_sigma > 0.0) pair.provenance += "+jitter";
      } else {
        pair.trajectory = contour_series(p.image(), cfg.time_steps);
        pair.image = p.image();
        pair.provenance = "contour_series(steps=" + std::to_string(cfg.time_steps) + ")";
      }
      result.pairs.push_back(std::move(pair));
    } catch (const DegenerateInputError& e) {
      std::cerr << "warning: dropping " << p.id << ": " << e.what() << "\n";
      ++result.dropped;
      result.dropped_ids.push_back(p.id);
    }
  }

  if (!split.patterns.empty()) {
    const double frac = static_cast<double>(result.dropped) / split.patterns.size();
    if (frac > cfg.max_drop_fraction)
      throw DataQualityError("dropped " + std::to_string(result.dropped) + " of " +
                             std::to_string(split.patterns.size()) +
                             " patterns; exceeds tolerated fraction");
  }
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const PairedPattern& a, const PairedPattern& b) { return a.id < b.id; });
  return result;
}

}  // namespace samm::augment
