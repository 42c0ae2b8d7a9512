#pragma once

// Deterministic cross-modality derivation: every pattern gets a counterpart
// view in the other modality. Trajectories are rasterized into binary images;
// images are reduced to their outer contour and resampled into a closed
// trajectory. Rotation augmentation and paired-set construction live here too.

#include <cstdint>
#include <string>
#include <vector>

#include "samm/types.hpp"

namespace samm::augment {

struct AugmentConfig {
  int image_side = 32;
  int time_steps = 50;
  double max_drop_fraction = 0.1;  // tolerated fraction of degenerate patterns
  // Gaussian coordinate noise injected into the trajectory view only; the
  // image view stays clean. Models asymmetric sensor noise between modalities.
  double ts_jitter_sigma = 0.0;
  std::uint64_t jitter_seed = 0;
};

// Normalized [-1,1]^2 coordinates onto the central (side-2)^2 region, one
// pixel of margin, y growing downward. Strokes drawn with integer Bresenham
// segments. Ties in the coordinate map round toward -inf.
ImageSample rasterize(const TrajectorySample& t, int side);

// Outer boundary of the largest 8-connected foreground component (threshold
// 0.5), traced clockwise from the topmost-then-leftmost pixel with
// Moore-neighbor tracing. Points are (x=column, y=row). A single-pixel
// component yields a 1-point contour; callers reject short contours.
TrajectorySample trace_contour(const ImageSample& img);

// trace_contour + uniform closed-curve arc-length resampling to `steps`
// points + centroid/extent normalization. Contours shorter than 8 boundary
// pixels are degenerate.
TrajectorySample contour_series(const ImageSample& img, int steps);

// Nearest-neighbor rotation about the pixel-grid center. Exposed for tests.
ImageSample rotate_mask(const ImageSample& img, double degrees);

// `copies` rotated copies of every image pattern at multiples of
// step_degrees; copy 0 is the bit-exact original. Ids gain "#rot<k>".
DatasetSplit rotate_augment(const DatasetSplit& split, int copies, double step_degrees);

struct BuildPairsResult {
  std::vector<PairedPattern> pairs;  // ordered by id
  int dropped = 0;
  std::vector<std::string> dropped_ids;
};

// Derives the counterpart view for every pattern in the split. Degenerate
// patterns are dropped with a warning; more than max_drop_fraction dropped
// aborts with a data-quality error.
BuildPairsResult build_pairs(const DatasetSplit& split, const AugmentConfig& cfg);

}  // namespace samm::augment
