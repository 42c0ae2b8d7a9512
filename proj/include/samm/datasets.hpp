#pragma once

// Loading, generation, normalization, splitting, and persistence of labeled
// patterns in either modality. Corpus-agnostic: a trajectory-JSON layout and
// a PGM image layout are the two on-disk formats, plus parametric stroke
// templates for synthetic desk-scale datasets.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "samm/types.hpp"

namespace samm::datasets {

struct SplitPair {
  DatasetSplit train;
  DatasetSplit test;
};

enum class DatasetFormat { TrajectoryJson, ImageDir };

// Layout: <root>/{train,test}/<class_name>/<id>.{json,pgm}. Class names
// sorted lexicographically define label indices. An optional <root>/split.json
// ({"train": [ids], "test": [ids]}) reassigns patterns between the splits and
// must partition the full id set.
SplitPair load_dataset(const std::filesystem::path& root, DatasetFormat format);

// Per-class split with train proportions within +-1 pattern of the fraction.
// Identical seed gives identical output.
SplitPair stratified_split(const std::vector<LabeledPattern>& patterns, double train_fraction,
                           std::uint64_t seed);

struct SynthOptions {
  double noise_sigma = 0.02;
  double max_rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double train_fraction = 0.8;
};

// class_count in [2,10] parametric stroke templates, per-sample jitter,
// stratified (train_fraction)/(1-train_fraction) split.
SplitPair synth_shapes(int class_count, int per_class, std::uint64_t seed,
                       const SynthOptions& options = {});

// The noiseless template behind synth class `shape_index` (0..9).
TrajectorySample shape_template(int shape_index);
const char* shape_name(int shape_index);

// Centered at the centroid, isotropically scaled so max(|x|,|y|) = 1.
TrajectorySample normalize_trajectory(const TrajectorySample& t);

// (3, steps) channel-major grid: x, y, pen-down flag. Strokes are
// concatenated and resampled uniformly by cumulative arc length; the first
// sample of each stroke after the first carries flag 0.
std::vector<float> to_tensor(const TrajectorySample& t, int steps);

// File helpers shared by the loaders, the prepare command, and test fixtures.
TrajectorySample load_trajectory_json(const std::filesystem::path& path);
void save_trajectory_json(const std::filesystem::path& path, const TrajectorySample& t);
ImageSample load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const ImageSample& img);

}  // namespace samm::datasets
