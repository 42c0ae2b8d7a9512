#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace samm {

// ---------------------------------------------------------------------------
// Errors. Every failure mode the toolkit reports maps to one of these; the
// CLI translates them to exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class LoadError : public Error {  // missing/malformed input files
 public:
  using Error::Error;
};

class SchemaError : public Error {  // config or dataset layout violations
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {  // corrupt container
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class DataQualityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Modalities and payload types
// ---------------------------------------------------------------------------

enum class Modality { TimeSeries, Image };

inline const char* modality_name(Modality m) {
  return m == Modality::TimeSeries ? "time_series" : "image";
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Ordered pen strokes; each stroke is one pen-down segment of >= 2 points.
struct TrajectorySample {
  std::vector<std::vector<Vec2>> strokes;

  std::size_t point_count() const {
    std::size_t n = 0;
    for (const auto& s : strokes) n += s.size();
    return n;
  }
};

// Validates the trajectory invariants; throws DegenerateInputError.
void validate_trajectory(const TrajectorySample& t);

// Fixed-size single-channel raster, row-major, values in [0, 1].
struct ImageSample {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width

  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
};

void validate_image(const ImageSample& img);

using Payload = std::variant<TrajectorySample, ImageSample>;

inline Modality payload_modality(const Payload& p) {
  return std::holds_alternative<TrajectorySample>(p) ? Modality::TimeSeries : Modality::Image;
}

struct LabeledPattern {
  std::string id;
  int label = 0;
  Modality modality = Modality::TimeSeries;
  Payload payload;

  const TrajectorySample& trajectory() const { return std::get<TrajectorySample>(payload); }
  const ImageSample& image() const { return std::get<ImageSample>(payload); }
};

struct DatasetSplit {
  std::string name;  // "train" or "test"
  std::vector<LabeledPattern> patterns;
  int class_count = 0;
  std::vector<std::string> class_names;  // index == label; may be empty for synthetic data
};

// Unit of training: the original pattern plus its derived second modality.
// Exactly one trajectory and one image per pair; org_modality says which one
// is the original.
struct PairedPattern {
  std::string id;
  int label = 0;
  Modality org_modality = Modality::TimeSeries;
  TrajectorySample trajectory;
  ImageSample image;
  std::string provenance;  // how x_aug was derived

  Modality aug_modality() const {
    return org_modality == Modality::TimeSeries ? Modality::Image : Modality::TimeSeries;
  }
};

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace samm
