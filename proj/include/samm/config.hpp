#pragma once

// JSON run configuration: dataset source, augmentation, model dimensions,
// training schedule, output location. Parsing is strict; unknown keys are
// rejected with their full dotted path.

#include <cstdint>
#include <filesystem>
#include <string>

#include "samm/augment.hpp"
#include "samm/datasets.hpp"
#include "samm/model.hpp"
#include "samm/training.hpp"

namespace samm::config {

enum class DatasetSource { Synth, TrajectoryJson, ImageDir };

struct DatasetConfig {
  DatasetSource source = DatasetSource::Synth;
  std::filesystem::path root;  // for on-disk sources

  // synth parameters
  int synth_classes = 4;
  int synth_per_class = 60;
  datasets::SynthOptions synth;

  // augmentation
  int rotate_copies = 0;  // 0 disables rotation expansion (image sources only)
  double rotate_step_degrees = 6.0;
  double max_drop_fraction = 0.1;
  double ts_jitter_sigma = 0.0;

  Modality org_modality() const {
    return source == DatasetSource::ImageDir ? Modality::Image : Modality::TimeSeries;
  }
};

struct OutputConfig {
  std::filesystem::path dir = "out";
};

struct RunConfig {
  DatasetConfig dataset;
  model::ModelConfig model;  // class_count filled from the data at run time
  training::TrainConfig training;
  OutputConfig output;
};

// Throws SchemaError with a dotted field path on unknown keys, wrong types,
// or out-of-range values.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical serialization (sorted keys) used for hashing and snapshots.
std::string dump_run_config(const RunConfig& cfg);
// Hash of the data-defining sections (dataset + model dims); names the
// prepared-dataset directory.
std::string dataset_hash(const RunConfig& cfg);
// Hash of the full configuration; names run directories.
std::string config_hash(const RunConfig& cfg);

}  // namespace samm::config
