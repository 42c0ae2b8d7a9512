#pragma once

// Inference-time reporting: accuracy and confusion, embedding distance and
// gate statistics, the ablation table, gate-bucket sampling, embedding
// export, and checkpoint-vs-checkpoint comparison.

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "samm/model.hpp"
#include "samm/training.hpp"

namespace samm::eval {

struct PredictionDetail {
  std::string id;
  int label = 0;
  int predicted = 0;
  float alpha = std::numeric_limits<float>::quiet_NaN();  // NaN for ungated variants
  double l_fd = std::numeric_limits<double>::quiet_NaN();
};

// Eval mode, running statistics, batched.
std::vector<PredictionDetail> predict(model::ModelBundle& bundle,
                                      const training::TensorSet& data);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
  double mean_l_fd = std::numeric_limits<double>::quiet_NaN();
  double mean_alpha = std::numeric_limits<double>::quiet_NaN();
  std::array<int, 11> alpha_histogram{};  // buckets at 0.0, 0.1, ..., 1.0
  int count = 0;
};

// Bucket index for a gate value: nearest 0.1 with half-ties rounding down.
int alpha_bucket(double alpha);

EvalReport evaluate(model::ModelBundle& bundle, const training::TensorSet& data);

// ---------------------------------------------------------------------------
// ablation table
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string label;
  model::Variant variant;
  training::Ablation ablation;
  EvalReport report;
  std::vector<training::EpochRecord> records;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::uint64_t seed = 0;
};

// Six configurations sharing one seed and schedule: the full model, the two
// loss ablations, and the three single-network baselines.
AblationTable run_ablation_suite(const training::TensorSet& train,
                                 const training::TensorSet& test,
                                 const model::ModelConfig& model_cfg,
                                 const training::TrainConfig& train_cfg);

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);
void write_ablation_json(const AblationTable& table, const training::TrainConfig& train_cfg,
                         const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// gate inspection, embedding export, run comparison
// ---------------------------------------------------------------------------

struct AlphaBucketEntry {
  std::string id;
  float alpha = 0.0f;
  int label = 0;
  int predicted = 0;
  bool misclassified = false;
};

struct AlphaBucketReport {
  std::array<std::vector<AlphaBucketEntry>, 11> buckets;
  int per_bucket = 0;
  std::uint64_t seed = 0;
};

// Up to per_bucket patterns sampled per gate bucket, seeded.
AlphaBucketReport alpha_report(model::ModelBundle& bundle, const training::TensorSet& data,
                               int per_bucket, std::uint64_t seed);

// CSV with one row per (pattern, view): id, modality tag, label, e0..e{D-1}.
// Floats are printed with enough digits to round-trip exactly.
void export_embeddings(model::ModelBundle& bundle, const training::TensorSet& data,
                       const std::filesystem::path& path);

struct ComparisonRow {
  std::string id;
  int label = 0;
  int pred_a = 0;
  int pred_b = 0;
  float alpha_a = std::numeric_limits<float>::quiet_NaN();
};

struct ComparisonReport {
  std::vector<ComparisonRow> a_only_correct;  // fixed by A relative to B
  std::vector<ComparisonRow> b_only_correct;
  int both_correct = 0;
  int both_wrong = 0;
};

ComparisonReport compare_predictions(model::ModelBundle& bundle_a, model::ModelBundle& bundle_b,
                                     const training::TensorSet& test);

}  // namespace samm::eval
