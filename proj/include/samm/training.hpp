#pragma once

// Two-step alternating optimization. Step one updates only the modality
// discriminator on embeddings computed with frozen encoders; step two updates
// encoders, gating, and classifier against the classification, feature
// distance, and adversarial terms with the discriminator frozen. Frozen
// means frozen: the untouched group is run in Eval mode and its parameters,
// optimizer moments, and running statistics stay bit-identical.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samm/losses.hpp"
#include "samm/model.hpp"
#include "samm/types.hpp"

namespace samm::training {

enum class Ablation { None, NoCmd, NoFd };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct TrainConfig {
  int epochs = 400;
  double learning_rate = 1e-4;
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::None;
  int checkpoint_every = 0;                // 0: only the final checkpoint
  std::filesystem::path checkpoint_dir;    // empty: no checkpoints written
  std::optional<float> force_alpha;        // test hook, bypasses the gating net

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double l_cls = 0.0;
  double l_fd = 0.0;
  double l_adv = 0.0;
  double l_disc = 0.0;
  double disc_accuracy = 0.0;
  double train_accuracy = 0.0;
  double seconds = 0.0;
  bool deterministic = true;  // the engine is single-threaded throughout
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Paired patterns flattened into network-ready buffers:
//   ts  (n, steps, 3) channels-last, img (n, side, side, 1).
struct TensorSet {
  Modality org_modality = Modality::TimeSeries;
  int class_count = 0;
  int steps = 0;
  int side = 0;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<float> ts;
  std::vector<float> img;

  int size() const { return static_cast<int>(labels.size()); }
  const float* org_data() const { return org_modality == Modality::TimeSeries ? ts.data() : img.data(); }
  const float* aug_data() const { return org_modality == Modality::TimeSeries ? img.data() : ts.data(); }
  int org_dim() const { return org_modality == Modality::TimeSeries ? steps * 3 : side * side; }
  int aug_dim() const { return org_modality == Modality::TimeSeries ? side * side : steps * 3; }
};

// All pairs must share one original modality; mixed direction is rejected.
TensorSet tensorize(const std::vector<PairedPattern>& pairs, int class_count, int steps, int side);

// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(model::ModelBundle& bundle, const TrainConfig& cfg);

  struct DiscResult {
    double l_disc = 0.0;
    int correct = 0;  // out of 2 * batch
  };
  struct MainResult {
    double l_cls = 0.0, l_fd = 0.0, l_adv = 0.0;
    int correct = 0;  // out of batch
  };

  // Discriminator update on one batch; encoders run frozen in Eval mode.
  // No-op (returns zeros) when the variant lacks a discriminator or the
  // ablation disables it.
  DiscResult step_discriminator(const TensorSet& data, std::span<const int> batch);
  // Encoder/gating/classifier update; discriminator frozen in Eval mode.
  MainResult step_main(const TensorSet& data, std::span<const int> batch);

  // Seeded shuffle each epoch, fixed-size batches, trailing batch of one
  // dropped (batch statistics need at least two rows).
  std::vector<EpochRecord> fit(const TensorSet& train, const EpochCallback& callback = {});

 private:
  void forward_embeddings(const TensorSet& data, std::span<const int> batch, nn::Mode mode);
  void gather(const TensorSet& data, std::span<const int> batch);
  void assemble_cmd_input(int n);

  model::ModelBundle& bundle_;
  TrainConfig cfg_;

  std::vector<float> bts_, bimg_;    // gathered batch views
  std::vector<int> blabels_;
  std::vector<float> f_org_, f_aug_, fused_, alpha_;
  std::vector<float> cmd_in_, cmd_din_;
  std::vector<float> dlogits_, df_, df_org_, df_aug_, dalpha_;
  std::vector<float> logits_;
};

// Builds a fresh bundle and trains it. Baseline variants train with the
// classification loss only.
struct FitResult {
  model::ModelBundle bundle;
  std::vector<EpochRecord> records;
};

FitResult fit(const TensorSet& train, const model::ModelConfig& model_cfg,
              const TrainConfig& train_cfg, const EpochCallback& callback = {});

}  // namespace samm::training
