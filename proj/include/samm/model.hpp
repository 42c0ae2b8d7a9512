#pragma once

// Network definitions and the bundle that ties them together: modality
// encoders into a shared embedding space, a conditional modality
// discriminator, a gating network producing the fusion coefficient, and the
// classifier head. Also the on-disk checkpoint format.
//
// Batch activation layout is channels-last throughout (see nn.hpp). The
// public single-sample entry points accept the (3, steps) channel-major
// trajectory tensor and row-major side*side images, converting internally.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "samm/nn.hpp"
#include "samm/types.hpp"

namespace samm::model {

enum class Variant { Proposed, ImageOnly, TsOnly, Concat };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  int class_count = 0;
  int time_steps = 50;
  int image_side = 32;
  int embedding_dim = 512;
  Variant variant = Variant::Proposed;

  void validate() const;
  int ts_input_dim() const { return 3 * time_steps; }
  int img_input_dim() const { return image_side * image_side; }
};

// Three halvings with floor, as produced by the pooling chain.
int pooled_len(int len);
// Flattened stem widths: 128 channels after the third conv block.
int ts_flat_dim(int steps);
int img_flat_dim(int side);

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

// Conv(3)->BN->ReLU->Pool(2) stacked three times, channels 32/64/128.
class ConvStem1d {
 public:
  ConvStem1d(const std::string& prefix, int in_ch, int length, std::mt19937& rng);
  ~ConvStem1d();  // Block is incomplete here

  // Returns (n, flat_dim) activations owned by the stem.
  const float* forward(const float* x, int n, nn::Mode mode);
  void backward(const float* dflat, float* dx, int n, bool accumulate_params);

  int flat_dim() const { return flat_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  struct Block;
  std::vector<std::unique_ptr<Block>> blocks_;
  int flat_;
};

class ConvStem2d {
 public:
  ConvStem2d(const std::string& prefix, int in_ch, int side, std::mt19937& rng);
  ~ConvStem2d();

  const float* forward(const float* x, int n, nn::Mode mode);
  void backward(const float* dflat, float* dx, int n, bool accumulate_params);

  int flat_dim() const { return flat_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  struct Block;
  std::vector<std::unique_ptr<Block>> blocks_;
  int flat_;
};

// Hidden layers are Linear->BN->ReLU; optional plain output Linear with
// optional sigmoid.
class MlpTower {
 public:
  MlpTower(const std::string& prefix, int in_dim, std::vector<int> hidden, int out_dim,
           bool sigmoid_out, std::mt19937& rng);
  ~MlpTower();

  const float* forward(const float* x, int n, nn::Mode mode);
  void backward(const float* dy, float* dx, int n, bool accumulate_params);

  int out_dim() const { return out_dim_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  struct Hidden;
  std::vector<std::unique_ptr<Hidden>> hidden_;
  std::unique_ptr<nn::Linear> out_;
  nn::Sigmoid sigmoid_;
  bool sigmoid_out_;
  int out_dim_;
  std::vector<float> y_out_;
  std::vector<float> scratch_;
};

// ---------------------------------------------------------------------------
// networks
// ---------------------------------------------------------------------------

// Stem + FC(512) BN ReLU + FC(512) BN ReLU; the second ReLU output is the
// embedding.
class Encoder {
 public:
  Encoder(const std::string& prefix, Modality modality, const ModelConfig& cfg,
          std::mt19937& rng);

  const float* forward(const float* x, int n, nn::Mode mode);
  void backward(const float* demb, int n, bool accumulate_params);

  Modality modality() const { return modality_; }
  int input_dim() const { return input_dim_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  Modality modality_;
  int input_dim_;
  std::unique_ptr<ConvStem1d> stem1d_;
  std::unique_ptr<ConvStem2d> stem2d_;
  MlpTower tower_;
  std::vector<float> dflat_;
};

// Two conv stems of its own over both views, concatenated, then an FC tower
// to a sigmoid scalar per sample. Weights are independent of the encoders.
class GatingNet {
 public:
  GatingNet(const ModelConfig& cfg, std::mt19937& rng);

  // x_img: (n, side*side), x_ts: (n, steps*3); returns (n) alphas.
  const float* forward(const float* x_img, const float* x_ts, int n, nn::Mode mode);
  void backward(const float* dalpha, int n, bool accumulate_params);

  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);
  nn::Param& final_bias();  // saturation tests poke this

 private:
  ConvStem2d img_stem_;
  ConvStem1d ts_stem_;
  MlpTower tower_;
  std::vector<float> concat_;
  std::vector<float> dconcat_;
};

// FC(512) BN ReLU twice over [embedding ; one-hot condition], sigmoid scalar.
class Cmd {
 public:
  Cmd(const ModelConfig& cfg, std::mt19937& rng);

  // x: (n, embedding_dim + class_count) assembled by the caller.
  const float* forward(const float* x, int n, nn::Mode mode);
  void backward(const float* dout, float* dx, int n, bool accumulate_params);

  int input_dim() const { return input_dim_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  int input_dim_;
  MlpTower tower_;
};

// FC(512) BN ReLU + FC(class_count) logits.
class Classifier {
 public:
  Classifier(const ModelConfig& cfg, int in_dim, std::mt19937& rng);

  const float* forward(const float* f, int n, nn::Mode mode);
  void backward(const float* dlogits, float* df, int n, bool accumulate_params);

  int in_dim() const { return in_dim_; }
  void collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers);

 private:
  int in_dim_;
  MlpTower tower_;
};

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

struct ModelBundle {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::string config_snapshot;  // training config as serialized JSON, may be empty

  std::unique_ptr<Encoder> encoder_ts;
  std::unique_ptr<Encoder> encoder_img;
  std::unique_ptr<Cmd> cmd;
  std::unique_ptr<GatingNet> gating;
  std::unique_ptr<Classifier> classifier;

  nn::Adam adam_main;
  nn::Adam adam_cmd;

  static ModelBundle create(const ModelConfig& cfg, std::uint64_t seed);

  Encoder& encoder_for(Modality m);
  // Everything the main training step updates (encoders, gating, classifier).
  std::vector<nn::Param*> main_params();
  std::vector<nn::Param*> cmd_params();
  std::vector<nn::Param*> all_params();
  std::vector<nn::Buffer*> all_buffers();
  std::vector<nn::Param*> params_of(const std::string& net);  // by prefix
};

// α is a probability by construction.
struct GateValue {
  explicit GateValue(double a);
  double value;
};

// Single-sample convenience entry points (Eval mode, running statistics).
std::vector<float> encoder_forward(ModelBundle& bundle, Modality modality,
                                   std::span<const float> x);
std::vector<float> gate_combine(std::span<const float> f_org, std::span<const float> f_aug,
                                GateValue alpha);
GateValue gating_forward(ModelBundle& bundle, Modality org_modality,
                         std::span<const float> x_org, std::span<const float> x_aug);
std::vector<float> classifier_forward(ModelBundle& bundle, std::span<const float> f);
float cmd_forward(ModelBundle& bundle, std::span<const float> f,
                  std::span<const float> condition_one_hot);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
//
// A checkpoint is a directory holding manifest.json (dimensions, seed, epoch,
// optimizer step counters, and a name/shape/offset table) plus params.bin
// (all arrays as little-endian float32 in manifest order). Parameters,
// optimizer moments, and running statistics are all persisted, so training
// resumes bit-exactly and identical runs serialize identically.

void save_checkpoint(ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_checkpoint(const std::filesystem::path& dir,
                            const ModelConfig* expect = nullptr);

}  // namespace samm::model
