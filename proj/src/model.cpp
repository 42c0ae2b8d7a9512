#include "samm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace samm::model {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Proposed: return "proposed";
    case Variant::ImageOnly: return "image_only";
    case Variant::TsOnly: return "ts_only";
    case Variant::Concat: return "concat";
  }
  throw ArgumentError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "proposed") return Variant::Proposed;
  if (name == "image_only") return Variant::ImageOnly;
  if (name == "ts_only") return Variant::TsOnly;
  if (name == "concat") return Variant::Concat;
  throw ArgumentError("unknown variant name: " + name);
}

void ModelConfig::validate() const {
  if (class_count < 2) throw ArgumentError("class_count must be >= 2");
  if (time_steps < 8) throw ArgumentError("time_steps must be >= 8");
  if (image_side < 8) throw ArgumentError("image_side must be >= 8");
  if (embedding_dim < 1) throw ArgumentError("embedding_dim must be >= 1");
}

int pooled_len(int len) { return len / 2 / 2 / 2; }
int ts_flat_dim(int steps) { return 128 * pooled_len(steps); }
int img_flat_dim(int side) { return 128 * pooled_len(side) * pooled_len(side); }

// ---------------------------------------------------------------------------
// ConvStem1d
// ---------------------------------------------------------------------------

struct ConvStem1d::Block {
  nn::Conv1d conv;
  nn::BatchNorm bn;
  nn::Relu relu;
  nn::MaxPool1d pool;
  int in_len, out_ch;
  std::vector<float> y_conv, y_act, y_pool, d_act, d_conv, d_pool;

  Block(const std::string& prefix, int idx, int in_ch, int ch, int len, std::mt19937& rng)
      : conv(prefix + ".conv" + std::to_string(idx), in_ch, ch, len, rng),
        bn(prefix + ".bn" + std::to_string(idx), ch),
        pool(ch, len),
        in_len(len),
        out_ch(ch) {}
};

ConvStem1d::~ConvStem1d() = default;

ConvStem1d::ConvStem1d(const std::string& prefix, int in_ch, int length, std::mt19937& rng) {
  const int channels[3] = {32, 64, 128};
  int len = length, ic = in_ch;
  for (int i = 0; i < 3; ++i) {
    blocks_.push_back(std::make_unique<Block>(prefix, i + 1, ic, channels[i], len, rng));
    len = blocks_.back()->pool.out_len();
    ic = channels[i];
  }
  flat_ = 128 * len;
}

const float* ConvStem1d::forward(const float* x, int n, nn::Mode mode) {
  const float* cur = x;
  for (auto& b : blocks_) {
    const std::size_t act = static_cast<std::size_t>(n) * b->in_len * b->out_ch;
    b->y_conv.resize(act);
    b->y_act.resize(act);
    b->y_pool.resize(static_cast<std::size_t>(n) * b->pool.out_len() * b->out_ch);
    b->conv.forward(cur, b->y_conv.data(), n);
    b->bn.forward(b->y_conv.data(), b->y_act.data(), n * b->in_len, mode);
    b->relu.forward(b->y_act.data(), b->y_act.data(), act);
    b->pool.forward(b->y_act.data(), b->y_pool.data(), n);
    cur = b->y_pool.data();
  }
  return cur;
}

void ConvStem1d::backward(const float* dflat, float* dx, int n, bool accumulate_params) {
  const float* dcur = dflat;
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    Block& b = *blocks_[i];
    const std::size_t act = static_cast<std::size_t>(n) * b.in_len * b.out_ch;
    b.d_act.resize(act);
    b.pool.backward(dcur, b.d_act.data(), n);
    b.relu.backward(b.d_act.data(), b.d_act.data(), act);
    b.d_conv.resize(act);
    b.bn.backward(b.d_act.data(), b.d_conv.data(), n * b.in_len, accumulate_params);
    float* dprev = dx;
    if (i > 0) {
      Block& prev = *blocks_[i - 1];
      prev.d_pool.resize(static_cast<std::size_t>(n) * prev.pool.out_len() * prev.out_ch);
      dprev = prev.d_pool.data();
    }
    b.conv.backward(b.d_conv.data(), dprev, n, accumulate_params);
    dcur = dprev;
  }
}

void ConvStem1d::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  for (auto& b : blocks_) {
    params.push_back(&b->conv.weight);
    params.push_back(&b->conv.bias);
    params.push_back(&b->bn.gamma);
    params.push_back(&b->bn.beta);
    buffers.push_back(&b->bn.running_mean);
    buffers.push_back(&b->bn.running_var);
  }
}

// ---------------------------------------------------------------------------
// ConvStem2d
// ---------------------------------------------------------------------------

struct ConvStem2d::Block {
  nn::Conv2d conv;
  nn::BatchNorm bn;
  nn::Relu relu;
  nn::MaxPool2d pool;
  int in_h, in_w, out_ch;
  std::vector<float> y_conv, y_act, y_pool, d_act, d_conv, d_pool;

  Block(const std::string& prefix, int idx, int in_ch, int ch, int h, int w, std::mt19937& rng)
      : conv(prefix + ".conv" + std::to_string(idx), in_ch, ch, h, w, rng),
        bn(prefix + ".bn" + std::to_string(idx), ch),
        pool(ch, h, w),
        in_h(h),
        in_w(w),
        out_ch(ch) {}
};

ConvStem2d::~ConvStem2d() = default;

ConvStem2d::ConvStem2d(const std::string& prefix, int in_ch, int side, std::mt19937& rng) {
  const int channels[3] = {32, 64, 128};
  int h = side, w = side, ic = in_ch;
  for (int i = 0; i < 3; ++i) {
    blocks_.push_back(std::make_unique<Block>(prefix, i + 1, ic, channels[i], h, w, rng));
    h = blocks_.back()->pool.out_h();
    w = blocks_.back()->pool.out_w();
    ic = channels[i];
  }
  flat_ = 128 * h * w;
}

const float* ConvStem2d::forward(const float* x, int n, nn::Mode mode) {
  const float* cur = x;
  for (auto& b : blocks_) {
    const std::size_t act = static_cast<std::size_t>(n) * b->in_h * b->in_w * b->out_ch;
    b->y_conv.resize(act);
    b->y_act.resize(act);
    b->y_pool.resize(static_cast<std::size_t>(n) * b->pool.out_h() * b->pool.out_w() * b->out_ch);
    b->conv.forward(cur, b->y_conv.data(), n);
    b->bn.forward(b->y_conv.data(), b->y_act.data(), n * b->in_h * b->in_w, mode);
    b->relu.forward(b->y_act.data(), b->y_act.data(), act);
    b->pool.forward(b->y_act.data(), b->y_pool.data(), n);
    cur = b->y_pool.data();
  }
  return cur;
}

void ConvStem2d::backward(const float* dflat, float* dx, int n, bool accumulate_params) {
  const float* dcur = dflat;
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    Block& b = *blocks_[i];
    const std::size_t act = static_cast<std::size_t>(n) * b.in_h * b.in_w * b.out_ch;
    b.d_act.resize(act);
    b.pool.backward(dcur, b.d_act.data(), n);
    b.relu.backward(b.d_act.data(), b.d_act.data(), act);
    b.d_conv.resize(act);
    b.bn.backward(b.d_act.data(), b.d_conv.data(), n * b.in_h * b.in_w, accumulate_params);
    float* dprev = dx;
    if (i > 0) {
      Block& prev = *blocks_[i - 1];
      prev.d_pool.resize(static_cast<std::size_t>(n) * prev.pool.out_h() * prev.pool.out_w() *
                         prev.out_ch);
      dprev = prev.d_pool.data();
    }
    b.conv.backward(b.d_conv.data(), dprev, n, accumulate_params);
    dcur = dprev;
  }
}

void ConvStem2d::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  for (auto& b : blocks_) {
    params.push_back(&b->conv.weight);
    params.push_back(&b->conv.bias);
    params.push_back(&b->bn.gamma);
    params.push_back(&b->bn.beta);
    buffers.push_back(&b->bn.running_mean);
    buffers.push_back(&b->bn.running_var);
  }
}

// ---------------------------------------------------------------------------
// MlpTower
// ---------------------------------------------------------------------------

struct MlpTower::Hidden {
  nn::Linear fc;
  nn::BatchNorm bn;
  nn::Relu relu;
  int width;
  std::vector<float> y_fc, y_act, d_fc, d_prev;

  Hidden(const std::string& prefix, int idx, int in_dim, int out_dim, std::mt19937& rng)
      : fc(prefix + ".fc" + std::to_string(idx), in_dim, out_dim, rng),
        bn(prefix + ".bn" + std::to_string(idx), out_dim),
        width(out_dim) {}
};

MlpTower::~MlpTower() = default;

MlpTower::MlpTower(const std::string& prefix, int in_dim, std::vector<int> hidden, int out_dim,
                   bool sigmoid_out, std::mt19937& rng)
    : sigmoid_out_(sigmoid_out) {
  int cur = in_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden_.push_back(std::make_unique<Hidden>(prefix, static_cast<int>(i) + 1, cur, hidden[i], rng));
    cur = hidden[i];
  }
  if (out_dim > 0) {
    out_ = std::make_unique<nn::Linear>(prefix + ".out", cur, out_dim, rng);
    out_dim_ = out_dim;
  } else {
    if (sigmoid_out_) throw ArgumentError("sigmoid output requires an output layer");
    out_dim_ = cur;
  }
}

const float* MlpTower::forward(const float* x, int n, nn::Mode mode) {
  const float* cur = x;
  for (auto& h : hidden_) {
    const std::size_t count = static_cast<std::size_t>(n) * h->width;
    h->y_fc.resize(count);
    h->y_act.resize(count);
    h->fc.forward(cur, h->y_fc.data(), n);
    h->bn.forward(h->y_fc.data(), h->y_act.data(), n, mode);
    h->relu.forward(h->y_act.data(), h->y_act.data(), count);
    cur = h->y_act.data();
  }
  if (out_) {
    y_out_.resize(static_cast<std::size_t>(n) * out_dim_);
    out_->forward(cur, y_out_.data(), n);
    if (sigmoid_out_) sigmoid_.forward(y_out_.data(), y_out_.data(), y_out_.size());
    cur = y_out_.data();
  }
  return cur;
}

void MlpTower::backward(const float* dy, float* dx, int n, bool accumulate_params) {
  const float* dcur = dy;
  if (out_) {
    scratch_.resize(static_cast<std::size_t>(n) * out_dim_);
    if (sigmoid_out_) {
      sigmoid_.backward(dcur, scratch_.data(), scratch_.size());
      dcur = scratch_.data();
    }
    if (hidden_.empty()) {
      out_->backward(dcur, dx, n, accumulate_params);
      return;
    }
    Hidden& last = *hidden_.back();
    last.d_fc.resize(static_cast<std::size_t>(n) * last.width);
    out_->backward(dcur, last.d_fc.data(), n, accumulate_params);
    dcur = last.d_fc.data();
  }
  for (int i = static_cast<int>(hidden_.size()) - 1; i >= 0; --i) {
    Hidden& h = *hidden_[i];
    const std::size_t count = static_cast<std::size_t>(n) * h.width;
    // dcur may already live in h.d_fc; relu backward is safe in place.
    h.d_fc.resize(count);
    if (dcur != h.d_fc.data()) std::memcpy(h.d_fc.data(), dcur, count * sizeof(float));
    h.relu.backward(h.d_fc.data(), h.d_fc.data(), count);
    h.d_prev.resize(count);
    h.bn.backward(h.d_fc.data(), h.d_prev.data(), n, accumulate_params);
    float* dst = nullptr;
    if (i > 0) {
      Hidden& prev = *hidden_[i - 1];
      prev.d_fc.resize(static_cast<std::size_t>(n) * prev.width);
      dst = prev.d_fc.data();
    } else {
      dst = dx;
    }
    h.fc.backward(h.d_prev.data(), dst, n, accumulate_params);
    dcur = dst;
  }
}

void MlpTower::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  for (auto& h : hidden_) {
    params.push_back(&h->fc.weight);
    params.push_back(&h->fc.bias);
    params.push_back(&h->bn.gamma);
    params.push_back(&h->bn.beta);
    buffers.push_back(&h->bn.running_mean);
    buffers.push_back(&h->bn.running_var);
  }
  if (out_) {
    params.push_back(&out_->weight);
    params.push_back(&out_->bias);
  }
}

// ---------------------------------------------------------------------------
// networks
// ---------------------------------------------------------------------------

namespace {
std::vector<int> two_hidden(int width) { return {width, width}; }
}  // namespace

Encoder::Encoder(const std::string& prefix, Modality modality, const ModelConfig& cfg,
                 std::mt19937& rng)
    : modality_(modality),
      input_dim_(modality == Modality::TimeSeries ? cfg.ts_input_dim() : cfg.img_input_dim()),
      tower_(prefix + ".head",
             modality == Modality::TimeSeries ? ts_flat_dim(cfg.time_steps)
                                              : img_flat_dim(cfg.image_side),
             two_hidden(cfg.embedding_dim), -1, false, rng) {
  if (modality == Modality::TimeSeries)
    stem1d_ = std::make_unique<ConvStem1d>(prefix + ".stem", 3, cfg.time_steps, rng);
  else
    stem2d_ = std::make_unique<ConvStem2d>(prefix + ".stem", 1, cfg.image_side, rng);
}

const float* Encoder::forward(const float* x, int n, nn::Mode mode) {
  const float* flat =
      stem1d_ ? stem1d_->forward(x, n, mode) : stem2d_->forward(x, n, mode);
  return tower_.forward(flat, n, mode);
}

void Encoder::backward(const float* demb, int n, bool accumulate_params) {
  const int flat = stem1d_ ? stem1d_->flat_dim() : stem2d_->flat_dim();
  dflat_.resize(static_cast<std::size_t>(n) * flat);
  tower_.backward(demb, dflat_.data(), n, accumulate_params);
  if (stem1d_)
    stem1d_->backward(dflat_.data(), nullptr, n, accumulate_params);
  else
    stem2d_->backward(dflat_.data(), nullptr, n, accumulate_params);
}

void Encoder::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  if (stem1d_) stem1d_->collect(params, buffers);
  if (stem2d_) stem2d_->collect(params, buffers);
  tower_.collect(params, buffers);
}

GatingNet::GatingNet(const ModelConfig& cfg, std::mt19937& rng)
    : img_stem_("gating.img", 1, cfg.image_side, rng),
      ts_stem_("gating.ts", 3, cfg.time_steps, rng),
      tower_("gating.head", img_flat_dim(cfg.image_side) + ts_flat_dim(cfg.time_steps),
             two_hidden(512), 1, true, rng) {}

const float* GatingNet::forward(const float* x_img, const float* x_ts, int n, nn::Mode mode) {
  const float* a = img_stem_.forward(x_img, n, mode);
  const float* b = ts_stem_.forward(x_ts, n, mode);
  const int fa = img_stem_.flat_dim(), fb = ts_stem_.flat_dim();
  concat_.resize(static_cast<std::size_t>(n) * (fa + fb));
  for (int i = 0; i < n; ++i) {
    std::memcpy(concat_.data() + static_cast<std::size_t>(i) * (fa + fb), a + static_cast<std::size_t>(i) * fa,
                fa * sizeof(float));
    std::memcpy(concat_.data() + static_cast<std::size_t>(i) * (fa + fb) + fa,
                b + static_cast<std::size_t>(i) * fb, fb * sizeof(float));
  }
  return tower_.forward(concat_.data(), n, mode);
}

void GatingNet::backward(const float* dalpha, int n, bool accumulate_params) {
  const int fa = img_stem_.flat_dim(), fb = ts_stem_.flat_dim();
  dconcat_.resize(static_cast<std::size_t>(n) * (fa + fb));
  tower_.backward(dalpha, dconcat_.data(), n, accumulate_params);
  std::vector<float> da(static_cast<std::size_t>(n) * fa), db(static_cast<std::size_t>(n) * fb);
  for (int i = 0; i < n; ++i) {
    std::memcpy(da.data() + static_cast<std::size_t>(i) * fa,
                dconcat_.data() + static_cast<std::size_t>(i) * (fa + fb), fa * sizeof(float));
    std::memcpy(db.data() + static_cast<std::size_t>(i) * fb,
                dconcat_.data() + static_cast<std::size_t>(i) * (fa + fb) + fa, fb * sizeof(float));
  }
  img_stem_.backward(da.data(), nullptr, n, accumulate_params);
  ts_stem_.backward(db.data(), nullptr, n, accumulate_params);
}

void GatingNet::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  img_stem_.collect(params, buffers);
  ts_stem_.collect(params, buffers);
  tower_.collect(params, buffers);
}

nn::Param& GatingNet::final_bias() {
  std::vector<nn::Param*> ps;
  std::vector<nn::Buffer*> bs;
  tower_.collect(ps, bs);
  return *ps.back();  // collect order puts the output bias last
}

Cmd::Cmd(const ModelConfig& cfg, std::mt19937& rng)
    : input_dim_(cfg.embedding_dim + cfg.class_count),
      tower_("cmd.head", input_dim_, two_hidden(512), 1, true, rng) {}

const float* Cmd::forward(const float* x, int n, nn::Mode mode) {
  return tower_.forward(x, n, mode);
}

void Cmd::backward(const float* dout, float* dx, int n, bool accumulate_params) {
  tower_.backward(dout, dx, n, accumulate_params);
}

void Cmd::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  tower_.collect(params, buffers);
}

Classifier::Classifier(const ModelConfig& cfg, int in_dim, std::mt19937& rng)
    : in_dim_(in_dim),
      tower_("classifier.head", in_dim, {512}, cfg.class_count, false, rng) {}

const float* Classifier::forward(const float* f, int n, nn::Mode mode) {
  return tower_.forward(f, n, mode);
}

void Classifier::backward(const float* dlogits, float* df, int n, bool accumulate_params) {
  tower_.backward(dlogits, df, n, accumulate_params);
}

void Classifier::collect(std::vector<nn::Param*>& params, std::vector<nn::Buffer*>& buffers) {
  tower_.collect(params, buffers);
}

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

ModelBundle ModelBundle::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelBundle b;
  b.config = cfg;
  b.seed = seed;
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));

  const bool ts = cfg.variant == Variant::Proposed || cfg.variant == Variant::TsOnly ||
                  cfg.variant == Variant::Concat;
  const bool img = cfg.variant == Variant::Proposed || cfg.variant == Variant::ImageOnly ||
                   cfg.variant == Variant::Concat;
  if (ts) b.encoder_ts = std::make_unique<Encoder>("encoder_ts", Modality::TimeSeries, cfg, rng);
  if (img) b.encoder_img = std::make_unique<Encoder>("encoder_img", Modality::Image, cfg, rng);
  if (cfg.variant == Variant::Proposed) {
    b.cmd = std::make_unique<Cmd>(cfg, rng);
    b.gating = std::make_unique<GatingNet>(cfg, rng);
  }
  const int cls_in =
      cfg.variant == Variant::Concat ? 2 * cfg.embedding_dim : cfg.embedding_dim;
  b.classifier = std::make_unique<Classifier>(cfg, cls_in, rng);
  return b;
}

Encoder& ModelBundle::encoder_for(Modality m) {
  Encoder* e = m == Modality::TimeSeries ? encoder_ts.get() : encoder_img.get();
  if (!e)
    throw StateError(std::string(variant_name(config.variant)) + " has no " +
                     modality_name(m) + " encoder");
  return *e;
}

std::vector<nn::Param*> ModelBundle::main_params() {
  std::vector<nn::Param*> p;
  std::vector<nn::Buffer*> ignore;
  if (encoder_ts) encoder_ts->collect(p, ignore);
  if (encoder_img) encoder_img->collect(p, ignore);
  if (gating) gating->collect(p, ignore);
  if (classifier) classifier->collect(p, ignore);
  return p;
}

std::vector<nn::Param*> ModelBundle::cmd_params() {
  std::vector<nn::Param*> p;
  std::vector<nn::Buffer*> ignore;
  if (cmd) cmd->collect(p, ignore);
  return p;
}

std::vector<nn::Param*> ModelBundle::all_params() {
  std::vector<nn::Param*> p;
  std::vector<nn::Buffer*> ignore;
  if (encoder_ts) encoder_ts->collect(p, ignore);
  if (encoder_img) encoder_img->collect(p, ignore);
  if (cmd) cmd->collect(p, ignore);
  if (gating) gating->collect(p, ignore);
  if (classifier) classifier->collect(p, ignore);
  return p;
}

std::vector<nn::Buffer*> ModelBundle::all_buffers() {
  std::vector<nn::Param*> ignore;
  std::vector<nn::Buffer*> b;
  if (encoder_ts) encoder_ts->collect(ignore, b);
  if (encoder_img) encoder_img->collect(ignore, b);
  if (cmd) cmd->collect(ignore, b);
  if (gating) gating->collect(ignore, b);
  if (classifier) classifier->collect(ignore, b);
  return b;
}

std::vector<nn::Param*> ModelBundle::params_of(const std::string& net) {
  std::vector<nn::Param*> out;
  for (nn::Param* p : all_params())
    if (p->name.rfind(net + ".", 0) == 0) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// single-sample entry points
// ---------------------------------------------------------------------------

namespace {

// (3, steps) channel-major -> (steps, 3) channels-last.
std::vector<float> ts_to_channels_last(std::span<const float> x, int steps) {
  std::vector<float> out(x.size());
  for (int t = 0; t < steps; ++t)
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(t) * 3 + c] = x[static_cast<std::size_t>(c) * steps + t];
  return out;
}

void expect_size(std::span<const float> x, int want, const char* what) {
  if (static_cast<int>(x.size()) != want)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) +
                     " values, got " + std::to_string(x.size()));
}

}  // namespace

std::vector<float> encoder_forward(ModelBundle& bundle, Modality modality,
                                   std::span<const float> x) {
  Encoder& enc = bundle.encoder_for(modality);
  expect_size(x, enc.input_dim(), "encoder input");
  const float* y = nullptr;
  if (modality == Modality::TimeSeries) {
    const auto xl = ts_to_channels_last(x, bundle.config.time_steps);
    y = enc.forward(xl.data(), 1, nn::Mode::Eval);
  } else {
    y = enc.forward(x.data(), 1, nn::Mode::Eval);
  }
  return {y, y + bundle.config.embedding_dim};
}

GateValue::GateValue(double a) : value(a) {
  if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("gate value must lie in [0,1]");
}

std::vector<float> gate_combine(std::span<const float> f_org, std::span<const float> f_aug,
                                GateValue alpha) {
  if (f_org.size() != f_aug.size())
    throw ShapeError("gate_combine: embedding sizes differ: " + std::to_string(f_org.size()) +
                     " vs " + std::to_string(f_aug.size()));
  std::vector<float> out(f_org.size());
  const float a = static_cast<float>(alpha.value);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a * f_org[i] + (1.0f - a) * f_aug[i];
  return out;
}

GateValue gating_forward(ModelBundle& bundle, Modality org_modality,
                         std::span<const float> x_org, std::span<const float> x_aug) {
  if (!bundle.gating)
    throw StateError(std::string(variant_name(bundle.config.variant)) + " has no gating network");
  std::span<const float> x_img = org_modality == Modality::Image ? x_org : x_aug;
  std::span<const float> x_ts = org_modality == Modality::Image ? x_aug : x_org;
  expect_size(x_img, bundle.config.img_input_dim(), "gating image input");
  expect_size(x_ts, bundle.config.ts_input_dim(), "gating trajectory input");
  const auto xl = ts_to_channels_last(x_ts, bundle.config.time_steps);
  const float* a = bundle.gating->forward(x_img.data(), xl.data(), 1, nn::Mode::Eval);
  return GateValue(static_cast<double>(a[0]));
}

std::vector<float> classifier_forward(ModelBundle& bundle, std::span<const float> f) {
  expect_size(f, bundle.classifier->in_dim(), "classifier input");
  const float* y = bundle.classifier->forward(f.data(), 1, nn::Mode::Eval);
  return {y, y + bundle.config.class_count};
}

float cmd_forward(ModelBundle& bundle, std::span<const float> f,
                  std::span<const float> condition_one_hot) {
  if (!bundle.cmd)
    throw StateError(std::string(variant_name(bundle.config.variant)) +
                     " has no modality discriminator");
  expect_size(f, bundle.config.embedding_dim, "discriminator embedding");
  expect_size(condition_one_hot, bundle.config.class_count, "discriminator condition");
  int ones = 0;
  for (float v : condition_one_hot) {
    if (v != 0.0f && v != 1.0f) throw ArgumentError("condition vector entries must be 0 or 1");
    if (v == 1.0f) ++ones;
  }
  if (ones != 1) throw ArgumentError("condition vector must be one-hot");

  std::vector<float> x(f.size() + condition_one_hot.size());
  std::copy(f.begin(), f.end(), x.begin());
  std::copy(condition_one_hot.begin(), condition_one_hot.end(), x.begin() + f.size());
  return bundle.cmd->forward(x.data(), 1, nn::Mode::Eval)[0];
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

struct ArrayRef {
  std::string name;
  std::vector<int> shape;
  float* data;
  std::size_t count;
};

std::vector<ArrayRef> array_table(ModelBundle& b) {
  std::vector<ArrayRef> arrays;
  for (nn::Param* p : b.all_params()) {
    arrays.push_back({p->name, p->shape, p->value.data(), p->size()});
    arrays.push_back({p->name + ".adam_m", p->shape, p->adam_m.data(), p->size()});
    arrays.push_back({p->name + ".adam_v", p->shape, p->adam_v.data(), p->size()});
  }
  for (nn::Buffer* buf : b.all_buffers())
    arrays.push_back({buf->name, buf->shape, buf->value.data(), buf->size()});
  return arrays;
}

}  // namespace

void save_checkpoint(ModelBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  const auto arrays = array_table(bundle);

  json manifest;
  manifest["format"] = "samm-checkpoint";
  manifest["format_version"] = 1;
  manifest["variant"] = variant_name(bundle.config.variant);
  manifest["class_count"] = bundle.config.class_count;
  manifest["time_steps"] = bundle.config.time_steps;
  manifest["image_side"] = bundle.config.image_side;
  manifest["embedding_dim"] = bundle.config.embedding_dim;
  manifest["seed"] = bundle.seed;
  manifest["epoch"] = bundle.epoch;
  manifest["adam_main_t"] = bundle.adam_main.t;
  manifest["adam_cmd_t"] = bundle.adam_cmd.t;
  manifest["adam_lr"] = bundle.adam_main.lr;
  manifest["adam_beta1"] = bundle.adam_main.beta1;
  manifest["adam_beta2"] = bundle.adam_main.beta2;
  manifest["adam_eps"] = bundle.adam_main.eps;
  manifest["config_snapshot"] = bundle.config_snapshot;

  json table = json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    table.push_back({{"name", a.name},
                     {"shape", a.shape},
                     {"dtype", "f32"},
                     {"byte_offset", offset},
                     {"count", a.count}});
    offset += a.count * sizeof(float);
  }
  manifest["arrays"] = std::move(table);

  // Write both files under temp names, then rename; an interrupted save
  // leaves the previous checkpoint intact.
  const fs::path bin_tmp = dir / "params.bin.tmp";
  const fs::path man_tmp = dir / "manifest.json.tmp";
  {
    std::ofstream bin(bin_tmp, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write " + bin_tmp.string());
    for (const auto& a : arrays)
      bin.write(reinterpret_cast<const char*>(a.data),
                static_cast<std::streamsize>(a.count * sizeof(float)));
    if (!bin) throw IoError("short write to " + bin_tmp.string());
  }
  {
    std::ofstream man(man_tmp, std::ios::trunc);
    if (!man) throw IoError("cannot write " + man_tmp.string());
    man << manifest.dump(2) << "\n";
  }
  fs::rename(bin_tmp, dir / "params.bin");
  fs::rename(man_tmp, dir / "manifest.json");
}

ModelBundle load_checkpoint(const fs::path& dir, const ModelConfig* expect) {
  const fs::path man_path = dir / "manifest.json";
  const fs::path bin_path = dir / "params.bin";
  std::ifstream man(man_path);
  if (!man) throw CheckpointError("missing " + man_path.string());
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError(man_path.string() + ": " + e.what());
  }

  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer())
    throw CheckpointError(man_path.string() + ": missing format_version");
  const int version = manifest["format_version"].get<int>();
  if (version != 1)
    throw VersionError("unsupported checkpoint format_version " + std::to_string(version));

  ModelConfig cfg;
  try {
    cfg.variant = variant_from_name(manifest.at("variant").get<std::string>());
    cfg.class_count = manifest.at("class_count").get<int>();
    cfg.time_steps = manifest.at("time_steps").get<int>();
    cfg.image_side = manifest.at("image_side").get<int>();
    cfg.embedding_dim = manifest.at("embedding_dim").get<int>();
  } catch (const json::exception& e) {
    throw CheckpointError(man_path.string() + ": " + e.what());
  }

  if (expect) {
    auto check = [&](const char* what, int want, int got) {
      if (want != got)
        throw ShapeError(std::string("checkpoint ") + what + " mismatch: expected " +
                         std::to_string(want) + ", found " + std::to_string(got));
    };
    check("class_count", expect->class_count, cfg.class_count);
    check("time_steps", expect->time_steps, cfg.time_steps);
    check("image_side", expect->image_side, cfg.image_side);
    check("embedding_dim", expect->embedding_dim, cfg.embedding_dim);
    if (expect->variant != cfg.variant)
      throw ShapeError(std::string("checkpoint variant mismatch: expected ") +
                       variant_name(expect->variant) + ", found " + variant_name(cfg.variant));
  }

  ModelBundle bundle = ModelBundle::create(cfg, manifest.value("seed", 0ull));
  bundle.epoch = manifest.value("epoch", 0ll);
  bundle.adam_main.t = manifest.value("adam_main_t", 0ll);
  bundle.adam_cmd.t = manifest.value("adam_cmd_t", 0ll);
  bundle.adam_main.lr = bundle.adam_cmd.lr = manifest.value("adam_lr", 1e-4);
  bundle.adam_main.beta1 = bundle.adam_cmd.beta1 = manifest.value("adam_beta1", 0.9);
  bundle.adam_main.beta2 = bundle.adam_cmd.beta2 = manifest.value("adam_beta2", 0.999);
  bundle.adam_main.eps = bundle.adam_cmd.eps = manifest.value("adam_eps", 1e-8);
  bundle.config_snapshot = manifest.value("config_snapshot", std::string());

  auto arrays = array_table(bundle);
  std::map<std::string, ArrayRef*> by_name;
  for (auto& a : arrays) by_name[a.name] = &a;

  if (!manifest.contains("arrays") || !manifest["arrays"].is_array())
    throw CheckpointError(man_path.string() + ": missing array table");
  const auto& table = manifest["arrays"];
  if (table.size() != arrays.size())
    throw CheckpointError("array table size mismatch: manifest lists " +
                          std::to_string(table.size()) + ", model has " +
                          std::to_string(arrays.size()));

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw CheckpointError("missing " + bin_path.string());
  bin.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(bin.tellg());

  std::size_t expected_size = 0;
  for (const auto& entry : table) expected_size += entry.at("count").get<std::size_t>() * sizeof(float);
  if (file_size != expected_size)
    throw CheckpointError(bin_path.string() + ": truncated or oversized (" +
                          std::to_string(file_size) + " bytes, expected " +
                          std::to_string(expected_size) + ")");

  for (const auto& entry : table) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unknown array in checkpoint: " + name);
    ArrayRef* ref = it->second;
    const auto count = entry.at("count").get<std::size_t>();
    if (count != ref->count)
      throw CheckpointError("array " + name + " count mismatch: manifest " +
                            std::to_string(count) + ", model " + std::to_string(ref->count));
    bin.seekg(static_cast<std::streamoff>(entry.at("byte_offset").get<std::size_t>()));
    bin.read(reinterpret_cast<char*>(ref->data),
             static_cast<std::streamsize>(count * sizeof(float)));
    if (bin.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
      throw CheckpointError(bin_path.string() + ": short read for " + name);
  }
  return bundle;
}

}  // namespace samm::model
