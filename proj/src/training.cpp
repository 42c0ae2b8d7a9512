#include "samm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>

#include "samm/datasets.hpp"

namespace samm::training {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoCmd: return "no_cmd";
    case Ablation::NoFd: return "no_fd";
  }
  throw ArgumentError("unknown ablation");
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "none") return Ablation::None;
  if (name == "no_cmd") return Ablation::NoCmd;
  if (name == "no_fd") return Ablation::NoFd;
  throw ArgumentError("unknown ablation name: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 2) throw ArgumentError("batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (weights.w_cls < 0.0 || weights.w_fd < 0.0 || weights.w_adv < 0.0)
    throw ArgumentError("loss weights must be non-negative");
  if (force_alpha && !(*force_alpha >= 0.0f && *force_alpha <= 1.0f))
    throw ArgumentError("force_alpha must lie in [0,1]");
}

// ---------------------------------------------------------------------------
// tensorization
// ---------------------------------------------------------------------------

TensorSet tensorize(const std::vector<PairedPattern>& pairs, int class_count, int steps,
                    int side) {
  if (pairs.empty()) throw ArgumentError("tensorize: empty pair list");
  TensorSet set;
  set.org_modality = pairs[0].org_modality;
  set.class_count = class_count;
  set.steps = steps;
  set.side = side;
  set.ids.reserve(pairs.size());
  set.labels.reserve(pairs.size());
  set.ts.resize(pairs.size() * static_cast<std::size_t>(steps) * 3);
  set.img.resize(pairs.size() * static_cast<std::size_t>(side) * side);

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PairedPattern& p = pairs[i];
    if (p.org_modality != set.org_modality)
      throw ArgumentError("tensorize: mixed original modalities (" + p.id + ")");
    if (p.label < 0 || p.label >= class_count)
      throw ArgumentError("tensorize: label out of range for " + p.id);
    if (p.image.height != side || p.image.width != side)
      throw ShapeError("tensorize: image for " + p.id + " is " + std::to_string(p.image.height) +
                       "x" + std::to_string(p.image.width) + ", expected side " +
                       std::to_string(side));
    set.ids.push_back(p.id);
    set.labels.push_back(p.label);

    // (3, steps) channel-major tensor -> (steps, 3) channels-last rows.
    const std::vector<float> t = datasets::to_tensor(p.trajectory, steps);
    float* trow = set.ts.data() + i * static_cast<std::size_t>(steps) * 3;
    for (int k = 0; k < steps; ++k)
      for (int c = 0; c < 3; ++c) trow[static_cast<std::size_t>(k) * 3 + c] = t[static_cast<std::size_t>(c) * steps + k];

    std::memcpy(set.img.data() + i * static_cast<std::size_t>(side) * side, p.image.pixels.data(),
                static_cast<std::size_t>(side) * side * sizeof(float));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(model::ModelBundle& bundle, const TrainConfig& cfg)
    : bundle_(bundle), cfg_(cfg) {
  cfg_.validate();
  bundle_.adam_main.lr = bundle_.adam_cmd.lr = cfg.learning_rate;
  bundle_.adam_main.beta1 = bundle_.adam_cmd.beta1 = cfg.beta1;
  bundle_.adam_main.beta2 = bundle_.adam_cmd.beta2 = cfg.beta2;
  bundle_.adam_main.eps = bundle_.adam_cmd.eps = cfg.adam_eps;
}

void Trainer::gather(const TensorSet& data, std::span<const int> batch) {
  const int n = static_cast<int>(batch.size());
  const std::size_t ts_row = static_cast<std::size_t>(data.steps) * 3;
  const std::size_t img_row = static_cast<std::size_t>(data.side) * data.side;
  bts_.resize(n * ts_row);
  bimg_.resize(n * img_row);
  blabels_.resize(n);
  for (int i = 0; i < n; ++i) {
    const int idx = batch[i];
    std::memcpy(bts_.data() + i * ts_row, data.ts.data() + idx * ts_row, ts_row * sizeof(float));
    std::memcpy(bimg_.data() + i * img_row, data.img.data() + idx * img_row,
                img_row * sizeof(float));
    blabels_[i] = data.labels[idx];
  }
}

void Trainer::forward_embeddings(const TensorSet& data, std::span<const int> batch,
                                 nn::Mode mode) {
  const int n = static_cast<int>(batch.size());
  const int emb = bundle_.config.embedding_dim;
  const float* ts_emb = bundle_.encoder_ts->forward(bts_.data(), n, mode);
  const float* img_emb = bundle_.encoder_img->forward(bimg_.data(), n, mode);
  const float* org = data.org_modality == Modality::TimeSeries ? ts_emb : img_emb;
  const float* aug = data.org_modality == Modality::TimeSeries ? img_emb : ts_emb;
  f_org_.assign(org, org + static_cast<std::size_t>(n) * emb);
  f_aug_.assign(aug, aug + static_cast<std::size_t>(n) * emb);
}

void Trainer::assemble_cmd_input(int n) {
  const int emb = bundle_.config.embedding_dim;
  const int c = bundle_.config.class_count;
  const int row = emb + c;
  cmd_in_.assign(static_cast<std::size_t>(2) * n * row, 0.0f);
  for (int i = 0; i < n; ++i) {
    float* r_org = cmd_in_.data() + static_cast<std::size_t>(i) * row;
    float* r_aug = cmd_in_.data() + static_cast<std::size_t>(n + i) * row;
    std::memcpy(r_org, f_org_.data() + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
    std::memcpy(r_aug, f_aug_.data() + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
    r_org[emb + blabels_[i]] = 1.0f;
    r_aug[emb + blabels_[i]] = 1.0f;
  }
}

Trainer::DiscResult Trainer::step_discriminator(const TensorSet& data,
                                                std::span<const int> batch) {
  if (cfg_.ablation == Ablation::NoCmd || !bundle_.cmd) return {};
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("discriminator step needs a batch of at least 2");

  gather(data, batch);
  // Encoders are frozen here: Eval mode, no gradient ever reaches them.
  forward_embeddings(data, batch, nn::Mode::Eval);
  assemble_cmd_input(n);

  const float* d_hat = bundle_.cmd->forward(cmd_in_.data(), 2 * n, nn::Mode::Train);

  DiscResult res;
  std::vector<int> targets(2 * n);
  for (int i = 0; i < n; ++i) {
    targets[i] = 0;      // original
    targets[n + i] = 1;  // self-augmented
  }
  res.l_disc = losses::cmd_discriminator_loss_batch(std::span<const float>(d_hat, 2 * n),
                                                    std::span<const int>(targets));
  std::vector<float> dd(2 * n);
  for (int i = 0; i < 2 * n; ++i) {
    dd[i] = static_cast<float>(losses::cmd_discriminator_grad(d_hat[i], targets[i]) / (2.0 * n));
    if ((d_hat[i] >= 0.5f) == (targets[i] == 1)) ++res.correct;
  }

  for (nn::Param* p : bundle_.cmd_params()) p->zero_grad();
  bundle_.cmd->backward(dd.data(), nullptr, 2 * n, true);
  bundle_.adam_cmd.step(bundle_.cmd_params());
  return res;
}

Trainer::MainResult Trainer::step_main(const TensorSet& data, std::span<const int> batch) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("main step needs a batch of at least 2");
  const int emb = bundle_.config.embedding_dim;
  const int c = bundle_.config.class_count;
  const model::Variant variant = bundle_.config.variant;

  gather(data, batch);
  MainResult res;

  if (variant != model::Variant::Proposed) {
    // Baselines: single view (or concatenation) into the classifier.
    const float* f = nullptr;
    int fdim = emb;
    if (variant == model::Variant::ImageOnly) {
      f = bundle_.encoder_img->forward(bimg_.data(), n, nn::Mode::Train);
    } else if (variant == model::Variant::TsOnly) {
      f = bundle_.encoder_ts->forward(bts_.data(), n, nn::Mode::Train);
    } else {
      forward_embeddings(data, batch, nn::Mode::Train);
      fused_.resize(static_cast<std::size_t>(n) * 2 * emb);
      for (int i = 0; i < n; ++i) {
        std::memcpy(fused_.data() + static_cast<std::size_t>(i) * 2 * emb,
                    f_org_.data() + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
        std::memcpy(fused_.data() + static_cast<std::size_t>(i) * 2 * emb + emb,
                    f_aug_.data() + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
      }
      f = fused_.data();
      fdim = 2 * emb;
    }

    const float* logits = bundle_.classifier->forward(f, n, nn::Mode::Train);
    res.l_cls = losses::classification_loss_batch(logits, blabels_.data(), n, c);
    losses::encoder_step_total(res.l_cls, 0.0, 0.0, cfg_.weights);
    dlogits_.resize(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
      std::span<const float> row(logits + static_cast<std::size_t>(i) * c, c);
      losses::classification_grad(row, blabels_[i],
                                  std::span<float>(dlogits_.data() + static_cast<std::size_t>(i) * c, c));
      int arg = 0;
      for (int k = 1; k < c; ++k)
        if (row[k] > row[arg]) arg = k;
      if (arg == blabels_[i]) ++res.correct;
    }
    const float scale = static_cast<float>(cfg_.weights.w_cls / n);
    for (float& v : dlogits_) v *= scale;

    for (nn::Param* p : bundle_.main_params()) p->zero_grad();
    df_.resize(static_cast<std::size_t>(n) * fdim);
    bundle_.classifier->backward(dlogits_.data(), df_.data(), n, true);
    if (variant == model::Variant::ImageOnly) {
      bundle_.encoder_img->backward(df_.data(), n, true);
    } else if (variant == model::Variant::TsOnly) {
      bundle_.encoder_ts->backward(df_.data(), n, true);
    } else {
      df_org_.resize(static_cast<std::size_t>(n) * emb);
      df_aug_.resize(static_cast<std::size_t>(n) * emb);
      for (int i = 0; i < n; ++i) {
        std::memcpy(df_org_.data() + static_cast<std::size_t>(i) * emb,
                    df_.data() + static_cast<std::size_t>(i) * 2 * emb, emb * sizeof(float));
        std::memcpy(df_aug_.data() + static_cast<std::size_t>(i) * emb,
                    df_.data() + static_cast<std::size_t>(i) * 2 * emb + emb, emb * sizeof(float));
      }
      const float* dorg = data.org_modality == Modality::TimeSeries ? df_org_.data() : df_aug_.data();
      const float* daug = data.org_modality == Modality::TimeSeries ? df_aug_.data() : df_org_.data();
      bundle_.encoder_ts->backward(dorg, n, true);
      bundle_.encoder_img->backward(daug, n, true);
    }
    bundle_.adam_main.step(bundle_.main_params());
    return res;
  }

  // Proposed: both encoders, gating fusion, classifier; CMD frozen.
  forward_embeddings(data, batch, nn::Mode::Train);

  alpha_.resize(n);
  const bool gated = !cfg_.force_alpha.has_value();
  if (gated) {
    const float* a = bundle_.gating->forward(bimg_.data(), bts_.data(), n, nn::Mode::Train);
    std::memcpy(alpha_.data(), a, static_cast<std::size_t>(n) * sizeof(float));
  } else {
    std::fill(alpha_.begin(), alpha_.end(), *cfg_.force_alpha);
  }

  fused_.resize(static_cast<std::size_t>(n) * emb);
  for (int i = 0; i < n; ++i) {
    const float a = alpha_[i];
    const float* o = f_org_.data() + static_cast<std::size_t>(i) * emb;
    const float* g = f_aug_.data() + static_cast<std::size_t>(i) * emb;
    float* out = fused_.data() + static_cast<std::size_t>(i) * emb;
    for (int k = 0; k < emb; ++k) out[k] = a * o[k] + (1.0f - a) * g[k];
  }

  const float* logits = bundle_.classifier->forward(fused_.data(), n, nn::Mode::Train);
  res.l_cls = losses::classification_loss_batch(logits, blabels_.data(), n, c);
  res.l_fd = losses::feature_distance_loss_batch(f_org_.data(), f_aug_.data(), n, emb);

  const bool use_adv = cfg_.ablation != Ablation::NoCmd && cfg_.weights.w_adv > 0.0;
  const float* d_hat = nullptr;
  if (use_adv) {
    assemble_cmd_input(n);
    d_hat = bundle_.cmd->forward(cmd_in_.data(), 2 * n, nn::Mode::Eval);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += losses::cmd_encoder_loss(1.0 - static_cast<double>(d_hat[i]));  // original rows
      acc += losses::cmd_encoder_loss(static_cast<double>(d_hat[n + i]));    // augmented rows
    }
    res.l_adv = acc / (2.0 * n);
  }

  const double w_fd = cfg_.ablation == Ablation::NoFd ? 0.0 : cfg_.weights.w_fd;
  losses::encoder_step_total(res.l_cls, res.l_fd, res.l_adv, cfg_.weights);

  // Backward. All per-sample loss gradients carry their batch-mean scale.
  for (nn::Param* p : bundle_.main_params()) p->zero_grad();

  dlogits_.resize(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    std::span<const float> row(logits + static_cast<std::size_t>(i) * c, c);
    losses::classification_grad(row, blabels_[i],
                                std::span<float>(dlogits_.data() + static_cast<std::size_t>(i) * c, c));
    int arg = 0;
    for (int k = 1; k < c; ++k)
      if (row[k] > row[arg]) arg = k;
    if (arg == blabels_[i]) ++res.correct;
  }
  {
    const float scale = static_cast<float>(cfg_.weights.w_cls / n);
    for (float& v : dlogits_) v *= scale;
  }

  df_.resize(static_cast<std::size_t>(n) * emb);
  bundle_.classifier->backward(dlogits_.data(), df_.data(), n, true);

  df_org_.resize(static_cast<std::size_t>(n) * emb);
  df_aug_.resize(static_cast<std::size_t>(n) * emb);
  dalpha_.resize(n);
  for (int i = 0; i < n; ++i) {
    const float a = alpha_[i];
    const float* d = df_.data() + static_cast<std::size_t>(i) * emb;
    const float* o = f_org_.data() + static_cast<std::size_t>(i) * emb;
    const float* g = f_aug_.data() + static_cast<std::size_t>(i) * emb;
    float* dor = df_org_.data() + static_cast<std::size_t>(i) * emb;
    float* dau = df_aug_.data() + static_cast<std::size_t>(i) * emb;
    double da = 0.0;
    for (int k = 0; k < emb; ++k) {
      dor[k] = a * d[k];
      dau[k] = (1.0f - a) * d[k];
      da += static_cast<double>(d[k]) * (static_cast<double>(o[k]) - static_cast<double>(g[k]));
    }
    dalpha_[i] = static_cast<float>(da);
  }

  if (w_fd > 0.0) {
    const float scale = static_cast<float>(w_fd / n);
    for (int i = 0; i < n; ++i) {
      float* dor = df_org_.data() + static_cast<std::size_t>(i) * emb;
      float* dau = df_aug_.data() + static_cast<std::size_t>(i) * emb;
      const float* o = f_org_.data() + static_cast<std::size_t>(i) * emb;
      const float* g = f_aug_.data() + static_cast<std::size_t>(i) * emb;
      for (int k = 0; k < emb; ++k) {
        const float diff = o[k] - g[k];
        dor[k] += scale * diff;
        dau[k] -= scale * diff;
      }
    }
  }

  if (use_adv) {
    // d l_adv / d d_hat, chain through the frozen discriminator to the
    // embeddings without touching its parameter gradients.
    const int row = emb + c;
    std::vector<float> dd(static_cast<std::size_t>(2) * n);
    const double scale = cfg_.weights.w_adv / (2.0 * n);
    for (int i = 0; i < n; ++i) {
      dd[i] = static_cast<float>(-losses::cmd_encoder_grad(1.0 - static_cast<double>(d_hat[i])) * scale);
      dd[n + i] = static_cast<float>(losses::cmd_encoder_grad(static_cast<double>(d_hat[n + i])) * scale);
    }
    cmd_din_.resize(static_cast<std::size_t>(2) * n * row);
    bundle_.cmd->backward(dd.data(), cmd_din_.data(), 2 * n, /*accumulate_params=*/false);
    for (int i = 0; i < n; ++i) {
      const float* dro = cmd_din_.data() + static_cast<std::size_t>(i) * row;
      const float* dra = cmd_din_.data() + static_cast<std::size_t>(n + i) * row;
      float* dor = df_org_.data() + static_cast<std::size_t>(i) * emb;
      float* dau = df_aug_.data() + static_cast<std::size_t>(i) * emb;
      for (int k = 0; k < emb; ++k) {
        dor[k] += dro[k];
        dau[k] += dra[k];
      }
    }
  }

  if (gated) bundle_.gating->backward(dalpha_.data(), n, true);

  const float* dts = data.org_modality == Modality::TimeSeries ? df_org_.data() : df_aug_.data();
  const float* dimg = data.org_modality == Modality::TimeSeries ? df_aug_.data() : df_org_.data();
  bundle_.encoder_ts->backward(dts, n, true);
  bundle_.encoder_img->backward(dimg, n, true);

  bundle_.adam_main.step(bundle_.main_params());
  return res;
}

std::vector<EpochRecord> Trainer::fit(const TensorSet& train, const EpochCallback& callback) {
  if (train.size() == 0) throw ArgumentError("fit: empty training set");
  if (train.class_count != bundle_.config.class_count)
    throw ShapeError("fit: dataset has " + std::to_string(train.class_count) +
                     " classes, model expects " + std::to_string(bundle_.config.class_count));

  std::mt19937 rng(static_cast<std::uint32_t>(cfg_.seed));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochRecord> records;
  records.reserve(cfg_.epochs);
  const int start_epoch = static_cast<int>(bundle_.epoch);

  for (int e = 0; e < cfg_.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = start_epoch + e + 1;
    double sum_cls = 0.0, sum_fd = 0.0, sum_adv = 0.0, sum_disc = 0.0;
    long main_samples = 0, disc_samples = 0;
    long correct = 0, disc_correct = 0;

    for (int begin = 0; begin < train.size(); begin += cfg_.batch_size) {
      const int end = std::min(begin + cfg_.batch_size, train.size());
      const int bn = end - begin;
      if (bn < 2) break;  // trailing singleton cannot form batch statistics
      std::span<const int> batch(order.data() + begin, static_cast<std::size_t>(bn));

      const DiscResult d = step_discriminator(train, batch);
      const MainResult m = step_main(train, batch);

      sum_disc += d.l_disc * 2 * bn;
      disc_correct += d.correct;
      disc_samples += 2 * bn;
      sum_cls += m.l_cls * bn;
      sum_fd += m.l_fd * bn;
      sum_adv += m.l_adv * bn;
      correct += m.correct;
      main_samples += bn;
    }
    if (main_samples == 0) throw ArgumentError("fit: no batch of size >= 2 could be formed");

    rec.l_cls = sum_cls / main_samples;
    rec.l_fd = sum_fd / main_samples;
    rec.l_adv = sum_adv / main_samples;
    rec.l_disc = disc_samples > 0 ? sum_disc / disc_samples : 0.0;
    rec.disc_accuracy = disc_samples > 0 ? static_cast<double>(disc_correct) / disc_samples : 0.0;
    rec.train_accuracy = static_cast<double>(correct) / main_samples;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bundle_.epoch = rec.epoch;
    records.push_back(rec);
    if (callback) callback(rec);

    if (!cfg_.checkpoint_dir.empty()) {
      const bool periodic = cfg_.checkpoint_every > 0 && rec.epoch % cfg_.checkpoint_every == 0;
      if (periodic) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d", rec.epoch);
        model::save_checkpoint(bundle_, cfg_.checkpoint_dir / name);
      }
    }
  }

  if (!cfg_.checkpoint_dir.empty())
    model::save_checkpoint(bundle_, cfg_.checkpoint_dir / "final");
  return records;
}

FitResult fit(const TensorSet& train, const model::ModelConfig& model_cfg,
              const TrainConfig& train_cfg, const EpochCallback& callback) {
  train_cfg.validate();
  model::ModelConfig cfg = model_cfg;
  cfg.class_count = train.class_count;
  cfg.time_steps = train.steps;
  cfg.image_side = train.side;

  FitResult result{model::ModelBundle::create(cfg, train_cfg.seed), {}};
  Trainer trainer(result.bundle, train_cfg);
  result.records = trainer.fit(train, callback);
  return result;
}

}  // namespace samm::training
