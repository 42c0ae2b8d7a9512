#include "samm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace samm::eval {

namespace {

constexpr int kEvalBatch = 128;

void check_compatible(const model::ModelBundle& bundle, const training::TensorSet& data) {
  if (data.size() == 0) throw ArgumentError("evaluation set is empty");
  if (data.class_count != bundle.config.class_count)
    throw ShapeError("dataset has " + std::to_string(data.class_count) +
                     " classes, model expects " + std::to_string(bundle.config.class_count));
  if (data.steps != bundle.config.time_steps || data.side != bundle.config.image_side)
    throw ShapeError("dataset tensor sizes do not match the model configuration");
}

}  // namespace

std::vector<PredictionDetail> predict(model::ModelBundle& bundle,
                                      const training::TensorSet& data) {
  check_compatible(bundle, data);
  const int n = data.size();
  const int emb = bundle.config.embedding_dim;
  const int c = bundle.config.class_count;
  const std::size_t ts_row = static_cast<std::size_t>(data.steps) * 3;
  const std::size_t img_row = static_cast<std::size_t>(data.side) * data.side;
  const model::Variant variant = bundle.config.variant;

  std::vector<PredictionDetail> out(n);
  std::vector<float> fused;
  for (int begin = 0; begin < n; begin += kEvalBatch) {
    const int bn = std::min(kEvalBatch, n - begin);
    const float* ts = data.ts.data() + begin * ts_row;
    const float* img = data.img.data() + begin * img_row;

    const float* logits = nullptr;
    const float* f_org = nullptr;
    const float* f_aug = nullptr;
    const float* alpha = nullptr;

    if (variant == model::Variant::ImageOnly) {
      const float* f = bundle.encoder_img->forward(img, bn, nn::Mode::Eval);
      logits = bundle.classifier->forward(f, bn, nn::Mode::Eval);
    } else if (variant == model::Variant::TsOnly) {
      const float* f = bundle.encoder_ts->forward(ts, bn, nn::Mode::Eval);
      logits = bundle.classifier->forward(f, bn, nn::Mode::Eval);
    } else {
      const float* ts_emb = bundle.encoder_ts->forward(ts, bn, nn::Mode::Eval);
      const float* img_emb = bundle.encoder_img->forward(img, bn, nn::Mode::Eval);
      f_org = data.org_modality == Modality::TimeSeries ? ts_emb : img_emb;
      f_aug = data.org_modality == Modality::TimeSeries ? img_emb : ts_emb;
      if (variant == model::Variant::Concat) {
        fused.resize(static_cast<std::size_t>(bn) * 2 * emb);
        for (int i = 0; i < bn; ++i) {
          std::memcpy(fused.data() + static_cast<std::size_t>(i) * 2 * emb,
                      f_org + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
          std::memcpy(fused.data() + static_cast<std::size_t>(i) * 2 * emb + emb,
                      f_aug + static_cast<std::size_t>(i) * emb, emb * sizeof(float));
        }
      } else {
        alpha = bundle.gating->forward(img, ts, bn, nn::Mode::Eval);
        fused.resize(static_cast<std::size_t>(bn) * emb);
        for (int i = 0; i < bn; ++i) {
          const float a = alpha[i];
          for (int k = 0; k < emb; ++k) {
            fused[static_cast<std::size_t>(i) * emb + k] =
                a * f_org[static_cast<std::size_t>(i) * emb + k] +
                (1.0f - a) * f_aug[static_cast<std::size_t>(i) * emb + k];
          }
        }
      }
      logits = bundle.classifier->forward(fused.data(), bn, nn::Mode::Eval);
    }

    for (int i = 0; i < bn; ++i) {
      PredictionDetail& d = out[begin + i];
      d.id = data.ids[begin + i];
      d.label = data.labels[begin + i];
      const float* row = logits + static_cast<std::size_t>(i) * c;
      int arg = 0;
      for (int k = 1; k < c; ++k)
        if (row[k] > row[arg]) arg = k;
      d.predicted = arg;
      if (alpha) d.alpha = alpha[i];
      if (f_org) {
        d.l_fd = losses::feature_distance_loss(
            std::span<const float>(f_org + static_cast<std::size_t>(i) * emb, emb),
            std::span<const float>(f_aug + static_cast<std::size_t>(i) * emb, emb));
      }
    }
  }
  return out;
}

int alpha_bucket(double alpha) {
  // Nearest tenth; exact midpoints (0.05, 0.15, ...) round toward zero.
  // The volatile store forces one double rounding of the product so the
  // bucket edges do not shift when the compiler fuses the multiply-subtract.
  volatile double scaled = alpha * 10.0;
  const int b = static_cast<int>(std::ceil(scaled - 0.5));
  return std::clamp(b, 0, 10);
}

EvalReport evaluate(model::ModelBundle& bundle, const training::TensorSet& data) {
  const auto details = predict(bundle, data);
  const int c = bundle.config.class_count;

  EvalReport report;
  report.count = static_cast<int>(details.size());
  report.confusion.assign(c, std::vector<int>(c, 0));
  std::vector<int> class_total(c, 0), class_hit(c, 0);
  double fd_sum = 0.0, alpha_sum = 0.0;
  int fd_n = 0, alpha_n = 0, hit = 0;

  for (const auto& d : details) {
    ++class_total[d.label];
    ++report.confusion[d.label][d.predicted];
    if (d.predicted == d.label) {
      ++hit;
      ++class_hit[d.label];
    }
    if (std::isfinite(d.l_fd)) {
      fd_sum += d.l_fd;
      ++fd_n;
    }
    if (std::isfinite(d.alpha)) {
      alpha_sum += d.alpha;
      ++alpha_n;
      ++report.alpha_histogram[alpha_bucket(d.alpha)];
    }
  }
  report.accuracy = static_cast<double>(hit) / details.size();
  report.per_class_accuracy.resize(c);
  for (int k = 0; k < c; ++k)
    report.per_class_accuracy[k] =
        class_total[k] > 0 ? static_cast<double>(class_hit[k]) / class_total[k] : 0.0;
  if (fd_n > 0) report.mean_l_fd = fd_sum / fd_n;
  if (alpha_n > 0) report.mean_alpha = alpha_sum / alpha_n;
  return report;
}

// ---------------------------------------------------------------------------
// ablation table
// ---------------------------------------------------------------------------

AblationTable run_ablation_suite(const training::TensorSet& train,
                                 const training::TensorSet& test,
                                 const model::ModelConfig& model_cfg,
                                 const training::TrainConfig& train_cfg) {
  struct Spec {
    const char* label;
    model::Variant variant;
    training::Ablation ablation;
  };
  static const Spec specs[] = {
      {"Proposed", model::Variant::Proposed, training::Ablation::None},
      {"w/o CMD", model::Variant::Proposed, training::Ablation::NoCmd},
      {"w/o L_FD", model::Variant::Proposed, training::Ablation::NoFd},
      {"CNN (image)", model::Variant::ImageOnly, training::Ablation::None},
      {"CNN (time series)", model::Variant::TsOnly, training::Ablation::None},
      {"CNN (concat)", model::Variant::Concat, training::Ablation::None},
  };

  AblationTable table;
  table.seed = train_cfg.seed;
  for (const Spec& s : specs) {
    model::ModelConfig mc = model_cfg;
    mc.variant = s.variant;
    training::TrainConfig tc = train_cfg;
    tc.ablation = s.ablation;
    tc.checkpoint_dir.clear();  // rows are transient, no checkpoints

    training::FitResult r = training::fit(train, mc, tc);
    AblationRow row{s.label, s.variant, s.ablation, evaluate(r.bundle, test),
                    std::move(r.records)};
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_ablation_csv(const AblationTable& table, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "method,accuracy_percent\n";
  char buf[64];
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%.2f", row.report.accuracy * 100.0);
    out << "\"" << row.label << "\"," << buf << "\n";
  }
}

void write_ablation_json(const AblationTable& table, const training::TrainConfig& train_cfg,
                         const fs::path& path) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    json r;
    r["method"] = row.label;
    r["variant"] = model::variant_name(row.variant);
    r["ablation"] = training::ablation_name(row.ablation);
    r["accuracy"] = row.report.accuracy;
    r["per_class_accuracy"] = row.report.per_class_accuracy;
    if (std::isfinite(row.report.mean_l_fd)) r["mean_l_fd"] = row.report.mean_l_fd;
    if (std::isfinite(row.report.mean_alpha)) r["mean_alpha"] = row.report.mean_alpha;
    rows.push_back(std::move(r));
  }
  json doc;
  doc["rows"] = std::move(rows);
  doc["seed"] = table.seed;
  doc["epochs"] = train_cfg.epochs;
  doc["learning_rate"] = train_cfg.learning_rate;
  doc["batch_size"] = train_cfg.batch_size;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// gate buckets, embeddings, comparison
// ---------------------------------------------------------------------------

AlphaBucketReport alpha_report(model::ModelBundle& bundle, const training::TensorSet& data,
                               int per_bucket, std::uint64_t seed) {
  if (per_bucket < 1) throw ArgumentError("per_bucket must be >= 1");
  if (!bundle.gating) throw StateError("gate report requires the gated variant");

  const auto details = predict(bundle, data);
  AlphaBucketReport report;
  report.per_bucket = per_bucket;
  report.seed = seed;

  std::array<std::vector<const PredictionDetail*>, 11> members;
  for (const auto& d : details) members[alpha_bucket(d.alpha)].push_back(&d);

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  for (int b = 0; b <= 10; ++b) {
    auto& pool = members[b];
    // predict() returns deterministic order; shuffle then truncate = sample.
    std::shuffle(pool.begin(), pool.end(), rng);
    const int take = std::min<int>(per_bucket, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
      const PredictionDetail& d = *pool[i];
      report.buckets[b].push_back(
          {d.id, d.alpha, d.label, d.predicted, d.predicted != d.label});
    }
  }
  return report;
}

void export_embeddings(model::ModelBundle& bundle, const training::TensorSet& data,
                       const fs::path& path) {
  check_compatible(bundle, data);
  if (!bundle.encoder_ts || !bundle.encoder_img)
    throw StateError("embedding export requires both encoders");
  const int emb = bundle.config.embedding_dim;
  const std::size_t ts_row = static_cast<std::size_t>(data.steps) * 3;
  const std::size_t img_row = static_cast<std::size_t>(data.side) * data.side;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,modality,label";
  for (int k = 0; k < emb; ++k) out << ",e" << k;
  out << "\n";

  char buf[32];
  auto write_row = [&](const std::string& id, const char* tag, int label, const float* e) {
    out << id << "," << tag << "," << label;
    for (int k = 0; k < emb; ++k) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(e[k]));
      out << "," << buf;
    }
    out << "\n";
  };

  for (int begin = 0; begin < data.size(); begin += kEvalBatch) {
    const int bn = std::min(kEvalBatch, data.size() - begin);
    const float* ts_emb =
        bundle.encoder_ts->forward(data.ts.data() + begin * ts_row, bn, nn::Mode::Eval);
    std::vector<float> ts_copy(ts_emb, ts_emb + static_cast<std::size_t>(bn) * emb);
    const float* img_emb =
        bundle.encoder_img->forward(data.img.data() + begin * img_row, bn, nn::Mode::Eval);
    const float* f_org = data.org_modality == Modality::TimeSeries ? ts_copy.data() : img_emb;
    const float* f_aug = data.org_modality == Modality::TimeSeries ? img_emb : ts_copy.data();
    for (int i = 0; i < bn; ++i) {
      write_row(data.ids[begin + i], "org", data.labels[begin + i],
                f_org + static_cast<std::size_t>(i) * emb);
      write_row(data.ids[begin + i], "aug", data.labels[begin + i],
                f_aug + static_cast<std::size_t>(i) * emb);
    }
  }
}

ComparisonReport compare_predictions(model::ModelBundle& bundle_a, model::ModelBundle& bundle_b,
                                     const training::TensorSet& test) {
  const auto pa = predict(bundle_a, test);
  const auto pb = predict(bundle_b, test);
  if (pa.size() != pb.size()) throw ArgumentError("prediction sets differ in size");

  ComparisonReport report;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].id != pb[i].id) throw ArgumentError("prediction sets differ in pattern ids");
    const bool ca = pa[i].predicted == pa[i].label;
    const bool cb = pb[i].predicted == pb[i].label;
    if (ca && cb) {
      ++report.both_correct;
    } else if (!ca && !cb) {
      ++report.both_wrong;
    } else {
      ComparisonRow row{pa[i].id, pa[i].label, pa[i].predicted, pb[i].predicted, pa[i].alpha};
      (ca ? report.a_only_correct : report.b_only_correct).push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace samm::eval
