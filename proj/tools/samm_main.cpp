// samm: prepare paired datasets, train, and report from one JSON run config.
// Exit codes: 0 success, 2 bad configuration, 3 data or training failure,
// 4 refusal to overwrite existing output, 5 incompatible artifacts.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "samm/augment.hpp"
#include "samm/config.hpp"
#include "samm/datasets.hpp"
#include "samm/eval.hpp"
#include "samm/model.hpp"
#include "samm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace samm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRefusal = 4;
constexpr int kExitIncompatible = 5;

// Thrown when an output already exists and --force was not given.
struct Refusal {
  std::string what;
};

// The prepared dataset directory is named by the dataset hash, so generation
// must be a pure function of the hashed sections; the seed derives from them.
std::uint64_t generator_seed(const config::RunConfig& cfg) {
  return std::strtoull(config::dataset_hash(cfg).c_str(), nullptr, 16);
}

fs::path prepared_dir(const config::RunConfig& cfg) {
  return cfg.output.dir / "prepared" / config::dataset_hash(cfg);
}

augment::AugmentConfig augment_config(const config::RunConfig& cfg) {
  augment::AugmentConfig a;
  a.image_side = cfg.model.image_side;
  a.time_steps = cfg.model.time_steps;
  a.max_drop_fraction = cfg.dataset.max_drop_fraction;
  a.ts_jitter_sigma = cfg.dataset.ts_jitter_sigma;
  a.jitter_seed = generator_seed(cfg);
  return a;
}

datasets::SplitPair load_source(const config::RunConfig& cfg) {
  switch (cfg.dataset.source) {
    case config::DatasetSource::Synth:
      return datasets::synth_shapes(cfg.dataset.synth_classes, cfg.dataset.synth_per_class,
                                    generator_seed(cfg), cfg.dataset.synth);
    case config::DatasetSource::TrajectoryJson:
      return datasets::load_dataset(cfg.dataset.root, datasets::DatasetFormat::TrajectoryJson);
    case config::DatasetSource::ImageDir:
      return datasets::load_dataset(cfg.dataset.root, datasets::DatasetFormat::ImageDir);
  }
  throw StateError("unknown dataset source");
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

void write_floats(const fs::path& path, const std::vector<float>& v) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path.string());
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<float> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw LoadError("truncated tensor file: " + path.string());
  char extra;
  if (in.read(&extra, 1)) throw LoadError("trailing bytes in tensor file: " + path.string());
  return v;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

json load_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw LoadError(std::string("cannot open ") + what + ": " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// prepared dataset container: manifest.json + raw little-endian float32 blobs
// ---------------------------------------------------------------------------

constexpr const char* kPreparedFormat = "samm-prepared";
constexpr int kPreparedVersion = 1;

json split_manifest(const training::TensorSet& set, const augment::BuildPairsResult& built,
                    const std::string& stem) {
  json s;
  s["count"] = set.size();
  s["ids"] = set.ids;
  s["labels"] = set.labels;
  s["ts"] = stem + ".ts.bin";
  s["img"] = stem + ".img.bin";
  s["dropped"] = built.dropped;
  s["dropped_ids"] = built.dropped_ids;
  std::vector<std::string> provenance;
  for (const auto& p : built.pairs)
    if (provenance.empty() || provenance.back() != p.provenance)
      provenance.push_back(p.provenance);
  std::sort(provenance.begin(), provenance.end());
  provenance.erase(std::unique(provenance.begin(), provenance.end()), provenance.end());
  s["provenance"] = provenance;
  return s;
}

training::TensorSet read_split(const json& m, const json& s, const fs::path& dir) {
  training::TensorSet set;
  set.org_modality =
      m.at("direction") == "image_to_ts" ? Modality::Image : Modality::TimeSeries;
  set.class_count = m.at("class_count").get<int>();
  set.steps = m.at("steps").get<int>();
  set.side = m.at("side").get<int>();
  set.ids = s.at("ids").get<std::vector<std::string>>();
  set.labels = s.at("labels").get<std::vector<int>>();
  const auto n = static_cast<std::size_t>(s.at("count").get<int>());
  if (set.ids.size() != n || set.labels.size() != n)
    throw LoadError("prepared manifest: id/label counts disagree");
  set.ts = read_floats(dir / s.at("ts").get<std::string>(), n * set.steps * 3);
  set.img = read_floats(dir / s.at("img").get<std::string>(),
                        n * static_cast<std::size_t>(set.side) * set.side);
  return set;
}

struct Prepared {
  training::TensorSet train;
  training::TensorSet test;
  json manifest;
};

Prepared load_prepared(const config::RunConfig& cfg) {
  const fs::path dir = prepared_dir(cfg);
  if (!fs::exists(dir / "manifest.json"))
    throw LoadError("prepared dataset not found (run `samm prepare` first): " + dir.string());
  json m = load_json(dir / "manifest.json", "prepared manifest");
  if (m.value("format", "") != kPreparedFormat)
    throw LoadError("not a prepared dataset: " + dir.string());
  if (m.value("format_version", 0) != kPreparedVersion)
    throw VersionError("prepared dataset has format_version " +
                       m.at("format_version").dump() + ", expected " +
                       std::to_string(kPreparedVersion));
  if (m.at("steps").get<int>() != cfg.model.time_steps ||
      m.at("side").get<int>() != cfg.model.image_side)
    throw LoadError("prepared dataset geometry does not match the configuration");
  Prepared p;
  p.train = read_split(m, m.at("splits").at("train"), dir);
  p.test = read_split(m, m.at("splits").at("test"), dir);
  p.manifest = std::move(m);
  return p;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_prepare(const fs::path& config_path, bool force) {
  const auto cfg = config::load_run_config(config_path);
  const fs::path dir = prepared_dir(cfg);
  if (fs::exists(dir)) {
    if (!force)
      throw Refusal{"prepared dataset exists: " + dir.string() + " (use --force to rebuild)"};
    fs::remove_all(dir);
  }

  auto source = load_source(cfg);
  int expansion = 1;
  if (cfg.dataset.rotate_copies > 0) {
    source.train = augment::rotate_augment(source.train, cfg.dataset.rotate_copies,
                                           cfg.dataset.rotate_step_degrees);
    expansion = cfg.dataset.rotate_copies;
  }

  const auto acfg = augment_config(cfg);
  const auto train_built = augment::build_pairs(source.train, acfg);
  const auto test_built = augment::build_pairs(source.test, acfg);
  const auto train_set = training::tensorize(train_built.pairs, source.train.class_count,
                                             acfg.time_steps, acfg.image_side);
  const auto test_set = training::tensorize(test_built.pairs, source.test.class_count,
                                            acfg.time_steps, acfg.image_side);

  fs::create_directories(dir);
  write_floats(dir / "train.ts.bin", train_set.ts);
  write_floats(dir / "train.img.bin", train_set.img);
  write_floats(dir / "test.ts.bin", test_set.ts);
  write_floats(dir / "test.img.bin", test_set.img);

  json m;
  m["format"] = kPreparedFormat;
  m["format_version"] = kPreparedVersion;
  m["dataset_hash"] = config::dataset_hash(cfg);
  m["direction"] =
      cfg.dataset.org_modality() == Modality::Image ? "image_to_ts" : "ts_to_image";
  m["class_count"] = train_set.class_count;
  m["class_names"] = source.train.class_names;
  m["steps"] = acfg.time_steps;
  m["side"] = acfg.image_side;
  m["generator_seed"] = generator_seed(cfg);
  m["tensor_encoding"] = "float32 little-endian";
  m["augmentation"] = {{"rotate_copies", cfg.dataset.rotate_copies},
                       {"rotate_step_degrees", cfg.dataset.rotate_step_degrees},
                       {"ts_jitter_sigma", cfg.dataset.ts_jitter_sigma},
                       {"max_drop_fraction", cfg.dataset.max_drop_fraction}};
  m["train_expansion"] = expansion;
  m["splits"] = {{"train", split_manifest(train_set, train_built, "train")},
                 {"test", split_manifest(test_set, test_built, "test")}};
  write_json(dir / "manifest.json", m);

  std::printf("prepared dataset: %s\n", dir.string().c_str());
  std::printf("train patterns: %d (dropped %d)\n", train_set.size(), train_built.dropped);
  std::printf("test patterns: %d (dropped %d)\n", test_set.size(), test_built.dropped);
  return kExitOk;
}

json report_json(const eval::EvalReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["count"] = r.count;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["confusion"] = r.confusion;
  if (std::isfinite(r.mean_l_fd)) j["mean_l_fd"] = r.mean_l_fd;
  if (std::isfinite(r.mean_alpha)) {
    j["mean_alpha"] = r.mean_alpha;
    j["alpha_histogram"] = r.alpha_histogram;
  }
  return j;
}

int cmd_train(const fs::path& config_path, bool force, std::optional<std::uint64_t> seed,
              const std::string& ablation) {
  auto cfg = config::load_run_config(config_path);
  if (seed) cfg.training.seed = *seed;
  if (!ablation.empty()) {
    try {
      cfg.training.ablation = training::ablation_from_name(ablation);
    } catch (const ArgumentError&) {
      throw SchemaError("--ablation must be one of none, no_cmd, no_fd");
    }
  }

  const auto data = load_prepared(cfg);
  const fs::path run =
      cfg.output.dir / "runs" / (config::config_hash(cfg) + "-" + utc_timestamp());
  if (fs::exists(run)) {
    if (!force) throw Refusal{"run directory exists: " + run.string() + " (use --force)"};
    fs::remove_all(run);
  }
  fs::create_directories(run);
  std::printf("run directory: %s\n", run.string().c_str());

  cfg.training.checkpoint_dir = run / "checkpoints";

  std::ofstream csv(run / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (run / "metrics.csv").string());
  csv << "epoch,l_cls,l_fd,l_adv,l_disc,disc_accuracy,train_accuracy,seconds,deterministic\n"
      << std::flush;
  const int total = cfg.training.epochs;
  const auto callback = [&](const training::EpochRecord& r) {
    char line[256];
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f,%s", r.epoch,
                  r.l_cls, r.l_fd, r.l_adv, r.l_disc, r.disc_accuracy, r.train_accuracy,
                  r.seconds, r.deterministic ? "true" : "false");
    csv << line << "\n" << std::flush;  // survives a mid-training abort
    std::printf("epoch %d/%d  l_cls %.4f  l_fd %.4f  l_adv %.4f  l_disc %.4f  acc %.4f\n",
                r.epoch, total, r.l_cls, r.l_fd, r.l_adv, r.l_disc, r.train_accuracy);
  };

  auto result = training::fit(data.train, cfg.model, cfg.training, callback);
  const auto report = eval::evaluate(result.bundle, data.test);

  json summary;
  summary["ablation"] = training::ablation_name(cfg.training.ablation);
  summary["seed"] = cfg.training.seed;
  summary["epochs"] = static_cast<int>(result.records.size());
  summary["dataset_hash"] = config::dataset_hash(cfg);
  summary["config_hash"] = config::config_hash(cfg);
  summary["config"] = json::parse(config::dump_run_config(cfg));
  summary["checkpoint"] = "checkpoints/final";
  if (!result.records.empty()) {
    const auto& last = result.records.back();
    summary["final"] = {{"l_cls", last.l_cls},
                        {"l_fd", last.l_fd},
                        {"l_adv", last.l_adv},
                        {"l_disc", last.l_disc},
                        {"disc_accuracy", last.disc_accuracy},
                        {"train_accuracy", last.train_accuracy}};
  }
  summary["test"] = report_json(report);
  write_json(run / "summary.json", summary);

  std::printf("test accuracy: %.2f%%\n", report.accuracy * 100.0);
  std::printf("summary: %s\n", (run / "summary.json").string().c_str());
  return kExitOk;
}

fs::path reports_dir(const config::RunConfig& cfg) {
  const fs::path dir = cfg.output.dir / "reports";
  fs::create_directories(dir);
  return dir;
}

int cmd_eval(const fs::path& config_path, const fs::path& checkpoint) {
  const auto cfg = config::load_run_config(config_path);
  const auto data = load_prepared(cfg);
  auto bundle = model::load_checkpoint(checkpoint);
  const auto report = eval::evaluate(bundle, data.test);

  json j = report_json(report);
  j["checkpoint"] = checkpoint.string();
  j["variant"] = model::variant_name(bundle.config.variant);
  j["epoch"] = bundle.epoch;
  const fs::path path = reports_dir(cfg) / ("eval-" + config::config_hash(cfg) + ".json");
  write_json(path, j);

  std::printf("test accuracy: %.2f%%\n", report.accuracy * 100.0);
  std::printf("report: %s\n", path.string().c_str());
  return kExitOk;
}

int cmd_ablate(const fs::path& config_path, std::optional<std::uint64_t> seed) {
  auto cfg = config::load_run_config(config_path);
  if (seed) cfg.training.seed = *seed;
  const auto data = load_prepared(cfg);

  const auto table = eval::run_ablation_suite(data.train, data.test, cfg.model, cfg.training);
  const fs::path dir = reports_dir(cfg);
  const std::string hash = config::config_hash(cfg);
  const fs::path csv_path = dir / ("ablation-" + hash + ".csv");
  const fs::path json_path = dir / ("ablation-" + hash + ".json");
  eval::write_ablation_csv(table, csv_path);
  eval::write_ablation_json(table, cfg.training, json_path);

  for (const auto& row : table.rows)
    std::printf("%-18s %6.2f%%\n", row.label.c_str(), row.report.accuracy * 100.0);
  std::printf("test accuracy: %.2f%%\n", table.rows.front().report.accuracy * 100.0);
  std::printf("report: %s\n", csv_path.string().c_str());
  std::printf("report: %s\n", json_path.string().c_str());
  return kExitOk;
}

int cmd_report_alpha(const fs::path& config_path, const fs::path& checkpoint, int per_bucket,
                     std::optional<std::uint64_t> seed) {
  const auto cfg = config::load_run_config(config_path);
  const auto data = load_prepared(cfg);
  auto bundle = model::load_checkpoint(checkpoint);
  const std::uint64_t sample_seed = seed ? *seed : cfg.training.seed;
  const auto report = eval::alpha_report(bundle, data.test, per_bucket, sample_seed);
  const auto summary = eval::evaluate(bundle, data.test);

  json buckets = json::array();
  for (int b = 0; b <= 10; ++b) {
    json entries = json::array();
    for (const auto& e : report.buckets[b]) {
      entries.push_back({{"id", e.id},
                         {"alpha", e.alpha},
                         {"label", e.label},
                         {"predicted", e.predicted},
                         {"misclassified", e.misclassified}});
    }
    buckets.push_back(
        {{"bucket", b}, {"alpha_center", b / 10.0}, {"entries", std::move(entries)}});
  }
  json j;
  j["per_bucket"] = report.per_bucket;
  j["seed"] = report.seed;
  j["accuracy"] = summary.accuracy;
  j["alpha_histogram"] = summary.alpha_histogram;
  j["buckets"] = std::move(buckets);
  const fs::path path = reports_dir(cfg) / ("alpha-" + config::config_hash(cfg) + ".json");
  write_json(path, j);

  std::printf("test accuracy: %.2f%%\n", summary.accuracy * 100.0);
  std::printf("report: %s\n", path.string().c_str());
  return kExitOk;
}

int cmd_export_embeddings(const fs::path& config_path, const fs::path& checkpoint,
                          const std::string& split) {
  const auto cfg = config::load_run_config(config_path);
  const auto data = load_prepared(cfg);
  auto bundle = model::load_checkpoint(checkpoint);
  const auto& set = split == "train" ? data.train : data.test;

  const fs::path path = reports_dir(cfg) / ("embeddings-" + config::config_hash(cfg) + "-" +
                                            split + ".csv");
  eval::export_embeddings(bundle, set, path);
  const auto report = eval::evaluate(bundle, data.test);

  std::printf("test accuracy: %.2f%%\n", report.accuracy * 100.0);
  std::printf("report: %s\n", path.string().c_str());
  return kExitOk;
}

template <typename Fn>
int run_guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Refusal& r) {
    std::fprintf(stderr, "refusing: %s\n", r.what.c_str());
    return kExitRefusal;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "incompatible artifact: %s\n", e.what());
    return kExitIncompatible;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "incompatible artifact: %s\n", e.what());
    return kExitIncompatible;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "incompatible artifact: %s\n", e.what());
    return kExitIncompatible;
  } catch (const StateError& e) {
    std::fprintf(stderr, "incompatible artifact: %s\n", e.what());
    return kExitIncompatible;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paired-modality embedding toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint;
  std::string ablation;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  bool force = false;
  int per_bucket = 5;
  int rc = kExitOk;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run configuration JSON")->required();
  };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  };

  auto* prepare = app.add_subcommand("prepare", "derive paired views into a prepared dataset");
  add_config(prepare);
  prepare->add_flag("--force", force, "rebuild an existing prepared dataset");
  prepare->callback([&] { rc = run_guarded([&] { return cmd_prepare(config_path, force); }); });

  auto* train = app.add_subcommand("train", "train on a prepared dataset");
  add_config(train);
  train->add_flag("--force", force, "replace a colliding run directory");
  train->add_option("--seed", seed, "override training.seed");
  train->add_option("--ablation", ablation, "override training.ablation (none, no_cmd, no_fd)");
  train->callback(
      [&] { rc = run_guarded([&] { return cmd_train(config_path, force, seed, ablation); }); });

  auto* evaluate = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_config(evaluate);
  add_checkpoint(evaluate);
  evaluate->callback([&] { rc = run_guarded([&] { return cmd_eval(config_path, checkpoint); }); });

  auto* ablate = app.add_subcommand("ablate", "train and score the six standard rows");
  add_config(ablate);
  ablate->add_option("--seed", seed, "override training.seed");
  ablate->callback([&] { rc = run_guarded([&] { return cmd_ablate(config_path, seed); }); });

  auto* alpha = app.add_subcommand("report-alpha", "sample test patterns per gate bucket");
  add_config(alpha);
  add_checkpoint(alpha);
  alpha->add_option("--per-bucket", per_bucket, "patterns sampled per bucket")
      ->check(CLI::PositiveNumber);
  alpha->add_option("--seed", seed, "sampling seed (default: training.seed)");
  alpha->callback([&] {
    rc = run_guarded(
        [&] { return cmd_report_alpha(config_path, checkpoint, per_bucket, seed); });
  });

  auto* embed = app.add_subcommand("export-embeddings", "write per-view embeddings as CSV");
  add_config(embed);
  add_checkpoint(embed);
  embed->add_option("--split", split, "which split to export")
      ->check(CLI::IsMember({"train", "test"}));
  embed->callback([&] {
    rc = run_guarded([&] { return cmd_export_embeddings(config_path, checkpoint, split); });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  return rc;
}
