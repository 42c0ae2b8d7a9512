#include "samm/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

using nlohmann::json;

namespace samm::config {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw SchemaError(path + ": " + what);
}

void expect_keys(const json& obj, const std::string& path, std::set<std::string> allowed) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
}

const json* get(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<int>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

void parse_dataset(const json& j, DatasetConfig& out) {
  expect_keys(j, "dataset",
              {"source", "root", "direction", "synth", "rotate_copies", "rotate_step_degrees",
               "max_drop_fraction", "ts_jitter_sigma"});
  if (const json* v = get(j, "source")) {
    const std::string s = as_string(*v, "dataset.source");
    if (s == "synth")
      out.source = DatasetSource::Synth;
    else if (s == "trajectory-json")
      out.source = DatasetSource::TrajectoryJson;
    else if (s == "image-dir")
      out.source = DatasetSource::ImageDir;
    else
      fail("dataset.source", "must be one of synth, trajectory-json, image-dir");
  }
  if (const json* v = get(j, "root")) out.root = as_string(*v, "dataset.root");
  if (out.source != DatasetSource::Synth && out.root.empty())
    fail("dataset.root", "required for on-disk sources");

  if (const json* v = get(j, "direction")) {
    const std::string d = as_string(*v, "dataset.direction");
    if (d != "ts_to_image" && d != "image_to_ts")
      fail("dataset.direction", "must be ts_to_image or image_to_ts");
    const bool wants_image_org = d == "image_to_ts";
    if (wants_image_org != (out.org_modality() == Modality::Image))
      fail("dataset.direction", "does not match the source modality");
  }

  if (const json* v = get(j, "synth")) {
    if (!v->is_object()) fail("dataset.synth", "expected an object");
    expect_keys(*v, "dataset.synth",
                {"classes", "per_class", "noise_sigma", "max_rotation_deg", "scale_min",
                 "scale_max", "train_fraction"});
    if (const json* w = get(*v, "classes")) out.synth_classes = as_int(*w, "dataset.synth.classes");
    if (const json* w = get(*v, "per_class"))
      out.synth_per_class = as_int(*w, "dataset.synth.per_class");
    if (const json* w = get(*v, "noise_sigma"))
      out.synth.noise_sigma = as_number(*w, "dataset.synth.noise_sigma");
    if (const json* w = get(*v, "max_rotation_deg"))
      out.synth.max_rotation_deg = as_number(*w, "dataset.synth.max_rotation_deg");
    if (const json* w = get(*v, "scale_min"))
      out.synth.scale_min = as_number(*w, "dataset.synth.scale_min");
    if (const json* w = get(*v, "scale_max"))
      out.synth.scale_max = as_number(*w, "dataset.synth.scale_max");
    if (const json* w = get(*v, "train_fraction"))
      out.synth.train_fraction = as_number(*w, "dataset.synth.train_fraction");
    if (out.synth_classes < 2 || out.synth_classes > 10)
      fail("dataset.synth.classes", "must lie in [2, 10]");
    if (out.synth_per_class < 4) fail("dataset.synth.per_class", "must be >= 4");
    if (!(out.synth.train_fraction > 0.0 && out.synth.train_fraction < 1.0))
      fail("dataset.synth.train_fraction", "must lie strictly between 0 and 1");
  }

  if (const json* v = get(j, "rotate_copies")) {
    out.rotate_copies = as_int(*v, "dataset.rotate_copies");
    if (out.rotate_copies < 0) fail("dataset.rotate_copies", "must be >= 0");
    if (out.rotate_copies > 0 && out.source != DatasetSource::ImageDir)
      fail("dataset.rotate_copies", "rotation expansion applies to image-dir sources only");
  }
  if (const json* v = get(j, "rotate_step_degrees"))
    out.rotate_step_degrees = as_number(*v, "dataset.rotate_step_degrees");
  if (const json* v = get(j, "max_drop_fraction")) {
    out.max_drop_fraction = as_number(*v, "dataset.max_drop_fraction");
    if (out.max_drop_fraction < 0.0 || out.max_drop_fraction > 1.0)
      fail("dataset.max_drop_fraction", "must lie in [0, 1]");
  }
  if (const json* v = get(j, "ts_jitter_sigma")) {
    out.ts_jitter_sigma = as_number(*v, "dataset.ts_jitter_sigma");
    if (out.ts_jitter_sigma < 0.0) fail("dataset.ts_jitter_sigma", "must be >= 0");
  }
}

void parse_model(const json& j, model::ModelConfig& out) {
  expect_keys(j, "model", {"embedding_dim", "time_steps", "image_side"});
  if (const json* v = get(j, "embedding_dim")) out.embedding_dim = as_int(*v, "model.embedding_dim");
  if (const json* v = get(j, "time_steps")) out.time_steps = as_int(*v, "model.time_steps");
  if (const json* v = get(j, "image_side")) out.image_side = as_int(*v, "model.image_side");
  if (out.embedding_dim < 1) fail("model.embedding_dim", "must be >= 1");
  if (out.time_steps < 8) fail("model.time_steps", "must be >= 8");
  if (out.image_side < 8) fail("model.image_side", "must be >= 8");
}

void parse_training(const json& j, training::TrainConfig& out) {
  expect_keys(j, "training",
              {"epochs", "learning_rate", "batch_size", "beta1", "beta2", "adam_eps", "weights",
               "seed", "ablation", "checkpoint_every"});
  if (const json* v = get(j, "epochs")) out.epochs = as_int(*v, "training.epochs");
  if (const json* v = get(j, "learning_rate"))
    out.learning_rate = as_number(*v, "training.learning_rate");
  if (const json* v = get(j, "batch_size")) out.batch_size = as_int(*v, "training.batch_size");
  if (const json* v = get(j, "beta1")) out.beta1 = as_number(*v, "training.beta1");
  if (const json* v = get(j, "beta2")) out.beta2 = as_number(*v, "training.beta2");
  if (const json* v = get(j, "adam_eps")) out.adam_eps = as_number(*v, "training.adam_eps");
  if (const json* v = get(j, "weights")) {
    if (!v->is_object()) fail("training.weights", "expected an object");
    expect_keys(*v, "training.weights", {"cls", "fd", "adv"});
    if (const json* w = get(*v, "cls")) out.weights.w_cls = as_number(*w, "training.weights.cls");
    if (const json* w = get(*v, "fd")) out.weights.w_fd = as_number(*w, "training.weights.fd");
    if (const json* w = get(*v, "adv")) out.weights.w_adv = as_number(*w, "training.weights.adv");
  }
  if (const json* v = get(j, "seed")) {
    if (!v->is_number_unsigned() && !v->is_number_integer())
      fail("training.seed", "expected an integer");
    out.seed = v->get<std::uint64_t>();
  }
  if (const json* v = get(j, "ablation")) {
    const std::string a = as_string(*v, "training.ablation");
    try {
      out.ablation = training::ablation_from_name(a);
    } catch (const ArgumentError&) {
      fail("training.ablation", "must be one of none, no_cmd, no_fd");
    }
  }
  if (const json* v = get(j, "checkpoint_every")) {
    out.checkpoint_every = as_int(*v, "training.checkpoint_every");
    if (out.checkpoint_every < 0) fail("training.checkpoint_every", "must be >= 0");
  }
  try {
    out.validate();
  } catch (const ArgumentError& e) {
    fail("training", e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("config root must be an object");
  expect_keys(j, "", {"dataset", "model", "training", "output"});

  RunConfig cfg;
  if (const json* v = get(j, "dataset")) {
    if (!v->is_object()) fail("dataset", "expected an object");
    parse_dataset(*v, cfg.dataset);
  }
  if (const json* v = get(j, "model")) {
    if (!v->is_object()) fail("model", "expected an object");
    parse_model(*v, cfg.model);
  }
  if (const json* v = get(j, "training")) {
    if (!v->is_object()) fail("training", "expected an object");
    parse_training(*v, cfg.training);
  }
  if (const json* v = get(j, "output")) {
    if (!v->is_object()) fail("output", "expected an object");
    expect_keys(*v, "output", {"dir"});
    if (const json* w = get(*v, "dir")) cfg.output.dir = as_string(*w, "output.dir");
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

namespace {

json dataset_json(const RunConfig& cfg) {
  json d;
  switch (cfg.dataset.source) {
    case DatasetSource::Synth: d["source"] = "synth"; break;
    case DatasetSource::TrajectoryJson: d["source"] = "trajectory-json"; break;
    case DatasetSource::ImageDir: d["source"] = "image-dir"; break;
  }
  if (!cfg.dataset.root.empty()) d["root"] = cfg.dataset.root.string();
  if (cfg.dataset.source == DatasetSource::Synth) {
    d["synth"] = {{"classes", cfg.dataset.synth_classes},
                  {"per_class", cfg.dataset.synth_per_class},
                  {"noise_sigma", cfg.dataset.synth.noise_sigma},
                  {"max_rotation_deg", cfg.dataset.synth.max_rotation_deg},
                  {"scale_min", cfg.dataset.synth.scale_min},
                  {"scale_max", cfg.dataset.synth.scale_max},
                  {"train_fraction", cfg.dataset.synth.train_fraction}};
  }
  d["rotate_copies"] = cfg.dataset.rotate_copies;
  d["rotate_step_degrees"] = cfg.dataset.rotate_step_degrees;
  d["max_drop_fraction"] = cfg.dataset.max_drop_fraction;
  d["ts_jitter_sigma"] = cfg.dataset.ts_jitter_sigma;
  return d;
}

json model_json(const RunConfig& cfg) {
  return {{"embedding_dim", cfg.model.embedding_dim},
          {"time_steps", cfg.model.time_steps},
          {"image_side", cfg.model.image_side}};
}

json training_json(const RunConfig& cfg) {
  return {{"epochs", cfg.training.epochs},
          {"learning_rate", cfg.training.learning_rate},
          {"batch_size", cfg.training.batch_size},
          {"beta1", cfg.training.beta1},
          {"beta2", cfg.training.beta2},
          {"adam_eps", cfg.training.adam_eps},
          {"weights",
           {{"cls", cfg.training.weights.w_cls},
            {"fd", cfg.training.weights.w_fd},
            {"adv", cfg.training.weights.w_adv}}},
          {"seed", cfg.training.seed},
          {"ablation", training::ablation_name(cfg.training.ablation)},
          {"checkpoint_every", cfg.training.checkpoint_every}};
}

// FNV-1a over the canonical dump; 64 bits is plenty for directory names.
std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

}  // namespace

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["dataset"] = dataset_json(cfg);
  j["model"] = model_json(cfg);
  j["training"] = training_json(cfg);
  j["output"] = {{"dir", cfg.output.dir.string()}};
  return j.dump(2);
}

std::string dataset_hash(const RunConfig& cfg) {
  json j;
  j["dataset"] = dataset_json(cfg);
  j["model"] = model_json(cfg);
  return fnv1a_hex(j.dump());
}

std::string config_hash(const RunConfig& cfg) {
  json j;
  j["dataset"] = dataset_json(cfg);
  j["model"] = model_json(cfg);
  j["training"] = training_json(cfg);
  return fnv1a_hex(j.dump());
}

}  // namespace samm::config
