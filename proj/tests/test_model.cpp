#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "samm/model.hpp"
#include "support/temp_dir.hpp"

using namespace samm;
using samm::testing::TempDir;

namespace {

// Small dims keep construction fast; structural behavior is dim-independent.
model::ModelConfig small_config(model::Variant v = model::Variant::Proposed) {
  model::ModelConfig cfg;
  cfg.class_count = 3;
  cfg.time_steps = 16;
  cfg.image_side = 16;
  cfg.embedding_dim = 64;
  cfg.variant = v;
  return cfg;
}

std::vector<float> random_ts(const model::ModelConfig& cfg, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> x(static_cast<std::size_t>(cfg.ts_input_dim()));
  for (auto& v : x) v = u(rng);
  for (int k = 0; k < cfg.time_steps; ++k) x[2 * cfg.time_steps + k] = 1.0f;  // pen row
  return x;
}

std::vector<float> random_img(const model::ModelConfig& cfg, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::bernoulli_distribution b(0.2);
  std::vector<float> x(static_cast<std::size_t>(cfg.img_input_dim()));
  for (auto& v : x) v = b(rng) ? 1.0f : 0.0f;
  return x;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// dimensions and configuration
// ---------------------------------------------------------------------------

TEST_CASE("pooling chain and flattened stem widths") {
  CHECK(model::pooled_len(50) == 6);  // 50 -> 25 -> 12 -> 6
  CHECK(model::pooled_len(32) == 4);
  CHECK(model::pooled_len(16) == 2);
  CHECK(model::pooled_len(8) == 1);
  CHECK(model::ts_flat_dim(50) == 768);
  CHECK(model::img_flat_dim(32) == 2048);
  CHECK(model::ts_flat_dim(16) == 256);
  CHECK(model::img_flat_dim(16) == 512);
}

TEST_CASE("variant names round-trip") {
  for (auto v : {model::Variant::Proposed, model::Variant::ImageOnly, model::Variant::TsOnly,
                 model::Variant::Concat})
    CHECK(model::variant_from_name(model::variant_name(v)) == v);
  CHECK_THROWS_AS(model::variant_from_name("unknown"), ArgumentError);
}

TEST_CASE("model config validation") {
  auto cfg = small_config();
  cfg.class_count = 1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.time_steps = 7;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.image_side = 7;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.embedding_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

// ---------------------------------------------------------------------------
// bundle construction
// ---------------------------------------------------------------------------

TEST_CASE("create is deterministic in the seed and names are unique") {
  auto a = model::ModelBundle::create(small_config(), 42);
  auto b = model::ModelBundle::create(small_config(), 42);
  auto c = model::ModelBundle::create(small_config(), 43);

  const auto pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, differs_from_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && pa[i]->value == pb[i]->value;
    differs_from_c = differs_from_c || pa[i]->value != pc[i]->value;
  }
  CHECK(all_equal);
  CHECK(differs_from_c);

  std::set<std::string> names;
  for (auto* p : pa) CHECK(names.insert(p->name).second);
  for (auto* buf : a.all_buffers()) CHECK(names.insert(buf->name).second);
  // Proposed: 2 encoders (12 stem + 8 head), cmd 10, gating 34, classifier 6.
  CHECK(pa.size() == 90);
  CHECK(a.all_buffers().size() == 42);
  CHECK(names.count("encoder_ts.stem.conv1.weight") == 1);
  CHECK(names.count("encoder_img.head.fc2.weight") == 1);
  CHECK(names.count("gating.head.out.bias") == 1);
  CHECK(names.count("cmd.head.bn2.running_var") == 1);
  CHECK(names.count("classifier.head.out.weight") == 1);
}

TEST_CASE("params_of selects by network prefix") {
  auto bundle = model::ModelBundle::create(small_config(), 1);
  CHECK(bundle.params_of("encoder_ts").size() == 20);
  CHECK(bundle.params_of("encoder_img").size() == 20);
  CHECK(bundle.params_of("cmd").size() == 10);
  CHECK(bundle.params_of("gating").size() == 34);
  CHECK(bundle.params_of("classifier").size() == 6);
  CHECK(bundle.params_of("encoder").empty());  // exact prefix, not substring
  CHECK(bundle.main_params().size() == 80);
  CHECK(bundle.cmd_params().size() == 10);
}

TEST_CASE("baseline variants instantiate only what they use") {
  auto img_only = model::ModelBundle::create(small_config(model::Variant::ImageOnly), 5);
  CHECK(img_only.encoder_ts == nullptr);
  CHECK(img_only.encoder_img != nullptr);
  CHECK(img_only.cmd == nullptr);
  CHECK(img_only.gating == nullptr);
  CHECK(img_only.classifier->in_dim() == 64);

  auto concat = model::ModelBundle::create(small_config(model::Variant::Concat), 5);
  CHECK(concat.encoder_ts != nullptr);
  CHECK(concat.encoder_img != nullptr);
  CHECK(concat.cmd == nullptr);
  CHECK(concat.classifier->in_dim() == 128);  // both embeddings

  model::ModelConfig full;
  full.class_count = 6;
  full.variant = model::Variant::Concat;
  auto big = model::ModelBundle::create(full, 5);
  CHECK(big.classifier->in_dim() == 1024);

  CHECK_THROWS_AS(img_only.encoder_for(Modality::TimeSeries), StateError);
  CHECK(img_only.encoder_for(Modality::Image).modality() == Modality::Image);
}

// ---------------------------------------------------------------------------
// single-sample entry points
// ---------------------------------------------------------------------------

TEST_CASE("encoder_forward returns a deterministic embedding of the right size") {
  auto bundle = model::ModelBundle::create(small_config(), 9);
  const auto cfg = bundle.config;
  const auto x_ts = random_ts(cfg, 1);
  const auto x_img = random_img(cfg, 2);

  const auto f1 = model::encoder_forward(bundle, Modality::TimeSeries, x_ts);
  const auto f2 = model::encoder_forward(bundle, Modality::TimeSeries, x_ts);
  const auto g = model::encoder_forward(bundle, Modality::Image, x_img);
  REQUIRE(f1.size() == 64);
  REQUIRE(g.size() == 64);
  CHECK(f1 == f2);  // Eval mode touches no state
  for (float v : f1) CHECK(std::isfinite(v));

  std::vector<float> wrong(cfg.ts_input_dim() + 1);
  try {
    model::encoder_forward(bundle, Modality::TimeSeries, wrong);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("expected 48") != std::string::npos);
    CHECK(std::string(e.what()).find("got 49") != std::string::npos);
  }
}

TEST_CASE("gate_combine interpolates the two embeddings") {
  const std::vector<float> f_org = {1.0f, -2.0f, 0.5f};
  const std::vector<float> f_aug = {3.0f, 4.0f, -1.5f};

  const auto only_org = model::gate_combine(f_org, f_aug, model::GateValue(1.0));
  CHECK(only_org == f_org);
  const auto only_aug = model::gate_combine(f_org, f_aug, model::GateValue(0.0));
  CHECK(only_aug == f_aug);
  const auto mid = model::gate_combine(f_org, f_aug, model::GateValue(0.5));
  CHECK(mid[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(mid[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mid[2] == doctest::Approx(-0.5).epsilon(1e-6));

  CHECK_THROWS_AS(model::GateValue(-0.01), ArgumentError);
  CHECK_THROWS_AS(model::GateValue(1.01), ArgumentError);
  const std::vector<float> shorter = {1.0f};
  CHECK_THROWS_AS(model::gate_combine(f_org, shorter, model::GateValue(0.5)), ShapeError);
}

TEST_CASE("gating_forward yields a probability that saturates with the bias") {
  auto bundle = model::ModelBundle::create(small_config(), 11);
  const auto cfg = bundle.config;
  const auto x_ts = random_ts(cfg, 3);
  const auto x_img = random_img(cfg, 4);

  const auto alpha = model::gating_forward(bundle, Modality::TimeSeries, x_ts, x_img);
  CHECK(alpha.value >= 0.0);
  CHECK(alpha.value <= 1.0);
  // Image-original ordering must route the views to the same stems.
  const auto alpha_img = model::gating_forward(bundle, Modality::Image, x_img, x_ts);
  CHECK(alpha_img.value == doctest::Approx(alpha.value).epsilon(1e-6));

  auto& bias = bundle.gating->final_bias();
  REQUIRE(bias.name == "gating.head.out.bias");
  bias.value[0] = 30.0f;
  CHECK(model::gating_forward(bundle, Modality::TimeSeries, x_ts, x_img).value ==
        doctest::Approx(1.0).epsilon(1e-6));
  bias.value[0] = -30.0f;
  CHECK(model::gating_forward(bundle, Modality::TimeSeries, x_ts, x_img).value <= 1e-6);

  CHECK_THROWS_AS(model::gating_forward(bundle, Modality::TimeSeries, x_img, x_ts), ShapeError);
  auto concat = model::ModelBundle::create(small_config(model::Variant::Concat), 11);
  CHECK_THROWS_AS(model::gating_forward(concat, Modality::TimeSeries, x_ts, x_img), StateError);
}

TEST_CASE("cmd_forward validates the one-hot condition") {
  auto bundle = model::ModelBundle::create(small_config(), 13);
  const std::vector<float> f(64, 0.1f);

  const float d = model::cmd_forward(bundle, f, std::vector<float>{0, 1, 0});
  CHECK(d > 0.0f);
  CHECK(d < 1.0f);

  CHECK_THROWS_AS(model::cmd_forward(bundle, f, std::vector<float>{0, 0, 0}), ArgumentError);
  CHECK_THROWS_AS(model::cmd_forward(bundle, f, std::vector<float>{1, 1, 0}), ArgumentError);
  CHECK_THROWS_AS(model::cmd_forward(bundle, f, std::vector<float>{0, 0.5f, 0}), ArgumentError);
  CHECK_THROWS_AS(model::cmd_forward(bundle, f, std::vector<float>{0, 1}), ShapeError);
  const std::vector<float> small_f(32, 0.1f);
  CHECK_THROWS_AS(model::cmd_forward(bundle, small_f, std::vector<float>{0, 1, 0}), ShapeError);

  auto ts_only = model::ModelBundle::create(small_config(model::Variant::TsOnly), 13);
  CHECK_THROWS_AS(model::cmd_forward(ts_only, f, std::vector<float>{0, 1, 0}), StateError);
}

TEST_CASE("classifier_forward emits one logit per class") {
  auto bundle = model::ModelBundle::create(small_config(), 17);
  const std::vector<float> f(64, 0.25f);
  const auto logits = model::classifier_forward(bundle, f);
  REQUIRE(logits.size() == 3);
  for (float v : logits) CHECK(std::isfinite(v));
  const std::vector<float> wrong(65, 0.0f);
  CHECK_THROWS_AS(model::classifier_forward(bundle, wrong), ShapeError);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

// Fill optimizer moments and running stats with recognizable values so the
// round trip is not comparing zeros against zeros.
void scribble_state(model::ModelBundle& bundle) {
  float v = 0.001f;
  for (auto* p : bundle.all_params()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      p->adam_m[i] = v;
      p->adam_v[i] = 2.0f * v;
      v += 0.001f;
      if (v > 0.9f) v = 0.001f;
    }
  }
  for (auto* buf : bundle.all_buffers())
    for (std::size_t i = 0; i < buf->size(); ++i) buf->value[i] += 0.125f;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every array and all metadata") {
  TempDir dir("ckpt");
  auto bundle = model::ModelBundle::create(small_config(), 42);
  scribble_state(bundle);
  bundle.epoch = 4;
  bundle.adam_main.t = 7;
  bundle.adam_cmd.t = 3;
  bundle.adam_main.lr = bundle.adam_cmd.lr = 3e-4;
  bundle.adam_main.beta1 = bundle.adam_cmd.beta1 = 0.85;
  bundle.config_snapshot = "{\"note\":\"test\"}";

  model::save_checkpoint(bundle, dir / "a");
  auto loaded = model::load_checkpoint(dir / "a");

  CHECK(loaded.config.class_count == 3);
  CHECK(loaded.config.variant == model::Variant::Proposed);
  CHECK(loaded.seed == 42);
  CHECK(loaded.epoch == 4);
  CHECK(loaded.adam_main.t == 7);
  CHECK(loaded.adam_cmd.t == 3);
  CHECK(loaded.adam_main.lr == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(loaded.adam_main.beta1 == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(loaded.config_snapshot == "{\"note\":\"test\"}");

  const auto pa = bundle.all_params(), pb = loaded.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
    CHECK(pa[i]->adam_m == pb[i]->adam_m);
    CHECK(pa[i]->adam_v == pb[i]->adam_v);
  }
  const auto ba = bundle.all_buffers(), bb = loaded.all_buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(ba[i]->value == bb[i]->value);

  // Serialization is a pure function of the state: re-saving the loaded
  // bundle reproduces both files byte for byte.
  model::save_checkpoint(loaded, dir / "b");
  CHECK(slurp(dir / "a" / "params.bin") == slurp(dir / "b" / "params.bin"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
}

TEST_CASE("checkpoint expectation mismatches raise shape errors") {
  TempDir dir("ckpt_expect");
  auto bundle = model::ModelBundle::create(small_config(), 1);
  model::save_checkpoint(bundle, dir / "a");

  auto want = small_config();
  CHECK_NOTHROW(model::load_checkpoint(dir / "a", &want));
  want.class_count = 4;
  CHECK_THROWS_AS(model::load_checkpoint(dir / "a", &want), ShapeError);
  want = small_config(model::Variant::Concat);
  CHECK_THROWS_AS(model::load_checkpoint(dir / "a", &want), ShapeError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir("ckpt_bad");
  auto bundle = model::ModelBundle::create(small_config(), 1);
  model::save_checkpoint(bundle, dir / "a");

  CHECK_THROWS_AS(model::load_checkpoint(dir / "missing"), CheckpointError);

  // Truncated parameter file.
  const auto bin = slurp(dir / "a" / "params.bin");
  model::save_checkpoint(bundle, dir / "trunc");
  std::ofstream(dir / "trunc" / "params.bin", std::ios::binary | std::ios::trunc)
      << bin.substr(0, bin.size() / 2);
  CHECK_THROWS_AS(model::load_checkpoint(dir / "trunc"), CheckpointError);

  // Future format version.
  model::save_checkpoint(bundle, dir / "ver");
  {
    nlohmann::json manifest;
    std::ifstream(dir / "ver" / "manifest.json") >> manifest;
    manifest["format_version"] = 2;
    std::ofstream(dir / "ver" / "manifest.json") << manifest.dump(2);
  }
  CHECK_THROWS_AS(model::load_checkpoint(dir / "ver"), VersionError);

  // Array table naming an array the model does not have.
  model::save_checkpoint(bundle, dir / "name");
  {
    nlohmann::json manifest;
    std::ifstream(dir / "name" / "manifest.json") >> manifest;
    manifest["arrays"][0]["name"] = "bogus.weight";
    std::ofstream(dir / "name" / "manifest.json") << manifest.dump(2);
  }
  CHECK_THROWS_AS(model::load_checkpoint(dir / "name"), CheckpointError);

  // Unparseable manifest.
  model::save_checkpoint(bundle, dir / "garbage");
  std::ofstream(dir / "garbage" / "manifest.json", std::ios::trunc) << "not json";
  CHECK_THROWS_AS(model::load_checkpoint(dir / "garbage"), CheckpointError);
}
