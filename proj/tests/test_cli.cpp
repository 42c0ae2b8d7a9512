#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "samm/config.hpp"
#include "samm/datasets.hpp"
#include "samm/model.hpp"
#include "support/temp_dir.hpp"

using namespace samm;
using nlohmann::json;
using samm::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd " + cwd.string() + " && " + SAMM_BIN_PATH + " " + args +
                          " > _stdout.txt 2> _stderr.txt";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(cwd / "_stdout.txt");
  r.err = slurp(cwd / "_stderr.txt");
  fs::remove(cwd / "_stdout.txt");
  fs::remove(cwd / "_stderr.txt");
  return r;
}

void write_config(const fs::path& path, int epochs, std::uint64_t seed,
                  const std::string& out_dir = "out") {
  std::ofstream f(path);
  f << R"({
  "dataset": {"synth": {"classes": 3, "per_class": 8}},
  "model": {"embedding_dim": 64, "time_steps": 16, "image_side": 16},
  "training": {"epochs": )"
    << epochs << R"(, "batch_size": 6, "learning_rate": 0.001, "seed": )" << seed << R"(},
  "output": {"dir": ")"
    << out_dir << R"("}
})";
}

// The single entry of <root>/runs, failing the test if the count is off.
fs::path only_run_dir(const fs::path& out_root) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(out_root / "runs")) entries.push_back(e.path());
  REQUIRE(entries.size() == 1);
  return entries[0];
}

double printed_accuracy(const std::string& out) {
  const auto pos = out.find("test accuracy: ");
  REQUIRE(pos != std::string::npos);
  return std::strtod(out.c_str() + pos + 15, nullptr);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

ImageSample disc_image(int side, double cx, double cy, double radius) {
  ImageSample img;
  img.height = side;
  img.width = side;
  img.pixels.assign(static_cast<std::size_t>(side) * side, 0.0f);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius) img.at(r, c) = 1.0f;
  return img;
}

ImageSample box_image(int side, int r0, int c0, int size) {
  ImageSample img;
  img.height = side;
  img.width = side;
  img.pixels.assign(static_cast<std::size_t>(side) * side, 0.0f);
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) img.at(r, c) = 1.0f;
  return img;
}

}  // namespace

TEST_CASE("prepare writes a manifest and tensors, then refuses to clobber") {
  TempDir dir("cli_prep");
  write_config(dir / "run.json", 1, 7);

  const auto first = run_cli(dir.path(), "prepare run.json");
  CHECK(first.code == 0);
  CHECK(first.out.find("prepared dataset:") != std::string::npos);
  CHECK(first.out.find("train patterns: 18 (dropped 0)") != std::string::npos);
  CHECK(first.out.find("test patterns: 6 (dropped 0)") != std::string::npos);

  const auto cfg = config::load_run_config(dir / "run.json");
  const fs::path prep = dir / "out" / "prepared" / config::dataset_hash(cfg);
  REQUIRE(fs::exists(prep / "manifest.json"));
  for (const char* f : {"train.ts.bin", "train.img.bin", "test.ts.bin", "test.img.bin"})
    CHECK(fs::exists(prep / f));
  CHECK(fs::file_size(prep / "train.ts.bin") == 18u * 16 * 3 * 4);
  CHECK(fs::file_size(prep / "train.img.bin") == 18u * 16 * 16 * 4);

  std::ifstream min(prep / "manifest.json");
  const auto m = json::parse(min);
  CHECK(m.at("format") == "samm-prepared");
  CHECK(m.at("format_version") == 1);
  CHECK(m.at("dataset_hash") == config::dataset_hash(cfg));
  CHECK(m.at("direction") == "ts_to_image");
  CHECK(m.at("class_count") == 3);
  CHECK(m.at("steps") == 16);
  CHECK(m.at("side") == 16);
  CHECK(m.at("train_expansion") == 1);
  CHECK(m.at("augmentation").at("ts_jitter_sigma") == 0.0);
  CHECK(m.at("splits").at("train").at("count") == 18);
  CHECK(m.at("splits").at("train").at("ids").size() == 18);
  CHECK(m.at("splits").at("train").at("labels").size() == 18);
  CHECK(m.at("splits").at("train").at("dropped") == 0);
  CHECK(!m.at("splits").at("train").at("provenance").empty());
  CHECK(m.at("splits").at("test").at("count") == 6);

  const auto again = run_cli(dir.path(), "prepare run.json");
  CHECK(again.code == 4);
  CHECK(again.err.find("refusing") != std::string::npos);

  const auto forced = run_cli(dir.path(), "prepare run.json --force");
  CHECK(forced.code == 0);
}

TEST_CASE("train produces metrics, a summary, and a loadable checkpoint") {
  TempDir dir("cli_train");
  write_config(dir / "run.json", 2, 7);

  // Training before preparing is a data error.
  const auto premature = run_cli(dir.path(), "train run.json");
  CHECK(premature.code == 3);
  CHECK(premature.err.find("prepare") != std::string::npos);

  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);
  const auto trained = run_cli(dir.path(), "train run.json");
  CHECK(trained.code == 0);
  CHECK(trained.out.find("run directory:") != std::string::npos);
  CHECK(trained.out.find("epoch 1/2") != std::string::npos);
  CHECK(trained.out.find("epoch 2/2") != std::string::npos);

  const fs::path run = only_run_dir(dir / "out");
  const auto csv = lines_of(slurp(run / "metrics.csv"));
  REQUIRE(csv.size() == 3);
  CHECK(csv[0] ==
        "epoch,l_cls,l_fd,l_adv,l_disc,disc_accuracy,train_accuracy,seconds,deterministic");
  CHECK(csv[1].rfind("1,", 0) == 0);
  CHECK(csv[2].rfind("2,", 0) == 0);
  CHECK(csv[1].find("true") != std::string::npos);

  std::ifstream sin(run / "summary.json");
  const auto summary = json::parse(sin);
  CHECK(summary.at("ablation") == "none");
  CHECK(summary.at("seed") == 7);
  CHECK(summary.at("epochs") == 2);
  CHECK(summary.at("final").at("l_cls").get<double>() > 0.0);
  CHECK(summary.at("test").at("accuracy").get<double>() >= 0.0);
  CHECK(summary.at("test").at("accuracy").get<double>() <= 1.0);
  const auto cfg = config::load_run_config(dir / "run.json");
  CHECK(summary.at("config") == json::parse(config::dump_run_config(cfg)));
  CHECK(summary.at("dataset_hash") == config::dataset_hash(cfg));
  CHECK(summary.at("config_hash") == config::config_hash(cfg));

  // The final checkpoint opens with the library and matches the run config.
  auto bundle = model::load_checkpoint(run / "checkpoints" / "final");
  CHECK(bundle.epoch == 2);
  CHECK(bundle.config.time_steps == 16);
  CHECK(bundle.config.class_count == 3);

  // Printed accuracy agrees with the summary value.
  CHECK(std::abs(printed_accuracy(trained.out) -
                 summary.at("test").at("accuracy").get<double>() * 100.0) < 0.005 + 1e-9);
}

TEST_CASE("identical config and seed reproduce the training byte for byte") {
  TempDir dir("cli_det");
  write_config(dir / "a.json", 2, 21, "out_a");
  write_config(dir / "b.json", 2, 21, "out_b");
  write_config(dir / "c.json", 2, 22, "out_c");

  for (const char* name : {"a", "b", "c"}) {
    REQUIRE(run_cli(dir.path(), std::string("prepare ") + name + ".json").code == 0);
    REQUIRE(run_cli(dir.path(), std::string("train ") + name + ".json").code == 0);
  }
  const fs::path run_a = only_run_dir(dir / "out_a");
  const fs::path run_b = only_run_dir(dir / "out_b");
  const fs::path run_c = only_run_dir(dir / "out_c");

  std::ifstream a_in(run_a / "summary.json"), b_in(run_b / "summary.json"),
      c_in(run_c / "summary.json");
  const auto sa = json::parse(a_in), sb = json::parse(b_in), sc = json::parse(c_in);
  CHECK(sa.at("final") == sb.at("final"));
  CHECK(sa.at("test") == sb.at("test"));
  CHECK(sa.at("final") != sc.at("final"));

  CHECK(slurp(run_a / "checkpoints" / "final" / "params.bin") ==
        slurp(run_b / "checkpoints" / "final" / "params.bin"));
  CHECK(slurp(run_a / "checkpoints" / "final" / "params.bin") !=
        slurp(run_c / "checkpoints" / "final" / "params.bin"));
}

TEST_CASE("ablation flag lands in the summary and bad values are config errors") {
  TempDir dir("cli_abl_flag");
  write_config(dir / "run.json", 1, 5);
  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);

  const auto trained = run_cli(dir.path(), "train run.json --ablation no_fd");
  CHECK(trained.code == 0);
  std::ifstream sin(only_run_dir(dir / "out") / "summary.json");
  const auto summary = json::parse(sin);
  CHECK(summary.at("ablation") == "no_fd");

  const auto bad = run_cli(dir.path(), "train run.json --ablation dropout");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("ablation") != std::string::npos);
}

TEST_CASE("eval writes a report consistent with its stdout") {
  TempDir dir("cli_eval");
  write_config(dir / "run.json", 2, 9);
  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);
  REQUIRE(run_cli(dir.path(), "train run.json").code == 0);
  const fs::path ckpt = only_run_dir(dir / "out") / "checkpoints" / "final";

  const auto evaled = run_cli(dir.path(), "eval run.json --checkpoint " + ckpt.string());
  CHECK(evaled.code == 0);

  const auto cfg = config::load_run_config(dir / "run.json");
  const fs::path report_path =
      dir / "out" / "reports" / ("eval-" + config::config_hash(cfg) + ".json");
  REQUIRE(fs::exists(report_path));
  std::ifstream rin(report_path);
  const auto report = json::parse(rin);
  CHECK(std::abs(printed_accuracy(evaled.out) - report.at("accuracy").get<double>() * 100.0) <
        0.005 + 1e-9);
  CHECK(report.at("count") == 6);
  CHECK(report.at("confusion").size() == 3);
  CHECK(report.at("variant") == "proposed");
  CHECK(report.contains("mean_alpha"));
  CHECK(report.contains("mean_l_fd"));

  // Same checkpoint, same data: training summary and eval report agree exactly.
  std::ifstream sin(only_run_dir(dir / "out") / "summary.json");
  const auto summary = json::parse(sin);
  CHECK(summary.at("test").at("accuracy") == report.at("accuracy"));

  // A corrupt checkpoint is an incompatible artifact.
  std::ofstream(ckpt / "params.bin", std::ios::trunc) << "xx";
  const auto broken = run_cli(dir.path(), "eval run.json --checkpoint " + ckpt.string());
  CHECK(broken.code == 5);

  const auto missing = run_cli(dir.path(), "eval run.json --checkpoint nowhere");
  CHECK(missing.code == 5);
}

TEST_CASE("ablate emits the six-row table") {
  TempDir dir("cli_ablate");
  write_config(dir / "run.json", 1, 3);
  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);

  const auto ablated = run_cli(dir.path(), "ablate run.json");
  CHECK(ablated.code == 0);
  for (const char* label : {"Proposed", "w/o CMD", "w/o L_FD", "CNN (image)",
                            "CNN (time series)", "CNN (concat)"})
    CHECK(ablated.out.find(label) != std::string::npos);

  const auto cfg = config::load_run_config(dir / "run.json");
  const std::string hash = config::config_hash(cfg);
  const auto csv = lines_of(slurp(dir / "out" / "reports" / ("ablation-" + hash + ".csv")));
  REQUIRE(csv.size() == 7);
  CHECK(csv[0] == "method,accuracy_percent");
  CHECK(csv[1].rfind("\"Proposed\",", 0) == 0);

  std::ifstream jin(dir / "out" / "reports" / ("ablation-" + hash + ".json"));
  const auto doc = json::parse(jin);
  CHECK(doc.at("rows").size() == 6);
  CHECK(doc.at("seed") == 3);
}

TEST_CASE("report-alpha emits eleven bucket sections") {
  TempDir dir("cli_alpha");
  write_config(dir / "run.json", 1, 4);
  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);
  REQUIRE(run_cli(dir.path(), "train run.json").code == 0);
  const fs::path ckpt = only_run_dir(dir / "out") / "checkpoints" / "final";

  const auto reported = run_cli(
      dir.path(), "report-alpha run.json --checkpoint " + ckpt.string() + " --per-bucket 2");
  CHECK(reported.code == 0);

  const auto cfg = config::load_run_config(dir / "run.json");
  std::ifstream jin(dir / "out" / "reports" /
                    ("alpha-" + config::config_hash(cfg) + ".json"));
  const auto doc = json::parse(jin);
  CHECK(doc.at("per_bucket") == 2);
  REQUIRE(doc.at("buckets").size() == 11);
  int total = 0;
  for (int b = 0; b <= 10; ++b) {
    const auto& bucket = doc.at("buckets")[b];
    CHECK(bucket.at("bucket") == b);
    CHECK(bucket.at("alpha_center").get<double>() == doctest::Approx(b / 10.0));
    CHECK(bucket.at("entries").size() <= 2);
    total += static_cast<int>(bucket.at("entries").size());
  }
  CHECK(total > 0);
}

TEST_CASE("export-embeddings writes two rows per pattern for the chosen split") {
  TempDir dir("cli_emb");
  write_config(dir / "run.json", 1, 6);
  REQUIRE(run_cli(dir.path(), "prepare run.json").code == 0);
  REQUIRE(run_cli(dir.path(), "train run.json").code == 0);
  const fs::path ckpt = only_run_dir(dir / "out") / "checkpoints" / "final";

  const auto cfg = config::load_run_config(dir / "run.json");
  const std::string hash = config::config_hash(cfg);

  REQUIRE(run_cli(dir.path(), "export-embeddings run.json --checkpoint " + ckpt.string())
              .code == 0);
  const auto test_csv =
      lines_of(slurp(dir / "out" / "reports" / ("embeddings-" + hash + "-test.csv")));
  CHECK(test_csv.size() == 1 + 2 * 6);
  CHECK(test_csv[0].rfind("id,modality,label,e0,", 0) == 0);

  REQUIRE(run_cli(dir.path(), "export-embeddings run.json --checkpoint " + ckpt.string() +
                                  " --split train")
              .code == 0);
  const auto train_csv =
      lines_of(slurp(dir / "out" / "reports" / ("embeddings-" + hash + "-train.csv")));
  CHECK(train_csv.size() == 1 + 2 * 18);
}

TEST_CASE("image sources run the reverse direction end to end") {
  TempDir dir("cli_imgdir");
  const fs::path root = dir / "imgs";
  // Two easily separable classes: discs and filled boxes, 16x16.
  int counter = 0;
  auto save = [&](const char* split, const char* cls, const ImageSample& img) {
    const fs::path d = root / split / cls;
    fs::create_directories(d);
    datasets::save_pgm(d / ("p" + std::to_string(counter++) + ".pgm"), img);
  };
  for (int i = 0; i < 3; ++i) {
    save("train", "disc", disc_image(16, 6.0 + i, 7.0, 4.0));
    save("train", "box", box_image(16, 3, 3 + i, 7));
  }
  save("test", "disc", disc_image(16, 8.0, 8.0, 4.0));
  save("test", "box", box_image(16, 4, 4, 7));

  std::ofstream cfg(dir / "run.json");
  cfg << R"({
    "dataset": {"source": "image-dir", "root": "imgs", "rotate_copies": 2,
                "rotate_step_degrees": 90.0},
    "model": {"embedding_dim": 64, "time_steps": 16, "image_side": 16},
    "training": {"epochs": 1, "batch_size": 4, "learning_rate": 0.001, "seed": 2},
    "output": {"dir": "out"}
  })";
  cfg.close();

  const auto prepared = run_cli(dir.path(), "prepare run.json");
  CHECK(prepared.code == 0);
  CHECK(prepared.out.find("train patterns: 12 (dropped 0)") != std::string::npos);
  CHECK(prepared.out.find("test patterns: 2 (dropped 0)") != std::string::npos);

  const auto parsed = config::load_run_config(dir / "run.json");
  std::ifstream min(dir / "out" / "prepared" / config::dataset_hash(parsed) / "manifest.json");
  const auto m = json::parse(min);
  CHECK(m.at("direction") == "image_to_ts");
  CHECK(m.at("train_expansion") == 2);
  CHECK(m.at("class_names") == json::array({"box", "disc"}));
  bool has_rot = false;
  for (const auto& id : m.at("splits").at("train").at("ids"))
    has_rot = has_rot || id.get<std::string>().find("#rot1") != std::string::npos;
  CHECK(has_rot);

  CHECK(run_cli(dir.path(), "train run.json").code == 0);
}

TEST_CASE("usage errors are configuration errors") {
  TempDir dir("cli_usage");
  CHECK(run_cli(dir.path(), "").code == 2);
  CHECK(run_cli(dir.path(), "prepare").code == 2);
  CHECK(run_cli(dir.path(), "eval run.json").code == 2);  // missing --checkpoint
  CHECK(run_cli(dir.path(), "paint run.json").code == 2);
  CHECK(run_cli(dir.path(), "--help").code == 0);
  CHECK(run_cli(dir.path(), "prepare missing.json").code == 3);

  std::ofstream(dir / "bad.json") << R"({"dataset": {"coins": 3}})";
  const auto bad = run_cli(dir.path(), "prepare bad.json");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("dataset.coins") != std::string::npos);
}
