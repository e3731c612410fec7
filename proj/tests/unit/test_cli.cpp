#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "startopo/cli.hpp"
#include "startopo/dataset.hpp"
#include "support.hpp"

using namespace startopo;
using startopo::testing::slurp;
using startopo::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string write_config(const TempDir& dir, const std::string& name, const nlohmann::json& j) {
  const auto path = dir / name;
  std::ofstream(path) << j.dump(2);
  return path.string();
}

nlohmann::json small_synth() {
  return {{"phantom", startopo::testing::small_phantom()}, {"degradation", startopo::testing::small_degradation()}};
}

nlohmann::json small_train() {
  return {{"network", {{"levels", 2}, {"base_channels", 2}}},
          {"training", {{"epochs", 2}, {"batch", 4}, {"strip_width", 16}}}};
}

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"bogus"}).code, kExitConfig);
  EXPECT_EQ(cli({"gradcheck", "--no-such-flag"}).code, kExitConfig);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, SynthRejectsZeroCount) {
  TempDir dir("cli_zero");
  EXPECT_EQ(cli({"synth", "--count", "0", "--out", (dir / "d").string()}).code, kExitConfig);
}

TEST(Cli, SynthIsReproducibleFromResolvedConfig) {
  TempDir dir("cli_synth");
  const auto cfg = write_config(dir, "synth.json", small_synth());
  const auto a = (dir / "a").string();
  const auto r = cli({"synth", "--config", cfg, "--count", "6", "--seed", "7", "--out", a});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("train"), std::string::npos);
  const auto resolved = read_json(dir / "a" / "synth_config.json");
  EXPECT_EQ(resolved["count"], 6);
  EXPECT_EQ(resolved["seed"], 7);
  EXPECT_EQ(resolved["phantom"]["height"], 64);

  // Replaying the resolved config (with only the output moved) reproduces
  // every byte.
  const auto b = (dir / "b").string();
  ASSERT_EQ(cli({"synth", "--config", (dir / "a" / "synth_config.json").string(), "--out", b, "-q"}).code, kExitOk);
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    if (e.path().filename() == "synth_config.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  }
}

TEST(Cli, ConfigErrors) {
  TempDir dir("cli_cfg");
  EXPECT_EQ(cli({"synth", "--config", write_config(dir, "x.json", {{"colour", 3}})}).code, kExitConfig);
  EXPECT_EQ(cli({"synth", "--config", write_config(dir, "y.json", {{"command", "train"}})}).code, kExitConfig);
  EXPECT_EQ(cli({"synth", "--config", write_config(dir, "z.json", {{"count", "many"}})}).code, kExitConfig);
  EXPECT_EQ(cli({"synth", "--config", (dir / "missing.json").string()}).code, kExitIo);
  EXPECT_EQ(cli({"train", "--data", (dir / "nodata").string(), "--out", (dir / "r").string()}).code, kExitIo);
  EXPECT_EQ(cli({"train", "--levels", "0", "--out", (dir / "r").string()}).code, kExitConfig);
}

TEST(Cli, GradcheckPassesAndDetectsCorruption) {
  TempDir dir("cli_grad");
  const auto ok = cli({"gradcheck", "--out", dir.path().string(), "--instances", "10"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const auto report = read_json(dir / "gradcheck.json");
  EXPECT_TRUE(report["passed"].get<bool>());
  for (const auto& l : report["losses"]) EXPECT_LE(l["max_relative_error"].get<double>(), 1e-3);

  const auto again = cli({"gradcheck", "--out", dir.path().string(), "--instances", "10"});
  EXPECT_EQ(again.out, ok.out);

  const auto bad = cli({"gradcheck", "--out", dir.path().string(), "--instances", "10", "--corrupt-gradient",
                        "hybrid", "--quiet"});
  EXPECT_EQ(bad.code, kExitGradCheckFailed);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, TrainEvalStreamEndToEnd) {
  TempDir dir("cli_e2e");
  const auto data = (dir / "data").string();
  ASSERT_EQ(cli({"synth", "--config", write_config(dir, "s.json", small_synth()), "--count", "10", "--out", data, "-q"})
                .code,
            kExitOk);
  const auto tcfg = write_config(dir, "t.json", small_train());
  const auto run1 = (dir / "run1").string();
  const auto t1 = cli({"train", "--config", tcfg, "--data", data, "--out", run1, "--seed", "2"});
  ASSERT_EQ(t1.code, kExitOk) << t1.err;
  EXPECT_NE(t1.out.find("epoch 2"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "run1" / "history.json"));

  // Same resolved config, same checkpoint bytes.
  const auto run2 = (dir / "run2").string();
  ASSERT_EQ(cli({"train", "--config", (dir / "run1" / "train_config.json").string(), "--out", run2, "-q"}).code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "run1" / "checkpoint.bin"), slurp(dir / "run2" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir / "run1" / "history.json"), slurp(dir / "run2" / "history.json"));

  // BCE-only baseline.
  const auto base = (dir / "base").string();
  ASSERT_EQ(cli({"train", "--config", tcfg, "--data", data, "--out", base, "--seed", "2", "--beta", "0", "-q"}).code,
            kExitOk);
  EXPECT_EQ(read_json(dir / "base" / "train_config.json")["training"]["loss_weights"]["beta"], 0.0);
  EXPECT_NE(slurp(dir / "run1" / "checkpoint.bin"), slurp(dir / "base" / "checkpoint.bin"));

  const auto ckpt = (dir / "run1" / "checkpoint.bin").string();
  const auto e1 = cli({"eval", "--checkpoint", ckpt, "--data", data, "--out", (dir / "e1").string()});
  ASSERT_EQ(e1.code, kExitOk) << e1.err;
  EXPECT_NE(e1.out.find("dice"), std::string::npos);
  ASSERT_EQ(cli({"eval", "--config", (dir / "e1" / "eval_config.json").string(), "--out", (dir / "e2").string(), "-q"})
                .code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "e1" / "report.json"), slurp(dir / "e2" / "report.json"));
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "nope.bin").string(), "--data", data}).code, kExitIo);
  EXPECT_EQ(cli({"eval", "--checkpoint", ckpt, "--data", data, "--split", "dev"}).code, kExitConfig);

  const auto frames = (dir / "frames").string();
  ASSERT_EQ(cli({"synth", "--config", write_config(dir, "f.json", small_synth()), "--frames", "--count", "8", "--out",
                 frames, "-q"})
                .code,
            kExitOk);
  const auto s = cli({"stream", "--checkpoint", ckpt, "--frames", frames, "--warmup", "3", "--save-masks", "--out",
                      (dir / "st").string()});
  ASSERT_EQ(s.code, kExitOk) << s.err;
  const auto stats = read_json(dir / "st" / "stream_stats.json");
  EXPECT_EQ(stats["frame_count"], 5);
  EXPECT_EQ(stats["per_frame_latencies_s"].size(), 5u);
  EXPECT_NEAR(stats["frequency_hz"].get<double>() * stats["mean_latency_s"].get<double>(), 1.0, 1e-9);
  EXPECT_TRUE(std::filesystem::exists(dir / "st" / "masks" / "mask_0007.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "st" / "traces" / "trace_0000.json"));

  std::filesystem::remove(dir / "frames" / "frame_0004.png");
  EXPECT_EQ(cli({"stream", "--checkpoint", ckpt, "--frames", frames, "--out", (dir / "st2").string()}).code, kExitIo);
}

TEST(Cli, ShapeErrorsMapToExitFive) {
  TempDir dir("cli_shape");
  const auto data = (dir / "data").string();
  ASSERT_EQ(cli({"synth", "--config", write_config(dir, "s.json", small_synth()), "--count", "5", "--out", data, "-q"})
                .code,
            kExitOk);
  // Strips of 8 columns cannot pass through four pooling levels.
  save_checkpoint(startopo::testing::random_checkpoint(4, 1, 8), dir / "deep.bin");
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "deep.bin").string(), "--data", data, "--out", (dir / "e").string()})
                .code,
            kExitShape);
}
