#include <gtest/gtest.h>

#include <sstream>

#include "pseudosr/cli.hpp"
#include "test_util.hpp"

using namespace pseudosr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "pseudosr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path tiny_config_file(const fs::path& dir) {
  TrainConfig c = TrainConfig::desk(2);
  c.networks.correction = {1, 1, 4, 2, true};
  c.networks.sr = {1, 1, 4, 2, false};
  c.networks.degradation = {4, 1, 3, 0.2};
  c.networks.discriminator = {2, 3, 0.2};
  c.batch = 2;
  c.lr_patch = 8;
  c.total_iters = 3;
  const fs::path p = dir / "tiny.json";
  write_json_file(to_json(c), p);
  return p;
}

/// Dataset plus a trained tiny checkpoint, shared by the tests below.
struct World {
  fs::path root = testutil::temp_dir("cli_world");
  fs::path data = root / "data";
  fs::path run = root / "run";
  fs::path ckpt = run / "final.ckpt";

  World() {
    const auto md = call({"make-dataset", "--synthetic", "3", "--size", "32", "--out", data.string(), "--noise", "0.05",
                          "--seed", "4"});
    EXPECT_EQ(md.code, 0) << md.err;
    const auto tr = call({"train", "--config", tiny_config_file(root).string(), "--data", data.string(), "--out",
                          run.string(), "--log-every", "1"});
    EXPECT_EQ(tr.code, 0) << tr.err;
  }
};

World& world() {
  static World w;
  return w;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}).code, cli::kExitUsage);
  EXPECT_EQ(call({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(call({"train"}).code, cli::kExitUsage);
  EXPECT_EQ(call({"eval", "--result", "x"}).code, cli::kExitUsage);
  EXPECT_EQ(call({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MissingInputsExitTwo) {
  const auto missing = (testutil::temp_dir("cli_missing") / "nope").string();
  const auto r = call({"train", "--data", missing});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("dataset directory not found"), std::string::npos);
  EXPECT_EQ(call({"infer", "--checkpoint", missing, "--input", missing}).code, cli::kExitUsage);
  EXPECT_EQ(call({"make-dataset", "--out", missing}).code, cli::kExitUsage);
  EXPECT_EQ(call({"make-dataset", "--synthetic", "2", "--scale", "3", "--out", missing}).code, cli::kExitUsage);
}

TEST(Cli, MakeDatasetWritesMultiplicityVariants) {
  const auto dir = testutil::temp_dir("cli_md") / "ds";
  const auto r = call({"make-dataset", "--synthetic", "2", "--size", "24", "--multiplicity", "3", "--jitter", "0.2",
                       "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(list_pngs(dir / "hr").size(), 2u);
  EXPECT_EQ(list_pngs(dir / "lr").size(), 6u);
  const auto ds = load_dataset(dir);
  EXPECT_EQ(ds.lr[0].height(), 12);
  EXPECT_EQ(read_json_file(dir / "degradations.json").size(), 6u);
}

TEST(Cli, TrainWritesRunArtifacts) {
  const World& w = world();
  EXPECT_TRUE(fs::exists(w.ckpt));
  EXPECT_TRUE(fs::exists(w.run / "run.json"));
  EXPECT_TRUE(fs::exists(w.run / "config.resolved.json"));
  std::ifstream log(w.run / "loss_log.jsonl");
  int lines = 0;
  for (std::string l; std::getline(log, l);) lines += !l.empty();
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(read_json_file(w.run / "config.resolved.json").at("total_iters"), 3);
}

TEST(Cli, ResumeExtendsRun) {
  const World& w = world();
  const auto out = testutil::temp_dir("cli_resume");
  const auto r = call({"train", "--data", w.data.string(), "--resume", w.ckpt.string(), "--iters", "5", "--out",
                       out.string(), "--log-every", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(checkpoint_load<float>(out / "final.ckpt").state.iter, 5);
}

TEST(Cli, InferMatchesLibraryCall) {
  const World& w = world();
  const auto out = testutil::temp_dir("cli_infer");
  const auto r = call({"infer", "--checkpoint", w.ckpt.string(), "--input", (w.data / "lr").string(), "--out",
                       out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = checkpoint_load<float>(w.ckpt);
  const auto inputs = list_pngs(w.data / "lr");
  ASSERT_EQ(list_pngs(out).size(), inputs.size());
  const Image expected = quantize(infer(ck.bundle, read_png(inputs[0])));
  const Image got = read_png(out / (inputs[0].stem().string() + "_sr.png"));
  EXPECT_EQ(got.samples(), expected.samples());
  EXPECT_EQ(got.height(), 2 * read_png(inputs[0]).height());
  EXPECT_EQ(call({"infer", "--checkpoint", w.ckpt.string(), "--input", inputs[0].string(), "--out", out.string(),
                  "--scale", "4"})
                .code,
            cli::kExitRuntime);
}

TEST(Cli, EvalReportsMeanOverPairs) {
  const auto dir = testutil::temp_dir("cli_eval");
  Rng rng(6);
  std::vector<std::pair<std::string, std::pair<Image, Image>>> pairs;
  fs::create_directories(dir / "res");
  fs::create_directories(dir / "ref");
  for (int i = 0; i < 3; ++i) {
    const Image a = quantize(testutil::random_image(16, 16, rng)), b = quantize(testutil::random_image(16, 16, rng));
    write_png(a, dir / "res" / ("im" + std::to_string(i) + "_sr.png"));
    write_png(b, dir / "ref" / ("im" + std::to_string(i) + ".png"));
    pairs.push_back({"im" + std::to_string(i), {a, b}});
  }
  const auto r = call({"eval", "--result", (dir / "res").string(), "--reference", (dir / "ref").string(), "--out",
                       (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = read_json_file(dir / "report.json");
  EXPECT_NEAR(j.at("psnr_db").get<double>(), evaluate(pairs).psnr_db, 1e-9);
  EXPECT_EQ(j.at("images").size(), 3u);

  write_png(Image(16, 16), dir / "res" / "stray.png");
  const auto bad = call({"eval", "--result", (dir / "res").string(), "--reference", (dir / "ref").string()});
  EXPECT_EQ(bad.code, cli::kExitUsage);
  EXPECT_NE(bad.err.find("result/stray.png"), std::string::npos);
}

TEST(Cli, DumpIntermediates) {
  const World& w = world();
  const auto out = testutil::temp_dir("cli_dump");
  const auto lr = list_pngs(w.data / "lr")[0], hr = list_pngs(w.data / "hr")[1];
  const auto r = call({"dump-intermediates", "--checkpoint", w.ckpt.string(), "--lr", lr.string(), "--hr", hr.string(),
                       "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(list_pngs(out).size(), 8u);
}
