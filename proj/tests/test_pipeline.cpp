// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#include <skipstep/pipeline.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace ss = skipstep;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"(# tiny end-to-end run
profile = fast
unet.base_channels = 4
unet.channel_mults = 1,2
unet.blocks_per_level = 1
unet.time_embed_dim = 8
diffusion.timesteps = 100
data.train_count = 32
data.val_count = 4
train.steps = 3
train.batch = 4
ts.n = 3
ts.N = 8
ts.batch = 4
depth.batch = 4
depth.N = 8
depth.threshold = 5
eval.steps = 3
eval.reference_steps = 8
eval.dump_images = 1
)";

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("skipstep_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ss::RunConfig tiny_config() {
  ss::RunConfig cfg;
  ss::apply_assignments(cfg, ss::parse_config_text(kTinyConfig, "tiny"));
  cfg.validate();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SKIPSTEP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ss::DenoiserModel<float> tiny_model(std::uint64_t seed) { return ss::DenoiserModel<float>::build(tiny_config().unet(), seed); }

}  // namespace

TEST(Config, UnknownKeyIsUsageError) {
  ss::RunConfig cfg;
  EXPECT_THROW(cfg.set("train.stepz", "3"), ss::config_error);
  EXPECT_THROW(cfg.set("train.steps", "three"), ss::config_error);
  EXPECT_THROW(ss::parse_config_text("no equals sign\n", "x"), ss::config_error);
}

TEST(Config, ProfileAppliesBeforeOtherKeys) {
  ss::RunConfig cfg;
  ss::apply_assignments(cfg, {{"unet.image_size", "64"}, {"profile", "fast"}});
  EXPECT_EQ(cfg.image_size, 64u);
  EXPECT_EQ(cfg.channels, 1u);
  EXPECT_EQ(cfg.profile, "fast");
  EXPECT_THROW(cfg.set("profile", "huge"), ss::config_error);
}

TEST(Config, TextRoundTrips) {
  const auto cfg = tiny_config();
  ss::RunConfig back;
  ss::apply_assignments(back, ss::parse_config_text(ss::config_text(cfg), "round-trip"));
  EXPECT_EQ(back.entries(), cfg.entries());
  EXPECT_EQ(ss::config_text(back), ss::config_text(cfg));
}

TEST(Config, InvalidValuesAreUsageErrors) {
  auto cfg = tiny_config();
  cfg.image_size = 24;
  EXPECT_THROW(cfg.validate(), ss::config_error);
  cfg = tiny_config();
  cfg.ts_n = 20;  // not below ts.N
  EXPECT_THROW(cfg.validate(), ss::config_error);
}

TEST(Config, MasterSeedDrivesEverySeed) {
  ss::RunConfig a, b;
  a.set_master_seed(5);
  b.set("seed", "5");
  EXPECT_EQ(a.entries(), b.entries());
  ss::RunConfig c;
  c.set_master_seed(6);
  EXPECT_NE(a.seeds.init, c.seeds.init);
  EXPECT_NE(a.seeds.train, c.seeds.train);
  EXPECT_NE(a.seeds.search, c.seeds.search);
  EXPECT_NE(a.seeds.sample, c.seeds.sample);
  EXPECT_EQ(a.train.seed, a.seeds.train);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (std::uint64_t seed : {1u, 2u}) {
    auto m = tiny_model(seed);
    for (auto& p : m.params()) {
      for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor[i] += 0.001f * static_cast<float>(i % 7);
    }
    m.set_active_depth(2);
    const auto bytes = ss::serialize_checkpoint(m);
    const auto back = ss::deserialize_checkpoint<float>(bytes, "mem");
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(back.active_depth(), 2u);
    ASSERT_EQ(back.params().size(), m.params().size());
    for (std::size_t k = 0; k < m.params().size(); ++k) {
      const auto a = m.params()[k].tensor.values();
      const auto b = back.params()[k].tensor.values();
      ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size_bytes()), 0) << m.params()[k].name;
    }
    EXPECT_EQ(ss::serialize_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, FileRoundTripAndDoublePrecision) {
  TempDir tmp("ckpt");
  const auto m = tiny_model(3).cast<double>();
  ss::save_checkpoint(tmp.path() / "m.ckpt", m);
  const auto back = ss::load_checkpoint<double>(tmp.path() / "m.ckpt");
  EXPECT_EQ(ss::serialize_checkpoint(back), ss::serialize_checkpoint(m));
  // A 64-bit file loads into a 32-bit model by narrowing each value.
  const auto narrowed = ss::load_checkpoint<float>(tmp.path() / "m.ckpt");
  ASSERT_EQ(narrowed.params().size(), m.params().size());
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    const auto a = m.params()[k].tensor.values();
    const auto b = narrowed.params()[k].tensor.values();
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(b[i], static_cast<float>(a[i]));
  }
  EXPECT_THROW(ss::load_checkpoint<float>(tmp.path() / "missing.ckpt"), std::runtime_error);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = ss::serialize_checkpoint(tiny_model(4));
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  try {
    ss::deserialize_checkpoint<float>(flipped, "flipped.ckpt");
    FAIL() << "expected a checksum error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  const std::vector<unsigned char> truncated(bytes.begin(), bytes.begin() + 10);
  EXPECT_THROW(ss::deserialize_checkpoint<float>(truncated, "short"), std::runtime_error);
}

TEST(Manifest, TextIsSortedAndParses) {
  ss::Manifest m;
  m.set("b.value", 0.1);
  m.set("a.flag", true);
  m.set("c.count", std::uint64_t{7});
  EXPECT_EQ(m.text(), "a.flag = true\nb.value = 0.10000000000000001\nc.count = 7\n");
  EXPECT_EQ(ss::Manifest::parse(m.text()).entries(), m.entries());
  EXPECT_DOUBLE_EQ(m.number("b.value"), 0.1);
  EXPECT_THROW(m.set("bad=key", "x"), std::invalid_argument);
  EXPECT_THROW(m.set("k", "two\nlines"), std::invalid_argument);
  EXPECT_THROW(m.at("missing"), std::out_of_range);
}

TEST(RunDir, RefusesOverwriteWithoutForce) {
  TempDir tmp("rundir");
  const ss::RunDir dir(tmp.path(), false);
  dir.write_text("a.txt", "one");
  EXPECT_THROW(dir.write_text("a.txt", "two"), std::runtime_error);
  EXPECT_EQ(slurp(tmp.path() / "a.txt"), "one");
  const ss::RunDir forced(tmp.path(), true);
  forced.write_text("a.txt", "two");
  EXPECT_EQ(slurp(tmp.path() / "a.txt"), "two");
  EXPECT_THROW(dir.read_manifest("train"), std::runtime_error);
}

TEST(Training, ZeroStepsLeavesInitialization) {
  const auto cfg = tiny_config();
  auto model = tiny_model(9);
  const auto before = ss::serialize_checkpoint(model);
  ss::DatasetSplit split{8, 2};
  const auto data = ss::TrainingSet<float>::generate(cfg.data(), split);
  ss::TrainConfig tc;
  tc.steps = 0;
  const auto log = ss::train(model, data, ss::linear_beta_schedule(100), tc);
  EXPECT_TRUE(log.losses.empty());
  EXPECT_EQ(ss::serialize_checkpoint(model), before);
}

TEST(Training, SameSeedSameWeights) {
  const auto cfg = tiny_config();
  const auto data = ss::TrainingSet<float>::generate(cfg.data(), {16, 2});
  ss::TrainConfig tc;
  tc.steps = 4;
  tc.batch = 4;
  tc.seed = 11;
  auto a = tiny_model(10);
  auto b = tiny_model(10);
  const auto la = ss::train(a, data, ss::linear_beta_schedule(100), tc);
  const auto lb = ss::train(b, data, ss::linear_beta_schedule(100), tc);
  EXPECT_EQ(la.losses, lb.losses);
  EXPECT_EQ(ss::serialize_checkpoint(a), ss::serialize_checkpoint(b));
  EXPECT_NE(ss::serialize_checkpoint(a), ss::serialize_checkpoint(tiny_model(10)));
}

TEST(Finetune, NeverTouchesBypassedParameters) {
  const auto cfg = tiny_config();
  const auto data = ss::TrainingSet<float>::generate(cfg.data(), {16, 2});
  auto model = tiny_model(12);
  const auto before = model.clone();
  ss::TrainConfig tc;
  tc.steps = 8;
  tc.batch = 4;
  const auto log = ss::finetune(model, 1, data, ss::linear_beta_schedule(100), tc);
  EXPECT_EQ(log.losses.size(), 2u);
  EXPECT_EQ(model.active_depth(), 1u);
  bool shallow_changed = false;
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    const auto& name = model.params()[k].name;
    const auto a = model.params()[k].tensor.values();
    const auto b = before.params()[k].tensor.values();
    const bool same = std::equal(a.begin(), a.end(), b.begin());
    if (model.depth_of(name) > 1) {
      EXPECT_TRUE(same) << name;
    } else {
      shallow_changed |= !same;
    }
  }
  EXPECT_TRUE(shallow_changed);
}

TEST(Finetune, ZeroBudgetKeepsModel) {
  const auto cfg = tiny_config();
  const auto data = ss::TrainingSet<float>::generate(cfg.data(), {16, 2});
  auto model = tiny_model(13);
  const auto before = ss::serialize_checkpoint(model);
  ss::TrainConfig tc;
  tc.steps = 8;
  ss::FinetuneConfig ft;
  ft.step_fraction = 0.0;
  ss::finetune(model, 1, data, ss::linear_beta_schedule(100), tc, ft);
  model.set_active_depth(model.max_depth());
  EXPECT_EQ(ss::serialize_checkpoint(model), before);
  // Full depth is a no-op.
  EXPECT_TRUE(ss::finetune(model, model.max_depth(), data, ss::linear_beta_schedule(100), tc).losses.empty());
}

TEST(Pipeline, TinyRunIsReproducible) {
  TempDir a("pipe_a"), b("pipe_b");
  const auto cfg = tiny_config();
  const auto quiet = [](const std::string&) {};
  const auto ma = ss::run_pipeline(cfg, ss::RunDir(a.path(), false), quiet);
  const auto mb = ss::run_pipeline(cfg, ss::RunDir(b.path(), false), quiet);
  EXPECT_EQ(slurp(a.path() / "manifest.txt"), slurp(b.path() / "manifest.txt"));
  for (const char* f : {"train.manifest", "depth_search.manifest", "ts_search.manifest", "evaluate.manifest",
                        "model.ckpt", "eval.csv", "report.csv"}) {
    EXPECT_TRUE(fs::exists(a.path() / f)) << f;
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
  }
  EXPECT_TRUE(ma.contains("eval.uniform.n3.psnr"));
  EXPECT_TRUE(ma.contains("eval.optimized.n3.psnr"));
  EXPECT_EQ(ma.at("ts.w1.sampler_calls"), ma.at("ts.w1.analytic_calls"));
  EXPECT_EQ(ma.entries(), mb.entries());
  // A second run into the same directory refuses to overwrite.
  EXPECT_THROW(ss::train_phase(cfg, ss::RunDir(a.path(), false), quiet), std::runtime_error);
}

TEST(Cli, ExitCodes) {
  TempDir tmp("cli");
  const auto cfg_path = tmp.path() / "tiny.conf";
  {
    std::ofstream(cfg_path) << kTinyConfig;
  }
  const std::string out = (tmp.path() / "run").string();
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("profile " + (tmp.path() / "missing.conf").string() + " --out " + out), 1);
  EXPECT_EQ(run_cli("profile " + cfg_path.string() + " --out " + out + " --set train.stepz=3"), 1);
  EXPECT_EQ(run_cli("profile " + cfg_path.string() + " --out " + out + " --set unet.image_size=24"), 1);
  EXPECT_EQ(run_cli("profile " + cfg_path.string() + " --out " + out), 0);
  const std::string csv = slurp(fs::path(out) / "depth_profile.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), ss::DepthProfile::kCsvHeader);
  EXPECT_EQ(run_cli("profile " + cfg_path.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("profile " + cfg_path.string() + " --out " + out + " --force"), 0);
  EXPECT_EQ(run_cli("finetune " + cfg_path.string() + " --out " + out), 2);
}
