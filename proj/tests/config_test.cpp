#include "wavjepa/config.hpp"
#include "wavjepa/errors.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace wavjepa;

namespace {

std::vector<std::string> violations_of(const std::string& text, bool is_json = false) {
  try {
    validate_config(text, is_json, "tiny");
  } catch (const ConfigValidationError& e) {
    return e.violations();
  }
  return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Profiles, FullScaleDefaults) {
  const RunConfig c = profile_defaults("paper");
  EXPECT_EQ(c.setup.train.peak_lr, 2e-4);
  EXPECT_EQ(c.setup.train.warmup_steps, 100000);
  EXPECT_EQ(c.setup.train.total_steps, 375000);
  EXPECT_EQ(c.setup.train.batch_size, 32);
  EXPECT_EQ(c.setup.train.crop_factor, 8);
  EXPECT_EQ(c.setup.ema.tau0, 0.999);
  EXPECT_EQ(c.setup.ema.tau_e, 0.99999);
  EXPECT_EQ(c.setup.model.transformer.width, 768);
  EXPECT_EQ(c.setup.model.targets.top_k, 8);
  EXPECT_EQ(c.setup.sampler.p_target, 0.025);
  EXPECT_EQ(c.setup.sampler.m_target, 10);
  EXPECT_THROW(profile_defaults("huge"), ConfigError);
}

TEST(Profiles, EveryProfileValidates) {
  for (const auto& p : profile_names()) {
    EXPECT_NO_THROW(validate_config("", false, p)) << p;
    const RunConfig c = profile_defaults(p);
    EXPECT_EQ(canonical_json(config_from_json(to_json(c))), canonical_json(c)) << p;
  }
}

TEST(Config, TomlAndJsonAgree) {
  const RunConfig a = validate_config("[trainer]\nseed = 7\n[sampler]\np_target = 0.02\n", false, "tiny");
  const RunConfig b =
      validate_config(R"({"trainer": {"seed": 7}, "sampler": {"p_target": 0.02}})", true, "tiny");
  EXPECT_EQ(canonical_json(a), canonical_json(b));
  EXPECT_EQ(a.setup.train.seed, 7u);
  EXPECT_EQ(a.setup.sampler.p_target, 0.02);
}

TEST(Config, ProfileKeyOverridesArgument) {
  const RunConfig c = validate_config("profile = \"desk\"\n", false, "tiny");
  EXPECT_EQ(c.profile, "desk");
  EXPECT_EQ(c.setup.model.transformer.width, 192);
}

TEST(Config, ReportsEveryViolationWithPath) {
  const auto v = violations_of("[model]\nwidth = 17\ntop_k = 9\n[trainer]\npeak_lr = -1.0\n");
  EXPECT_TRUE(mentions(v, "model.width"));
  EXPECT_TRUE(mentions(v, "model.top_k"));
  EXPECT_TRUE(mentions(v, "trainer.peak_lr"));
  EXPECT_GE(v.size(), 3u);
}

TEST(Config, UnknownKeysAndTypeMismatches) {
  const auto v = violations_of("[model]\nwdith = 16\n[trainer]\nseed = \"one\"\n[extra]\n");
  EXPECT_TRUE(mentions(v, "model.wdith: unknown key"));
  EXPECT_TRUE(mentions(v, "trainer.seed: expected integer"));
  EXPECT_TRUE(mentions(v, "extra: unknown key"));
}

TEST(Config, SyntaxErrorsAreConfigErrors) {
  EXPECT_TRUE(mentions(violations_of("[model\nwidth = 3"), "(syntax)"));
  EXPECT_TRUE(mentions(violations_of("{\"model\": ", true), "(syntax)"));
}

TEST(Config, NatRequiresTwoDimensionalPositions) {
  EXPECT_TRUE(mentions(violations_of("[nat]\nenabled = true\n"), "model.positional"));
  const RunConfig c = validate_config("[nat]\nenabled = true\n[model]\npositional = \"sin2d\"\n", false, "tiny");
  EXPECT_EQ(c.setup.model.channels, 2);
}

TEST(Config, CoverageFractionAlias) {
  const RunConfig c = validate_config("[sampler]\ncoverage_fraction = 0.2\n", false, "tiny");
  EXPECT_DOUBLE_EQ(c.setup.sampler.p_target, 0.02);
  EXPECT_TRUE(mentions(violations_of("[sampler]\ncoverage_fraction = 0.2\np_target = 0.02\n"), "not both"));
}

TEST(Config, CropMustCoverBlocks) {
  EXPECT_TRUE(mentions(violations_of("[ingest]\ncrop_seconds = 0.01\n"), "ingest.crop_seconds"));
  EXPECT_TRUE(mentions(violations_of("[ingest]\ncrop_seconds = 0.05\n"), "frames"));
}

TEST(Config, LoadChoosesParserByExtension) {
  const auto dir = std::filesystem::temp_directory_path() / "wavjepa_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "a.toml") << "[trainer]\nseed = 3\n";
  std::ofstream(dir / "a.json") << R"({"trainer": {"seed": 3}})";
  std::ofstream(dir / "a.yaml") << "trainer: 1\n";
  EXPECT_EQ(load_config(dir / "a.toml", "tiny").setup.train.seed, 3u);
  EXPECT_EQ(load_config(dir / "a.json", "tiny").setup.train.seed, 3u);
  EXPECT_THROW(load_config(dir / "a.yaml", "tiny"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.toml", "tiny"), IoError);
}
