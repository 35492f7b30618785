#include "wavjepa/errors.hpp"
#include "wavjepa/nat_scenes.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

using namespace wavjepa;
using namespace wavjepa::fixtures;
namespace fs = std::filesystem;

namespace {

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0, scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst / scale;
}

SceneSpec localized(std::uint64_t seed, double snr) {
  SceneSpec s;
  s.source = SoundClip::mono(tone_plus_noise(16000, 440.0, seed), 16000);
  s.source_brir = decay_brir(seed);
  s.noises = {white_noise_clip(24000, seed + 1)};
  s.noise_brirs = {decay_brir(seed + 2)};
  s.snr_db = snr;
  return s;
}

}  // namespace

TEST(Convolution, FftMatchesDirect) {
  for (std::size_t n : {1u, 2u, 17u, 256u, 1000u}) {
    for (std::size_t m : {1u, 5u, 64u, 333u}) {
      const auto a = white_noise_clip(n, n * 31 + m).samples[0];
      const auto b = white_noise_clip(m, n + m * 17).samples[0];
      const auto f = fft_convolve(a, b);
      const auto d = direct_convolve(a, b);
      ASSERT_EQ(f.size(), n + m - 1);
      EXPECT_LT(max_rel_diff(f, d), 1e-12) << n << "x" << m;
    }
  }
}

TEST(Convolution, BrirOutputTruncatedToSource) {
  const SoundClip src = SoundClip::mono(tone_plus_noise(4000, 300.0, 1), 16000);
  const ImpulseResponse ir = decay_brir(3, 0.1);
  const SoundClip out = convolve_brir(src, ir);
  ASSERT_EQ(out.channels(), 2);
  EXPECT_EQ(out.length(), 4000u);
  const auto full = direct_convolve(src.samples[0], ir.taps[1]);
  for (std::size_t t = 0; t < 4000; t += 97) EXPECT_NEAR(out.samples[1][t], full[t], 1e-10);

  SoundClip stereo;
  stereo.samples = {src.samples[0], src.samples[0]};
  EXPECT_EQ(convolve_brir(stereo, ir).samples, out.samples);

  ImpulseResponse wrong = ir;
  wrong.sample_rate = 44100;
  EXPECT_THROW(convolve_brir(src, wrong), InvalidArgument);
}

TEST(Noise, TrimmedAndFaded) {
  const SoundClip n = SoundClip::mono(std::vector<double>(200000, 1.0), 16000);
  const SoundClip p = prepare_noise(n);
  ASSERT_EQ(p.length(), 160000u);
  EXPECT_EQ(p.samples[0][0], 0.0);
  EXPECT_NEAR(p.samples[0][1600], 0.5, 1e-12);
  EXPECT_EQ(p.samples[0][80000], 1.0);
  EXPECT_NEAR(p.samples[0][159999], 0.0, 1e-12);
  EXPECT_THROW(prepare_noise(SoundClip::mono({1.0, 2.0}, 8000)), InvalidArgument);
}

TEST(Scene, ValidateEnforcesLayout) {
  SceneSpec s = localized(1, 20.0);
  EXPECT_NO_THROW(s.validate());
  s.snr_db = 41.0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = localized(1, 20.0);
  s.diffuse = true;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s.noises.assign(6, s.noises[0]);
  s.noise_brirs.assign(6, s.noise_brirs[0]);
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Scene, AchievedSnrMatchesRequest) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double snr = 5.0 + 3.5 * static_cast<double>(seed);
    const SceneSpec spec = localized(seed, snr);
    const Scene sc = mix_scene(spec);
    ASSERT_EQ(sc.mix.channels(), 2);
    ASSERT_EQ(sc.mix.length(), 16000u);
    // Recompute from the parts rather than trusting the reported value.
    const SoundClip t = convolve_brir(spec.source, spec.source_brir);
    SoundClip noise = sc.mix;
    for (int e = 0; e < 2; ++e) {
      for (std::size_t i = 0; i < noise.length(); ++i) noise.samples[e][i] -= t.samples[e][i];
    }
    const double measured = 20.0 * std::log10(joint_rms(t) / joint_rms(noise));
    EXPECT_NEAR(measured, snr, 0.01);
    EXPECT_NEAR(sc.achieved_snr_db, snr, 1e-9);
  }
}

TEST(Scene, DiffuseFieldSumsSeveralSources) {
  SceneSpec s = localized(4, 10.0);
  s.diffuse = true;
  for (int i = 0; i < 3; ++i) {
    s.noises.push_back(white_noise_clip(20000, 40 + i));
    s.noise_brirs.push_back(decay_brir(50 + i));
  }
  s.noises.erase(s.noises.begin());
  s.noise_brirs.erase(s.noise_brirs.begin());
  EXPECT_NEAR(mix_scene(s).achieved_snr_db, 10.0, 1e-9);
}

TEST(Scene, ShortNoiseLeavesSilentTail) {
  SceneSpec s = localized(2, 20.0);
  s.noises = {white_noise_clip(4000, 9)};
  const Scene sc = mix_scene(s);
  const SoundClip t = convolve_brir(s.source, s.source_brir);
  // Past the noise plus its BRIR tail the mix equals the reverberant source.
  const std::size_t quiet = 4000 + s.noise_brirs[0].taps[0].size();
  for (std::size_t i = quiet; i < 16000; i += 101) EXPECT_EQ(sc.mix.samples[0][i], t.samples[0][i]);
}

TEST(Scene, SilentNoiseIsAnError) {
  SceneSpec s = localized(2, 20.0);
  s.noises = {SoundClip::mono(std::vector<double>(8000, 0.0), 16000)};
  EXPECT_THROW(mix_scene(s), InvalidArgument);
}

TEST(Scene, JointRms) {
  SoundClip c;
  c.samples = {{1.0, 1.0}, {-3.0, 3.0}};
  EXPECT_DOUBLE_EQ(joint_rms(c), std::sqrt(5.0));
}

TEST(Scene, CleanDrawFrequency) {
  Rng rng = make_rng(5);
  int clean = 0;
  for (int i = 0; i < 20000; ++i) clean += draw_clean(0.3, rng);
  EXPECT_NEAR(clean / 20000.0, 0.3, 0.015);
  EXPECT_THROW(draw_clean(1.5, rng), InvalidArgument);
}

TEST(Scene, DualEncodingStacksChannels) {
  const EncoderParams e0 = init_encoder(ConvStackConfig::standard(8, 8), 1);
  const EncoderParams e1 = init_encoder(ConvStackConfig::standard(8, 8), 2);
  SoundClip sc;
  sc.samples = {tone_plus_noise(3600, 300.0, 1), tone_plus_noise(3600, 500.0, 2)};
  const Matrix w = encode_wave_dual(sc, e0.encoder, e0.values, e1.encoder, e1.values);
  const int n = static_cast<int>(output_length(3600, e0.encoder.config()));
  ASSERT_EQ(w.rows(), 2 * n);
  EXPECT_EQ(w.bottomRows(n), encode_wave(e1.encoder, e1.values, sc.samples[1]).frames);
  EXPECT_THROW(encode_wave_dual(SoundClip::mono(sc.samples[0], 16000), e0.encoder, e0.values, e1.encoder,
                                e1.values),
               InvalidArgument);
}

TEST(SceneManifest, MixesRowsToDisk) {
  const fs::path dir = fs::temp_directory_path() / "wavjepa_scene_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_clip(dir / "src.wav", SoundClip::mono(tone_plus_noise(16000, 440.0, 1), 16000));
  save_clip(dir / "n.wav", white_noise_clip(16000, 2));
  for (const char* name : {"b0.wav", "b1.wav"}) {
    const ImpulseResponse ir = decay_brir(name[1]);
    SoundClip c;
    c.samples = ir.taps;
    save_clip(dir / name, c);
  }
  {
    std::ofstream f(dir / "scenes.tsv");
    f << "# source\tbrir\tnoises\tnoise_brirs\tsnr\tdiffuse\n";
    f << "src.wav\tb0.wav\tn.wav\tb1.wav\t12\tno\n";
  }
  const auto rows = read_scene_manifest(dir / "scenes.tsv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].diffuse);
  const auto summary = mix_scenes(dir / "scenes.tsv", dir / "out");
  ASSERT_EQ(summary.size(), 1u);
  EXPECT_NEAR(summary[0]["achieved_snr_db"].get<double>(), 12.0, 0.01);
  EXPECT_TRUE(fs::exists(dir / "out" / "scene-00000.wav"));
  EXPECT_EQ(load_clip(dir / "out" / "scene-00000.wav").channels(), 2);

  std::ofstream(dir / "bad.tsv") << "a\tb\n";
  EXPECT_THROW(read_scene_manifest(dir / "bad.tsv"), InvalidArgument);
}
