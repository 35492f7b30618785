#include "wavjepa/audio.hpp"
#include "wavjepa/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

using namespace wavjepa;
namespace fs = std::filesystem;

namespace {

std::vector<double> sine(std::size_t n, double freq, int rate, double amp = 0.5) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = amp * std::sin(2.0 * std::numbers::pi * freq * t / rate);
  return x;
}

double rms_of(const std::vector<double>& x, std::size_t skip = 0) {
  double s = 0.0;
  for (std::size_t i = skip; i + skip < x.size(); ++i) s += x[i] * x[i];
  return std::sqrt(s / static_cast<double>(x.size() - 2 * skip));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wavjepa_audio_" + name);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Wav, Float32RoundTripIsExactForFloatValues) {
  SoundClip c;
  c.sample_rate = 22050;
  c.samples = {{0.25, -0.5, 0.125}, {1.0, 0.0, -1.0}};
  const SoundClip d = decode_wav(encode_wav(c, WavEncoding::float32));
  EXPECT_EQ(d.sample_rate, 22050);
  EXPECT_EQ(d.samples, c.samples);
}

TEST(Wav, Pcm16RoundTripWithinQuantisation) {
  SoundClip c = SoundClip::mono(sine(1000, 440.0, 16000), 16000);
  const SoundClip d = decode_wav(encode_wav(c, WavEncoding::pcm16));
  ASSERT_EQ(d.length(), 1000u);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(d.samples[0][i], c.samples[0][i], 1.0 / 32768.0);
}

TEST(Wav, RejectsMalformedInput) {
  EXPECT_THROW(decode_wav({}), DecodeError);
  std::vector<std::uint8_t> bytes = encode_wav(SoundClip::mono({0.1, 0.2}, 16000), WavEncoding::pcm16);
  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_wav(bad), DecodeError);
  bytes.resize(30);
  EXPECT_THROW(decode_wav(bytes), DecodeError);
}

TEST(Wav, RejectsMoreThanTwoChannels) {
  SoundClip c;
  c.samples = {{0.0}, {0.0}};
  std::vector<std::uint8_t> bytes = encode_wav(c, WavEncoding::pcm16);
  bytes[22] = 3;  // channel count in the fmt chunk
  EXPECT_THROW(decode_wav(bytes), UnsupportedFormat);
}

TEST(Wav, FileRoundTripAndMissingFile) {
  const fs::path dir = scratch("file");
  const SoundClip c = SoundClip::mono({0.5, -0.25}, 16000);
  save_clip(dir / "a.wav", c);
  EXPECT_EQ(load_clip(dir / "a.wav").samples, c.samples);
  EXPECT_THROW(load_clip(dir / "missing.wav"), IoError);
}

TEST(Clip, ValidateChecksInvariants) {
  SoundClip c;
  c.samples = {{0.0, 1.0}, {0.0}};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.samples = {{0.0, NAN}};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.samples = {{0.0, 1.0}};
  c.sample_rate = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Resample, LengthAndPassband) {
  const SoundClip in = SoundClip::mono(sine(44100, 1000.0, 44100), 44100);
  const SoundClip out = resample(in, 16000);
  EXPECT_EQ(out.sample_rate, 16000);
  EXPECT_EQ(out.length(), 16000u);
  const auto ref = sine(16000, 1000.0, 16000);
  EXPECT_NEAR(rms_of(out.samples[0], 200), rms_of(ref, 200), 0.005);
}

TEST(Resample, AttenuatesAboveOutputNyquist) {
  const SoundClip in = SoundClip::mono(sine(44100, 12000.0, 44100), 44100);
  const SoundClip out = resample(in, 16000);
  EXPECT_LT(rms_of(out.samples[0], 200), 0.005);
}

TEST(Resample, RemovesMeanAndKeepsRate) {
  std::vector<double> x = sine(1600, 300.0, 16000);
  for (double& v : x) v += 2.0;
  const SoundClip out = resample(SoundClip::mono(x, 16000), 16000);
  const double mean = std::accumulate(out.samples[0].begin(), out.samples[0].end(), 0.0) / 1600.0;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_EQ(out.length(), 1600u);
}

TEST(Normalize, UnitVarianceAndSilence) {
  std::vector<double> x = sine(1000, 50.0, 16000, 3.0);
  instance_normalize(x);
  EXPECT_NEAR(rms_of(x), 1.0, 1e-9);
  std::vector<double> z(10, 0.3);
  instance_normalize(z);
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Crops, CountDeterminismAndSharedOffsets) {
  SoundClip stereo;
  stereo.samples = {sine(48000, 200.0, 16000), sine(48000, 300.0, 16000, 2.0)};
  IngestConfig cfg;
  cfg.crop_seconds = 1.0;
  cfg.crop_factor = 4;
  const CropBatch a = crop_batch({stereo, stereo}, cfg, 7);
  const CropBatch b = crop_batch({stereo, stereo}, cfg, 7);
  ASSERT_EQ(a.instances.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a.instances[i].offset, b.instances[i].offset);
    ASSERT_EQ(a.instances[i].channels.size(), 2u);
    EXPECT_EQ(a.instances[i].channels[0].size(), 16000u);
    // Both channels are cut at the same offset.
    const auto off = a.instances[i].offset;
    std::vector<double> expect(stereo.samples[1].begin() + off, stereo.samples[1].begin() + off + 16000);
    instance_normalize(expect);
    EXPECT_EQ(a.instances[i].channels[1], expect);
  }
}

TEST(Crops, ShortClipsArePaddedOrSkipped) {
  const SoundClip shorty = SoundClip::mono(sine(8000, 200.0, 16000), 16000);
  IngestConfig cfg;
  cfg.crop_seconds = 1.0;
  cfg.crop_factor = 2;
  CropBatch padded = crop_batch({shorty}, cfg, 1);
  ASSERT_EQ(padded.instances.size(), 2u);
  EXPECT_EQ(padded.instances[0].channels[0].size(), 16000u);
  EXPECT_EQ(padded.instances[0].channels[0][12000], padded.instances[0].channels[0][15999]);
  cfg.pad_short = false;
  CropBatch skipped = crop_batch({shorty}, cfg, 1);
  EXPECT_TRUE(skipped.instances.empty());
  EXPECT_EQ(skipped.warnings.size(), 1u);
}

TEST(Crops, WrongRateIsAnError) {
  IngestConfig cfg;
  EXPECT_THROW(crop_batch({SoundClip::mono(sine(50000, 200.0, 22050), 22050)}, cfg, 1), InvalidArgument);
}

TEST(Manifest, ParsesPathsLabelsAndComments) {
  const fs::path dir = scratch("manifest");
  {
    std::ofstream f(dir / "list.txt");
    f << "# header\n\na.wav\tdog\n/abs/b.wav\n";
  }
  const auto entries = read_manifest(dir / "list.txt");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].path, dir / "a.wav");
  EXPECT_EQ(entries[0].label.value(), "dog");
  EXPECT_EQ(entries[1].path, fs::path("/abs/b.wav"));
  EXPECT_FALSE(entries[1].label.has_value());
  EXPECT_THROW(read_manifest(dir / "nope.txt"), IoError);
}
