#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wavjepa {

/// Raw audio: one sample vector per channel, all of equal length.
struct SoundClip {
  std::vector<std::vector<double>> samples;
  int sample_rate = 16000;

  int channels() const { return static_cast<int>(samples.size()); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration() const { return static_cast<double>(length()) / sample_rate; }

  static SoundClip mono(std::vector<double> data, int sample_rate);

  /// Throws InvalidArgument when the invariants (1-2 channels, equal
  /// lengths, positive rate, finite amplitudes) do not hold.
  void validate() const;
};

enum class WavEncoding { pcm16, float32 };

/// Decodes a PCM WAV file (16-bit integer or 32-bit float).
SoundClip load_clip(const std::filesystem::path& path);
SoundClip decode_wav(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_wav(const SoundClip& clip, WavEncoding encoding);
void save_clip(const std::filesystem::path& path, const SoundClip& clip,
               WavEncoding encoding = WavEncoding::float32);

/// Resamples with a Kaiser-windowed sinc kernel and removes the per-channel
/// mean. Output length is round(len * target_rate / source_rate).
SoundClip resample(const SoundClip& clip, int target_rate);

/// Removes the mean of every channel in place.
void mean_center(SoundClip& clip);

/// Zero-mean, unit-variance normalisation (biased variance). A variance
/// below `eps` yields an all-zero output.
void instance_normalize(std::vector<double>& x, double eps = 1e-8);

struct IngestConfig {
  double crop_seconds = 2.0;
  int crop_factor = 8;
  int target_rate = 16000;
  bool pad_short = true;
};

/// One training instance. Multi-channel crops share their start offset.
struct Crop {
  std::vector<std::vector<double>> channels;
  std::size_t source_id = 0;
  std::size_t offset = 0;
};

struct CropBatch {
  std::vector<Crop> instances;
  std::vector<std::string> warnings;
};

/// Cuts `crop_factor` crops from every clip, each instance-normalised.
/// Clips must already be at the target rate. Clips shorter than the window
/// are zero-padded or skipped (with a warning) according to `pad_short`.
CropBatch crop_batch(const std::vector<SoundClip>& clips, const IngestConfig& config,
                     std::uint64_t seed);

/// Same as above for a subset of clips; `source_ids` name the crops.
CropBatch crop_batch(const std::vector<const SoundClip*>& clips,
                     const std::vector<std::size_t>& source_ids, const IngestConfig& config,
                     std::uint64_t seed);

struct ManifestEntry {
  std::filesystem::path path;
  std::optional<std::string> label;
};

/// Newline-delimited paths, optionally followed by a tab and a label.
/// Relative paths resolve against the manifest's directory. Blank lines and
/// lines starting with '#' are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

}  // namespace wavjepa
