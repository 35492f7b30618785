#pragma once

#include "wavjepa/audio.hpp"
#include "wavjepa/rng.hpp"
#include "wavjepa/waveform_encoder.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wavjepa {

struct ImpulseResponse {
  std::vector<std::vector<double>> taps;  // one sequence per ear
  int sample_rate = 16000;
  std::string id;

  void validate() const;
};

/// Reads a 1- or 2-channel WAV as an impulse response. A mono file is used
/// for both ears.
ImpulseResponse load_brir(const std::filesystem::path& path);

/// Full linear convolution (length a + b - 1) computed with real FFTs.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

/// Reference O(n m) convolution.
std::vector<double> direct_convolve(std::span<const double> a, std::span<const double> b);

/// Convolves a source with each ear of the BRIR and truncates to the source
/// length. Stereo sources are averaged to mono first.
SoundClip convolve_brir(const SoundClip& clip, const ImpulseResponse& brir);

constexpr double kNoiseMaxSeconds = 10.0;
constexpr double kNoiseFadeSeconds = 0.2;

/// Trims to 10 s and applies 200 ms linear fades at both ends.
SoundClip prepare_noise(const SoundClip& clip);

struct SceneSpec {
  SoundClip source;
  ImpulseResponse source_brir;
  std::vector<SoundClip> noises;
  std::vector<ImpulseResponse> noise_brirs;
  double snr_db = 20.0;
  bool diffuse = false;

  void validate() const;
};

struct Scene {
  SoundClip mix;        // S = T + bN
  double gain = 0.0;    // b
  double achieved_snr_db = 0.0;
};

/// Root mean square over every sample of every channel.
double joint_rms(const SoundClip& clip);

Scene mix_scene(const SceneSpec& spec);

/// Channel 0 frames in rows [0, N), channel 1 frames in rows [N, 2N).
Matrix encode_wave_dual(const SoundClip& scene, const WaveformEncoder& encoder0,
                        std::span<const double> params0, const WaveformEncoder& encoder1,
                        std::span<const double> params1);

/// True with probability `clean_ratio`: the loader then serves a clean,
/// duplicated-mono instance instead of a scene.
bool draw_clean(double clean_ratio, Rng& rng);

struct SceneManifestRow {
  std::filesystem::path source;
  std::filesystem::path brir;
  std::vector<std::filesystem::path> noises;
  std::vector<std::filesystem::path> noise_brirs;
  double snr_db = 0.0;
  bool diffuse = false;
};

/// Tab-separated rows: source, brir, noises (comma separated), noise brirs
/// (comma separated), snr_db, diffuse (0/1/true/false). '#' starts a comment.
std::vector<SceneManifestRow> read_scene_manifest(const std::filesystem::path& path);

/// Mixes every manifest row into `out_dir` as scene-NNNNN.wav plus a JSON
/// sidecar. Returns one summary record per scene.
nlohmann::json mix_scenes(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                          int target_rate = 16000);

}  // namespace wavjepa
