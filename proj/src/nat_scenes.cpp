#include "wavjepa/nat_scenes.hpp"

#include "wavjepa/errors.hpp"

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <memory>
#include <mutex>
#include <sstream>

namespace wavjepa {

namespace {

// Planner calls are not thread-safe in FFTW; execution is.
std::mutex& planner_mutex() {
  static std::mutex mu;
  return mu;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

std::size_t fft_size(std::size_t n) {
  std::size_t size = 1;
  while (size < n) size <<= 1;
  return size;
}

std::vector<double> mono_of(const SoundClip& clip) {
  if (clip.channels() == 1) return clip.samples.front();
  std::vector<double> out(clip.length(), 0.0);
  for (const auto& ch : clip.samples) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ch[i];
  }
  for (double& v : out) v /= clip.channels();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_flag(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw InvalidArgument("cannot read diffuse flag '" + s + "'");
}

}  // namespace

void ImpulseResponse::validate() const {
  if (taps.empty() || taps.size() > 2) throw InvalidArgument("impulse response needs 1 or 2 channels");
  if (taps.front().empty()) throw InvalidArgument("impulse response is empty");
  for (const auto& ch : taps) {
    if (ch.size() != taps.front().size()) throw InvalidArgument("impulse response channels differ in length");
    for (double v : ch) {
      if (!std::isfinite(v)) throw InvalidArgument("impulse response has non-finite taps");
    }
  }
  if (sample_rate <= 0) throw InvalidArgument("impulse response rate must be positive");
}

ImpulseResponse load_brir(const std::filesystem::path& path) {
  SoundClip clip = load_clip(path);
  ImpulseResponse ir;
  ir.taps = std::move(clip.samples);
  ir.sample_rate = clip.sample_rate;
  ir.id = path.filename().string();
  ir.validate();
  return ir;
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = fft_size(out_len);
  const std::size_t bins = n / 2 + 1;

  std::unique_ptr<double, FftwFree> xa(fftw_alloc_real(n));
  std::unique_ptr<double, FftwFree> xb(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> fa(fftw_alloc_complex(bins));
  std::unique_ptr<fftw_complex, FftwFree> fb(fftw_alloc_complex(bins));
  fftw_plan pa, pb, inv;
  {
    std::lock_guard lock(planner_mutex());
    pa = fftw_plan_dft_r2c_1d(static_cast<int>(n), xa.get(), fa.get(), FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_1d(static_cast<int>(n), xb.get(), fb.get(), FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), fa.get(), xa.get(), FFTW_ESTIMATE);
  }
  std::fill_n(xa.get(), n, 0.0);
  std::fill_n(xb.get(), n, 0.0);
  std::copy(a.begin(), a.end(), xa.get());
  std::copy(b.begin(), b.end(), xb.get());
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t k = 0; k < bins; ++k) {
    const std::complex<double> p =
        std::complex<double>(fa.get()[k][0], fa.get()[k][1]) * std::complex<double>(fb.get()[k][0], fb.get()[k][1]);
    fa.get()[k][0] = p.real();
    fa.get()[k][1] = p.imag();
  }
  fftw_execute(inv);
  std::vector<double> out(out_len);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = xa.get()[i] * scale;
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(inv);
  }
  return out;
}

std::vector<double> direct_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

SoundClip convolve_brir(const SoundClip& clip, const ImpulseResponse& brir) {
  clip.validate();
  brir.validate();
  if (clip.sample_rate != brir.sample_rate) {
    throw InvalidArgument("clip rate " + std::to_string(clip.sample_rate) + " differs from BRIR rate " +
                          std::to_string(brir.sample_rate));
  }
  const std::vector<double> source = mono_of(clip);
  SoundClip out;
  out.sample_rate = clip.sample_rate;
  for (int ear = 0; ear < 2; ++ear) {
    const auto& taps = brir.taps[brir.taps.size() == 2 ? static_cast<std::size_t>(ear) : 0];
    std::vector<double> y = fft_convolve(source, taps);
    y.resize(source.size());
    out.samples.push_back(std::move(y));
  }
  return out;
}

SoundClip prepare_noise(const SoundClip& clip) {
  clip.validate();
  if (clip.sample_rate != 16000) throw InvalidArgument("noise clips must be at 16 kHz");
  const auto max_len = static_cast<std::size_t>(std::llround(kNoiseMaxSeconds * clip.sample_rate));
  const auto fade = static_cast<std::size_t>(std::llround(kNoiseFadeSeconds * clip.sample_rate));
  SoundClip out = clip;
  const std::size_t len = std::min(clip.length(), max_len);
  const std::size_t ramp = std::min(fade, len / 2);
  for (auto& ch : out.samples) {
    ch.resize(len);
    for (std::size_t i = 0; i < ramp; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(fade);
      ch[i] *= f;
      ch[len - 1 - i] *= f;
    }
  }
  return out;
}

void SceneSpec::validate() const {
  source.validate();
  if (!(snr_db >= 5.0 && snr_db <= 40.0)) throw InvalidArgument("snr_db must lie in [5, 40]");
  if (noises.size() != noise_brirs.size()) throw InvalidArgument("one BRIR per noise clip required");
  if (diffuse && (noises.size() < 3 || noises.size() > 5)) {
    throw InvalidArgument("a diffuse scene needs 3 to 5 noise clips");
  }
  if (!diffuse && noises.size() != 1) throw InvalidArgument("a localized scene needs exactly 1 noise clip");
}

double joint_rms(const SoundClip& clip) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ch : clip.samples) {
    for (double v : ch) sum += v * v;
    n += ch.size();
  }
  return n == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(n));
}

Scene mix_scene(const SceneSpec& spec) {
  spec.validate();
  const SoundClip target = convolve_brir(spec.source, spec.source_brir);
  const std::size_t len = target.length();

  SoundClip noise;
  noise.sample_rate = target.sample_rate;
  noise.samples.assign(2, std::vector<double>(len, 0.0));
  for (std::size_t i = 0; i < spec.noises.size(); ++i) {
    if (spec.noises[i].sample_rate != target.sample_rate) {
      throw InvalidArgument("noise clip rate differs from the source rate");
    }
    const SoundClip placed = convolve_brir(prepare_noise(spec.noises[i]), spec.noise_brirs[i]);
    // Shorter noise leaves the tail silent; longer noise is cut.
    for (int ear = 0; ear < 2; ++ear) {
      const std::size_t n = std::min(len, placed.length());
      for (std::size_t t = 0; t < n; ++t) noise.samples[ear][t] += placed.samples[ear][t];
    }
  }

  const double rms_t = joint_rms(target);
  const double rms_n = joint_rms(noise);
  if (!(rms_n > 0.0)) throw InvalidArgument("noise field is silent");
  if (!(rms_t > 0.0)) throw InvalidArgument("reverberant source is silent");

  Scene scene;
  scene.gain = rms_t / rms_n * std::pow(10.0, -spec.snr_db / 20.0);
  scene.mix = target;
  for (int ear = 0; ear < 2; ++ear) {
    for (std::size_t t = 0; t < len; ++t) scene.mix.samples[ear][t] += scene.gain * noise.samples[ear][t];
  }
  scene.achieved_snr_db = 20.0 * std::log10(rms_t / (scene.gain * rms_n));
  return scene;
}

Matrix encode_wave_dual(const SoundClip& scene, const WaveformEncoder& encoder0,
                        std::span<const double> params0, const WaveformEncoder& encoder1,
                        std::span<const double> params1) {
  if (scene.channels() != 2) throw InvalidArgument("dual encoding needs a two-channel clip");
  scene.validate();
  const Matrix w0 = encode_wave(encoder0, params0, scene.samples[0], scene.sample_rate, 0).frames;
  const Matrix w1 = encode_wave(encoder1, params1, scene.samples[1], scene.sample_rate, 1).frames;
  if (w0.cols() != w1.cols()) throw ShapeError("channel encoders differ in width");
  Matrix w(w0.rows() + w1.rows(), w0.cols());
  w.topRows(w0.rows()) = w0;
  w.bottomRows(w1.rows()) = w1;
  return w;
}

bool draw_clean(double clean_ratio, Rng& rng) {
  if (!(clean_ratio >= 0.0 && clean_ratio <= 1.0)) throw InvalidArgument("clean_ratio must lie in [0, 1]");
  return std::bernoulli_distribution(clean_ratio)(rng);
}

std::vector<SceneManifestRow> read_scene_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp = trim(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<SceneManifestRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 6) {
      throw InvalidArgument("scene manifest line " + std::to_string(lineno) + ": expected 6 columns");
    }
    SceneManifestRow row;
    row.source = resolve(cols[0]);
    row.brir = resolve(cols[1]);
    for (const auto& p : split(cols[2], ',')) {
      if (!trim(p).empty()) row.noises.push_back(resolve(p));
    }
    for (const auto& p : split(cols[3], ',')) {
      if (!trim(p).empty()) row.noise_brirs.push_back(resolve(p));
    }
    try {
      row.snr_db = std::stod(trim(cols[4]));
    } catch (const std::exception&) {
      throw InvalidArgument("scene manifest line " + std::to_string(lineno) + ": bad snr_db");
    }
    row.diffuse = parse_flag(trim(cols[5]));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json mix_scenes(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                          int target_rate) {
  const auto rows = read_scene_manifest(manifest);
  std::filesystem::create_directories(out_dir);
  auto at_rate = [&](SoundClip c) { return c.sample_rate == target_rate ? c : resample(c, target_rate); };
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    SceneSpec spec;
    spec.source = at_rate(load_clip(row.source));
    spec.source_brir = load_brir(row.brir);
    for (const auto& p : row.noises) spec.noises.push_back(at_rate(load_clip(p)));
    for (const auto& p : row.noise_brirs) spec.noise_brirs.push_back(load_brir(p));
    spec.snr_db = row.snr_db;
    spec.diffuse = row.diffuse;
    const Scene scene = mix_scene(spec);

    std::ostringstream name;
    name << "scene-" << std::setw(5) << std::setfill('0') << i;
    const auto wav = out_dir / (name.str() + ".wav");
    save_clip(wav, scene.mix, WavEncoding::float32);
    nlohmann::json side{{"source", row.source.string()},
                        {"brir", row.brir.string()},
                        {"noise_count", row.noises.size()},
                        {"diffuse", row.diffuse},
                        {"requested_snr_db", row.snr_db},
                        {"achieved_snr_db", scene.achieved_snr_db},
                        {"gain", scene.gain},
                        {"samples", scene.mix.length()},
                        {"sample_rate", scene.mix.sample_rate}};
    std::ofstream(out_dir / (name.str() + ".json")) << side.dump(2) << "\n";
    side["output"] = wav.filename().string();
    summary.push_back(std::move(side));
  }
  return summary;
}

}  // namespace wavjepa
