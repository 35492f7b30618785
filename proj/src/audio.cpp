#include "wavjepa/audio.hpp"

#include "wavjepa/errors.hpp"
#include "wavjepa/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace wavjepa {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

  std::string tag() {
    need(4);
    std::string t(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return t;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

 private:
  void need(std::size_t n) const {
    if (!has(n)) throw DecodeError("unexpected end of WAV data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

SoundClip SoundClip::mono(std::vector<double> data, int sample_rate) {
  SoundClip c;
  c.samples.push_back(std::move(data));
  c.sample_rate = sample_rate;
  return c;
}

void SoundClip::validate() const {
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  if (samples.empty() || samples.size() > 2) {
    throw InvalidArgument("clips must have one or two channels");
  }
  for (const auto& ch : samples) {
    if (ch.size() != samples.front().size()) {
      throw InvalidArgument("all channels must have equal length");
    }
    for (double v : ch) {
      if (!std::isfinite(v)) throw InvalidArgument("clip contains non-finite samples");
    }
  }
}

SoundClip decode_wav(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  if (!in.has(12)) throw DecodeError("file too short for a RIFF header");
  if (in.tag() != "RIFF") throw DecodeError("missing RIFF tag");
  in.u32();
  if (in.tag() != "WAVE") throw DecodeError("missing WAVE tag");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_pos = 0, data_size = 0;
  bool have_data = false;

  while (in.has(8)) {
    const std::string id = in.tag();
    const std::uint32_t size = in.u32();
    const std::size_t body = in.pos();
    if (id == "fmt ") {
      if (size < 16) throw DecodeError("fmt chunk too small");
      format = in.u16();
      channels = in.u16();
      rate = in.u32();
      in.u32();  // byte rate
      in.u16();  // block align
      bits = in.u16();
      if (format == kFormatExtensible) {
        if (size < 40) throw DecodeError("extensible fmt chunk too small");
        in.u16();  // cb size
        in.u16();  // valid bits
        in.u32();  // channel mask
        format = in.u16();  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      have_data = true;
    }
    const std::size_t next = body + size + (size & 1u);
    if (next > bytes.size()) break;
    in.seek(next);
  }
  if (!have_fmt) throw DecodeError("missing fmt chunk");
  if (!have_data) throw DecodeError("missing data chunk");
  if (channels == 0) throw DecodeError("zero channels in header");
  if (rate == 0) throw DecodeError("zero sample rate in header");
  if (channels > 2) throw UnsupportedFormat("only mono and stereo files are supported");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw UnsupportedFormat("unsupported WAV encoding (format " + std::to_string(format) +
                            ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);

  SoundClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.assign(channels, std::vector<double>(frames));
  const std::uint8_t* p = bytes.data() + data_pos;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* s = p + (f * channels + c) * width;
      double v;
      if (pcm16) {
        const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(s[0] | (s[1] << 8)));
        v = static_cast<double>(raw) / 32768.0;
      } else {
        const std::uint32_t raw = static_cast<std::uint32_t>(s[0]) |
                                  (static_cast<std::uint32_t>(s[1]) << 8) |
                                  (static_cast<std::uint32_t>(s[2]) << 16) |
                                  (static_cast<std::uint32_t>(s[3]) << 24);
        v = static_cast<double>(std::bit_cast<float>(raw));
        if (!std::isfinite(v)) throw DecodeError("non-finite float sample");
      }
      clip.samples[c][f] = v;
    }
  }
  return clip;
}

SoundClip load_clip(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  } catch (const UnsupportedFormat& e) {
    throw UnsupportedFormat(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const SoundClip& clip, WavEncoding encoding) {
  clip.validate();
  const auto channels = static_cast<std::uint16_t>(clip.channels());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const auto data_bytes = static_cast<std::uint32_t>(clip.length() * block);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::size_t f = 0; f < clip.length(); ++f) {
    for (int c = 0; c < clip.channels(); ++c) {
      const double v = clip.samples[static_cast<std::size_t>(c)][f];
      if (encoding == WavEncoding::pcm16) {
        const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

void save_clip(const std::filesystem::path& path, const SoundClip& clip, WavEncoding encoding) {
  const auto bytes = encode_wav(clip, encoding);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void mean_center(SoundClip& clip) {
  for (auto& ch : clip.samples) {
    if (ch.empty()) continue;
    const double mean = std::accumulate(ch.begin(), ch.end(), 0.0) / static_cast<double>(ch.size());
    for (double& v : ch) v -= mean;
  }
}

SoundClip resample(const SoundClip& clip, int target_rate) {
  if (target_rate <= 0) throw InvalidArgument("target rate must be positive");
  clip.validate();
  if (target_rate == clip.sample_rate) {
    SoundClip out = clip;
    mean_center(out);
    return out;
  }

  const long long src = clip.sample_rate;
  const long long dst = target_rate;
  const long long g = std::gcd(src, dst);
  const long long up = dst / g;    // output samples per period
  const long long down = src / g;  // input samples per period
  const auto in_len = static_cast<long long>(clip.length());
  const long long out_len = (in_len * dst * 2 + src) / (2 * src);

  // Cutoff relative to the input Nyquist; a small guard band keeps the
  // transition below the output Nyquist when downsampling.
  const double ratio = std::min(1.0, static_cast<double>(dst) / static_cast<double>(src));
  const double cutoff = ratio * (ratio < 1.0 ? 0.95 : 1.0);
  constexpr double kBeta = 8.0;
  constexpr int kZeroCrossings = 16;
  const double half_width = kZeroCrossings / cutoff;
  const auto taps = static_cast<long long>(std::ceil(half_width));

  // One tap set per output phase: output n sits at input time n*down/up.
  std::vector<std::vector<double>> phases(static_cast<std::size_t>(up));
  for (long long ph = 0; ph < up; ++ph) {
    const double frac = static_cast<double>((ph * down) % up) / static_cast<double>(up);
    auto& h = phases[static_cast<std::size_t>(ph)];
    h.resize(static_cast<std::size_t>(2 * taps + 1));
    double sum = 0.0;
    for (long long k = -taps; k <= taps; ++k) {
      const double x = static_cast<double>(k) - frac;
      const double w = cutoff * sinc(cutoff * x) * kaiser(x / half_width, kBeta);
      h[static_cast<std::size_t>(k + taps)] = w;
      sum += w;
    }
    for (double& w : h) w /= sum;
  }

  SoundClip out;
  out.sample_rate = target_rate;
  for (const auto& ch : clip.samples) {
    std::vector<double> y(static_cast<std::size_t>(out_len), 0.0);
    for (long long n = 0; n < out_len; ++n) {
      const long long pos = n * down;
      const long long base = pos / up;
      const auto& h = phases[static_cast<std::size_t>(n % up)];
      double acc = 0.0;
      for (long long k = -taps; k <= taps; ++k) {
        const long long i = base + k;
        if (i < 0 || i >= in_len) continue;
        acc += h[static_cast<std::size_t>(k + taps)] * ch[static_cast<std::size_t>(i)];
      }
      y[static_cast<std::size_t>(n)] = acc;
    }
    out.samples.push_back(std::move(y));
  }
  mean_center(out);
  return out;
}

void instance_normalize(std::vector<double>& x, double eps) {
  if (x.empty()) return;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  if (var < eps) {
    std::fill(x.begin(), x.end(), 0.0);
    return;
  }
  const double inv = 1.0 / std::sqrt(var);
  for (double& v : x) v = (v - mean) * inv;
}

CropBatch crop_batch(const std::vector<const SoundClip*>& clips,
                     const std::vector<std::size_t>& source_ids, const IngestConfig& config,
                     std::uint64_t seed) {
  if (config.crop_factor < 1) throw InvalidArgument("crop_factor must be at least 1");
  if (config.crop_seconds <= 0.0) throw InvalidArgument("crop_seconds must be positive");
  if (clips.size() != source_ids.size()) throw InvalidArgument("one source id per clip required");

  CropBatch batch;
  const auto window = static_cast<std::size_t>(std::llround(config.crop_seconds * config.target_rate));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const SoundClip& clip = *clips[i];
    if (clip.sample_rate != config.target_rate) {
      throw InvalidArgument("clip must be resampled to the target rate before cropping");
    }
    const std::size_t len = clip.length();
    if (len < window && !config.pad_short) {
      batch.warnings.push_back("clip " + std::to_string(source_ids[i]) + " shorter than crop window; skipped");
      continue;
    }
    Rng rng = make_rng(seed, {tag(Stream::crops), source_ids[i], i});
    for (int c = 0; c < config.crop_factor; ++c) {
      std::size_t start = 0;
      if (len > window) {
        std::uniform_int_distribution<std::size_t> dist(0, len - window);
        start = dist(rng);
      }
      Crop crop;
      crop.source_id = source_ids[i];
      crop.offset = start;
      for (const auto& ch : clip.samples) {
        std::vector<double> piece(window, 0.0);
        const std::size_t n = std::min(window, len - std::min(len, start));
        std::copy_n(ch.begin() + static_cast<std::ptrdiff_t>(start), n, piece.begin());
        instance_normalize(piece);
        crop.channels.push_back(std::move(piece));
      }
      batch.instances.push_back(std::move(crop));
    }
  }
  return batch;
}

CropBatch crop_batch(const std::vector<SoundClip>& clips, const IngestConfig& config,
                     std::uint64_t seed) {
  std::vector<const SoundClip*> ptrs;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ptrs.push_back(&clips[i]);
    ids.push_back(i);
  }
  return crop_batch(ptrs, ids, config, seed);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> entries;
  const auto base = manifest.parent_path();
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ManifestEntry e;
    const auto tab = line.find('\t');
    std::filesystem::path p = line.substr(0, tab);
    e.path = p.is_absolute() ? p : base / p;
    if (tab != std::string::npos) e.label = line.substr(tab + 1);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace wavjepa
