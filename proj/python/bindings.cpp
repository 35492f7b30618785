#include "wavjepa/block_sampler.hpp"
#include "wavjepa/config.hpp"
#include "wavjepa/errors.hpp"
#include "wavjepa/eval.hpp"
#include "wavjepa/jepa.hpp"
#include "wavjepa/nat_scenes.hpp"
#include "wavjepa/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace wavjepa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw InvalidArgument("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

// Rows of a (channels, samples) array.
std::vector<std::vector<double>> to_rows(const Array& a) {
  if (a.ndim() == 1) return {to_vector(a)};
  if (a.ndim() != 2) throw InvalidArgument("expected a 1-D or 2-D array");
  std::vector<std::vector<double>> rows(a.shape(0));
  for (py::ssize_t r = 0; r < a.shape(0); ++r) rows[r].assign(a.data(r, 0), a.data(r, 0) + a.shape(1));
  return rows;
}

Array from_rows(const std::vector<std::vector<double>>& rows) {
  const py::ssize_t n = rows.empty() ? 0 : static_cast<py::ssize_t>(rows[0].size());
  Array out({static_cast<py::ssize_t>(rows.size()), n});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (py::ssize_t i = 0; i < n; ++i) m(r, i) = rows[r][i];
  }
  return out;
}

Array from_vector(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

SamplerConfig sampler_from(const py::dict& d) {
  SamplerConfig c;
  for (const auto& [k, v] : d) {
    const auto key = k.cast<std::string>();
    if (key == "p_context") c.p_context = v.cast<double>();
    else if (key == "p_target") c.p_target = v.cast<double>();
    else if (key == "m_context") c.m_context = v.cast<int>();
    else if (key == "m_target") c.m_target = v.cast<int>();
    else if (key == "min_context_fraction") c.min_context_fraction = v.cast<double>();
    else if (key == "max_rounds") c.max_rounds = v.cast<int>();
    else throw InvalidArgument("unknown sampler field: " + key);
  }
  return c;
}

py::dict sampling_dict(const BlockSampling& s) {
  py::dict d;
  d["context"] = s.context;
  d["target_blocks"] = s.target_blocks;
  d["frames"] = s.frames;
  d["channels"] = s.channels;
  return d;
}

ImpulseResponse brir_from(const Array& a) {
  ImpulseResponse ir;
  ir.taps = to_rows(a);
  if (ir.taps.size() == 1) ir.taps.push_back(ir.taps[0]);
  return ir;
}

}  // namespace

PYBIND11_MODULE(_wavjepa, m) {
  auto error = py::register_exception<Error>(m, "Error", PyExc_ValueError);
  (void)error;

  m.def("profile_names", &profile_names);

  m.def(
      "sample_blocks",
      [](int frames, std::uint64_t seed, const py::kwargs& kw) {
        return sampling_dict(sample_blocks(frames, sampler_from(kw), seed));
      },
      py::arg("frames"), py::arg("seed"));

  m.def(
      "sample_blocks_shared",
      [](int frames, int channels, std::uint64_t seed, const py::kwargs& kw) {
        return sampling_dict(sample_blocks_shared(frames, channels, sampler_from(kw), seed));
      },
      py::arg("frames"), py::arg("channels"), py::arg("seed"));

  m.def("coverage_stats_json", [](int frames, int trials, std::uint64_t seed, const py::dict& sampler) {
    const SamplerConfig c = sampler_from(sampler);
    CoverageStats s;
    {
      py::gil_scoped_release release;
      s = coverage_stats(c, frames, trials, seed);
    }
    return to_json(s, c).dump();
  });

  m.def(
      "ema_tau",
      [](std::int64_t step, double tau0, double tau_e, std::int64_t tau_n) {
        EmaSchedule e{tau0, tau_e, tau_n};
        e.validate();
        return e.tau_at(step);
      },
      py::arg("step"), py::arg("tau0") = 0.999, py::arg("tau_e") = 0.99999, py::arg("tau_n") = 100000);

  m.def(
      "lr_at",
      [](std::int64_t step, const std::string& profile) {
        return lr_at(step, profile_defaults(profile).setup.train);
      },
      py::arg("step"), py::arg("profile") = "paper");

  m.def("fft_convolve", [](const Array& a, const Array& b) {
    return from_vector(fft_convolve(to_vector(a), to_vector(b)));
  });
  m.def("direct_convolve", [](const Array& a, const Array& b) {
    return from_vector(direct_convolve(to_vector(a), to_vector(b)));
  });

  m.def(
      "mix_scene",
      [](const Array& source, const Array& source_brir, const std::vector<Array>& noises,
         const std::vector<Array>& noise_brirs, double snr_db, bool diffuse, int sample_rate) {
        SceneSpec spec;
        spec.source.samples = to_rows(source);
        spec.source.sample_rate = sample_rate;
        spec.source_brir = brir_from(source_brir);
        spec.source_brir.sample_rate = sample_rate;
        for (const auto& n : noises) {
          SoundClip c;
          c.samples = to_rows(n);
          c.sample_rate = sample_rate;
          spec.noises.push_back(std::move(c));
        }
        for (const auto& b : noise_brirs) {
          spec.noise_brirs.push_back(brir_from(b));
          spec.noise_brirs.back().sample_rate = sample_rate;
        }
        spec.snr_db = snr_db;
        spec.diffuse = diffuse;
        const Scene s = mix_scene(spec);
        return py::make_tuple(from_rows(s.mix.samples), s.gain, s.achieved_snr_db);
      },
      py::arg("source"), py::arg("source_brir"), py::arg("noises"), py::arg("noise_brirs"),
      py::arg("snr_db"), py::arg("diffuse") = false, py::arg("sample_rate") = 16000,
      "Returns (mix of shape (2, samples), noise gain, achieved SNR in dB).");

  m.def(
      "generalizability_score_json",
      [](const std::string& table, const std::string& model, const std::string& baseline) {
        return to_json(generalizability_score(read_score_table(table, baseline), model)).dump();
      });

  m.def("config_json", [](const std::string& text, bool is_json, const std::string& profile) {
    return canonical_json(validate_config(text, is_json, profile));
  });

  m.def(
      "pretrain_losses",
      [](const std::vector<Array>& clips, int steps, std::uint64_t seed, const std::string& profile,
         int sample_rate) {
        TrainSetup setup = profile_defaults(profile).setup;
        setup.train.seed = seed;
        std::vector<SoundClip> corpus;
        for (const auto& c : clips) corpus.push_back(SoundClip::mono(to_vector(c), sample_rate));
        std::vector<double> losses;
        {
          py::gil_scoped_release release;
          Trainer trainer(setup, std::move(corpus));
          trainer.run(steps, [&](const StepMetrics& s) { losses.push_back(s.loss); });
        }
        return losses;
      },
      py::arg("clips"), py::arg("steps"), py::arg("seed") = 0, py::arg("profile") = "tiny",
      py::arg("sample_rate") = 16000, "Trains from scratch on mono clips and returns the per-step losses.");
}
