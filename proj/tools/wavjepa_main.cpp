// wavjepa: command-line front end.
//
//   pretrain      train a model from a manifest of WAV files
//   mix-scenes    render two-channel scenes from a scene manifest
//   sampler-stats Monte-Carlo statistics of the block sampler
//   probe         linear probe on a synthetic task using a checkpoint
//   score         generalizability score from a score table
//   inspect-ckpt  print checkpoint metadata
//   synth-corpus  write a synthetic tone corpus and its manifest

#include "wavjepa/audio.hpp"
#include "wavjepa/block_sampler.hpp"
#include "wavjepa/config.hpp"
#include "wavjepa/errors.hpp"
#include "wavjepa/eval.hpp"
#include "wavjepa/nat_scenes.hpp"
#include "wavjepa/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wavjepa;

namespace {

void fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

void check_device() {
  const char* dev = std::getenv("WAVJEPA_DEVICE");
  if (dev && std::string(dev) != "cpu" && std::string(dev) != "") {
    throw InvalidArgument(std::string("WAVJEPA_DEVICE=") + dev + " is not available; only cpu is supported");
  }
}

std::vector<SoundClip> load_corpus(const fs::path& manifest, int rate) {
  std::vector<SoundClip> clips;
  for (const auto& entry : read_manifest(manifest)) {
    SoundClip c = load_clip(entry.path);
    clips.push_back(resample(c, rate));
  }
  if (clips.empty()) throw InvalidArgument("manifest " + manifest.string() + " lists no clips");
  return clips;
}

std::string ckpt_name(std::int64_t step) {
  std::ostringstream s;
  s << "ckpt-" << std::setw(8) << std::setfill('0') << step << ".bin";
  return s.str();
}

/// Keeps metrics lines up to and including `step`, so a resumed run extends
/// the log exactly where the checkpoint left it.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<std::int64_t>() <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

struct PretrainArgs {
  std::string config;
  std::string profile = "tiny";
  std::string manifest;
  std::string out;
  std::string resume;
  std::int64_t steps = -1;
  long long seed = -1;
};

int run_pretrain(const PretrainArgs& a, int threads) {
  check_device();
  RunConfig config;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    config = config_from_json(json::parse(resume->config_json));
    if (!a.config.empty()) {
      const RunConfig given = load_config(a.config, a.profile);
      if (canonical_json(given) != canonical_json(config)) {
        throw ConfigError("--config differs from the configuration stored in the checkpoint");
      }
    }
  } else {
    config = a.config.empty() ? profile_defaults(a.profile) : load_config(a.config, a.profile);
    if (a.seed >= 0) config.setup.train.seed = static_cast<std::uint64_t>(a.seed);
  }
  const std::string config_text = canonical_json(config);

  const fs::path out = a.out;
  fs::create_directories(out);
  std::ofstream(out / "config.json") << to_json(config).dump(2) << "\n";

  Trainer trainer(config.setup, load_corpus(a.manifest, config.setup.ingest.target_rate), threads);
  const fs::path metrics_path = out / "metrics.jsonl";
  if (resume) {
    trainer.restore(*resume);
    truncate_metrics(metrics_path, resume->state.step);
  } else {
    std::ofstream(metrics_path, std::ios::trunc);
  }
  std::ofstream metrics(metrics_path, std::ios::app);

  const std::int64_t until = a.steps >= 0 ? a.steps : config.setup.train.total_steps;
  const std::int64_t every = config.setup.train.checkpoint_every;
  StepMetrics last;
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(until, [&](const StepMetrics& m) {
    metrics << metrics_line(m) << "\n";
    last = m;
    if (every > 0 && m.step % every == 0) save_checkpoint(out / ckpt_name(m.step), trainer.checkpoint(config_text));
  });
  metrics.flush();
  const fs::path final_ckpt = out / ckpt_name(trainer.state().step);
  save_checkpoint(final_ckpt, trainer.checkpoint(config_text));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << json{{"step", trainer.state().step},
                    {"loss", last.loss},
                    {"checkpoint", final_ckpt.string()},
                    {"metrics", metrics_path.string()},
                    {"seconds", secs}}
                   .dump()
            << std::endl;
  return 0;
}

struct StatsArgs {
  int n = 200;
  double p_context = 0.065;
  double p_target = 0.025;
  int m = 10;
  int m_context = -1;
  int m_target = -1;
  double min_context = 0.10;
  int trials = 10000;
  std::uint64_t seed = 0;
};

int run_sampler_stats(const StatsArgs& a) {
  SamplerConfig cfg;
  cfg.p_context = a.p_context;
  cfg.p_target = a.p_target;
  cfg.m_context = a.m_context > 0 ? a.m_context : a.m;
  cfg.m_target = a.m_target > 0 ? a.m_target : a.m;
  cfg.min_context_fraction = a.min_context;
  const CoverageStats stats = coverage_stats(cfg, a.n, a.trials, a.seed);
  std::cout << to_json(stats, cfg).dump() << std::endl;
  return 0;
}

struct ProbeArgs {
  std::string ckpt;
  std::string task = "tone4";
  std::uint64_t seed = 0;
  bool random_init = false;
};

int run_probe(const ProbeArgs& a, int threads) {
  check_device();
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const RunConfig config = config_from_json(json::parse(ckpt.config_json));
  const JepaModel model(config.setup.model);
  ParamGroups params = a.random_init ? model.init(ckpt.seed).params : ckpt.state.params;
  const ProbeTask task = make_task(a.task, a.seed, config.eval.task);
  const Matrix features = extract_features(model, params, task.clips, threads);
  const ProbeResult r = train_probe(features, task.labels, task.is_train,
                                    static_cast<int>(task.classes.size()), config.eval.probe);
  std::cout << json{{"task", a.task},
                    {"seed", a.seed},
                    {"random_init", a.random_init},
                    {"accuracy", r.test_accuracy},
                    {"train_accuracy", r.train_accuracy},
                    {"iterations", r.iterations},
                    {"converged", r.converged},
                    {"classes", task.classes.size()},
                    {"features", features.cols()}}
                   .dump()
            << std::endl;
  return 0;
}

int run_inspect(const std::string& path) {
  const Checkpoint c = load_checkpoint(path);
  auto sizes = [](const ParamGroups& g) {
    return json{{"wave", g.wave.size()}, {"context", g.context.size()}, {"predictor", g.predictor.size()}};
  };
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << c.config_hash;
  const auto& p = c.state.params;
  std::cout << json{{"step", c.state.step},
                    {"seed", c.seed},
                    {"config_hash", hash.str()},
                    {"parameters", sizes(p)},
                    {"target", c.state.target.size()},
                    {"total", p.wave.size() + p.context.size() + p.predictor.size()},
                    {"config", json::parse(c.config_json)}}
                   .dump()
            << std::endl;
  return 0;
}

int run_synth_corpus(const fs::path& out, int clips, double seconds, std::uint64_t seed) {
  if (clips < 4 || clips % 4 != 0) throw InvalidArgument("--clips must be a positive multiple of 4");
  TaskOptions opt;
  opt.clips_per_class = clips / 4;
  opt.seconds = seconds;
  opt.train_fraction = 0.5;
  const ProbeTask task = make_task("tone4", seed, opt);
  fs::create_directories(out);
  std::ofstream manifest(out / "manifest.txt");
  for (std::size_t i = 0; i < task.clips.size(); ++i) {
    std::ostringstream name;
    name << "clip-" << std::setw(4) << std::setfill('0') << i << ".wav";
    save_clip(out / name.str(), task.clips[i], WavEncoding::float32);
    manifest << name.str() << "\t" << task.classes[static_cast<std::size_t>(task.labels[i])] << "\n";
  }
  std::cout << json{{"clips", task.clips.size()}, {"manifest", (out / "manifest.txt").string()}}.dump()
            << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavjepa: self-supervised waveform representation learning"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker thread cap (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  PretrainArgs pre;
  auto* pretrain = app.add_subcommand("pretrain", "Train a model");
  pretrain->add_option("--config", pre.config, "Run config (.toml or .json)");
  pretrain->add_option("--profile", pre.profile, "Profile supplying defaults")
      ->check(CLI::IsMember(profile_names()));
  pretrain->add_option("--manifest", pre.manifest, "Newline-delimited WAV paths")->required();
  pretrain->add_option("--out", pre.out, "Output directory")->required();
  pretrain->add_option("--resume", pre.resume, "Continue from a checkpoint");
  pretrain->add_option("--steps", pre.steps, "Stop after this many completed steps");
  pretrain->add_option("--seed", pre.seed, "Override trainer.seed");

  std::string scene_manifest, scene_out;
  auto* mix = app.add_subcommand("mix-scenes", "Render two-channel scenes");
  mix->add_option("--manifest", scene_manifest, "Scene manifest (TSV)")->required();
  mix->add_option("--out", scene_out, "Output directory")->required();

  StatsArgs st;
  auto* stats = app.add_subcommand("sampler-stats", "Block sampler statistics");
  stats->add_option("--n", st.n, "Frame count");
  stats->add_option("--p-context", st.p_context, "Context start probability");
  stats->add_option("--p-target", st.p_target, "Target start probability");
  stats->add_option("--m", st.m, "Block length for both block kinds");
  stats->add_option("--m-context", st.m_context, "Context block length");
  stats->add_option("--m-target", st.m_target, "Target block length");
  stats->add_option("--min-context", st.min_context, "Context floor fraction");
  stats->add_option("--trials", st.trials, "Number of draws");
  stats->add_option("--seed", st.seed, "Seed");

  ProbeArgs pr;
  auto* probe = app.add_subcommand("probe", "Linear probe on a synthetic task");
  probe->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  probe->add_option("--task", pr.task, "Task name")->check(CLI::IsMember(task_names()));
  probe->add_option("--seed", pr.seed, "Task seed");
  probe->add_flag("--random-init", pr.random_init, "Use freshly initialised parameters of the same model");

  std::string table_path, model_id, baseline;
  auto* score = app.add_subcommand("score", "Generalizability score");
  score->add_option("--table", table_path, "CSV with header model,task,score")->required();
  score->add_option("--model", model_id, "Model id")->required();
  score->add_option("--baseline", baseline, "Baseline model (default: first row)");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-ckpt", "Print checkpoint metadata");
  inspect->add_option("ckpt", inspect_path, "Checkpoint")->required();

  std::string corpus_out;
  int corpus_clips = 64;
  double corpus_seconds = 2.0;
  std::uint64_t corpus_seed = 0;
  auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic tone corpus");
  synth->add_option("--out", corpus_out, "Output directory")->required();
  synth->add_option("--clips", corpus_clips, "Clip count (multiple of 4)");
  synth->add_option("--seconds", corpus_seconds, "Clip duration");
  synth->add_option("--seed", corpus_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*pretrain) return run_pretrain(pre, threads);
    if (*mix) {
      std::cout << mix_scenes(scene_manifest, scene_out).dump() << std::endl;
      return 0;
    }
    if (*stats) return run_sampler_stats(st);
    if (*probe) return run_probe(pr, threads);
    if (*score) {
      const ScoreTable table = read_score_table(fs::path(table_path), baseline);
      std::cout << to_json(generalizability_score(table, model_id)).dump() << std::endl;
      return 0;
    }
    if (*inspect) return run_inspect(inspect_path);
    if (*synth) return run_synth_corpus(corpus_out, corpus_clips, corpus_seconds, corpus_seed);
  } catch (const ConfigValidationError& e) {
    std::cerr << json{{"error", e.kind()}, {"message", "invalid configuration"}, {"violations", e.violations()}}.dump()
              << std::endl;
    return 1;
  } catch (const Error& e) {
    fail(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail("internal_error", e.what());
    return 1;
  }
  return 2;
}
