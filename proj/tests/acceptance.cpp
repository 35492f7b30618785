// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "wavjepa/block_sampler.hpp"
#include "wavjepa/config.hpp"
#include "wavjepa/eval.hpp"
#include "wavjepa/nat_scenes.hpp"
#include "wavjepa/trainer.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace wavjepa;
using namespace wavjepa::fixtures;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome sampler_statistics() {
  const auto t0 = Clock::now();
  SamplerConfig cfg;
  const CoverageStats s = coverage_stats(cfg, 200, 10000, 2024);
  const double secs = seconds_since(t0);
  const double cover = 100.0 * s.target_fraction.mean;
  const double blocks = s.block_count.mean;
  const bool ok = cover >= 21.2 && cover <= 24.2 && blocks >= 3.5 && blocks <= 5.5 && s.failures == 0 &&
                  s.floor_violations == 0 && s.min_context_fraction_seen >= 0.1 && s.overlap_violations == 0 &&
                  secs < 10.0;
  return {ok, fmt("coverage %.2f%% [%.1f, %.1f], blocks %.2f, min context %.1f%%, overlaps %d, %.2fs", cover,
                  100.0 * s.target_fraction.lo, 100.0 * s.target_fraction.hi, blocks,
                  100.0 * s.min_context_fraction_seen, s.overlap_violations, secs)};
}

Outcome ablation_rows() {
  const double ps[3] = {0.015, 0.020, 0.030};
  const double want[3] = {14.3, 18.7, 26.6};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    SamplerConfig cfg;
    cfg.p_target = ps[i];
    const double got = 100.0 * coverage_stats(cfg, 200, 10000, 7 + i).target_fraction.mean;
    ok = ok && std::abs(got - want[i]) <= 1.5;
    detail += fmt("p=%.3f: %.2f%% (ref %.1f)%s", ps[i], got, want[i], i < 2 ? "; " : "");
  }
  return {ok, detail};
}

Outcome ema_schedule() {
  const EmaSchedule e;
  const double mid = e.tau_at(50000);
  bool flat = true;
  for (std::int64_t s = 100000; s <= 1000000; s += 997) flat = flat && e.tau_at(s) == 0.99999;
  const bool ok = e.tau_at(0) == 0.999 && e.tau_at(100000) == 0.99999 && std::abs(mid - 0.999495) <= 1e-15 && flat;
  return {ok, fmt("tau(0)=%.6f tau(50k)=%.9f tau(100k)=%.6f, flat after 100k: %s", e.tau_at(0), mid,
                  e.tau_at(100000), flat ? "yes" : "no")};
}

Outcome lr_schedule() {
  const TrainConfig c;
  const double slope = c.peak_lr / static_cast<double>(c.warmup_steps);
  double worst = 0.0;
  for (int i = 1; i <= 1000; ++i) {
    const std::int64_t a = c.total_steps * (i - 1) / 1000, b = c.total_steps * i / 1000;
    const double jump = std::abs(lr_at(b, c) - lr_at(a, c));
    worst = std::max(worst, jump / (slope * static_cast<double>(b - a)));
  }
  const bool ok = lr_at(0, c) == 0.0 && lr_at(c.warmup_steps, c) == 2e-4 && lr_at(c.total_steps, c) == 0.0 &&
                  worst <= 1.0 + 1e-12;
  return {ok, fmt("lr(0)=%g lr(warmup)=%g lr(total)=%g, worst grid jump %.3f of the warmup slope bound",
                  lr_at(0, c), lr_at(c.warmup_steps, c), lr_at(c.total_steps, c), worst)};
}

Outcome gradient_check_criterion() {
  const auto t0 = Clock::now();
  JepaModel model(tiny_model());
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const GradCheck g = gradient_check(model, seed, 20, 250);
    worst = std::max(worst, g.max_rel_error);
    checked += g.checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0,
          fmt("max relative error %.2e over %zu coordinates, 5 seeds, %.1fs", worst, checked, secs)};
}

Outcome masking_no_leak() {
  JepaModel model(tiny_model());
  const JepaState st = model.init(11);
  const auto x = tone_plus_noise(samples_for_frames(60), 350.0, 11);
  const Matrix w = model.add_positions(model.embed(st.params.wave, {x}, nullptr));
  SamplerConfig sc;
  sc.m_context = 5;
  sc.m_target = 5;
  const BlockSampling s = sample_blocks(60, sc, 5);
  const Matrix z = model.encode_context(st.params.context, w, s, nullptr);
  std::set<int> ctx(s.context.begin(), s.context.end());
  Rng rng = make_rng(12);
  std::normal_distribution<double> g(0.0, 10.0);
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix w2 = w;
    for (int i = 0; i < 60; ++i) {
      if (ctx.count(i)) continue;
      for (Eigen::Index j = 0; j < w2.cols(); ++j) w2(i, j) += g(rng);
    }
    if (model.encode_context(st.params.context, w2, s, nullptr) != z) ++changed;
  }
  return {changed == 0, fmt("%d of 100 perturbations changed the context encoding (%zu context rows of 60)",
                            changed, s.context.size())};
}

Outcome stop_gradient() {
  // Targets do not move when the online context encoder moves. The wave
  // encoder is shared, so it is held fixed here.
  JepaModel model(tiny_model());
  JepaState st = model.init(21);
  for (double& v : st.target) v *= 0.9;
  const auto x = tone_plus_noise(samples_for_frames(30), 440.0, 21);
  const Matrix t0 = model.instance_targets(st, {x});
  JepaState moved = st;
  for (double& v : moved.params.context) v += 0.05;
  const bool targets_fixed = model.instance_targets(moved, {x}) == t0;

  // Finite differences of the full instance loss (targets recomputed from the
  // EMA weights each call) agree with the gradient that treats targets as
  // constants; any path through the targets would break this.
  SamplerConfig sc;
  sc.m_context = 3;
  sc.m_target = 4;
  sc.p_target = 0.15;
  sc.p_context = 0.2;
  BlockSampling s;
  for (std::uint64_t k = 0; s.target_blocks.empty(); ++k) s = sample_blocks(30, sc, 100 + k);
  ParamGroups grad = st.params;
  grad.set_zero();
  model.instance_loss(st, {x}, s, &grad);
  double worst = 0.0;
  JepaState probe = st;
  for (std::size_t i = 0; i < probe.params.context.size(); i += 37) {
    const double keep = probe.params.context[i];
    probe.params.context[i] = keep + 1e-5;
    const double up = model.instance_loss(probe, {x}, s, nullptr);
    probe.params.context[i] = keep - 1e-5;
    const double down = model.instance_loss(probe, {x}, s, nullptr);
    probe.params.context[i] = keep;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(num - grad.context[i]) /
                                std::max({std::abs(num), std::abs(grad.context[i]), 1e-6}));
  }

  // Over 100 optimiser steps the target weights follow the EMA rule exactly.
  TrainSetup setup = profile_defaults("tiny").setup;
  setup.train.total_steps = 100;
  setup.train.seed = 3;
  setup.ingest.crop_factor = setup.train.crop_factor = 2;
  std::vector<SoundClip> clips;
  for (int i = 0; i < 4; ++i) clips.push_back(SoundClip::mono(tone_plus_noise(20000, 250.0 + 80 * i, i), 16000));
  Trainer trainer(setup, clips);
  std::size_t mismatches = 0;
  for (int step = 0; step < 100; ++step) {
    const std::vector<double> before = trainer.state().target;
    const double tau = setup.ema.tau_at(trainer.state().step);
    trainer.step();
    const auto& after = trainer.state().target;
    const auto& theta = trainer.state().params.context;
    for (std::size_t k = 0; k < after.size(); ++k) {
      if (after[k] != tau * before[k] + (1.0 - tau) * theta[k]) ++mismatches;
    }
  }
  const bool ok = targets_fixed && worst < 1e-3 && mismatches == 0;
  return {ok, fmt("targets invariant to online weights: %s; detached-target gradient error %.1e; "
                  "EMA mismatches over 100 steps: %zu",
                  targets_fixed ? "yes" : "no", worst, mismatches)};
}

Outcome top_k_targets() {
  ModelConfig cfg = tiny_model();
  cfg.transformer.depth = 4;
  cfg.targets.top_k = 4;
  JepaModel model(cfg);
  double worst_mean = 0.0, worst_diff = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const JepaState st = model.init(seed);
    const auto x = tone_plus_noise(samples_for_frames(50), 200.0 + 100.0 * seed, seed);
    const Matrix w = model.add_positions(model.embed(st.params.wave, {x}, nullptr));
    const Matrix k1 = model.build_targets(st.target, w, 1);
    worst_mean = std::max(worst_mean, k1.colwise().mean().cwiseAbs().maxCoeff());
    const auto layers = model.layer_outputs(st.target, w);
    Matrix mean = Matrix::Zero(w.rows(), w.cols());
    for (const auto& l : layers) mean += instance_norm_time(l);
    mean /= static_cast<double>(layers.size());
    worst_diff = std::max(worst_diff, (model.build_targets(st.target, w, 4) - mean).cwiseAbs().maxCoeff());
  }
  return {worst_mean < 1e-5 && worst_diff < 1e-6,
          fmt("K=1 max |time mean| %.1e; K=depth vs mean of normalised layers %.1e", worst_mean, worst_diff)};
}

Outcome scene_mixing() {
  double worst_snr = 0.0, worst_conv = 0.0;
  Rng rng = make_rng(31);
  std::uniform_real_distribution<double> snr(5.0, 40.0), rt(0.1, 0.6);
  for (int i = 0; i < 50; ++i) {
    SceneSpec spec;
    spec.source = SoundClip::mono(tone_plus_noise(16000, 150.0 + 10.0 * i, 500 + i), 16000);
    spec.source_brir = decay_brir(600 + i, rt(rng));
    spec.diffuse = i % 2 == 1;
    const int n_noise = spec.diffuse ? 3 + i % 3 : 1;
    for (int k = 0; k < n_noise; ++k) {
      spec.noises.push_back(white_noise_clip(12000 + 3000 * k, 700 + 10 * i + k));
      spec.noise_brirs.push_back(decay_brir(800 + 10 * i + k, rt(rng)));
    }
    spec.snr_db = snr(rng);
    const Scene sc = mix_scene(spec);
    const SoundClip t = convolve_brir(spec.source, spec.source_brir);
    SoundClip noise = sc.mix;
    for (int e = 0; e < 2; ++e) {
      for (std::size_t n = 0; n < noise.length(); ++n) noise.samples[e][n] -= t.samples[e][n];
    }
    const double measured = 20.0 * std::log10(joint_rms(t) / joint_rms(noise));
    worst_snr = std::max(worst_snr, std::abs(measured - spec.snr_db));

    const auto fast = fft_convolve(spec.source.samples[0], spec.source_brir.taps[0]);
    const auto slow = direct_convolve(spec.source.samples[0], spec.source_brir.taps[0]);
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < fast.size(); ++n) {
      num = std::max(num, std::abs(fast[n] - slow[n]));
      den = std::max(den, std::abs(slow[n]));
    }
    worst_conv = std::max(worst_conv, num / den);
  }
  return {worst_snr <= 0.01 && worst_conv <= 1e-9,
          fmt("worst SNR error %.2e dB over 50 scenes; FFT vs direct relative error %.1e", worst_snr, worst_conv)};
}

Outcome shared_sampling() {
  SamplerConfig cfg;
  int violations = 0;
  const int n = 200;
  for (int d = 0; d < 1000; ++d) {
    const BlockSampling s = sample_blocks_shared(n, 2, cfg, 9000 + d);
    if (!s.check().empty()) ++violations;
    std::set<int> ctx(s.context.begin(), s.context.end());
    for (int i : s.context) {
      if (i < n && !ctx.count(i + n)) ++violations;
    }
    const auto tu = s.target_union();
    std::set<int> tgt(tu.begin(), tu.end());
    for (int i : tu) {
      if (i < n && !tgt.count(i + n)) ++violations;
    }
  }
  return {violations == 0, fmt("%d mirror violations over 1000 draws", violations)};
}

Outcome generalizability() {
  const ScoreTable t = read_score_table(fs::path(WAVJEPA_TEST_DATA) / "hear_scores.csv");
  std::ostringstream all_sota;
  all_sota << "model,task,score\n";
  for (const auto& task : t.tasks) {
    all_sota << "base," << task << ",1\n";
    all_sota << "top," << task << ",2\n";
  }
  std::istringstream in(all_sota.str());
  const ScoreTable synthetic = read_score_table(in);
  const double base = generalizability_score(t, t.baseline_id).value;
  const double top = generalizability_score(synthetic, "top").value;

  const auto hubert = generalizability_score(t, "HuBERT-B-AudioSet");
  double dcase = -1.0;
  for (const auto& c : hubert.tasks) {
    if (c.task == "DCASE") dcase = c.ratio;
  }
  const double hand = (86.2 - 7.6) / (93.9 - 7.6);

  // Every ratio recomputed by hand from the raw table.
  double worst = 0.0;
  int clamped_nonzero = 0;
  for (const auto& m : t.models) {
    const auto s = generalizability_score(t, m);
    for (const auto& c : s.tasks) {
      const double b = t.score(t.baseline_id, c.task), best = t.sota(c.task), mine = t.score(m, c.task);
      const double expect = best <= b ? 0.0 : std::clamp((mine - b) / (best - b), 0.0, 1.0);
      worst = std::max(worst, std::abs(expect - c.ratio));
      if ((c.task == "NS" || c.task == "BO" || c.task == "Mri-T") && c.ratio != 0.0) ++clamped_nonzero;
    }
  }
  const bool ok = base == 0.0 && top == 100.0 && std::abs(dcase - hand) < 1e-6 && std::abs(dcase - 0.9108) < 1e-4 &&
                  worst < 1e-6 && clamped_nonzero == 0 && t.tasks.size() == 11 && t.models.size() == 14;
  return {ok, fmt("baseline %.1f, all-SOTA %.1f, DCASE HuBERT-B-AudioSet %.6f (hand %.6f), worst ratio error %.1e, "
                  "nonzero NS/BO/Mri-T contributions %d, WavJEPA %.2f",
                  base, top, dcase, hand, worst, clamped_nonzero,
                  generalizability_score(t, "WavJEPA-B-AudioSet").value)};
}

Outcome learning_smoke() {
  const RunConfig cfg = profile_defaults("tiny");
  std::vector<double> gaps;
  int loss_drops = 0;
  double worst_secs = 0.0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TaskOptions corpus_opt;
    corpus_opt.clips_per_class = 16;  // 64 clips
    corpus_opt.seconds = 2.0;
    const ProbeTask corpus = make_task("tone4", 1000 + seed, corpus_opt);
    TrainSetup setup = cfg.setup;
    setup.train.seed = seed;
    const auto t0 = Clock::now();
    Trainer trainer(setup, corpus.clips);
    std::vector<double> losses;
    trainer.run(setup.train.total_steps, [&](const StepMetrics& m) { losses.push_back(m.loss); });
    worst_secs = std::max(worst_secs, seconds_since(t0));
    const double head = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100.0;
    const double tail = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100.0;
    if (tail < head) ++loss_drops;

    const ProbeTask probe = make_task("tone4", seed, cfg.eval.task);
    const JepaModel& model = trainer.model();
    auto accuracy = [&](const ParamGroups& p) {
      const Matrix f = extract_features(model, p, probe.clips);
      return train_probe(f, probe.labels, probe.is_train, static_cast<int>(probe.classes.size()), cfg.eval.probe)
          .test_accuracy;
    };
    const double pre = accuracy(trainer.state().params);
    const double rnd = accuracy(model.init(seed).params);
    gaps.push_back(100.0 * (pre - rnd));
    detail += fmt("seed %d: loss %.3f->%.3f, probe %.1f vs %.1f; ", static_cast<int>(seed), head, tail, 100 * pre,
                  100 * rnd);
  }
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double median_gap = sorted[1];
  detail += fmt("median gap %.1f points, slowest run %.0fs", median_gap, worst_secs);
  return {loss_drops >= 2 && median_gap > 10.0 && worst_secs <= 600.0, detail};
}

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return status;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "wavjepa_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = WAVJEPA_CLI;
  const std::string manifest = (dir / "corpus" / "manifest.txt").string();
  bool ran = shell(cli + " synth-corpus --out " + (dir / "corpus").string() + " --clips 16 --seconds 2") == 0;
  auto pretrain = [&](const std::string& out, int steps, int threads, const std::string& extra = "") {
    return shell(cli + " --threads " + std::to_string(threads) + " pretrain --profile tiny --manifest " + manifest +
                 " --out " + (dir / out).string() + " --steps " + std::to_string(steps) + " " + extra) == 0;
  };
  // The second run uses a different thread cap; results must not depend on it.
  ran = ran && pretrain("a", 40, 1) && pretrain("b", 40, 2) && pretrain("c", 20, 1);
  ran = ran && pretrain("c", 40, 1, "--resume " + (dir / "c" / "ckpt-00000020.bin").string());
  if (!ran) return {false, "a pretrain invocation failed"};
  const std::string ma = slurp(dir / "a" / "metrics.jsonl");
  const bool same_logs = !ma.empty() && ma == slurp(dir / "b" / "metrics.jsonl");
  const bool resume_logs = ma == slurp(dir / "c" / "metrics.jsonl");
  const std::string ca = slurp(dir / "a" / "ckpt-00000040.bin");
  const bool resume_ckpt = !ca.empty() && ca == slurp(dir / "c" / "ckpt-00000040.bin");
  return {same_logs && resume_logs && resume_ckpt,
          fmt("identical runs byte-equal logs: %s; resumed log equal: %s; resumed checkpoint equal: %s",
              same_logs ? "yes" : "no", resume_logs ? "yes" : "no", resume_ckpt ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sampler statistics", sampler_statistics},
      {"ablation coverage rows", ablation_rows},
      {"EMA schedule", ema_schedule},
      {"LR schedule", lr_schedule},
      {"gradient correctness", gradient_check_criterion},
      {"masking no-leak", masking_no_leak},
      {"stop-gradient", stop_gradient},
      {"top-K targets", top_k_targets},
      {"scene mixing", scene_mixing},
      {"shared sampling", shared_sampling},
      {"s(m) metric", generalizability},
      {"learning smoke test", learning_smoke},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
