#include "wavjepa/eval.hpp"

#include "wavjepa/errors.hpp"
#include "wavjepa/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

namespace wavjepa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  return out;
}

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void add_white_noise(std::vector<double>& x, double level, Rng& rng) {
  std::normal_distribution<double> n(0.0, level);
  for (double& v : x) v += n(rng);
}

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(std::max<std::size_t>(1, x.size())));
}

/// Random noise with a 1/f^alpha power spectrum, built by summing octave
/// spaced sinusoid banks (no FFT needed at these sizes).
std::vector<double> colored_noise(std::size_t len, int rate, double alpha, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(len, 0.0);
  const int partials = 96;
  const double fmin = 40.0;
  const double fmax = 0.45 * rate;
  for (int k = 0; k < partials; ++k) {
    // Log-uniform frequencies: density ~ 1/f, so amplitude f^((1-alpha)/2)
    // gives a 1/f^alpha power spectrum.
    const double f = fmin * std::pow(fmax / fmin, u(rng));
    const double amp = std::pow(f / fmin, (1.0 - alpha) / 2.0);
    const double phase = kTwoPi * u(rng);
    for (std::size_t t = 0; t < len; ++t) {
      x[t] += amp * std::sin(kTwoPi * f * static_cast<double>(t) / rate + phase);
    }
  }
  const double r = rms(x);
  if (r > 0.0) {
    for (double& v : x) v /= r;
  }
  return x;
}

constexpr double kToneSnrLowDb = -5.0;
constexpr double kToneSnrHighDb = 5.0;

// On/off gate with segment lengths in [0.1, 0.3] s and 5 ms linear ramps.
std::vector<double> burst_envelope(std::size_t len, int rate, Rng& rng) {
  std::uniform_real_distribution<double> seg(0.1 * rate, 0.3 * rate);
  std::bernoulli_distribution start_on(0.5);
  const double ramp = 0.005 * rate;
  std::vector<double> env(len, 0.0);
  bool on = start_on(rng);
  std::size_t t = 0;
  while (t < len) {
    const std::size_t n = std::min(len - t, static_cast<std::size_t>(seg(rng)));
    if (on) {
      for (std::size_t i = 0; i < n; ++i) {
        const double edge = std::min(static_cast<double>(i), static_cast<double>(n - 1 - i));
        env[t + i] = std::min(1.0, edge / ramp);
      }
    }
    t += n;
    on = !on;
  }
  return env;
}

std::vector<double> tone4_clip(int label, std::size_t len, int rate, Rng& rng) {
  static constexpr double kFreqs[4] = {220.0, 330.0, 495.0, 742.5};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f = kFreqs[label] * (1.0 + 0.03 * (2.0 * u(rng) - 1.0));
  const double amp = 0.3 + 0.7 * u(rng);
  const double phase = kTwoPi * u(rng);
  const std::vector<double> env = burst_envelope(len, rate, rng);
  std::vector<double> x(len);
  for (std::size_t t = 0; t < len; ++t) {
    const double ts = static_cast<double>(t) / rate;
    x[t] = amp * env[t] * (std::sin(kTwoPi * f * ts + phase) + 0.5 * std::sin(kTwoPi * 2.0 * f * ts + 2.0 * phase));
  }
  const double snr_db = kToneSnrLowDb + (kToneSnrHighDb - kToneSnrLowDb) * u(rng);
  add_white_noise(x, rms(x) * std::pow(10.0, -snr_db / 20.0), rng);
  return x;
}

std::vector<double> amfm_clip(int label, std::size_t len, int rate, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fc = 300.0 + 1200.0 * u(rng);
  const double fm = 4.0 + 8.0 * u(rng);
  const double phase = kTwoPi * u(rng);
  std::vector<double> x(len);
  for (std::size_t t = 0; t < len; ++t) {
    const double ts = static_cast<double>(t) / rate;
    const double mod = std::sin(kTwoPi * fm * ts);
    x[t] = label == 0 ? (1.0 + 0.8 * mod) * std::sin(kTwoPi * fc * ts + phase)
                      : std::sin(kTwoPi * fc * ts + 0.05 * fc / fm * mod + phase);
  }
  add_white_noise(x, 0.1 + 0.3 * u(rng), rng);
  return x;
}

std::vector<double> noise_color_clip(int label, std::size_t len, int rate, Rng& rng) {
  static constexpr double kAlpha[4] = {0.0, 1.0, 2.0, -1.0};  // white, pink, brown, blue
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x = colored_noise(len, rate, kAlpha[label], rng);
  const double amp = 0.3 + 0.7 * u(rng);
  for (double& v : x) v *= amp;
  return x;
}

}  // namespace

bool ScoreTable::has(const std::string& model, const std::string& task) const {
  return scores.count({model, task}) > 0;
}

double ScoreTable::score(const std::string& model, const std::string& task) const {
  const auto it = scores.find({model, task});
  if (it == scores.end()) throw InvalidArgument("no score for model '" + model + "' on task '" + task + "'");
  return it->second;
}

double ScoreTable::sota(const std::string& task) const {
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& m : models) {
    if (!has(m, task)) continue;
    best = std::max(best, score(m, task));
    any = true;
  }
  if (!any) throw InvalidArgument("task '" + task + "' has no scores");
  return best;
}

void ScoreTable::validate() const {
  if (tasks.empty()) throw InvalidArgument("score table has no tasks");
  if (std::find(models.begin(), models.end(), baseline_id) == models.end()) {
    throw InvalidArgument("baseline '" + baseline_id + "' is not in the score table");
  }
  for (const auto& t : tasks) {
    if (!has(baseline_id, t)) throw InvalidArgument("baseline has no score for task '" + t + "'");
  }
  for (const auto& [key, v] : scores) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite score for " + key.first + "/" + key.second);
  }
}

ScoreTable read_score_table(std::istream& in, const std::string& baseline) {
  ScoreTable table;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto cells = split_csv(line);
    if (!header) {
      if (cells != std::vector<std::string>{"model", "task", "score"}) {
        throw InvalidArgument("score table header must be model,task,score");
      }
      header = true;
      continue;
    }
    if (cells.size() != 3) throw InvalidArgument("score table line " + std::to_string(lineno) + ": expected 3 cells");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw InvalidArgument("score table line " + std::to_string(lineno) + ": bad score '" + cells[2] + "'");
    }
    const auto& model = cells[0];
    const auto& task = cells[1];
    if (std::find(table.models.begin(), table.models.end(), model) == table.models.end()) {
      table.models.push_back(model);
    }
    if (std::find(table.tasks.begin(), table.tasks.end(), task) == table.tasks.end()) {
      table.tasks.push_back(task);
    }
    if (!table.scores.emplace(std::make_pair(model, task), value).second) {
      throw InvalidArgument("duplicate score for " + model + "/" + task);
    }
  }
  if (!header) throw InvalidArgument("score table is empty");
  if (table.models.empty()) throw InvalidArgument("score table has no rows");
  table.baseline_id = baseline.empty() ? table.models.front() : baseline;
  table.validate();
  return table;
}

ScoreTable read_score_table(const std::filesystem::path& path, const std::string& baseline) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score table " + path.string());
  return read_score_table(in, baseline);
}

GeneralizabilityScore generalizability_score(const ScoreTable& table, const std::string& model) {
  table.validate();
  if (std::find(table.models.begin(), table.models.end(), model) == table.models.end()) {
    throw InvalidArgument("model '" + model + "' is not in the score table");
  }
  GeneralizabilityScore out;
  out.model = model;
  double sum = 0.0;
  for (const auto& task : table.tasks) {
    TaskContribution c;
    c.task = task;
    const double base = table.score(table.baseline_id, task);
    const double best = table.sota(task);
    const double mine = table.score(model, task);
    if (best <= base) {
      c.degenerate = true;
    } else {
      c.ratio = std::clamp((mine - base) / (best - base), 0.0, 1.0);
    }
    sum += c.ratio;
    out.tasks.push_back(c);
  }
  out.value = 100.0 * sum / static_cast<double>(table.tasks.size());
  return out;
}

nlohmann::json to_json(const GeneralizabilityScore& s) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : s.tasks) {
    tasks.push_back({{"task", t.task}, {"contribution", t.ratio}, {"degenerate", t.degenerate}});
  }
  return {{"model", s.model}, {"score", s.value}, {"tasks", tasks}};
}

void ProbeTask::validate() const {
  if (classes.size() < 2) throw InvalidArgument("a probe task needs at least 2 classes");
  if (clips.size() != labels.size() || clips.size() != is_train.size()) {
    throw InvalidArgument("probe task arrays differ in length");
  }
  for (int l : labels) {
    if (l < 0 || l >= static_cast<int>(classes.size())) throw InvalidArgument("label outside the label space");
  }
}

std::vector<std::string> task_names() { return {"tone4", "am-fm", "noise-color"}; }

ProbeTask make_task(const std::string& name, std::uint64_t seed, const TaskOptions& options) {
  if (options.clips_per_class < 2) throw InvalidArgument("clips_per_class must be >= 2");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw InvalidArgument("train_fraction must lie in (0, 1)");
  }
  ProbeTask task;
  task.name = name;
  std::vector<double> (*gen)(int, std::size_t, int, Rng&) = nullptr;
  if (name == "tone4") {
    task.classes = {"220Hz", "330Hz", "495Hz", "742Hz"};
    gen = tone4_clip;
  } else if (name == "am-fm") {
    task.classes = {"am", "fm"};
    gen = amfm_clip;
  } else if (name == "noise-color") {
    task.classes = {"white", "pink", "brown", "blue"};
    gen = noise_color_clip;
  } else {
    throw InvalidArgument("unknown task '" + name + "'");
  }
  const auto len = static_cast<std::size_t>(std::llround(options.seconds * options.sample_rate));
  const int n_train = std::max(1, static_cast<int>(std::lround(options.train_fraction * options.clips_per_class)));
  if (n_train >= options.clips_per_class) throw InvalidArgument("test split would be empty");
  const auto names = task_names();
  const auto task_index = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), name) - names.begin());
  Rng rng = make_rng(seed, {tag(Stream::probe), task_index});
  for (int c = 0; c < static_cast<int>(task.classes.size()); ++c) {
    for (int i = 0; i < options.clips_per_class; ++i) {
      task.clips.push_back(SoundClip::mono(gen(c, len, options.sample_rate, rng), options.sample_rate));
      task.labels.push_back(c);
      task.is_train.push_back(i < n_train ? 1 : 0);
    }
  }
  task.validate();
  return task;
}

Matrix extract_features(const JepaModel& model, const ParamGroups& params,
                        const std::vector<SoundClip>& clips, int threads) {
  Matrix out(static_cast<Eigen::Index>(clips.size()), model.width());
  auto one = [&](std::size_t i) {
    std::vector<std::vector<double>> channels = clips[i].samples;
    if (model.channels() == 2 && channels.size() == 1) channels.push_back(channels.front());
    if (model.channels() == 1 && channels.size() == 2) {
      for (std::size_t t = 0; t < channels[0].size(); ++t) channels[0][t] = 0.5 * (channels[0][t] + channels[1][t]);
      channels.pop_back();
    }
    for (auto& ch : channels) instance_normalize(ch);
    out.row(static_cast<Eigen::Index>(i)) = model.clip_features(params, channels).transpose();
  };
  const std::size_t workers = std::max(1, threads);
  if (workers == 1) {
    for (std::size_t i = 0; i < clips.size(); ++i) one(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < clips.size(); i += workers) one(i);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

std::vector<int> ProbeResult::predict(const Matrix& features) const {
  Matrix x = (features.rowwise() - mean).array().rowwise() / scale.array();
  Matrix logits = x * weights.topRows(weights.rows() - 1);
  logits.rowwise() += weights.row(weights.rows() - 1);
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

ProbeResult train_probe(const Matrix& features, const std::vector<int>& labels,
                        const std::vector<char>& is_train, int classes, const ProbeOptions& options) {
  const auto n_all = static_cast<std::size_t>(features.rows());
  if (labels.size() != n_all || is_train.size() != n_all) throw ShapeError("one label and split flag per row");
  if (classes < 2) throw InvalidArgument("a probe needs at least 2 classes");
  std::vector<Eigen::Index> train, test;
  for (std::size_t i = 0; i < n_all; ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw InvalidArgument("label out of range");
    (is_train[i] ? train : test).push_back(static_cast<Eigen::Index>(i));
  }
  if (train.empty() || test.empty()) throw InvalidArgument("train and test splits must be non-empty");
  {
    std::vector<char> seen(static_cast<std::size_t>(classes), 0);
    for (auto i : train) seen[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] = 1;
    if (std::count(seen.begin(), seen.end(), 1) < 2) throw InvalidArgument("training split holds a single class");
  }

  const Eigen::Index d = features.cols();
  const auto n = static_cast<Eigen::Index>(train.size());
  ProbeResult r;
  Matrix xtrain(n, d);
  for (Eigen::Index i = 0; i < n; ++i) xtrain.row(i) = features.row(train[static_cast<std::size_t>(i)]);
  r.mean = xtrain.colwise().mean();
  r.scale = ((xtrain.rowwise() - r.mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(r.scale(j) > 1e-12)) r.scale(j) = 1.0;
  }
  Matrix x(n, d + 1);
  x.leftCols(d) = (xtrain.rowwise() - r.mean).array().rowwise() / r.scale.array();
  x.col(d).setOnes();
  Matrix y = Matrix::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[static_cast<std::size_t>(train[static_cast<std::size_t>(i)])]) = 1.0;

  const Eigen::Index p = d + 1;
  const Eigen::Index dim = p * classes;
  Matrix w = Matrix::Zero(p, classes);
  auto probs = [&](const Matrix& wt) {
    Matrix logits = x * wt;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  };
  auto objective = [&](const Matrix& wt) {
    Matrix logits = x * wt;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
      loss += lse - (logits.row(i).array() * y.row(i).array()).sum();
    }
    return loss / static_cast<double>(n) + 0.5 * options.l2 * wt.squaredNorm();
  };

  const double inv_n = 1.0 / static_cast<double>(n);
  double f = objective(w);
  for (r.iterations = 0; r.iterations < options.max_iter; ++r.iterations) {
    const Matrix pr = probs(w);
    const Matrix grad = x.transpose() * (pr - y) * inv_n + options.l2 * w;
    if (grad.cwiseAbs().maxCoeff() < options.tol) {
      r.converged = true;
      break;
    }
    // Hessian blocks (a, b) = X^T diag(p_a (delta_ab - p_b)) X / n + l2 I,
    // with the parameter vector stacked class by class.
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (int a = 0; a < classes; ++a) {
      for (int b = a; b < classes; ++b) {
        Vector coeff = (a == b ? (pr.col(a).array() * (1.0 - pr.col(a).array())).matrix()
                               : Vector(-(pr.col(a).array() * pr.col(b).array()).matrix()));
        Eigen::MatrixXd block = x.transpose() * coeff.asDiagonal() * x * inv_n;
        hess.block(a * p, b * p, p, p) = block;
        if (a != b) hess.block(b * p, a * p, p, p) = block.transpose();
      }
    }
    hess.diagonal().array() += options.l2;
    Vector g(dim);
    for (int c = 0; c < classes; ++c) g.segment(c * p, p) = grad.col(c);
    const Vector step = hess.ldlt().solve(g);
    Matrix dw(p, classes);
    for (int c = 0; c < classes; ++c) dw.col(c) = step.segment(c * p, p);

    double t = 1.0;
    const double slope = g.dot(step);
    Matrix next = w - dw;
    double fn = objective(next);
    while (fn > f - 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      next = w - t * dw;
      fn = objective(next);
    }
    w = std::move(next);
    if (std::abs(f - fn) < 1e-15 * std::max(1.0, std::abs(f)) && t <= 1e-10) {
      f = fn;
      break;
    }
    f = fn;
  }
  r.weights = w;

  auto accuracy = [&](const std::vector<Eigen::Index>& rows) {
    Matrix feats(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) feats.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    const auto pred = r.predict(feats);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) hit += pred[i] == labels[static_cast<std::size_t>(rows[i])];
    return static_cast<double>(hit) / static_cast<double>(rows.size());
  };
  r.train_accuracy = accuracy(train);
  r.test_accuracy = accuracy(test);
  return r;
}

}  // namespace wavjepa
