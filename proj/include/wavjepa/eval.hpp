#pragma once

#include "wavjepa/audio.hpp"
#include "wavjepa/jepa.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wavjepa {

struct ScoreTable {
  std::vector<std::string> tasks;   // order of first appearance
  std::vector<std::string> models;  // order of first appearance
  std::map<std::pair<std::string, std::string>, double> scores;  // (model, task)
  std::string baseline_id;

  bool has(const std::string& model, const std::string& task) const;
  double score(const std::string& model, const std::string& task) const;
  /// Best score on `task` over all models in the table.
  double sota(const std::string& task) const;
  void validate() const;
};

/// CSV with header `model,task,score`. The baseline defaults to the model
/// of the first data row.
ScoreTable read_score_table(std::istream& in, const std::string& baseline = "");
ScoreTable read_score_table(const std::filesystem::path& path, const std::string& baseline = "");

struct TaskContribution {
  std::string task;
  double ratio = 0.0;  // clamped to [0, 1]
  bool degenerate = false;  // SOTA does not exceed the baseline
};

struct GeneralizabilityScore {
  std::string model;
  double value = 0.0;  // in [0, 100]
  std::vector<TaskContribution> tasks;
};

GeneralizabilityScore generalizability_score(const ScoreTable& table, const std::string& model);
nlohmann::json to_json(const GeneralizabilityScore& s);

struct ProbeTask {
  std::string name;
  std::vector<SoundClip> clips;
  std::vector<int> labels;
  std::vector<std::string> classes;
  std::vector<char> is_train;

  void validate() const;
};

struct TaskOptions {
  int clips_per_class = 40;
  double seconds = 1.0;
  int sample_rate = 16000;
  double train_fraction = 0.5;
};

/// Names of the built-in synthetic tasks: tone4, am-fm, noise-color.
std::vector<std::string> task_names();

/// Generates a labelled synthetic task, deterministic per seed.
ProbeTask make_task(const std::string& name, std::uint64_t seed, const TaskOptions& options = {});

/// One feature row per clip: unmasked context-encoder pass, mean-pooled
/// over time and channels. Each channel is instance-normalised first.
/// Mono clips are duplicated for a two-channel model.
Matrix extract_features(const JepaModel& model, const ParamGroups& params,
                        const std::vector<SoundClip>& clips, int threads = 1);

struct ProbeOptions {
  double l2 = 1e-4;
  double tol = 1e-6;
  int max_iter = 100;
};

struct ProbeResult {
  Matrix weights;  // (features + 1) x classes, last row is the bias
  RowVector mean;
  RowVector scale;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int iterations = 0;
  bool converged = false;

  /// Predicted class per row of raw features.
  std::vector<int> predict(const Matrix& features) const;
};

/// L2-regularised multinomial logistic regression fitted with Newton's
/// method on standardised features.
ProbeResult train_probe(const Matrix& features, const std::vector<int>& labels,
                        const std::vector<char>& is_train, int classes,
                        const ProbeOptions& options = {});

}  // namespace wavjepa
