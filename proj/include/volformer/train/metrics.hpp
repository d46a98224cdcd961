#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace volformer {

struct VolumePrediction {
  std::string subject_id;
  std::size_t label = 0;
  std::vector<double> probs;
};

struct LevelMetrics {
  std::size_t count = 0;
  double accuracy = 0;
  std::vector<double> precision;  // 0 for a class never predicted
  std::vector<double> recall;     // 0 for a class absent from the labels
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  nlohmann::json to_json() const;
};

struct MetricReport {
  LevelMetrics volume;
  LevelMetrics subject;
  std::vector<std::string> excluded_subjects;  // listed for evaluation but without volumes
  std::vector<std::string> tied_subjects;      // mean probabilities tied; lowest class index taken

  nlohmann::json to_json() const;
};

/// argmax with ties resolved to the lowest index.
std::size_t argmax_lowest(const std::vector<double>& values, bool* tied = nullptr);

LevelMetrics level_metrics(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predicted,
                           std::size_t class_count);

/// Volume-level metrics over every prediction, and subject-level metrics
/// from the argmax of each subject's mean probability vector.
MetricReport summarize_predictions(const std::vector<VolumePrediction>& predictions, std::size_t class_count);

struct MeanStd {
  double mean = 0;
  double std = 0;  // population divisor
};
MeanStd mean_std(const std::vector<double>& values);
/// "0.953±0.006"
std::string format_mean_std(const MeanStd& ms, int digits = 3);

}  // namespace volformer
