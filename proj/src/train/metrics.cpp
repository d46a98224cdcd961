#include "volformer/train/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "volformer/core/error.hpp"
#include "volformer/core/log.hpp"

namespace volformer {

nlohmann::json LevelMetrics::to_json() const {
  return {{"count", count}, {"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"confusion", confusion}};
}

nlohmann::json MetricReport::to_json() const {
  return {{"volume", volume.to_json()},
          {"subject", subject.to_json()},
          {"excluded_subjects", excluded_subjects},
          {"tied_subjects", tied_subjects}};
}

std::size_t argmax_lowest(const std::vector<double>& values, bool* tied) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  bool tie = false;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
      tie = false;
    } else if (values[i] == values[best]) {
      tie = true;
    }
  }
  if (tied) *tied = tie;
  return best;
}

LevelMetrics level_metrics(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predicted,
                           std::size_t class_count) {
  if (labels.size() != predicted.size()) throw DimensionError("label and prediction counts differ");
  LevelMetrics m;
  m.count = labels.size();
  m.confusion.assign(class_count, std::vector<std::size_t>(class_count, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count || predicted[i] >= class_count) {
      throw IndexError("class index outside 0.." + std::to_string(class_count - 1));
    }
    ++m.confusion[labels[i]][predicted[i]];
    correct += labels[i] == predicted[i];
  }
  m.accuracy = m.count ? double(correct) / double(m.count) : 0.0;
  for (std::size_t c = 0; c < class_count; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < class_count; ++k) {
      row += m.confusion[c][k];
      col += m.confusion[k][c];
    }
    m.recall.push_back(row ? double(m.confusion[c][c]) / double(row) : 0.0);
    m.precision.push_back(col ? double(m.confusion[c][c]) / double(col) : 0.0);
  }
  return m;
}

MetricReport summarize_predictions(const std::vector<VolumePrediction>& predictions, std::size_t class_count) {
  MetricReport report;
  std::vector<std::size_t> labels, predicted;
  struct Accum {
    std::size_t label = 0;
    std::size_t count = 0;
    std::vector<double> sum;
  };
  std::map<std::string, Accum> subjects;
  for (const auto& p : predictions) {
    if (p.probs.size() != class_count) {
      throw DimensionError("prediction for " + p.subject_id + " has " + std::to_string(p.probs.size()) +
                           " probabilities, expected " + std::to_string(class_count));
    }
    labels.push_back(p.label);
    predicted.push_back(argmax_lowest(p.probs));
    Accum& a = subjects[p.subject_id];
    if (a.count && a.label != p.label) throw DataError("subject " + p.subject_id + " has volumes with different labels");
    a.label = p.label;
    if (a.sum.empty()) a.sum.assign(class_count, 0.0);
    for (std::size_t c = 0; c < class_count; ++c) a.sum[c] += p.probs[c];
    ++a.count;
  }
  report.volume = level_metrics(labels, predicted, class_count);
  labels.clear();
  predicted.clear();
  for (const auto& [id, a] : subjects) {
    std::vector<double> mean(class_count);
    for (std::size_t c = 0; c < class_count; ++c) mean[c] = a.sum[c] / double(a.count);
    bool tied = false;
    predicted.push_back(argmax_lowest(mean, &tied));
    labels.push_back(a.label);
    if (tied) {
      report.tied_subjects.push_back(id);
      log_info("subject " + id + ": mean probabilities tie; taking class " + std::to_string(predicted.back()));
    }
  }
  report.subject = level_metrics(labels, predicted, class_count);
  return report;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= double(values.size());
  double ss = 0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / double(values.size()));
  return out;
}

std::string format_mean_std(const MeanStd& ms, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", digits, ms.mean, digits, ms.std);
  return buf;
}

}  // namespace volformer
