#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volformer/data/dataset.hpp"
#include "volformer/data/folds.hpp"
#include "volformer/model/network.hpp"
#include "volformer/train/metrics.hpp"
#include "volformer/train/optimizer.hpp"

namespace volformer {

/// Reference to one fMRI volume of a dataset.
struct SampleRef {
  std::size_t subject = 0;
  std::size_t volume = 0;
};

/// Every fMRI volume of the listed subjects, in subject then volume order.
std::vector<SampleRef> volume_samples(const Dataset& data, const std::vector<std::size_t>& subjects);

/// Stacks the referenced samples into a model batch; fills only the branches
/// the config enables. Throws DataError naming a missing modality.
Batch<float> assemble_batch(const Dataset& data, const std::vector<SampleRef>& refs, const ModelConfig& cfg);
std::vector<std::size_t> batch_labels(const Dataset& data, const std::vector<SampleRef>& refs);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;            // mean over volumes of applied batches
  double train_accuracy = 0;  // fraction of volumes classified correctly during the epoch
  std::size_t skipped_batches = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Volume-level training: all fMRI volumes of the training subjects are pooled
/// and reshuffled each epoch under the config seed. Batches with a non-finite
/// gradient are skipped; an epoch where every batch is skipped raises
/// TrainingError.
TrainResult train_fold(Network<float>& model, const Dataset& data, const std::vector<std::size_t>& train_subjects,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Eval-mode probabilities for every fMRI volume of the listed subjects.
std::vector<VolumePrediction> predict(Network<float>& model, const Dataset& data,
                                      const std::vector<std::size_t>& subjects, std::size_t batch_size = 16);

/// Subjects with no volumes are excluded from the metrics and reported.
MetricReport evaluate(Network<float>& model, const Dataset& data, const std::vector<std::size_t>& test_subjects,
                      std::size_t batch_size = 16);

struct FoldResult {
  std::size_t fold = 0;
  std::string name;
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  TrainResult training;
  MetricReport metrics;
};

struct CvReport {
  std::string scheme;
  std::vector<FoldResult> folds;

  MeanStd volume_accuracy() const;
  MeanStd subject_accuracy() const;
  nlohmann::json to_json() const;
};

using ModelFactory = std::function<std::unique_ptr<Network<float>>(std::size_t fold)>;

struct CvOptions {
  std::size_t jobs = 1;                  // folds trained concurrently
  std::filesystem::path checkpoint_dir;  // fold<k>.vfck written here when set
  EpochCallback on_epoch;
};

/// Trains one fresh model per fold and evaluates it on the held-out subjects.
/// Asserts that no test subject appears in its fold's training set.
CvReport cross_validate(const Dataset& data, const FoldPlan& plan, const ModelFactory& factory,
                        const TrainConfig& cfg, const CvOptions& options = {});

/// Factory building `cfg` with a per-fold seed derived from cfg.seed.
ModelFactory default_factory(const ModelConfig& cfg);

/// report.json, summary.json, summary.txt, folds.csv and loss_fold<k>.csv.
void write_cv_outputs(const CvReport& report, const std::filesystem::path& dir);

}  // namespace volformer
