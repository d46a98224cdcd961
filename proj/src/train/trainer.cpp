#include "volformer/train/trainer.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "volformer/core/log.hpp"
#include "volformer/model/checkpoint.hpp"

namespace volformer {

namespace {
std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<float> inverse_frequency_weights(const Dataset& data, const std::vector<SampleRef>& samples) {
  std::vector<double> counts(data.class_count, 0.0);
  for (const auto& s : samples) counts[data.subjects[s.subject].label] += 1;
  std::vector<float> weights(data.class_count, 0.0f);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) weights[c] = float(double(samples.size()) / (double(counts.size()) * counts[c]));
  }
  return weights;
}

std::vector<std::vector<float>> snapshot(const ParamSet<float>& set) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : set.buffers) out.push_back(t.to_vector());
  return out;
}

void restore(ParamSet<float>& set, const std::vector<std::vector<float>>& saved) {
  for (std::size_t i = 0; i < saved.size(); ++i) {
    auto dst = set.buffers[i].second.mutable_data();
    std::copy(saved[i].begin(), saved[i].end(), dst.begin());
  }
}
}  // namespace

std::vector<SampleRef> volume_samples(const Dataset& data, const std::vector<std::size_t>& subjects) {
  std::vector<SampleRef> out;
  for (std::size_t s : subjects) {
    if (s >= data.subjects.size()) throw IndexError("subject index " + std::to_string(s) + " out of range");
    for (std::size_t k = 0; k < data.subjects[s].fmri_volumes.size(); ++k) out.push_back({s, k});
  }
  return out;
}

std::vector<std::size_t> batch_labels(const Dataset& data, const std::vector<SampleRef>& refs) {
  std::vector<std::size_t> labels;
  for (const auto& r : refs) labels.push_back(data.subjects[r.subject].label);
  return labels;
}

Batch<float> assemble_batch(const Dataset& data, const std::vector<SampleRef>& refs, const ModelConfig& cfg) {
  if (refs.empty()) throw ContractError("cannot assemble an empty batch");
  const Extent3& e = cfg.input_extent;
  const std::size_t voxels = extent_voxels(e), b = refs.size();
  auto stack = [&](auto&& volume_of, const char* branch) {
    Tensor<float> out(Shape{b, e[0], e[1], e[2]});
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor<float>& v = volume_of(refs[i]);
      if (v.shape() != Shape{e[0], e[1], e[2]}) {
        throw DimensionError(std::string(branch) + " volume of " + data.subjects[refs[i].subject].subject_id + " is " +
                             shape_str(v.shape()) + ", model input is " + extent_str(e) + "; pad volumes first");
      }
      std::copy(v.data().begin(), v.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * voxels));
    }
    return out;
  };
  Batch<float> batch;
  batch.fmri = stack([&](const SampleRef& r) -> const Tensor<float>& {
    return data.subjects[r.subject].fmri_volumes.at(r.volume).volume;
  }, "fmri");
  if (cfg.use_smri) {
    batch.smri = stack([&](const SampleRef& r) -> const Tensor<float>& {
      const auto& s = data.subjects[r.subject];
      if (!s.smri) throw DataError("subject " + s.subject_id + " has no smri volume but the smri branch is enabled");
      return s.smri->volume;
    }, "smri");
  }
  auto vectors = [&](std::size_t dim, const char* branch, auto&& values_of) {
    Tensor<float> out(Shape{b, dim});
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i) {
      const auto& s = data.subjects[refs[i].subject];
      const std::vector<float> v = values_of(s);
      if (v.size() != dim) {
        throw DataError("subject " + s.subject_id + " has " + std::to_string(v.size()) + " " + branch +
                        " features, the model expects " + std::to_string(dim));
      }
      std::copy(v.begin(), v.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return out;
  };
  if (cfg.use_fc) {
    batch.fc = vectors(cfg.fc_input_dim, "fc", [&](const SubjectRecord& s) {
      if (s.fc.empty()) throw DataError("subject " + s.subject_id + " has no fc matrix but the fc branch is enabled");
      return flatten_fc(s.fc, s.fc_rois, cfg.fc_upper_triangle);
    });
  }
  if (cfg.use_pheno) {
    batch.pheno = vectors(cfg.pheno_input_dim, "pheno", [&](const SubjectRecord& s) { return s.phenotype; });
  }
  return batch;
}

TrainResult train_fold(Network<float>& model, const Dataset& data, const std::vector<std::size_t>& train_subjects,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const std::vector<SampleRef> samples = volume_samples(data, train_subjects);
  if (samples.empty()) throw ContractError("training set has no volumes");
  ParamSet<float> state = model.state();
  Adam<float> adam(state, cfg);
  const std::vector<float> weights = cfg.class_weighting ? inverse_frequency_weights(data, samples) : std::vector<float>{};
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SampleRef> order = samples;
    Rng rng(derive_seed(cfg.seed, {0xE90C, epoch}));
    rng.shuffle(order);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_at(epoch, cfg);
    double loss_sum = 0;
    std::size_t counted = 0, correct = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++batches;
      const std::vector<SampleRef> refs(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const auto labels = batch_labels(data, refs);
      const auto saved = snapshot(state);
      state.zero_grad();
      Tensor<float> logits = model.logits(assemble_batch(data, refs, model.config()), NormMode::train);
      Tensor<float> loss = softmax_cross_entropy(logits, labels, weights);
      const double value = double(loss.item());
      bool applied = std::isfinite(value);
      if (applied) {
        backward(loss);
        applied = adam.step(stats.lr);
      } else {
        log_warning("epoch " + std::to_string(epoch) + ": non-finite loss; skipping the batch");
      }
      if (!applied) {
        restore(state, saved);
        ++stats.skipped_batches;
        continue;
      }
      loss_sum += value * double(refs.size());
      counted += refs.size();
      const std::size_t n = logits.size(1);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        std::vector<double> row(n);
        for (std::size_t c = 0; c < n; ++c) row[c] = logits.data()[i * n + c];
        correct += argmax_lowest(row) == labels[i];
      }
    }
    if (stats.skipped_batches == batches) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": every batch had a non-finite gradient or loss");
    }
    stats.loss = loss_sum / double(counted);
    stats.train_accuracy = double(correct) / double(counted);
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.steps = adam.steps();
  state.zero_grad();
  return result;
}

std::vector<VolumePrediction> predict(Network<float>& model, const Dataset& data,
                                      const std::vector<std::size_t>& subjects, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::vector<SampleRef> samples = volume_samples(data, subjects);
  std::vector<VolumePrediction> out;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                      samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), start + batch_size)));
    Tensor<float> probs = model.probabilities(assemble_batch(data, refs, model.config()), NormMode::eval);
    const std::size_t n = probs.size(1);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& s = data.subjects[refs[i].subject];
      VolumePrediction p{s.subject_id, s.label, std::vector<double>(n)};
      for (std::size_t c = 0; c < n; ++c) p.probs[c] = probs.data()[i * n + c];
      out.push_back(std::move(p));
    }
  }
  return out;
}

MetricReport evaluate(Network<float>& model, const Dataset& data, const std::vector<std::size_t>& test_subjects,
                      std::size_t batch_size) {
  std::vector<std::size_t> usable;
  std::vector<std::string> excluded;
  for (std::size_t s : test_subjects) {
    if (data.subjects.at(s).fmri_volumes.empty()) {
      excluded.push_back(data.subjects[s].subject_id);
      log_warning("subject " + data.subjects[s].subject_id + " has no volumes; excluded from evaluation");
    } else {
      usable.push_back(s);
    }
  }
  MetricReport report = summarize_predictions(predict(model, data, usable, batch_size), model.config().class_count);
  report.excluded_subjects = excluded;
  return report;
}

MeanStd CvReport::volume_accuracy() const {
  std::vector<double> v;
  for (const auto& f : folds) v.push_back(f.metrics.volume.accuracy);
  return mean_std(v);
}

MeanStd CvReport::subject_accuracy() const {
  std::vector<double> v;
  for (const auto& f : folds) v.push_back(f.metrics.subject.accuracy);
  return mean_std(v);
}

nlohmann::json CvReport::to_json() const {
  nlohmann::json fold_list = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : f.training.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
                        {"skipped_batches", e.skipped_batches}});
    }
    fold_list.push_back({{"fold", f.fold},
                         {"name", f.name},
                         {"train_subjects", f.train_subjects},
                         {"test_subjects", f.test_subjects},
                         {"steps", f.training.steps},
                         {"epochs", epochs},
                         {"metrics", f.metrics.to_json()}});
  }
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  nlohmann::json summary = {{"volume_accuracy", ms(volume_accuracy())}, {"subject_accuracy", ms(subject_accuracy())}};
  if (!folds.empty()) {
    const std::size_t classes = folds.front().metrics.volume.recall.size();
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> recall, precision;
      for (const auto& f : folds) {
        recall.push_back(f.metrics.volume.recall[c]);
        precision.push_back(f.metrics.volume.precision[c]);
      }
      summary["volume_recall_class" + std::to_string(c)] = ms(mean_std(recall));
      summary["volume_precision_class" + std::to_string(c)] = ms(mean_std(precision));
    }
  }
  return {{"scheme", scheme}, {"std_divisor", "population"}, {"folds", fold_list}, {"summary", summary}};
}

ModelFactory default_factory(const ModelConfig& cfg) {
  return [cfg](std::size_t fold) {
    ModelConfig per_fold = cfg;
    per_fold.seed = derive_seed(cfg.seed, {0xC0DE, fold});
    return build_network<float>(per_fold);
  };
}

CvReport cross_validate(const Dataset& data, const FoldPlan& plan, const ModelFactory& factory,
                        const TrainConfig& cfg, const CvOptions& options) {
  cfg.validate();
  CvReport report;
  report.scheme = plan.scheme;
  report.folds.resize(plan.fold_count);
  std::vector<std::exception_ptr> errors(plan.fold_count);
  std::mutex callback_mutex;

  auto run_fold = [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    plan.split(data.subjects, f, train, test);
    std::set<std::string> train_ids;
    for (std::size_t i : train) train_ids.insert(data.subjects[i].subject_id);
    for (std::size_t i : test) {
      if (train_ids.count(data.subjects[i].subject_id)) {
        throw PlanningError("subject " + data.subjects[i].subject_id + " is on both sides of fold " + std::to_string(f));
      }
    }
    if (train.empty() || test.empty()) {
      throw PlanningError("fold " + std::to_string(f) + " has an empty train or test side");
    }
    FoldResult& r = report.folds[f];
    r.fold = f;
    r.name = f < plan.fold_labels.size() ? plan.fold_labels[f] : "fold" + std::to_string(f + 1);
    for (std::size_t i : train) r.train_subjects.push_back(data.subjects[i].subject_id);
    for (std::size_t i : test) r.test_subjects.push_back(data.subjects[i].subject_id);
    auto model = factory(f);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, {0x5EED, f});
    EpochCallback cb;
    if (options.on_epoch) {
      cb = [&](const EpochStats& e) {
        std::lock_guard lock(callback_mutex);
        options.on_epoch(e);
      };
    }
    log_info("fold " + r.name + ": training on " + std::to_string(train.size()) + " subjects, testing on " +
             std::to_string(test.size()));
    r.training = train_fold(*model, data, train, fold_cfg, cb);
    r.metrics = evaluate(*model, data, test, cfg.batch_size);
    log_info("fold " + r.name + ": volume accuracy " + format_double(r.metrics.volume.accuracy));
    if (!options.checkpoint_dir.empty()) {
      save_checkpoint<float>(options.checkpoint_dir / ("fold" + std::to_string(f + 1) + ".vfck"), *model,
                             {{"fold", f}, {"fold_name", r.name}, {"test_subjects", r.test_subjects}});
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, plan.fold_count));
  if (jobs == 1) {
    for (std::size_t f = 0; f < plan.fold_count; ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t f = next++; f < plan.fold_count; f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            errors[f] = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return report;
}

void write_cv_outputs(const CvReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::json full = report.to_json();
  write_text(dir / "report.json", full.dump(2) + "\n");
  write_text(dir / "summary.json", full.at("summary").dump(2) + "\n");

  std::string summary;
  for (const auto& [key, value] : full.at("summary").items()) {
    summary += key + " " + format_mean_std({value.at("mean").get<double>(), value.at("std").get<double>()}) + "\n";
  }
  write_text(dir / "summary.txt", summary);

  std::string folds = "fold,name,train_subjects,test_subjects,test_volumes,volume_accuracy,subject_accuracy,final_loss\n";
  for (const auto& f : report.folds) {
    folds += std::to_string(f.fold) + "," + f.name + "," + std::to_string(f.train_subjects.size()) + "," +
             std::to_string(f.test_subjects.size()) + "," + std::to_string(f.metrics.volume.count) + "," +
             format_double(f.metrics.volume.accuracy) + "," + format_double(f.metrics.subject.accuracy) + "," +
             format_double(f.training.epochs.empty() ? 0.0 : f.training.epochs.back().loss) + "\n";
  }
  write_text(dir / "folds.csv", folds);

  for (const auto& f : report.folds) {
    std::string curve = "epoch,lr,loss,train_acc,skipped_batches\n";
    for (const auto& e : f.training.epochs) {
      curve += std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.loss) + "," +
               format_double(e.train_accuracy) + "," + std::to_string(e.skipped_batches) + "\n";
    }
    write_text(dir / ("loss_fold" + std::to_string(f.fold + 1) + ".csv"), curve);
  }
}

}  // namespace volformer
