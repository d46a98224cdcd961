#include "volformer/cli/app.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "volformer/cli/run_config.hpp"
#include "volformer/core/log.hpp"
#include "volformer/core/parallel.hpp"
#include "volformer/data/volume_io.hpp"
#include "volformer/localize/grad_cam.hpp"
#include "volformer/model/checkpoint.hpp"
#include "volformer/model/cost.hpp"
#include "volformer/train/trainer.hpp"

namespace volformer {

namespace fs = std::filesystem;

void prepare_output_dir(const fs::path& dir, const nlohmann::json& resolved, bool force) {
  const fs::path config = dir / "config.json";
  if (fs::exists(config) && !force) {
    nlohmann::json existing;
    try {
      existing = read_json_file(config.string());
    } catch (const ConfigError&) {
      throw ConfigError(config.string() + " is unreadable; pass --force to overwrite");
    }
    if (existing != resolved) {
      throw ConfigError(dir.string() + " holds results of a different config; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
  std::ofstream out(config, std::ios::trunc);
  out << resolved.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + config.string());
}

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool force = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) cmd->add_option("--config", c.config_path, "run config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random stream");
  cmd->add_flag("--deterministic", c.deterministic, "bit-reproducible execution");
  cmd->add_flag("--force", c.force, "overwrite an output directory holding a different config");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.deterministic) cfg.train.deterministic = true;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

/// Fills fusion input widths the config leaves at zero from the data.
void fit_model_to_data(ModelConfig& model, const Dataset& data) {
  if (data.subjects.empty()) throw DataError("dataset has no subjects");
  const SubjectRecord& first = data.subjects.front();
  if (model.use_fc && model.fc_input_dim == 0) model.fc_input_dim = fc_feature_dim(first.fc_rois, model.fc_upper_triangle);
  if (model.use_pheno && model.pheno_input_dim == 0) model.pheno_input_dim = first.phenotype.size();
  if (data.class_count > model.class_count) {
    throw ConfigError("model.class_count: " + std::to_string(model.class_count) + " is below the " +
                      std::to_string(data.class_count) + " classes in the data");
  }
  model.validate();
}

Dataset load_for(const std::string& manifest, const ModelConfig& model, bool allow_crop) {
  LoadOptions opts;
  opts.pad_to = model.input_extent;
  opts.allow_crop = allow_crop;
  return load_dataset(manifest, opts);
}

/// Loads a checkpoint, reporting any decoding failure as a checkpoint error.
std::unique_ptr<Network<float>> open_checkpoint(const std::string& path) {
  try {
    return load_network<float>(path);
  } catch (const ParseError& e) {
    throw CheckpointError(path + ": " + e.what());
  } catch (const DataError& e) {
    throw CheckpointError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

std::vector<std::size_t> all_subjects(const Dataset& data) {
  std::vector<std::size_t> idx(data.subjects.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

std::string curve_csv(const TrainResult& r) {
  std::string text = "epoch,lr,loss,train_acc,skipped_batches\n";
  for (const auto& e : r.epochs) {
    text += std::to_string(e.epoch) + "," + nlohmann::json(e.lr).dump() + "," + nlohmann::json(e.loss).dump() + "," +
            nlohmann::json(e.train_accuracy).dump() + "," + std::to_string(e.skipped_batches) + "\n";
  }
  return text;
}

void log_epoch(const EpochStats& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu lr %.2g loss %.6f train_acc %.4f", e.epoch, e.lr, e.loss, e.train_accuracy);
  log_info(buf);
}

int cmd_gen(const Common& c, const std::string& spec_path) {
  SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : SyntheticSpec::from_json(read_json_file(spec_path));
  if (c.seed) spec.seed = *c.seed;
  spec.validate();
  const fs::path out = c.out_dir;
  prepare_output_dir(out, {{"command", "gen"}, {"spec", spec.to_json()}, {"deterministic", c.deterministic}}, c.force);
  write_text(out / "spec.json", spec.to_json().dump(2) + "\n");
  const fs::path manifest = write_dataset(generate_synthetic(spec), out);
  log_info("wrote " + manifest.string());
  return kExitOk;
}

int cmd_cv(const Common& c, const std::string& data_path, std::size_t jobs, std::optional<std::size_t> folds,
           std::string scheme) {
  RunConfig cfg = resolve(c);
  if (folds) cfg.folds = *folds;
  if (!scheme.empty()) cfg.fold_scheme = scheme;
  cfg.validate();
  Dataset data = load_for(data_path, cfg.model, cfg.allow_crop);
  fit_model_to_data(cfg.model, data);
  const fs::path out = c.out_dir;
  prepare_output_dir(out, {{"command", "cv"}, {"data", data_path}, {"config", cfg.to_json()}}, c.force);
  const FoldPlan plan = cfg.fold_scheme == "site" ? plan_site_folds(data.subjects)
                                                  : plan_folds(data.subjects, cfg.folds, cfg.train.seed);
  CvOptions options;
  options.jobs = jobs;
  options.checkpoint_dir = out / "checkpoints";
  options.on_epoch = log_epoch;
  fs::create_directories(options.checkpoint_dir);
  const CvReport report = cross_validate(data, plan, default_factory(cfg.model), cfg.train, options);
  write_cv_outputs(report, out);
  log_info("volume accuracy " + format_mean_std(report.volume_accuracy()) + ", subject accuracy " +
           format_mean_std(report.subject_accuracy()));
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& data_path) {
  RunConfig cfg = resolve(c);
  Dataset data = load_for(data_path, cfg.model, cfg.allow_crop);
  fit_model_to_data(cfg.model, data);
  const fs::path out = c.out_dir;
  prepare_output_dir(out, {{"command", "train"}, {"data", data_path}, {"config", cfg.to_json()}}, c.force);
  auto model = build_network<float>(cfg.model);
  const TrainResult result = train_fold(*model, data, all_subjects(data), cfg.train, log_epoch);
  write_text(out / "loss.csv", curve_csv(result));
  save_checkpoint<float>(out / "model.vfck", *model, {{"train", cfg.train.to_json()}, {"steps", result.steps}});
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data_path) {
  auto model = open_checkpoint(ckpt);
  Dataset data = load_for(data_path, model->config(), false);
  const fs::path out = c.out_dir;
  prepare_output_dir(out, {{"command", "eval"}, {"checkpoint", ckpt}, {"data", data_path}}, c.force);
  const MetricReport report = evaluate(*model, data, all_subjects(data));
  write_text(out / "metrics.json", report.to_json().dump(2) + "\n");
  log_info("volume accuracy " + nlohmann::json(report.volume.accuracy).dump() + ", subject accuracy " +
           nlohmann::json(report.subject.accuracy).dump());
  return kExitOk;
}

struct LocalizeArgs {
  std::string ckpt, volume, data, spec, layer;
  std::optional<std::size_t> target;
  bool subject_mean = false;
  bool maps = false;
};

std::size_t predicted_class(Network<float>& model, const Tensor<float>& volume) {
  const Tensor<float> probs = forward_volume<float>(model, volume);
  std::vector<double> p(probs.data().begin(), probs.data().end());
  return argmax_lowest(p);
}

int cmd_localize(const Common& c, const LocalizeArgs& a) {
  RunConfig cfg = resolve(c);
  const std::string layer = a.layer.empty() ? cfg.cam_layer : a.layer;
  auto model = open_checkpoint(a.ckpt);
  const ModelConfig& mc = model->config();
  if (mc.is_fusion()) throw ConfigError("localize supports fMRI-only checkpoints");
  const fs::path out = c.out_dir;

  if (!a.volume.empty()) {
    const Tensor<float> volume = load_volume(a.volume);
    const Shape expected{mc.input_extent[0], mc.input_extent[1], mc.input_extent[2]};
    if (volume.shape() != expected) {
      throw CheckpointError("volume " + a.volume + " is " + shape_str(volume.shape()) + " but the checkpoint expects " +
                            extent_str(mc.input_extent));
    }
    const std::size_t target = a.target ? *a.target : predicted_class(*model, volume);
    if (target >= mc.class_count) throw ConfigError("class: " + std::to_string(target) + " exceeds the model's classes");
    prepare_output_dir(out,
                       {{"command", "localize"}, {"checkpoint", a.ckpt}, {"volume", a.volume}, {"class", target},
                        {"layer", layer}},
                       c.force);
    const ActivationMap map = grad_cam(*model, volume, target, layer);
    export_map(map, out / "map.vfv");
    if (map.degenerate) log_warning("activation map is degenerate; sidecar flag set");
    return kExitOk;
  }

  // Audit mode: every volume of a manifest against the planted blob centers.
  if (a.data.empty() || a.spec.empty()) throw ConfigError("localize needs --volume, or --data together with --spec");
  const SyntheticSpec spec = SyntheticSpec::from_json(read_json_file(a.spec));
  if (spec.extent != mc.input_extent) {
    throw CheckpointError("spec extent " + extent_str(spec.extent) + " differs from the checkpoint input " +
                          extent_str(mc.input_extent));
  }
  Dataset data = load_for(a.data, mc, false);
  prepare_output_dir(out,
                     {{"command", "localize"}, {"checkpoint", a.ckpt}, {"data", a.data}, {"spec", spec.to_json()},
                      {"layer", layer}, {"top_fraction", cfg.top_fraction}, {"subject_mean", a.subject_mean}},
                     c.force);
  const auto blobs = spec.class_blobs();
  std::string csv = "subject_id,volume,label,predicted,correct,target_class,hit,degenerate\n";
  std::size_t correct = 0, hits = 0;
  for (const auto& s : data.subjects) {
    std::vector<ActivationMap> subject_maps;
    for (std::size_t k = 0; k < s.fmri_volumes.size(); ++k) {
      const Tensor<float>& volume = s.fmri_volumes[k].volume;
      const std::size_t predicted = predicted_class(*model, volume);
      const std::size_t target = a.target ? *a.target : predicted;
      const ActivationMap map = grad_cam(*model, volume, target, layer);
      if (s.label >= blobs.size()) throw DataError("subject " + s.subject_id + " has a label without a planted blob");
      const auto& center = blobs[s.label].center;
      const Extent3 voxel{std::size_t(std::lround(center[0])), std::size_t(std::lround(center[1])),
                          std::size_t(std::lround(center[2]))};
      const bool hit = in_top_fraction(map, voxel, cfg.top_fraction);
      const bool ok = predicted == s.label;
      correct += ok;
      hits += ok && hit;
      csv += s.subject_id + "," + std::to_string(k) + "," + std::to_string(s.label) + "," + std::to_string(predicted) +
             "," + std::to_string(int(ok)) + "," + std::to_string(target) + "," + std::to_string(int(hit)) + "," +
             std::to_string(int(map.degenerate)) + "\n";
      if (a.maps) export_map(map, out / "maps" / (s.subject_id + "_" + std::to_string(k) + ".vfv"), false);
      if (a.subject_mean) subject_maps.push_back(map);
    }
    if (a.subject_mean && !subject_maps.empty()) {
      std::map<std::size_t, std::vector<ActivationMap>> by_class;
      for (auto& m : subject_maps) by_class[m.target_class].push_back(std::move(m));
      for (const auto& [cls, maps] : by_class)
        export_map(mean_map(maps), out / "maps" / (s.subject_id + "_mean_class" + std::to_string(cls) + ".vfv"), false);
    }
  }
  write_text(out / "hits.csv", csv);
  const double rate = correct ? double(hits) / double(correct) : 0.0;
  write_text(out / "hit_rate.json", nlohmann::json{{"correct_volumes", correct},
                                                    {"hits", hits},
                                                    {"hit_rate", rate},
                                                    {"top_fraction", cfg.top_fraction},
                                                    {"layer", layer.empty() ? cam_layers(mc).back() : layer}}
                                            .dump(2) + "\n");
  log_info("blob hit rate " + nlohmann::json(rate).dump() + " over " + std::to_string(correct) +
           " correctly classified volumes");
  return kExitOk;
}

int cmd_cost(const Common& c, const std::string& preset, const std::string& csv_path, std::ostream& out) {
  RunConfig cfg = resolve(c);
  if (!preset.empty()) {
    ModelConfig base = ModelConfig::preset_named(preset);
    base.seed = cfg.model.seed;
    cfg.model = base;
  }
  std::string table = "plan,flops,gflops,peak_activation_bytes,peak_activation_mib,parameters\n";
  for (const char* plan : {"S-S-S-S", "S-S-S-D", "S-S-D-D", "S-D-D-D", "D-D-D-D"}) {
    ModelConfig m = cfg.model;
    m.attention_plan = parse_plan(plan);
    const CostReport r = estimate_cost(m);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.0f,%.4f,%zu,%.3f,%zu\n", plan, r.flops, r.flops / 1e9, r.peak_activation_bytes,
                  double(r.peak_activation_bytes) / (1024.0 * 1024.0), r.parameter_count);
    table += buf;
  }
  out << table;
  if (!csv_path.empty()) write_text(csv_path, table);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_threads_from_env();
  CLI::App app{"Volumetric attention classifier toolkit"};
  app.require_subcommand(1);

  Common gen_c, cv_c, train_c, eval_c, loc_c, cost_c;
  std::string spec_path, data_path, ckpt, preset, csv_path, scheme;
  std::size_t jobs = 1;
  std::optional<std::size_t> folds;
  LocalizeArgs loc;

  auto* gen = app.add_subcommand("gen", "materialize a synthetic multi-site dataset");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_c.out_dir, "output directory")->required();
  add_common(gen, gen_c, false);

  auto* cv = app.add_subcommand("cv", "subject-level k-fold cross-validation");
  cv->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", cv_c.out_dir, "output directory")->required();
  cv->add_option("--jobs", jobs, "folds trained concurrently")->check(CLI::PositiveNumber);
  cv->add_option("--folds", folds, "fold count (stratified scheme)");
  cv->add_option("--scheme", scheme, "stratified or site");
  add_common(cv, cv_c);

  auto* train = app.add_subcommand("train", "train one model on every subject of a manifest");
  train->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_c.out_dir, "output directory")->required();
  add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_c.out_dir, "output directory")->required();
  add_common(eval, eval_c, false);

  auto* localize = app.add_subcommand("localize", "gradient-weighted class activation maps");
  localize->add_option("--ckpt", loc.ckpt, "checkpoint file")->required();
  localize->add_option("--volume", loc.volume, "single volume file")->check(CLI::ExistingFile);
  localize->add_option("--data", loc.data, "manifest CSV for a hit-rate audit")->check(CLI::ExistingFile);
  localize->add_option("--spec", loc.spec, "synthetic spec holding the planted blob centers")->check(CLI::ExistingFile);
  localize->add_option("--class", loc.target, "target class (default: predicted class)");
  localize->add_option("--layer", loc.layer, "feature map to explain (default: last stage)");
  localize->add_flag("--maps", loc.maps, "export every per-volume map in audit mode");
  localize->add_flag("--subject-mean", loc.subject_mean, "export one mean map per subject in audit mode");
  localize->add_option("--out", loc_c.out_dir, "output directory")->required();
  add_common(localize, loc_c);

  auto* cost = app.add_subcommand("cost", "analytic cost of the five attention placements");
  cost->add_option("--preset", preset, "full or desk (overrides the config model)");
  cost->add_option("--csv", csv_path, "also write the table to this file");
  add_common(cost, cost_c);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen(gen_c, spec_path);
    if (*cv) return cmd_cv(cv_c, data_path, jobs, folds, scheme);
    if (*train) return cmd_train(train_c, data_path);
    if (*eval) return cmd_eval(eval_c, ckpt, data_path);
    if (*localize) return cmd_localize(loc_c, loc);
    if (*cost) return cmd_cost(cost_c, preset, csv_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PlanningError& e) {
    err << "fold planning error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace volformer
