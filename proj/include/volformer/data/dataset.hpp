#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "volformer/core/tensor.hpp"
#include "volformer/model/config.hpp"

namespace volformer {

enum class Modality { fmri, smri, fc };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& text);

struct VolumeSample {
  std::string subject_id;
  std::string site_id;
  std::size_t label = 0;
  Modality modality = Modality::fmri;
  Tensor<float> volume;     // [D×H×W]
  bool degenerate = false;  // constant intensity; data_norm maps it to zeros
  std::string source;       // file the sample was read from, if any
};

struct SubjectRecord {
  std::string subject_id;
  std::string site_id;
  std::size_t label = 0;
  std::vector<VolumeSample> fmri_volumes;
  std::optional<VolumeSample> smri;
  std::vector<float> fc;           // p×p correlations, row-major; empty when absent
  std::size_t fc_rois = 0;
  std::vector<float> phenotype;    // absent entries hold 0
  std::vector<bool> phenotype_present;
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  std::size_t class_count = 0;

  std::size_t volume_count() const;
  /// Subjects without fMRI volumes are dropped and returned by id.
  std::vector<std::string> drop_empty_subjects();
  /// Throws DataError when a record breaks a dataset invariant.
  void validate() const;
};

/// Row-major p×p matrix as a model input vector: the full matrix, or the
/// strictly upper triangle when `upper_triangle` is set.
std::vector<float> flatten_fc(const std::vector<float>& matrix, std::size_t p, bool upper_triangle);
std::size_t fc_feature_dim(std::size_t p, bool upper_triangle);

struct ManifestRow {
  std::string subject_id;
  std::string site_id;
  std::size_t label = 0;
  Modality modality = Modality::fmri;
  std::string path;                        // relative to the manifest directory unless absolute
  std::vector<std::optional<float>> pheno; // empty cell → nullopt
  std::size_t line = 0;
};

/// Header `subject_id,site_id,label,modality,path,pheno_0..pheno_m`.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

struct LoadOptions {
  std::optional<Extent3> pad_to;  // pad every volume to this extent
  bool allow_crop = false;        // center-crop axes larger than pad_to
};

/// Reads every file referenced by the manifest and groups rows by subject.
/// Subjects are ordered by id so results do not depend on row order.
Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options = {});

/// Writes volumes under `dir` and a manifest referencing them; returns the
/// manifest path.
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir);

}  // namespace volformer
