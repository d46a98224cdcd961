#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "volformer/data/dataset.hpp"

namespace volformer {

struct Blob {
  std::array<double, 3> center{};  // voxel coordinates (d, h, w)
  double radius = 2.0;             // Gaussian falloff σ in voxels
};

/// Planted-signal multi-site volumes. Every subject is smooth Gaussian-filtered
/// noise plus its class blob; each volume adds white jitter; the site's
/// gain·v + offset is applied last.
struct SyntheticSpec {
  Extent3 extent{16, 18, 16};
  std::size_t site_count = 2;
  std::size_t class_count = 2;
  std::size_t subjects_per_class_per_site = 5;
  std::size_t volumes_per_subject = 8;

  std::array<double, 2> site_gain_range{0.5, 4.0};
  std::array<double, 2> site_offset_range{-40.0, 40.0};

  std::vector<Blob> blobs;       // one per class; empty → spread along the volume diagonal
  double blob_radius = 2.0;      // used for generated blob placements
  double blob_amplitude = 5.0;
  double noise_sigma = 1.0;      // background standard deviation
  double smoothness = 1.5;       // Gaussian filter σ in voxels for the background
  double jitter_sigma = 0.3;     // per-volume white noise

  std::size_t pheno_dim = 3;
  double pheno_class_signal = 0.0;  // class-dependent shift of every phenotype entry

  bool with_smri = false;
  bool with_fc = false;
  std::size_t fc_rois = 8;

  std::uint64_t seed = 0;

  /// Blob per class after defaults are applied.
  std::vector<Blob> class_blobs() const;
  /// Throws ConfigError naming the invalid field.
  void validate() const;

  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Per-site intensity transform. Sites draw from disjoint slices of the gain
/// and offset ranges so every pair of sites differs.
struct SiteTransform {
  double gain = 1.0;
  double offset = 0.0;
};
SiteTransform site_transform(const SyntheticSpec& spec, std::size_t site);

/// Underlying (pre-site) content depends only on the seed, class and
/// subject index, so the same index rendered for two sites differs only by
/// the site transform.
SubjectRecord synthesize_subject(const SyntheticSpec& spec, std::size_t site, std::size_t label,
                                 std::size_t subject_index);

/// All subjects; subject indices are unique across sites.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Block parcellation of the spec extent into `fc_rois` ROIs (ids 1..p).
Tensor<float> block_parcellation(const Extent3& extent, std::size_t rois);

}  // namespace volformer
