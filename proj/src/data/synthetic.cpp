#include "volformer/data/synthetic.hpp"

#include <cmath>
#include <set>

#include "volformer/core/error.hpp"
#include "volformer/core/random.hpp"
#include "volformer/data/preprocess.hpp"
#include "volformer/layers/data_norm.hpp"

namespace volformer {

namespace {
enum StreamTag : std::uint64_t { kBackground = 11, kJitter = 12, kPheno = 13, kStructural = 14, kSite = 15 };

/// Separable Gaussian filter with edge replication, in place.
void gaussian_smooth(std::vector<double>& v, const Extent3& e, double sigma) {
  if (sigma <= 0) return;
  const long radius = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (long i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  for (double& k : kernel) k /= total;
  const std::size_t strides[3] = {e[1] * e[2], e[2], 1};
  std::vector<double> line;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t n = e[axis], stride = strides[axis];
    line.resize(n);
    for (std::size_t base = 0; base < v.size(); ++base) {
      // visit each line once, from its first element
      if ((base / stride) % n != 0) continue;
      for (std::size_t i = 0; i < n; ++i) line[i] = v[base + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (long k = -radius; k <= radius; ++k) {
          const long j = std::clamp(long(i) + k, 0L, long(n) - 1);
          acc += kernel[k + radius] * line[j];
        }
        v[base + i * stride] = acc;
      }
    }
  }
}

/// Smoothed white noise rescaled to the requested standard deviation. The
/// noise is drawn on a grid padded by the filter radius and cropped, so the
/// variance does not rise toward the edges.
std::vector<double> smooth_noise(const Extent3& e, double sigma, double smoothness, std::uint64_t seed) {
  std::vector<double> v(extent_voxels(e), 0.0);
  if (sigma <= 0) return v;
  const std::size_t margin = smoothness > 0 ? static_cast<std::size_t>(std::ceil(3 * smoothness)) : 0;
  const Extent3 padded{e[0] + 2 * margin, e[1] + 2 * margin, e[2] + 2 * margin};
  std::vector<double> big(extent_voxels(padded));
  Rng rng(seed);
  for (double& x : big) x = rng.normal();
  gaussian_smooth(big, padded, smoothness);
  for (std::size_t d = 0; d < e[0]; ++d)
    for (std::size_t h = 0; h < e[1]; ++h)
      for (std::size_t w = 0; w < e[2]; ++w)
        v[(d * e[1] + h) * e[2] + w] = big[((d + margin) * padded[1] + h + margin) * padded[2] + w + margin];
  double mean = 0, ss = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / double(v.size()));
  for (double& x : v) x = (x - mean) / sd * sigma;
  return v;
}

void add_blob(std::vector<double>& v, const Extent3& e, const Blob& blob, double amplitude) {
  for (std::size_t d = 0; d < e[0]; ++d)
    for (std::size_t h = 0; h < e[1]; ++h)
      for (std::size_t w = 0; w < e[2]; ++w) {
        const double dd = double(d) - blob.center[0], dh = double(h) - blob.center[1], dw = double(w) - blob.center[2];
        const double r2 = dd * dd + dh * dh + dw * dw;
        v[(d * e[1] + h) * e[2] + w] += amplitude * std::exp(-0.5 * r2 / (blob.radius * blob.radius));
      }
}

Tensor<float> to_volume(const std::vector<double>& v, const Extent3& e, const SiteTransform& site) {
  Tensor<float> out(Shape{e[0], e[1], e[2]});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<float>(site.gain * v[i] + site.offset);
  return out;
}
}  // namespace

std::vector<Blob> SyntheticSpec::class_blobs() const {
  if (!blobs.empty()) return blobs;
  std::vector<Blob> out;
  for (std::size_t c = 0; c < class_count; ++c) {
    Blob b;
    for (std::size_t a = 0; a < 3; ++a) b.center[a] = double(extent[a]) * double(c + 1) / double(class_count + 1);
    b.radius = blob_radius;
    out.push_back(b);
  }
  return out;
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("spec." + field + ": " + why); };
  for (std::size_t e : extent)
    if (e == 0) fail("extent", "extents must be positive");
  if (site_count == 0) fail("site_count", "must be positive");
  if (class_count < 2) fail("class_count", "at least two classes are required");
  if (subjects_per_class_per_site == 0) fail("subjects_per_class_per_site", "must be positive");
  if (volumes_per_subject == 0) fail("volumes_per_subject", "must be positive");
  if (site_gain_range[0] <= 0 || site_gain_range[1] < site_gain_range[0]) {
    fail("site_gain_range", "needs 0 < low <= high");
  }
  if (site_offset_range[1] < site_offset_range[0]) fail("site_offset_range", "needs low <= high");
  if (!(blob_amplitude > 0)) fail("blob_amplitude", "must be positive");
  if (!(blob_radius > 0)) fail("blob_radius", "must be positive");
  if (noise_sigma < 0) fail("noise_sigma", "must be non-negative");
  if (smoothness < 0) fail("smoothness", "must be non-negative");
  if (jitter_sigma < 0) fail("jitter_sigma", "must be non-negative");
  if (!blobs.empty() && blobs.size() != class_count) {
    fail("blobs", std::to_string(blobs.size()) + " blobs for " + std::to_string(class_count) + " classes");
  }
  for (const auto& b : class_blobs()) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (!(b.center[a] >= 0 && b.center[a] <= double(extent[a]) - 1)) {
        fail("blobs", "center " + std::to_string(b.center[a]) + " on axis " + std::to_string(a) +
                          " lies outside the volume");
      }
    }
    if (!(b.radius > 0)) fail("blobs", "radius must be positive");
  }
  if (with_fc) {
    if (volumes_per_subject < 3) fail("volumes_per_subject", "connectivity needs at least 3 volumes per subject");
    if (fc_rois < 2 || fc_rois > extent_voxels(extent)) fail("fc_rois", "must lie in 2..voxel count");
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json blob_list = nlohmann::json::array();
  for (const auto& b : blobs) blob_list.push_back({{"center", b.center}, {"radius", b.radius}});
  return {
      {"extent", extent},
      {"site_count", site_count},
      {"class_count", class_count},
      {"subjects_per_class_per_site", subjects_per_class_per_site},
      {"volumes_per_subject", volumes_per_subject},
      {"site_gain_range", site_gain_range},
      {"site_offset_range", site_offset_range},
      {"blobs", blob_list},
      {"blob_radius", blob_radius},
      {"blob_amplitude", blob_amplitude},
      {"noise_sigma", noise_sigma},
      {"smoothness", smoothness},
      {"jitter_sigma", jitter_sigma},
      {"pheno_dim", pheno_dim},
      {"pheno_class_signal", pheno_class_signal},
      {"with_smri", with_smri},
      {"with_fc", with_fc},
      {"fc_rois", fc_rois},
      {"seed", seed},
  };
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("spec must be a JSON object");
  SyntheticSpec spec;
  const std::set<std::string> known = {"extent",         "site_count",         "class_count", "subjects_per_class_per_site",
                                       "volumes_per_subject", "site_gain_range", "site_offset_range", "blobs",
                                       "blob_radius",    "blob_amplitude",     "noise_sigma", "smoothness",
                                       "jitter_sigma",   "pheno_dim",          "pheno_class_signal", "with_smri",
                                       "with_fc",        "fc_rois",            "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("spec." + key + ": unknown key");
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("spec.") + key + ": " + e.what());
    }
  };
  read("extent", spec.extent);
  read("site_count", spec.site_count);
  read("class_count", spec.class_count);
  read("subjects_per_class_per_site", spec.subjects_per_class_per_site);
  read("volumes_per_subject", spec.volumes_per_subject);
  read("site_gain_range", spec.site_gain_range);
  read("site_offset_range", spec.site_offset_range);
  if (j.contains("blobs")) {
    try {
      for (const auto& b : j.at("blobs")) {
        for (const auto& [key, value] : b.items())
          if (key != "center" && key != "radius") throw ConfigError("spec.blobs." + key + ": unknown key");
        Blob blob;
        b.at("center").get_to(blob.center);
        blob.radius = b.value("radius", spec.blob_radius);
        spec.blobs.push_back(blob);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("spec.blobs: ") + e.what());
    }
  }
  read("blob_radius", spec.blob_radius);
  read("blob_amplitude", spec.blob_amplitude);
  read("noise_sigma", spec.noise_sigma);
  read("smoothness", spec.smoothness);
  read("jitter_sigma", spec.jitter_sigma);
  read("pheno_dim", spec.pheno_dim);
  read("pheno_class_signal", spec.pheno_class_signal);
  read("with_smri", spec.with_smri);
  read("with_fc", spec.with_fc);
  read("fc_rois", spec.fc_rois);
  read("seed", spec.seed);
  spec.validate();
  return spec;
}

SiteTransform site_transform(const SyntheticSpec& spec, std::size_t site) {
  Rng rng(derive_seed(spec.seed, {kSite, site}));
  const double slot = (double(site) + rng.uniform(0.25, 0.75)) / double(spec.site_count);
  const double slot_offset = (double(site) + rng.uniform(0.25, 0.75)) / double(spec.site_count);
  return {spec.site_gain_range[0] + slot * (spec.site_gain_range[1] - spec.site_gain_range[0]),
          spec.site_offset_range[0] + slot_offset * (spec.site_offset_range[1] - spec.site_offset_range[0])};
}

SubjectRecord synthesize_subject(const SyntheticSpec& spec, std::size_t site, std::size_t label,
                                 std::size_t subject_index) {
  if (label >= spec.class_count) throw ContractError("label " + std::to_string(label) + " outside the spec's classes");
  const Extent3& e = spec.extent;
  const SiteTransform transform = site_transform(spec, site);
  const Blob blob = spec.class_blobs()[label];

  SubjectRecord rec;
  char id[32];
  std::snprintf(id, sizeof id, "sub%04zu", subject_index);
  rec.subject_id = id;
  rec.site_id = "site" + std::to_string(site);
  rec.label = label;

  std::vector<double> base = smooth_noise(e, spec.noise_sigma, spec.smoothness,
                                          derive_seed(spec.seed, {kBackground, label, subject_index}));
  add_blob(base, e, blob, spec.blob_amplitude);
  for (std::size_t k = 0; k < spec.volumes_per_subject; ++k) {
    std::vector<double> v = base;
    if (spec.jitter_sigma > 0) {
      Rng rng(derive_seed(spec.seed, {kJitter, label, subject_index, k}));
      for (double& x : v) x += rng.normal(0.0, spec.jitter_sigma);
    }
    Tensor<float> volume = to_volume(v, e, transform);
    rec.fmri_volumes.push_back(
        {rec.subject_id, rec.site_id, label, Modality::fmri, volume, is_degenerate_volume(volume), ""});
  }

  if (spec.with_smri) {
    std::vector<double> anat = smooth_noise(e, spec.noise_sigma, spec.smoothness,
                                            derive_seed(spec.seed, {kStructural, label, subject_index}));
    add_blob(anat, e, blob, 0.5 * spec.blob_amplitude);
    Tensor<float> volume = to_volume(anat, e, transform);
    rec.smri = VolumeSample{rec.subject_id, rec.site_id, label, Modality::smri, volume,
                            is_degenerate_volume(volume), ""};
  }

  if (spec.with_fc) {
    const std::size_t steps = rec.fmri_volumes.size(), voxels = extent_voxels(e);
    Tensor<float> series(Shape{steps, e[0], e[1], e[2]});
    auto dst = series.mutable_data();
    for (std::size_t t = 0; t < steps; ++t) {
      const auto src = rec.fmri_volumes[t].volume.data();
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(t * voxels));
    }
    const FcResult fc = compute_fc(series, block_parcellation(e, spec.fc_rois), spec.fc_rois);
    rec.fc.assign(fc.matrix.data().begin(), fc.matrix.data().end());
    rec.fc_rois = spec.fc_rois;
  }

  Rng pheno_rng(derive_seed(spec.seed, {kPheno, label, subject_index}));
  const double shift = spec.pheno_class_signal * (double(label) - 0.5 * double(spec.class_count - 1));
  for (std::size_t i = 0; i < spec.pheno_dim; ++i) {
    rec.phenotype.push_back(static_cast<float>(pheno_rng.normal() + shift));
    rec.phenotype_present.push_back(true);
  }
  return rec;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data;
  data.class_count = spec.class_count;
  std::size_t index = 0;
  for (std::size_t site = 0; site < spec.site_count; ++site)
    for (std::size_t label = 0; label < spec.class_count; ++label)
      for (std::size_t i = 0; i < spec.subjects_per_class_per_site; ++i)
        data.subjects.push_back(synthesize_subject(spec, site, label, index++));
  return data;
}

Tensor<float> block_parcellation(const Extent3& extent, std::size_t rois) {
  // grid gd×gh×gw == rois with blocks as close to cubic as possible
  Extent3 best{0, 0, 0};
  double best_score = 1e300;
  for (std::size_t gd = 1; gd <= rois; ++gd) {
    if (rois % gd || gd > extent[0]) continue;
    for (std::size_t gh = 1; gh <= rois / gd; ++gh) {
      if ((rois / gd) % gh || gh > extent[1]) continue;
      const std::size_t gw = rois / gd / gh;
      if (gw > extent[2]) continue;
      const double a = double(extent[0]) / double(gd), b = double(extent[1]) / double(gh),
                   c = double(extent[2]) / double(gw);
      const double score = std::max({a, b, c}) / std::min({a, b, c});
      if (score < best_score) {
        best_score = score;
        best = {gd, gh, gw};
      }
    }
  }
  if (best[0] == 0) {
    throw ContractError("cannot split " + extent_str(extent) + " into " + std::to_string(rois) + " blocks");
  }
  Tensor<float> out(Shape{extent[0], extent[1], extent[2]});
  auto dst = out.mutable_data();
  for (std::size_t d = 0; d < extent[0]; ++d)
    for (std::size_t h = 0; h < extent[1]; ++h)
      for (std::size_t w = 0; w < extent[2]; ++w) {
        const std::size_t bd = d * best[0] / extent[0], bh = h * best[1] / extent[1], bw = w * best[2] / extent[2];
        dst[(d * extent[1] + h) * extent[2] + w] = static_cast<float>((bd * best[1] + bh) * best[2] + bw + 1);
      }
  return out;
}

}  // namespace volformer
