#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "support/blob_oracle.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "volformer/core/binary_io.hpp"
#include "volformer/core/random.hpp"
#include "volformer/data/dataset.hpp"
#include "volformer/data/folds.hpp"
#include "volformer/data/preprocess.hpp"
#include "volformer/data/synthetic.hpp"
#include "volformer/data/volume_io.hpp"

using namespace volformer;
using volformer::testing::TempDir;

namespace {

Tensor<float> ramp(Shape shape) {
  Tensor<float> t(std::move(shape));
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i) * 0.25f - 3.0f;
  return t;
}

std::vector<SubjectRecord> subjects(std::size_t per_class, std::size_t classes, std::size_t volumes = 1) {
  std::vector<SubjectRecord> out;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      SubjectRecord s;
      s.subject_id = "c" + std::to_string(c) + "_" + std::to_string(i);
      s.site_id = i % 2 ? "b" : "a";
      s.label = c;
      s.fmri_volumes.resize(volumes);
      out.push_back(s);
    }
  return out;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("volume file round trip and corruption") {
  TempDir dir;
  const auto path = dir.path() / "v.vfv";
  Tensor<float> v = ramp({61, 73, 61});
  save_volume(path, v);
  Tensor<float> back = load_volume(path);
  CHECK(back.shape() == Shape{61, 73, 61});
  CHECK(back.to_vector() == v.to_vector());

  auto bytes = read_file_bytes(path);
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 100);
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_volume(path), ParseError);
  }
  SUBCASE("bad magic") {
    bytes[1] = 'X';
    write_file_bytes(path, bytes);
    try {
      load_volume(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("extent overflow") {
    const std::uint32_t huge = 0xFFFFFFFFu;
    std::memcpy(bytes.data() + 8, &huge, 4);
    write_file_bytes(path, bytes);
    try {
      load_volume(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 8);
    }
  }
  SUBCASE("flipped payload bit") {
    bytes[100] ^= 1;
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_volume(path), ParseError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_volume(dir.path() / "absent.vfv"), DataError); }
}

TEST_CASE("pad_volume") {
  try {
    pad_volume(ramp({61, 73, 61}), {64, 72, 64});
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
  Tensor<float> src = ramp({61, 72, 61});
  CHECK(pad_offsets({61, 72, 61}, {64, 72, 64}) == Extent3{1, 0, 1});
  Tensor<float> padded = pad_volume(src, {64, 72, 64});
  CHECK(padded.shape() == Shape{64, 72, 64});
  CHECK(padded.at({1, 0, 1}) == src.at({0, 0, 0}));
  CHECK(padded.at({61, 71, 61}) == src.at({60, 71, 60}));
  CHECK(padded.at({0, 0, 0}) == 0.0f);
  CHECK(padded.at({62, 5, 5}) == 0.0f);
  CHECK(padded.at({63, 5, 63}) == 0.0f);

  Tensor<float> same = ramp({4, 5, 6});
  CHECK(pad_volume(same, {4, 5, 6}).to_vector() == same.to_vector());

  SUBCASE("opt-in center crop") {
    Tensor<float> cropped = pad_volume(ramp({61, 73, 61}), {64, 72, 64}, true);
    CHECK(cropped.shape() == Shape{64, 72, 64});
    Tensor<float> full = ramp({61, 73, 61});
    CHECK(cropped.at({1, 0, 1}) == full.at({0, 0, 0}));
    CHECK(cropped.at({1, 71, 1}) == full.at({0, 71, 0}));
  }
}

TEST_CASE("compute_fc") {
  const std::size_t steps = 20, p = 4;
  Tensor<double> parc(Shape{2, 2, 2}, {1, 1, 2, 2, 3, 3, 4, 4});

  SUBCASE("identical and negated series") {
    Tensor<double> series(Shape{steps, 2, 2, 2});
    Rng rng(1);
    for (std::size_t t = 0; t < steps; ++t) {
      const double a = rng.normal(), b = rng.normal();
      const double vals[8] = {a, a, a, a, -a, -a, b, b};
      for (std::size_t i = 0; i < 8; ++i) series.at({t, i / 4, (i / 2) % 2, i % 2}) = vals[i];
    }
    FcResult fc = compute_fc(series, parc, p);
    CHECK(fc.matrix.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fc.matrix.at({0, 2}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(fc.flagged.empty());
  }

  SUBCASE("random series against the textbook formula") {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      Tensor<double> series(Shape{steps, 2, 2, 2});
      Rng(100 + trial).fill_normal(series.mutable_data(), 0.0, 1.0);
      FcResult fc = compute_fc(series, parc, p);
      std::vector<std::vector<double>> roi(p, std::vector<double>(steps));
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t i = 0; i < 8; ++i)
          roi[std::size_t(parc.data()[i]) - 1][t] += series.data()[t * 8 + i] / 2;
      double worst = 0;
      for (std::size_t i = 0; i < p; ++i) {
        CHECK(fc.matrix.at({i, i}) == 1.0);
        for (std::size_t j = 0; j < p; ++j) {
          if (i == j) continue;
          worst = std::max(worst, std::abs(fc.matrix.at({i, j}) - volformer::testing::pearson(roi[i], roi[j])));
          CHECK(fc.matrix.at({i, j}) == fc.matrix.at({j, i}));
        }
      }
      CHECK(worst < 1e-10);
    }
  }

  SUBCASE("constant ROI is flagged and zeroed") {
    Tensor<double> series(Shape{steps, 2, 2, 2});
    Rng(3).fill_normal(series.mutable_data(), 0.0, 1.0);
    for (std::size_t t = 0; t < steps; ++t) series.at({t, 1, 1, 0}) = series.at({t, 1, 1, 1}) = 2.5;
    FcResult fc = compute_fc(series, parc, p);
    CHECK(fc.flagged == std::vector<std::size_t>{4});
    CHECK(fc.matrix.at({3, 0}) == 0.0);
    CHECK(fc.matrix.at({3, 3}) == 1.0);
  }

  SUBCASE("preconditions") {
    CHECK_THROWS_AS(compute_fc(Tensor<double>(Shape{2, 2, 2, 2}), parc, p), ContractError);
    Tensor<double> missing(Shape{2, 2, 2}, {1, 1, 2, 2, 3, 3, 3, 3});
    CHECK_THROWS_AS(compute_fc(Tensor<double>(Shape{5, 2, 2, 2}), missing, p), DataError);
  }
}

TEST_CASE("fold planning") {
  auto subs = subjects(5, 2, 3);
  FoldPlan plan = plan_folds(subs, 5, 7);
  std::vector<std::size_t> per_fold(5, 0);
  for (const auto& [id, fold] : plan.assignments) ++per_fold[fold];
  CHECK(per_fold == std::vector<std::size_t>(5, 2));
  CHECK(plan.assignments.size() == subs.size());
  CHECK(plan_folds(subs, 5, 7).assignments == plan.assignments);

  std::vector<std::size_t> train, test;
  std::set<std::string> tested;
  for (std::size_t f = 0; f < 5; ++f) {
    plan.split(subs, f, train, test);
    CHECK(train.size() + test.size() == subs.size());
    for (std::size_t i : test) CHECK(tested.insert(subs[i].subject_id).second);
  }
  CHECK(tested.size() == subs.size());

  SUBCASE("order invariance") {
    auto reversed = subs;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(plan_folds(reversed, 5, 7).assignments == plan.assignments);
  }

  SUBCASE("too few subjects names the class") {
    auto few = subjects(5, 2);
    few.pop_back();
    try {
      plan_folds(few, 5, 1);
      FAIL("expected PlanningError");
    } catch (const PlanningError& e) {
      CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
  }

  SUBCASE("leave-site-out") {
    FoldPlan sites = plan_site_folds(subs);
    CHECK(sites.fold_count == 2);
    sites.split(subs, 0, train, test);
    for (std::size_t i : test) CHECK(subs[i].site_id == "a");
    for (std::size_t i : train) CHECK(subs[i].site_id == "b");
  }
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.seed = 5;
  Dataset data = generate_synthetic(spec);
  CHECK(data.subjects.size() == 2 * 2 * 5);
  CHECK(data.volume_count() == 2 * 2 * 5 * 8);

  SUBCASE("bit reproducible") {
    Dataset again = generate_synthetic(spec);
    for (std::size_t s = 0; s < data.subjects.size(); ++s)
      for (std::size_t k = 0; k < 8; ++k)
        CHECK(again.subjects[s].fmri_volumes[k].volume.to_vector() == data.subjects[s].fmri_volumes[k].volume.to_vector());
  }

  SUBCASE("noise-free volume is the blob exactly") {
    SyntheticSpec clean = spec;
    clean.noise_sigma = 0;
    clean.jitter_sigma = 0;
    clean.site_gain_range = {1, 1};
    clean.site_offset_range = {0, 0};
    const auto blobs = clean.class_blobs();
    for (std::size_t label = 0; label < 2; ++label) {
      const Tensor<float> v = synthesize_subject(clean, 0, label, 3).fmri_volumes[0].volume;
      double worst = 0;
      for (std::size_t d = 0; d < 16; ++d)
        for (std::size_t h = 0; h < 18; ++h)
          for (std::size_t w = 0; w < 16; ++w) {
            const double dd = d - blobs[label].center[0], dh = h - blobs[label].center[1], dw = w - blobs[label].center[2];
            const double expected = 5.0 * std::exp(-0.5 * (dd * dd + dh * dh + dw * dw) / 4.0);
            worst = std::max(worst, std::abs(v.at({d, h, w}) - expected));
          }
      CHECK(worst < 1e-5);
    }
  }

  SUBCASE("site variants differ only by the site transform") {
    const auto a = synthesize_subject(spec, 0, 1, 42);
    const auto b = synthesize_subject(spec, 1, 1, 42);
    const SiteTransform ta = site_transform(spec, 0), tb = site_transform(spec, 1);
    CHECK(std::abs(ta.gain - tb.gain) > 0.5);
    const auto va = a.fmri_volumes[2].volume.data(), vb = b.fmri_volumes[2].volume.data();
    double worst = 0;
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double base = (double(va[i]) - ta.offset) / ta.gain;
      worst = std::max(worst, std::abs(tb.gain * base + tb.offset - double(vb[i])));
    }
    CHECK(worst < 1e-3);
    const auto na = data_norm(a.fmri_volumes[2].volume).to_vector();
    const auto nb = data_norm(b.fmri_volumes[2].volume).to_vector();
    double diff = 0;
    for (std::size_t i = 0; i < na.size(); ++i) diff = std::max(diff, double(std::abs(na[i] - nb[i])));
    CHECK(diff < 1e-5);
  }

  SUBCASE("threshold oracle separates the classes") {
    const auto blobs = spec.class_blobs();
    std::size_t hits = 0, total = 0;
    for (const auto& s : data.subjects)
      for (const auto& v : s.fmri_volumes) {
        hits += volformer::testing::blob_oracle(v.volume, blobs) == s.label;
        ++total;
      }
    CHECK(double(hits) / double(total) >= 0.99);
  }

  SUBCASE("invalid spec fields are named") {
    SyntheticSpec bad = spec;
    bad.blobs = {Blob{{20, 1, 1}, 2}, Blob{{1, 1, 1}, 2}};
    try {
      bad.validate();
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("blobs") != std::string::npos);
    }
    CHECK_THROWS_AS(SyntheticSpec::from_json({{"noise", 1}}), ConfigError);
    CHECK(SyntheticSpec::from_json(spec.to_json()).to_json() == spec.to_json());
  }
}

TEST_CASE("multimodal dataset through the manifest") {
  TempDir dir;
  SyntheticSpec spec;
  spec.subjects_per_class_per_site = 2;
  spec.volumes_per_subject = 4;
  spec.with_smri = true;
  spec.with_fc = true;
  spec.seed = 8;
  Dataset data = generate_synthetic(spec);
  for (const auto& s : data.subjects) {
    REQUIRE(s.fc.size() == 64);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(s.fc[i * 8 + i] == 1.0f);
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(s.fc[i * 8 + j] == s.fc[j * 8 + i]);
        CHECK(std::abs(s.fc[i * 8 + j]) <= 1.0f + 1e-9f);
      }
    }
  }
  // blank out one phenotype entry to exercise the absent marker
  data.subjects[0].phenotype_present[1] = false;
  data.subjects[0].phenotype[1] = 0;
  const auto manifest = write_dataset(data, dir.path());
  const auto rows = read_manifest(manifest);
  CHECK(rows.size() == data.subjects.size() * (4 + 2));

  Dataset back = load_dataset(manifest);
  REQUIRE(back.subjects.size() == data.subjects.size());
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const auto& a = data.subjects[s];
    const auto& b = back.subjects[s];
    CHECK(a.subject_id == b.subject_id);
    CHECK(a.label == b.label);
    CHECK(a.phenotype == b.phenotype);
    CHECK(a.phenotype_present == b.phenotype_present);
    CHECK(a.fc == b.fc);
    REQUIRE(b.smri);
    CHECK(a.smri->volume.to_vector() == b.smri->volume.to_vector());
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.fmri_volumes[k].volume.to_vector() == b.fmri_volumes[k].volume.to_vector());
  }
  CHECK(flatten_fc(back.subjects[0].fc, 8, true).size() == 28);

  SUBCASE("row order does not matter") {
    auto shuffled = rows;
    std::reverse(shuffled.begin(), shuffled.end());
    write_manifest(dir.path() / "reversed.csv", shuffled);
    Dataset other = load_dataset(dir.path() / "reversed.csv");
    for (std::size_t s = 0; s < back.subjects.size(); ++s) {
      CHECK(other.subjects[s].subject_id == back.subjects[s].subject_id);
      CHECK(other.subjects[s].fmri_volumes[1].source == back.subjects[s].fmri_volumes[1].source);
    }
  }

  SUBCASE("padding on load") {
    LoadOptions opts;
    opts.pad_to = Extent3{18, 18, 18};
    CHECK(load_dataset(manifest, opts).subjects[0].fmri_volumes[0].volume.shape() == Shape{18, 18, 18});
    opts.pad_to = Extent3{16, 16, 16};
    CHECK_THROWS_AS(load_dataset(manifest, opts), DataError);
  }

  SUBCASE("malformed manifests") {
    std::ofstream(dir.path() / "bad.csv") << "subject_id,site_id,label,modality,path\nx,a,zero,fmri,v.vfv\n";
    CHECK_THROWS_AS(read_manifest(dir.path() / "bad.csv"), DataError);
    std::ofstream(dir.path() / "bad2.csv") << "subject,site_id,label,modality,path\n";
    CHECK_THROWS_AS(read_manifest(dir.path() / "bad2.csv"), DataError);
    std::ofstream(dir.path() / "bad3.csv") << "subject_id,site_id,label,modality,path\nx,a,0,pet,v.vfv\n";
    CHECK_THROWS_AS(read_manifest(dir.path() / "bad3.csv"), DataError);
  }
}

}  // TEST_SUITE
