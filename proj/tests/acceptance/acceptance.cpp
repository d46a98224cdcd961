// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "volformer/cli/app.hpp"
#include "volformer/core/binary_io.hpp"
#include "volformer/core/log.hpp"
#include "volformer/core/op_counter.hpp"
#include "volformer/data/preprocess.hpp"
#include "volformer/data/synthetic.hpp"
#include "volformer/layers/attention.hpp"
#include "volformer/layers/data_norm.hpp"
#include "volformer/localize/grad_cam.hpp"
#include "volformer/model/checkpoint.hpp"
#include "volformer/model/cost.hpp"
#include "volformer/model/network.hpp"
#include "volformer/train/trainer.hpp"

using namespace volformer;
using volformer::testing::gradcheck;
using volformer::testing::random_tensor;
using volformer::testing::TempDir;
using volformer::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void randomize(Tensor<double>& t, Rng& rng, double scale = 0.5) { rng.fill_uniform(t.mutable_data(), -scale, scale); }

/// Uniform magnitudes in [0.1, 1] with random sign, away from the relu kink.
Tensor<double> off_kink_tensor(Shape shape, std::uint64_t seed) {
  Tensor<double> t = random_tensor(std::move(shape), seed, 0.1, 1.0);
  Rng signs(seed + 1);
  for (double& v : t.mutable_data())
    if (signs.uniform(0.0, 1.0) < 0.5) v = -v;
  return t;
}

testing::AttentionWeights snapshot(DgaBlock<double>& block, std::size_t channels) {
  testing::AttentionWeights wt;
  wt.heads = block.heads();
  wt.head_width = block.head_width();
  wt.channels = channels;
  wt.ff_hidden = block.ff_hidden();
  wt.pos = block.position().to_vector();
  wt.qkv = block.qkv().to_vector();
  wt.proj = block.proj().to_vector();
  wt.ff1 = block.ff1().to_vector();
  wt.b1 = block.b1().to_vector();
  wt.ff2 = block.ff2().to_vector();
  wt.b2 = block.b2().to_vector();
  return wt;
}

Extent3 nearest_voxel(const std::array<double, 3>& center) {
  return {std::size_t(std::lround(center[0])), std::size_t(std::lround(center[1])),
          std::size_t(std::lround(center[2]))};
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

Outcome gradients() {
  const auto start = Clock::now();
  std::vector<std::pair<std::string, double>> errors;
  auto check = [&](const std::string& name, const std::function<Tensor<double>()>& loss,
                   std::vector<Tensor<double>> inputs) { errors.emplace_back(name, gradcheck(loss, inputs)); };

  auto a = random_tensor({2, 3, 4}, 1);
  auto b = random_tensor({3, 1}, 2);
  auto pos = random_tensor({2, 3, 4}, 3, 0.5, 2.0);
  auto pos_b = random_tensor({3, 1}, 4, 0.5, 1.5);
  auto kinked = off_kink_tensor({2, 3, 4}, 5);
  check("add", [&] { return weighted_sum(add(a, b), 10); }, {a, b});
  check("sub", [&] { return weighted_sum(sub(a, b), 11); }, {a, b});
  check("mul", [&] { return weighted_sum(mul(a, b), 12); }, {a, b});
  check("div", [&] { return weighted_sum(div(a, pos_b), 13); }, {a, pos_b});
  check("scale", [&] { return weighted_sum(scale(a, 1.7), 14); }, {a});
  check("add_scalar", [&] { return weighted_sum(add_scalar(a, -0.3), 15); }, {a});
  check("relu", [&] { return weighted_sum(relu(kinked), 16); }, {kinked});
  check("sqrt", [&] { return weighted_sum(sqrt(pos), 17); }, {pos});
  check("exp", [&] { return weighted_sum(exp(a), 18); }, {a});
  check("log", [&] { return weighted_sum(log(pos), 19); }, {pos});
  check("sum", [&] { return scale(sum(mul(a, a)), 0.5); }, {a});
  check("mean", [&] { return weighted_sum(mean(a, {0, 2}), 20); }, {a});
  check("variance", [&] { return weighted_sum(variance(a, {1}), 21); }, {a});
  check("reshape", [&] { return weighted_sum(reshape(a, {4, 6}), 22); }, {a});
  check("permute", [&] { return weighted_sum(permute(a, {2, 0, 1}), 23); }, {a});
  check("narrow", [&] { return weighted_sum(narrow(a, 2, 1, 2), 24); }, {a});
  auto c = random_tensor({2, 2, 4}, 6);
  check("concat", [&] { return weighted_sum(concat<double>({a, c}, 1), 25); }, {a, c});
  auto m1 = random_tensor({3, 5}, 7);
  auto m2 = random_tensor({5, 4}, 8);
  check("matmul", [&] { return weighted_sum(matmul(m1, m2), 26); }, {m1, m2});
  auto b1 = random_tensor({2, 3, 5}, 9);
  auto b2 = random_tensor({2, 5, 4}, 30);
  auto b3 = random_tensor({2, 4, 5}, 31);
  check("bmm", [&] { return weighted_sum(bmm(b1, b2), 27); }, {b1, b2});
  check("bmm_transpose", [&] { return weighted_sum(bmm(b1, b3, true), 28); }, {b1, b3});
  check("softmax", [&] { return weighted_sum(softmax(a, 1), 29); }, {a});
  auto vol = random_tensor({2, 2, 5, 4, 5}, 32);
  auto kernel = random_tensor({3, 2, 3, 3, 3}, 33);
  check("conv3d", [&] { return weighted_sum(conv3d(vol, kernel, 2, 1), 34); }, {vol, kernel});
  auto gamma = random_tensor({2}, 35, 0.5, 1.5);
  auto beta = random_tensor({2}, 36);
  check("batch_norm",
        [&] {
          RunningStats<double> stats(2);
          return weighted_sum(batch_norm(vol, gamma, beta, stats, NormMode::train), 37);
        },
        {vol, gamma, beta});
  check("avg_pool_global", [&] { return weighted_sum(avg_pool_global(vol), 38); }, {vol});
  auto logits = random_tensor({4}, 39);
  check("cross_entropy", [&] { return cross_entropy(softmax(logits, 0), 2); }, {logits});
  auto batch_logits = random_tensor({3, 2}, 40);
  check("softmax_cross_entropy", [&] { return softmax_cross_entropy(batch_logits, {0, 1, 1}, {0.7, 1.3}); },
        {batch_logits});
  auto raw = random_tensor({2, 3, 4, 3}, 41, -2.0, 3.0);
  check("data_norm", [&] { return weighted_sum(data_norm(raw), 42); }, {raw});

  std::string worst_name;
  double worst = 0;
  for (const auto& [name, err] : errors)
    if (err >= worst) worst = err, worst_name = name;

  // Desk model end to end, sampled parameters.
  ModelConfig cfg = ModelConfig::desk();
  VolumeClassifier<double> model(cfg);
  Batch<double> batch;
  batch.fmri = Tensor<double>({2, cfg.input_extent[0], cfg.input_extent[1], cfg.input_extent[2]});
  Rng(4).fill_normal(batch.fmri.mutable_data(), 0.0, 1.0);
  ParamSet<double> set = model.state();
  Rng rng(5);
  for (auto& [name, t] : set.params)
    if (name.ends_with("channel_out") || name.ends_with("proj")) randomize(t, rng, 0.1);
  std::vector<Tensor<double>> params;
  for (auto& [name, t] : set.params) params.push_back(t);
  auto loss = [&] { return softmax_cross_entropy(model.logits(batch, NormMode::train), {0, 1}); };
  const double end_to_end = testing::sampled_gradcheck(loss, params, 10, 6);
  const double elapsed = seconds_since(start);

  Outcome o;
  o.pass = worst < 1e-4 && end_to_end < 1e-3 && elapsed < 60;
  o.detail = std::to_string(errors.size()) + " primitives, worst " + worst_name + fmt(" %.2e", worst) +
             fmt("; desk model %.2e", end_to_end) + fmt("; %.1f s", elapsed);
  return o;
}

// ---------------------------------------------------------------------------
// 2. architecture conformance

Outcome architecture() {
  const std::vector<Extent3> expected{{32, 36, 32}, {32, 36, 32}, {16, 18, 16}, {8, 9, 8}, {8, 9, 8}};
  const auto chain = shape_chain(ModelConfig::full());
  bool ok = chain.size() == expected.size();
  for (std::size_t i = 0; ok && i < chain.size(); ++i) ok = chain[i].extent == expected[i];

  // A real forward at the full input extent, with narrow widths.
  ModelConfig cfg = ModelConfig::full();
  cfg.stem_channels = 4;
  cfg.stage_channels = {4, 4, 4, 4};
  cfg.heads = 2;
  cfg.sga_hidden = 16;
  VolumeClassifier<float> model(cfg);
  Batch<float> batch;
  batch.fmri = Tensor<float>({1, 64, 72, 64});
  Rng(1).fill_normal(batch.fmri.mutable_data(), 0.0, 1.0);
  FeatureTrace<float> trace;
  model.logits(batch, NormMode::train, &trace);
  const std::vector<std::string> names{"stem", "stage1", "stage2", "stage3", "stage4"};
  std::string measured;
  for (std::size_t i = 0; i < names.size(); ++i) {
    bool found = false;
    for (const auto& [name, map] : trace.maps) {
      if (name != names[i]) continue;
      found = true;
      const Extent3 e{map.size(2), map.size(3), map.size(4)};
      ok = ok && e == expected[i];
      measured += (i ? " / " : "") + std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
    }
    ok = ok && found;
  }
  return {ok, "64x72x64 input gives " + measured};
}

// ---------------------------------------------------------------------------
// 3. data_norm affine invariance

Outcome affine_invariance() {
  Rng rng(303);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<float> v(Shape{16, 18, 16});
    rng.fill_normal(v.mutable_data(), 0.0, 1.0);
    const float a = float(rng.uniform(0.1, 10.0));
    const float b = float(rng.uniform(-5.0, 5.0));
    Tensor<float> moved(v.shape());
    for (std::size_t i = 0; i < v.numel(); ++i) moved.mutable_data()[i] = a * v.data()[i] + b;
    const auto x = data_norm(v).to_vector();
    const auto y = data_norm(moved).to_vector();
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, double(std::abs(x[i] - y[i])));
  }
  return {worst < 1e-4, "100 float volumes, max deviation" + fmt(" %.2e", worst)};
}

// ---------------------------------------------------------------------------
// 4. attention contracts

template <typename T>
double worst_row_error(const Tensor<T>& masks) {
  const std::size_t len = masks.shape().back();
  double worst = 0;
  for (std::size_t r = 0; r < masks.numel() / len; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < len; ++j) {
      const double p = double(masks.data()[r * len + j]);
      if (!std::isfinite(p) || p < 0) return INFINITY;
      total += p;
    }
    worst = std::max(worst, std::abs(total - 1));
  }
  return worst;
}

template <typename T>
double mask_rows(std::size_t n, std::size_t c, std::size_t heads, std::uint64_t seed) {
  Rng rng(seed);
  DgaBlock<T> block(n, c, heads, 4 * c, rng);
  double worst = 0;
  for (double magnitude : {1.0, 1e4}) {
    Tensor<T> x(Shape{2, n, c});
    rng.fill_uniform(x.mutable_data(), T(-magnitude), T(magnitude));
    std::vector<Tensor<T>> masks;
    block.forward_tokens(x, &masks);
    for (const auto& m : masks) worst = std::max(worst, worst_row_error(m));
  }
  return worst;
}

Outcome attention_contracts() {
  double worst = 0;
  worst = std::max(worst, mask_rows<float>(64, 16, 4, 1));
  worst = std::max(worst, mask_rows<float>(288, 32, 4, 2));
  worst = std::max(worst, mask_rows<double>(64, 16, 4, 3));

  Rng rng(4);
  SgaBlock<float> sga(72, 16, 32, 64, rng);
  Tensor<float> tokens(Shape{2, 72, 16});
  rng.fill_normal(tokens.mutable_data(), 0.0, 1.0);
  const bool sga_identity = sga.channel_mix(tokens).to_vector() == tokens.to_vector();

  DgaBlock<float> dga(72, 16, 4, 64, rng);
  Tensor<float> x(Shape{2, 72, 16});
  rng.fill_normal(x.mutable_data(), 0.0, 1.0);
  const Tensor<float> z0 = add(x, dga.position());
  const bool dga_identity = add(z0, dga.msa(z0)).to_vector() == z0.to_vector();

  Outcome o;
  o.pass = worst < 1e-6 && sga_identity && dga_identity;
  o.detail = fmt("worst mask row deviation %.2e", worst) + "; SGA channel-mix identity " +
             (sga_identity ? "exact" : "broken") + "; DGA z1==z0 " + (dga_identity ? "exact" : "broken");
  return o;
}

// ---------------------------------------------------------------------------
// 5. complexity ordering

Outcome complexity() {
  const std::vector<std::string> plans{"S-S-S-S", "S-S-S-D", "S-S-D-D", "S-D-D-D", "D-D-D-D"};
  std::vector<double> flops;
  std::string table;
  for (const auto& plan : plans) {
    ModelConfig cfg = ModelConfig::full();
    cfg.attention_plan = parse_plan(plan);
    flops.push_back(double(estimate_cost(cfg).flops));
    table += (table.empty() ? "" : ", ") + plan + fmt(" %.1f", flops.back() / 1e9);
  }
  bool ordered = true;
  for (std::size_t i = 0; i + 1 < flops.size(); ++i) ordered = ordered && flops[i] < flops[i + 1];

  auto sga_ops = [](std::size_t n) {
    Rng rng(1);
    SgaBlock<float> block(n, 8, 32, 16, rng);
    Tensor<float> x(Shape{n, 8}, 0.5f);
    ScopedOpCount scope;
    block.forward_tokens(x);
    return double(scope.elapsed());
  };
  auto dga_ops = [](std::size_t n) {
    Rng rng(1);
    DgaBlock<float> block(n, 8, 2, 32, rng);
    Tensor<float> x(Shape{n, 8}, 0.5f);
    ScopedOpCount scope;
    block.forward_tokens(x);
    return double(scope.elapsed());
  };
  const double sga_ratio = sga_ops(1024) / sga_ops(512);
  const double dga_ratio = dga_ops(1024) / dga_ops(512);

  Outcome o;
  o.pass = ordered && sga_ratio <= 2.2 && dga_ratio >= 3.5;
  o.detail = "GFLOPs " + table + fmt("; N doubling: SGA x%.2f", sga_ratio) + fmt(", DGA x%.2f", dga_ratio);
  return o;
}

// ---------------------------------------------------------------------------
// 6 and 7. synthetic end-to-end and localization

struct CvArtifacts {
  SyntheticSpec spec;
  Dataset data;
  ModelConfig model;
  FoldPlan plan;
  TempDir checkpoints;
  CvReport report;
  double seconds = 0;
};

std::unique_ptr<CvArtifacts>& cv_artifacts() {
  static std::unique_ptr<CvArtifacts> artifacts;
  if (!artifacts) {
    artifacts = std::make_unique<CvArtifacts>();
    auto& a = *artifacts;
    const auto start = Clock::now();
    a.data = generate_synthetic(a.spec);
    a.model = ModelConfig::desk();
    a.plan = plan_folds(a.data.subjects, 5, 0);
    CvOptions options;
    options.checkpoint_dir = a.checkpoints.path();
    a.report = cross_validate(a.data, a.plan, default_factory(a.model), TrainConfig{}, options);
    a.seconds = seconds_since(start);
  }
  return artifacts;
}

Outcome synthetic_end_to_end() {
  const auto& a = *cv_artifacts();
  const double accuracy = a.report.volume_accuracy().mean;

  ModelConfig ablated = a.model;
  ablated.use_data_norm = false;
  const CvReport site_out =
      cross_validate(a.data, plan_site_folds(a.data.subjects), default_factory(ablated), TrainConfig{});
  const double ablated_accuracy = site_out.volume_accuracy().mean;

  Outcome o;
  o.pass = accuracy >= 0.90 && a.seconds < 600 && accuracy - ablated_accuracy >= 0.15;
  o.detail = "5-fold volume accuracy " + format_mean_std(a.report.volume_accuracy()) + fmt(" in %.0f s", a.seconds) +
             "; without data norm, leave-site-out " + format_mean_std(site_out.volume_accuracy()) +
             fmt(" (%.1f points lower)", 100 * (accuracy - ablated_accuracy));
  return o;
}

Outcome localization() {
  const auto& a = *cv_artifacts();
  const auto blobs = a.spec.class_blobs();
  const auto layers = cam_layers(a.model);
  const std::string default_layer = layers.back();
  std::map<std::string, std::size_t> hits;
  std::size_t correct = 0;
  for (std::size_t f = 0; f < a.plan.fold_count; ++f) {
    auto model = load_network<float>(a.checkpoints.path() / ("fold" + std::to_string(f + 1) + ".vfck"));
    std::vector<std::size_t> train, test;
    a.plan.split(a.data.subjects, f, train, test);
    for (std::size_t s : test) {
      for (const auto& v : a.data.subjects[s].fmri_volumes) {
        const auto probs = forward_volume<float>(*model, v.volume).to_vector();
        const std::size_t predicted = argmax_lowest(std::vector<double>(probs.begin(), probs.end()));
        if (predicted != v.label) continue;
        ++correct;
        const Extent3 voxel = nearest_voxel(blobs[v.label].center);
        for (const auto& layer : layers)
          hits[layer] += in_top_fraction(grad_cam(*model, v.volume, predicted, layer), voxel, 0.05);
      }
    }
  }
  auto rate = [&](const std::string& layer) { return correct ? double(hits[layer]) / double(correct) : 0.0; };
  std::string per_layer;
  for (const auto& layer : layers) per_layer += (per_layer.empty() ? "" : ", ") + layer + fmt(" %.2f", rate(layer));

  Outcome o;
  o.pass = rate(default_layer) >= 0.8;
  o.detail = "top-5% hit rate at " + default_layer + fmt(" %.3f", rate(default_layer)) + " over " +
             std::to_string(correct) + " correctly classified test volumes (per layer: " + per_layer + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 8. brute-force oracles

Outcome oracles() {
  Rng rng(808);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + std::size_t(rng.below(hi - lo + 1)); };
  double conv_worst = 0, sga_worst = 0, dga_worst = 0, fc_worst = 0;

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cin = pick(1, 3), cout = pick(1, 3), k = pick(0, 1) ? 3 : 1, stride = pick(1, 2),
                      pad = k == 3 ? pick(0, 1) : 0;
    const std::size_t d = pick(3, 6), h = pick(3, 6), w = pick(3, 6);
    auto in = random_tensor({cin, d, h, w}, rng.below(1ull << 62), -1, 1, false);
    auto kernel = random_tensor({cout, cin, k, k, k}, rng.below(1ull << 62), -1, 1, false);
    std::size_t od, oh, ow;
    const auto expected =
        testing::conv3d_loop(in.to_vector(), cin, d, h, w, kernel.to_vector(), cout, k, stride, pad, od, oh, ow);
    conv_worst = std::max(conv_worst, max_abs_diff(conv3d(in, kernel, stride, pad).to_vector(), expected));
  }

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = pick(2, 12), c = pick(1, 6), hs = pick(1, 8), hc = pick(1, 8);
    Rng init(rng.below(1ull << 62));
    SgaBlock<double> block(n, c, hs, hc, init);
    randomize(block.channel_out(), init);
    auto x = random_tensor({n, c}, rng.below(1ull << 62), -1, 1, false);
    const auto expected = testing::sga_loop(x.to_vector(), n, c, block.spatial_in().to_vector(),
                                            block.spatial_out().to_vector(), hs, block.channel_in().to_vector(),
                                            block.channel_out().to_vector(), hc);
    sga_worst = std::max(sga_worst, max_abs_diff(block.forward_tokens(x).to_vector(), expected));
  }

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t heads = pick(1, 3), width = pick(1, 4), n = pick(2, 10);
    const std::size_t c = heads * width;
    Rng init(rng.below(1ull << 62));
    DgaBlock<double> block(n, c, heads, pick(1, 4) * c, init);
    randomize(block.proj(), init);
    randomize(block.b1(), init, 0.1);
    randomize(block.b2(), init, 0.1);
    auto x = random_tensor({n, c}, rng.below(1ull << 62), -1, 1, false);
    const auto expected = testing::dga_loop(x.to_vector(), n, snapshot(block, c));
    dga_worst = std::max(dga_worst, max_abs_diff(block.forward_tokens(x).to_vector(), expected));
  }

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = pick(2, 4), h = pick(2, 4), w = pick(2, 4), steps = pick(5, 30);
    const std::size_t voxels = d * h * w;
    const std::size_t p = pick(2, std::min<std::size_t>(6, voxels));
    Tensor<double> parc(Shape{d, h, w});
    for (std::size_t i = 0; i < voxels; ++i) parc.mutable_data()[i] = double(i < p ? i + 1 : pick(0, p));
    Tensor<double> series(Shape{steps, d, h, w});
    rng.fill_normal(series.mutable_data(), 0.0, 1.0);
    const FcResult fc = compute_fc(series, parc, p);

    std::vector<std::vector<double>> roi(p, std::vector<double>(steps, 0.0));
    std::vector<double> count(p, 0.0);
    for (std::size_t i = 0; i < voxels; ++i)
      if (parc.data()[i] > 0) count[std::size_t(parc.data()[i]) - 1] += 1;
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < voxels; ++i) {
        const auto label = std::size_t(parc.data()[i]);
        if (label > 0) roi[label - 1][t] += series.data()[t * voxels + i] / count[label - 1];
      }
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const double expected = i == j ? 1.0 : testing::pearson(roi[i], roi[j]);
        fc_worst = std::max(fc_worst, std::abs(fc.matrix.at({i, j}) - expected));
      }
  }

  Outcome o;
  o.pass = conv_worst < 1e-5 && sga_worst < 1e-5 && dga_worst < 1e-5 && fc_worst < 1e-5;
  o.detail = "200 trials each, max deviation conv3d" + fmt(" %.1e", conv_worst) + fmt(", SGA %.1e", sga_worst) +
             fmt(", DGA %.1e", dga_worst) + fmt(", compute_fc %.1e", fc_worst);
  return o;
}

// ---------------------------------------------------------------------------
// 9. determinism

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "volformer");
  std::ostringstream out, err;
  return run_cli(args, out, err);
}

/// Relative path → bytes for every regular file under `dir`.
std::map<std::string, std::vector<unsigned char>> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::vector<unsigned char>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file_bytes(e.path());
  return files;
}

Outcome determinism() {
  TempDir tmp;
  const fs::path root = tmp.path();
  {
    std::ofstream(root / "spec.json")
        << R"({"extent":[8,8,8],"site_count":2,"subjects_per_class_per_site":3,"volumes_per_subject":3,)"
        << R"("blob_radius":1.5,"with_smri":true,"with_fc":true})";
    std::ofstream(root / "config.json") << R"({
      "model": {"input_extent": [8,8,8], "stem_channels": 4, "stage_channels": [4,8], "stage_blocks": [1,1],
                "stage_strides": [1,2], "attention_plan": "S-D", "sga_hidden": 8, "heads": 2},
      "train": {"epochs": 2, "lr": 0.001, "lr_drop_epoch": 2, "batch_size": 4},
      "cv": {"folds": 3}})";
  }
  const std::string spec = (root / "spec.json").string(), config = (root / "config.json").string();
  auto path = [&](const std::string& name) { return (root / name).string(); };
  const std::vector<std::string> seeded{"--seed", "17", "--deterministic"};
  auto with_seed = [&](std::vector<std::string> args) {
    args.insert(args.end(), seeded.begin(), seeded.end());
    return args;
  };

  std::vector<std::string> failures;
  std::size_t compared = 0;
  auto twice = [&](const std::string& label, const std::function<std::vector<std::string>(const std::string&)>& args) {
    const int first = cli(args(label + "_a"));
    const int second = cli(args(label + "_b"));
    if (first != 0 || second != 0) {
      failures.push_back(label + " exit " + std::to_string(first) + "/" + std::to_string(second));
      return;
    }
    const auto a = directory_bytes(path(label + "_a"));
    const auto b = directory_bytes(path(label + "_b"));
    compared += a.size();
    if (a != b) failures.push_back(label + " outputs differ");
  };

  ScopedLogCapture quiet;
  twice("gen", [&](const std::string& out) { return with_seed({"gen", "--spec", spec, "--out", path(out)}); });
  const std::string manifest = path("gen_a") + "/manifest.csv";
  twice("cv", [&](const std::string& out) {
    auto args = with_seed({"cv", "--config", config, "--data", manifest, "--out", path(out)});
    if (out.ends_with("_b")) args.insert(args.end(), {"--jobs", "2"});
    return args;
  });
  twice("train",
        [&](const std::string& out) { return with_seed({"train", "--config", config, "--data", manifest, "--out", path(out)}); });
  const std::string ckpt = path("train_a") + "/model.vfck";
  twice("eval", [&](const std::string& out) {
    return with_seed({"eval", "--ckpt", ckpt, "--data", manifest, "--out", path(out)});
  });
  twice("localize", [&](const std::string& out) {
    return with_seed({"localize", "--config", config, "--ckpt", ckpt, "--data", manifest, "--spec",
                      path("gen_a") + "/spec.json", "--maps", "--out", path(out)});
  });

  Outcome o;
  o.pass = failures.empty();
  if (o.pass) {
    o.detail = "gen, cv (serial vs 2 jobs), train, eval, localize reruns: " + std::to_string(compared) +
               " files bit-identical";
  } else {
    for (const auto& f : failures) o.detail += (o.detail.empty() ? "" : "; ") + f;
  }
  return o;
}

// ---------------------------------------------------------------------------
// 10. fusion sanity

Outcome fusion() {
  SyntheticSpec spec;
  spec.subjects_per_class_per_site = 4;
  spec.volumes_per_subject = 4;
  spec.blob_amplitude = 1e-3;
  spec.pheno_class_signal = 3.0;
  spec.with_smri = true;
  spec.with_fc = true;
  spec.seed = 3;
  const Dataset data = generate_synthetic(spec);
  const FoldPlan plan = plan_folds(data.subjects, 4, 0);
  TrainConfig train;
  train.epochs = 6;
  train.batch_size = 4;
  train.lr = 1e-3;
  train.lr_drop_epoch = 6;

  ModelConfig fmri_only = ModelConfig::desk();
  ModelConfig four = fmri_only;
  four.use_smri = four.use_fc = four.use_pheno = true;
  four.fc_input_dim = fc_feature_dim(spec.fc_rois, four.fc_upper_triangle);
  four.pheno_input_dim = spec.pheno_dim;

  ScopedLogCapture quiet;
  const CvReport base = cross_validate(data, plan, default_factory(fmri_only), train);
  const CvReport fused = cross_validate(data, plan, default_factory(four), train);

  // Nearest class mean of the phenotype average, fit on each training fold.
  std::size_t right = 0, total = 0;
  for (std::size_t f = 0; f < plan.fold_count; ++f) {
    std::vector<std::size_t> tr, te;
    plan.split(data.subjects, f, tr, te);
    auto score = [&](std::size_t s) {
      double m = 0;
      for (float v : data.subjects[s].phenotype) m += v;
      return m / double(data.subjects[s].phenotype.size());
    };
    std::vector<double> sums(2, 0.0), counts(2, 0.0);
    for (std::size_t s : tr) sums[data.subjects[s].label] += score(s), counts[data.subjects[s].label] += 1;
    for (std::size_t s : te) {
      const double x = score(s);
      const std::size_t guess = std::abs(x - sums[1] / counts[1]) < std::abs(x - sums[0] / counts[0]) ? 1 : 0;
      right += (guess == data.subjects[s].label) * data.subjects[s].fmri_volumes.size();
      total += data.subjects[s].fmri_volumes.size();
    }
  }

  const double a = fused.volume_accuracy().mean, b = base.volume_accuracy().mean;
  Outcome o;
  o.pass = a >= b;
  o.detail = "phenotype-driven labels: four-modality " + format_mean_std(fused.volume_accuracy()) + " vs fMRI-only " +
             format_mean_std(base.volume_accuracy()) + fmt("; phenotype-only reference %.3f", double(right) / double(total));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"architecture conformance", architecture},
      {"data_norm affine invariance", affine_invariance},
      {"attention contracts", attention_contracts},
      {"complexity ordering", complexity},
      {"synthetic end-to-end", synthetic_end_to_end},
      {"localization", localization},
      {"brute-force oracles", oracles},
      {"determinism", determinism},
      {"fusion sanity", fusion},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    const auto start = Clock::now();
    try {
      ScopedLogCapture quiet;
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << fmt(" [%.1f s]", seconds_since(start)) << std::endl;
  }
  return all ? 0 : 1;
}
