#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "volformer/core/op_counter.hpp"
#include "volformer/layers/attention.hpp"
#include "volformer/layers/conv_block.hpp"
#include "volformer/layers/data_norm.hpp"
#include "volformer/layers/dense.hpp"

using namespace volformer;
using volformer::testing::gradcheck;
using volformer::testing::random_tensor;
using volformer::testing::relative_error;
using volformer::testing::weighted_sum;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void randomize(Tensor<double>& t, Rng& rng, double scale = 0.5) {
  rng.fill_uniform(t.mutable_data(), -scale, scale);
}

void fill(Tensor<double>& t, double value) {
  for (double& v : t.mutable_data()) v = value;
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

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("data_norm examples") {
  auto out = data_norm(Tensor<double>(Shape{3, 1, 1}, {1, 2, 3})).to_vector();
  const double expected = 1.0 / std::sqrt(2.0 / 3.0);
  CHECK(out[0] == doctest::Approx(-expected).epsilon(1e-5));
  CHECK(out[1] == doctest::Approx(0.0));
  CHECK(out[2] == doctest::Approx(expected).epsilon(1e-5));

  Tensor<double> flat(Shape{2, 2, 2}, 4.5);
  CHECK(is_degenerate_volume(flat));
  CHECK(data_norm(flat).to_vector() == std::vector<double>(8, 0.0));

  CHECK_THROWS_AS(data_norm(Tensor<double>(Shape{1, 1, 1}, 3.0)), ContractError);
}

TEST_CASE("data_norm moments, affine invariance and idempotence") {
  Rng rng(11);
  Tensor<double> v(Shape{4, 5, 3});
  rng.fill_normal(v.mutable_data(), 3.0, 2.0);
  auto out = data_norm(v).to_vector();
  double m = 0, s = 0;
  for (double x : out) m += x;
  m /= double(out.size());
  for (double x : out) s += (x - m) * (x - m);
  s /= double(out.size());
  CHECK(std::abs(m) < 1e-5);
  CHECK(std::abs(s - 1.0) < 1e-5);

  Tensor<double> shifted(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) shifted.mutable_data()[i] = 2 * v.data()[i] + 5;
  CHECK(max_abs_diff(data_norm(shifted).to_vector(), out) < 1e-5);
  CHECK(max_abs_diff(data_norm(data_norm(v)).to_vector(), out) < 1e-4);

  SUBCASE("batched volumes normalize independently") {
    Tensor<double> pair(Shape{2, 4, 5, 3});
    for (std::size_t i = 0; i < v.numel(); ++i) {
      pair.mutable_data()[i] = v.data()[i];
      pair.mutable_data()[v.numel() + i] = 10 * v.data()[i] - 7;
    }
    auto both = data_norm(pair).to_vector();
    CHECK(max_abs_diff(std::vector<double>(both.begin(), both.begin() + long(v.numel())), out) < 1e-5);
    CHECK(max_abs_diff(std::vector<double>(both.begin() + long(v.numel()), both.end()), out) < 1e-5);
  }
}

TEST_CASE("residual block identity and strides") {
  Rng rng(3);
  ResidualBlock<double> block(2, 2, 1, rng);
  CHECK_FALSE(block.has_projection());
  fill(block.conv1().weight(), 0);
  fill(block.conv2().weight(), 0);
  auto x = random_tensor({1, 2, 3, 4, 3}, 5, 0.0, 2.0, false);
  CHECK(max_abs_diff(block.forward(x, NormMode::train).to_vector(), x.to_vector()) < 1e-12);

  ResidualBlock<double> down(2, 4, 2, rng);
  CHECK(down.has_projection());
  auto y = down.forward(random_tensor({2, 2, 5, 4, 3}, 6), NormMode::train);
  CHECK(y.shape() == Shape{2, 4, 3, 2, 2});

  SUBCASE("stride-2 chain halves each extent") {
    ResidualBlock<float> a(1, 1, 2, rng), b(1, 1, 2, rng);
    Tensor<float> in(Shape{1, 1, 32, 32, 32}, 1.0f);
    auto mid = a.forward(in, NormMode::train);
    CHECK(mid.shape() == Shape{1, 1, 16, 16, 16});
    CHECK(b.forward(mid, NormMode::train).shape() == Shape{1, 1, 8, 8, 8});
  }

  SUBCASE("gradients") {
    ResidualBlock<double> small(1, 2, 2, rng);
    auto in = random_tensor({2, 1, 3, 3, 2}, 8);
    ParamSet<double> set;
    small.collect(set, "blk");
    std::vector<Tensor<double>> inputs{in};
    for (auto& [name, t] : set.params) inputs.push_back(t);
    double err = gradcheck([&] { return weighted_sum(small.forward(in, NormMode::train), 9); }, inputs);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("sga matches the loop oracle") {
  const std::size_t n = 8, c = 4, hs = 5, hc = 8;
  Rng rng(21);
  SgaBlock<double> block(n, c, hs, hc, rng);
  randomize(block.channel_out(), rng);
  auto x = random_tensor({n, c}, 22);
  auto expected = testing::sga_loop(x.to_vector(), n, c, block.spatial_in().to_vector(),
                                    block.spatial_out().to_vector(), hs, block.channel_in().to_vector(),
                                    block.channel_out().to_vector(), hc);
  CHECK(max_abs_diff(block.forward_tokens(x).to_vector(), expected) < 1e-6);

  SUBCASE("feature map layout agrees with token layout") {
    // map [1×C×2×2×2] holds token t, channel q at (q, t)
    Tensor<double> map(Shape{1, c, 2, 2, 2});
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t q = 0; q < c; ++q) map.mutable_data()[q * n + t] = x.data()[t * c + q];
    auto out = block.forward(map).to_vector();
    std::vector<double> as_tokens(n * c);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t q = 0; q < c; ++q) as_tokens[t * c + q] = out[q * n + t];
    CHECK(max_abs_diff(as_tokens, expected) < 1e-6);
  }

  SUBCASE("gradients") {
    ParamSet<double> set;
    block.collect(set, "sga");
    std::vector<Tensor<double>> inputs{x};
    for (auto& [name, t] : set.params) inputs.push_back(t);
    CHECK(gradcheck([&] { return weighted_sum(block.forward_tokens(x), 23); }, inputs) < 1e-4);
  }
}

TEST_CASE("sga identities") {
  Rng rng(31);
  SgaBlock<double> block(6, 3, 4, 6, rng);
  auto x = random_tensor({2, 6, 3}, 32);
  auto spatial = block.spatial_mix(permute(x, {0, 2, 1}));
  auto after = permute(spatial, {0, 2, 1});
  CHECK(block.channel_mix(after).to_vector() == after.to_vector());

  fill(block.spatial_in(), 0);
  fill(block.spatial_out(), 0);
  fill(block.channel_in(), 0);
  CHECK(block.forward_tokens(x).to_vector() == x.to_vector());

  CHECK_THROWS_AS(block.forward_tokens(random_tensor({5, 3}, 1)), DimensionError);
  CHECK_THROWS_AS(block.forward(random_tensor({1, 3, 2, 2, 2}, 1)), DimensionError);
}

TEST_CASE("dga matches the loop oracle") {
  const std::size_t n = 6, c = 8, k = 2;
  Rng rng(41);
  DgaBlock<double> block(n, c, k, 4 * c, rng);
  randomize(block.proj(), rng);
  randomize(block.b1(), rng, 0.1);
  randomize(block.b2(), rng, 0.1);
  auto x = random_tensor({n, c}, 42);
  std::vector<double> oracle_masks;
  auto expected = testing::dga_loop(x.to_vector(), n, snapshot(block, c), &oracle_masks);
  std::vector<Tensor<double>> masks;
  auto out = block.forward_tokens(x, &masks);
  CHECK(out.shape() == Shape{n, c});
  CHECK(max_abs_diff(out.to_vector(), expected) < 1e-5);
  REQUIRE(masks.size() == 1);
  CHECK(masks[0].shape() == Shape{k, n, n});
  CHECK(max_abs_diff(masks[0].to_vector(), oracle_masks) < 1e-9);

  SUBCASE("gradients") {
    ParamSet<double> set;
    block.collect(set, "dga");
    std::vector<Tensor<double>> inputs{x};
    for (auto& [name, t] : set.params) inputs.push_back(t);
    CHECK(gradcheck([&] { return weighted_sum(block.forward_tokens(x), 43); }, inputs) < 1e-4);
  }

  SUBCASE("feed-forward hidden width and gradient") {
    CHECK(block.ff1().shape() == Shape{c, 4 * c});
    std::vector<Tensor<double>> inputs{x, block.ff1(), block.b1(), block.ff2(), block.b2()};
    CHECK(gradcheck([&] { return weighted_sum(block.feed_forward(x), 44); }, inputs) < 1e-4);
  }
}

TEST_CASE("dga initialization and identities") {
  const std::size_t n = 5, c = 4;
  Rng rng(51);
  DgaBlock<double> block(n, c, 2, 16, rng);
  auto x = random_tensor({2, n, c}, 52);
  auto z0 = add(x, block.position());
  CHECK(add(z0, block.msa(z0)).to_vector() == z0.to_vector());

  fill(block.position(), 0);
  fill(block.ff1(), 0);
  fill(block.ff2(), 0);
  CHECK(block.feed_forward(x).to_vector() == std::vector<double>(x.numel(), 0.0));
  CHECK(block.forward_tokens(x).to_vector() == x.to_vector());

  CHECK_THROWS_AS(DgaBlock<double>(n, 6, 4, 8, rng), DimensionError);
  CHECK_THROWS_AS(block.forward_tokens(random_tensor({4, c}, 1)), DimensionError);
  block.proj() = trainable<double>({3, c}, 0.0);
  CHECK_THROWS_AS(block.msa(x), DimensionError);
}

TEST_CASE("attention masks are row-stochastic") {
  Rng rng(61);
  const std::size_t n = 7, c = 8;
  DgaBlock<double> block(n, c, 4, 8, rng);

  auto rows_sum_to_one = [&](const Tensor<double>& m) {
    const std::size_t len = m.size(2);
    for (std::size_t r = 0; r < m.numel() / len; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const double p = m.data()[r * len + j];
        if (!std::isfinite(p) || p < 0) return false;
        total += p;
      }
      if (std::abs(total - 1) > 1e-6) return false;
    }
    return true;
  };

  for (double magnitude : {1.0, 1e4}) {
    auto x = random_tensor({3, n, c}, 62, -magnitude, magnitude, false);
    std::vector<Tensor<double>> masks;
    block.msa(x, &masks);
    CHECK(rows_sum_to_one(masks[0]));
  }

  SUBCASE("identical rows give uniform attention") {
    Tensor<double> same(Shape{n, c});
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t q = 0; q < c; ++q) same.mutable_data()[t * c + q] = 0.3 * double(q) - 1;
    std::vector<Tensor<double>> masks;
    block.msa(same, &masks);
    for (double p : masks[0].data()) CHECK(p == doctest::Approx(1.0 / n).epsilon(1e-12));
  }

  SUBCASE("single token attends to itself") {
    DgaBlock<double> single(1, c, 2, 8, rng);
    std::vector<Tensor<double>> masks;
    single.forward_tokens(random_tensor({1, c}, 63), &masks);
    CHECK(masks[0].to_vector() == std::vector<double>{1.0, 1.0});
  }

  SUBCASE("logits are scaled by the square root of the head width") {
    auto z = random_tensor({n, c}, 64, -1, 1, false);
    std::vector<Tensor<double>> masks;
    block.msa(z, &masks);
    const std::size_t ch = block.head_width(), cols = block.qkv().size(1);
    auto w = block.qkv().to_vector();
    auto zv = z.to_vector();
    auto project = [&](std::size_t t, std::size_t col) {
      double acc = 0;
      for (std::size_t q = 0; q < c; ++q) acc += zv[t * c + q] * w[q * cols + col];
      return acc;
    };
    double worst = 0;
    for (std::size_t h = 0; h < block.heads(); ++h)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> raw(n);
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t e = 0; e < ch; ++e) s += project(i, h * 3 * ch + e) * project(j, h * 3 * ch + ch + e);
          raw[j] = s;
        }
        double total = 0;
        for (double r : raw) total += std::exp(r / std::sqrt(double(ch)));
        for (std::size_t j = 0; j < n; ++j) {
          const double expected = std::exp(raw[j] / std::sqrt(double(ch))) / total;
          worst = std::max(worst, std::abs(masks[0].data()[(h * n + i) * n + j] - expected));
        }
      }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("classifier head") {
  Rng rng(71);
  ClassifierHead<double> head(4, 3, rng);
  fill(head.fc().weight(), 0);
  auto probs = head.classify(random_tensor({4}, 72)).to_vector();
  for (double p : probs) CHECK(p == doctest::Approx(1.0 / 3));

  ClassifierHead<double> binary(2, 2, rng);
  binary.fc().weight() = Tensor<double>(Shape{2, 2}, {1, -1, 0, 0});
  fill(binary.fc().bias(), 0);
  auto saturated = binary.classify(Tensor<double>(Shape{2}, {10, 0}));
  CHECK(saturated.data()[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(cross_entropy(saturated, 0).item() < 1e-8);

  auto batch = head.classify(random_tensor({5, 4}, 73));
  CHECK(batch.shape() == Shape{5, 3});
  CHECK_THROWS_AS(ClassifierHead<double>(4, 1, rng), ContractError);
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(Tensor<double>(Shape{2}, {1, 0}), 0).item() == 0.0);
  CHECK(cross_entropy(Tensor<double>(Shape{4}, 0.25), 2).item() == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(cross_entropy(Tensor<double>(Shape{2}, 0.5), 2), IndexError);

  auto logits = random_tensor({1, 4}, 81);
  backward(softmax_cross_entropy(logits, {2}));
  auto p = softmax(logits, 1).to_vector();
  p[2] -= 1;
  CHECK(relative_error(logits.grad(), p) < 1e-6);
  auto fresh = random_tensor({3, 4}, 82);
  CHECK(gradcheck([&] { return softmax_cross_entropy(fresh, {0, 3, 1}); }, {fresh}) < 1e-6);
}

TEST_CASE("mlp") {
  Rng rng(91);
  Mlp<double> mlp({6, 5, 3}, rng);
  auto x = random_tensor({2, 6}, 92);
  CHECK(mlp.forward(x).shape() == Shape{2, 3});
  ParamSet<double> set;
  mlp.collect(set, "mlp");
  CHECK(set.parameter_count() == 6 * 5 + 5 + 5 * 3 + 3);
  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, t] : set.params) inputs.push_back(t);
  CHECK(gradcheck([&] { return weighted_sum(mlp.forward(x), 93); }, inputs) < 1e-4);
}

TEST_CASE("global attention cost growth") {
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
  CHECK(sga_ratio <= 2.2);
  CHECK(sga_ratio >= 1.8);
  CHECK(dga_ratio >= 3.5);

  Rng rng(2);
  ParamSet<float> small, large;
  SgaBlock<float>(512, 8, 32, 16, rng).collect(small, "");
  SgaBlock<float>(1024, 8, 32, 16, rng).collect(large, "");
  CHECK(double(large.parameter_count()) / double(small.parameter_count()) <= 2.2);
}

}  // TEST_SUITE
