#include <random>

#include "artoveq/vq_layer.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace artoveq;
using grad::Shape;
using grad::Tensor;
using grad::Var;

namespace {

NestedCodebook<float> random_codebook(std::size_t dim, std::size_t levels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim << levels);
  for (auto& x : v) x = g(rng);
  return NestedCodebook<float>(dim, levels, v);
}

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += double(a[j] - b[j]) * double(a[j] - b[j]);
  return s;
}

}  // namespace

TEST_CASE("nearest codeword") {
  const std::vector<float> two{0, 0, 1, 1};
  const std::vector<float> x{0.1f, 0.1f};
  CHECK(nearest_codeword<float>(x, CodewordView<float>(two, 2)).index == 0);

  const auto cb = random_codebook(3, 4, 2);
  const auto c3 = cb.codewords()[3];
  const auto hit = nearest_codeword<float>(c3, cb.codewords());
  CHECK(hit.index == 3);
  CHECK(hit.distance == 0.0);

  std::mt19937_64 rng(4);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> p(3);
    for (auto& v : p) v = g(rng);
    const auto got = nearest_codeword<float>(p, cb.codewords());
    for (std::size_t k = 0; k < 16; ++k) {
      REQUIRE(sq_dist(p, cb.codewords()[got.index]) <= sq_dist(p, cb.codewords()[k]));
    }
  }
  CHECK_THROWS(nearest_codeword<float>(x, CodewordView<float>()));
}

TEST_CASE("bit accounting across segment levels") {
  const auto cb = random_codebook(2, 8, 6);
  FeatureBlock<float> block(std::vector<float>(8, 0.3f), 2);
  REQUIRE(block.segment_count() == 4);

  const std::vector<std::size_t> flat{3, 3, 3, 3};
  CHECK(quantize_block(block, cb, std::span<const std::size_t>(flat)).bits_used == 12);
  const std::vector<std::size_t> mixed{4, 3, 2, 1};
  const auto r = quantize_block(block, cb, std::span<const std::size_t>(mixed));
  CHECK(r.bits_used == 10);
  for (std::size_t m = 0; m < 4; ++m) {
    CHECK(r.indices[m] < (1 << mixed[m]));
    CHECK(r.per_segment_levels[m] == mixed[m]);
  }

  std::vector<bool> seen(33, false);
  for (std::size_t a = 1; a <= 8; ++a)
    for (std::size_t b = 1; b <= 8; ++b)
      for (std::size_t c = 1; c <= 8; ++c)
        for (std::size_t d = 1; d <= 8; ++d) seen[a + b + c + d] = true;
  for (std::size_t bits = 4; bits <= 32; ++bits) CHECK(seen[bits]);

  const std::vector<std::size_t> bad{0, 1, 1, 1};
  CHECK_THROWS(quantize_block(block, cb, std::span<const std::size_t>(bad)));
  const std::vector<std::size_t> too_high{9, 1, 1, 1};
  CHECK_THROWS(quantize_block(block, cb, std::span<const std::size_t>(too_high)));
}

TEST_CASE("nested distortion never grows with level") {
  const auto cb = random_codebook(2, 6, 8);
  std::mt19937_64 rng(10);
  std::normal_distribution<float> g(0.0f, 1.5f);
  std::vector<float> f(2 * 20);
  for (auto& v : f) v = g(rng);
  FeatureBlock<float> block(f, 2);
  std::vector<double> prev(20, 1e300);
  for (std::size_t l = 1; l <= 6; ++l) {
    const std::vector<std::size_t> levels(20, l);
    const auto r = quantize_block(block, cb, std::span<const std::size_t>(levels));
    for (std::size_t m = 0; m < 20; ++m) {
      const double d = sq_dist(block.segment(m), r.segment(m));
      CHECK(d <= prev[m]);
      prev[m] = d;
    }
  }
}

TEST_CASE("progressive quantization uses the materialized table") {
  ProgressiveCodebook<float> pcb(2, {{0, 0, 1, 0}, {0, 0, 0, 1}});
  FeatureBlock<float> block(std::vector<float>{0.9f, 0.8f, 0.1f, 0.2f}, 2);
  const std::vector<std::size_t> levels{2, 1};
  const auto r = quantize_block(block, pcb, std::span<const std::size_t>(levels));
  CHECK(r.indices == std::vector<std::int32_t>{3, 0});
  CHECK(r.quantized == std::vector<float>{1, 1, 0, 0});
  CHECK(r.bits_used == 3);
}

TEST_CASE("straight-through forward and backward") {
  auto x = Var<double>::parameter(Tensor<double>::from_vector({0.4, -0.2}));
  const auto z = Tensor<double>::from_vector({1.0, 0.0});
  const auto c = Tensor<double>::from_vector({0.5, 0.5});
  auto out = straight_through(x, z);
  CHECK(out.value() == z);
  grad::backward(grad::squared_l2_norm(grad::sub(out, Var<double>::constant(c))));
  CHECK(x.grad()[0] == 2 * (1.0 - 0.5));
  CHECK(x.grad()[1] == 2 * (0.0 - 0.5));

  // z == x behaves as a no-op.
  auto y = Var<double>::parameter(Tensor<double>::from_vector({0.3, 0.7}));
  auto same = straight_through(y, y.value());
  CHECK(same.value() == y.value());
  grad::backward(grad::sum(grad::mul(same, same)));
  CHECK(y.grad()[0] == doctest::Approx(0.6));
  CHECK(y.grad()[1] == doctest::Approx(1.4));
}

TEST_CASE("straight-through matches the x + sg(z - x) surrogate bit for bit") {
  std::mt19937_64 rng(21);
  const auto w0 = support::random_tensor({3, 4}, rng);
  const auto input = support::random_tensor({5, 3}, rng);
  const auto z = support::random_tensor({5, 4}, rng);
  const auto head = support::random_tensor({4, 2}, rng);

  auto run = [&](bool surrogate) {
    auto w = Var<double>::parameter(w0);
    auto x = grad::matmul(Var<double>::constant(input), w);
    Var<double> q = surrogate
                        ? grad::add(x, grad::stop_gradient(grad::sub(Var<double>::constant(z), x)))
                        : straight_through(x, z);
    const std::vector<std::int32_t> labels{0, 1, 1, 0, 1};
    grad::backward(grad::cross_entropy<double>(grad::matmul(q, Var<double>::constant(head)), labels));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto a = run(false);
  const auto b = run(true);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("codebook and commitment terms") {
  auto x = Var<double>::parameter(Tensor<double>::from_vector({1, 0}));
  auto z = Var<double>::parameter(Tensor<double>::from_vector({0, 0}));
  const auto t = vq_loss_terms(x, z, 0.25);
  CHECK(t.total().value().item() == doctest::Approx(1.25));
  CHECK(t.codebook_term.value().item() == doctest::Approx(1.0));

  auto same = vq_loss_terms(x, Var<double>::constant(x.value()), 0.25);
  CHECK(same.total().value().item() == 0.0);

  // Codeword side only sees the first term, encoder side only the second.
  std::mt19937_64 rng(3);
  const auto xv = support::random_tensor({2}, rng);
  const auto zv = support::random_tensor({2}, rng);
  auto xs = Var<double>::parameter(xv);
  auto zs = Var<double>::parameter(zv);
  grad::backward(vq_loss_terms(xs, zs, 0.4).total());
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(zs.grad()[j] == doctest::Approx(2 * (zv[j] - xv[j])));
    CHECK(xs.grad()[j] == doctest::Approx(0.8 * (xv[j] - zv[j])));
  }
  CHECK(support::max_fd_error({xv, zv}, [](const std::vector<Var<double>>& v) {
          return grad::add(grad::squared_l2_norm(grad::sub(v[0], v[1])),
                           grad::scale(grad::squared_l2_norm(grad::sub(v[0], v[1])), 0.4));
        }) < 1e-4);
}

TEST_CASE("prefix drift penalty") {
  NestedCodebook<double> cb(2, 2, {0, 0, 1, 1, 2, 2, 3, 3});
  const auto snap = snapshot_prefix(cb, 2);
  CHECK(drift_penalty(cb.parameter(), snap).value().item() == 0.0);

  const std::vector<double> moved{1.3, 1.4};
  cb.set_codeword(1, moved);
  const std::vector<double> far{9, 9};
  cb.set_codeword(3, far);  // outside the prefix
  auto pen = drift_penalty(cb.parameter(), snap);
  CHECK(pen.value().item() == doctest::Approx(0.25));
  grad::backward(pen);
  CHECK(cb.parameter().grad()[2] == doctest::Approx(0.6));
  CHECK(cb.parameter().grad()[6] == 0.0);

  const auto empty = snapshot_prefix(cb, 0);
  CHECK(drift_penalty(cb.parameter(), empty).value().item() == 0.0);
  CHECK_THROWS(snapshot_prefix(cb, 5));
}

TEST_CASE("differentiable progressive table equals the materialized one") {
  ProgressiveCodebook<double> pcb(2, 4);
  std::mt19937_64 rng(14);
  for (std::size_t l = 1; l <= 4; ++l) pcb.randomize(l, rng);
  std::vector<Var<double>> pairs;
  for (std::size_t l = 1; l <= 4; ++l) pairs.push_back(pcb.pair(l));
  for (std::size_t l = 1; l <= 4; ++l) {
    CHECK(materialize_graph<double>(pairs, l).value() == pcb.materialize(l));
  }
}

TEST_CASE("loss configuration defaults") {
  const auto cfg = LossConfig::defaults(4);
  CHECK(cfg.beta_per_level == std::vector<double>(4, 0.25));
  CHECK(cfg.eta_per_level[1] == 1.0);
  CHECK_NOTHROW(cfg.validate(4));
  CHECK_THROWS(cfg.validate(5));
  auto bad = cfg;
  bad.beta_per_level[2] = 0.0;
  CHECK_THROWS(bad.validate(4));
}
