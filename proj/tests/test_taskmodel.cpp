#include <cmath>
#include <filesystem>

#include "artoveq/io.hpp"
#include "artoveq/taskmodel.hpp"
#include "artoveq/training.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace artoveq;

namespace {

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.encoder_hidden = {6};
  spec.decoder_hidden = {5};
  spec.segment_dim = 2;
  spec.segments = 4;
  spec.classes = 10;
  return spec;
}

template <typename T>
void zero_mlp(Mlp<T>& mlp) {
  for (auto& l : mlp.layers()) {
    for (auto& v : l.weight.mutable_value().values()) v = T{0};
    for (auto& v : l.bias.mutable_value().values()) v = T{0};
  }
}

}  // namespace

TEST_CASE("encoder output splits into contiguous segments") {
  TaskModel<float> model(small_spec(), 3);
  const std::vector<float> x{0.5f, -1.0f, 2.0f};
  const auto block = model.encode(x);
  CHECK(block.segment_count() == 4);
  CHECK(block.source().size() == 8);
  std::vector<float> joined;
  for (std::size_t m = 0; m < 4; ++m) {
    const auto s = block.segment(m);
    joined.insert(joined.end(), s.begin(), s.end());
  }
  CHECK(joined == block.source());

  const auto batch = model.encode_batch(grad::Tensor<float>(grad::Shape{1, 3}, x));
  CHECK(batch.storage() == block.source());
  CHECK(model.encode(x).source() == block.source());

  zero_mlp(model.encoder());
  const auto zeroed = model.encode(x);
  for (auto v : zeroed.source()) CHECK(v == 0.0f);

  const std::vector<float> wrong{1.0f, 2.0f};
  CHECK_THROWS(model.encode(wrong));
  CHECK_THROWS(model.decode(wrong));
}

TEST_CASE("argmax prefers the lowest index on ties") {
  const std::vector<double> a{0.2, 0.9};
  CHECK(argmax<double>(a) == 1);
  const std::vector<double> b{0.5, 0.5, 0.1};
  CHECK(argmax<double>(b) == 0);
}

TEST_CASE("warm-start loss values") {
  TaskModel<double> model(small_spec(), 5);
  zero_mlp(model.decoder());
  std::vector<LabeledSample> batch;
  for (int c = 0; c < 10; ++c) batch.push_back({{0.1f * c, 1.0f, -0.5f}, c});
  CHECK(warmstart_loss<double>(model, batch).value().item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // Decoder output bias alone separates class 3 by a margin of 20.
  auto& last = model.decoder().layers().back();
  last.bias.mutable_value()[3] = 20.0;
  const std::vector<LabeledSample> three{{{0.0f, 0.0f, 0.0f}, 3}};
  CHECK(warmstart_loss<double>(model, three).value().item() < 1e-6);
  CHECK(model.decode(std::vector<double>(8, 0.0)).label == 3);

  const std::vector<LabeledSample> empty;
  CHECK_THROWS(warmstart_loss<double>(model, empty));
}

TEST_CASE("batch loss is the mean of per-sample losses") {
  TaskModel<double> model(small_spec(), 8);
  std::vector<LabeledSample> batch{{{0.3f, 0.1f, -0.2f}, 1}, {{1.0f, -1.0f, 0.5f}, 7}, {{0.0f, 2.0f, 0.0f}, 4}};
  double acc = 0.0;
  for (const auto& s : batch) {
    acc += warmstart_loss<double>(model, std::span<const LabeledSample>(&s, 1)).value().item();
  }
  CHECK(warmstart_loss<double>(model, batch).value().item() == doctest::Approx(acc / 3).epsilon(1e-12));
}

TEST_CASE("unquantized evaluation is decode(encode(x))") {
  TaskModel<float> model(small_spec(), 2);
  Dataset data(3, 10);
  for (int i = 0; i < 30; ++i) {
    const std::vector<float> x{0.1f * i, std::sin(float(i)), -0.05f * i};
    data.add(x, i % 10);
  }
  const auto r = evaluate_unquantized(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto f = model.encode(data.features(i));
    const auto p = model.decode(f.source());
    if (static_cast<std::int32_t>(p.label) == data.label(i)) ++correct;
    CHECK(r.correct[i] == (static_cast<std::int32_t>(p.label) == data.label(i)));
  }
  CHECK(r.accuracy == doctest::Approx(double(correct) / 30.0));
}

TEST_CASE("a separable two-class set is fit within 200 steps") {
  NetworkSpec spec;
  spec.input_dim = 2;
  spec.classes = 2;
  spec.encoder_hidden = {16};
  spec.decoder_hidden = {16};
  spec.segment_dim = 2;
  spec.segments = 2;
  const auto data = support::blobs(64, 2, 2, 0.3, 4);
  TaskModel<float> model(spec, 1);
  TrainPlan plan;
  plan.batch_size = 32;
  plan.stage1_epochs = 100;  // 2 batches per epoch
  plan.learning_rate = 0.05;
  stage1_warmstart(model, data, plan);
  const auto all = data.all_indices();
  CHECK(warmstart_loss<float>(model, data, all).value().item() < 0.05);
}

TEST_CASE("spec validation") {
  auto spec = small_spec();
  CHECK_NOTHROW(spec.validate());
  spec.segments = 0;
  CHECK_THROWS(spec.validate());
  spec = small_spec();
  spec.encoder_hidden = {4, 0};
  CHECK_THROWS(spec.validate());
}

TEST_CASE("model documents round-trip bit-identically") {
  TaskModel<float> model(small_spec(), 17);
  const auto text = io::model_to_text(model);
  const auto back = io::model_from_text(text);
  CHECK(back.spec().segments == 4);
  CHECK(back.spec().activation == model.spec().activation);
  const auto a = model.parameters();
  const auto b = back.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value() == b[i].value());

  const auto path = std::filesystem::temp_directory_path() / "artoveq_model_roundtrip.json";
  io::save(path, model);
  CHECK(io::model_to_text(io::load_model(path)) == text);
  std::filesystem::remove(path);
  CHECK_THROWS(io::load_model(path));
}
