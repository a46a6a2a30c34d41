#include "artoveq/taskmodel.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace artoveq {

Dataset::Dataset(std::size_t input_dim, std::size_t classes)
    : input_dim_(input_dim), classes_(classes) {
  if (input_dim == 0 || classes == 0) {
    throw std::invalid_argument("dataset: input_dim and classes must be > 0");
  }
}

void Dataset::add(std::span<const float> x, std::int32_t label) {
  if (x.size() != input_dim_) {
    throw std::invalid_argument("dataset: sample of dim " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(input_dim_));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= classes_) {
    throw std::invalid_argument("dataset: label " + std::to_string(label) +
                                " outside [0," + std::to_string(classes_) +
                                ")");
  }
  features_.insert(features_.end(), x.begin(), x.end());
  labels_.push_back(label);
}

LabeledSample Dataset::sample(std::size_t i) const {
  const auto f = features(i);
  return {std::vector<float>(f.begin(), f.end()), labels_[i]};
}

template <typename T>
grad::Tensor<T> Dataset::inputs(std::span<const std::size_t> indices) const {
  grad::Tensor<T> out(grad::Shape{indices.size(), input_dim_});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto f = features(indices[r]);
    for (std::size_t c = 0; c < input_dim_; ++c) {
      out[r * input_dim_ + c] = static_cast<T>(f[c]);
    }
  }
  return out;
}

template grad::Tensor<float> Dataset::inputs(std::span<const std::size_t>) const;
template grad::Tensor<double> Dataset::inputs(std::span<const std::size_t>) const;

std::vector<std::int32_t> Dataset::labels(
    std::span<const std::size_t> indices) const {
  std::vector<std::int32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels_[i]);
  return out;
}

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void NetworkSpec::validate() const {
  if (input_dim == 0 || segment_dim == 0 || segments == 0 || classes == 0) {
    throw std::invalid_argument(
        "network: input_dim, d, M and classes must be positive");
  }
  for (auto w : encoder_hidden) {
    if (w == 0) throw std::invalid_argument("network: zero-width layer");
  }
  for (auto w : decoder_hidden) {
    if (w == 0) throw std::invalid_argument("network: zero-width layer");
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Mlp<T>::Mlp(std::vector<std::size_t> widths, grad::Activation activation,
            std::uint64_t seed)
    : widths_(std::move(widths)), activation_(activation) {
  if (widths_.size() < 2) {
    throw std::invalid_argument("mlp: need at least input and output widths");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const std::size_t in = widths_[i];
    const std::size_t out = widths_[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    grad::Tensor<T> w(grad::Shape{in, out});
    for (auto& v : w.storage()) v = static_cast<T>(dist(rng));
    layers_.push_back({grad::Var<T>::parameter(std::move(w)),
                       grad::Var<T>::parameter(grad::Tensor<T>(grad::Shape{out}))});
  }
}

template <typename T>
Mlp<T>::Mlp(const Mlp& other)
    : widths_(other.widths_), activation_(other.activation_) {
  for (const auto& l : other.layers_) {
    layers_.push_back({grad::Var<T>::parameter(l.weight.value()),
                       grad::Var<T>::parameter(l.bias.value())});
  }
}

template <typename T>
Mlp<T>& Mlp<T>::operator=(const Mlp& other) {
  if (this != &other) {
    Mlp copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
grad::Var<T> Mlp<T>::forward(const grad::Var<T>& x) const {
  if (x.value().rank() != 2 || x.shape()[1] != input_dim()) {
    throw grad::ShapeError("mlp: input of shape " + grad::to_string(x.shape()) +
                           ", expected [n," + std::to_string(input_dim()) +
                           "]");
  }
  grad::Var<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = grad::add_bias(grad::matmul(h, layers_[i].weight), layers_[i].bias);
    if (i + 1 < layers_.size()) h = grad::activate(h, activation_);
  }
  return h;
}

template <typename T>
std::vector<grad::Var<T>> Mlp<T>::parameters() const {
  std::vector<grad::Var<T>> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> encoder_widths(const NetworkSpec& spec) {
  std::vector<std::size_t> w{spec.input_dim};
  w.insert(w.end(), spec.encoder_hidden.begin(), spec.encoder_hidden.end());
  w.push_back(spec.feature_dim());
  return w;
}

std::vector<std::size_t> decoder_widths(const NetworkSpec& spec) {
  std::vector<std::size_t> w{spec.feature_dim()};
  w.insert(w.end(), spec.decoder_hidden.begin(), spec.decoder_hidden.end());
  w.push_back(spec.classes);
  return w;
}

}  // namespace

template <typename T>
TaskModel<T>::TaskModel(NetworkSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)) {
  spec_.validate();
  std::seed_seq seq{seed, std::uint64_t{0x5eed}};
  std::uint64_t seeds[2];
  seq.generate(seeds, seeds + 2);
  encoder_ = Mlp<T>(encoder_widths(spec_), spec_.activation, seeds[0]);
  decoder_ = Mlp<T>(decoder_widths(spec_), spec_.activation, seeds[1]);
}

template <typename T>
TaskModel<T>::TaskModel(NetworkSpec spec, Mlp<T> encoder, Mlp<T> decoder)
    : spec_(std::move(spec)),
      encoder_(std::move(encoder)),
      decoder_(std::move(decoder)) {
  spec_.validate();
  if (encoder_.widths() != encoder_widths(spec_) ||
      decoder_.widths() != decoder_widths(spec_)) {
    throw std::invalid_argument("task model: layer widths do not match spec");
  }
}

template <typename T>
grad::Var<T> TaskModel<T>::encode_graph(const grad::Var<T>& x) const {
  return encoder_.forward(x);
}

template <typename T>
grad::Var<T> TaskModel<T>::decode_graph(const grad::Var<T>& z) const {
  return decoder_.forward(z);
}

template <typename T>
FeatureBlock<T> TaskModel<T>::encode(std::span<const T> x) const {
  if (x.size() != spec_.input_dim) {
    throw std::invalid_argument("encode: input of dim " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(spec_.input_dim));
  }
  grad::Tensor<T> in(grad::Shape{1, x.size()},
                     std::vector<T>(x.begin(), x.end()));
  auto out = encode_batch(in);
  return FeatureBlock<T>(std::move(out.storage()), spec_.segment_dim);
}

template <typename T>
Prediction<T> TaskModel<T>::decode(std::span<const T> z) const {
  if (z.size() != spec_.feature_dim()) {
    throw std::invalid_argument("decode: features of dim " +
                                std::to_string(z.size()) + ", expected " +
                                std::to_string(spec_.feature_dim()));
  }
  grad::Tensor<T> in(grad::Shape{1, z.size()},
                     std::vector<T>(z.begin(), z.end()));
  auto logits = decode_batch(in);
  Prediction<T> p;
  p.logits = std::move(logits.storage());
  p.label = argmax<T>(p.logits);
  return p;
}

template <typename T>
grad::Tensor<T> TaskModel<T>::encode_batch(const grad::Tensor<T>& x) const {
  return encoder_.forward(grad::Var<T>::constant(x)).value();
}

template <typename T>
grad::Tensor<T> TaskModel<T>::decode_batch(const grad::Tensor<T>& z) const {
  return decoder_.forward(grad::Var<T>::constant(z)).value();
}

template <typename T>
std::vector<grad::Var<T>> TaskModel<T>::parameters() const {
  auto out = encoder_.parameters();
  const auto dec = decoder_.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

template <typename T>
grad::Var<T> warmstart_loss(const TaskModel<T>& model,
                            std::span<const LabeledSample> batch) {
  if (batch.empty()) throw std::invalid_argument("warmstart_loss: empty batch");
  const std::size_t dim = model.spec().input_dim;
  grad::Tensor<T> x(grad::Shape{batch.size(), dim});
  std::vector<std::int32_t> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x.size() != dim) {
      throw std::invalid_argument("warmstart_loss: sample dimension mismatch");
    }
    for (std::size_t c = 0; c < dim; ++c) {
      x[i * dim + c] = static_cast<T>(batch[i].x[c]);
    }
    labels.push_back(batch[i].label);
  }
  const auto logits =
      model.decode_graph(model.encode_graph(grad::Var<T>::constant(std::move(x))));
  return grad::cross_entropy<T>(logits, labels);
}

template <typename T>
grad::Var<T> warmstart_loss(const TaskModel<T>& model, const Dataset& data,
                            std::span<const std::size_t> indices) {
  if (indices.empty()) {
    throw std::invalid_argument("warmstart_loss: empty batch");
  }
  const auto x = grad::Var<T>::constant(data.inputs<T>(indices));
  const auto labels = data.labels(indices);
  return grad::cross_entropy<T>(model.decode_graph(model.encode_graph(x)),
                                labels);
}

#define ARTOVEQ_INSTANTIATE_MODEL(T)                                        \
  template class Mlp<T>;                                                    \
  template class TaskModel<T>;                                              \
  template std::size_t argmax(std::span<const T>);                          \
  template grad::Var<T> warmstart_loss(const TaskModel<T>&,                 \
                                       std::span<const LabeledSample>);     \
  template grad::Var<T> warmstart_loss(const TaskModel<T>&, const Dataset&, \
                                       std::span<const std::size_t>);

ARTOVEQ_INSTANTIATE_MODEL(float)
ARTOVEQ_INSTANTIATE_MODEL(double)

#undef ARTOVEQ_INSTANTIATE_MODEL

}  // namespace artoveq
