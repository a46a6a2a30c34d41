#pragma once

// Dense encoder f_e and decoder f_d for classification, plus the labeled
// dataset container they consume.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "artoveq/gradcore.hpp"
#include "artoveq/vq_layer.hpp"

namespace artoveq {

struct LabeledSample {
  std::vector<float> x;
  std::int32_t label = 0;
};

// Row-major feature matrix with one label per row.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t input_dim, std::size_t classes);

  void add(std::span<const float> x, std::int32_t label);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t classes() const noexcept { return classes_; }

  std::span<const float> features(std::size_t i) const {
    return std::span<const float>(features_).subspan(i * input_dim_,
                                                     input_dim_);
  }
  std::int32_t label(std::size_t i) const { return labels_[i]; }
  LabeledSample sample(std::size_t i) const;
  const std::vector<float>& feature_matrix() const noexcept {
    return features_;
  }
  const std::vector<std::int32_t>& labels() const noexcept { return labels_; }

  // [indices.size(), input_dim] input matrix.
  template <typename T>
  grad::Tensor<T> inputs(std::span<const std::size_t> indices) const;
  std::vector<std::int32_t> labels(std::span<const std::size_t> indices) const;

  std::vector<std::size_t> all_indices() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t input_dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<float> features_;
  std::vector<std::int32_t> labels_;
};

struct NetworkSpec {
  std::size_t input_dim = 16;
  std::vector<std::size_t> encoder_hidden{64, 32};
  std::vector<std::size_t> decoder_hidden{64};
  std::size_t segment_dim = 2;  // d
  std::size_t segments = 4;     // M
  std::size_t classes = 8;
  grad::Activation activation = grad::Activation::silu;

  std::size_t feature_dim() const noexcept { return segment_dim * segments; }
  void validate() const;
};

template <typename T>
struct DenseLayer {
  grad::Var<T> weight;  // [in, out]
  grad::Var<T> bias;    // [out]
};

// Fully connected stack; the activation follows every layer but the last.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, grad::Activation activation,
      std::uint64_t seed);
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  grad::Var<T> forward(const grad::Var<T>& x) const;

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  grad::Activation activation() const noexcept { return activation_; }
  std::vector<DenseLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer<T>>& layers() const noexcept { return layers_; }
  std::vector<grad::Var<T>> parameters() const;

  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> out;
    out.widths_ = widths_;
    out.activation_ = activation_;
    for (const auto& l : layers_) {
      out.layers_.push_back({grad::Var<U>::parameter(l.weight.value().template cast<U>()),
                             grad::Var<U>::parameter(l.bias.value().template cast<U>())});
    }
    return out;
  }

 private:
  template <typename>
  friend class Mlp;

  std::vector<std::size_t> widths_;
  grad::Activation activation_ = grad::Activation::silu;
  std::vector<DenseLayer<T>> layers_;
};

template <typename T>
struct Prediction {
  std::vector<T> logits;
  std::size_t label = 0;
};

// Lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

template <typename T>
class TaskModel {
 public:
  TaskModel() = default;
  TaskModel(NetworkSpec spec, std::uint64_t seed);
  TaskModel(NetworkSpec spec, Mlp<T> encoder, Mlp<T> decoder);

  const NetworkSpec& spec() const noexcept { return spec_; }
  Mlp<T>& encoder() noexcept { return encoder_; }
  const Mlp<T>& encoder() const noexcept { return encoder_; }
  Mlp<T>& decoder() noexcept { return decoder_; }
  const Mlp<T>& decoder() const noexcept { return decoder_; }

  // Graph-building passes over a batch.
  grad::Var<T> encode_graph(const grad::Var<T>& x) const;
  grad::Var<T> decode_graph(const grad::Var<T>& z) const;

  FeatureBlock<T> encode(std::span<const T> x) const;
  Prediction<T> decode(std::span<const T> z) const;

  // Inference-only batch helpers.
  grad::Tensor<T> encode_batch(const grad::Tensor<T>& x) const;
  grad::Tensor<T> decode_batch(const grad::Tensor<T>& z) const;

  std::vector<grad::Var<T>> parameters() const;
  std::vector<grad::Var<T>> encoder_parameters() const {
    return encoder_.parameters();
  }
  std::vector<grad::Var<T>> decoder_parameters() const {
    return decoder_.parameters();
  }

  template <typename U>
  TaskModel<U> cast() const {
    return TaskModel<U>(spec_, encoder_.template cast<U>(),
                        decoder_.template cast<U>());
  }

 private:
  NetworkSpec spec_;
  Mlp<T> encoder_;
  Mlp<T> decoder_;
};

// Mean cross-entropy of f_d(f_e(x)) over the batch, no quantization.
template <typename T>
grad::Var<T> warmstart_loss(const TaskModel<T>& model,
                            std::span<const LabeledSample> batch);
template <typename T>
grad::Var<T> warmstart_loss(const TaskModel<T>& model, const Dataset& data,
                            std::span<const std::size_t> indices);

}  // namespace artoveq
