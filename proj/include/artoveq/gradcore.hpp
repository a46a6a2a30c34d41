#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// A Var is a handle to a graph node. Leaves are parameters (requires_grad)
// or constants; every operation records its inputs and a backward rule when
// at least one input requires a gradient. backward() walks the graph once in
// reverse topological order. Leaf gradients accumulate across calls until the
// caller zeroes them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace artoveq::grad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }
  static Tensor from_vector(std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-1 tensors read as a single row.
  std::size_t rows() const noexcept {
    return shape_.size() >= 2 ? shape_.front() : 1;
  }
  std::size_t cols() const noexcept {
    return rows() == 0 ? 0 : data_.size() / rows();
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * cols(), cols());
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  T item() const;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  // Empty until a gradient has been produced.
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var parameter(Tensor<T> value);

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  Tensor<T> grad_tensor() const;
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), T{0});
  }

  std::string_view op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

enum class Activation { relu, leaky_relu, silu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation activation);

inline constexpr double kLeakySlope = 0.01;

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

// a[n,k] + bias[k] broadcast across rows.
template <typename T> Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
// a[n,k] * b[k,m]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a);
template <typename T> Var<T> silu(const Var<T>& a);
template <typename T> Var<T> activate(const Var<T>& a, Activation kind);

// Row-wise softmax.
template <typename T> Var<T> softmax(const Var<T>& a);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> squared_l2_norm(const Var<T>& a);

// Mean over rows of -log softmax(logits)[label]. Rank-1 logits are one row.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end);
// out[i] = a[indices[i]]; backward scatter-adds.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::int32_t> indices);

// Identity forward, zero gradient backward.
template <typename T> Var<T> stop_gradient(const Var<T>& a);

// Forward value is `replacement`; backward hands the incoming gradient to x
// unchanged.
template <typename T>
Var<T> pass_through(const Var<T>& x, const Tensor<T>& replacement);

// Runs reverse accumulation from a scalar. Leaf gradients accumulate.
template <typename T> void backward(const Var<T>& loss);

}  // namespace artoveq::grad
