#include "artoveq/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "artoveq/kernels.hpp"

namespace artoveq::grad {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(std::vector<T> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape_) +
                     " is not a scalar");
  }
  return data_.front();
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " +
                     to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Var(std::move(node));
}

template <typename T>
Tensor<T> Var<T>::grad_tensor() const {
  if (!has_grad()) return Tensor<T>(shape());
  return Tensor<T>(shape(), node_->grad);
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation '" + std::string(name) +
                              "'");
}

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::silu: return "silu";
  }
  return "?";
}

namespace {

template <typename T>
Var<T> record(std::string_view op, Tensor<T> value,
              std::vector<std::shared_ptr<Node<T>>> inputs,
              std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& n) { return n->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void require_same_shape(std::string_view op, const Var<T>& a,
                        const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename T>
void require_matrix(std::string_view op, const Var<T>& a) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     to_string(a.shape()));
  }
}

template <typename T>
void accumulate(Node<T>& input, std::span<const T> delta) {
  if (!input.requires_grad) return;
  auto& g = input.grad_buffer();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary(std::string_view op, const Var<T>& a, Fwd fwd, Bwd dfdx) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return record<T>(op, std::move(out), {a.handle()}, [dfdx](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(in.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] + b.value()[i];
  }
  return record<T>("add", std::move(out), {a.handle(), b.handle()},
                   [](Node<T>& self) {
                     accumulate<T>(*self.inputs[0], self.grad);
                     accumulate<T>(*self.inputs[1], self.grad);
                   });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] - b.value()[i];
  }
  return record<T>("sub", std::move(out), {a.handle(), b.handle()},
                   [](Node<T>& self) {
                     accumulate<T>(*self.inputs[0], self.grad);
                     auto& rhs = *self.inputs[1];
                     if (!rhs.requires_grad) return;
                     auto& g = rhs.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] -= self.grad[i];
                     }
                   });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] * b.value()[i];
  }
  return record<T>("mul", std::move(out), {a.handle(), b.handle()},
                   [](Node<T>& self) {
                     auto& lhs = *self.inputs[0];
                     auto& rhs = *self.inputs[1];
                     if (lhs.requires_grad) {
                       auto& g = lhs.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * rhs.value[i];
                       }
                     }
                     if (rhs.requires_grad) {
                       auto& g = rhs.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * lhs.value[i];
                       }
                     }
                   });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return record<T>("scale", std::move(out), {a.handle()},
                   [factor](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] += self.grad[i] * factor;
                     }
                   });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  require_matrix("add_bias", a);
  const std::size_t n = a.value().rows();
  const std::size_t k = a.value().cols();
  if (bias.size() != k) {
    throw ShapeError("add_bias: bias of shape " + to_string(bias.shape()) +
                     " does not match matrix " + to_string(a.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = a.value()[i * k + j] + bias.value()[j];
    }
  }
  return record<T>("add_bias", std::move(out), {a.handle(), bias.handle()},
                   [n, k](Node<T>& self) {
                     accumulate<T>(*self.inputs[0], self.grad);
                     auto& b = *self.inputs[1];
                     if (!b.requires_grad) return;
                     auto& g = b.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t j = 0; j < k; ++j) {
                         g[j] += self.grad[i * k + j];
                       }
                     }
                   });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t n = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<T> out(Shape{n, m});
  kernels::matmul(a.value().values().data(), b.value().values().data(),
                  out.values().data(), n, k, m);
  return record<T>(
      "matmul", std::move(out), {a.handle(), b.handle()},
      [n, k, m](Node<T>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        std::vector<T> tmp;
        if (lhs.requires_grad) {
          tmp.assign(n * k, T{0});
          // dA = dC * B^T
          kernels::matmul_nt(self.grad.data(), rhs.value.values().data(),
                             tmp.data(), n, m, k);
          accumulate<T>(lhs, tmp);
        }
        if (rhs.requires_grad) {
          tmp.assign(k * m, T{0});
          // dB = A^T * dC
          kernels::matmul_tn(lhs.value.values().data(), self.grad.data(),
                             tmp.data(), n, k, m);
          accumulate<T>(rhs, tmp);
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a) {
  const T slope = static_cast<T>(kLeakySlope);
  return unary<T>(
      "leaky_relu", a, [slope](T x) { return x > T{0} ? x : slope * x; },
      [slope](T x) { return x > T{0} ? T{1} : slope; });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary<T>(
      "silu", a,
      [](T x) { return x / (T{1} + std::exp(-x)); },
      [](T x) {
        const T s = T{1} / (T{1} + std::exp(-x));
        return s * (T{1} + x * (T{1} - s));
      });
}

template <typename T>
Var<T> activate(const Var<T>& a, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(a);
    case Activation::leaky_relu: return leaky_relu(a);
    case Activation::silu: return silu(a);
  }
  throw std::logic_error("activate: unhandled activation");
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
  const std::size_t n = a.value().rows();
  const std::size_t c = a.value().cols();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = a.value().row(i);
    const T peak = *std::max_element(row.begin(), row.end());
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - peak);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return record<T>("softmax", std::move(out), {a.handle()},
                   [n, c](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i) {
                       T dot{0};
                       for (std::size_t j = 0; j < c; ++j) {
                         dot += self.grad[i * c + j] * self.value[i * c + j];
                       }
                       for (std::size_t j = 0; j < c; ++j) {
                         const std::size_t idx = i * c + j;
                         g[idx] += self.value[idx] * (self.grad[idx] - dot);
                       }
                     }
                   });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  return record<T>("sum", Tensor<T>::scalar(total), {a.handle()},
                   [](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (auto& v : g) v += self.grad[0];
                   });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Var<T> squared_l2_norm(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v * v;
  return record<T>("squared_l2_norm", Tensor<T>::scalar(total), {a.handle()},
                   [](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] += T{2} * in.value[i] * self.grad[0];
                     }
                   });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits,
                     std::span<const std::int32_t> labels) {
  if (logits.value().rank() > 2 || logits.size() == 0) {
    throw ShapeError("cross_entropy: logits must be a vector or matrix, got " +
                     to_string(logits.shape()));
  }
  const std::size_t n = logits.value().rows();
  const std::size_t c = logits.value().cols();
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  std::vector<T> probs(n * c);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(label) +
                       " outside [0," + std::to_string(c) + ")");
    }
    const auto row = logits.value().row(i);
    const T peak = *std::max_element(row.begin(), row.end());
    T z{0};
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - peak);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += std::log(z) + peak - row[static_cast<std::size_t>(label)];
  }
  const T inv_n = T{1} / static_cast<T>(n);
  std::vector<std::int32_t> kept(labels.begin(), labels.end());
  return record<T>(
      "cross_entropy", Tensor<T>::scalar(total * inv_n), {logits.handle()},
      [probs = std::move(probs), kept = std::move(kept), n, c,
       inv_n](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        const T scale_by = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            T p = probs[i * c + j];
            if (static_cast<std::int32_t>(j) == kept[i]) p -= T{1};
            g[i * c + j] += p * scale_by;
          }
        }
      });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return record<T>("reshape", a.value().reshaped(std::move(shape)),
                   {a.handle()}, [](Node<T>& self) {
                     accumulate<T>(*self.inputs[0], self.grad);
                   });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  if (begin >= end || end > rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " +
                     to_string(a.shape()));
  }
  const auto src = a.value().values().subspan(begin * cols,
                                              (end - begin) * cols);
  Tensor<T> out(Shape{end - begin, cols},
                std::vector<T>(src.begin(), src.end()));
  return record<T>("slice_rows", std::move(out), {a.handle()},
                   [begin, cols](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       g[begin * cols + i] += self.grad[i];
                     }
                   });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::int32_t> indices) {
  require_matrix("gather_rows", a);
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  Tensor<T> out(Shape{indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    if (r < 0 || static_cast<std::size_t>(r) >= rows) {
      throw ShapeError("gather_rows: row " + std::to_string(r) +
                       " outside " + to_string(a.shape()));
    }
    const auto src = a.value().row(static_cast<std::size_t>(r));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> kept(indices.begin(), indices.end());
  return record<T>("gather_rows", std::move(out), {a.handle()},
                   [kept = std::move(kept), cols](Node<T>& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < kept.size(); ++i) {
                       const auto r = static_cast<std::size_t>(kept[i]);
                       for (std::size_t j = 0; j < cols; ++j) {
                         g[r * cols + j] += self.grad[i * cols + j];
                       }
                     }
                   });
}

template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
  auto node = std::make_shared<Node<T>>();
  node->value = a.value();
  node->op = "stop_gradient";
  node->is_leaf = false;
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> pass_through(const Var<T>& x, const Tensor<T>& replacement) {
  if (x.shape() != replacement.shape()) {
    throw ShapeError("pass_through: input " + to_string(x.shape()) +
                     " vs replacement " + to_string(replacement.shape()));
  }
  return record<T>("pass_through", replacement, {x.handle()},
                   [](Node<T>& self) {
                     accumulate<T>(*self.inputs[0], self.grad);
                   });
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw std::invalid_argument("backward: empty variable");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; each node enters `order` once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* node : order) {
    if (!node->is_leaf) node->grad.assign(node->value.size(), T{0});
  }
  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
}

#define ARTOVEQ_INSTANTIATE_GRAD(T)                                          \
  template class Tensor<T>;                                                  \
  template class Var<T>;                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                         \
  template Var<T> scale(const Var<T>&, T);                                   \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                      \
  template Var<T> relu(const Var<T>&);                                       \
  template Var<T> leaky_relu(const Var<T>&);                                 \
  template Var<T> silu(const Var<T>&);                                       \
  template Var<T> activate(const Var<T>&, Activation);                       \
  template Var<T> softmax(const Var<T>&);                                    \
  template Var<T> sum(const Var<T>&);                                        \
  template Var<T> mean(const Var<T>&);                                       \
  template Var<T> squared_l2_norm(const Var<T>&);                            \
  template Var<T> cross_entropy(const Var<T>&,                               \
                                std::span<const std::int32_t>);              \
  template Var<T> reshape(const Var<T>&, Shape);                             \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);       \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::int32_t>); \
  template Var<T> stop_gradient(const Var<T>&);                              \
  template Var<T> pass_through(const Var<T>&, const Tensor<T>&);             \
  template void backward(const Var<T>&);

ARTOVEQ_INSTANTIATE_GRAD(float)
ARTOVEQ_INSTANTIATE_GRAD(double)

#undef ARTOVEQ_INSTANTIATE_GRAD

}  // namespace artoveq::grad
