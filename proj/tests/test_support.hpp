#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "artoveq/gradcore.hpp"
#include "artoveq/taskmodel.hpp"
#include "oracles/surrogate_oracle.hpp"

namespace support {

using artoveq::grad::Shape;
using artoveq::grad::Tensor;
using artoveq::grad::Var;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline bool close_rel(double a, double b, double rel, double floor = 1e-9) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor;
}

// Compares reverse-mode gradients of f at `inputs` with central differences.
// Returns the worst relative error seen.
inline double max_fd_error(
    std::vector<Tensor<double>> inputs,
    const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
    double h = 1e-4) {
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(Var<double>::parameter(t));
  artoveq::grad::backward(f(vars));
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> probe;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
          auto t = inputs[b];
          if (b == a) t[i] += delta;
          probe.push_back(Var<double>::constant(t));
        }
        return f(probe).value().item();
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double an = vars[a].has_grad() ? vars[a].grad()[i] : 0.0;
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline oracle::Dense to_dense(const artoveq::DenseLayer<double>& l) {
  oracle::Dense d;
  d.in = l.weight.shape()[0];
  d.out = l.weight.shape()[1];
  d.w = l.weight.value().storage();
  d.b = l.bias.value().storage();
  return d;
}

inline oracle::Net to_oracle(const artoveq::TaskModel<double>& model) {
  oracle::Net net;
  for (const auto& l : model.encoder().layers()) net.encoder.push_back(to_dense(l));
  for (const auto& l : model.decoder().layers()) net.decoder.push_back(to_dense(l));
  net.activation = std::string(artoveq::grad::to_string(model.spec().activation));
  return net;
}

// Two well separated Gaussian blobs, or `classes` blobs on a circle.
inline artoveq::Dataset blobs(std::size_t n, std::size_t classes, std::size_t dim,
                              double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  artoveq::Dataset data(dim, classes);
  std::vector<float> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::int32_t>(i % classes);
    const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
    for (std::size_t j = 0; j < dim; ++j) {
      double centre = 0.0;
      if (j == 0) centre = 3.0 * std::cos(angle);
      if (j == 1) centre = 3.0 * std::sin(angle);
      x[j] = static_cast<float>(centre + noise(rng));
    }
    data.add(x, c);
  }
  return data;
}

}  // namespace support
