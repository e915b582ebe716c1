#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "molmamba/ops.hpp"
#include "molmamba/params.hpp"
#include "molmamba/rng.hpp"

namespace testing_support {

using molmamba::Binding;
using molmamba::ParamStore;
using molmamba::Rng;
using molmamba::Shape;
using molmamba::Tensor;

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = molmamba::numel(shape);
  return Tensor::leaf(std::move(shape), random_values(rng, n, lo, hi));
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Projects a tensor-valued function onto a fixed random direction so that
/// every output element contributes to the scalar being differentiated.
inline Tensor project(const Tensor& y, const std::vector<double>& w) {
  if (y.rank() == 0) return y;
  return molmamba::ops::sum(molmamba::ops::mul(y, Tensor::constant(y.shape(), w)));
}

/// Largest relative error between analytic and central-difference gradients
/// of f with respect to every element of every input.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                        std::uint64_t seed = 1, double eps = 1e-5) {
  Rng rng(seed);
  const auto probe = f(inputs);
  const auto w = random_values(rng, probe.size(), 0.5, 1.5);
  project(f(inputs), w).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> base(inputs[k].data().begin(), inputs[k].data().end());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto eval = [&](double delta) {
        auto moved = base;
        moved[i] += delta;
        auto in = inputs;
        in[k] = Tensor::constant(inputs[k].shape(), moved);
        return project(f(in), w).item();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double a = analytic[k].empty() ? 0.0 : analytic[k][i];
      worst = std::max(worst, rel_err(a, numeric));
    }
  }
  return worst;
}

/// Same check over selected entries of a parameter store; f builds a scalar.
struct ParamProbe {
  std::size_t param;
  std::size_t element;
};

inline double gradcheck_params(ParamStore& store, const std::function<Tensor(const Binding&)>& f,
                               const std::vector<ParamProbe>& probes, double eps = 1e-5) {
  Binding p(store);
  f(p).backward();
  auto grads = store.zero_gradients();
  p.accumulate_into(grads);
  double worst = 0.0;
  for (const auto& pr : probes) {
    auto values = store.values(pr.param);
    const double keep = values[pr.element];
    values[pr.element] = keep + eps;
    const double up = f(Binding(store)).item();
    values[pr.element] = keep - eps;
    const double down = f(Binding(store)).item();
    values[pr.element] = keep;
    worst = std::max(worst, rel_err(grads[pr.param][pr.element], (up - down) / (2.0 * eps)));
  }
  return worst;
}

/// `count` random (parameter, element) pairs.
inline std::vector<ParamProbe> random_probes(const ParamStore& store, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ParamProbe> out;
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(store.size()));
    out.push_back({i, static_cast<std::size_t>(rng.below(store.values(i).size()))});
  }
  return out;
}

/// Every parameter once, at a random element.
inline std::vector<ParamProbe> each_param(const ParamStore& store, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ParamProbe> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.push_back({i, static_cast<std::size_t>(rng.below(store.values(i).size()))});
  }
  return out;
}

/// Straightforward selective-scan recurrence, one (channel, state) pair at a time.
inline std::vector<double> naive_scan(std::size_t l, std::size_t ch, std::size_t n, const std::vector<double>& u,
                                      const std::vector<double>& delta, const std::vector<double>& a,
                                      const std::vector<double>& b, const std::vector<double>& c) {
  std::vector<double> y(l * ch, 0.0);
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t s = 0; s < n; ++s) {
      double h = 0.0;
      for (std::size_t t = 0; t < l; ++t) {
        const double dt = delta[t * ch + k];
        h = std::exp(dt * a[k * n + s]) * h + dt * b[t * n + s] * u[t * ch + k];
        y[t * ch + k] += c[t * n + s] * h;
      }
    }
  }
  return y;
}

}  // namespace testing_support
