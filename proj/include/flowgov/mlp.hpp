#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace flowgov {

// Dense feed-forward network with tanh hidden activations and a linear output
// layer. Small and explicit: the policy and value heads here are 2x64, and
// the update math must be auditable against finite differences.
struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // row-major, out x in
  std::vector<double> b;  // out
};

struct Mlp {
  std::vector<Layer> layers;

  static Mlp make(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp needs at least two layer sizes");
    Mlp net;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      Layer l;
      l.in = sizes[i];
      l.out = sizes[i + 1];
      l.w.resize(static_cast<std::size_t>(l.in) * l.out);
      l.b.assign(static_cast<std::size_t>(l.out), 0.0);
      const double s = std::sqrt(6.0 / (l.in + l.out));
      for (auto& v : l.w) v = rng.uniform(-s, s);
      net.layers.push_back(std::move(l));
    }
    return net;
  }

  static Mlp zeros_like(const Mlp& other) {
    Mlp net = other;
    for (auto& l : net.layers) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    return net;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  // Flat parameter indexing in a fixed order (per layer: weights then
  // biases); used by the optimizer and the finite-difference checks.
  double& param_at(std::size_t idx) {
    for (auto& l : layers) {
      if (idx < l.w.size()) return l.w[idx];
      idx -= l.w.size();
      if (idx < l.b.size()) return l.b[idx];
      idx -= l.b.size();
    }
    throw std::out_of_range("mlp parameter index");
  }

  const double& param_at(std::size_t idx) const { return const_cast<Mlp*>(this)->param_at(idx); }

  bool all_finite() const {
    for (const auto& l : layers) {
      for (double v : l.w)
        if (!std::isfinite(v)) return false;
      for (double v : l.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

// Post-activation values per layer; acts[0] is the input.
struct MlpCache {
  std::vector<std::vector<double>> acts;
};

inline std::vector<double> mlp_forward(const Mlp& net, const std::vector<double>& x,
                                       MlpCache* cache = nullptr) {
  if (net.layers.empty()) throw std::logic_error("forward on empty mlp");
  if (static_cast<int>(x.size()) != net.layers.front().in)
    throw std::invalid_argument("mlp input size mismatch");
  std::vector<double> cur = x;
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(cur);
  }
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& l = net.layers[li];
    std::vector<double> next(static_cast<std::size_t>(l.out), 0.0);
    for (int o = 0; o < l.out; ++o) {
      double acc = l.b[static_cast<std::size_t>(o)];
      const double* wrow = &l.w[static_cast<std::size_t>(o) * l.in];
      for (int i = 0; i < l.in; ++i) acc += wrow[i] * cur[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = acc;
    }
    const bool last = li + 1 == net.layers.size();
    if (!last) {
      for (auto& v : next) v = std::tanh(v);
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

// Backprop through the cached forward pass, accumulating into grad (which
// must be zeros_like or a running accumulator of the same shape). dout is
// dL/d(output). Returns nothing; optionally exposes dL/d(input).
inline void mlp_backward(const Mlp& net, const MlpCache& cache, const std::vector<double>& dout,
                         Mlp& grad, std::vector<double>* dinput = nullptr) {
  if (cache.acts.size() != net.layers.size() + 1)
    throw std::logic_error("mlp cache does not match network depth");
  std::vector<double> delta = dout;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& l = net.layers[static_cast<std::size_t>(li)];
    Layer& g = grad.layers[static_cast<std::size_t>(li)];
    const auto& a_in = cache.acts[static_cast<std::size_t>(li)];
    const auto& a_out = cache.acts[static_cast<std::size_t>(li) + 1];
    const bool last = li + 1 == static_cast<int>(net.layers.size());
    // For hidden layers the cached activation is tanh(z); fold its derivative
    // into delta before touching the affine parameters.
    if (!last) {
      for (int o = 0; o < l.out; ++o) {
        const double t = a_out[static_cast<std::size_t>(o)];
        delta[static_cast<std::size_t>(o)] *= (1.0 - t * t);
      }
    }
    std::vector<double> dprev(static_cast<std::size_t>(l.in), 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      g.b[static_cast<std::size_t>(o)] += d;
      double* gw = &g.w[static_cast<std::size_t>(o) * l.in];
      const double* wrow = &l.w[static_cast<std::size_t>(o) * l.in];
      for (int i = 0; i < l.in; ++i) {
        gw[i] += d * a_in[static_cast<std::size_t>(i)];
        dprev[static_cast<std::size_t>(i)] += d * wrow[i];
      }
    }
    delta = std::move(dprev);
  }
  if (dinput) *dinput = delta;
}

// Adam with bias correction over the flat parameter ordering.
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<double> m;
  std::vector<double> v;

  void ensure(std::size_t n) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
      t = 0;
    }
  }

  void step(Mlp& net, const Mlp& grad) {
    const std::size_t n = net.param_count();
    ensure(n);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad.param_at(i);
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      net.param_at(i) -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace flowgov
