#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "reluforge/common.hpp"
#include "reluforge/linalg.hpp"

namespace reluforge {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double std_normal_cdf(double x) {
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double std_normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014327;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Smoothed rectifier x * Phi(x / eps); recovers relu pointwise as eps -> 0.
inline double gelu_eps(double x, double eps) {
  if (eps <= 0.0) throw DomainError("gelu_eps: eps must be positive");
  return x * std_normal_cdf(x / eps);
}

inline double gelu(double x) { return gelu_eps(x, 1.0); }

// sup_x |gelu(x) - relu(x)| and the |x| where it is attained. The gap profile
// g(t) = t * (1 - Phi(t)) rises to its single maximum at gap_argmax and decays
// beyond it; the eps-scaled gap is eps * g(|x| / eps).
inline constexpr double gelu_relu_gap_max = 0.16997120747990371;
inline constexpr double gelu_relu_gap_argmax = 0.75179152469356458;

inline double gelu_relu_gap_profile(double t) {
  if (t < 0.0) throw DomainError("gap profile takes t >= 0");
  return t * (1.0 - std_normal_cdf(t));
}

struct Activation {
  enum class Kind { Relu, Gelu };
  Kind kind = Kind::Relu;
  double eps = 1.0;

  static Activation make_relu() { return {Kind::Relu, 1.0}; }
  static Activation make_gelu(double eps) {
    if (eps <= 0.0) throw DomainError("gelu activation needs eps > 0");
    return {Kind::Gelu, eps};
  }

  double apply(double z) const {
    return kind == Kind::Relu ? relu(z) : gelu_eps(z, eps);
  }

  // Convention at the relu kink: derivative 0 at z == 0.
  double derivative(double z) const {
    if (kind == Kind::Relu) return z > 0.0 ? 1.0 : 0.0;
    const double u = z / eps;
    return std_normal_cdf(u) + u * std_normal_pdf(u);
  }
};

// One block of the dynamics x -> post * sigma(W x + b). The post factor is
// absent on almost every layer; builders that need a final sign-recombination
// attach one there (its row count sets the block's effective output size).
struct Layer {
  Mat W;
  Vec b;
  std::optional<Mat> post;

  std::size_t in_dim() const { return W.cols; }
  std::size_t neurons() const { return W.rows; }
  std::size_t out_dim() const { return post ? post->rows : W.rows; }
};

inline Layer identity_layer(std::size_t n) {
  Layer l;
  l.W = Mat::identity(n);
  l.b = Vec(n, 0.0);
  return l;
}

struct Network {
  std::size_t input_dim = 0;
  std::vector<Layer> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t width() const {
    std::size_t w = 0;
    for (const auto& l : layers) w = std::max(w, l.neurons());
    return w;
  }
  std::size_t output_dim() const {
    return layers.empty() ? input_dim : layers.back().out_dim();
  }

  void validate() const {
    std::size_t d = input_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      if (l.in_dim() != d)
        throw ShapeMismatch("layer " + std::to_string(i) + " expects " +
                            std::to_string(l.in_dim()) + " inputs, got " +
                            std::to_string(d));
      if (l.b.size() != l.neurons())
        throw ShapeMismatch("layer " + std::to_string(i) + " bias size");
      if (l.post && l.post->cols != l.neurons())
        throw ShapeMismatch("layer " + std::to_string(i) + " post factor");
      d = l.out_dim();
    }
  }
};

inline Vec apply_layer(const Layer& l, const Vec& x,
                       const Activation& act = Activation::make_relu()) {
  Vec z = matvec(l.W, x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = act.apply(z[i] + l.b[i]);
  if (l.post) z = matvec(*l.post, z);
  return z;
}

inline Vec forward_with_activation(const Network& net, const Vec& x,
                                   const Activation& act) {
  if (x.size() != net.input_dim) throw ShapeMismatch("forward: input size");
  Vec cur = x;
  for (const auto& l : net.layers) cur = apply_layer(l, cur, act);
  return cur;
}

inline Vec forward(const Network& net, const Vec& x) {
  return forward_with_activation(net, x, Activation::make_relu());
}

// Post-activation state after every layer, in order.
inline std::vector<Vec> forward_trace(const Network& net, const Vec& x) {
  if (x.size() != net.input_dim) throw ShapeMismatch("forward: input size");
  std::vector<Vec> states;
  states.reserve(net.layers.size());
  Vec cur = x;
  for (const auto& l : net.layers) {
    cur = apply_layer(l, cur);
    states.push_back(cur);
  }
  return states;
}

// A contiguous run of layers forming one construction phase, plus where every
// input point sits once the phase has been applied.
struct StageRecord {
  std::string name;
  std::size_t first_layer = 0;  // half-open range [first_layer, last_layer)
  std::size_t last_layer = 0;
  std::vector<Vec> positions;
};

struct ConstructionTrace {
  std::vector<StageRecord> stages;
  bool nonstandard_depth = false;
};

// Unit vector whose projections keep all pairwise-distinct points apart by a
// gap_tol fraction of the closest pair distance. Dimension one admits only
// +-1, so (1) is returned directly; otherwise seeded Gaussian directions are
// drawn until one verifies (the separating set has full measure).
inline Vec separating_direction(const std::vector<Vec>& points,
                                std::uint64_t seed) {
  if (points.empty()) throw DomainError("separating_direction: no points");
  const std::size_t d = points[0].size();
  if (d == 0) throw DomainError("separating_direction: zero-dim points");
  for (const auto& p : points)
    if (p.size() != d) throw ShapeMismatch("separating_direction: mixed dims");

  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      Vec diff(d);
      for (std::size_t k = 0; k < d; ++k) diff[k] = points[i][k] - points[j][k];
      const double dist = norm2(diff);
      if (dist <= dedup_tol) throw DuplicatePoints(int(i), int(j));
      min_dist = std::min(min_dist, dist);
    }

  if (d == 1) return Vec{1.0};
  if (points.size() < 2) {
    Vec v(d, 0.0);
    v[0] = 1.0;
    return v;
  }

  auto rng = seeded_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double need = gap_tol * min_dist;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vec v(d);
    for (auto& c : v) c = gauss(rng);
    const double n = norm2(v);
    if (n < 1e-12) continue;
    for (auto& c : v) c /= n;
    bool ok = true;
    for (std::size_t i = 0; ok && i < points.size(); ++i)
      for (std::size_t j = i + 1; ok && j < points.size(); ++j) {
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          proj += v[k] * (points[i][k] - points[j][k]);
        if (std::fabs(proj) < need) ok = false;
      }
    if (ok) return v;
  }
  throw NoDirectionFound("no separating direction after 64 draws");
}

}  // namespace reluforge
