#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "reluforge/common.hpp"
#include "reluforge/geometry.hpp"
#include "reluforge/memorize.hpp"
#include "reluforge/norms.hpp"

namespace reluforge {

enum class LossKind { SquaredL2, BinaryLogistic };

struct TrainConfig {
  double lambda = 1e-3;
  LossKind loss = LossKind::SquaredL2;
  double learning_rate = 0.05;
  int max_iters = 500;
  Activation activation = Activation::make_relu();
  int restarts = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline Vec expected_output(const LabeledDataset& ds, std::size_t i) {
  return ds.kind == LabelKind::Vector ? ds.vector_labels[i]
                                      : Vec{ds.labels[i]};
}

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_logistic_applicability(const LabeledDataset& ds,
                                         const Network& net) {
  if (ds.kind == LabelKind::Vector || net.output_dim() != 1)
    throw LossLabelMismatch("logistic loss needs a scalar output");
  for (double y : ds.labels)
    if (y != 0.0 && y != 1.0)
      throw LossLabelMismatch("logistic loss needs 0/1 labels");
}

inline double pointwise_loss(LossKind kind, const Vec& out, const Vec& y) {
  if (out.size() != y.size())
    throw ShapeMismatch("loss: output and label dims differ");
  if (kind == LossKind::SquaredL2) {
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double d = out[j] - y[j];
      s += d * d;
    }
    return s;
  }
  return softplus(out[0]) - y[0] * out[0];
}

inline Vec pointwise_loss_grad(LossKind kind, const Vec& out, const Vec& y) {
  Vec g(out.size());
  if (kind == LossKind::SquaredL2) {
    for (std::size_t j = 0; j < out.size(); ++j)
      g[j] = 2.0 * (out[j] - y[j]);
  } else {
    g[0] = sigmoid(out[0]) - y[0];
  }
  return g;
}

}  // namespace detail

// Regularized empirical objective: lambda * ||theta||_2^2 + mean loss.
inline double j_lambda(const Network& net, const LabeledDataset& ds,
                       const TrainConfig& cfg) {
  validate_dataset(ds);
  if (cfg.loss == LossKind::BinaryLogistic)
    detail::check_logistic_applicability(ds, net);
  const NormReport norms = triple_norm(net);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vec out =
        forward_with_activation(net, ds.points[i], cfg.activation);
    loss_sum +=
        detail::pointwise_loss(cfg.loss, out, detail::expected_output(ds, i));
  }
  const double j =
      cfg.lambda * norms.l2 * norms.l2 + loss_sum / double(ds.size());
  if (!std::isfinite(j)) throw NonFiniteLoss("objective is not finite");
  return j;
}

struct Gradient {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  double squared_norm() const {
    double s = 0.0;
    for (const auto& m : dW)
      for (double v : m.data) s += v * v;
    for (const auto& b : db)
      for (double v : b) s += v * v;
    return s;
  }
};

// Reverse-mode gradient of j_lambda in the (W, b) parameters. Post factors
// are constants: the error signal passes through their transpose.
inline Gradient grad_j_lambda(const Network& net, const LabeledDataset& ds,
                              const TrainConfig& cfg) {
  validate_dataset(ds);
  if (cfg.loss == LossKind::BinaryLogistic)
    detail::check_logistic_applicability(ds, net);
  const std::size_t depth = net.depth();
  Gradient g;
  g.dW.reserve(depth);
  g.db.reserve(depth);
  for (const auto& l : net.layers) {
    g.dW.emplace_back(l.W.rows, l.W.cols);
    g.db.emplace_back(l.b.size(), 0.0);
  }

  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<Vec> inputs(depth);   // activation entering each layer
    std::vector<Vec> preacts(depth);  // W x + b per layer
    Vec cur = ds.points[i];
    for (std::size_t l = 0; l < depth; ++l) {
      inputs[l] = cur;
      Vec z = matvec(net.layers[l].W, cur);
      for (std::size_t r = 0; r < z.size(); ++r) z[r] += net.layers[l].b[r];
      preacts[l] = z;
      for (auto& v : z) v = cfg.activation.apply(v);
      cur = net.layers[l].post ? matvec(*net.layers[l].post, z) : z;
    }
    Vec delta = detail::pointwise_loss_grad(cfg.loss, cur,
                                            detail::expected_output(ds, i));
    for (std::size_t li = depth; li-- > 0;) {
      const Layer& l = net.layers[li];
      Vec dz(l.neurons(), 0.0);
      if (l.post) {
        for (std::size_t r = 0; r < l.post->rows; ++r)
          for (std::size_t c = 0; c < l.post->cols; ++c)
            dz[c] += l.post->at(r, c) * delta[r];
      } else {
        dz = delta;
      }
      for (std::size_t r = 0; r < dz.size(); ++r)
        dz[r] *= cfg.activation.derivative(preacts[li][r]);
      for (std::size_t r = 0; r < l.W.rows; ++r)
        for (std::size_t c = 0; c < l.W.cols; ++c)
          g.dW[li].at(r, c) += dz[r] * inputs[li][c];
      for (std::size_t r = 0; r < dz.size(); ++r) g.db[li][r] += dz[r];
      Vec prev(l.in_dim(), 0.0);
      for (std::size_t r = 0; r < l.W.rows; ++r)
        for (std::size_t c = 0; c < l.W.cols; ++c)
          prev[c] += l.W.at(r, c) * dz[r];
      delta = std::move(prev);
    }
  }

  const double inv_n = 1.0 / double(ds.size());
  for (std::size_t li = 0; li < depth; ++li) {
    for (std::size_t k = 0; k < g.dW[li].data.size(); ++k)
      g.dW[li].data[k] = g.dW[li].data[k] * inv_n +
                         2.0 * cfg.lambda * net.layers[li].W.data[k];
    for (std::size_t r = 0; r < g.db[li].size(); ++r)
      g.db[li][r] =
          g.db[li][r] * inv_n + 2.0 * cfg.lambda * net.layers[li].b[r];
  }
  return g;
}

struct TrainResult {
  Network net;
  std::vector<double> history;  // objective after init and each accepted step
  std::vector<double> norm_sq_history;  // ||theta||^2 at the same iterates
};

// Gradient descent with backtracking line search and optional random
// restarts. Run 0 starts from the given parameters; later runs perturb them.
// A run whose objective turns non-finite is abandoned; if every run is, the
// error propagates.
inline TrainResult train_gd(const Network& init, const LabeledDataset& ds,
                            const TrainConfig& cfg) {
  const int runs = cfg.restarts + 1;
  bool have_best = false;
  TrainResult best;

  for (int run = 0; run < runs; ++run) {
    Network net = init;
    if (run > 0) {
      auto rng = seeded_rng(mix_seed(cfg.seed, run));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (auto& l : net.layers) {
        for (auto& v : l.W.data) v += 0.1 * (1.0 + std::fabs(v)) * gauss(rng);
        for (auto& v : l.b) v += 0.1 * (1.0 + std::fabs(v)) * gauss(rng);
      }
    }
    std::vector<double> history;
    std::vector<double> norm_sq_history;
    const auto norm_sq = [](const Network& n) {
      const NormReport r = triple_norm(n);
      return r.l2 * r.l2;
    };
    double j;
    try {
      j = j_lambda(net, ds, cfg);
    } catch (const NonFiniteLoss&) {
      continue;
    }
    history.push_back(j);
    norm_sq_history.push_back(norm_sq(net));

    bool aborted = false;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      const Gradient g = grad_j_lambda(net, ds, cfg);
      const double gn2 = g.squared_norm();
      if (!std::isfinite(gn2)) {
        aborted = true;
        break;
      }
      if (gn2 < 1e-24) break;
      double lr = cfg.learning_rate;
      bool stepped = false;
      while (lr > 1e-18 * cfg.learning_rate) {
        Network cand = net;
        for (std::size_t li = 0; li < cand.layers.size(); ++li) {
          for (std::size_t k = 0; k < cand.layers[li].W.data.size(); ++k)
            cand.layers[li].W.data[k] -= lr * g.dW[li].data[k];
          for (std::size_t r = 0; r < cand.layers[li].b.size(); ++r)
            cand.layers[li].b[r] -= lr * g.db[li][r];
        }
        double jc;
        try {
          jc = j_lambda(cand, ds, cfg);
        } catch (const NonFiniteLoss&) {
          lr *= 0.5;
          continue;
        }
        if (jc <= j - 1e-4 * lr * gn2) {
          net = std::move(cand);
          j = jc;
          history.push_back(j);
          norm_sq_history.push_back(norm_sq(net));
          stepped = true;
          break;
        }
        lr *= 0.5;
      }
      if (!stepped) break;
    }
    if (aborted) continue;
    if (!have_best || j < best.history.back()) {
      best.net = std::move(net);
      best.history = std::move(history);
      best.norm_sq_history = std::move(norm_sq_history);
      have_best = true;
    }
  }
  if (!have_best)
    throw NonFiniteLoss("every training run hit a non-finite objective");
  return best;
}

// Value of the regularized objective at an exact memorizer: the loss term
// vanishes, leaving lambda times the squared parameter norm.
inline double certificate(const Network& net, const LabeledDataset& ds,
                          double lambda) {
  const MemorizationReport rep = verify_memorization(net, ds, 1e-6);
  if (!rep.failures.empty())
    throw NotAMemorizer("network misses " +
                        std::to_string(rep.failures.size()) +
                        " points beyond 1e-6");
  const NormReport norms = triple_norm(net);
  return lambda * norms.l2 * norms.l2;
}

// Layer-wise reach of the data through the network: R_0 is the largest input
// norm, and each layer can stretch by its spectral norm plus bias.
inline std::vector<double> deviation_radii(const Network& net,
                                           const LabeledDataset& ds) {
  validate_dataset(ds);
  std::vector<double> radii;
  radii.reserve(net.depth() + 1);
  double r = 0.0;
  for (const auto& p : ds.points) r = std::max(r, norm2(p));
  radii.push_back(r);
  for (const auto& l : net.layers) {
    r = spectral_norm(l.W) * r + norm2(l.b);
    radii.push_back(r);
  }
  return radii;
}

// Worst-case per-layer gap between the smoothed and exact rectifier over the
// reachable ball. The scalar gap profile t(1 - Phi(t)) peaks at the recorded
// argmax, so beyond that radius the bound saturates at eps * c0 per neuron.
inline std::vector<double> nu_for_gelu(const Network& net,
                                       const std::vector<double>& radii,
                                       double eps) {
  if (eps <= 0.0) throw DomainError("nu_for_gelu needs eps > 0");
  if (radii.size() != net.depth() + 1)
    throw ShapeMismatch("nu_for_gelu: one radius per layer boundary");
  std::vector<double> nu(net.depth());
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const double t =
        std::min(radii[j + 1] / eps, gelu_relu_gap_argmax);
    nu[j] = std::sqrt(double(net.layers[j].neurons())) * eps *
            gelu_relu_gap_profile(t);
  }
  return nu;
}

// Accumulated effect of the per-layer gaps on the squared loss, via the
// geometric growth of perturbations through layers of squared norm q.
inline double a_loss_squared(const std::vector<double>& nu,
                             double theta_norm_sq, std::size_t depth) {
  double s = 0.0;
  for (double v : nu) s += v * v;
  const double q = theta_norm_sq;
  if (std::fabs(q - 1.0) <= 1e-12) return 2.0 * s * double(depth);
  return 2.0 * s * (std::pow(q, double(depth)) - 1.0) / (q - 1.0);
}

// Upper bound on the smoothed-activation objective at an exact memorizer:
// the certificate plus the accumulated smoothing term.
inline double smoothed_objective_bound(const Network& net, const LabeledDataset& ds,
                             double lambda, double eps) {
  const double cert = certificate(net, ds, lambda);
  const NormReport norms = triple_norm(net);
  const std::vector<double> radii = deviation_radii(net, ds);
  const std::vector<double> nu = nu_for_gelu(net, radii, eps);
  return cert + a_loss_squared(nu, norms.l2 * norms.l2, net.depth());
}

}  // namespace reluforge
