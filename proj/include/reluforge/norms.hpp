#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "reluforge/common.hpp"
#include "reluforge/geometry.hpp"
#include "reluforge/memorize.hpp"

namespace reluforge {

struct LayerNorms {
  double frobenius_sq = 0.0;
  double bias_sq = 0.0;
  double w_inf = 0.0;
  double b_inf = 0.0;
};

struct NormReport {
  double l2 = 0.0;    // sqrt of the summed squared weight/bias entries
  double linf = 0.0;  // largest absolute entry anywhere
  std::vector<LayerNorms> per_layer;
};

// Parameter norms over (W, b) of every layer; post factors are fixed
// recombinations, not free parameters, and are not counted.
inline NormReport triple_norm(const Network& net) {
  NormReport rep;
  double sum = 0.0;
  for (const auto& l : net.layers) {
    LayerNorms ln;
    ln.frobenius_sq = frobenius_sq(l.W);
    for (double x : l.b) ln.bias_sq += x * x;
    ln.w_inf = max_abs(l.W);
    ln.b_inf = norm_inf(l.b);
    sum += ln.frobenius_sq + ln.bias_sq;
    rep.linf = std::max({rep.linf, ln.w_inf, ln.b_inf});
    rep.per_layer.push_back(ln);
  }
  rep.l2 = std::sqrt(sum);
  return rep;
}

inline void check_bound_args(int n, int m, double rx, double ry) {
  if (n <= 1 || m <= 1)
    throw DomainError("norm bounds need at least 2 points and 2 classes");
  if (!(rx > 0.0) || !(ry > 0.0))
    throw DomainError("norm bounds need positive radii");
}

inline double bound_l2(int n, int m, double rx, double ry, double c) {
  check_bound_args(n, m, rx, ry);
  return c * (1.0 + rx * std::sqrt(double(n)) +
              rx * double(n) * std::sqrt(double(m)) + ry * double(m));
}

inline double bound_linf(int n, int m, double rx, double ry, double c) {
  check_bound_args(n, m, rx, ry);
  return c * (rx * double(n) + double(m) + ry);
}

inline std::uint64_t dataset_hash(const LabeledDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : ds.points)
    for (double v : p) feed(v);
  if (ds.kind == LabelKind::Vector) {
    for (const auto& y : ds.vector_labels)
      for (double v : y) feed(v);
  } else {
    for (double v : ds.labels) feed(v);
  }
  return h;
}

struct CalibrationResult {
  std::string regime_id;
  double c_l2 = 0.0;
  double c_linf = 0.0;
  double min_gap = 0.0;
  std::vector<std::uint64_t> dataset_hashes;
};

// Smallest constants making the depth-norm bounds hold over a dataset
// family: the max over the family of measured norm / bound-at-c-equal-1.
inline CalibrationResult calibrate_C(
    const std::vector<LabeledDataset>& family, std::uint64_t seed,
    const std::string& regime_id = "") {
  if (family.empty()) throw DomainError("calibration needs datasets");
  CalibrationResult res;
  res.regime_id = regime_id;
  res.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < family.size(); ++t) {
    const LabeledDataset& ds = family[t];
    auto [net, trace] = build_memorizer(ds, mix_seed(seed, t));
    const NormReport rep = triple_norm(net);

    const int n = int(ds.size());
    std::vector<double> distinct = ds.labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()),
                   distinct.end());
    const int m = int(distinct.size());
    double rx = 0.0, ry = 0.0;
    for (const auto& p : ds.points) rx = std::max(rx, norm2(p));
    for (double y : ds.labels) ry = std::max(ry, std::fabs(y));
    res.c_l2 = std::max(res.c_l2, rep.l2 / bound_l2(n, m, rx, ry, 1.0));
    res.c_linf =
        std::max(res.c_linf, rep.linf / bound_linf(n, m, rx, ry, 1.0));

    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = i + 1; j < ds.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < ds.dim(); ++k) {
          const double diff = ds.points[i][k] - ds.points[j][k];
          d2 += diff * diff;
        }
        res.min_gap = std::min(res.min_gap, std::sqrt(d2));
      }
    res.dataset_hashes.push_back(dataset_hash(ds));
  }
  return res;
}

}  // namespace reluforge
