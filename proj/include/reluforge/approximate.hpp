#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "reluforge/common.hpp"
#include "reluforge/geometry.hpp"
#include "reluforge/memorize.hpp"

namespace reluforge {

using Sampler = std::function<double(const Vec&)>;

struct Box {
  Vec lo, hi;
  std::size_t dim() const { return lo.size(); }
  double volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) v *= hi[k] - lo[k];
    return v;
  }
};

struct AxisSegment {
  double lo = 0.0, hi = 0.0;
};

// Axis-aligned cell/band decomposition: along each axis, solid intervals of
// length h separated by gaps of width delta = h^(1+p). Cells are products of
// solid intervals; any product touching a gap belongs to the band region.
struct HyperrectGrid {
  Box bbox;
  double h = 0.0, delta = 0.0, p_exponent = 0.0;
  std::vector<std::vector<AxisSegment>> axis_cells;
  std::vector<std::vector<AxisSegment>> axis_bands;
  std::vector<int> n_axis;
  std::vector<Box> cells;       // row-major, last axis fastest
  std::vector<Box> band_cells;  // every mixed product with at least one gap
  std::vector<std::size_t> edge_cells;  // processing order, corner first
  double c_omega = 0.0;      // cell count times h^d
  double band_measure = 0.0;
  double c_band = 0.0;       // band measure per unit gap width

  std::size_t dim() const { return bbox.dim(); }
  std::size_t cell_count() const { return cells.size(); }

  std::vector<int> to_multi(std::size_t flat) const {
    std::vector<int> idx(dim());
    for (std::size_t k = dim(); k-- > 0;) {
      idx[k] = int(flat % std::size_t(n_axis[k]));
      flat /= std::size_t(n_axis[k]);
    }
    return idx;
  }
  std::size_t to_flat(const std::vector<int>& idx) const {
    std::size_t flat = 0;
    for (std::size_t k = 0; k < dim(); ++k)
      flat = flat * std::size_t(n_axis[k]) + std::size_t(idx[k]);
    return flat;
  }
};

inline HyperrectGrid build_grid(const Box& bbox, double h, double p,
                                std::size_t cell_budget = 4096) {
  const std::size_t d = bbox.dim();
  if (d == 0 || bbox.hi.size() != d) throw DomainError("grid: bad box");
  for (std::size_t k = 0; k < d; ++k)
    if (!(bbox.hi[k] > bbox.lo[k])) throw DomainError("grid: empty box side");
  if (!(h > 0.0 && h < 1.0)) throw DomainError("grid: h must be in (0,1)");
  if (!(p >= 1.0)) throw DomainError("grid: p must be at least 1");

  HyperrectGrid g;
  g.bbox = bbox;
  g.h = h;
  g.p_exponent = p;
  g.delta = std::pow(h, 1.0 + p);

  g.axis_cells.resize(d);
  g.axis_bands.resize(d);
  g.n_axis.resize(d);
  std::size_t total = 1;
  for (std::size_t k = 0; k < d; ++k) {
    const double lo = bbox.lo[k], hi = bbox.hi[k];
    for (int j = 0;; ++j) {
      const double t = lo + double(j) * (h + g.delta);
      if (!(t < hi)) break;
      g.axis_cells[k].push_back({t, std::min(t + h, hi)});
      const double blo = t + h;
      const double bhi = std::min(lo + double(j + 1) * (h + g.delta), hi);
      if (bhi > blo) g.axis_bands[k].push_back({blo, bhi});
    }
    g.n_axis[k] = int(g.axis_cells[k].size());
    if (g.n_axis[k] == 0) throw DomainError("grid: axis produced no cells");
    total *= std::size_t(g.n_axis[k]);
    if (total > cell_budget)
      throw TooFine("grid: " + std::to_string(total) + " cells exceed budget " +
                    std::to_string(cell_budget));
  }

  // Cells: cartesian product of solid intervals.
  for (std::size_t flat = 0; flat < total; ++flat) {
    const std::vector<int> mi = [&] {
      std::vector<int> v(d);
      std::size_t rem = flat;
      for (std::size_t k = d; k-- > 0;) {
        v[k] = int(rem % std::size_t(g.n_axis[k]));
        rem /= std::size_t(g.n_axis[k]);
      }
      return v;
    }();
    Box c;
    c.lo.resize(d);
    c.hi.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
      c.lo[k] = g.axis_cells[k][mi[k]].lo;
      c.hi[k] = g.axis_cells[k][mi[k]].hi;
    }
    g.cells.push_back(std::move(c));
  }

  // Band region: every product box touching at least one gap. Per axis the
  // segment code is 2*i for cell i and 2*i+1 for the following gap.
  {
    std::vector<std::vector<AxisSegment>> segs(d);
    std::vector<std::vector<bool>> is_band(d);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t i = 0; i < g.axis_cells[k].size(); ++i) {
        segs[k].push_back(g.axis_cells[k][i]);
        is_band[k].push_back(false);
        if (i < g.axis_bands[k].size()) {
          segs[k].push_back(g.axis_bands[k][i]);
          is_band[k].push_back(true);
        }
      }
    }
    std::vector<std::size_t> pick(d, 0);
    bool more = true;
    while (more) {
      bool any_band = false;
      for (std::size_t k = 0; k < d; ++k) any_band |= is_band[k][pick[k]];
      if (any_band) {
        Box b;
        b.lo.resize(d);
        b.hi.resize(d);
        for (std::size_t k = 0; k < d; ++k) {
          b.lo[k] = segs[k][pick[k]].lo;
          b.hi[k] = segs[k][pick[k]].hi;
        }
        g.band_measure += b.volume();
        g.band_cells.push_back(std::move(b));
      }
      more = false;
      for (std::size_t k = d; k-- > 0;) {
        if (++pick[k] < segs[k].size()) {
          more = true;
          break;
        }
        pick[k] = 0;
      }
    }
  }
  g.c_omega = double(total) * std::pow(h, double(d));
  g.c_band = g.band_measure / g.delta;

  // Edge cells: the d axis rays through the smallest corner, corner first,
  // then each axis in ascending index order without repeating the corner.
  for (std::size_t k = 0; k < d; ++k)
    for (int j = (k == 0 ? 0 : 1); j < g.n_axis[k]; ++j) {
      std::vector<int> mi(d, 0);
      mi[k] = j;
      g.edge_cells.push_back(g.to_flat(mi));
    }
  return g;
}

inline std::size_t edge_cell_count(const HyperrectGrid& g) {
  return g.edge_cells.size();
}

// Piecewise-constant surrogate: one average per cell and per band box.
struct SimpleFunction {
  HyperrectGrid grid;
  std::vector<double> cell_values;
  std::vector<double> band_values;
  int m_h = 0;  // distinct cell values after rounding

  double value_at(const Vec& x) const {
    const std::size_t d = grid.dim();
    std::vector<int> mi(d);
    bool banded = false;
    for (std::size_t k = 0; k < d; ++k) {
      int found = -1;
      for (std::size_t i = 0; i < grid.axis_cells[k].size(); ++i)
        if (x[k] >= grid.axis_cells[k][i].lo &&
            x[k] <= grid.axis_cells[k][i].hi) {
          found = int(i);
          break;
        }
      if (found < 0) {
        banded = true;
        break;
      }
      mi[k] = found;
    }
    if (!banded) return cell_values[grid.to_flat(mi)];
    for (std::size_t b = 0; b < grid.band_cells.size(); ++b) {
      bool in = true;
      for (std::size_t k = 0; k < d && in; ++k)
        in = x[k] >= grid.band_cells[b].lo[k] &&
             x[k] <= grid.band_cells[b].hi[k];
      if (in) return band_values[b];
    }
    return 0.0;
  }
};

namespace detail {
inline double box_average(const Sampler& f, const Box& box, int q) {
  const std::size_t d = box.dim();
  std::vector<int> idx(d, 0);
  double sum = 0.0;
  std::size_t count = 0;
  Vec x(d);
  for (;;) {
    for (std::size_t k = 0; k < d; ++k) {
      const double w = (box.hi[k] - box.lo[k]) / double(q);
      x[k] = box.lo[k] + (double(idx[k]) + 0.5) * w;
    }
    sum += f(x);
    ++count;
    std::size_t k = d;
    bool carried = true;
    while (k-- > 0) {
      if (++idx[k] < q) {
        carried = false;
        break;
      }
      idx[k] = 0;
    }
    if (carried) break;
  }
  return sum / double(count);
}
}  // namespace detail

// Composite-midpoint averages of the sampler over every cell and band box.
inline SimpleFunction cell_averages(const Sampler& f,
                                    const HyperrectGrid& grid,
                                    int quad_points = 8) {
  if (quad_points < 1) throw DomainError("cell_averages: quad_points >= 1");
  SimpleFunction sf;
  sf.grid = grid;
  sf.cell_values.reserve(grid.cells.size());
  for (const auto& c : grid.cells)
    sf.cell_values.push_back(detail::box_average(f, c, quad_points));
  sf.band_values.reserve(grid.band_cells.size());
  for (const auto& b : grid.band_cells)
    sf.band_values.push_back(detail::box_average(f, b, quad_points));
  std::set<long long> keys;
  for (double v : sf.cell_values)
    keys.insert(std::llround(v / value_round_tol));
  sf.m_h = int(keys.size());
  return sf;
}

// ---------------------------------------------------------------------------
// Edge compression: two layers per edge cell collapse one slab of one axis
// to a point while translating everything else, so after all rounds every
// cell has shrunk to its own distinct point. State tracks, per axis and per
// slab index, the current interval image of that slab.
// ---------------------------------------------------------------------------

struct CompressionState {
  const HyperrectGrid* grid = nullptr;
  std::vector<std::vector<AxisSegment>> slabs;
  std::vector<Layer> layers;
};

inline CompressionState make_compression_state(const HyperrectGrid& grid) {
  CompressionState st;
  st.grid = &grid;
  st.slabs = grid.axis_cells;
  return st;
}

inline void compress_edge_cell(CompressionState& st, std::size_t cell_index) {
  const HyperrectGrid& g = *st.grid;
  const std::size_t d = g.dim();
  const std::vector<int> mi = g.to_multi(cell_index);
  std::size_t k = 0;
  for (std::size_t a = 0; a < d; ++a)
    if (mi[a] != 0) {
      k = a;
      break;
    }
  for (std::size_t a = 0; a < d; ++a)
    if (a != k && mi[a] != 0)
      throw DomainError("compress_edge_cell: cell is not on a selected edge");
  const int j = mi[k];

  auto gap_center = [](double below_hi, double above_lo) {
    if (!(above_lo - below_hi > 1e-13 * std::max({1.0, std::fabs(below_hi),
                                                  std::fabs(above_lo)})))
      throw PlacementError("slab gap closed below float resolution");
    return 0.5 * (below_hi + above_lo);
  };

  std::vector<double> c_side(d, 0.0);  // offsets for the pass-through axes
  for (std::size_t a = 0; a < d; ++a) {
    if (a == k) continue;
    c_side[a] = st.slabs[a].size() > 1
                    ? gap_center(st.slabs[a][0].hi, st.slabs[a][1].lo)
                    : st.slabs[a][0].hi + 0.25;
  }
  const double c_above =
      j + 1 < int(st.slabs[k].size())
          ? gap_center(st.slabs[k][j].hi, st.slabs[k][j + 1].lo)
          : st.slabs[k][j].hi + 0.25;
  const double c_below = j > 0
                             ? gap_center(st.slabs[k][j - 1].hi,
                                          st.slabs[k][j].lo)
                             : st.slabs[k][0].lo - 0.25;

  // First layer: one plane per axis plus an opposing plane on the edge axis.
  Layer l1;
  l1.W = Mat(d + 1, d);
  l1.b = Vec(d + 1, 0.0);
  {
    std::size_t r = 0;
    for (std::size_t a = 0; a < d; ++a) {
      if (a == k) {
        l1.W.at(r, a) = 1.0;
        l1.b[r] = -c_above;
        ++r;
        l1.W.at(r, a) = -1.0;
        l1.b[r] = c_below;
        ++r;
      } else {
        l1.W.at(r, a) = 1.0;
        l1.b[r] = -c_side[a];
        ++r;
      }
    }
  }
  // Second layer: the transpose recombines each axis; the bias keeps every
  // coordinate non-negative (2x the worst undershoot, 0.1 when none).
  Layer l2;
  l2.W = Mat(d, d + 1);
  for (std::size_t r = 0; r < d + 1; ++r)
    for (std::size_t a = 0; a < d; ++a) l2.W.at(a, r) = l1.W.at(r, a);
  l2.b = Vec(d, 0.0);

  auto mapped = [&](std::size_t a, double x) {
    if (a == k) return relu(x - c_above) - relu(c_below - x);
    return relu(x - c_side[a]);
  };
  for (std::size_t a = 0; a < d; ++a) {
    double min_pre = 0.0;
    for (const auto& s : st.slabs[a])
      min_pre = std::min({min_pre, mapped(a, s.lo), mapped(a, s.hi)});
    l2.b[a] = min_pre < 0.0 ? -2.0 * min_pre : 0.1;
  }
  for (std::size_t a = 0; a < d; ++a)
    for (auto& s : st.slabs[a]) {
      s.lo = mapped(a, s.lo) + l2.b[a];
      s.hi = mapped(a, s.hi) + l2.b[a];
    }
  st.layers.push_back(std::move(l1));
  st.layers.push_back(std::move(l2));
}

// Runs every edge cell in order and returns the 2 * N_E layers plus the
// final point of each cell (all cells collapse to distinct points).
inline std::pair<std::vector<Layer>, std::vector<Vec>> compress_all(
    const HyperrectGrid& grid) {
  CompressionState st = make_compression_state(grid);
  for (std::size_t ci : grid.edge_cells) compress_edge_cell(st, ci);
  for (std::size_t a = 0; a < grid.dim(); ++a)
    for (const auto& s : st.slabs[a])
      if (s.lo != s.hi)
        throw PlacementError("a slab failed to collapse to a point");
  std::vector<Vec> pts(grid.cell_count(), Vec(grid.dim()));
  for (std::size_t ci = 0; ci < grid.cell_count(); ++ci) {
    const std::vector<int> mi = grid.to_multi(ci);
    for (std::size_t a = 0; a < grid.dim(); ++a)
      pts[ci][a] = st.slabs[a][mi[a]].lo;
  }
  return {std::move(st.layers), std::move(pts)};
}

// ---------------------------------------------------------------------------
// Assembly: compression followed by a memorizer of the per-cell averages.
// ---------------------------------------------------------------------------

struct ApproximatorBuild {
  Network net;
  SimpleFunction fh;
  ConstructionTrace trace;
  std::size_t n_h = 0;  // cells
  std::size_t n_e = 0;  // edge cells
  int m_h = 0;          // distinct cell values
};

namespace detail {

inline ApproximatorBuild assemble_approximator(const HyperrectGrid& grid,
                                               SimpleFunction fh,
                                               std::uint64_t seed) {
  for (double v : fh.cell_values)
    if (!(v >= 0.0))
      throw DomainError("approximator needs non-negative cell values");
  auto [comp_layers, pts] = compress_all(grid);

  std::map<long long, double> key_to_value;
  for (double v : fh.cell_values)
    key_to_value.emplace(std::llround(v / value_round_tol), v);
  std::vector<long long> keys;
  std::vector<double> targets;
  for (const auto& [key, v] : key_to_value) {
    keys.push_back(key);
    targets.push_back(v);
  }
  std::vector<int> ids(fh.cell_values.size());
  for (std::size_t i = 0; i < fh.cell_values.size(); ++i)
    ids[i] = int(std::lower_bound(
                     keys.begin(), keys.end(),
                     std::llround(fh.cell_values[i] / value_round_tol)) -
                 keys.begin());

  CoreBuild core = build_class_network(pts, ids, targets, seed);

  ApproximatorBuild out;
  out.n_h = grid.cell_count();
  out.n_e = grid.edge_cells.size();
  out.m_h = int(targets.size());
  out.fh = std::move(fh);
  out.net.input_dim = grid.dim();
  out.net.layers = std::move(comp_layers);
  const std::size_t shift = out.net.layers.size();
  StageRecord comp_rec;
  comp_rec.name = "edge_compression";
  comp_rec.first_layer = 0;
  comp_rec.last_layer = shift;
  comp_rec.positions = pts;
  out.trace.stages.push_back(std::move(comp_rec));
  for (auto& st : core.trace.stages) {
    st.first_layer += shift;
    st.last_layer += shift;
    out.trace.stages.push_back(std::move(st));
  }
  out.trace.nonstandard_depth = core.trace.nonstandard_depth;
  for (auto& l : core.net.layers) out.net.layers.push_back(std::move(l));
  out.net.validate();
  return out;
}

}  // namespace detail

// Approximates a non-negative sampler on its box domain: grid, averages,
// edge compression, then memorization of the per-cell averages.
inline ApproximatorBuild build_approximator(const Sampler& f, const Box& bbox,
                                            double h, double p,
                                            std::uint64_t seed,
                                            int quad_points = 8,
                                            std::size_t cell_budget = 4096) {
  const HyperrectGrid grid = build_grid(bbox, h, p, cell_budget);
  SimpleFunction fh = cell_averages(f, grid, quad_points);
  return detail::assemble_approximator(grid, std::move(fh), seed);
}

// Sign-carrying variant: averages are shifted to start at zero, memorized,
// and a final recombining block adds the shift back.
inline ApproximatorBuild build_signed_approximator(
    const Sampler& f, const Box& bbox, double h, double p, std::uint64_t seed,
    int quad_points = 8, std::size_t cell_budget = 4096) {
  const HyperrectGrid grid = build_grid(bbox, h, p, cell_budget);
  SimpleFunction raw = cell_averages(f, grid, quad_points);
  double shift = 0.0;
  for (double v : raw.cell_values) shift = std::min(shift, v);
  SimpleFunction lifted = raw;
  for (double& v : lifted.cell_values) v -= shift;
  ApproximatorBuild out =
      detail::assemble_approximator(grid, std::move(lifted), seed);
  for (auto& l : out.net.layers) l.post = Mat::identity(l.neurons());
  Layer dec;
  dec.W = Mat(2, 1, {-1.0, 1.0});
  dec.b = Vec{-shift, shift};
  dec.post = Mat(1, 2, {-1.0, 1.0});
  out.net.layers.push_back(dec);
  StageRecord rec;
  rec.name = "sign_decoding";
  rec.first_layer = out.net.layers.size() - 1;
  rec.last_layer = out.net.layers.size();
  for (double v : raw.cell_values) rec.positions.push_back(Vec{v});
  out.trace.stages.push_back(std::move(rec));
  out.net.validate();
  out.fh = std::move(raw);
  return out;
}

struct LpEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
};

// Monte Carlo L^p error of the network's scalar output against the sampler
// over {x in bbox : inside(x)}, with a delta-method standard error.
inline LpEstimate lp_error(const Network& net, const Sampler& f,
                           const Box& bbox,
                           const std::function<bool(const Vec&)>& inside,
                           double p, std::size_t n, std::uint64_t seed) {
  if (n < 1000) throw DomainError("lp_error: need at least 1000 samples");
  if (!(p >= 1.0)) throw DomainError("lp_error: p must be at least 1");
  auto rng = seeded_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t d = bbox.dim();
  std::size_t attempts = 0;
  double sum = 0.0, sum_sq = 0.0;
  Vec x(d);
  for (std::size_t got = 0; got < n;) {
    if (++attempts > 1000 * n)
      throw DomainError("lp_error: domain acceptance rate too low");
    for (std::size_t k = 0; k < d; ++k)
      x[k] = bbox.lo[k] + unif(rng) * (bbox.hi[k] - bbox.lo[k]);
    if (!inside(x)) continue;
    ++got;
    const double diff = std::fabs(forward(net, x)[0] - f(x));
    const double v = std::pow(diff, p);
    sum += v;
    sum_sq += v * v;
  }
  const double vol = bbox.volume() * double(n) / double(attempts);
  const double mean = sum / double(n);
  const double var =
      std::max(0.0, sum_sq / double(n) - mean * mean) / double(n);
  const double integral = vol * mean;
  const double se_integral = vol * std::sqrt(var);
  LpEstimate est;
  est.samples = n;
  est.value = std::pow(integral, 1.0 / p);
  est.stderr_ = integral > 0.0
                    ? est.value * se_integral / (p * integral)
                    : std::pow(se_integral, 1.0 / p);
  return est;
}

// Depth sufficient for accuracy eps in dimension d at regularity norm w1p.
inline double depth_bound(double w1p_norm, double eps, int d, double c) {
  if (!(w1p_norm > 0.0) || !(eps > 0.0) || d < 1 || !(c > 0.0))
    throw DomainError("depth_bound needs positive arguments");
  return c * std::pow(w1p_norm / eps, double(d));
}

}  // namespace reluforge
