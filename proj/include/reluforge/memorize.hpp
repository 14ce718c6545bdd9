#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "reluforge/common.hpp"
#include "reluforge/geometry.hpp"

namespace reluforge {

enum class LabelKind { Class, Real, Vector };

struct LabeledDataset {
  std::vector<Vec> points;
  LabelKind kind = LabelKind::Class;
  std::vector<double> labels;       // Class / Real
  std::vector<Vec> vector_labels;   // Vector

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : points[0].size(); }
};

inline void validate_dataset(const LabeledDataset& ds) {
  if (ds.points.empty()) throw DomainError("dataset is empty");
  const std::size_t d = ds.dim();
  if (d == 0) throw DomainError("dataset has zero-dimensional points");
  for (const auto& p : ds.points)
    if (p.size() != d) throw ShapeMismatch("dataset has mixed point dims");
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ds.points[i][k] - ds.points[j][k];
        dist2 += diff * diff;
      }
      if (std::sqrt(dist2) <= dedup_tol) throw DuplicatePoints(int(i), int(j));
    }
  if (ds.kind == LabelKind::Vector) {
    if (ds.vector_labels.size() != ds.size())
      throw ShapeMismatch("dataset: one label vector per point required");
    const std::size_t m = ds.vector_labels[0].size();
    if (m == 0) throw DomainError("dataset: empty label vectors");
    for (const auto& y : ds.vector_labels)
      if (y.size() != m) throw ShapeMismatch("dataset: mixed label vector dims");
  } else {
    if (ds.labels.size() != ds.size())
      throw ShapeMismatch("dataset: one label per point required");
    if (ds.kind == LabelKind::Class)
      for (double y : ds.labels)
        if (!(y >= 0.0) || std::fabs(y - std::round(y)) > 0.0)
          throw DomainError("class labels must be non-negative integers");
  }
}

struct ClassRepresentatives {
  std::vector<Vec> reps;  // one plane position per class, in class order
};

struct SortedRepresentatives {
  std::vector<double> values;  // one line value per class
};

struct MemorizationReport {
  double max_abs_error = 0.0;
  std::vector<int> failures;
};

// ---------------------------------------------------------------------------
// Stage 1: project onto a separating direction and shift into the positive
// half-line. Output values are strictly positive and pairwise distinct.
// ---------------------------------------------------------------------------

inline std::pair<Layer, std::vector<double>> precondition(
    const std::vector<Vec>& points, std::uint64_t seed) {
  const Vec w = separating_direction(points, seed);
  double rx = 0.0;
  for (const auto& p : points) rx = std::max(rx, norm2(p));
  Layer l;
  l.W = Mat(1, w.size());
  for (std::size_t k = 0; k < w.size(); ++k) l.W.at(0, k) = w[k];
  l.b = Vec{rx > 0.0 ? 2.0 * rx : 1.0};
  std::vector<double> projected(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    projected[i] = apply_layer(l, points[i])[0];
  return {l, projected};
}

namespace detail {

struct Neighbors {
  std::optional<double> left, right;
};

inline Neighbors neighbors_of(const std::vector<double>& sorted_vals,
                              double v) {
  Neighbors n;
  for (double u : sorted_vals) {
    if (u < v) n.left = u;
    if (u > v) {
      n.right = u;
      break;
    }
  }
  return n;
}

// Splits values around v: v to the exact origin, smaller values onto the
// vertical axis (c_lo - u), larger ones onto the horizontal axis (u - c_hi).
inline Layer structuring_layer(const std::vector<double>& values, double v) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const Neighbors nb = neighbors_of(sorted, v);
  const double c_lo = nb.left ? 0.5 * (*nb.left + v) : 0.5 * v;
  const double c_hi = nb.right ? 0.5 * (v + *nb.right) : v + 0.25;
  Layer l;
  l.W = Mat(2, 1, {1.0, -1.0});
  l.b = Vec{-c_hi, c_lo};
  return l;
}

struct PlaneSites {
  std::vector<double> xs;  // distinct abscissas of horizontal-axis sites
  std::vector<double> ys;  // distinct heights of vertical-axis sites
  bool origin = false;
};

inline PlaneSites classify_sites(const std::vector<Vec>& positions) {
  PlaneSites s;
  std::set<double> xs, ys;
  for (const auto& p : positions) {
    if (p.size() != 2) throw DegenerateConfiguration("plane site expected");
    if (p[0] == 0.0 && p[1] == 0.0) {
      s.origin = true;
    } else if (p[1] == 0.0 && p[0] > 0.0) {
      xs.insert(p[0]);
    } else if (p[0] == 0.0 && p[1] > 0.0) {
      ys.insert(p[1]);
    } else {
      throw DegenerateConfiguration("point left the half-axes");
    }
  }
  s.xs.assign(xs.begin(), xs.end());
  s.ys.assign(ys.begin(), ys.end());
  return s;
}

// Health of a compression state: points of one merged class share one exact
// position, every occupied site lies on a non-negative half-axis, only the
// pile group may sit at the origin, and distinct sites keep a relative
// dedup_tol separation (so later midpoint splits stay well conditioned).
// Group ids: class id for absorbed points, unique negatives (<= -2) for
// untouched ones; pile_group -1 demands an empty origin.
inline bool compression_state_healthy(const std::vector<Vec>& positions,
                                      const std::vector<int>& group_of,
                                      int pile_group) {
  std::map<int, Vec> rep;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec& p = positions[i];
    if (p.size() != 2 || !(p[0] >= 0.0) || !(p[1] >= 0.0)) return false;
    if (p[0] != 0.0 && p[1] != 0.0) return false;
    auto [it, fresh] = rep.emplace(group_of[i], p);
    if (!fresh && (it->second[0] != p[0] || it->second[1] != p[1]))
      return false;  // a merged class drifted apart
  }
  std::vector<std::pair<int, Vec>> sites(rep.begin(), rep.end());
  for (std::size_t a = 0; a < sites.size(); ++a) {
    const bool at_origin =
        sites[a].second[0] == 0.0 && sites[a].second[1] == 0.0;
    if (at_origin != (sites[a].first == pile_group)) return false;
    for (std::size_t b = a + 1; b < sites.size(); ++b)
      if (nearly_equal(sites[a].second[0], sites[b].second[0]) &&
          nearly_equal(sites[a].second[1], sites[b].second[1]))
        return false;
  }
  return true;
}

// The pickup and merge rounds are written in a mirrored frame: "u" is the
// axis carrying the absorbed point, "w" the other one. Rows and columns of
// the emitted layer are always ordered (x, y).
inline Mat plane_mat(bool e_on_x, double uu, double uw, double wu, double ww) {
  if (e_on_x) return Mat(2, 2, {uu, uw, wu, ww});
  return Mat(2, 2, {ww, wu, uw, uu});
}
inline Vec plane_bias(bool e_on_x, double bu, double bw) {
  if (e_on_x) return Vec{bu, bw};
  return Vec{bw, bu};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 2: two layers per data point. Points are absorbed class by class,
// highest current position first; absorbing a point sends it (and the
// running pile of its class) to the exact origin while every other occupied
// site stays distinct on the half-axes. Earlier classes park as distinct
// sites.
// ---------------------------------------------------------------------------

namespace detail {

struct CompressionMachine {
  std::vector<Vec> pos;
  std::vector<int> group_of;
  std::vector<Layer> layers;

  void advance(const Layer& l) {
    for (auto& p : pos) p = apply_layer(l, p);
    layers.push_back(l);
  }
  bool healthy(int pile_group) const {
    return compression_state_healthy(pos, group_of, pile_group);
  }

  // Rescales each row so the largest surviving coordinate is one. The
  // rectifier is positively homogeneous, so scaling a row never changes
  // which sites clip to zero, but it stops the absorption maps from
  // contracting the whole state toward the distinctness floor round after
  // round (their natural scale is the pile height, which can be tiny).
  static Layer normalized(Layer l, const std::vector<Vec>& at) {
    Vec mx(l.W.rows, 0.0);
    for (const auto& p : at) {
      const Vec img = apply_layer(l, p);
      for (std::size_t r = 0; r < mx.size(); ++r)
        mx[r] = std::max(mx[r], img[r]);
    }
    for (std::size_t r = 0; r < mx.size(); ++r) {
      if (mx[r] <= 0.0) continue;
      for (std::size_t c = 0; c < l.W.cols; ++c) l.W.at(r, c) /= mx[r];
      l.b[r] /= mx[r];
    }
    return l;
  }

  // Entry: the very first point overall; input is still one-dimensional.
  void entry_round(int k, std::size_t e) {
    std::vector<double> vals(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) vals[i] = pos[i][0];
    advance(normalized(structuring_layer(vals, pos[e][0]), pos));
    advance(identity_layer(2));
    group_of[e] = k;
    if (!healthy(k)) throw DegenerateConfiguration("entry split collided");
  }

  // First point of a later class: the previous pile leaves the origin and
  // parks on the cross axis while the new point drops onto the origin.
  void pickup_round(int k, std::size_t e) {
    const PlaneSites sites = classify_sites(pos);
    if (!sites.origin)
      throw DegenerateConfiguration("pickup expects a parked pile at origin");
    const bool e_on_x = pos[e][1] == 0.0 && pos[e][0] > 0.0;
    const double ev = e_on_x ? pos[e][0] : pos[e][1];
    const auto& along = e_on_x ? sites.xs : sites.ys;
    const Neighbors nb = neighbors_of(along, ev);
    const double m_hi = nb.right ? 0.5 * (ev + *nb.right) : ev + 0.25;
    const double m_lo = nb.left ? 0.5 * (*nb.left + ev) : 0.5 * ev;
    // u' = sigma(u - m_hi) keeps the far side; w' = sigma(-u / m_lo + w + 1)
    // parks the old pile at cross-height one (a tiny park height would feed
    // a shrinking pile scale into every later merge) and zeroes e.
    Layer l;
    l.W = plane_mat(e_on_x, 1.0, 0.0, -1.0 / m_lo, 1.0);
    l.b = plane_bias(e_on_x, -m_hi, 1.0);
    advance(normalized(std::move(l), pos));
    advance(identity_layer(2));
    group_of[e] = k;
    if (!healthy(k)) throw DegenerateConfiguration("pickup round collided");
  }

  // Later point of the pile's class: a lift layer parks the pile just below
  // the absorption threshold t, then a compression layer with a unit-slope
  // cut sigma(u + w - t) maps pile and point back onto the exact origin.
  // Everything that clears t (the parked ladder, far sites above e) is
  // shifted by -t, so surviving gaps are kept exactly; only the ladder's
  // bottom gap pays the pile clearance r, a 1/(4n) share, which compounds
  // to a bounded factor no matter how many rounds run. The fraction f
  // slides t inside (eps, eps_right) until no two sites collide.
  void merge_round(int k, std::size_t e) {
    {
      const PlaneSites sites = classify_sites(pos);
      if (!sites.origin)
        throw DegenerateConfiguration("merge expects the pile at origin");
    }
    const bool e_on_x = pos[e][1] == 0.0 && pos[e][0] > 0.0;
    const PlaneSites sites = classify_sites(pos);
    const auto& along = e_on_x ? sites.xs : sites.ys;
    const auto& across = e_on_x ? sites.ys : sites.xs;
    const double eps = e_on_x ? pos[e][0] : pos[e][1];
    const Neighbors nb = neighbors_of(along, eps);
    const double eps_left = nb.left ? *nb.left : 0.0;
    const double eps_right = nb.right ? *nb.right : eps + 0.5;
    const double t_g = 0.5 * (eps_left + eps);
    const double a_min = along.front();
    const double r = 0.25 / double(pos.size());

    const std::vector<Vec> saved = pos;
    std::vector<int> trial = group_of;
    trial[e] = k;
    for (double f : nudge_fractions()) {
      const double t = eps + f * (eps_right - eps);
      const double h_p =
          across.empty() ? 0.5 * t
                         : std::max(0.5 * t, t - r * across.front());
      const double tau = 0.5 * a_min / h_p;
      Layer lift;
      lift.W = plane_mat(e_on_x, 1.0, 0.0, -1.0 / tau, 1.0);
      lift.b = plane_bias(e_on_x, 0.0, h_p);
      pos = saved;
      for (auto& p : pos) p = apply_layer(lift, p);
      if (!compression_state_healthy(pos, group_of, -1)) continue;
      const double beta = 0.5 * h_p;
      Layer cut;
      cut.W = plane_mat(e_on_x, 1.0, 1.0, -beta / t_g, -1.0);
      cut.b = plane_bias(e_on_x, -t, beta);
      cut = normalized(std::move(cut), pos);
      std::vector<Vec> after = pos;
      for (auto& p : after) p = apply_layer(cut, p);
      if (compression_state_healthy(after, trial, k)) {
        pos = saved;
        group_of[e] = k;
        advance(lift);
        advance(cut);
        return;
      }
    }
    pos = saved;
    throw DegenerateConfiguration("merge round: every slope fraction collided");
  }
};

}  // namespace detail

inline std::pair<std::vector<Layer>, ClassRepresentatives> compress_classes(
    const std::vector<double>& projected, const std::vector<int>& class_ids,
    int num_classes) {
  const std::size_t n = projected.size();
  if (class_ids.size() != n) throw ShapeMismatch("one class id per value");
  if (num_classes <= 0) throw DomainError("need at least one class");
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (class_ids[i] < 0 || class_ids[i] >= num_classes)
      throw DomainError("class id out of range");
    if (!(projected[i] > 0.0))
      throw DomainError("projected values must be positive");
    members[class_ids[i]].push_back(i);
  }
  for (int k = 0; k < num_classes; ++k)
    if (members[k].empty())
      throw DomainError("class " + std::to_string(k) + " has no points");

  detail::CompressionMachine mach;
  mach.pos.resize(n);
  mach.group_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    mach.pos[i] = Vec{projected[i]};
    mach.group_of[i] = -int(i) - 2;
  }

  // Absorb the highest-placed remaining point of the class each round. The
  // absorption maps keep absolute site gaps when the absorbed point is near
  // the top of its axis; absorbing a point far below the axis top forces a
  // slope of axis-top over point value, and renormalizing that away crushes
  // every other gap by the same factor.
  bool first_overall = true;
  for (int k = 0; k < num_classes; ++k) {
    std::vector<std::size_t> remaining = members[k];
    bool first_of_class = true;
    while (!remaining.empty()) {
      std::size_t pick = 0;
      double best = -1.0;
      for (std::size_t r = 0; r < remaining.size(); ++r) {
        const Vec& p = mach.pos[remaining[r]];
        const double v = p.size() == 1 ? p[0] : p[0] + p[1];
        if (v > best) {
          best = v;
          pick = r;
        }
      }
      const std::size_t e = remaining[pick];
      remaining.erase(remaining.begin() + pick);
      if (first_overall) {
        mach.entry_round(k, e);
        first_overall = false;
      } else if (first_of_class) {
        mach.pickup_round(k, e);
      } else {
        mach.merge_round(k, e);
      }
      first_of_class = false;
    }
  }

  ClassRepresentatives reps;
  reps.reps.resize(num_classes);
  for (int k = 0; k < num_classes; ++k)
    reps.reps[k] = mach.pos[members[k][0]];
  return {std::move(mach.layers), std::move(reps)};
}

// ---------------------------------------------------------------------------
// Stage 3: order the class sites along a line so that class k lands at the
// k-th smallest value. One projection seeds the line; the remaining budget
// realizes the piecewise-linear rearrangement that carries each class's
// projected value onto its ladder slot (k+1)/(m+1): one bend per interior
// knot, applied left to right, with a carried offset keeping the running
// value non-negative until the final bend removes it. Bend slopes are
// bounded by the ladder span over the smallest projected gap, so the ladder
// never degrades below its 1/(m+1) spacing no matter how the classes were
// ordered on the line. Two spare layers cap the output at one, so inputs
// far from every class site (which the bends can extrapolate steeply)
// leave the stage bounded; every slot is below one, so class sites are
// unaffected.
// ---------------------------------------------------------------------------

inline std::pair<std::vector<Layer>, SortedRepresentatives>
sort_representatives(const ClassRepresentatives& reps_in, std::uint64_t seed) {
  const int m = int(reps_in.reps.size());
  if (m == 0) throw DomainError("no representatives");
  std::vector<Layer> layers;
  std::vector<Vec> rep = reps_in.reps;
  auto advance = [&](const Layer& l) {
    for (auto& p : rep) p = apply_layer(l, p);
    layers.push_back(l);
  };
  auto pad_to = [&](std::size_t depth) {
    Layer id;
    id.W = Mat(1, 1, {1.0});
    id.b = Vec{0.0};
    while (layers.size() < depth) advance(id);
  };
  auto cap_at_one = [&] {  // sigma(1 - u) twice: clamps [1, inf) to one
    Layer flip;
    flip.W = Mat(1, 1, {-1.0});
    flip.b = Vec{1.0};
    advance(flip);
    advance(flip);
  };

  {  // Projection onto a separating line, scaled to unit span and shifted
     // strictly positive. The bend slopes grow with the inverse of the
     // smallest gap, so keep the best-separated of a batch of directions.
    Layer best;
    double best_gap = -1.0;
    for (int t = 0; t < 32 && best_gap < 0.01; ++t) {
      const Vec w = separating_direction(rep, mix_seed(seed, 101 + t));
      double pmin = std::numeric_limits<double>::infinity();
      double pmax = -pmin;
      for (const auto& p : rep) {
        const double v = dot(w, p);
        pmin = std::min(pmin, v);
        pmax = std::max(pmax, v);
      }
      const double span = pmax > pmin ? pmax - pmin : 1.0;
      Layer l;
      l.W = Mat(1, 2, {w[0] / span, w[1] / span});
      l.b = Vec{0.25 - pmin / span};
      std::vector<double> vals(m);
      for (int i = 0; i < m; ++i) vals[i] = apply_layer(l, rep[i])[0];
      std::sort(vals.begin(), vals.end());
      double gap = 1.0;
      for (int i = 0; i + 1 < m; ++i) gap = std::min(gap, vals[i + 1] - vals[i]);
      if (gap > best_gap) {
        best_gap = gap;
        best = l;
      }
    }
    if (!(best_gap > 0.0))
      throw DegenerateConfiguration("no projection separated the classes");
    advance(best);
  }

  if (m == 1) {
    Layer l;  // park the lone class at one
    l.W = Mat(1, 1, {0.0});
    l.b = Vec{1.0};
    advance(l);
    pad_to(3);
    return {std::move(layers), SortedRepresentatives{{rep[0][0]}}};
  }

  std::vector<int> ord(m);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&](int a, int b) { return rep[a][0] < rep[b][0]; });
  std::vector<double> knot(m), out_at(m);
  for (int j = 0; j < m; ++j) {
    knot[j] = rep[ord[j]][0];
    out_at[j] = double(ord[j] + 1) / double(m + 1);
  }

  if (m == 2) {
    const double a = (out_at[1] - out_at[0]) / (knot[1] - knot[0]);
    Layer l;
    l.W = Mat(1, 1, {a});
    l.b = Vec{out_at[0] - a * knot[0]};
    advance(l);
    cap_at_one();
    pad_to(5);
  } else {
    std::vector<double> sl(m - 1);
    for (int j = 0; j + 1 < m; ++j)
      sl[j] = (out_at[j + 1] - out_at[j]) / (knot[j + 1] - knot[j]);
    // Offset keeping the running value non-negative at every knot through
    // every intermediate bend state; the final bend subtracts it again.
    double gmin = 0.0;
    for (int j = 0; j + 2 < m; ++j) {
      for (int i = 0; i < m; ++i) {
        double g = out_at[0] + sl[0] * (knot[i] - knot[0]);
        for (int l = 1; l <= j; ++l)
          g += (sl[l] - sl[l - 1]) * std::max(0.0, knot[i] - knot[l]);
        gmin = std::min(gmin, g);
      }
    }
    const double gamma = 1.0 - gmin;

    {  // running value alongside the bend carrier sigma(u - knot_1)
      Layer l;
      l.W = Mat(2, 1, {sl[0], 1.0});
      l.b = Vec{out_at[0] - sl[0] * knot[0] + gamma, -knot[1]};
      advance(l);
    }
    for (int j = 1; j + 1 < m; ++j) {
      const double dj = sl[j] - sl[j - 1];
      if (j + 2 < m) {
        Layer l;  // bend at knot_j, then re-aim the carrier at knot_{j+1}
        l.W = Mat(2, 2, {1.0, dj, 0.0, 1.0});
        l.b = Vec{0.0, knot[j] - knot[j + 1]};
        advance(l);
      } else {
        Layer l;  // last bend folds in the offset removal and the read-out
        l.W = Mat(1, 2, {1.0, dj});
        l.b = Vec{-gamma};
        advance(l);
      }
    }
    cap_at_one();
    pad_to(2 * std::size_t(m) + 1);
  }

  SortedRepresentatives out;
  out.values.resize(m);
  for (int i = 0; i < m; ++i) out.values[i] = rep[i][0];
  for (int i = 0; i < m; ++i) {
    if (!(out.values[i] > 0.0))
      throw DegenerateConfiguration("sorted value not positive");
    if (i + 1 < m && !(out.values[i] < out.values[i + 1]))
      throw DegenerateConfiguration("class values not strictly increasing");
    for (int j = i + 1; j < m; ++j)
      if (nearly_equal(out.values[i], out.values[j]))
        throw DegenerateConfiguration("sorted values nearly collide");
  }
  return {std::move(layers), std::move(out)};
}

// ---------------------------------------------------------------------------
// Stage 4: piecewise-linear read-out carrying the sorted class values onto
// the target values. One affine layer places the first two targets; every
// further round bends the line at a knee right of the already-placed block.
// ---------------------------------------------------------------------------

inline std::vector<Layer> map_to_labels(const SortedRepresentatives& sorted,
                                        const std::vector<double>& targets) {
  const int m = int(sorted.values.size());
  if (int(targets.size()) != m)
    throw ShapeMismatch("one target per class required");
  for (int i = 0; i + 1 < m; ++i) {
    if (!(sorted.values[i] < sorted.values[i + 1]))
      throw DomainError("class values must be strictly increasing");
    if (!(targets[i] < targets[i + 1]))
      throw DomainError("targets must be strictly increasing");
  }
  if (!(targets[0] >= 0.0)) throw DomainError("targets must be non-negative");

  std::vector<Layer> layers;
  std::vector<double> v = sorted.values;

  if (m == 1) {
    Layer l;
    if (v[0] > 0.0) {
      l.W = Mat(1, 1, {targets[0] / v[0]});
      l.b = Vec{0.0};
    } else {
      l.W = Mat(1, 1, {1.0});
      l.b = Vec{targets[0]};
    }
    layers.push_back(l);
    return layers;
  }

  {  // Affine placement of the first two targets.
    const double w = (targets[1] - targets[0]) / (v[1] - v[0]);
    Layer l;
    l.W = Mat(1, 1, {w});
    l.b = Vec{targets[0] - w * v[0]};
    for (auto& x : v) x = apply_layer(l, Vec{x})[0];
    layers.push_back(l);
  }

  for (int eta = 1; eta + 1 < m; ++eta) {
    // Knee z strictly between the last placed target and both the next
    // target and the next unplaced value.
    const double lo = targets[eta];
    const double cap = std::min(targets[eta + 1], v[eta + 1]);
    double z = 0.5 * (targets[eta] + v[eta + 1]);
    if (!(z < targets[eta + 1])) z = 0.5 * (lo + cap);
    if (!(z > lo && z < cap))
      throw DegenerateConfiguration("no room for a mapping knee");
    const double w1 = 1.0 / (v[eta + 1] - z);
    Layer up;  // (value) -> (knee excess, value)
    up.W = Mat(2, 1, {w1, 1.0});
    up.b = Vec{-z * w1, 0.0};
    Layer down;  // bend: the slope changes right of the knee only
    down.W = Mat(1, 2, {targets[eta + 1] - v[eta + 1], 1.0});
    down.b = Vec{0.0};
    for (auto& x : v) x = apply_layer(down, apply_layer(up, Vec{x}))[0];
    layers.push_back(up);
    layers.push_back(down);
  }
  return layers;
}

// ---------------------------------------------------------------------------
// Assembly.
// ---------------------------------------------------------------------------

struct CoreBuild {
  Network net;
  ConstructionTrace trace;
};

inline CoreBuild build_class_network(const std::vector<Vec>& points,
                                     const std::vector<int>& class_ids,
                                     const std::vector<double>& targets,
                                     std::uint64_t seed) {
  const std::size_t n = points.size();
  const int m = int(targets.size());
  if (n == 0) throw DomainError("no points");
  CoreBuild out;
  out.net.input_dim = points[0].size();
  std::vector<Vec> pos = points;

  auto push_stage = [&](const std::string& name,
                        const std::vector<Layer>& ls) {
    StageRecord rec;
    rec.name = name;
    rec.first_layer = out.net.layers.size();
    for (const auto& l : ls) {
      for (auto& p : pos) p = apply_layer(l, p);
      out.net.layers.push_back(l);
    }
    rec.last_layer = out.net.layers.size();
    rec.positions = pos;
    out.trace.stages.push_back(std::move(rec));
  };

  auto [l0, projected] = precondition(points, seed);
  push_stage("preconditioning", {l0});

  auto [comp_layers, reps] = compress_classes(projected, class_ids, m);
  push_stage("class_compression", comp_layers);
  for (int k = 0; k < m; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (class_ids[i] == k &&
          (pos[i][0] != reps.reps[k][0] || pos[i][1] != reps.reps[k][1]))
        throw DegenerateConfiguration("class failed to merge exactly");

  auto [sort_layers, xi] = sort_representatives(reps, seed);
  push_stage("representative_sorting", sort_layers);

  auto map_layers = map_to_labels(xi, targets);
  push_stage("label_mapping", map_layers);

  out.net.validate();
  const std::size_t expect =
      m >= 2 ? 2 * n + 4 * std::size_t(m) - 1 : 2 * n + 5;
  out.trace.nonstandard_depth = (m == 1);
  if (out.net.depth() != expect)
    throw DegenerateConfiguration("unexpected depth " +
                                  std::to_string(out.net.depth()));
  return out;
}

// Class-labelled datasets: the network reproduces each point's label value.
inline std::pair<Network, ConstructionTrace> build_memorizer(
    const LabeledDataset& ds, std::uint64_t seed) {
  validate_dataset(ds);
  if (ds.kind != LabelKind::Class)
    throw DomainError("plain memorizer needs class labels");
  std::vector<double> targets = ds.labels;
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  std::vector<int> ids(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    ids[i] = int(std::lower_bound(targets.begin(), targets.end(),
                                  ds.labels[i]) -
                 targets.begin());
  CoreBuild core = build_class_network(ds.points, ids, targets, seed);
  return {std::move(core.net), std::move(core.trace)};
}

// Real-labelled datasets: targets are shifted to start at zero and a final
// two-neuron block with a sign-recombining post factor undoes the shift, so
// labels of any sign come out exactly. Depth grows by one layer.
inline Network build_signed_memorizer(const LabeledDataset& ds,
                                      std::uint64_t seed,
                                      ConstructionTrace* trace_out = nullptr) {
  validate_dataset(ds);
  if (ds.kind == LabelKind::Vector)
    throw DomainError("signed memorizer needs scalar labels");
  std::vector<double> distinct = ds.labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()),
                 distinct.end());
  const double y0 = distinct.front();
  std::vector<double> targets(distinct.size());
  for (std::size_t i = 0; i < distinct.size(); ++i)
    targets[i] = distinct[i] - y0;
  std::vector<int> ids(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    ids[i] = int(std::lower_bound(distinct.begin(), distinct.end(),
                                  ds.labels[i]) -
                 distinct.begin());
  CoreBuild core = build_class_network(ds.points, ids, targets, seed);
  for (auto& l : core.net.layers) l.post = Mat::identity(l.neurons());
  Layer dec;  // shifted value v comes back as -sigma(-v - y0) + sigma(v + y0)
  dec.W = Mat(2, 1, {-1.0, 1.0});
  dec.b = Vec{-y0, y0};
  dec.post = Mat(1, 2, {-1.0, 1.0});
  core.net.layers.push_back(dec);
  core.net.validate();
  if (trace_out) {
    StageRecord rec;
    rec.name = "sign_decoding";
    rec.first_layer = core.net.depth() - 1;
    rec.last_layer = core.net.depth();
    rec.positions.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      rec.positions[i] =
          apply_layer(dec, core.trace.stages.back().positions[i]);
    core.trace.stages.push_back(std::move(rec));
    *trace_out = std::move(core.trace);
  }
  return std::move(core.net);
}

// Vector labels: one scalar network per component, first layers stacked,
// later layers block-diagonal, shorter components padded with identity
// layers so every component ends on the same final layer.
inline Network build_vector_memorizer(const LabeledDataset& ds,
                                      std::uint64_t seed) {
  validate_dataset(ds);
  if (ds.kind != LabelKind::Vector)
    throw DomainError("vector memorizer needs vector labels");
  const std::size_t n = ds.size();
  const std::size_t m_out = ds.vector_labels[0].size();
  for (const auto& y : ds.vector_labels)
    for (double c : y)
      if (!(c >= 0.0))
        throw DomainError("vector labels must be non-negative");

  std::set<Vec> distinct_vectors(ds.vector_labels.begin(),
                                 ds.vector_labels.end());
  const std::size_t m_vec = distinct_vectors.size();

  std::vector<Network> parts(m_out);
  for (std::size_t j = 0; j < m_out; ++j) {
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = ds.vector_labels[i][j];
    std::vector<double> targets = vals;
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i)
      ids[i] = int(std::lower_bound(targets.begin(), targets.end(), vals[i]) -
                   targets.begin());
    parts[j] =
        build_class_network(ds.points, ids, targets, mix_seed(seed, j)).net;
  }

  std::size_t depth = 2 * n + 4 * m_vec - 1;
  for (const auto& p : parts) depth = std::max(depth, p.depth());

  Network net;
  net.input_dim = ds.dim();
  const Layer pad = identity_layer(1);
  for (std::size_t l = 0; l < depth; ++l) {
    std::vector<const Layer*> blocks(m_out);
    std::size_t rows = 0, cols = 0;
    for (std::size_t j = 0; j < m_out; ++j) {
      blocks[j] = l < parts[j].depth() ? &parts[j].layers[l] : &pad;
      rows += blocks[j]->neurons();
      cols += blocks[j]->in_dim();
    }
    Layer big;
    if (l == 0) {
      big.W = Mat(rows, ds.dim());
      std::size_t r0 = 0;
      for (std::size_t j = 0; j < m_out; ++j) {
        for (std::size_t r = 0; r < blocks[j]->neurons(); ++r)
          for (std::size_t c = 0; c < ds.dim(); ++c)
            big.W.at(r0 + r, c) = blocks[j]->W.at(r, c);
        r0 += blocks[j]->neurons();
      }
    } else {
      big.W = Mat(rows, cols);
      std::size_t r0 = 0, c0 = 0;
      for (std::size_t j = 0; j < m_out; ++j) {
        for (std::size_t r = 0; r < blocks[j]->neurons(); ++r)
          for (std::size_t c = 0; c < blocks[j]->in_dim(); ++c)
            big.W.at(r0 + r, c0 + c) = blocks[j]->W.at(r, c);
        r0 += blocks[j]->neurons();
        c0 += blocks[j]->in_dim();
      }
    }
    big.b.reserve(rows);
    for (std::size_t j = 0; j < m_out; ++j)
      big.b.insert(big.b.end(), blocks[j]->b.begin(), blocks[j]->b.end());
    net.layers.push_back(std::move(big));
  }
  net.validate();
  return net;
}

inline MemorizationReport verify_memorization(const Network& net,
                                              const LabeledDataset& ds,
                                              double tol = 1e-6) {
  validate_dataset(ds);
  MemorizationReport rep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vec out = forward(net, ds.points[i]);
    Vec expect = ds.kind == LabelKind::Vector ? ds.vector_labels[i]
                                              : Vec{ds.labels[i]};
    if (out.size() != expect.size())
      throw ShapeMismatch("network output dim does not match labels");
    double err = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j)
      err = std::max(err, std::fabs(out[j] - expect[j]));
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    if (err > tol) rep.failures.push_back(int(i));
  }
  return rep;
}

}  // namespace reluforge
