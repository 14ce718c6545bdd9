#include "catch2/catch_amalgamated.hpp"
#include "reluforge/memorize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace reluforge;

namespace {

LabeledDataset class_dataset(std::size_t d, std::size_t n, int m,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LabeledDataset ds;
  ds.kind = LabelKind::Class;
  for (std::size_t i = 0; i < n; ++i) {
    Vec p(d);
    for (auto& c : p) c = u(rng);
    ds.points.push_back(std::move(p));
    ds.labels.push_back(double(int(i) % m));
  }
  return ds;
}

}  // namespace

TEST_CASE("dataset validation") {
  LabeledDataset ds;
  REQUIRE_THROWS_AS(validate_dataset(ds), DomainError);

  ds = class_dataset(2, 4, 2, 1);
  REQUIRE_NOTHROW(validate_dataset(ds));

  SECTION("duplicates") {
    ds.points[2] = ds.points[0];
    REQUIRE_THROWS_AS(validate_dataset(ds), DuplicatePoints);
  }
  SECTION("mixed dims") {
    ds.points[1] = Vec{0.5};
    REQUIRE_THROWS_AS(validate_dataset(ds), ShapeMismatch);
  }
  SECTION("label count") {
    ds.labels.pop_back();
    REQUIRE_THROWS_AS(validate_dataset(ds), ShapeMismatch);
  }
  SECTION("class labels must be whole and non-negative") {
    ds.labels[0] = -1.0;
    REQUIRE_THROWS_AS(validate_dataset(ds), DomainError);
    ds.labels[0] = 0.5;
    REQUIRE_THROWS_AS(validate_dataset(ds), DomainError);
  }
  SECTION("vector labels") {
    ds.kind = LabelKind::Vector;
    ds.vector_labels = {{1, 2}, {0, 1}, {1, 2}};
    REQUIRE_THROWS_AS(validate_dataset(ds), ShapeMismatch);
    ds.vector_labels.push_back(Vec{3});
    REQUIRE_THROWS_AS(validate_dataset(ds), ShapeMismatch);
  }
}

TEST_CASE("projection stage output") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + trial % 5;
    std::vector<Vec> pts(9, Vec(d));
    for (auto& p : pts)
      for (auto& c : p) c = u(rng);
    auto [layer, vals] = precondition(pts, 100 + trial);

    double rx = 0.0, wnorm = 0.0;
    for (const auto& p : pts) rx = std::max(rx, norm2(p));
    for (std::size_t k = 0; k < d; ++k)
      wnorm += layer.W.at(0, k) * layer.W.at(0, k);
    REQUIRE(std::sqrt(wnorm) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(layer.b[0] == Catch::Approx(2.0 * rx).margin(1e-12));

    for (std::size_t i = 0; i < pts.size(); ++i) {
      REQUIRE(vals[i] > 0.0);
      REQUIRE(vals[i] == apply_layer(layer, pts[i])[0]);
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        REQUIRE(vals[i] != vals[j]);
    }
  }
}

TEST_CASE("class compression invariants") {
  SECTION("argument guards") {
    REQUIRE_THROWS_AS(compress_classes({1.0, 2.0}, {0}, 1), ShapeMismatch);
    REQUIRE_THROWS_AS(compress_classes({1.0, -2.0}, {0, 0}, 1), DomainError);
    REQUIRE_THROWS_AS(compress_classes({1.0, 2.0}, {0, 2}, 2), DomainError);
    REQUIRE_THROWS_AS(compress_classes({1.0, 2.0}, {0, 0}, 2), DomainError);
  }

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.5, 9.5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 3 + trial % 9;
    const int m = std::min(1 + trial % 4, int(n));
    std::set<double> uniq;
    while (uniq.size() < n) uniq.insert(u(rng));
    std::vector<double> projected(uniq.begin(), uniq.end());
    std::shuffle(projected.begin(), projected.end(), rng);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = int(i) % m;

    auto [layers, reps] = compress_classes(projected, ids, m);
    REQUIRE(layers.size() == 2 * n);
    REQUIRE(int(reps.reps.size()) == m);

    // Replay the layers: points of different classes must stay apart at
    // every intermediate state; each class ends at its exact representative.
    std::vector<Vec> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = Vec{projected[i]};
    for (const auto& l : layers) {
      for (auto& p : pos) p = apply_layer(l, p);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (ids[i] != ids[j])
            REQUIRE((pos[i][0] != pos[j][0] || pos[i][1] != pos[j][1]));
    }
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(pos[i][0] == reps.reps[ids[i]][0]);
      REQUIRE(pos[i][1] == reps.reps[ids[i]][1]);
    }
    for (int a = 0; a < m; ++a)
      for (int b = a + 1; b < m; ++b)
        REQUIRE((reps.reps[a][0] != reps.reps[b][0] ||
                 reps.reps[a][1] != reps.reps[b][1]));
  }
}

TEST_CASE("compression survives a tight pair") {
  std::vector<double> projected = {1.0, 1.0 + 1e-5, 2.0, 3.0, 4.0, 5.0};
  std::vector<int> ids = {0, 1, 0, 1, 0, 1};
  auto [layers, reps] = compress_classes(projected, ids, 2);
  REQUIRE(layers.size() == 12);
  std::vector<Vec> pos;
  for (double v : projected) pos.push_back(Vec{v});
  for (const auto& l : layers)
    for (auto& p : pos) p = apply_layer(l, p);
  for (std::size_t i = 0; i < pos.size(); ++i)
    REQUIRE(pos[i] == reps.reps[ids[i]]);
  REQUIRE(reps.reps[0] != reps.reps[1]);
}

TEST_CASE("representative sorting") {
  SECTION("layer count and ladder order") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int m = 1; m <= 7; ++m) {
      for (int trial = 0; trial < 5; ++trial) {
        ClassRepresentatives reps;
        std::set<double> used;
        for (int k = 0; k < m; ++k) {
          double v = u(rng);
          while (used.count(v)) v = u(rng);
          used.insert(v);
          reps.reps.push_back(k % 2 == 0 ? Vec{v, 0.0} : Vec{0.0, v});
        }
        auto [layers, sorted] = sort_representatives(reps, 50 + trial);
        REQUIRE(layers.size() == 2 * std::size_t(m) + 1);
        REQUIRE(int(sorted.values.size()) == m);
        for (int k = 0; k < m; ++k) {
          REQUIRE(sorted.values[k] > 0.0);
          REQUIRE(sorted.values[k] <= 1.0);
          if (k + 1 < m) REQUIRE(sorted.values[k] < sorted.values[k + 1]);
        }
        for (const auto& l : layers) REQUIRE(l.neurons() <= 2);

        // Replaying the layers on the representatives lands each class on
        // its sorted value.
        std::vector<Vec> pos = reps.reps;
        for (const auto& l : layers)
          for (auto& p : pos) p = apply_layer(l, p);
        for (int k = 0; k < m; ++k)
          REQUIRE(pos[k][0] ==
                  Catch::Approx(sorted.values[k]).margin(1e-12));
      }
    }
  }

  SECTION("far-away inputs leave the stage bounded") {
    ClassRepresentatives reps;
    reps.reps = {Vec{1.0, 0.0}, Vec{0.0, 2.0}, Vec{3.0, 0.0}};
    auto [layers, sorted] = sort_representatives(reps, 4);
    for (const Vec& far : {Vec{50.0, 0.0}, Vec{0.0, 80.0}, Vec{40.0, 40.0}}) {
      Vec p = far;
      for (const auto& l : layers) p = apply_layer(l, p);
      REQUIRE(p[0] <= 1.0 + 1e-12);
      REQUIRE(p[0] >= 0.0);
    }
  }

  SECTION("no representatives is an error") {
    REQUIRE_THROWS_AS(sort_representatives(ClassRepresentatives{}, 1),
                      DomainError);
  }
}

TEST_CASE("label mapping") {
  SECTION("two classes reduce to one affine layer") {
    SortedRepresentatives s;
    s.values = {2.0, 5.0};
    const auto layers = map_to_labels(s, {0.0, 1.0});
    REQUIRE(layers.size() == 1);
    REQUIRE(layers[0].W.at(0, 0) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    REQUIRE(layers[0].b[0] == Catch::Approx(-2.0 / 3.0).margin(1e-15));
  }

  SECTION("single class scales or shifts") {
    SortedRepresentatives s;
    s.values = {4.0};
    auto layers = map_to_labels(s, {3.0});
    REQUIRE(layers.size() == 1);
    REQUIRE(apply_layer(layers[0], Vec{4.0})[0] == 3.0);
  }

  SECTION("exact landing for random ladders") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int m = 3; m <= 9; ++m) {
      SortedRepresentatives s;
      std::vector<double> targets;
      double v = 0.0, t = 0.0;
      for (int k = 0; k < m; ++k) {
        v += u(rng);
        t += u(rng);
        s.values.push_back(v);
        targets.push_back(t);
      }
      const auto layers = map_to_labels(s, targets);
      REQUIRE(layers.size() == std::size_t(2 * m - 3));
      for (int k = 0; k < m; ++k) {
        Vec p{s.values[k]};
        for (const auto& l : layers) p = apply_layer(l, p);
        REQUIRE(p[0] == Catch::Approx(targets[k]).margin(1e-10));
      }
    }
  }

  SECTION("argument guards") {
    SortedRepresentatives s;
    s.values = {1.0, 2.0};
    REQUIRE_THROWS_AS(map_to_labels(s, {0.0}), ShapeMismatch);
    REQUIRE_THROWS_AS(map_to_labels(s, {1.0, 1.0}), DomainError);
    REQUIRE_THROWS_AS(map_to_labels(s, {-1.0, 1.0}), DomainError);
    s.values = {2.0, 2.0};
    REQUIRE_THROWS_AS(map_to_labels(s, {0.0, 1.0}), DomainError);
  }
}

TEST_CASE("complete class memorizers") {
  struct Combo {
    std::size_t d, n;
    int m;
  };
  for (auto [d, n, m] :
       {Combo{1, 6, 2}, Combo{2, 10, 3}, Combo{3, 12, 4}, Combo{5, 9, 2}}) {
    const LabeledDataset ds = class_dataset(d, n, m, 900 + n);
    auto [net, trace] = build_memorizer(ds, 17);
    REQUIRE(net.depth() == 2 * n + 4 * std::size_t(m) - 1);
    REQUIRE(net.width() == 2);
    REQUIRE_FALSE(trace.nonstandard_depth);
    const MemorizationReport rep = verify_memorization(net, ds, 1e-9);
    REQUIRE(rep.failures.empty());
    REQUIRE(rep.max_abs_error <= 1e-9);
  }

  SECTION("single class depth is flagged") {
    const LabeledDataset ds = class_dataset(2, 5, 1, 4);
    auto [net, trace] = build_memorizer(ds, 3);
    REQUIRE(net.depth() == 2 * 5 + 5);
    REQUIRE(trace.nonstandard_depth);
    REQUIRE(verify_memorization(net, ds, 1e-9).failures.empty());
  }

  SECTION("order of the dataset does not matter") {
    LabeledDataset ds = class_dataset(2, 8, 3, 31);
    std::mt19937_64 rng(5);
    std::vector<std::size_t> perm(ds.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledDataset shuffled;
    shuffled.kind = LabelKind::Class;
    for (std::size_t i : perm) {
      shuffled.points.push_back(ds.points[i]);
      shuffled.labels.push_back(ds.labels[i]);
    }
    auto [net, trace] = build_memorizer(shuffled, 17);
    REQUIRE(verify_memorization(net, shuffled, 1e-9).failures.empty());
  }

  SECTION("deterministic in the seed") {
    const LabeledDataset ds = class_dataset(2, 6, 2, 77);
    auto [a, ta] = build_memorizer(ds, 9);
    auto [b, tb] = build_memorizer(ds, 9);
    REQUIRE(a.depth() == b.depth());
    for (std::size_t l = 0; l < a.depth(); ++l) {
      REQUIRE(a.layers[l].W.data == b.layers[l].W.data);
      REQUIRE(a.layers[l].b == b.layers[l].b);
    }
  }

  SECTION("real labels are rejected") {
    LabeledDataset ds = class_dataset(1, 4, 2, 8);
    ds.kind = LabelKind::Real;
    ds.labels = {0.5, -1.0, 0.5, -1.0};
    REQUIRE_THROWS_AS(build_memorizer(ds, 1), DomainError);
  }

  SECTION("stage records cover the network in order") {
    const LabeledDataset ds = class_dataset(2, 7, 3, 55);
    auto [net, trace] = build_memorizer(ds, 2);
    REQUIRE(trace.stages.size() == 4);
    REQUIRE(trace.stages[0].name == "preconditioning");
    REQUIRE(trace.stages[1].name == "class_compression");
    REQUIRE(trace.stages[2].name == "representative_sorting");
    REQUIRE(trace.stages[3].name == "label_mapping");
    std::size_t cursor = 0;
    for (const auto& st : trace.stages) {
      REQUIRE(st.first_layer == cursor);
      REQUIRE(st.last_layer >= st.first_layer);
      REQUIRE(st.positions.size() == ds.size());
      cursor = st.last_layer;
    }
    REQUIRE(cursor == net.depth());
  }
}

TEST_CASE("signed memorizers handle labels of any sign") {
  LabeledDataset ds;
  ds.kind = LabelKind::Real;
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 9;
  const int m = 3;
  for (std::size_t i = 0; i < n; ++i) {
    ds.points.push_back(Vec{u(rng), u(rng)});
    ds.labels.push_back(double(int(i) % m) * 0.7 - 1.3);
  }
  ConstructionTrace trace;
  const Network net = build_signed_memorizer(ds, 23, &trace);
  REQUIRE(net.depth() == 2 * n + 4 * std::size_t(m));
  REQUIRE(net.width() == 2);
  REQUIRE(net.layers.back().post.has_value());
  const MemorizationReport rep = verify_memorization(net, ds, 1e-9);
  REQUIRE(rep.failures.empty());
  REQUIRE(trace.stages.back().name == "sign_decoding");

  SECTION("vector labels are rejected") {
    ds.kind = LabelKind::Vector;
    ds.vector_labels.assign(n, Vec{1.0});
    REQUIRE_THROWS_AS(build_signed_memorizer(ds, 1), DomainError);
  }
}

TEST_CASE("sign decoder identity") {
  // The final block computes -sigma(-v - y0) + sigma(v + y0) = v + y0 for
  // every real v + y0, undoing the target shift exactly.
  Layer dec;
  const double y0 = -2.25;
  dec.W = Mat(2, 1, {-1.0, 1.0});
  dec.b = Vec{-y0, y0};
  dec.post = Mat(1, 2, {-1.0, 1.0});
  for (double v : {0.0, 0.5, 3.0, 10.0})
    REQUIRE(apply_layer(dec, Vec{v})[0] == v + y0);
}

TEST_CASE("vector memorizers stack per-component networks") {
  LabeledDataset ds;
  ds.kind = LabelKind::Vector;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 7;
  for (std::size_t i = 0; i < n; ++i) {
    ds.points.push_back(Vec{u(rng), u(rng), u(rng)});
    ds.vector_labels.push_back(
        Vec{double(int(i) % 2), 0.5 * double(int(i) % 3), 1.0});
  }
  const Network net = build_vector_memorizer(ds, 13);
  REQUIRE(net.width() <= 2 * 3);
  REQUIRE(net.output_dim() == 3);
  const MemorizationReport rep = verify_memorization(net, ds, 1e-9);
  REQUIRE(rep.failures.empty());

  SECTION("negative components are rejected") {
    ds.vector_labels[0][1] = -0.5;
    REQUIRE_THROWS_AS(build_vector_memorizer(ds, 1), DomainError);
  }
}

TEST_CASE("verification reports failures") {
  const LabeledDataset ds = class_dataset(2, 6, 2, 61);
  auto [net, trace] = build_memorizer(ds, 41);
  REQUIRE(verify_memorization(net, ds).failures.empty());

  Network broken = net;
  broken.layers.back().b[0] += 1e-3;
  const MemorizationReport rep = verify_memorization(broken, ds, 1e-6);
  REQUIRE_FALSE(rep.failures.empty());
  REQUIRE(rep.max_abs_error > 1e-6);
}
