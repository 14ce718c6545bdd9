#include "catch2/catch_amalgamated.hpp"
#include "reluforge/geometry.hpp"

#include <cmath>
#include <random>
#include <set>
#include <utility>

using namespace reluforge;

namespace {

// Independent re-derivation of the frozen gap constants: a dense grid
// brackets the maximum of g(t) = t(1 - Phi(t)), then Newton iterates on the
// stationarity equation (1 - Phi(t)) = t phi(t), whose derivative is
// (t^2 - 2) phi(t).
std::pair<double, double> derive_gap_constants() {
  const int steps = 2000000;
  double bt = 0.0, bg = -1.0;
  for (int i = 0; i <= steps; ++i) {
    const double t = 4.0 * double(i) / double(steps);
    const double g = t * (1.0 - std_normal_cdf(t));
    if (g > bg) {
      bg = g;
      bt = t;
    }
  }
  double t = bt;
  for (int it = 0; it < 60; ++it) {
    const double f = (1.0 - std_normal_cdf(t)) - t * std_normal_pdf(t);
    const double df = (t * t - 2.0) * std_normal_pdf(t);
    const double step = f / df;
    t -= step;
    if (std::fabs(step) < 1e-16) break;
  }
  return {t, t * (1.0 - std_normal_cdf(t))};
}

}  // namespace

TEST_CASE("rectifier and normal reference values") {
  REQUIRE(relu(3.5) == 3.5);
  REQUIRE(relu(-2.0) == 0.0);
  REQUIRE(relu(0.0) == 0.0);

  REQUIRE(std_normal_cdf(0.0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(std_normal_cdf(1.0) ==
          Catch::Approx(0.8413447460685429).margin(1e-15));
  REQUIRE(std_normal_cdf(-1.0) ==
          Catch::Approx(1.0 - 0.8413447460685429).margin(1e-15));
  REQUIRE(std_normal_pdf(0.0) ==
          Catch::Approx(0.3989422804014327).margin(1e-16));
  REQUIRE(std_normal_pdf(2.0) == Catch::Approx(std_normal_pdf(-2.0)));
}

TEST_CASE("smoothed rectifier approaches the exact one") {
  REQUIRE(gelu(0.0) == 0.0);
  REQUIRE(gelu_eps(0.0, 0.3) == 0.0);
  REQUIRE_THROWS_AS(gelu_eps(1.0, 0.0), DomainError);
  REQUIRE_THROWS_AS(gelu_eps(1.0, -1.0), DomainError);

  for (double x : {-2.0, -0.7, -0.1, 0.1, 0.7, 2.0}) {
    double prev = std::fabs(gelu_eps(x, 1.0) - relu(x));
    for (double eps : {1e-1, 1e-2, 1e-3}) {
      const double gap = std::fabs(gelu_eps(x, eps) - relu(x));
      REQUIRE(gap <= prev + 1e-15);
      prev = gap;
    }
    REQUIRE(prev <= 1e-3 * gelu_relu_gap_max + 1e-12);
  }
}

TEST_CASE("gap constants match an independent derivation") {
  const auto [argmax, gmax] = derive_gap_constants();
  REQUIRE(argmax == Catch::Approx(gelu_relu_gap_argmax).margin(1e-12));
  REQUIRE(gmax == Catch::Approx(gelu_relu_gap_max).margin(1e-12));
  REQUIRE(gelu_relu_gap_profile(gelu_relu_gap_argmax) ==
          Catch::Approx(gelu_relu_gap_max).margin(1e-15));
}

TEST_CASE("gap profile equals the measured gap on both sides") {
  REQUIRE_THROWS_AS(gelu_relu_gap_profile(-0.1), DomainError);
  for (double t : {0.0, 0.2, 0.75, 1.3, 3.0}) {
    const double prof = gelu_relu_gap_profile(t);
    REQUIRE(std::fabs(gelu(t) - relu(t)) == Catch::Approx(prof).margin(1e-15));
    REQUIRE(std::fabs(gelu(-t) - relu(-t)) ==
            Catch::Approx(prof).margin(1e-15));
    REQUIRE(prof <= gelu_relu_gap_max + 1e-15);
  }
}

TEST_CASE("activation kinds and derivatives") {
  const Activation r = Activation::make_relu();
  REQUIRE(r.apply(-1.0) == 0.0);
  REQUIRE(r.derivative(2.0) == 1.0);
  REQUIRE(r.derivative(-2.0) == 0.0);
  REQUIRE(r.derivative(0.0) == 0.0);

  REQUIRE_THROWS_AS(Activation::make_gelu(0.0), DomainError);
  const Activation g = Activation::make_gelu(0.5);
  for (double z : {-1.2, -0.3, 0.4, 1.7}) {
    const double h = 1e-6;
    const double fd = (g.apply(z + h) - g.apply(z - h)) / (2.0 * h);
    REQUIRE(g.derivative(z) == Catch::Approx(fd).margin(1e-8));
  }
}

TEST_CASE("layer shapes and the post factor") {
  Layer l;
  l.W = Mat(2, 3, {1, 0, 0, 0, 1, 0});
  l.b = Vec{0.5, -0.5};
  REQUIRE(l.in_dim() == 3);
  REQUIRE(l.neurons() == 2);
  REQUIRE(l.out_dim() == 2);

  const Vec y = apply_layer(l, Vec{1.0, 1.0, 9.0});
  REQUIRE(y == Vec{1.5, 0.5});

  l.post = Mat(1, 2, {-1.0, 1.0});
  REQUIRE(l.out_dim() == 1);
  REQUIRE(apply_layer(l, Vec{1.0, 1.0, 9.0}) == Vec{-1.0});

  const Layer id = identity_layer(2);
  REQUIRE(apply_layer(id, Vec{0.25, 3.0}) == Vec{0.25, 3.0});
}

TEST_CASE("network validation rejects inconsistent shapes") {
  Network net;
  net.input_dim = 2;
  Layer a;
  a.W = Mat(2, 2, {1, 0, 0, 1});
  a.b = Vec{0, 0};
  Layer b;
  b.W = Mat(1, 3, {1, 1, 1});
  b.b = Vec{0};
  net.layers = {a, b};
  REQUIRE_THROWS_AS(net.validate(), ShapeMismatch);

  net.layers = {a};
  net.layers[0].b = Vec{0};
  REQUIRE_THROWS_AS(net.validate(), ShapeMismatch);

  net.layers[0].b = Vec{0, 0};
  net.layers[0].post = Mat(1, 3);
  REQUIRE_THROWS_AS(net.validate(), ShapeMismatch);

  net.layers[0].post = Mat(1, 2, {1, 1});
  REQUIRE_NOTHROW(net.validate());
  REQUIRE(net.depth() == 1);
  REQUIRE(net.width() == 2);
  REQUIRE(net.output_dim() == 1);
}

TEST_CASE("forward pass and trace agree") {
  Network net;
  net.input_dim = 1;
  Layer a;
  a.W = Mat(2, 1, {1.0, -1.0});
  a.b = Vec{0.0, 0.0};
  Layer b;
  b.W = Mat(1, 2, {1.0, 1.0});
  b.b = Vec{0.25};
  net.layers = {a, b};

  // Composition computes relu(x) + relu(-x) + 0.25 = |x| + 0.25.
  REQUIRE(forward(net, Vec{3.0}) == Vec{3.25});
  REQUIRE(forward(net, Vec{-2.0}) == Vec{2.25});
  REQUIRE_THROWS_AS(forward(net, Vec{1.0, 2.0}), ShapeMismatch);

  const auto states = forward_trace(net, Vec{-2.0});
  REQUIRE(states.size() == 2);
  REQUIRE(states[0] == Vec{0.0, 2.0});
  REQUIRE(states[1] == forward(net, Vec{-2.0}));
}

TEST_CASE("separating directions") {
  SECTION("dimension one is canonical") {
    const Vec v = separating_direction({{0.5}, {2.0}, {-1.0}}, 9);
    REQUIRE(v == Vec{1.0});
  }
  SECTION("duplicate points are rejected") {
    REQUIRE_THROWS_AS(separating_direction({{1.0, 2.0}, {1.0, 2.0}}, 1),
                      DuplicatePoints);
  }
  SECTION("projections stay pairwise distinct") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t d = 2 + trial % 4;
      std::vector<Vec> pts(8, Vec(d));
      for (auto& p : pts)
        for (auto& c : p) c = u(rng);
      const Vec w = separating_direction(pts, 1000 + trial);
      REQUIRE(norm2(w) == Catch::Approx(1.0).margin(1e-12));
      for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
          REQUIRE(std::fabs(dot(w, pts[i]) - dot(w, pts[j])) > 0.0);
    }
  }
  SECTION("deterministic in the seed") {
    const std::vector<Vec> pts = {{0.0, 1.0}, {1.0, 0.0}, {0.7, 0.7}};
    REQUIRE(separating_direction(pts, 5) == separating_direction(pts, 5));
  }
}

TEST_CASE("matrix and vector primitives") {
  REQUIRE(dot(Vec{1, 2, 3}, Vec{4, 5, 6}) == 32.0);
  REQUIRE_THROWS_AS(dot(Vec{1}, Vec{1, 2}), ShapeMismatch);
  REQUIRE(norm2(Vec{3, 4}) == 5.0);
  REQUIRE(norm_inf(Vec{-7, 2}) == 7.0);

  const Mat I = Mat::identity(3);
  REQUIRE(matvec(I, Vec{1, 2, 3}) == Vec{1, 2, 3});
  REQUIRE_THROWS_AS(matvec(I, Vec{1, 2}), ShapeMismatch);

  const Mat m(2, 2, {1, 2, 3, 4});
  REQUIRE(frobenius_sq(m) == 30.0);
  REQUIRE(max_abs(m) == 4.0);
}

TEST_CASE("spectral norms against closed forms") {
  REQUIRE(spectral_norm(Mat(2, 2, {3, 0, 0, 4})) ==
          Catch::Approx(4.0).margin(1e-12));
  // Shear [[1,1],[0,1]] has largest singular value (1+sqrt(5))/2.
  REQUIRE(spectral_norm(Mat(2, 2, {1, 1, 0, 1})) ==
          Catch::Approx(0.5 * (1.0 + std::sqrt(5.0))).margin(1e-12));
  // Row and column vectors reduce to the euclidean norm.
  REQUIRE(spectral_norm(Mat(1, 3, {2, 3, 6})) ==
          Catch::Approx(7.0).margin(1e-12));
  REQUIRE(spectral_norm(Mat(3, 1, {2, 3, 6})) ==
          Catch::Approx(7.0).margin(1e-12));
  // Permuted diagonal, handled by the power iteration branch.
  REQUIRE(spectral_norm(Mat(3, 3, {0, 2, 0, 3, 0, 0, 0, 0, 1})) ==
          Catch::Approx(3.0).margin(1e-9));
  // Rank-one 3x4: largest singular value is the product of the norms.
  const Vec u{1, 2, 2}, v{0.5, 0.5, 0.5, 0.5};
  Mat r1(3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) r1.at(i, j) = u[i] * v[j];
  REQUIRE(spectral_norm(r1) ==
          Catch::Approx(norm2(u) * norm2(v)).margin(1e-9));
  REQUIRE(detail::sym2_lambda_max(2, 1, 2) ==
          Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("shared numeric helpers") {
  REQUIRE(nearly_equal(1.0, 1.0 + 1e-13));
  REQUIRE_FALSE(nearly_equal(1.0, 1.0 + 1e-11));
  REQUIRE(nearly_equal(1e6, 1e6 * (1.0 + 1e-13)));

  const auto& fr = nudge_fractions();
  REQUIRE(fr.size() == 127);
  REQUIRE(fr.front() == 0.5);
  for (double f : fr) REQUIRE((f > 0.0 && f < 1.0));
  std::set<double> uniq(fr.begin(), fr.end());
  REQUIRE(uniq.size() == fr.size());

  REQUIRE(mix_seed(1, 2) == mix_seed(1, 2));
  REQUIRE(mix_seed(1, 2) != mix_seed(1, 3));
  REQUIRE(mix_seed(1, 2) != mix_seed(2, 2));
}
