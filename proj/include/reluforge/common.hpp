#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace reluforge {

// Tolerances shared across the toolkit. Two values are "the same point" when
// they agree to dedup_tol relatively; gap_tol is the relative margin a random
// projection must keep between distinct points; value_round_tol buckets cell
// averages before counting distinct target values.
inline constexpr double dedup_tol = 1e-12;
inline constexpr double gap_tol = 1e-9;
inline constexpr double value_round_tol = 1e-9;

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct DuplicatePoints : std::runtime_error {
  int first, second;
  DuplicatePoints(int i, int j)
      : std::runtime_error("duplicate points at rows " + std::to_string(i) +
                           " and " + std::to_string(j)),
        first(i),
        second(j) {}
};

struct NoDirectionFound : std::runtime_error {
  explicit NoDirectionFound(const std::string& what)
      : std::runtime_error(what) {}
};

struct DegenerateConfiguration : std::runtime_error {
  explicit DegenerateConfiguration(const std::string& what)
      : std::runtime_error(what) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

struct NotAMemorizer : std::runtime_error {
  explicit NotAMemorizer(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

struct LossLabelMismatch : std::runtime_error {
  explicit LossLabelMismatch(const std::string& what)
      : std::runtime_error(what) {}
};

struct PlacementError : std::runtime_error {
  explicit PlacementError(const std::string& what) : std::runtime_error(what) {}
};

struct TooFine : std::runtime_error {
  explicit TooFine(const std::string& what) : std::runtime_error(what) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

inline bool nearly_equal(double a, double b) {
  return std::fabs(a - b) <=
         dedup_tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Dyadic fractions of (0,1) in a fixed order: 1/2, 1/4, 3/4, 1/8, 3/8, ...
// Free parameters that only need to dodge a measure-zero set of collisions
// are scanned along this sequence so that every build is deterministic.
inline const std::vector<double>& nudge_fractions() {
  static const std::vector<double> table = [] {
    std::vector<double> t;
    for (int level = 1; level <= 7; ++level) {
      const double denom = double(1 << level);
      for (int num = 1; num < (1 << level); num += 2) t.push_back(num / denom);
    }
    return t;
  }();
  return table;
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed) {
  return std::mt19937_64{seed};
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace reluforge
