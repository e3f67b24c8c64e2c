#pragma once

// Brute-force references shared by the unit tests and the acceptance run.

#include "clothlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace testing {

using clothlab::Contour;
using clothlab::Vec2;

// All k-subsets in lexicographic order; first tuple with the largest minimum distance wins.
inline std::vector<int> brute_mmdvs(const Contour& c, int k) {
  const int n = c.size();
  std::vector<int> best, cur;
  double best_d = -1.0;
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(cur.size()) == k) {
      double d = std::numeric_limits<double>::infinity();
      for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) d = std::min(d, (c.points[cur[a]] - c.points[cur[b]]).norm());
      }
      if (d > best_d) {
        best_d = d;
        best = cur;
      }
      return;
    }
    for (int i = start; i < n; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return best;
}

inline double min_pairwise(const std::vector<Vec2>& pts) {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) d = std::min(d, (pts[a] - pts[b]).norm());
  }
  return d;
}

inline double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Largest distance of a dropped point to the simplified segment spanning it.
// Returns +inf when the output is not a subsequence of the input.
inline double dp_deviation(const Contour& in, const Contour& out) {
  std::vector<int> kept;
  std::size_t q = 0;
  for (int i = 0; i < in.size() && q < out.points.size(); ++i) {
    if (in.points[i] == out.points[q]) {
      kept.push_back(i);
      ++q;
    }
  }
  if (q != out.points.size()) return std::numeric_limits<double>::infinity();
  const int n = in.size();
  double worst = 0.0;
  const std::size_t spans = in.closed ? kept.size() : kept.size() - 1;
  for (std::size_t s = 0; s < spans; ++s) {
    const int a = kept[s];
    const int b = s + 1 < kept.size() ? kept[s + 1] : kept[0] + n;
    for (int i = a + 1; i < b; ++i) {
      worst = std::max(worst, segment_distance(in.points[i % n], in.points[a], in.points[b % n]));
    }
  }
  return worst;
}

// Minimum over every monotone alignment path, enumerated explicitly.
inline double brute_dtw(const std::vector<double>& a, const std::vector<double>& b) {
  double best = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, std::size_t i, std::size_t j, double acc) -> void {
    acc += std::abs(a[i] - b[j]);
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < a.size()) self(self, i + 1, j, acc);
    if (j + 1 < b.size()) self(self, i, j + 1, acc);
    if (i + 1 < a.size() && j + 1 < b.size()) self(self, i + 1, j + 1, acc);
  };
  rec(rec, 0, 0, 0.0);
  return best;
}

// Star-shaped closed contour with jittered radii.
inline Contour random_contour(int points, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> r(0.3, 1.0), jitter(-0.3, 0.3);
  Contour c;
  const double pi = std::acos(-1.0);
  for (int i = 0; i < points; ++i) {
    const double th = 2.0 * pi * (i + 0.5 + jitter(rng)) / points;
    const double rad = r(rng);
    c.points.emplace_back(rad * std::cos(th), rad * std::sin(th));
  }
  return c;
}

}  // namespace testing
