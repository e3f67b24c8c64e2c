#include "clothlab/geometry.hpp"

#include "clothlab/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>

namespace clothlab {
namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool inside_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  const double d1 = cross2(b - a, p - a);
  const double d2 = cross2(c - b, p - b);
  const double d3 = cross2(a - c, p - c);
  const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(has_neg && has_pos);
}

void fill_triangle(Raster& r, const Vec2& a, const Vec2& b, const Vec2& c) {
  if (std::abs(cross2(b - a, c - a)) == 0.0) return;
  const double min_x = std::min({a.x(), b.x(), c.x()});
  const double max_x = std::max({a.x(), b.x(), c.x()});
  const double min_y = std::min({a.y(), b.y(), c.y()});
  const double max_y = std::max({a.y(), b.y(), c.y()});
  const int c0 = std::max(0, static_cast<int>(std::floor((min_x - r.origin.x()) / r.cell_size)));
  const int c1 = std::min(r.cols - 1, static_cast<int>(std::floor((max_x - r.origin.x()) / r.cell_size)));
  const int r0 = std::max(0, static_cast<int>(std::floor((min_y - r.origin.y()) / r.cell_size)));
  const int r1 = std::min(r.rows - 1, static_cast<int>(std::floor((max_y - r.origin.y()) / r.cell_size)));
  for (int row = r0; row <= r1; ++row) {
    for (int col = c0; col <= c1; ++col) {
      if (inside_triangle(r.cell_center(col, row), a, b, c)) r.covered[row * r.cols + col] = 1;
    }
  }
}

// Clockwise in (x right, y up): W, NW, N, NE, E, SE, S, SW.
constexpr std::array<std::array<int, 2>, 8> kMoore = {
    {{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};

int direction_of(int dc, int dr) {
  for (int k = 0; k < 8; ++k) {
    if (kMoore[k][0] == dc && kMoore[k][1] == dr) return k;
  }
  return -1;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Marks kept points of pts[first..last] (inclusive, indices modulo size).
void simplify_chain(const std::vector<Vec2>& pts, int first, int last, double epsilon,
                    std::vector<char>& keep) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::pair<int, int>> stack{{first, last}};
  while (!stack.empty()) {
    const auto [lo, hi] = stack.back();
    stack.pop_back();
    if (hi - lo < 2) continue;
    const Vec2& a = pts[lo % n];
    const Vec2& b = pts[hi % n];
    double worst = -1.0;
    int worst_idx = -1;
    for (int k = lo + 1; k < hi; ++k) {
      const double d = point_segment_distance(pts[k % n], a, b);
      if (d > worst) {
        worst = d;
        worst_idx = k;
      }
    }
    if (worst > epsilon) {
      keep[worst_idx % n] = 1;
      stack.emplace_back(lo, worst_idx);
      stack.emplace_back(worst_idx, hi);
    }
  }
}

long binomial_capped(int n, int k, long cap) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  long double acc = 1.0;
  for (int i = 1; i <= k; ++i) {
    acc = acc * (n - k + i) / i;
    if (acc > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<long>(std::llround(acc));
}

double min_pairwise(const std::vector<Vec2>& pts, const std::vector<int>& idx) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      best = std::min(best, (pts[idx[a]] - pts[idx[b]]).norm());
    }
  }
  return best;
}

}  // namespace

double Raster::covered_area() const {
  const auto count = std::count(covered.begin(), covered.end(), std::uint8_t{1});
  return static_cast<double>(count) * cell_size * cell_size;
}

Raster rasterize_cloth(const ClothState& state, const MeshTopology& topo, double cell_size) {
  if (!(cell_size > 0.0)) throw PreconditionError("cell_size must be > 0");
  if (state.size() != topo.particle_count()) {
    throw PreconditionError("cloth state size does not match topology");
  }
  Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const Vec3& x : state.positions) {
    lo = lo.cwiseMin(x.head<2>());
    hi = hi.cwiseMax(x.head<2>());
  }
  Raster r;
  r.cell_size = cell_size;
  r.origin = lo - Vec2::Constant(2.0 * cell_size);
  r.cols = static_cast<int>(std::ceil((hi.x() - lo.x()) / cell_size)) + 4;
  r.rows = static_cast<int>(std::ceil((hi.y() - lo.y()) / cell_size)) + 4;
  r.covered.assign(static_cast<std::size_t>(r.cols) * r.rows, 0);
  const int n = topo.n;
  auto xy = [&](int row, int col) -> Vec2 { return state.positions[topo.index(row, col)].head<2>(); };
  for (int row = 0; row + 1 < n; ++row) {
    for (int col = 0; col + 1 < n; ++col) {
      fill_triangle(r, xy(row, col), xy(row, col + 1), xy(row + 1, col));
      fill_triangle(r, xy(row, col + 1), xy(row + 1, col + 1), xy(row + 1, col));
    }
  }
  return r;
}

Contour trace_outline(const Raster& raster) {
  const int cells = raster.cols * raster.rows;
  std::vector<int> label(static_cast<std::size_t>(cells), -1);
  int best_label = -1;
  int best_size = 0;
  int best_start = -1;
  int next_label = 0;
  for (int start = 0; start < cells; ++start) {
    if (!raster.covered[start] || label[start] >= 0) continue;
    int size = 0;
    std::queue<int> frontier;
    frontier.push(start);
    label[start] = next_label;
    while (!frontier.empty()) {
      const int cur = frontier.front();
      frontier.pop();
      ++size;
      const int col = cur % raster.cols;
      const int row = cur / raster.cols;
      for (const auto& d : kMoore) {
        const int nc = col + d[0];
        const int nr = row + d[1];
        if (!raster.at(nc, nr)) continue;
        const int id = nr * raster.cols + nc;
        if (label[id] >= 0) continue;
        label[id] = next_label;
        frontier.push(id);
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next_label;
      best_start = start;
    }
    ++next_label;
  }
  if (best_label < 0) throw GeometryError("empty region: no raster cell is covered");

  auto in_region = [&](int col, int row) {
    return raster.at(col, row) && label[row * raster.cols + col] == best_label;
  };

  // Moore-neighbour tracing from the first region cell in scan order; its
  // western neighbour is guaranteed empty.
  const int sc = best_start % raster.cols;
  const int sr = best_start / raster.cols;
  Contour contour;
  contour.closed = true;
  contour.points.push_back(raster.cell_center(sc, sr));
  int cc = sc;
  int cr = sr;
  int back = 0;  // direction from current cell to the backtrack cell (W)
  int first_next = -1;
  const int max_iter = 8 * cells + 16;
  for (int iter = 0; iter < max_iter; ++iter) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int dir = (back + k) % 8;
      if (in_region(cc + kMoore[dir][0], cr + kMoore[dir][1])) {
        found = dir;
        break;
      }
    }
    if (found < 0) break;  // isolated cell
    const int nc = cc + kMoore[found][0];
    const int nr = cr + kMoore[found][1];
    const int next_id = nr * raster.cols + nc;
    if (cc == sc && cr == sr) {
      if (first_next < 0) {
        first_next = next_id;
      } else if (next_id == first_next) {
        break;
      }
    }
    // The cell examined just before `found` becomes the new backtrack.
    const int prev_dir = (found + 7) % 8;
    const int bc = cc + kMoore[prev_dir][0];
    const int br = cr + kMoore[prev_dir][1];
    cc = nc;
    cr = nr;
    back = direction_of(bc - cc, br - cr);
    if (!(cc == sc && cr == sr)) contour.points.push_back(raster.cell_center(cc, cr));
  }
  if (contour.size() < 3) throw GeometryError("degenerate region: outline has fewer than 3 points");
  return contour;
}

Contour project_and_outline(const ClothState& state, const MeshTopology& topo, double cell_size) {
  return trace_outline(rasterize_cloth(state, topo, cell_size));
}

Contour douglas_peucker(const Contour& contour, double epsilon) {
  if (epsilon < 0.0) throw PreconditionError("douglas_peucker: epsilon must be >= 0");
  const int n = contour.size();
  if (n < 3) return contour;
  std::vector<char> keep(static_cast<std::size_t>(n), 0);
  if (!contour.closed) {
    keep[0] = keep[n - 1] = 1;
    simplify_chain(contour.points, 0, n - 1, epsilon, keep);
  } else {
    int far = 0;
    double far_d = -1.0;
    for (int k = 1; k < n; ++k) {
      const double d = (contour.points[k] - contour.points[0]).norm();
      if (d > far_d) {
        far_d = d;
        far = k;
      }
    }
    keep[0] = keep[far] = 1;
    simplify_chain(contour.points, 0, far, epsilon, keep);
    simplify_chain(contour.points, far, n, epsilon, keep);
  }
  Contour out;
  out.closed = contour.closed;
  for (int k = 0; k < n; ++k) {
    if (keep[k]) out.points.push_back(contour.points[k]);
  }
  return out;
}

std::vector<int> mmdvs_indices(const Contour& contour, int k) {
  const int n = contour.size();
  if (k < 1) throw PreconditionError("mmdvs: k must be >= 1");
  if (n < k) {
    throw InsufficientPointsError("mmdvs: contour has " + std::to_string(n) + " points, need " +
                                  std::to_string(k));
  }
  const auto& pts = contour.points;
  std::vector<int> best(static_cast<std::size_t>(k));
  if (k == 1 || n == k) {
    for (int i = 0; i < k; ++i) best[i] = i;
    return best;
  }
  if (binomial_capped(n, k, kMmdvsExhaustiveLimit) <= kMmdvsExhaustiveLimit) {
    // Lexicographic enumeration; a strictly larger minimum replaces the
    // incumbent, so ties keep the lexicographically first tuple.
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[i] = i;
    double best_d = -1.0;
    while (true) {
      const double d = min_pairwise(pts, idx);
      if (d > best_d) {
        best_d = d;
        best = idx;
      }
      int pos = k - 1;
      while (pos >= 0 && idx[pos] == n - k + pos) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int q = pos + 1; q < k; ++q) idx[q] = idx[q - 1] + 1;
    }
    return best;
  }
  // Greedy farthest-point selection seeded with the diameter pair.
  int a = 0;
  int b = 1;
  double diam = -1.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (pts[i] - pts[j]).norm();
      if (d > diam) {
        diam = d;
        a = i;
        b = j;
      }
    }
  }
  std::vector<int> chosen{a, b};
  std::vector<double> nearest(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nearest[i] = std::min((pts[i] - pts[a]).norm(), (pts[i] - pts[b]).norm());
  }
  while (static_cast<int>(chosen.size()) < k) {
    int pick = -1;
    double pick_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      if (nearest[i] > pick_d) {
        pick_d = nearest[i];
        pick = i;
      }
    }
    chosen.push_back(pick);
    for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], (pts[i] - pts[pick]).norm());
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<Vec2> mmdvs(const Contour& contour, int k) {
  std::vector<Vec2> out;
  for (int i : mmdvs_indices(contour, k)) out.push_back(contour.points[i]);
  return out;
}

std::vector<Vec2> select_endpoints(const Contour& contour, int k, double epsilon, int retries) {
  double eps = epsilon;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    const Contour simplified = douglas_peucker(contour, eps);
    if (simplified.size() >= k) return mmdvs(simplified, k);
    eps /= 2.0;
  }
  return mmdvs(contour, k);
}

double polygon_area(const Contour& contour) {
  if (contour.size() < 3) throw GeometryError("polygon needs at least 3 points");
  double twice = 0.0;
  const int n = contour.size();
  for (int i = 0; i < n; ++i) twice += cross2(contour.points[i], contour.points[(i + 1) % n]);
  return std::abs(twice) / 2.0;
}

Vec2 polygon_centroid(const Contour& contour) {
  if (contour.size() < 3) throw GeometryError("polygon needs at least 3 points");
  const int n = contour.size();
  // Shift to the first vertex to keep the sums well conditioned.
  const Vec2 ref = contour.points[0];
  double twice = 0.0;
  Vec2 acc = Vec2::Zero();
  double extent = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2 p = contour.points[i] - ref;
    const Vec2 q = contour.points[(i + 1) % n] - ref;
    const double w = cross2(p, q);
    twice += w;
    acc += (p + q) * w;
    extent = std::max(extent, p.squaredNorm());
  }
  if (std::abs(twice) <= 1e-12 * extent || twice == 0.0) {
    throw GeometryError("degenerate polygon: zero area, centroid undefined");
  }
  return ref + acc / (3.0 * twice);
}

}  // namespace clothlab
