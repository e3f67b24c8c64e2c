#pragma once

// Planar polygon utilities used on simulated cloth outlines: raster + Moore
// boundary tracing, Douglas-Peucker simplification, MMDVS endpoint selection,
// shoelace area and centroid.

#include "clothlab/cloth.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace clothlab {

using Vec2 = Eigen::Vector2d;

struct Contour {
  std::vector<Vec2> points;
  bool closed = true;

  int size() const { return static_cast<int>(points.size()); }
};

/// Occupancy grid of the cloth's projection onto the table plane.
struct Raster {
  double cell_size = 0.0;
  Vec2 origin = Vec2::Zero();  // lower-left corner of cell (0, 0)
  int cols = 0;
  int rows = 0;
  std::vector<std::uint8_t> covered;  // row-major, row 0 at lowest y

  bool at(int col, int row) const {
    return col >= 0 && row >= 0 && col < cols && row < rows && covered[row * cols + col] != 0;
  }
  Vec2 cell_center(int col, int row) const {
    return origin + Vec2((col + 0.5) * cell_size, (row + 0.5) * cell_size);
  }
  double covered_area() const;
};

/// Marks every cell whose centre lies inside a projected mesh triangle.
Raster rasterize_cloth(const ClothState& state, const MeshTopology& topo, double cell_size);

/// Closed contour (cell centres) of the largest 8-connected covered region.
Contour trace_outline(const Raster& raster);

/// rasterize_cloth followed by trace_outline.
Contour project_and_outline(const ClothState& state, const MeshTopology& topo, double cell_size);

/// Keeps original points in order; every dropped point is within `epsilon` of the result.
Contour douglas_peucker(const Contour& contour, double epsilon);

/// Combinations above this count switch MMDVS from exhaustive search to the greedy heuristic.
inline constexpr long kMmdvsExhaustiveLimit = 50000;

/// Indices (ascending) of the k points maximising the minimum pairwise distance.
std::vector<int> mmdvs_indices(const Contour& contour, int k);
std::vector<Vec2> mmdvs(const Contour& contour, int k);

/// Douglas-Peucker with epsilon halved (up to `retries` times) until at least k
/// points survive, then MMDVS. Falls back to the raw contour.
std::vector<Vec2> select_endpoints(const Contour& contour, int k, double epsilon = 0.01,
                                   int retries = 6);

double polygon_area(const Contour& contour);
Vec2 polygon_centroid(const Contour& contour);

}  // namespace clothlab
