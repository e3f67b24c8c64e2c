#pragma once

// Spring-mass cloth: topology, explicit integrator, table contact and the
// pick-and-place execution primitive shared by the plant and the NMPC model.

#include <Eigen/Core>

#include <iosfwd>
#include <span>
#include <vector>

namespace clothlab {

using Vec3 = Eigen::Vector3d;

struct Spring {
  int i = 0;
  int j = 0;
  double rest_length = 0.0;
  double stiffness = 0.0;
};

/// Diagonal (shear) springs, rest length sqrt(2) l. `AntiDiagonal` adds one per
/// cell, parallel to the 1 -> N fold crease, which triangulates the grid.
enum class ShearPattern { None, AntiDiagonal, Both };

struct MeshOptions {
  int n = 6;                  // particles per edge
  double edge_length = 0.24;  // l_s [m]
  double stiffness = 80.0;    // k [N/m]
  double damping = 0.1;       // c [N s/m]
  double total_mass = 0.05;   // [kg], split evenly
  ShearPattern shear = ShearPattern::None;
  double shear_stiffness = 40.0;  // [N/m], diagonal springs only
};

/// Square particle grid, numbered row-major (row 0 first, left to right).
struct MeshTopology {
  int n = 0;
  double edge_length = 0.0;
  double stiffness = 0.0;
  double damping = 0.0;
  double particle_mass = 0.0;
  std::vector<Spring> springs;
  /// neighbors[i] holds indices into `springs` touching particle i.
  std::vector<std::vector<int>> spring_ids;

  int particle_count() const { return n * n; }
  int index(int row, int col) const { return row * n + col; }
  double spacing() const { return edge_length / (n - 1); }
  /// Neighbor particle indices of i (the set N_i).
  std::vector<int> neighbors(int i) const;
  /// Spring joining i and j, or nullptr.
  const Spring* find_spring(int i, int j) const;
};

MeshTopology make_square_mesh(const MeshOptions& options = {});

struct ClothState {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  long step = 0;

  int size() const { return static_cast<int>(positions.size()); }
};

struct SimParams {
  double dt = 0.001;
  double gravity = 9.81;
  double table_height = 0.0;
  double tangential_friction = 0.3;
  double settle_speed_tol = 1e-3;
  int settle_max_steps = 3000;
  bool enable_table = true;

  /// Throws PreconditionError when dt or settle_speed_tol are not positive.
  void validate() const;
};

struct MotionParams {
  double lift_height = 0.10;
  double grasp_radius = 0.03;
  double max_carry_speed = 0.5;  // [m/s]
  int hold_steps = 0;  // steps the anchor stays pinned at the place point before release
  bool record_trajectory = true;
};

/// Flat cloth lying at table height, centred at `center`, rotated by `yaw` about z.
ClothState flat_cloth(const MeshTopology& topo, const SimParams& params,
                      const Eigen::Vector2d& center = Eigen::Vector2d::Zero(), double yaw = 0.0);

/// Restoring spring force on particle i from its spring to j.
Vec3 spring_force(const ClothState& state, int i, int j, const MeshTopology& topo);

std::vector<Vec3> total_force(const ClothState& state, std::span<const Vec3> external,
                              const MeshTopology& topo, const SimParams& params);

/// One explicit step: x += dt v + dt^2/2 a, v += dt a, then table projection.
ClothState step(const ClothState& state, std::span<const Vec3> external, const MeshTopology& topo,
                const SimParams& params);

ClothState settle(const ClothState& state, const MeshTopology& topo, const SimParams& params);

/// Index minimising Euclidean distance to `point`; ties go to the lowest index.
int nearest_particle(const ClothState& state, const Vec3& point);

struct PickPlaceResult {
  ClothState final_state;
  std::vector<ClothState> trajectory;
  int grasped = -1;
};

/// Anchors the particle nearest to `grasp_point`, carries it lift -> transit ->
/// descend to `place_point`, releases and settles. Throws GraspMissError.
PickPlaceResult execute_pick_place(const ClothState& state, const Vec3& grasp_point,
                                   const Vec3& place_point, const MeshTopology& topo,
                                   const SimParams& params, const MotionParams& motion);

double kinetic_energy(const ClothState& state, const MeshTopology& topo);
/// Spring potential plus gravitational potential (relative to z = 0).
double potential_energy(const ClothState& state, const MeshTopology& topo, const SimParams& params);
Vec3 linear_momentum(const ClothState& state, const MeshTopology& topo);
double max_speed(const ClothState& state);

/// `t x1 y1 z1 ... xN yN zN` per line, 9 significant digits.
void write_trajectory(std::ostream& out, std::span<const ClothState> trajectory);

}  // namespace clothlab
