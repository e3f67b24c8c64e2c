#pragma once

#include "clothlab/tasks.hpp"

#include <vector>

namespace clothlab {

struct Transition {
  StateVector state;
  Action action;
  double reward = 0.0;
  StateVector next_state;
  bool done = false;
  bool demo = false;
  bool advances = false;  // significant task progress; joins the grasp dataset

  // Filled in by the replay buffer when the transition is inserted.
  double nstep_return = 0.0;
  StateVector nstep_state;
  int nstep_count = 0;  // rewards summed into nstep_return
  bool nstep_done = false;
};

using Episode = std::vector<Transition>;

struct DemoDataset {
  TaskKind task = TaskKind::DiagonalFold;
  std::vector<Episode> episodes;

  int transition_count() const;
  /// Episodes flattened in order, every record flagged as a demonstration.
  std::vector<Transition> transitions() const;
};

}  // namespace clothlab
