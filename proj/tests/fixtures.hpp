#pragma once

// Cheap demonstration data for tests that need a replay buffer or a demo file.

#include "clothlab/dataset.hpp"
#include "clothlab/tasks.hpp"

#include <random>

namespace testing {

inline clothlab::EpisodeConfig quiet_fold() {
  clothlab::EpisodeConfig c = clothlab::default_episode(clothlab::TaskKind::DiagonalFold);
  c.fold_translation_noise = 0.0;
  c.fold_rotation_noise = 0.0;
  return c;
}

// Corner 0 onto corner 2, then an idle move that ends the episode.
inline clothlab::DemoDataset scripted_demos(int episodes, const clothlab::PlantConfig& plant) {
  using namespace clothlab;
  DemoDataset d;
  std::mt19937_64 rng(5);
  for (int e = 0; e < episodes; ++e) {
    ClothEnv env = init_episode(quiet_fold(), rng, plant);
    Episode ep;
    for (int step = 0; step < 2; ++step) {
      Transition t;
      t.state = env.observation();
      t.action.grasp = 0;
      t.action.place = step == 0 ? t.state.endpoint(2) : t.state.endpoint(0);
      const double prev = env.metric();
      const StepResult r = env.apply_action(t.action);
      t.reward = r.reward;
      t.next_state = r.state;
      t.done = r.done;
      t.demo = true;
      t.advances = significant_progress(TaskKind::DiagonalFold, prev, env.metric(),
                                        env.config().change_threshold);
      ep.push_back(t);
    }
    d.episodes.push_back(ep);
  }
  return d;
}

}  // namespace testing
