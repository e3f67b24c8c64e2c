#include "clothlab/nmpc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace clothlab {

int DemoDataset::transition_count() const {
  int count = 0;
  for (const Episode& e : episodes) count += static_cast<int>(e.size());
  return count;
}

std::vector<Transition> DemoDataset::transitions() const {
  std::vector<Transition> out;
  for (const Episode& e : episodes) {
    for (Transition t : e) {
      t.demo = true;
      out.push_back(std::move(t));
    }
  }
  return out;
}

PairTargets target_pairs(TaskKind task, const MeshTopology& topo) {
  const int n = topo.n;
  PairTargets out;
  if (task == TaskKind::Flatten) {
    const double ls = topo.edge_length;
    out.push_back({0, n * n - 1, std::numbers::sqrt2 * ls, 1.0});
    out.push_back({n - 1, n * n - n, std::numbers::sqrt2 * ls, 1.0});
    out.push_back({0, n - 1, ls, 1.0});
    out.push_back({n * n - n, n * n - 1, ls, 1.0});
    return out;
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int i = topo.index(r, c);
      const int j = task == TaskKind::DiagonalFold ? topo.index(n - 1 - c, n - 1 - r)
                                                   : topo.index(r, n - 1 - c);
      if (i < j) out.push_back({i, j, 0.0, 1.0});
    }
  }
  return out;
}

double stage_loss(const std::vector<Vec3>& positions, const PairTargets& targets) {
  double loss = 0.0;
  for (const PairTarget& p : targets) {
    const double l = (positions[p.i] - positions[p.j]).norm();
    loss += p.weight * (l - p.l_ref) * (l - p.l_ref);
  }
  return loss;
}

SimParams NmpcConfig::default_model() {
  SimParams p;
  p.dt = 0.01;
  p.enable_table = false;
  return p;
}

void NmpcConfig::validate() const {
  if (horizon < 1) throw PreconditionError("NmpcConfig: horizon must be >= 1");
  if (!(u_max > 0.0)) throw PreconditionError("NmpcConfig: u_max must be > 0");
  if (max_iterations < 0) throw PreconditionError("NmpcConfig: max_iterations must be >= 0");
  if (!(initial_step > 0.0)) throw PreconditionError("NmpcConfig: initial_step must be > 0");
  model.validate();
}

namespace {

// Adds d(stage loss + workspace penalty)/dX into grad, returns their value.
double stage_terms(const std::vector<Vec3>& x, const PairTargets& targets,
                   const NmpcConfig& config, std::vector<Vec3>* grad) {
  double value = 0.0;
  for (const PairTarget& p : targets) {
    const Vec3 d = x[p.i] - x[p.j];
    const double l = d.norm();
    const double e = l - p.l_ref;
    value += p.weight * e * e;
    if (grad == nullptr) continue;
    Vec3 g = Vec3::Zero();
    if (l > 1e-12) {
      g = 2.0 * p.weight * e / l * d;
    } else if (p.l_ref == 0.0) {
      g = 2.0 * p.weight * d;
    }
    (*grad)[p.i] += g;
    (*grad)[p.j] -= g;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec3 out = x[i] - config.workspace.clamp(x[i]);
    value += config.penalty_weight * out.squaredNorm();
    if (grad != nullptr) (*grad)[i] += 2.0 * config.penalty_weight * out;
  }
  return value;
}

}  // namespace

RolloutResult rollout_objective(const ClothState& start, const Eigen::VectorXd& forces,
                                const PairTargets& targets, const MeshTopology& topo,
                                const NmpcConfig& config, bool want_gradient) {
  const int n = topo.particle_count();
  const int h = config.horizon;
  if (forces.size() != static_cast<Eigen::Index>(h) * n * 3) {
    throw PreconditionError("force sequence must hold horizon * particles * 3 entries");
  }
  const SimParams& sim = config.model;
  const double dt = sim.dt;
  const double m = topo.particle_mass;

  RolloutResult res;
  res.states.reserve(static_cast<std::size_t>(h + 1));
  res.states.push_back(start);
  std::vector<Vec3> u(static_cast<std::size_t>(n));
  for (int k = 0; k < h; ++k) {
    for (int i = 0; i < n; ++i) u[i] = forces.segment<3>((k * n + i) * 3);
    res.states.push_back(step(res.states.back(), u, topo, sim));
  }

  std::vector<std::vector<Vec3>> dloss(static_cast<std::size_t>(h + 1));
  for (int k = 1; k <= h; ++k) {
    if (want_gradient) dloss[k].assign(static_cast<std::size_t>(n), Vec3::Zero());
    res.objective += stage_terms(res.states[k].positions, targets, config,
                                 want_gradient ? &dloss[k] : nullptr);
  }
  if (!want_gradient) return res;

  // Reverse pass. lx/lv hold dJ/dX_{k+1}, dJ/dV_{k+1} while processing step k.
  res.gradient.setZero(forces.size());
  std::vector<Vec3> lx = dloss[h];
  std::vector<Vec3> lv(static_cast<std::size_t>(n), Vec3::Zero());
  std::vector<Vec3> ga(static_cast<std::size_t>(n));
  const double c = topo.damping;
  for (int k = h - 1; k >= 0; --k) {
    for (int i = 0; i < n; ++i) {
      ga[i] = (0.5 * dt * dt * lx[i] + dt * lv[i]) / m;  // dJ/dF_k
      res.gradient.segment<3>((k * n + i) * 3) = ga[i];
    }
    if (k == 0) break;
    std::vector<Vec3> nlx = lx;
    std::vector<Vec3> nlv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) nlv[i] = dt * lx[i] + lv[i];
    const std::vector<Vec3>& x = res.states[k].positions;
    for (const Spring& s : topo.springs) {
      const Vec3 d = x[s.j] - x[s.i];
      const double l = d.norm();
      if (l < 1e-9) throw SingularityError(s.i, s.j, "coincident particles in NMPC rollout");
      const Eigen::Matrix3d kd =
          s.stiffness * ((1.0 - s.rest_length / l) * Eigen::Matrix3d::Identity() +
                         (s.rest_length / (l * l * l)) * d * d.transpose());
      const Vec3 gdiff = ga[s.j] - ga[s.i];
      nlx[s.i] += kd * gdiff;
      nlx[s.j] -= kd * gdiff;
      nlv[s.i] += c * gdiff;
      nlv[s.j] -= c * gdiff;
    }
    for (int i = 0; i < n; ++i) nlx[i] += dloss[k][i];
    lx = std::move(nlx);
    lv = std::move(nlv);
  }
  return res;
}

MeshTopology model_topology(const MeshTopology& plant, const NmpcConfig& config) {
  MeshTopology m = plant;
  if (config.model_stiffness > 0.0) {
    const double scale = config.model_stiffness / plant.stiffness;
    for (Spring& s : m.springs) s.stiffness *= scale;
    m.stiffness = config.model_stiffness;
  }
  if (config.model_damping > 0.0) m.damping = config.model_damping;
  return m;
}

NmpcSolver::NmpcSolver(NmpcConfig config, const MeshTopology& topo)
    : config_(std::move(config)), model_(model_topology(topo, config_)) {
  config_.validate();
}

NmpcSolution NmpcSolver::solve(const ClothState& start, const PairTargets& targets) {
  const MeshTopology& topo = model_;
  const int n = topo.particle_count();
  const int h = config_.horizon;
  const Eigen::Index size = static_cast<Eigen::Index>(h) * n * 3;
  const double umax = config_.u_max;

  auto evaluate = [&](const Eigen::VectorXd& f, bool grad) {
    try {
      return rollout_objective(start, f, targets, topo, config_, grad);
    } catch (const SingularityError& e) {
      throw NmpcError(std::string("NMPC rollout failed: ") + e.what(), f);
    } catch (const IntegrationError& e) {
      throw NmpcError(std::string("NMPC rollout failed: ") + e.what(), f);
    }
  };
  auto project = [&](const Eigen::VectorXd& f) -> Eigen::VectorXd {
    return f.cwiseMax(-umax).cwiseMin(umax);
  };

  const double j0 = evaluate(Eigen::VectorXd::Zero(size), false).objective;
  Eigen::VectorXd u = project(warm_.size() == size ? warm_ : Eigen::VectorXd::Zero(size));
  RolloutResult cur = evaluate(u, true);
  double alpha = -1.0;
  int it = 0;
  for (; it < config_.max_iterations; ++it) {
    const Eigen::VectorXd& g = cur.gradient;
    Eigen::VectorXd pg = g;
    for (Eigen::Index q = 0; q < size; ++q) {
      if ((u[q] >= umax && pg[q] < 0.0) || (u[q] <= -umax && pg[q] > 0.0)) pg[q] = 0.0;
    }
    if (pg.norm() < config_.gradient_tolerance) break;
    if (alpha <= 0.0) alpha = config_.initial_step / pg.cwiseAbs().maxCoeff();

    // Armijo backtracking along the projection arc.
    Eigen::VectorXd trial;
    RolloutResult next;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      trial = project(u - alpha * g);
      next = evaluate(trial, true);
      if (next.objective <= cur.objective - 1e-4 * g.dot(u - trial)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;

    // Barzilai-Borwein step for the next iteration.
    const Eigen::VectorXd s = trial - u;
    const Eigen::VectorXd y = next.gradient - g;
    const double sy = s.dot(y);
    alpha = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 2.0 * alpha;
    u = trial;
    cur = std::move(next);
  }

  Eigen::VectorXd best = u;
  if (!(cur.objective <= j0)) best = Eigen::VectorXd::Zero(size);

  NmpcSolution sol;
  const RolloutResult fin = evaluate(best, false);
  sol.forces = best;
  sol.objective = fin.objective;
  sol.zero_objective = j0;
  sol.iterations = it;
  sol.horizon = h;
  sol.particles = n;
  for (int k = 1; k <= h; ++k) sol.predicted.push_back(fin.states[k].positions);

  warm_ = Eigen::VectorXd::Zero(size);
  if (h > 1) warm_.head(size - n * 3) = best.tail(size - n * 3);
  return sol;
}

NmpcSolution solve(const ClothState& start, const PairTargets& targets, const MeshTopology& topo,
                   const NmpcConfig& config) {
  NmpcSolver solver(config, topo);
  return solver.solve(start, targets);
}

std::vector<int> candidate_particles(const ClothState& current, const StateVector& sv,
                                     const MeshTopology& topo) {
  const int n = current.size();
  const int k = endpoint_count(sv.task);
  const int nearest = std::min(10, n);
  std::set<int> pool;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int e = 0; e < k; ++e) {
    const Vec3 p = sv.endpoint(e);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return (current.positions[a] - p).squaredNorm() < (current.positions[b] - p).squaredNorm();
    });
    for (int q = 0; q < nearest; ++q) {
      pool.insert(order[q]);
      for (int nb : topo.neighbors(order[q])) pool.insert(nb);
    }
  }
  return {pool.begin(), pool.end()};
}

std::optional<Action> map_to_action(const NmpcSolution& solution, const ClothState& current,
                                    const StateVector& sv, const MeshTopology& topo,
                                    const Workspace& workspace) {
  int i_max = -1;
  double f_max = 0.0;
  for (int i : candidate_particles(current, sv, topo)) {
    const double f = solution.force(0, i).norm();
    if (f > f_max) {
      f_max = f;
      i_max = i;
    }
  }
  if (i_max < 0) return std::nullopt;

  const Vec3 xi = current.positions[i_max];
  const int k = endpoint_count(sv.task);
  int grasp = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int e = 0; e < k; ++e) {
    const double d = (xi - sv.endpoint(e)).norm();
    if (d < best) {
      best = d;
      grasp = e;
    }
  }
  const double bound = topo.edge_length / 2.0;
  Action a;
  a.grasp = grasp;
  a.offset = (xi - sv.endpoint(grasp)).cwiseMax(-bound).cwiseMin(bound);
  a.place = workspace.clamp(solution.predicted.front()[i_max]);
  return a;
}

double default_reward_threshold(TaskKind task) {
  switch (task) {
    case TaskKind::DiagonalFold: return 80.0;
    case TaskKind::AxisFold: return 75.0;
    case TaskKind::Flatten: return 70.0;
  }
  return 0.0;
}

DemoConfig DemoConfig::defaults(TaskKind task) {
  DemoConfig c;
  c.episode = default_episode(task);
  c.episode.max_operations = 15;
  c.nmpc.workspace = c.plant.workspace;
  return c;
}

DemoEpisodeResult run_demo_episode(const DemoConfig& config, std::uint64_t seed) {
  DemoEpisodeResult out;
  std::mt19937_64 rng(seed);
  ClothEnv env = init_episode(config.episode, rng, config.plant);
  const TaskKind task = config.episode.task;
  const double tz = config.episode.change_threshold;
  NmpcSolver solver(config.nmpc, env.topology());
  const PairTargets targets = target_pairs(task, env.topology());
  try {
    while (!env.done()) {
      const NmpcSolution sol = solver.solve(env.cloth(), targets);
      const std::optional<Action> act =
          map_to_action(sol, env.cloth(), env.observation(), env.topology(), env.plant().workspace);
      if (!act) break;
      Transition t;
      t.state = env.observation();
      t.action = *act;
      const double prev = env.metric();
      const StepResult step_res = env.apply_action(*act);
      const bool converged = std::abs(env.metric() - prev) <= config.convergence_tolerance;
      t.next_state = step_res.state;
      t.done = step_res.done || converged;
      t.reward = t.done ? reward(task, prev, env.metric(), true, tz) : step_res.reward;
      t.demo = true;
      out.transitions.push_back(std::move(t));
      if (out.transitions.back().done) break;
    }
  } catch (const NmpcError&) {
    out.failed = true;
  }
  if (out.transitions.empty()) {
    out.failed = true;
    return out;
  }
  Transition& last = out.transitions.back();
  if (!last.done) {
    // Stopped on a zero-force plan: close the episode with its terminal reward.
    last.done = true;
    last.reward = reward(task, task_metric(last.state, env.topology().edge_length), env.metric(),
                         true, tz);
  }
  out.final_reward = last.reward;
  out.final_metric = env.metric();
  return out;
}

DemoCollection collect_demos(TaskKind task, int episode_count, double reward_threshold,
                             int keep_top, const DemoConfig& config, std::mt19937_64& rng) {
  if (config.episode.task != task) throw PreconditionError("DemoConfig task does not match");
  DemoCollection out;
  out.dataset.task = task;
  std::vector<int> pool;
  for (int e = 0; e < episode_count; ++e) {
    out.episodes.push_back(run_demo_episode(config, rng()));
    const DemoEpisodeResult& r = out.episodes.back();
    if (!r.failed && r.final_reward >= reward_threshold) pool.push_back(e);
  }
  std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
    return out.episodes[a].final_reward > out.episodes[b].final_reward;
  });
  const int kept = std::min<int>(std::max(keep_top, 0), static_cast<int>(pool.size()));
  for (int q = 0; q < kept; ++q) out.dataset.episodes.push_back(out.episodes[pool[q]].transitions);
  return out;
}

}  // namespace clothlab
