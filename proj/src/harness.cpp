#include "clothlab/harness.hpp"

#include "clothlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace clothlab {

// ---------------------------------------------------------------- metrics

namespace {

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

RewardMetrics reward_metrics(const RawRewards& raw) {
  if (raw.empty()) throw PreconditionError("reward_metrics: no seeds");
  const std::size_t T = raw.front().size();
  if (T == 0) throw PreconditionError("reward_metrics: no test epochs");
  RewardMetrics m;
  for (const auto& seed : raw) {
    if (seed.size() != T) throw PreconditionError("reward_metrics: seeds have different test counts");
    std::vector<double> means;
    for (const auto& epoch : seed) {
      if (epoch.empty()) throw PreconditionError("reward_metrics: empty test epoch");
      means.push_back(mean(epoch));
    }
    m.seed_means.push_back(std::move(means));
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> col;
    for (const auto& s : m.seed_means) col.push_back(s[t]);
    m.r_avg_t.push_back(mean(col));
    m.sigma_t.push_back(population_std(col));
  }
  m.r_avg = mean(m.r_avg_t);
  m.sigma_avg = mean(m.sigma_t);
  return m;
}

std::vector<int> rank_descending(const std::vector<double>& values) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });
  std::vector<int> rank(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r) + 1;
  return rank;
}

Rankings rankings(const std::vector<RewardMetrics>& algorithms) {
  std::vector<double> r, s;
  for (const auto& a : algorithms) {
    r.push_back(a.r_avg);
    s.push_back(a.sigma_avg);
  }
  return {rank_descending(r), rank_descending(s)};
}

std::vector<double> smooth3(const std::vector<double>& values) {
  std::vector<double> out(values.size());
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(n - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += values[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

namespace {

void require_same_length(const std::vector<double>& a, const std::vector<double>& b,
                         const char* what) {
  if (a.empty() || a.size() != b.size()) {
    throw PreconditionError(std::string(what) + ": need equal-length non-empty sequences");
  }
}

}  // namespace

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  require_same_length(a, b, "cosine_similarity");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw PreconditionError("CSS undefined: zero sequence");
  return ab / std::sqrt(aa * bb);
}

double dtw_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw PreconditionError("dtw_distance: empty sequence");
  const std::size_t n = a.size(), m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require_same_length(a, b, "pearson");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw PreconditionError("PCC undefined: zero-variance sequence");
  return sab / std::sqrt(saa * sbb);
}

Similarity similarity_metrics(const std::vector<double>& a, const std::vector<double>& b) {
  return {cosine_similarity(a, b), dtw_distance(a, b), pearson(a, b)};
}

CurveSimilarity compare_curves(const RewardMetrics& a, const RewardMetrics& b) {
  return {similarity_metrics(a.r_avg_t, b.r_avg_t), similarity_metrics(a.sigma_t, b.sigma_t)};
}

// ---------------------------------------------------------------- text io helpers

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void expect_magic(std::istream& in, const char* magic) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != magic) {
    throw FormatError(std::string("bad header: expected magic line '") + magic + "'");
  }
}

// Reads `key = value` lines up to and including the one with `last_key`.
KeyValues read_header(std::istream& in, const std::string& last_key) {
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed header line '" + trim(line) + "'");
    const std::string key = trim(line.substr(0, eq));
    kv[key] = trim(line.substr(eq + 1));
    if (key == last_key) return kv;
  }
  throw FormatError("truncated header (missing '" + last_key + "')");
}

const std::string& need(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("missing header entry '" + key + "'");
  return it->second;
}

long to_long(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("'" + what + "' is not an integer: '" + s + "'");
  }
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("'" + what + "' is not a number: '" + s + "'");
  }
}

std::vector<double> read_numbers(const std::string& line) {
  std::istringstream ss(line);
  std::vector<double> v;
  std::string tok;
  while (ss >> tok) v.push_back(to_double(tok, "record field"));
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  return in;
}

}  // namespace

// ---------------------------------------------------------------- datasets

void save_dataset(std::ostream& out, const DemoDataset& data) {
  const int dims = state_dim(data.task);
  out << kDatasetMagic << "\n";
  out << "task = " << to_string(data.task) << "\n";
  out << "k = " << endpoint_count(data.task) << "\n";
  out << "dims = " << dims << "\n";
  out << "episodes = " << data.episodes.size() << "\n";
  out << "count = " << data.transition_count() << "\n";
  const auto old = out.precision(9);
  for (const Episode& ep : data.episodes) {
    for (const Transition& t : ep) {
      if (t.state.values.size() != dims || t.next_state.values.size() != dims) {
        throw PreconditionError("save_dataset: state dimension does not match the task");
      }
      for (double v : t.state.values) out << v << ' ';
      out << t.action.grasp;
      for (int d = 0; d < 3; ++d) out << ' ' << t.action.offset[d];
      for (int d = 0; d < 3; ++d) out << ' ' << t.action.place[d];
      out << ' ' << t.reward;
      for (double v : t.next_state.values) out << ' ' << v;
      out << ' ' << (t.done ? 1 : 0) << "\n";
    }
  }
  out.precision(old);
}

DemoDataset load_dataset(std::istream& in) {
  expect_magic(in, kDatasetMagic);
  const KeyValues kv = read_header(in, "count");
  DemoDataset data;
  try {
    data.task = parse_task(need(kv, "task"));
  } catch (const PreconditionError& e) {
    throw FormatError(e.what());
  }
  const int dims = static_cast<int>(to_long(need(kv, "dims"), "dims"));
  const long count = to_long(need(kv, "count"), "count");
  if (dims != state_dim(data.task) || to_long(need(kv, "k"), "k") != endpoint_count(data.task)) {
    throw FormatError("header dims/k do not match task " + to_string(data.task));
  }
  const std::size_t fields = 2 * static_cast<std::size_t>(dims) + 9;
  Episode current;
  std::string line;
  long seen = 0;
  while (seen < count && std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<double> v = read_numbers(line);
    if (v.size() != fields) {
      throw FormatError("record " + std::to_string(seen + 1) + " has " + std::to_string(v.size()) +
                        " fields, expected " + std::to_string(fields));
    }
    Transition t;
    std::size_t o = 0;
    t.state.task = data.task;
    t.state.values = Eigen::Map<const Eigen::VectorXd>(v.data() + o, dims);
    o += dims;
    t.action.grasp = static_cast<int>(v[o++]);
    t.action.offset = Vec3(v[o], v[o + 1], v[o + 2]);
    o += 3;
    t.action.place = Vec3(v[o], v[o + 1], v[o + 2]);
    o += 3;
    t.reward = v[o++];
    t.next_state.task = data.task;
    t.next_state.values = Eigen::Map<const Eigen::VectorXd>(v.data() + o, dims);
    o += dims;
    t.done = v[o] != 0.0;
    t.demo = true;
    if (t.action.grasp < 0 || t.action.grasp >= endpoint_count(data.task)) {
      throw FormatError("record " + std::to_string(seen + 1) + " has grasp index out of range");
    }
    current.push_back(std::move(t));
    if (current.back().done) data.episodes.push_back(std::move(current)), current.clear();
    ++seen;
  }
  if (seen != count) throw FormatError("expected " + std::to_string(count) + " records, found " + std::to_string(seen));
  if (!current.empty()) data.episodes.push_back(std::move(current));
  return data;
}

void save_dataset(const fs::path& path, const DemoDataset& data) {
  std::ofstream out = open_out(path);
  save_dataset(out, data);
}

DemoDataset load_dataset(const fs::path& path) {
  std::ifstream in = open_in(path);
  return load_dataset(in);
}

// ---------------------------------------------------------------- models

namespace {

void write_net(std::ostream& out, const std::string& name, const DenseNet& net) {
  out << "net " << name << ' ' << (net.output_activation() == OutputActivation::Tanh ? "tanh" : "linear")
      << ' ' << (net.residual() ? 1 : 0) << ' ' << net.layer_count() << "\n";
  for (int l = 0; l < net.layer_count(); ++l) {
    const Eigen::MatrixXd& w = net.weights()[l];
    out << "W " << w.rows() << ' ' << w.cols();
    for (double v : w.reshaped()) out << ' ' << v;
    out << "\nb " << net.biases()[l].size();
    for (double v : net.biases()[l]) out << ' ' << v;
    out << "\n";
  }
}

std::istringstream next_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("truncated model file (reading " + what + ")");
  return std::istringstream(line);
}

Eigen::MatrixXd read_matrix(std::istream& in, const char* tag, const std::string& what) {
  std::istringstream ss = next_line(in, what);
  std::string t;
  long r = 0, c = 1;
  ss >> t;
  if (t != tag) throw FormatError("expected '" + std::string(tag) + "' line in " + what);
  if (t == "b") {
    ss >> r;
  } else {
    ss >> r >> c;
  }
  if (!ss || r < 0 || c < 0) throw FormatError("bad matrix shape in " + what);
  Eigen::MatrixXd m(r, c);
  for (double& v : m.reshaped()) {
    std::string tok;
    if (!(ss >> tok)) throw FormatError("short matrix in " + what);
    v = to_double(tok, what);
  }
  return m;
}

DenseNet read_net(std::istream& in, const std::string& expected) {
  std::istringstream head = next_line(in, expected);
  std::string tag, name, act;
  int residual = 0, layers = 0;
  head >> tag >> name >> act >> residual >> layers;
  if (!head || tag != "net" || name != expected || layers < 1) {
    throw FormatError("expected network '" + expected + "'");
  }
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  for (int l = 0; l < layers; ++l) {
    w.push_back(read_matrix(in, "W", expected));
    b.push_back(read_matrix(in, "b", expected).col(0));
  }
  try {
    return DenseNet(std::move(w), std::move(b),
                    act == "tanh" ? OutputActivation::Tanh : OutputActivation::Linear, residual != 0);
  } catch (const PreconditionError& e) {
    throw FormatError(e.what());
  }
}

}  // namespace

void save_model(std::ostream& out, const Agent& agent) {
  const AgentConfig& c = agent.config;
  out << kModelMagic << "\n";
  out << "task = " << to_string(c.task) << "\n";
  out << "k = " << agent.endpoints << "\n";
  out << "dims = " << agent.state_size() << "\n";
  out << "selector = " << to_string(c.selector) << "\n";
  out << "gabc = " << (c.gabc ? 1 : 0) << "\n";
  out << "cpl = " << (c.cpl ? 1 : 0) << "\n";
  out << "max_operations = " << c.max_operations << "\n";
  const auto old = out.precision(17);
  out << "half_offset = " << agent.scale.half_offset << "\n";
  const Workspace& ws = agent.scale.workspace;
  out << "workspace = " << ws.lo.x() << ' ' << ws.lo.y() << ' ' << ws.lo.z() << ' ' << ws.hi.x()
      << ' ' << ws.hi.y() << ' ' << ws.hi.z() << "\n";
  out << "htsk = " << (agent.htsk ? 1 : 0) << "\n";
  write_net(out, "actor", agent.actor);
  write_net(out, "critic", agent.critic);
  write_net(out, "target_actor", agent.target_actor);
  write_net(out, "target_critic1", agent.target_critic1);
  write_net(out, "target_critic2", agent.target_critic2);
  if (c.selector == SelectorKind::NeuralBC) write_net(out, "selector", agent.selector_net);
  if (agent.htsk) {
    const HtskModel& h = *agent.htsk;
    out << "rules " << h.rules() << "\n";
    for (const auto* m : {&h.centers, &h.log_widths, &h.consequents}) {
      out << "W " << m->rows() << ' ' << m->cols();
      for (double v : m->reshaped()) out << ' ' << v;
      out << "\n";
    }
  }
  out.precision(old);
}

Agent load_model(std::istream& in) {
  expect_magic(in, kModelMagic);
  const KeyValues kv = read_header(in, "htsk");
  Agent a;
  try {
    a.config.task = parse_task(need(kv, "task"));
    a.config.selector = parse_selector(need(kv, "selector"));
  } catch (const PreconditionError& e) {
    throw FormatError(e.what());
  }
  a.config.gabc = to_long(need(kv, "gabc"), "gabc") != 0;
  a.config.cpl = to_long(need(kv, "cpl"), "cpl") != 0;
  a.config.max_operations = static_cast<int>(to_long(need(kv, "max_operations"), "max_operations"));
  a.endpoints = static_cast<int>(to_long(need(kv, "k"), "k"));
  if (a.endpoints != endpoint_count(a.config.task) ||
      to_long(need(kv, "dims"), "dims") != state_dim(a.config.task)) {
    throw FormatError("header dims/k do not match task " + to_string(a.config.task));
  }
  a.scale.half_offset = to_double(need(kv, "half_offset"), "half_offset");
  const std::vector<double> ws = read_numbers(need(kv, "workspace"));
  if (ws.size() != 6) throw FormatError("workspace needs 6 numbers");
  a.scale.workspace.lo = Vec3(ws[0], ws[1], ws[2]);
  a.scale.workspace.hi = Vec3(ws[3], ws[4], ws[5]);
  a.actor = read_net(in, "actor");
  a.critic = read_net(in, "critic");
  a.target_actor = read_net(in, "target_actor");
  a.target_critic1 = read_net(in, "target_critic1");
  a.target_critic2 = read_net(in, "target_critic2");
  if (a.config.selector == SelectorKind::NeuralBC) a.selector_net = read_net(in, "selector");
  a.config.hidden_layers = a.actor.layer_count() - 1;
  a.config.hidden_width = a.actor.layer_count() > 1 ? a.actor.weights()[0].rows() : 1;
  a.config.residual = a.actor.residual();
  if (to_long(need(kv, "htsk"), "htsk") != 0) {
    std::istringstream head = next_line(in, "htsk");
    std::string tag;
    head >> tag;
    if (tag != "rules") throw FormatError("expected HTSK block");
    HtskModel h;
    h.centers = read_matrix(in, "W", "htsk centers");
    h.log_widths = read_matrix(in, "W", "htsk widths");
    h.consequents = read_matrix(in, "W", "htsk consequents");
    try {
      h.validate();
    } catch (const PreconditionError& e) {
      throw FormatError(e.what());
    }
    a.config.htsk_rules = h.rules();
    a.htsk = std::move(h);
  }
  const int S = state_dim(a.config.task);
  if (a.actor.input_size() != S + (a.config.cpl ? a.endpoints : 0) ||
      a.critic.input_size() != S + a.endpoints + 6 || a.actor.output_size() != 6) {
    throw FormatError("network shapes do not match the header");
  }
  return a;
}

void save_model(const fs::path& path, const Agent& agent) {
  std::ofstream out = open_out(path);
  save_model(out, agent);
}

Agent load_model(const fs::path& path) {
  std::ifstream in = open_in(path);
  return load_model(in);
}

// ---------------------------------------------------------------- config

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("line " + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("line " + std::to_string(n) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in = open_in(path);
  return parse_key_values(in);
}

ExperimentConfig ExperimentConfig::defaults(TaskKind task) {
  ExperimentConfig c;
  c.task = task;
  c.agent = AgentConfig::defaults(task);
  c.demo = DemoConfig::defaults(task);
  c.plant = c.demo.plant;
  return c;
}

namespace {

bool to_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw PreconditionError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

}  // namespace

void ExperimentConfig::apply(const KeyValues& kv) {
  auto num = [](const std::string& k, const std::string& v) {
    try {
      return to_double(v, k);
    } catch (const FormatError& e) {
      throw PreconditionError(std::string("config: ") + e.what());
    }
  };
  auto integer = [](const std::string& k, const std::string& v) {
    try {
      return static_cast<int>(to_long(v, k));
    } catch (const FormatError& e) {
      throw PreconditionError(std::string("config: ") + e.what());
    }
  };
  if (const auto it = kv.find("task"); it != kv.end()) {
    const TaskKind t = parse_task(it->second);
    if (t != task) {
      const PlantConfig keep = plant;
      *this = [&] {
        ExperimentConfig c = *this;
        c.task = t;
        c.agent = AgentConfig::defaults(t);
        c.demo = DemoConfig::defaults(t);
        return c;
      }();
      plant = keep;
    }
  }
  for (const auto& [k, v] : kv) {
    if (k == "task") continue;
    else if (k == "name") name = v;
    else if (k == "mode") {
      if (v == "simple") mode = Mode::Simple;
      else if (v == "challenging") mode = Mode::Challenging;
      else throw PreconditionError("config key 'mode': expected simple or challenging");
    } else if (k == "preset" || k == "presets") {
      presets.clear();
      std::string s = v;
      std::replace(s.begin(), s.end(), ',', ' ');
      std::istringstream ss(s);
      std::string tok;
      while (ss >> tok) presets.push_back(integer(k, tok));
    } else if (k == "seeds") seeds = integer(k, v);
    else if (k == "seed") seed = static_cast<std::uint64_t>(integer(k, v));
    else if (k == "demo_rounds") demo_rounds = integer(k, v);
    else if (k == "demo_attempts") demo_attempts = integer(k, v);
    else if (k == "demo_threshold") demo_threshold = num(k, v);
    else if (k == "demo_file") demo_file = v;
    // agent
    else if (k == "gamma") agent.gamma = num(k, v);
    else if (k == "nstep") agent.nstep = integer(k, v);
    else if (k == "lambda_1step") agent.lambda_1step = num(k, v);
    else if (k == "lambda_nstep") agent.lambda_nstep = num(k, v);
    else if (k == "lambda_bc") agent.lambda_bc = num(k, v);
    else if (k == "q_margin") agent.q_margin = num(k, v);
    else if (k == "sigma") agent.sigma = num(k, v);
    else if (k == "tau") agent.tau = num(k, v);
    else if (k == "batch") agent.batch = integer(k, v);
    else if (k == "pretrain_rounds") agent.pretrain_rounds = integer(k, v);
    else if (k == "epochs") agent.epochs = integer(k, v);
    else if (k == "rounds_per_epoch") agent.rounds_per_epoch = integer(k, v);
    else if (k == "updates_per_step") agent.updates_per_step = integer(k, v);
    else if (k == "htsk_retrain_threshold") agent.htsk_retrain_threshold = integer(k, v);
    else if (k == "test_rounds") agent.test_rounds = integer(k, v);
    else if (k == "pretrain_test_interval") agent.pretrain_test_interval = integer(k, v);
    else if (k == "actor_lr") agent.actor_lr = num(k, v);
    else if (k == "critic_lr") agent.critic_lr = num(k, v);
    else if (k == "selector_lr") agent.selector_lr = num(k, v);
    else if (k == "hidden_layers") agent.hidden_layers = integer(k, v);
    else if (k == "hidden_width") agent.hidden_width = integer(k, v);
    else if (k == "residual") agent.residual = to_bool(v, k);
    else if (k == "replay_capacity") agent.replay_capacity = static_cast<std::size_t>(integer(k, v));
    else if (k == "prioritized") agent.prioritized = to_bool(v, k);
    else if (k == "htsk_rules") agent.htsk_rules = integer(k, v);
    else if (k == "htsk_lr") agent.htsk.lr = num(k, v);
    else if (k == "htsk_batch") agent.htsk.batch = integer(k, v);
    else if (k == "htsk_weight_decay") agent.htsk.weight_decay = num(k, v);
    else if (k == "htsk_epochs") agent.htsk.epochs = integer(k, v);
    // nmpc
    else if (k == "nmpc_horizon") demo.nmpc.horizon = integer(k, v);
    else if (k == "nmpc_u_max") demo.nmpc.u_max = num(k, v);
    else if (k == "nmpc_max_iterations") demo.nmpc.max_iterations = integer(k, v);
    else if (k == "nmpc_tolerance") demo.nmpc.gradient_tolerance = num(k, v);
    else if (k == "nmpc_model_stiffness") demo.nmpc.model_stiffness = num(k, v);
    else if (k == "nmpc_model_damping") demo.nmpc.model_damping = num(k, v);
    else if (k == "nmpc_model_dt") demo.nmpc.model.dt = num(k, v);
    else if (k == "demo_max_operations") demo.episode.max_operations = integer(k, v);
    else if (k == "demo_convergence") demo.convergence_tolerance = num(k, v);
    // plant
    else if (k == "mesh_n") plant.mesh.n = integer(k, v);
    else if (k == "edge_length") plant.mesh.edge_length = num(k, v);
    else if (k == "stiffness") plant.mesh.stiffness = num(k, v);
    else if (k == "damping") plant.mesh.damping = num(k, v);
    else if (k == "total_mass") plant.mesh.total_mass = num(k, v);
    else if (k == "shear_stiffness") plant.mesh.shear_stiffness = num(k, v);
    else if (k == "dt") plant.sim.dt = num(k, v);
    else if (k == "gravity") plant.sim.gravity = num(k, v);
    else if (k == "friction") plant.sim.tangential_friction = num(k, v);
    else if (k == "settle_max_steps") plant.sim.settle_max_steps = integer(k, v);
    else if (k == "lift_height") plant.motion.lift_height = num(k, v);
    else if (k == "grasp_radius") plant.motion.grasp_radius = num(k, v);
    else if (k == "max_carry_speed") plant.motion.max_carry_speed = num(k, v);
    else if (k == "hold_steps") plant.motion.hold_steps = integer(k, v);
    else if (k == "change_threshold") demo.episode.change_threshold = num(k, v);
    else throw PreconditionError("unknown config key '" + k + "'");
  }
  demo.plant = plant;
  demo.nmpc.workspace = plant.workspace;
  demo.episode.task = task;
  agent.task = task;
}

int ExperimentConfig::max_operations() const {
  const int tm = default_max_operations(task);
  return mode == Mode::Simple ? tm : std::max(1, tm / 2);
}

int ExperimentConfig::attempts() const {
  return demo_attempts > 0 ? demo_attempts : std::max(30, 2 * demo_rounds);
}

double ExperimentConfig::threshold() const {
  return demo_threshold >= 0.0 ? demo_threshold : default_reward_threshold(task);
}

void ExperimentConfig::validate() const {
  if (presets.empty()) throw PreconditionError("ExperimentConfig: no presets");
  for (int p : presets) {
    if (p < 1 || p > 8) throw PreconditionError("ExperimentConfig: preset must be in 1..8");
  }
  if (seeds < 1) throw PreconditionError("ExperimentConfig: seeds must be >= 1");
  if (demo_rounds < 0) throw PreconditionError("ExperimentConfig: demo_rounds must be >= 0");
  if (name.empty() || name.find('/') != std::string::npos) {
    throw PreconditionError("ExperimentConfig: name must be a plain directory name");
  }
  if (!demo_file.empty() && !fs::exists(demo_file)) {
    throw PreconditionError("ExperimentConfig: demo file '" + demo_file + "' not found");
  }
  AgentConfig a = agent;
  a.max_operations = max_operations();
  a.validate();
  demo.nmpc.validate();
  demo.episode.validate();
  plant.sim.validate();
}

// ---------------------------------------------------------------- experiments

void write_seed_metrics(std::ostream& out, int preset, std::uint64_t seed, const TrainLog& log) {
  out << kMetricsMagic << "\n";
  out << "preset = " << preset << "\n";
  out << "seed = " << seed << "\n";
  out << "tests = " << log.tests.size() << "\n";
  const auto old = out.precision(17);
  for (std::size_t t = 0; t < log.tests.size(); ++t) {
    out << "test " << t << ' ' << log.tests[t].round << " :";
    for (double r : log.tests[t].rewards) out << ' ' << r;
    out << "\n";
  }
  out.precision(old);
}

std::vector<TestRecord> read_seed_metrics(std::istream& in) {
  expect_magic(in, kMetricsMagic);
  const KeyValues kv = read_header(in, "tests");
  const long n = to_long(need(kv, "tests"), "tests");
  std::vector<TestRecord> out;
  std::string line;
  while (static_cast<long>(out.size()) < n && std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag, colon;
    long idx = 0;
    TestRecord r;
    ss >> tag >> idx >> r.round >> colon;
    if (!ss || tag != "test" || colon != ":" || idx != static_cast<long>(out.size())) {
      throw FormatError("malformed test line " + std::to_string(out.size()));
    }
    std::string tok;
    while (ss >> tok) r.rewards.push_back(to_double(tok, "reward"));
    out.push_back(std::move(r));
  }
  if (static_cast<long>(out.size()) != n) throw FormatError("metrics file is truncated");
  return out;
}

void write_summary(std::ostream& out, const MetricsRecord& record) {
  const RewardMetrics& m = record.derived;
  const auto old = out.precision(17);
  out << "preset = " << record.preset << "\n";
  out << "seeds =";
  for (auto s : record.seeds) out << ' ' << s;
  out << "\nR_avg = " << m.r_avg << "\n";
  out << "sigma_avg = " << m.sigma_avg << "\n";
  out << "# epoch round R_avg_t sigma_t R_avg_it...\n";
  for (std::size_t t = 0; t < m.r_avg_t.size(); ++t) {
    out << t << ' ' << record.test_rounds[t] << ' ' << m.r_avg_t[t] << ' ' << m.sigma_t[t];
    for (const auto& s : m.seed_means) out << ' ' << s[t];
    out << "\n";
  }
  out.precision(old);
}

void write_curve_csv(std::ostream& out, const RewardMetrics& metrics) {
  const std::vector<double> r = smooth3(metrics.r_avg_t);
  const std::vector<double> s = smooth3(metrics.sigma_t);
  const auto old = out.precision(17);
  out << "epoch,R_avg_t,sigma_t\n";
  for (std::size_t t = 0; t < r.size(); ++t) out << t << ',' << r[t] << ',' << s[t] << "\n";
  out.precision(old);
}

MetricsRecord load_preset_metrics(const fs::path& preset_dir, int preset) {
  if (!fs::is_directory(preset_dir)) throw Error("no such directory '" + preset_dir.string() + "'");
  std::vector<std::uint64_t> seeds;
  for (const auto& e : fs::directory_iterator(preset_dir)) {
    if (!e.is_directory() || !fs::exists(e.path() / "metrics.txt")) continue;
    const std::string n = e.path().filename().string();
    if (n.empty() || !std::all_of(n.begin(), n.end(), ::isdigit)) continue;
    seeds.push_back(std::stoull(n));
  }
  if (seeds.empty()) throw Error("no seed metrics under '" + preset_dir.string() + "'");
  std::sort(seeds.begin(), seeds.end());
  MetricsRecord rec;
  rec.preset = preset;
  rec.seeds = seeds;
  for (auto s : seeds) {
    std::ifstream in = open_in(preset_dir / std::to_string(s) / "metrics.txt");
    const std::vector<TestRecord> tests = read_seed_metrics(in);
    std::vector<std::vector<double>> per;
    std::vector<int> rounds;
    for (const auto& t : tests) {
      per.push_back(t.rewards);
      rounds.push_back(t.round);
    }
    if (rec.raw.empty()) rec.test_rounds = rounds;
    rec.raw.push_back(std::move(per));
  }
  rec.derived = reward_metrics(rec.raw);
  return rec;
}

DemoDataset experiment_demos(const ExperimentConfig& config) {
  if (!config.demo_file.empty()) {
    DemoDataset d = load_dataset(fs::path(config.demo_file));
    if (d.task != config.task) {
      throw PreconditionError("demo file holds task " + to_string(d.task) + ", config wants " +
                              to_string(config.task));
    }
    if (static_cast<int>(d.episodes.size()) > config.demo_rounds) d.episodes.resize(config.demo_rounds);
    return d;
  }
  std::mt19937_64 rng(config.seed);
  return collect_demos(config.task, config.attempts(), config.threshold(), config.demo_rounds,
                       config.demo, rng)
      .dataset;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  const fs::path root = out_dir / config.name;
  fs::create_directories(root);
  {
    std::ofstream probe(root / "config.txt");
    if (!probe) throw Error("cannot write to '" + root.string() + "'");
    probe << "task = " << to_string(config.task) << "\n";
    probe << "mode = " << (config.mode == Mode::Simple ? "simple" : "challenging") << "\n";
    probe << "seeds = " << config.seeds << "\n";
    probe << "seed = " << config.seed << "\n";
    probe << "demo_rounds = " << config.demo_rounds << "\n";
  }
  ExperimentResult res;
  res.demos = experiment_demos(config);
  save_dataset(root / "demos.txt", res.demos);

  const PlantConfig& plant = config.plant;
  EpisodeConfig ec = default_episode(config.task);
  ec.max_operations = config.max_operations();
  ec.change_threshold = config.demo.episode.change_threshold;
  const EnvFactory factory = [ec, plant](std::mt19937_64& rng) { return init_episode(ec, rng, plant); };

  std::vector<RewardMetrics> all;
  for (int p : config.presets) {
    AgentConfig ac = config.agent;
    ac.apply(preset(p));
    ac.task = config.task;
    ac.max_operations = ec.max_operations;
    MetricsRecord rec;
    rec.preset = p;
    const fs::path pdir = root / std::to_string(p);
    for (int i = 0; i < config.seeds; ++i) {
      const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(i);
      const TrainResult tr = train_hgcr(factory, res.demos, ac, plant, seed);
      const fs::path sdir = pdir / std::to_string(seed);
      fs::create_directories(sdir);
      {
        std::ofstream out = open_out(sdir / "metrics.txt");
        write_seed_metrics(out, p, seed, tr.log);
      }
      save_model(sdir / "model.txt", tr.agent);
      rec.seeds.push_back(seed);
      std::vector<std::vector<double>> per;
      rec.test_rounds.clear();
      for (const auto& t : tr.log.tests) {
        per.push_back(t.rewards);
        rec.test_rounds.push_back(t.round);
      }
      rec.raw.push_back(std::move(per));
    }
    rec.derived = reward_metrics(rec.raw);
    {
      std::ofstream out = open_out(pdir / "summary.txt");
      write_summary(out, rec);
    }
    {
      std::ofstream out = open_out(pdir / "curve.csv");
      write_curve_csv(out, rec.derived);
    }
    all.push_back(rec.derived);
    res.records.push_back(std::move(rec));
  }
  res.ranks = rankings(all);
  std::ofstream out = open_out(root / "rankings.txt");
  const auto old = out.precision(17);
  out << "# preset R_avg sigma_avg rank_avg rank_sigma\n";
  for (std::size_t q = 0; q < res.records.size(); ++q) {
    out << res.records[q].preset << ' ' << all[q].r_avg << ' ' << all[q].sigma_avg << ' '
        << res.ranks.reward[q] << ' ' << res.ranks.sigma[q] << "\n";
  }
  out.precision(old);
  return res;
}

}  // namespace clothlab
