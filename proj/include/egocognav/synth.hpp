#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "egocognav/episode.hpp"
#include "egocognav/errors.hpp"
#include "egocognav/geometry.hpp"
#include "egocognav/rng.hpp"
#include "json.hpp"

namespace egocognav {

struct WorldNode {
  double x = 0.0;
  double y = 0.0;
  bool occluded = false;
  bool crowded = false;
  bool signage = false;
  bool stairs = false;
  double ambiguity = 0.0;  // 1 = no directional preference at this node
};

// Corridor/junction graph plus generator constants. Route endpoints come
// either from `routes` (cycled by seed) or from start/goal.
struct WorldConfig {
  std::vector<WorldNode> nodes;
  std::vector<std::array<int, 2>> edges;
  std::vector<std::array<int, 2>> routes;
  int start = 0;
  int goal = -1;
  double speed = 1.3;  // m/s
  size_t grid = 4;
  size_t channels = 32;
  double kappa = 4.0;  // directional preference concentration
  double theta_scan = 0.4;
  double theta_hes = 0.6;
  int hes_steps = 5;
  double wrong_gate = 0.45;
  double wrong_rate = 0.9;
  double near_dist = 4.0;  // full uncertainty inside this radius
  double far_dist = 8.0;   // zero beyond this radius
  double feature_noise = 0.05;

  void check() const {
    if (nodes.empty()) throw BadConfig("world has no nodes");
    const int n = static_cast<int>(nodes.size());
    auto in_range = [n](int i) { return i >= 0 && i < n; };
    for (const auto& e : edges) {
      if (!in_range(e[0]) || !in_range(e[1]) || e[0] == e[1]) {
        throw BadConfig("bad edge " + std::to_string(e[0]) + "-" +
                        std::to_string(e[1]));
      }
    }
    for (const auto& r : routes) {
      if (!in_range(r[0]) || !in_range(r[1]) || r[0] == r[1]) {
        throw BadConfig("bad route endpoints");
      }
    }
    if (routes.empty() && (!in_range(start) || !in_range(goal))) {
      throw BadConfig("start/goal out of range");
    }
    if (speed <= 0.0) throw BadConfig("speed must be positive");
    if (grid == 0 || channels == 0) throw BadConfig("grid/channels must be >= 1");
    if (kappa < 0.0) throw BadConfig("kappa must be >= 0");
    if (hes_steps < 0) throw BadConfig("hes_steps must be >= 0");
    if (!(near_dist > 0.0) || !(far_dist > near_dist)) {
      throw BadConfig("need 0 < near_dist < far_dist");
    }
    for (const auto& nd : nodes) {
      if (nd.ambiguity < 0.0 || nd.ambiguity > 1.0) {
        throw BadConfig("ambiguity outside [0,1]");
      }
    }
  }

  static WorldConfig from_json(const nlohmann::json& j) {
    WorldConfig cfg;
    try {
      for (const auto& jn : j.at("nodes")) {
        WorldNode nd;
        nd.x = jn.at("x").get<double>();
        nd.y = jn.at("y").get<double>();
        nd.occluded = jn.value("occluded", false);
        nd.crowded = jn.value("crowded", false);
        nd.signage = jn.value("signage", false);
        nd.stairs = jn.value("stairs", false);
        nd.ambiguity = jn.value("ambiguity", 0.0);
        cfg.nodes.push_back(nd);
      }
      for (const auto& je : j.at("edges")) {
        cfg.edges.push_back({je.at(0).get<int>(), je.at(1).get<int>()});
      }
      if (j.contains("routes")) {
        for (const auto& jr : j.at("routes")) {
          cfg.routes.push_back({jr.at(0).get<int>(), jr.at(1).get<int>()});
        }
      }
      cfg.start = j.value("start", 0);
      cfg.goal = j.value("goal", static_cast<int>(cfg.nodes.size()) - 1);
      cfg.speed = j.value("speed", cfg.speed);
      cfg.grid = j.value("grid", cfg.grid);
      cfg.channels = j.value("channels", cfg.channels);
      cfg.kappa = j.value("kappa", cfg.kappa);
      cfg.theta_scan = j.value("theta_scan", cfg.theta_scan);
      cfg.theta_hes = j.value("theta_hes", cfg.theta_hes);
      cfg.hes_steps = j.value("hes_steps", cfg.hes_steps);
      cfg.wrong_gate = j.value("wrong_gate", cfg.wrong_gate);
      cfg.wrong_rate = j.value("wrong_rate", cfg.wrong_rate);
      cfg.near_dist = j.value("near_dist", cfg.near_dist);
      cfg.far_dist = j.value("far_dist", cfg.far_dist);
      cfg.feature_noise = j.value("feature_noise", cfg.feature_noise);
    } catch (const nlohmann::json::exception& e) {
      throw BadConfig(std::string("world config: ") + e.what());
    }
    cfg.check();
    return cfg;
  }

  static WorldConfig from_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw BadConfig(path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

namespace synth_detail {

constexpr double kDt = 0.1;
constexpr int kDescriptorDim = 8;

inline std::vector<std::vector<int>> adjacency(const WorldConfig& cfg) {
  std::vector<std::vector<int>> adj(cfg.nodes.size());
  for (const auto& e : cfg.edges) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
  return adj;
}

inline size_t max_degree(const std::vector<std::vector<int>>& adj) {
  size_t k = 0;
  for (const auto& nbrs : adj) k = std::max(k, nbrs.size());
  return k;
}

inline double node_dist(const WorldConfig& cfg, int a, int b) {
  return std::hypot(cfg.nodes[b].x - cfg.nodes[a].x,
                    cfg.nodes[b].y - cfg.nodes[a].y);
}

inline std::vector<int> shortest_route(const WorldConfig& cfg,
                                       const std::vector<std::vector<int>>& adj,
                                       int start, int goal) {
  const size_t n = cfg.nodes.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[start] = 0.0;
  heap.emplace(0.0, start);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    if (u == goal) break;
    for (int w : adj[u]) {
      const double nd = d + node_dist(cfg, u, w);
      if (nd < dist[w]) {
        dist[w] = nd;
        prev[w] = u;
        heap.emplace(nd, w);
      }
    }
  }
  if (!std::isfinite(dist[goal])) {
    throw BadConfig("no path from node " + std::to_string(start) + " to " +
                    std::to_string(goal));
  }
  std::vector<int> route;
  for (int u = goal; u != -1; u = prev[u]) route.push_back(u);
  std::reverse(route.begin(), route.end());
  return route;
}

// Normalized entropy of the route-choice distribution at junction b, entered
// from `from` with correct continuation `cont`. Choices are all incident
// edges; preference concentrates on directions aligned with the correct one
// and washes out with node ambiguity, occlusion and crowding.
inline double junction_uncertainty(const WorldConfig& cfg,
                                   const std::vector<std::vector<int>>& adj,
                                   size_t k_max, int b, int cont) {
  if (adj[b].size() < 3 || cont < 0) return 0.0;
  const WorldNode& nb = cfg.nodes[b];
  const double cx = cfg.nodes[cont].x - nb.x;
  const double cy = cfg.nodes[cont].y - nb.y;
  const double cn = std::hypot(cx, cy);
  double keff = cfg.kappa * (1.0 - nb.ambiguity);
  if (nb.occluded) keff *= 0.5;
  if (nb.crowded) keff *= 0.75;
  std::vector<double> score;
  score.reserve(adj[b].size());
  double mx = -std::numeric_limits<double>::infinity();
  for (int w : adj[b]) {
    const double wx = cfg.nodes[w].x - nb.x;
    const double wy = cfg.nodes[w].y - nb.y;
    const double wn = std::hypot(wx, wy);
    const double cosang = (cx * wx + cy * wy) / (cn * wn);
    score.push_back(keff * cosang);
    mx = std::max(mx, score.back());
  }
  double z = 0.0;
  for (double& s : score) {
    s = std::exp(s - mx);
    z += s;
  }
  double entropy = 0.0;
  for (double s : score) {
    const double p = s / z;
    entropy -= p * std::log(p);
  }
  return entropy / std::log(static_cast<double>(k_max));
}

// Shared projection from scene descriptors into the feature grid; fixed seed
// so every episode embeds descriptors the same way and a linear probe on
// pooled channels can recover them.
inline std::vector<double> feature_basis(size_t grid, size_t channels) {
  Rng rng(0x45434e46ULL);
  std::vector<double> basis(grid * grid * channels * kDescriptorDim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kDescriptorDim));
  for (double& v : basis) v = rng.normal() * scale;
  return basis;
}

}  // namespace synth_detail

// Simulates one walk through the world graph. Deterministic per (config,
// seed): same inputs give a bit-identical episode.
inline Episode synth_generate(const WorldConfig& cfg, uint64_t seed) {
  cfg.check();
  const auto adj = synth_detail::adjacency(cfg);
  const size_t k_max = synth_detail::max_degree(adj);

  int start = cfg.start, goal = cfg.goal;
  if (!cfg.routes.empty()) {
    const auto& r = cfg.routes[seed % cfg.routes.size()];
    start = r[0];
    goal = r[1];
  }
  const std::vector<int> route =
      synth_detail::shortest_route(cfg, adj, start, goal);

  Rng root(seed);
  Rng walk_rng = root.fork(1);
  Rng feat_rng = root.fork(2);

  struct Step {
    double x, y, psi;
    double head_off;
    double U;
    uint8_t beh;
    std::array<double, synth_detail::kDescriptorDim> desc;
  };
  std::vector<Step> steps;

  enum class HeadMode { neutral, scan, look_back };
  double head_off = 0.0;
  double scan_phase = 0.0;
  double lb_phase = 0.0;
  double prev_psi = 0.0;
  bool first_step = true;

  const double gx = cfg.nodes[goal].x, gy = cfg.nodes[goal].y;

  // Appends one 10 Hz step at world pose (x, y, psi).
  auto emit = [&](double x, double y, double psi, double u_t, uint8_t beh,
                  HeadMode mode, int jct_node, double prox_w) {
    switch (mode) {
      case HeadMode::neutral:
        head_off = 0.85 * head_off + 0.05 * walk_rng.normal();
        break;
      case HeadMode::scan:
        scan_phase += 2.0 * M_PI * 1.1 * synth_detail::kDt;
        head_off = 0.7 * std::sin(scan_phase);
        break;
      case HeadMode::look_back:
        lb_phase += 2.0 * M_PI * 0.7 * synth_detail::kDt;
        head_off = 2.4 * std::sin(lb_phase);
        break;
    }
    Step s;
    s.x = x;
    s.y = y;
    s.psi = psi;
    s.head_off = head_off;
    s.U = u_t;
    s.beh = beh;
    const double dpsi = first_step ? 0.0 : std::remainder(psi - prev_psi, 2.0 * M_PI);
    first_step = false;
    prev_psi = psi;
    const double goal_dist = std::hypot(gx - x, gy - y);
    const double deg_next =
        jct_node >= 0 ? static_cast<double>(adj[jct_node].size()) / 4.0 : 0.0;
    const bool occ_next = jct_node >= 0 && cfg.nodes[jct_node].occluded;
    bool crowd_near = false;
    for (size_t i = 0; i < cfg.nodes.size(); ++i) {
      if (cfg.nodes[i].crowded &&
          std::hypot(cfg.nodes[i].x - x, cfg.nodes[i].y - y) < cfg.near_dist) {
        crowd_near = true;
        break;
      }
    }
    s.desc = {1.0,
              deg_next,
              occ_next ? 1.0 : 0.0,
              crowd_near ? 1.0 : 0.0,
              std::exp(-goal_dist / 25.0),
              prox_w,
              u_t,
              dpsi};
    steps.push_back(s);
  };

  auto ramp = [&](double d) {
    if (d <= cfg.near_dist) return 1.0;
    if (d >= cfg.far_dist) return 0.0;
    return (cfg.far_dist - d) / (cfg.far_dist - cfg.near_dist);
  };

  double px = cfg.nodes[route[0]].x, py = cfg.nodes[route[0]].y;

  for (size_t k = 0; k + 1 < route.size(); ++k) {
    const int a = route[k];
    const int b = route[k + 1];
    const int cont = k + 2 < route.size() ? route[k + 2] : -1;
    const double bx = cfg.nodes[b].x, by = cfg.nodes[b].y;
    const double seg = std::hypot(bx - px, by - py);
    const double dir = std::atan2(by - py, bx - px);
    const double ux = std::cos(dir), uy = std::sin(dir);
    const bool approaching_jct = adj[b].size() >= 3 && cont >= 0;
    const double u_b = synth_detail::junction_uncertainty(cfg, adj, k_max, b, cont);

    if (k == 0) {
      const double w0 = approaching_jct ? ramp(seg) : 0.0;
      const double u0 = approaching_jct ? u_b * w0 : 0.0;
      uint8_t beh0 = 0;
      HeadMode m0 = HeadMode::neutral;
      if (approaching_jct && w0 > 0.0 && u0 > cfg.theta_scan) {
        beh0 |= behavior_label::kScan;
        m0 = HeadMode::scan;
      }
      emit(px, py, dir, u0, beh0, m0, approaching_jct ? b : -1, w0);
    }

    double remaining = seg;
    while (remaining > 1e-9) {
      double step_len = cfg.speed * synth_detail::kDt *
                        (1.0 + 0.06 * walk_rng.normal());
      step_len = std::max(step_len, 0.3 * cfg.speed * synth_detail::kDt);
      if (step_len >= remaining - 1e-9) {
        px = bx;
        py = by;
        remaining = 0.0;
      } else {
        px += step_len * ux;
        py += step_len * uy;
        remaining -= step_len;
      }
      const double w = approaching_jct ? ramp(remaining) : 0.0;
      const double u_t = approaching_jct ? u_b * w : 0.0;
      uint8_t beh = 0;
      HeadMode mode = HeadMode::neutral;
      if (approaching_jct && w > 0.0 && u_t > cfg.theta_scan) {
        beh |= behavior_label::kScan;
        mode = HeadMode::scan;
      }
      emit(px, py, dir, u_t, beh, mode, approaching_jct ? b : -1, w);
    }

    if (!approaching_jct) continue;

    if (u_b > cfg.theta_hes) {
      for (int i = 0; i < cfg.hes_steps; ++i) {
        uint8_t beh = behavior_label::kHes;
        if (u_b > cfg.theta_scan) beh |= behavior_label::kScan;
        emit(px, py, dir, u_b, beh, HeadMode::scan, b, 1.0);
      }
    }

    if (u_b >= cfg.wrong_gate &&
        walk_rng.uniform() < cfg.wrong_rate * u_b) {
      std::vector<int> wrong;
      for (int w : adj[b]) {
        if (w != a && w != cont) wrong.push_back(w);
      }
      if (!wrong.empty()) {
        const int wnode = wrong[walk_rng.uniform_int(wrong.size())];
        const double wdir = std::atan2(cfg.nodes[wnode].y - by,
                                       cfg.nodes[wnode].x - bx);
        const double wux = std::cos(wdir), wuy = std::sin(wdir);
        const double excursion =
            std::min(0.45 * synth_detail::node_dist(cfg, b, wnode), 4.0);
        double traveled = 0.0;
        while (traveled < excursion) {
          double step_len = cfg.speed * synth_detail::kDt *
                            (1.0 + 0.06 * walk_rng.normal());
          step_len = std::max(step_len, 0.3 * cfg.speed * synth_detail::kDt);
          traveled = std::min(traveled + step_len, excursion);
          px = bx + traveled * wux;
          py = by + traveled * wuy;
          emit(px, py, wdir, u_b, behavior_label::kWrong, HeadMode::neutral, b,
               1.0);
        }
        const double bdir = std::atan2(by - py, bx - px);
        lb_phase = 0.0;
        while (traveled > 1e-9) {
          double step_len = cfg.speed * synth_detail::kDt *
                            (1.0 + 0.06 * walk_rng.normal());
          step_len = std::max(step_len, 0.3 * cfg.speed * synth_detail::kDt);
          traveled = std::max(traveled - step_len, 0.0);
          px = bx + traveled * wux;
          py = by + traveled * wuy;
          emit(px, py, bdir, u_b,
               behavior_label::kBack | behavior_label::kLb,
               HeadMode::look_back, b, 1.0);
        }
        px = bx;
        py = by;
      }
    }
  }

  // Assemble the episode from the recorded walk.
  Episode ep;
  ep.id = "synth-" + std::to_string(seed);
  ep.grid = cfg.grid;
  ep.channels = cfg.channels;
  const size_t n = steps.size();

  std::vector<Pose2D> world(n);
  for (size_t i = 0; i < n; ++i) world[i] = Pose2D{steps[i].x, steps[i].y, steps[i].psi};
  ep.motion.push_back(BodyDelta{});
  if (n >= 2) {
    const auto deltas = world_to_body_deltas(world);
    ep.motion.insert(ep.motion.end(), deltas.begin(), deltas.end());
  }

  // Episode poses integrate from the identity, i.e. the first body frame is
  // the episode's world frame; express the goal there too.
  double goal_local_x = 0.0, goal_local_y = 0.0;
  if (n > 0) {
    const double c0 = std::cos(world[0].psi), s0 = std::sin(world[0].psi);
    const double rx = gx - world[0].x, ry = gy - world[0].y;
    goal_local_x = c0 * rx + s0 * ry;
    goal_local_y = -s0 * rx + c0 * ry;
  }

  const auto basis = synth_detail::feature_basis(cfg.grid, cfg.channels);
  const size_t cells = cfg.grid * cfg.grid;
  ep.features.resize(n * cells * cfg.channels);

  for (size_t i = 0; i < n; ++i) {
    const Step& s = steps[i];
    ep.timeline.push_back(static_cast<double>(i) * synth_detail::kDt);
    ep.head.push_back(matrix_to_rot6d(RotMatrix::yaw(s.psi + s.head_off)));

    uint8_t env = 0;
    bool confirm = false;
    for (size_t ni = 0; ni < cfg.nodes.size(); ++ni) {
      const double d = std::hypot(cfg.nodes[ni].x - s.x, cfg.nodes[ni].y - s.y);
      if (d < cfg.near_dist) {
        if (adj[ni].size() >= 3) env |= env_label::kJct;
        if (adj[ni].size() >= 4) env |= env_label::kMult;
        if (cfg.nodes[ni].occluded) env |= env_label::kOcc;
        if (cfg.nodes[ni].crowded) env |= env_label::kCrowd;
        if (cfg.nodes[ni].stairs) env |= env_label::kSt;
      }
      if (cfg.nodes[ni].signage && d < 3.0) confirm = true;
    }
    uint8_t beh = s.beh;
    if (confirm) beh |= behavior_label::kConfirm;
    ep.env_labels.push_back(env);
    ep.behavior_labels.push_back(beh);

    const double gaze_u =
        std::clamp(0.5 + 0.3 * std::sin(s.head_off) + 0.05 * walk_rng.normal(),
                   0.0, 1.0);
    const double gaze_v = std::clamp(
        0.55 + (confirm ? 0.25 : 0.0) + 0.04 * walk_rng.normal(), 0.0, 1.0);
    ep.gaze.push_back(GazePoint{gaze_u, gaze_v});
    ep.goal_xy.push_back({goal_local_x, goal_local_y});
    ep.uncertainty.push_back(s.U);

    float* fstep = ep.features.data() + i * cells * cfg.channels;
    for (size_t j = 0; j < cells * cfg.channels; ++j) {
      double v = 0.0;
      const double* brow = basis.data() + j * synth_detail::kDescriptorDim;
      for (int d = 0; d < synth_detail::kDescriptorDim; ++d) {
        v += brow[d] * s.desc[d];
      }
      fstep[j] = static_cast<float>(v + cfg.feature_noise * feat_rng.normal());
    }
  }

  ep.compute_poses();
  ep.validate();

  // Wrong turns and backtracks must read as more uncertain than the
  // episode's neutral steps; guaranteed by construction, checked anyway.
  double neutral_sum = 0.0;
  size_t neutral_n = 0;
  double wb_min = std::numeric_limits<double>::infinity();
  bool has_wb = false;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t beh = ep.behavior_labels[i];
    if (beh & (behavior_label::kWrong | behavior_label::kBack)) {
      wb_min = std::min(wb_min, ep.uncertainty[i]);
      has_wb = true;
    } else if (beh == 0) {
      neutral_sum += ep.uncertainty[i];
      ++neutral_n;
    }
  }
  if (has_wb && neutral_n > 0 && !(wb_min > neutral_sum / neutral_n)) {
    throw Error("generator invariant violated: wrong/back U not above neutral mean");
  }
  return ep;
}

}  // namespace egocognav
