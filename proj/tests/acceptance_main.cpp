// Acceptance gate: one self-contained check per release criterion, each
// printing a single [PASS]/[FAIL] line. Exit code 0 only when all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "drivesim/geo_route.hpp"
#include "drivesim/spline.hpp"

using namespace drivesim;
using namespace drivesim::geo;

namespace {

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::string&)> run;
};

// ---------------------------------------------------------------- routing

struct BruteBest {
  bool found = false;
  double cost = 0;
  std::vector<NodeId> path;
};

void brute_dfs(const RoadGraph& g, const std::map<NodeId, std::vector<size_t>>& adj,
               const NodeId& cur, const NodeId& dest, std::vector<NodeId>& path,
               std::map<NodeId, bool>& used, double cost, BruteBest& best) {
  if (cur == dest) {
    bool better = false;
    if (!best.found) {
      better = true;
    } else if (cost < best.cost - 1e-9) {
      better = true;
    } else if (cost < best.cost + 1e-9) {
      if (path.size() < best.path.size()) better = true;
      else if (path.size() == best.path.size() && path < best.path) better = true;
    }
    if (better) best = {true, cost, path};
    return;
  }
  auto it = adj.find(cur);
  if (it == adj.end()) return;
  for (size_t ei : it->second) {
    const RoadEdge& e = g.edges[ei];
    if (used[e.to]) continue;
    used[e.to] = true;
    path.push_back(e.to);
    brute_dfs(g, adj, e.to, dest, path, used, cost + e.length_m, best);
    path.pop_back();
    used[e.to] = false;
  }
}

bool criterion_routing(std::string& detail) {
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng = Rng(977001).derive(trial);
    int n = 2 + static_cast<int>(rng.uniform_int(9));
    RoadGraph g;
    for (int i = 0; i < n; ++i) g.nodes[strf("n%d", i)] = GeoPoint{0.0, 0.0001 * (i + 1)};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j || rng.uniform() > 0.35) continue;
        double w = rng.uniform() < 0.5 ? static_cast<double>(1 + rng.uniform_int(5))
                                       : rng.uniform(0.5, 20.0);
        g.edges.push_back({strf("n%d", i), strf("n%d", j), w, 50.0, RoadClass::urban});
      }
    NodeId start = "n0", dest = strf("n%d", n - 1);
    auto adj = g.adjacency();
    BruteBest oracle;
    std::map<NodeId, bool> used;
    used[start] = true;
    std::vector<NodeId> path{start};
    brute_dfs(g, adj, start, dest, path, used, 0.0, oracle);

    if (!oracle.found) {
      try {
        plan_route(g, start, dest);
        detail = strf("trial %d: expected unreachable", trial);
        return false;
      } catch (const UnreachableError&) {
        continue;
      }
    }
    PlannedRoute r = plan_route(g, start, dest);
    double cost = 0;
    for (size_t i = 0; i + 1 < r.node_path.size(); ++i) {
      double best_edge = std::numeric_limits<double>::infinity();
      for (const auto& e : g.edges)
        if (e.from == r.node_path[i] && e.to == r.node_path[i + 1])
          best_edge = std::min(best_edge, e.length_m);
      cost += best_edge;
    }
    if (std::fabs(cost - oracle.cost) > 1e-9 * (1 + oracle.cost)) {
      detail = strf("trial %d: cost %.9f vs oracle %.9f", trial, cost, oracle.cost);
      return false;
    }
    if (r.node_path != oracle.path) {
      detail = strf("trial %d: tie-break path differs from oracle", trial);
      return false;
    }
    ++solved;
  }
  detail = strf("%d routable graphs matched the brute-force oracle", solved);
  return true;
}

// ------------------------------------------------------------- resampling

bool criterion_resample(std::string& detail) {
  // Straight segment: exact 1 m spacing.
  std::vector<Vec2> line;
  for (int i = 0; i <= 40; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute straight;
  straight.xy = line;
  straight.cumulative_s.resize(line.size());
  for (size_t i = 1; i < line.size(); ++i)
    straight.cumulative_s[i] = straight.cumulative_s[i - 1] + 10.0;
  RouteMatrix ms = resample_route(straight, 0.0);
  if (static_cast<int>(ms.points.size()) != RouteMatrix::kRows) {
    detail = "straight: row count != 300";
    return false;
  }
  for (int k = 1; k < 300; ++k) {
    double d = (ms.points[k] - ms.points[k - 1]).norm();
    if (std::fabs(d - 1.0) > 0.01) {
      detail = strf("straight: spacing %.6f at row %d", d, k);
      return false;
    }
  }

  // Circle of radius 100 m: spacing within 1%, curvature within 5%.
  std::vector<Vec2> arc;
  const double R = 100.0;
  for (int i = -170; i <= 170; ++i) {
    double a = deg2rad(static_cast<double>(i));
    arc.push_back({R * std::cos(a), R * std::sin(a)});
  }
  PlannedRoute circ;
  circ.xy = arc;
  circ.cumulative_s.resize(arc.size());
  for (size_t i = 1; i < arc.size(); ++i)
    circ.cumulative_s[i] = circ.cumulative_s[i - 1] + (arc[i] - arc[i - 1]).norm();
  RouteMatrix mc = resample_route(circ, 50.0);
  if (static_cast<int>(mc.points.size()) != RouteMatrix::kRows) {
    detail = "circle: row count != 300";
    return false;
  }
  double worst_spacing = 0.0;
  for (int k = 1; k < 300; ++k) {
    double d = (mc.points[k] - mc.points[k - 1]).norm();
    worst_spacing = std::max(worst_spacing, std::fabs(d - 1.0));
    if (std::fabs(d - 1.0) > 0.01) {
      detail = strf("circle: spacing %.6f at row %d", d, k);
      return false;
    }
  }
  SmoothedPath path(circ.xy);
  double worst_curv = 0.0;
  for (int k = 10; k < 290; ++k) {
    double kappa = std::fabs(path.curvature(50.0 + k));
    worst_curv = std::max(worst_curv, std::fabs(kappa - 0.01) / 0.01);
    if (std::fabs(kappa - 0.01) > 0.05 * 0.01) {
      detail = strf("circle: curvature %.6f at row %d", kappa, k);
      return false;
    }
  }
  detail = strf("spacing err <= %.4f m, curvature err <= %.2f%%", worst_spacing,
                100.0 * worst_curv);
  return true;
}

}  // namespace

int main() {
  std::vector<Criterion> table = {
      {2, "routing matches brute-force oracle on 100 random graphs", criterion_routing},
      {3, "route resampling spacing and curvature", criterion_resample},
  };

  int failures = 0;
  for (auto& c : table) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = strf("exception: %s", e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] C%d %s (%s) [%.1fs]\n", ok ? "PASS" : "FAIL", c.id, c.name.c_str(),
                detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d criteria failing\n", failures);
  return failures == 0 ? 0 : 1;
}
