#include "mvtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "mvtrack/assignment.hpp"

namespace mvtrack {

namespace {

struct Obs {
  int64_t id;
  double x, y;
};

// frame -> id-sorted observations; rejects duplicate (frame, id) rows
std::map<int, std::vector<Obs>> index_rows(const std::vector<TrajectoryPoint>& rows,
                                           const char* side) {
  std::map<int, std::vector<Obs>> out;
  for (const auto& r : rows) {
    if (!std::isfinite(r.x_m) || !std::isfinite(r.y_m))
      throw FormatError(std::string(side) + " trajectory has a non-finite position");
    out[r.frame].push_back({r.track_id, r.x_m, r.y_m});
  }
  for (auto& [frame, obs] : out) {
    std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.id < b.id; });
    for (size_t i = 1; i < obs.size(); ++i)
      if (obs[i].id == obs[i - 1].id)
        throw FormatError(std::string(side) + " trajectory repeats id " +
                          std::to_string(obs[i].id) + " in frame " + std::to_string(frame));
  }
  return out;
}

double dist(const Obs& a, const Obs& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
}

}  // namespace

EvalResult evaluate(const std::vector<TrajectoryPoint>& gt,
                    const std::vector<TrajectoryPoint>& pred, double r) {
  if (r <= 0) throw ConfigInvalidError("evaluate: r must be > 0");
  const double inf = std::numeric_limits<double>::infinity();
  auto gtf = index_rows(gt, "gt");
  auto prf = index_rows(pred, "pred");

  std::set<int> frames;
  for (auto& [f, _] : gtf) frames.insert(f);
  for (auto& [f, _] : prf) frames.insert(f);

  EvalResult res;
  auto& c = res.counts;
  double dist_sum = 0;
  std::map<int64_t, int64_t> last_match;           // gt id -> pred id
  std::map<int64_t, int64_t> lifespan, matched_in;  // per gt id
  std::map<std::pair<int64_t, int64_t>, int64_t> overlap;  // (gt, pred) within r

  static const std::vector<Obs> kEmpty;
  for (int frame : frames) {
    auto git = gtf.find(frame);
    auto pit = prf.find(frame);
    const auto& gobs = git == gtf.end() ? kEmpty : git->second;
    const auto& pobs = pit == prf.end() ? kEmpty : pit->second;
    c.gt_total += static_cast<int64_t>(gobs.size());
    c.pred_total += static_cast<int64_t>(pobs.size());
    for (const auto& g : gobs) lifespan[g.id] += 1;
    for (const auto& g : gobs)
      for (const auto& p : pobs)
        if (dist(g, p) <= r) overlap[{g.id, p.id}] += 1;

    std::vector<char> gused(gobs.size(), 0), pused(pobs.size(), 0);
    std::vector<std::pair<size_t, size_t>> matches;
    // persistence first: keep the last correspondence when still valid
    for (size_t gi = 0; gi < gobs.size(); ++gi) {
      auto lm = last_match.find(gobs[gi].id);
      if (lm == last_match.end()) continue;
      for (size_t pi = 0; pi < pobs.size(); ++pi) {
        if (pused[pi] || pobs[pi].id != lm->second) continue;
        if (dist(gobs[gi], pobs[pi]) <= r) {
          matches.emplace_back(gi, pi);
          gused[gi] = 1;
          pused[pi] = 1;
        }
        break;
      }
    }
    // optimal assignment for the rest
    std::vector<size_t> grem, prem;
    for (size_t gi = 0; gi < gobs.size(); ++gi)
      if (!gused[gi]) grem.push_back(gi);
    for (size_t pi = 0; pi < pobs.size(); ++pi)
      if (!pused[pi]) prem.push_back(pi);
    if (!grem.empty() && !prem.empty()) {
      std::vector<double> cost(grem.size() * prem.size(), inf);
      for (size_t a = 0; a < grem.size(); ++a)
        for (size_t b = 0; b < prem.size(); ++b) {
          double d = dist(gobs[grem[a]], pobs[prem[b]]);
          if (d <= r) cost[a * prem.size() + b] = d;
        }
      auto asg = solve_assignment(cost, static_cast<int>(grem.size()),
                                  static_cast<int>(prem.size()));
      for (size_t a = 0; a < grem.size(); ++a)
        if (asg[a] >= 0) matches.emplace_back(grem[a], prem[static_cast<size_t>(asg[a])]);
    }

    std::sort(matches.begin(), matches.end());
    for (auto [gi, pi] : matches) {
      const auto& g = gobs[gi];
      const auto& p = pobs[pi];
      auto lm = last_match.find(g.id);
      if (lm != last_match.end() && lm->second != p.id) c.id_switches += 1;
      last_match[g.id] = p.id;
      c.matches += 1;
      dist_sum += dist(g, p);
      matched_in[g.id] += 1;
    }
    c.misses += static_cast<int64_t>(gobs.size() - matches.size());
    c.false_positives += static_cast<int64_t>(pobs.size() - matches.size());
  }

  // IDF1: one global identity bijection maximizing the within-r overlap
  std::vector<int64_t> gids, pids;
  {
    std::set<int64_t> gs, ps;
    for (auto& [key, n] : overlap) {
      gs.insert(key.first);
      ps.insert(key.second);
    }
    gids.assign(gs.begin(), gs.end());
    pids.assign(ps.begin(), ps.end());
  }
  int64_t idtp = 0;
  if (!gids.empty() && !pids.empty()) {
    int64_t maxov = 0;
    for (auto& [key, n] : overlap) maxov = std::max(maxov, n);
    std::vector<double> cost(gids.size() * pids.size(), double(maxov));
    for (size_t a = 0; a < gids.size(); ++a)
      for (size_t b = 0; b < pids.size(); ++b) {
        auto it = overlap.find({gids[a], pids[b]});
        if (it != overlap.end()) cost[a * pids.size() + b] = double(maxov - it->second);
      }
    auto asg = solve_assignment(cost, static_cast<int>(gids.size()),
                                static_cast<int>(pids.size()));
    for (size_t a = 0; a < gids.size(); ++a) {
      if (asg[a] < 0) continue;
      auto it = overlap.find({gids[a], pids[static_cast<size_t>(asg[a])]});
      if (it != overlap.end()) idtp += it->second;
    }
  }

  res.mota = 100.0 * (1.0 - double(c.misses + c.false_positives + c.id_switches) /
                                double(std::max<int64_t>(1, c.gt_total)));
  c.mean_matched_distance_m = c.matches > 0 ? dist_sum / double(c.matches) : 0.0;
  res.motp = c.matches > 0 ? 100.0 * (1.0 - c.mean_matched_distance_m / r) : 0.0;
  int64_t denom = c.gt_total + c.pred_total;
  res.idf1 = denom > 0 ? 100.0 * 2.0 * double(idtp) / double(denom) : 100.0;

  int64_t nids = static_cast<int64_t>(lifespan.size());
  if (nids > 0) {
    int64_t mt = 0, ml = 0;
    for (auto& [id, span] : lifespan) {
      double ratio = double(matched_in[id]) / double(span);
      if (ratio >= 0.8) ++mt;
      if (ratio < 0.2) ++ml;
    }
    res.mt = 100.0 * double(mt) / double(nids);
    res.ml = 100.0 * double(ml) / double(nids);
  }
  return res;
}

std::string eval_result_to_json(const EvalResult& r) {
  std::ostringstream out;
  out.precision(10);
  out << "{\"mota\": " << r.mota << ", \"motp\": " << r.motp << ", \"idf1\": " << r.idf1
      << ", \"mt\": " << r.mt << ", \"ml\": " << r.ml << ", \"counts\": {\"misses\": "
      << r.counts.misses << ", \"false_positives\": " << r.counts.false_positives
      << ", \"id_switches\": " << r.counts.id_switches << ", \"matches\": " << r.counts.matches
      << ", \"gt_total\": " << r.counts.gt_total << ", \"pred_total\": " << r.counts.pred_total
      << ", \"mean_matched_distance_m\": " << r.counts.mean_matched_distance_m << "}}";
  return out.str();
}

}  // namespace mvtrack
