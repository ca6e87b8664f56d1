#include "mvtrack/metrics.hpp"

#include <random>

#include "doctest.h"
#include "mot_oracle.hpp"
#include "mvtrack/assignment.hpp"

using namespace mvtrack;

namespace {

std::vector<TrajectoryPoint> track(int64_t id, int frame_begin, int frame_end, double x,
                                   double y, double vx = 0, double vy = 0) {
  std::vector<TrajectoryPoint> rows;
  for (int f = frame_begin; f < frame_end; ++f)
    rows.push_back({f, id, x + vx * (f - frame_begin), y + vy * (f - frame_begin)});
  return rows;
}

void append(std::vector<TrajectoryPoint>& dst, const std::vector<TrajectoryPoint>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

void check_equal(const EvalResult& a, const EvalResult& b) {
  CHECK(a.counts.misses == b.counts.misses);
  CHECK(a.counts.false_positives == b.counts.false_positives);
  CHECK(a.counts.id_switches == b.counts.id_switches);
  CHECK(a.counts.matches == b.counts.matches);
  CHECK(a.counts.gt_total == b.counts.gt_total);
  CHECK(a.mota == doctest::Approx(b.mota).epsilon(1e-9));
  CHECK(a.motp == doctest::Approx(b.motp).epsilon(1e-9));
  CHECK(a.idf1 == doctest::Approx(b.idf1).epsilon(1e-9));
  CHECK(a.mt == doctest::Approx(b.mt).epsilon(1e-9));
  CHECK(a.ml == doctest::Approx(b.ml).epsilon(1e-9));
}

}  // namespace

TEST_CASE("assignment solver equals permutation enumeration") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> uf(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    int rows = 1 + int(gen() % 5), cols = 1 + int(gen() % 5);
    std::vector<double> cost(size_t(rows * cols));
    for (auto& c : cost) {
      c = uf(gen);
      if (gen() % 4 == 0) c = std::numeric_limits<double>::infinity();
    }
    auto asg = solve_assignment(cost, rows, cols);
    // brute force over all injective maps
    std::vector<int> best;
    int best_count = -1;
    double best_sum = 0;
    std::vector<int> cur(size_t(rows), -1);
    std::vector<char> used(size_t(cols), 0);
    std::function<void(int, int, double)> go = [&](int i, int count, double sum) {
      if (i == rows) {
        if (count > best_count || (count == best_count && sum < best_sum - 1e-12)) {
          best_count = count;
          best_sum = sum;
          best = cur;
        }
        return;
      }
      go(i + 1, count, sum);
      for (int j = 0; j < cols; ++j) {
        if (used[size_t(j)] || !std::isfinite(cost[size_t(i * cols + j)])) continue;
        used[size_t(j)] = 1;
        cur[size_t(i)] = j;
        go(i + 1, count + 1, sum + cost[size_t(i * cols + j)]);
        cur[size_t(i)] = -1;
        used[size_t(j)] = 0;
      }
    };
    go(0, 0, 0.0);
    int count = 0;
    double sum = 0;
    for (int i = 0; i < rows; ++i)
      if (asg[size_t(i)] >= 0) {
        ++count;
        sum += cost[size_t(i * cols + asg[size_t(i)])];
      }
    CHECK(count == best_count);
    CHECK(sum == doctest::Approx(best_sum).epsilon(1e-9));
  }
}

TEST_CASE("perfect tracking scores 100 across the board") {
  std::vector<TrajectoryPoint> gt;
  append(gt, track(1, 0, 10, 1.0, 2.0, 0.1, 0.0));
  append(gt, track(2, 3, 10, 5.0, 1.0, 0.0, 0.2));
  auto res = evaluate(gt, gt, 2.0);
  CHECK(res.mota == doctest::Approx(100.0));
  CHECK(res.motp == doctest::Approx(100.0));
  CHECK(res.idf1 == doctest::Approx(100.0));
  CHECK(res.mt == doctest::Approx(100.0));
  CHECK(res.ml == doctest::Approx(0.0));
  CHECK(res.counts.id_switches == 0);
}

TEST_CASE("the split-identity example: one switch, MOTA 90, IDF1 50") {
  std::vector<TrajectoryPoint> gt = track(7, 0, 10, 0.0, 0.0);
  std::vector<TrajectoryPoint> pred;
  append(pred, track(100, 0, 5, 0.3, 0.0));
  append(pred, track(200, 5, 10, 0.3, 0.0));
  auto res = evaluate(gt, pred, 2.0);
  CHECK(res.counts.id_switches == 1);
  CHECK(res.counts.misses == 0);
  CHECK(res.counts.false_positives == 0);
  CHECK(res.mota == doctest::Approx(90.0));
  CHECK(res.idf1 == doctest::Approx(50.0));
  check_equal(res, motoracle::evaluate_bruteforce(gt, pred, 2.0));
}

TEST_CASE("fully lost GT counts toward ML, not MT") {
  std::vector<TrajectoryPoint> gt;
  append(gt, track(1, 0, 10, 0.0, 0.0));
  append(gt, track(2, 0, 10, 50.0, 50.0));  // never matched
  auto pred = track(9, 0, 10, 0.1, 0.0);
  auto res = evaluate(gt, pred, 2.0);
  CHECK(res.mt == doctest::Approx(50.0));
  CHECK(res.ml == doctest::Approx(50.0));
  CHECK(res.counts.misses == 10);
}

TEST_CASE("evaluate is invariant to row order and prediction id relabeling") {
  std::vector<TrajectoryPoint> gt;
  append(gt, track(1, 0, 6, 1.0, 1.0, 0.2, 0.1));
  append(gt, track(2, 2, 6, 4.0, 2.0, -0.1, 0.2));
  std::vector<TrajectoryPoint> pred;
  append(pred, track(10, 0, 6, 1.2, 1.1, 0.2, 0.1));
  append(pred, track(20, 2, 5, 4.3, 2.0, -0.1, 0.2));
  auto base = evaluate(gt, pred, 1.0);

  auto shuffled = pred;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
  auto relabeled = shuffled;
  for (auto& r : relabeled) r.track_id = r.track_id == 10 ? 555 : 111;
  auto res2 = evaluate(gt, relabeled, 1.0);
  check_equal(base, res2);
}

TEST_CASE("removing a correct prediction frame never raises MOTA") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> uf(0.0, 4.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<TrajectoryPoint> gt, pred;
    int ids = 1 + int(gen() % 3);
    int frames = 2 + int(gen() % 5);
    for (int id = 0; id < ids; ++id)
      for (int f = 0; f < frames; ++f) {
        double x = uf(gen), y = uf(gen);
        gt.push_back({f, id, x, y});
        pred.push_back({f, 1000 + id, x + 0.05, y});
      }
    auto base = evaluate(gt, pred, 2.0);
    // drop one matched prediction row
    size_t drop = gen() % pred.size();
    std::vector<TrajectoryPoint> pruned;
    for (size_t i = 0; i < pred.size(); ++i)
      if (i != drop) pruned.push_back(pred[i]);
    auto res = evaluate(gt, pruned, 2.0);
    CHECK(res.mota <= base.mota + 1e-9);
  }
}

TEST_CASE("evaluate equals the brute-force enumerator on 220 random instances") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> uf(0.0, 5.0);
  std::uniform_real_distribution<double> prob(0.0, 1.0);
  int instances = 0;
  // systematic sweep of id/frame counts, randomized presence and positions
  for (int gids = 1; gids <= 3; ++gids) {
    for (int pids = 1; pids <= 3; ++pids) {
      for (int frames = 1; frames <= 6; ++frames) {
        for (int rep = 0; rep < 5; ++rep) {
          std::vector<TrajectoryPoint> gt, pred;
          for (int id = 0; id < gids; ++id)
            for (int f = 0; f < frames; ++f)
              if (prob(gen) < 0.8) gt.push_back({f, id, uf(gen), uf(gen)});
          for (int id = 0; id < pids; ++id)
            for (int f = 0; f < frames; ++f)
              if (prob(gen) < 0.8) pred.push_back({f, 100 + id, uf(gen), uf(gen)});
          auto fast = evaluate(gt, pred, 2.0);
          auto slow = motoracle::evaluate_bruteforce(gt, pred, 2.0);
          check_equal(fast, slow);
          ++instances;
        }
      }
    }
  }
  CHECK(instances >= 200);
}

TEST_CASE("malformed trajectories are rejected") {
  std::vector<TrajectoryPoint> dup = {{0, 1, 1.0, 1.0}, {0, 1, 2.0, 2.0}};
  CHECK_THROWS_AS(evaluate(dup, {}, 2.0), FormatError);
  std::vector<TrajectoryPoint> nan = {{0, 1, std::nan(""), 1.0}};
  CHECK_THROWS_AS(evaluate({}, nan, 2.0), FormatError);
  CHECK_THROWS_AS(evaluate({}, {}, 0.0), ConfigInvalidError);
}

TEST_CASE("eval json carries all fields") {
  auto res = evaluate(track(1, 0, 4, 0, 0), track(2, 0, 4, 0.1, 0), 1.0);
  auto js = eval_result_to_json(res);
  CHECK(js.find("\"mota\"") != std::string::npos);
  CHECK(js.find("\"idf1\"") != std::string::npos);
  CHECK(js.find("\"mean_matched_distance_m\"") != std::string::npos);
}
