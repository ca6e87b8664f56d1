#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvtrack/dataset_io.hpp"

// Ground-plane CLEAR-MOT + identity metrics with a metric association radius.
namespace mvtrack {

struct EvalCounts {
  int64_t misses = 0;
  int64_t false_positives = 0;
  int64_t id_switches = 0;
  int64_t matches = 0;
  int64_t gt_total = 0;
  int64_t pred_total = 0;
  double mean_matched_distance_m = 0;  // raw mean distance behind the MOTP score
};

struct EvalResult {
  double mota = 0;
  double motp = 0;
  double idf1 = 0;
  double mt = 0;  // percent of unique GT identities tracked >= 80% of lifespan
  double ml = 0;  // percent tracked < 20%
  EvalCounts counts;
};

// Per-frame gated Hungarian matching with CLEAR-style persistence (the most
// recent GT-prediction correspondence is kept while still within r), global
// identity assignment for IDF1, MT/ML over GT lifespans. Distances in meters.
EvalResult evaluate(const std::vector<TrajectoryPoint>& gt,
                    const std::vector<TrajectoryPoint>& pred, double r);

std::string eval_result_to_json(const EvalResult& r);

}  // namespace mvtrack
