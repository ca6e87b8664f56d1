#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <omp.h>

#include "CLI11.hpp"
#include "mvtrack/dataset_io.hpp"
#include "mvtrack/metrics.hpp"
#include "mvtrack/model.hpp"
#include "mvtrack/simulator.hpp"
#include "mvtrack/tracker.hpp"
#include "mvtrack/trainer.hpp"

namespace fs = std::filesystem;
using namespace mvtrack;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void apply_thread_cap() {
  if (const char* cap = std::getenv("MVTRACK_THREADS")) {
    int n = std::atoi(cap);
    if (n > 0) omp_set_num_threads(std::min(n, omp_get_max_threads()));
  }
}

struct TrackArgs {
  std::string data_dir, ckpt, out_csv, model_config_path, heatmap_dir;
  int begin = 0;
  int end = -1;
  TrackerParams params;
};

void run_track(const TrackArgs& args) {
  auto data = load_dataset(args.data_dir);
  std::string cfg_path = args.model_config_path.empty() ? args.ckpt + ".json"
                                                        : args.model_config_path;
  ModelConfig mc = model_config_from_json(slurp(cfg_path), cfg_path);
  finalize_model_config(mc, data.config);
  Model model(mc, 0);
  load_checkpoint(args.ckpt, model);

  int end = args.end < 0 ? int(data.frames.size()) : args.end;
  if (args.begin < 0 || args.begin >= end || end > int(data.frames.size()))
    throw ConfigInvalidError("track: bad frame range");
  if (!args.heatmap_dir.empty()) fs::create_directories(args.heatmap_dir);

  NoGradGuard guard;
  TrackerRun run;
  Model::FrameEncoding prev;
  for (int t = args.begin; t < end; ++t) {
    auto cur = model.encode_frame(data.frames[size_t(t)].images, data.calibs);
    const Model::FrameEncoding& before = (t == args.begin) ? cur : prev;

    std::vector<std::array<double, 2>> positions;
    std::vector<int64_t> ids;
    for (const auto& tr : run.tracks) {
      positions.push_back({tr.x, tr.y});
      ids.push_back(tr.id);
    }
    auto out = model.decode_pair(before, cur, data.calibs, positions, ids);

    if (mc.supervision == SupervisionMode::kHeatmap) {
      std::vector<std::array<double, 2>> offsets(run.tracks.size());
      for (size_t i = 0; i < run.tracks.size(); ++i)
        offsets[i] = {double(out.offsets.offsets.at({int64_t(i), 0})),
                      double(out.offsets.offsets.at({int64_t(i), 1}))};
      auto dets = extract_peaks(out.heatmap, args.params.det_threshold,
                                args.params.max_detections);
      step_tracks(run, offsets, dets, t, args.params, mc.grid);
      if (!args.heatmap_dir.empty()) {
        write_pgm(args.heatmap_dir + "/heat_" + std::to_string(t) + ".pgm", out.heatmap);
        write_f32_dump(args.heatmap_dir + "/heat_" + std::to_string(t) + ".f32", out.heatmap);
      }
    } else {
      // coordinate supervision: no detector, so tracks start from the first
      // frame's annotations and follow the regressed positions
      if (t == args.begin) {
        for (const auto& p : data.frames[size_t(t)].ann.persons) {
          TrackState tr;
          tr.id = run.next_id++;
          tr.x = std::clamp(mc.grid.world_to_cell_x(p.x_m), 0.0, double(mc.grid.cells_x - 1));
          tr.y = std::clamp(mc.grid.world_to_cell_y(p.y_m), 0.0, double(mc.grid.cells_y - 1));
          tr.history.push_back({t, tr.x, tr.y});
          run.tracks.push_back(tr);
        }
      } else {
        for (size_t i = 0; i < run.tracks.size(); ++i) {
          double nx = double(out.coords.at({int64_t(i), 0})) * double(mc.grid.cells_x) - 0.5;
          double ny = double(out.coords.at({int64_t(i), 1})) * double(mc.grid.cells_y) - 0.5;
          auto& tr = run.tracks[i];
          tr.x = std::clamp(nx, 0.0, double(mc.grid.cells_x - 1));
          tr.y = std::clamp(ny, 0.0, double(mc.grid.cells_y - 1));
          tr.history.push_back({t, tr.x, tr.y});
        }
      }
    }
    prev = std::move(cur);
  }
  finish_tracks(run);
  write_trajectory_csv(args.out_csv, trajectories_to_rows(run.finished, mc.grid));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view ground-plane crowd tracking pipeline"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-camera dataset");
  std::string sim_config, sim_out;
  sim->add_option("--config", sim_config, "scene config json (defaults used when omitted)");
  sim->add_option("--out", sim_out, "output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train on a simulated dataset");
  std::string train_data, train_config, train_out, train_resume;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "train config json");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  // track
  auto* track = app.add_subcommand("track", "run inference and assemble trajectories");
  TrackArgs targs;
  track->add_option("--data", targs.data_dir, "dataset directory")->required();
  track->add_option("--ckpt", targs.ckpt, "checkpoint path")->required();
  track->add_option("--out", targs.out_csv, "trajectory csv output")->required();
  track->add_option("--begin", targs.begin, "first frame (default 0)");
  track->add_option("--end", targs.end, "one past the last frame (default: all)");
  track->add_option("--gate-cells", targs.params.gate_cells, "association gate in cells");
  track->add_option("--max-misses", targs.params.max_misses, "frames a track may coast");
  track->add_option("--det-threshold", targs.params.det_threshold, "peak detection threshold");
  track->add_option("--max-detections", targs.params.max_detections, "peak count cap");
  track->add_option("--model-config", targs.model_config_path,
                    "model config json (default: <ckpt>.json)");
  track->add_option("--dump-heatmap-dir", targs.heatmap_dir,
                    "write per-frame PGM + f32 heatmaps here");

  // eval
  auto* eval = app.add_subcommand("eval", "ground-plane MOT metrics");
  std::string eval_gt, eval_pred, eval_out;
  double eval_r = 2.0;
  eval->add_option("--gt", eval_gt, "ground-truth trajectory csv")->required();
  eval->add_option("--pred", eval_pred, "predicted trajectory csv")->required();
  eval->add_option("--r", eval_r, "association radius in meters");
  eval->add_option("--out", eval_out, "also write the json result here");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed, "rng seed");

  // export-gt
  auto* exp = app.add_subcommand("export-gt", "dataset annotations as a trajectory csv");
  std::string exp_data, exp_out;
  int exp_begin = 0, exp_end = -1;
  exp->add_option("--data", exp_data, "dataset directory")->required();
  exp->add_option("--out", exp_out, "trajectory csv output")->required();
  exp->add_option("--begin", exp_begin, "first frame");
  exp->add_option("--end", exp_end, "one past the last frame");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return 1;
  }

  apply_thread_cap();
  try {
    if (sim->parsed()) {
      SceneConfig cfg;
      if (!sim_config.empty()) cfg = scene_config_from_json(slurp(sim_config), sim_config);
      write_dataset(sim_out, simulate_sequence(cfg));
      std::cout << "dataset written to " << sim_out << "\n";
    } else if (train->parsed()) {
      auto data = load_dataset(train_data);
      TrainConfig cfg;
      if (!train_config.empty()) cfg = train_config_from_json(slurp(train_config), train_config);
      finalize_model_config(cfg.model, data.config);
      auto result = train_run(data, cfg, train_out, train_resume);
      double last = result.steps.empty() ? 0.0 : result.steps.back().total;
      std::cout << "trained " << result.epochs_done << " epochs, " << result.steps.size()
                << " steps, final loss " << last << ", checkpoint " << train_out << "\n";
    } else if (track->parsed()) {
      run_track(targs);
      std::cout << "trajectories written to " << targs.out_csv << "\n";
    } else if (eval->parsed()) {
      auto res = evaluate(read_trajectory_csv(eval_gt), read_trajectory_csv(eval_pred), eval_r);
      std::string js = eval_result_to_json(res);
      std::cout << js << "\n";
      if (!eval_out.empty()) {
        std::ofstream f(eval_out, std::ios::binary);
        f << js << "\n";
      }
    } else if (grad->parsed()) {
      auto report = gradcheck_all(grad_seed);
      for (const auto& e : report.entries)
        std::cout << (e.pass ? "pass" : "FAIL") << "  " << e.op << "  max_rel_err "
                  << e.max_rel_err << "\n";
      std::cout << (report.all_pass ? "all ops pass" : "FAILURES present") << " ("
                << report.seconds << " s)\n";
      if (!report.all_pass) return 2;
    } else if (exp->parsed()) {
      auto data = load_dataset(exp_data);
      int end = exp_end < 0 ? int(data.frames.size()) : exp_end;
      write_trajectory_csv(exp_out, dataset_ground_truth(data, exp_begin, end));
      std::cout << "ground truth written to " << exp_out << "\n";
    }
  } catch (const ConfigInvalidError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const MissingFrameError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const ChecksumMismatchError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}
