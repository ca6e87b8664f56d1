#pragma once

#include <string>
#include <vector>

#include "mvtrack/dataset_io.hpp"
#include "mvtrack/losses.hpp"
#include "mvtrack/model.hpp"

// The training loop: Adam, teacher-forced frame-pair steps, loss logging,
// resumable checkpoints and the finite-difference gradient-check harness.
namespace mvtrack {

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";
  uint64_t seed = 7;
  std::string loss_log;  // per-step CSV path; empty = no log
  int frame_begin = 0;
  int frame_end = -1;  // -1: all frames of the dataset
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw ConfigInvalidError("train: epochs must be >= 1");
    if (learning_rate <= 0) throw ConfigInvalidError("train: learning rate must be > 0");
    if (optimizer != "adam") throw ConfigInvalidError("train: unknown optimizer");
  }
};

std::string train_config_to_json(const TrainConfig& cfg);
// Strict parse; model grid defaults are filled from the dataset world when
// the json leaves them unset.
TrainConfig train_config_from_json(const std::string& text, const std::string& context);

// Derives the ground grid from the scene extents when the config left the
// cell counts unset.
void finalize_model_config(ModelConfig& cfg, const SceneConfig& scene);

struct Adam {
  double lr, beta1, beta2, eps;
  int64_t t = 0;
  std::vector<std::vector<float>> m, v;

  Adam(const std::vector<std::pair<std::string, Tensor*>>& params, double lr_, double b1,
       double b2, double eps_);
  void step(std::vector<std::pair<std::string, Tensor*>>& params);
};

// One teacher-forced step on a consecutive frame pair: full forward, losses,
// backward and an optimizer update. Throws NaNDetected on a non-finite loss.
LossBreakdown train_step(Model& model, Adam& opt, const LoadedFrame& prev,
                         const LoadedFrame& cur, const std::vector<CameraCalibration>& calibs,
                         const ModelConfig& cfg);

struct TrainRunResult {
  std::vector<LossBreakdown> steps;
  int epochs_done = 0;
};

// Shuffled consecutive-pair epochs over [frame_begin, frame_end); writes the
// checkpoint plus a ".opt" optimizer sidecar for exact resumption and a
// ".json" model-config echo for inference.
TrainRunResult train_run(const Dataset& data, const TrainConfig& cfg,
                         const std::string& checkpoint_out, const std::string& resume_from = "");

uint32_t crc32(const std::string& bytes);

// --- gradient-check harness -------------------------------------------------

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
  double seconds = 0;
};

struct GradCheckOptions {
  // test fixture: perturb the analytic msda gradient to prove the harness
  // notices a broken backward pass
  bool corrupt_msda_backward = false;
};

// Central finite differences (h = 1e-4, double precision) over every
// differentiable operation at randomized small shapes; an op passes at max
// relative error <= 1e-3.
GradCheckReport gradcheck_all(uint64_t seed, const GradCheckOptions& options = {});

}  // namespace mvtrack
