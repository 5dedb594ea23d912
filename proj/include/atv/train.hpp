#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "atv/config.hpp"
#include "atv/dataset.hpp"
#include "atv/metrics.hpp"
#include "atv/model.hpp"
#include "atv/optim.hpp"

namespace atv {

struct EpochLog {
  int epoch = 0;
  float mean_loss = 0;
  double lr = 0;
  double val_miou = 0;
  std::map<std::string, std::array<double, 3>> alpha_by_regime;
  double seconds = 0;
};

struct TrainResult {
  std::vector<float> step_losses;  // every optimizer step, in order
  std::vector<EpochLog> epoch_logs;
  double best_val_miou = 0;
  int best_epoch = -1;
  double final_val_miou = 0;
  std::string checkpoint_path;
};

// Runs the full augment -> batch -> forward -> OHEM -> backward -> AdamW
// loop over data_dir/train with per-epoch validation on data_dir/val.
// Writes a checkpoint to out_ckpt whenever validation mIoU improves.
// resume_path, when non-empty, restores parameters, optimizer state and
// the epoch counter before continuing. Deterministic in (cfg, dataset).
TrainResult train_run(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& out_ckpt, const std::string& resume_path = "",
                      std::ostream* log = nullptr);

// Eval-mode inference over a whole split.
ConfusionMatrix evaluate_split(ATVNet<float>& net, const DatasetManifest& split, int batch_size,
                               int ignore_index, bool fixed_gate);

struct GateGroupStats {
  int64_t count = 0;
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

// Per-regime statistics of the gate weights over a split.
std::map<std::string, GateGroupStats> gate_statistics(ATVNet<float>& net,
                                                      const DatasetManifest& split, int batch_size,
                                                      bool fixed_gate);

// Argmax mask for one image; reflect-pads to a multiple of 8 and crops the
// prediction back. Ties break toward the smaller class id.
Tensor<int32_t> infer_mask(ATVNet<float>& net, const Tensor<float>& image, bool fixed_gate);

// Checkpoint packing for a full training state.
void save_training_checkpoint(const std::string& path, const RunConfig& cfg,
                              const ATVNet<float>& net, const AdamWState<float>& opt,
                              int next_epoch, double best_miou);

struct LoadedTraining {
  RunConfig cfg;
  ATVNet<float> net;
  AdamWState<float> opt;
  int next_epoch = 0;
  double best_miou = 0;
};

LoadedTraining load_training_checkpoint(const std::string& path);

// Model-only view of a checkpoint (for eval / infer / inspect-gate).
ATVNet<float> load_model_checkpoint(const std::string& path, RunConfig* cfg_out = nullptr);

ATVNet<float> build_from_config(const RunConfig& cfg);

}  // namespace atv
