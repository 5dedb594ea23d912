#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atv/model.hpp"

namespace atv {

// Everything a training run needs, with desk-scale defaults. Serialized as
// JSON into config files and checkpoints; missing keys keep their default.
struct RunConfig {
  // model
  BackboneConfig backbone;
  int c_head = 64;
  int c_gate = 0;  // 0 derives max(backbone_C/4, 8)
  int scout_dilation = 2;
  int num_classes = 5;
  bool fixed_gate = false;  // ablation: fuse with constant 1/3 weights

  // loss
  double ohem_theta = 0.7;
  int64_t ohem_min_kept = -1;  // -1 derives 1/16 of the valid pixels per batch
  int ignore_index = 255;

  // optimizer
  double lr0 = 1e-4;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  // training
  int epochs = 30;
  int batch_size = 8;
  int crop = 64;
  uint64_t seed = 7;
  std::vector<double> scale_choices{0.75, 1.0, 1.25};
  double hflip_prob = 0.5;
};

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig config_from_file(const std::string& path);

}  // namespace atv
