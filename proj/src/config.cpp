#include "atv/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace atv {

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {
      {"stem_channels", c.backbone.stem_channels},
      {"stage_channels", c.backbone.stage_channels},
      {"blocks_per_stage", c.backbone.blocks_per_stage},
      {"stage_strides", c.backbone.stage_strides},
      {"stage_dilations", c.backbone.stage_dilations},
      {"c_head", c.c_head},
      {"c_gate", c.c_gate},
      {"scout_dilation", c.scout_dilation},
      {"num_classes", c.num_classes},
      {"fixed_gate", c.fixed_gate},
  };
  j["loss"] = {
      {"theta", c.ohem_theta},
      {"min_kept", c.ohem_min_kept},
      {"ignore_index", c.ignore_index},
  };
  j["optim"] = {
      {"lr0", c.lr0},          {"poly_power", c.poly_power},
      {"beta1", c.beta1},      {"beta2", c.beta2},
      {"eps", c.adam_eps},     {"weight_decay", c.weight_decay},
  };
  j["train"] = {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"crop", c.crop},
      {"seed", c.seed},
      {"scale_choices", c.scale_choices},
      {"hflip_prob", c.hflip_prob},
  };
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("model")) {
      const json& m = j.at("model");
      get_if(m, "stem_channels", c.backbone.stem_channels);
      get_if(m, "stage_channels", c.backbone.stage_channels);
      get_if(m, "blocks_per_stage", c.backbone.blocks_per_stage);
      get_if(m, "stage_strides", c.backbone.stage_strides);
      get_if(m, "stage_dilations", c.backbone.stage_dilations);
      get_if(m, "c_head", c.c_head);
      get_if(m, "c_gate", c.c_gate);
      get_if(m, "scout_dilation", c.scout_dilation);
      get_if(m, "num_classes", c.num_classes);
      get_if(m, "fixed_gate", c.fixed_gate);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      get_if(l, "theta", c.ohem_theta);
      get_if(l, "min_kept", c.ohem_min_kept);
      get_if(l, "ignore_index", c.ignore_index);
    }
    if (j.contains("optim")) {
      const json& o = j.at("optim");
      get_if(o, "lr0", c.lr0);
      get_if(o, "poly_power", c.poly_power);
      get_if(o, "beta1", c.beta1);
      get_if(o, "beta2", c.beta2);
      get_if(o, "eps", c.adam_eps);
      get_if(o, "weight_decay", c.weight_decay);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      get_if(t, "epochs", c.epochs);
      get_if(t, "batch_size", c.batch_size);
      get_if(t, "crop", c.crop);
      get_if(t, "seed", c.seed);
      get_if(t, "scale_choices", c.scale_choices);
      get_if(t, "hflip_prob", c.hflip_prob);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad field type: ") + e.what());
  }
  return c;
}

RunConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

}  // namespace atv
