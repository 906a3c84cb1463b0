#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "auformer/model.hpp"

namespace auf {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

inline nlohmann::json vit_to_json(const ViTConfig& c) {
  nlohmann::json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["channels"] = c.channels;
  j["depth"] = c.depth;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["moke_input"] = c.moke_input == MokeInput::kPreNorm ? "pre_norm" : "post_norm";
  return j;
}

inline ViTConfig vit_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"image_size", "patch_size", "channels", "depth", "dim", "heads",
                          "mlp_ratio", "moke_input"},
                      "vit");
  ViTConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.channels = j.value("channels", c.channels);
  c.depth = j.value("depth", c.depth);
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  const std::string mi = j.value("moke_input", std::string("pre_norm"));
  if (mi == "pre_norm")
    c.moke_input = MokeInput::kPreNorm;
  else if (mi == "post_norm")
    c.moke_input = MokeInput::kPostNorm;
  else
    throw ConfigError("config: moke_input must be pre_norm or post_norm");
  return c;
}

inline nlohmann::json moke_to_json(const MoKEConfig& c) {
  nlohmann::json j;
  j["d"] = c.reduced_channels;
  j["dilations"] = c.dilations;
  j["neighborhood"] = c.neighborhood;
  j["scale"] = c.scale;
  return j;
}

inline MoKEConfig moke_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"d", "dilations", "neighborhood", "scale"}, "moke");
  MoKEConfig c;
  c.reduced_channels = j.value("d", c.reduced_channels);
  if (j.contains("dilations")) {
    auto v = j["dilations"].get<std::vector<int>>();
    if (v.size() != 3) throw ConfigError("config: dilations must have 3 entries");
    c.dilations = {v[0], v[1], v[2]};
  }
  c.neighborhood = j.value("neighborhood", c.neighborhood);
  c.scale = j.value("scale", c.scale);
  return c;
}

inline nlohmann::json model_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["vit"] = vit_to_json(c.vit);
  j["moke"] = moke_to_json(c.moke);
  j["num_aus"] = c.num_aus;
  j["petl"] = c.petl;
  j["collab"] = c.collab;
  j["mrf"] = c.moke.use_mrf;
  j["ca"] = c.moke.use_ca;
  return j;
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"vit", "moke", "num_aus", "petl", "collab", "mrf", "ca"}, "model");
  ModelConfig c;
  if (j.contains("vit")) c.vit = vit_from_json(j["vit"]);
  if (j.contains("moke")) c.moke = moke_from_json(j["moke"]);
  c.num_aus = j.value("num_aus", c.num_aus);
  c.petl = j.value("petl", c.petl);
  c.collab = j.value("collab", c.collab);
  c.moke.use_mrf = j.value("mrf", true);
  c.moke.use_ca = j.value("ca", true);
  return c;
}

}  // namespace auf
