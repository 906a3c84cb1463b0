#include "auformer/runconfig.hpp"

#include <fstream>

#include <json.hpp>

#include "auformer/config_json.hpp"
#include "auformer/sha256.hpp"

using nlohmann::json;

namespace auf {

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"vit", "moke", "loss", "train", "data", "ablation"}, "top level");
  RunConfig c;
  if (j.contains("vit")) c.model.vit = vit_from_json(j["vit"]);
  if (j.contains("moke")) c.model.moke = moke_from_json(j["moke"]);
  if (j.contains("data")) {
    reject_unknown_keys(j["data"], {"num_aus"}, "data");
    c.model.num_aus = j["data"].value("num_aus", c.model.num_aus);
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    reject_unknown_keys(l, {"m", "b_l", "b_r", "eps"}, "loss");
    c.train.margin = l.value("m", c.train.margin);
    c.train.b_l = l.value("b_l", c.train.b_l);
    c.train.b_r = l.value("b_r", c.train.b_r);
    c.train.dice_eps = l.value("eps", c.train.dice_eps);
    if (c.train.b_l > c.train.b_r) throw ConfigError("config: loss.b_l > loss.b_r");
    if (c.train.margin < 0.0 || c.train.margin > 1.0)
      throw ConfigError("config: loss.m must be in [0, 1]");
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown_keys(t,
                        {"epochs", "batch_size", "learning_rate", "weight_decay", "seed",
                         "threshold", "early_stop_f1"},
                        "train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.threshold = t.value("threshold", c.train.threshold);
    c.train.early_stop_f1 = t.value("early_stop_f1", c.train.early_stop_f1);
  }
  if (j.contains("ablation")) {
    const json& a = j["ablation"];
    reject_unknown_keys(a, {"petl", "collab", "mrf", "ca", "gamma", "margin"}, "ablation");
    c.model.petl = a.value("petl", true);
    c.model.collab = a.value("collab", true);
    c.model.moke.use_mrf = a.value("mrf", true);
    c.model.moke.use_ca = a.value("ca", true);
    c.train.use_gamma = a.value("gamma", true);
    c.train.use_margin = a.value("margin", true);
  }
  c.model.validate();
  c.train.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::canonical_json() const {
  json j;
  j["vit"] = vit_to_json(model.vit);
  j["moke"] = moke_to_json(model.moke);
  j["data"] = {{"num_aus", model.num_aus}};
  j["loss"] = {{"m", train.margin}, {"b_l", train.b_l}, {"b_r", train.b_r}, {"eps", train.dice_eps}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"weight_decay", train.weight_decay},
                {"seed", train.seed},
                {"threshold", train.threshold},
                {"early_stop_f1", train.early_stop_f1}};
  j["ablation"] = {{"petl", model.petl},     {"collab", model.collab},
                   {"mrf", model.moke.use_mrf}, {"ca", model.moke.use_ca},
                   {"gamma", train.use_gamma},  {"margin", train.use_margin}};
  // nlohmann objects iterate in sorted key order, so dump() is canonical
  return j.dump();
}

std::string RunConfig::hash() const { return sha256_hex(canonical_json()); }

}  // namespace auf
