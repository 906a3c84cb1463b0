#pragma once

#include <fstream>
#include <string>

#include "auformer/config_json.hpp"
#include "auformer/model.hpp"
#include "auformer/serialize.hpp"

namespace auf {

// Every model tensor, including operator parameters disabled by ablation
// flags, so checkpoints round-trip byte-exactly.
template <class T>
std::vector<std::pair<std::string, Param<T>*>> model_state(AUFormerModel<T>& m) {
  std::vector<std::pair<std::string, Param<T>*>> out = backbone_parameters(m.backbone);
  auto add_conv = [&out](const std::string& prefix, Conv2dParams<T>& c) {
    out.emplace_back(prefix + ".weight", &c.weight);
    out.emplace_back(prefix + ".bias", &c.bias);
  };
  for (size_t g = 0; g < m.groups.size(); ++g) {
    const std::string site = (g % 2 == 0) ? "mhsa" : "mlp";
    const std::string base = "groups." + std::to_string(g / 2) + "." + site + ".experts.";
    for (size_t i = 0; i < m.groups[g].experts.size(); ++i) {
      MoKEParams<T>& e = m.groups[g].experts[i];
      const std::string p = base + std::to_string(i);
      add_conv(p + ".down", e.down);
      add_conv(p + ".basic", e.basic);
      for (int b = 0; b < 3; ++b)
        add_conv(p + ".mrf." + std::to_string(b), e.mrf[static_cast<size_t>(b)]);
      add_conv(p + ".fuse", e.fuse);
      add_conv(p + ".ca_q", e.ca_q);
      add_conv(p + ".ca_k", e.ca_k);
      add_conv(p + ".ca_v", e.ca_v);
      add_conv(p + ".up", e.up);
    }
  }
  out.emplace_back("main_head.weight", &m.main_head.weight);
  out.emplace_back("main_head.bias", &m.main_head.bias);
  for (size_t i = 0; i < m.aux_heads.size(); ++i) {
    out.emplace_back("aux_heads." + std::to_string(i) + ".weight", &m.aux_heads[i].weight);
    out.emplace_back("aux_heads." + std::to_string(i) + ".bias", &m.aux_heads[i].bias);
  }
  return out;
}

template <class T>
void save_backbone(Backbone<T>& b, const std::string& path) {
  NamedTensors out;
  for (auto& [name, p] : backbone_parameters(b))
    out.emplace_back(name, p->v.template cast<float>());
  save_tensors(path, out);
}

// Fills an existing backbone; errors if any tensor is missing or its dims
// do not match the configured shapes.
template <class T>
void load_backbone(Backbone<T>& b, const std::string& path) {
  NamedTensors in = load_tensors(path);
  auto params = backbone_parameters(b);
  for (auto& [name, p] : params) {
    bool found = false;
    for (auto& [fname, ft] : in) {
      if (fname != name) continue;
      if (ft.shape != p->v.shape)
        throw ShapeError("load_weights: dimension mismatch for '" + name + "'");
      p->v = ft.template cast<T>();
      found = true;
      break;
    }
    if (!found) throw FormatError("load_weights: missing tensor '" + name + "'");
  }
}

// Checkpoint = AUFW container + JSON sidecar (<path>.json) recording the
// model configuration.
template <class T>
void save_model(AUFormerModel<T>& m, const std::string& path) {
  NamedTensors out;
  for (auto& [name, p] : model_state(m)) out.emplace_back(name, p->v.template cast<float>());
  save_tensors(path, out);
  std::ofstream os(path + ".json", std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint sidecar: " + path + ".json");
  os << model_to_json(m.cfg).dump(2) << "\n";
}

template <class T>
AUFormerModel<T> load_model(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw IoError("cannot open checkpoint sidecar: " + path + ".json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint sidecar: invalid JSON: ") + e.what());
  }
  AUFormerModel<T> m = make_model<T>(model_from_json(j), /*seed=*/0);
  NamedTensors in = load_tensors(path);
  auto params = model_state(m);
  if (in.size() != params.size()) throw FormatError("checkpoint: tensor count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (in[i].first != params[i].first)
      throw FormatError("checkpoint: unexpected tensor '" + in[i].first + "'");
    if (in[i].second.shape != params[i].second->v.shape)
      throw ShapeError("checkpoint: dimension mismatch for '" + in[i].first + "'");
    params[i].second->v = in[i].second.template cast<T>();
  }
  return m;
}

}  // namespace auf
