#include "auformer.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "auformer/checkpoint.hpp"
#include "auformer/datagen.hpp"
#include "auformer/gradcheck.hpp"
#include "auformer/runconfig.hpp"
#include "auformer/trainer.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <class Fn>
auf_status guarded(Fn&& fn) {
  try {
    fn();
    return AUF_OK;
  } catch (const auf::ConfigError& e) {
    g_last_error = e.what();
    return AUF_ERR_CONFIG;
  } catch (const auf::FormatError& e) {
    g_last_error = e.what();
    return AUF_ERR_FORMAT;
  } catch (const auf::IoError& e) {
    g_last_error = e.what();
    return AUF_ERR_IO;
  } catch (const auf::ShapeError& e) {
    g_last_error = e.what();
    return AUF_ERR_SHAPE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AUF_ERR_RUNTIME;
  }
}

json report_to_json(const auf::GradCheckReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"loss", e.loss},
                       {"point", e.point},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"rel_err", e.rel_err}});
  return {{"pass", r.pass},
          {"max_rel_err", r.max_rel_err},
          {"tolerance", r.tolerance},
          {"entries", entries}};
}

json metrics_to_json(const auf::Metrics& m) {
  return {{"per_au_f1", m.per_au_f1}, {"avg_f1", m.avg_f1},
          {"tp", m.tp},               {"fp", m.fp},
          {"fn", m.fn}};
}

}  // namespace

struct auf_dataset {
  std::vector<auf::SampleRecord> samples;
};

struct auf_model {
  auf::AUFormerModel<float> model;
  auf::RunConfig run;
};

extern "C" {

const char* auf_last_error(void) { return g_last_error.c_str(); }

void auf_string_free(char* s) { std::free(s); }

auf_status auf_generate_dataset(const char* spec_json_path, const char* out_dir,
                                char** manifest_path_out) {
  return guarded([&]() {
    if (!spec_json_path || !out_dir) throw auf::ConfigError("null argument");
    auf::SyntheticSpec spec = auf::SyntheticSpec::from_json_file(spec_json_path);
    std::string path = auf::generate_dataset(spec, out_dir);
    if (manifest_path_out) *manifest_path_out = dup_string(path);
  });
}

auf_status auf_dataset_open(const char* manifest_path, auf_dataset** out) {
  return guarded([&]() {
    if (!manifest_path || !out) throw auf::ConfigError("null argument");
    auto ds = std::make_unique<auf_dataset>();
    ds->samples = auf::load_dataset(manifest_path);
    *out = ds.release();
  });
}

void auf_dataset_free(auf_dataset* ds) { delete ds; }

int auf_dataset_size(const auf_dataset* ds) {
  return ds ? static_cast<int>(ds->samples.size()) : 0;
}

int auf_dataset_num_labels(const auf_dataset* ds) {
  return ds && !ds->samples.empty() ? static_cast<int>(ds->samples[0].labels.size()) : 0;
}

auf_status auf_model_create(const char* run_config_json, auf_model** out) {
  return guarded([&]() {
    if (!run_config_json || !out) throw auf::ConfigError("null argument");
    auto h = std::make_unique<auf_model>();
    h->run = auf::RunConfig::from_json_text(run_config_json);
    h->model = auf::make_model<float>(h->run.model, h->run.train.seed);
    *out = h.release();
  });
}

auf_status auf_model_load(const char* checkpoint_path, auf_model** out) {
  return guarded([&]() {
    if (!checkpoint_path || !out) throw auf::ConfigError("null argument");
    auto h = std::make_unique<auf_model>();
    h->model = auf::load_model<float>(checkpoint_path);
    h->run.model = h->model.cfg;
    *out = h.release();
  });
}

auf_status auf_model_save(auf_model* m, const char* checkpoint_path) {
  return guarded([&]() {
    if (!m || !checkpoint_path) throw auf::ConfigError("null argument");
    auf::save_model(m->model, checkpoint_path);
  });
}

void auf_model_free(auf_model* m) { delete m; }

auf_status auf_model_predict(auf_model* m, const float* image, int channels, int height, int width,
                             float* probs, float* aux_probs) {
  return guarded([&]() {
    if (!m || !image) throw auf::ConfigError("null argument");
    auf::Tensor32 img({channels, height, width},
                      std::vector<float>(image, image + static_cast<size_t>(channels) * height * width));
    auf::ModelCache<float> cache;
    auf::ModelOutput<float> out = auf::model_forward(img, m->model, cache);
    const int n = m->model.cfg.num_aus;
    if (probs)
      for (int i = 0; i < n; ++i) probs[i] = out.probs.data[static_cast<size_t>(i)];
    if (aux_probs)
      for (int i = 0; i < n; ++i) aux_probs[i] = out.aux_probs.data[static_cast<size_t>(i)];
  });
}

auf_status auf_train(auf_model* m, auf_dataset* ds, char** metrics_json_out) {
  return guarded([&]() {
    if (!m || !ds) throw auf::ConfigError("null argument");
    auf::TrainHistory hist = auf::train(m->model, ds->samples, m->run.train);
    auf::Metrics metrics = auf::evaluate(m->model, ds->samples, m->run.train.threshold);
    auf::ParamCount pc = auf::count_params(m->model);
    auf::FlopCount fc = auf::estimate_flops(m->model.cfg);
    json history = json::array();
    for (const auto& e : hist.epochs)
      history.push_back({{"total", e.total},
                         {"mdwa", e.mdwa},
                         {"wdi", e.wdi},
                         {"aux_mdwa", e.aux_mdwa},
                         {"train_f1", e.train_f1}});
    json out = metrics_to_json(metrics);
    out["config_hash"] = m->run.hash();
    out["loss_history"] = history;
    out["epochs_run"] = hist.stopped_epoch;
    out["learnable_params"] = pc.learnable;
    out["frozen_params"] = pc.frozen;
    out["learnable_ratio"] = pc.ratio();
    out["flops"] = fc.total();
    if (metrics_json_out) *metrics_json_out = dup_string(out.dump(2));
  });
}

auf_status auf_evaluate(auf_model* m, auf_dataset* ds, double threshold, char** metrics_json_out) {
  return guarded([&]() {
    if (!m || !ds) throw auf::ConfigError("null argument");
    auf::Metrics metrics = auf::evaluate(m->model, ds->samples, threshold);
    json out = metrics_to_json(metrics);
    out["config_hash"] = m->run.hash();
    out["threshold"] = threshold;
    if (metrics_json_out) *metrics_json_out = dup_string(out.dump(2));
  });
}

auf_status auf_gradcheck(const char* options_json, char** report_json_out) {
  return guarded([&]() {
    json opts = json::object();
    if (options_json && *options_json) {
      try {
        opts = json::parse(options_json);
      } catch (const json::exception& e) {
        throw auf::ConfigError(std::string("gradcheck options: invalid JSON: ") + e.what());
      }
    }
    const std::string losses = opts.value("losses", std::string("all"));
    const int points = opts.value("points", 1000);
    const uint64_t seed = opts.value("seed", 1);
    const double tol = opts.value("tolerance", 1e-5);
    const bool negate = opts.value("negate_hook", false);
    auf::GradCheckReport r = auf::gradcheck_losses(losses, points, seed, tol, negate);
    json out = report_to_json(r);
    if (opts.value("model", false)) {
      auf::ModelConfig mc;  // desk-scale config
      auf::GradCheckReport mr =
          auf::gradcheck_model(mc, opts.value("model_params", 20), seed, 1e-3);
      out["model"] = report_to_json(mr);
      out["pass"] = r.pass && mr.pass;
    }
    if (report_json_out) *report_json_out = dup_string(out.dump(2));
  });
}

auf_status auf_param_report(auf_model* m, char** json_out) {
  return guarded([&]() {
    if (!m) throw auf::ConfigError("null argument");
    auf::ParamCount pc = auf::count_params(m->model);
    auf::FlopCount fc = auf::estimate_flops(m->model.cfg);
    json out;
    out["config_hash"] = m->run.hash();
    out["learnable"] = pc.learnable;
    out["frozen"] = pc.frozen;
    out["ratio"] = pc.ratio();
    out["flops"] = {{"backbone", fc.backbone},
                    {"moke", fc.moke},
                    {"heads", fc.heads},
                    {"total", fc.total()},
                    {"moke_overhead", fc.moke_overhead()}};
    if (json_out) *json_out = dup_string(out.dump(2));
  });
}

auf_status auf_loss_curves(double margin, int steps, char** csv_out) {
  return guarded([&]() {
    if (steps < 1) throw auf::ConfigError("curves: steps >= 1 required");
    if (csv_out) *csv_out = dup_string(auf::loss_curves_csv(margin, steps));
  });
}

}  // extern "C"
