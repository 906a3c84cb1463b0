// Command-line front end over the C API in auformer.h.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "auformer.h"

namespace {

int status_to_exit(auf_status s) {
  if (s == AUF_OK) return 0;
  std::cerr << "error: " << auf_last_error() << "\n";
  return s == AUF_ERR_CONFIG ? 2 : 1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read " << path << "\n";
    std::exit(2);
  }
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return static_cast<bool>(out);
}

struct StrOut {
  char* s = nullptr;
  ~StrOut() { auf_string_free(s); }
};

struct ModelHandle {
  auf_model* m = nullptr;
  ~ModelHandle() { auf_model_free(m); }
};

struct DatasetHandle {
  auf_dataset* d = nullptr;
  ~DatasetHandle() { auf_dataset_free(d); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auformer: parameter-efficient AU detection toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "dataset spec JSON")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  std::string tr_config, tr_data, tr_out, tr_metrics;
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_option("--data", tr_data, "dataset manifest")->required();
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--metrics-out", tr_metrics, "write metrics JSON here (default stdout)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data;
  double ev_threshold = 0.5;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset manifest")->required();
  ev->add_option("--threshold", ev_threshold, "decision threshold");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_losses = "all";
  int gc_points = 1000;
  uint64_t gc_seed = 1;
  bool gc_negate = false, gc_model = false;
  gc->add_option("--losses", gc_losses, "all|mdwa|wdi");
  gc->add_option("--points", gc_points, "random points per loss");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_flag("--model", gc_model, "also check model parameter gradients");
  gc->add_flag("--negate", gc_negate, "negate analytic gradients (must fail)");

  auto* pr = app.add_subcommand("params", "Parameter and FLOP report for a config");
  std::string pr_config;
  pr->add_option("--config", pr_config, "run config JSON")->required();

  auto* cv = app.add_subcommand("curves", "Loss-curve CSV for the weighting variants");
  std::string cv_out;
  double cv_margin = 0.1;
  int cv_steps = 199;
  cv->add_option("--out", cv_out, "output CSV path (default stdout)");
  cv->add_option("--margin", cv_margin, "margin m");
  cv->add_option("--steps", cv_steps, "probability grid points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    StrOut manifest;
    auf_status s = auf_generate_dataset(gen_spec.c_str(), gen_out.c_str(), &manifest.s);
    if (s != AUF_OK) return status_to_exit(s);
    std::cout << manifest.s << "\n";
    return 0;
  }

  if (tr->parsed()) {
    ModelHandle model;
    auf_status s = auf_model_create(read_file(tr_config).c_str(), &model.m);
    if (s != AUF_OK) return status_to_exit(s);
    DatasetHandle ds;
    s = auf_dataset_open(tr_data.c_str(), &ds.d);
    if (s != AUF_OK) return status_to_exit(s);
    StrOut metrics;
    s = auf_train(model.m, ds.d, &metrics.s);
    if (s != AUF_OK) return status_to_exit(s);
    if (!tr_out.empty()) {
      s = auf_model_save(model.m, tr_out.c_str());
      if (s != AUF_OK) return status_to_exit(s);
    }
    if (!tr_metrics.empty()) {
      if (!write_file(tr_metrics, metrics.s)) {
        std::cerr << "error: cannot write " << tr_metrics << "\n";
        return 1;
      }
    } else {
      std::cout << metrics.s << "\n";
    }
    return 0;
  }

  if (ev->parsed()) {
    ModelHandle model;
    auf_status s = auf_model_load(ev_ckpt.c_str(), &model.m);
    if (s != AUF_OK) return status_to_exit(s);
    DatasetHandle ds;
    s = auf_dataset_open(ev_data.c_str(), &ds.d);
    if (s != AUF_OK) return status_to_exit(s);
    StrOut metrics;
    s = auf_evaluate(model.m, ds.d, ev_threshold, &metrics.s);
    if (s != AUF_OK) return status_to_exit(s);
    std::cout << metrics.s << "\n";
    return 0;
  }

  if (gc->parsed()) {
    std::string opts = "{\"losses\":\"" + gc_losses + "\",\"points\":" + std::to_string(gc_points) +
                       ",\"seed\":" + std::to_string(gc_seed) +
                       ",\"negate_hook\":" + (gc_negate ? "true" : "false") +
                       ",\"model\":" + (gc_model ? "true" : "false") + "}";
    StrOut report;
    auf_status s = auf_gradcheck(opts.c_str(), &report.s);
    if (s != AUF_OK) return status_to_exit(s);
    std::cout << report.s << "\n";
    const bool pass = std::string(report.s).find("\"pass\": false") == std::string::npos;
    return pass ? 0 : 1;
  }

  if (pr->parsed()) {
    ModelHandle model;
    auf_status s = auf_model_create(read_file(pr_config).c_str(), &model.m);
    if (s != AUF_OK) return status_to_exit(s);
    StrOut report;
    s = auf_param_report(model.m, &report.s);
    if (s != AUF_OK) return status_to_exit(s);
    std::cout << report.s << "\n";
    return 0;
  }

  if (cv->parsed()) {
    StrOut csv;
    auf_status s = auf_loss_curves(cv_margin, cv_steps, &csv.s);
    if (s != AUF_OK) return status_to_exit(s);
    if (!cv_out.empty()) {
      if (!write_file(cv_out, csv.s)) {
        std::cerr << "error: cannot write " << cv_out << "\n";
        return 1;
      }
    } else {
      std::cout << csv.s;
    }
    return 0;
  }

  return 2;
}
