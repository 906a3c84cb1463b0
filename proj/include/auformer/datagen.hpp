#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "auformer/tensor.hpp"

namespace auf {

// Synthetic multi-label task: per-AU blobs of varying scale at fixed
// locations, pairwise-coupled labels, per-subject appearance offsets.
struct SyntheticSpec {
  int n = 4;  // pseudo-AU count
  int image_size = 32;
  int channels = 1;
  std::vector<double> blob_sigma;            // per-AU blob radius, px
  std::vector<double> base_rate;             // per-AU marginal target
  std::vector<std::vector<double>> coupling;  // symmetric logit couplings, zero diagonal
  double noise_sigma = 0.05;
  int subjects = 8;
  int subject_base = 0;  // first subject id, for disjoint-subject datasets
  int samples = 256;
  uint64_t seed = 1;

  void validate() const;
  static SyntheticSpec from_json_text(const std::string& text);
  static SyntheticSpec from_json_file(const std::string& path);
  std::string to_json() const;
};

struct ManifestRow {
  int id = 0;
  int subject_id = 0;
  std::vector<int> labels;
  std::string file;
};

struct SampleRecord {
  int id = 0;
  int subject_id = 0;
  Tensor32 image;
  std::vector<int> labels;
};

// Exact probability table over the 2^N label states of the pairwise model
// (state bit i = label i). Calibrated so zero couplings reproduce the base
// rates exactly.
std::vector<double> label_distribution(const SyntheticSpec& spec);

// Deterministic per (spec.seed, sample id).
std::vector<int> sample_labels(const SyntheticSpec& spec, const std::vector<double>& dist,
                               uint64_t sample_seed);
Tensor32 render_image(const SyntheticSpec& spec, const std::vector<int>& labels, int subject_id,
                      uint64_t sample_seed);

// Writes sample files + manifest.jsonl + stats.json + spec.json under
// out_dir; returns the manifest path. Byte-identical for a fixed spec.
std::string generate_dataset(const SyntheticSpec& spec, const std::string& out_dir);

std::vector<ManifestRow> read_manifest(const std::string& path);
std::vector<double> occurrence_rates(const std::vector<ManifestRow>& rows);

// Loads images referenced by the manifest (paths relative to its directory).
std::vector<SampleRecord> load_dataset(const std::string& manifest_path);

}  // namespace auf
