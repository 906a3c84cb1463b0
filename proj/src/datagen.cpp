#include "auformer/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "auformer/errors.hpp"
#include "auformer/rng.hpp"
#include "auformer/serialize.hpp"
#include "auformer/threads.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace auf {

void SyntheticSpec::validate() const {
  if (n < 1 || n > 12) throw ConfigError("spec: n must be in [1, 12] (exact enumeration)");
  if (image_size < 8) throw ConfigError("spec: image_size too small");
  if (channels != 1 && channels != 3) throw ConfigError("spec: channels must be 1 or 3");
  if (static_cast<int>(blob_sigma.size()) != n || static_cast<int>(base_rate.size()) != n)
    throw ConfigError("spec: blob_sigma/base_rate must have n entries");
  for (double r : base_rate)
    if (r <= 0.0 || r >= 1.0) throw ConfigError("spec: base rates must be in (0, 1)");
  if (static_cast<int>(coupling.size()) != n) throw ConfigError("spec: coupling must be n x n");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(coupling[static_cast<size_t>(i)].size()) != n)
      throw ConfigError("spec: coupling must be n x n");
    if (coupling[static_cast<size_t>(i)][static_cast<size_t>(i)] != 0.0)
      throw ConfigError("spec: coupling diagonal must be zero");
    for (int j = 0; j < n; ++j)
      if (coupling[static_cast<size_t>(i)][static_cast<size_t>(j)] !=
          coupling[static_cast<size_t>(j)][static_cast<size_t>(i)])
        throw ConfigError("spec: coupling must be symmetric");
  }
  if (subjects < 1) throw ConfigError("spec: subjects >= 1 required");
  if (samples < 1) throw ConfigError("spec: samples >= 1 required");
}

namespace {

SyntheticSpec defaults_for(int n) {
  SyntheticSpec s;
  s.n = n;
  s.blob_sigma.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    s.blob_sigma[static_cast<size_t>(i)] = 1.5 + 3.0 * (n > 1 ? double(i) / (n - 1) : 0.0);
  s.base_rate.assign(static_cast<size_t>(n), 0.3);
  s.coupling.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  return s;
}

}  // namespace

SyntheticSpec SyntheticSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("spec: invalid JSON: ") + e.what());
  }
  static const std::set<std::string> known = {"n",          "image_size", "channels", "blob_sigma",
                                             "base_rate",  "coupling",   "noise_sigma",
                                             "subjects",   "subject_base", "samples", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("spec: unknown key '" + it.key() + "'");
  SyntheticSpec s = defaults_for(j.value("n", 4));
  try {
    s.image_size = j.value("image_size", s.image_size);
    s.channels = j.value("channels", s.channels);
    if (j.contains("blob_sigma")) s.blob_sigma = j["blob_sigma"].get<std::vector<double>>();
    if (j.contains("base_rate")) s.base_rate = j["base_rate"].get<std::vector<double>>();
    if (j.contains("coupling")) s.coupling = j["coupling"].get<std::vector<std::vector<double>>>();
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.subjects = j.value("subjects", s.subjects);
    s.subject_base = j.value("subject_base", s.subject_base);
    s.samples = j.value("samples", s.samples);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("spec: bad field type: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open spec file: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string SyntheticSpec::to_json() const {
  json j;
  j["n"] = n;
  j["image_size"] = image_size;
  j["channels"] = channels;
  j["blob_sigma"] = blob_sigma;
  j["base_rate"] = base_rate;
  j["coupling"] = coupling;
  j["noise_sigma"] = noise_sigma;
  j["subjects"] = subjects;
  j["subject_base"] = subject_base;
  j["samples"] = samples;
  j["seed"] = seed;
  return j.dump(2);
}

std::vector<double> label_distribution(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.n;
  const size_t states = size_t(1) << n;
  std::vector<double> logp(states);
  double mx = -1e300;
  for (size_t s = 0; s < states; ++s) {
    double e = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(s >> i & 1)) continue;
      const double r = spec.base_rate[static_cast<size_t>(i)];
      e += std::log(r / (1.0 - r));
      for (int k = i + 1; k < n; ++k)
        if (s >> k & 1) e += spec.coupling[static_cast<size_t>(i)][static_cast<size_t>(k)];
    }
    logp[s] = e;
    mx = std::max(mx, e);
  }
  double z = 0.0;
  for (double& v : logp) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : logp) v /= z;
  return logp;
}

std::vector<int> sample_labels(const SyntheticSpec& spec, const std::vector<double>& dist,
                               uint64_t sample_seed) {
  Rng rng(sample_seed);
  const double u = rng.next_double();
  double acc = 0.0;
  size_t state = dist.size() - 1;
  for (size_t s = 0; s < dist.size(); ++s) {
    acc += dist[s];
    if (u < acc) {
      state = s;
      break;
    }
  }
  std::vector<int> labels(static_cast<size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) labels[static_cast<size_t>(i)] = int(state >> i & 1);
  return labels;
}

Tensor32 render_image(const SyntheticSpec& spec, const std::vector<int>& labels, int subject_id,
                      uint64_t sample_seed) {
  const int sz = spec.image_size;
  Tensor32 img = Tensor32::zeros({spec.channels, sz, sz});
  // subject appearance: position jitter + intensity shift
  Rng srng(Rng::derive(spec.seed, 0xabcdef00ULL + static_cast<uint64_t>(subject_id)));
  const double jx = std::floor(srng.next_double() * 5.0) - 2.0;
  const double jy = std::floor(srng.next_double() * 5.0) - 2.0;
  const double intensity = 0.8 + 0.4 * srng.next_double();
  const double cx0 = sz / 2.0, cy0 = sz / 2.0, ring = sz / 4.0;
  for (int i = 0; i < spec.n; ++i) {
    if (!labels[static_cast<size_t>(i)]) continue;
    const double ang = 2.0 * M_PI * i / spec.n;
    const double cx = cx0 + ring * std::cos(ang) + jx;
    const double cy = cy0 + ring * std::sin(ang) + jy;
    const double sg = spec.blob_sigma[static_cast<size_t>(i)];
    for (int c = 0; c < spec.channels; ++c)
      for (int y = 0; y < sz; ++y)
        for (int x = 0; x < sz; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          img.at(c, y, x) += static_cast<float>(intensity * std::exp(-d2 / (2.0 * sg * sg)));
        }
  }
  Rng nrng(Rng::derive(sample_seed, 0x9e3779b9ULL));
  for (auto& v : img.data) v += static_cast<float>(spec.noise_sigma * nrng.next_normal());
  return img;
}

namespace {

SampleRecord make_record(const SyntheticSpec& spec, const std::vector<double>& dist, int id) {
  const uint64_t sseed = Rng::derive(spec.seed, static_cast<uint64_t>(id));
  SampleRecord rec;
  rec.id = id;
  rec.subject_id = spec.subject_base + id % spec.subjects;
  rec.labels = sample_labels(spec, dist, sseed);
  rec.image = render_image(spec, rec.labels, rec.subject_id, sseed);
  return rec;
}

}  // namespace

std::string generate_dataset(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir: " + out_dir);
  const std::vector<double> dist = label_distribution(spec);
  std::vector<SampleRecord> recs(static_cast<size_t>(spec.samples));
  parallel_for(spec.samples, [&](int id) { recs[static_cast<size_t>(id)] = make_record(spec, dist, id); });
  std::ostringstream manifest;
  for (const auto& rec : recs) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.autd", rec.id);
    write_sample_tensor((fs::path(out_dir) / name).string(), rec.image);
    json row;
    row["id"] = rec.id;
    row["subject_id"] = rec.subject_id;
    row["labels"] = rec.labels;
    row["file"] = name;
    manifest << row.dump() << "\n";
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  {
    std::ofstream os(manifest_path, std::ios::binary);
    if (!os) throw IoError("cannot write manifest: " + manifest_path);
    os << manifest.str();
  }
  {
    std::ofstream os((fs::path(out_dir) / "spec.json").string(), std::ios::binary);
    os << spec.to_json() << "\n";
  }
  {
    std::vector<ManifestRow> rows;
    for (const auto& rec : recs) rows.push_back({rec.id, rec.subject_id, rec.labels, ""});
    json stats;
    stats["samples"] = spec.samples;
    stats["n"] = spec.n;
    stats["occurrence_rates"] = occurrence_rates(rows);
    std::ofstream os((fs::path(out_dir) / "stats.json").string(), std::ios::binary);
    os << stats.dump(2) << "\n";
  }
  return manifest_path;
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      ManifestRow r;
      r.id = j.at("id").get<int>();
      r.subject_id = j.at("subject_id").get<int>();
      r.labels = j.at("labels").get<std::vector<int>>();
      r.file = j.at("file").get<std::string>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(std::string("manifest: bad row: ") + e.what());
    }
  }
  if (rows.empty()) throw FormatError("manifest: no rows");
  return rows;
}

std::vector<double> occurrence_rates(const std::vector<ManifestRow>& rows) {
  if (rows.empty()) throw ConfigError("occurrence_rates: empty manifest");
  const size_t n = rows[0].labels.size();
  std::vector<double> r(n, 0.0);
  for (const auto& row : rows) {
    if (row.labels.size() != n) throw FormatError("manifest: inconsistent label width");
    for (size_t i = 0; i < n; ++i) r[i] += row.labels[i];
  }
  for (auto& v : r) v = std::min(1.0, std::max(1e-3, v / static_cast<double>(rows.size())));
  return r;
}

std::vector<SampleRecord> load_dataset(const std::string& manifest_path) {
  const auto rows = read_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<SampleRecord> out(rows.size());
  parallel_for(static_cast<int>(rows.size()), [&](int i) {
    const auto& row = rows[static_cast<size_t>(i)];
    SampleRecord rec;
    rec.id = row.id;
    rec.subject_id = row.subject_id;
    rec.labels = row.labels;
    rec.image = read_sample_tensor((dir / row.file).string());
    out[static_cast<size_t>(i)] = std::move(rec);
  });
  return out;
}

}  // namespace auf
