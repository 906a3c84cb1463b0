#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "auformer/datagen.hpp"
#include "auformer/errors.hpp"
#include "auformer/rng.hpp"

namespace auf {

struct Metrics {
  std::vector<double> per_au_f1;
  double avg_f1 = 0.0;
  std::vector<long long> tp, fp, fn;
};

// Multi-label F1 from binary predictions; 0/0 scores 0 by convention.
inline Metrics f1_from_counts(const std::vector<long long>& tp, const std::vector<long long>& fp,
                              const std::vector<long long>& fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  for (size_t i = 0; i < tp.size(); ++i) {
    const long long den = 2 * tp[i] + fp[i] + fn[i];
    m.per_au_f1.push_back(den == 0 ? 0.0 : 2.0 * tp[i] / static_cast<double>(den));
  }
  m.avg_f1 = m.per_au_f1.empty()
                 ? 0.0
                 : std::accumulate(m.per_au_f1.begin(), m.per_au_f1.end(), 0.0) / m.per_au_f1.size();
  return m;
}

// probs: [samples][N] prediction probabilities; labels binary.
inline Metrics evaluate_f1(const std::vector<std::vector<double>>& probs,
                           const std::vector<std::vector<int>>& labels, double threshold = 0.5) {
  if (probs.size() != labels.size() || probs.empty()) throw ShapeError("evaluate_f1: size mismatch");
  const size_t n = probs[0].size();
  std::vector<long long> tp(n, 0), fp(n, 0), fn(n, 0);
  for (size_t s = 0; s < probs.size(); ++s)
    for (size_t i = 0; i < n; ++i) {
      const int pred = probs[s][i] >= threshold ? 1 : 0;
      const int y = labels[s][i];
      if (pred && y)
        ++tp[i];
      else if (pred && !y)
        ++fp[i];
      else if (!pred && y)
        ++fn[i];
    }
  return f1_from_counts(tp, fp, fn);
}

struct FoldSpec {
  int k = 0;
  std::map<int, int> assignment;  // subject id -> fold index
};

// Subject-exclusive partition, balanced by sample count: subjects sorted by
// count (largest first, seeded shuffle breaking ties), each assigned to the
// currently smallest fold.
inline FoldSpec subject_folds(const std::vector<ManifestRow>& rows, int k, uint64_t seed) {
  if (k < 1) throw ConfigError("subject_folds: k >= 1 required");
  std::map<int, long long> counts;
  for (const auto& r : rows) ++counts[r.subject_id];
  if (static_cast<int>(counts.size()) < k)
    throw ConfigError("subject_folds: fewer subjects than folds");
  std::vector<std::pair<int, long long>> subjects(counts.begin(), counts.end());
  Rng rng(seed);
  for (size_t i = subjects.size(); i > 1; --i)
    std::swap(subjects[i - 1], subjects[rng.next_below(i)]);
  std::stable_sort(subjects.begin(), subjects.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  FoldSpec spec;
  spec.k = k;
  std::vector<long long> fold_size(static_cast<size_t>(k), 0);
  for (const auto& [subj, cnt] : subjects) {
    int best = 0;
    for (int f = 1; f < k; ++f)
      if (fold_size[static_cast<size_t>(f)] < fold_size[static_cast<size_t>(best)]) best = f;
    spec.assignment[subj] = best;
    fold_size[static_cast<size_t>(best)] += cnt;
  }
  return spec;
}

}  // namespace auf
