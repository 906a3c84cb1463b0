#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "auformer/datagen.hpp"
#include "auformer/losses.hpp"
#include "auformer/metrics.hpp"
#include "auformer/model.hpp"
#include "auformer/threads.hpp"

namespace auf {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  double threshold = 0.5;
  double early_stop_f1 = 0.0;  // stop once train F1 reaches this; 0 = off
  // loss settings
  double margin = 0.1;
  double b_l = 1.0, b_r = 2.0;
  double dice_eps = 1.0;
  bool use_gamma = true;
  bool use_margin = true;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate > 0 required");
    if (epochs < 0 || batch_size < 1) throw ConfigError("train: bad epochs/batch_size");
  }
};

struct EpochStats {
  double total = 0.0, mdwa = 0.0, wdi = 0.0, aux_mdwa = 0.0;
  double train_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int stopped_epoch = 0;  // epochs actually run
};

// AdamW with decoupled weight decay, constant learning rate.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Param<T>*>> params, double lr, double wd)
      : params_(std::move(params)), lr_(lr), wd_(wd) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<T>::zeros(p->v.shape));
      v_.push_back(Tensor<T>::zeros(p->v.shape));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Param<T>* p = params_[pi].second;
      for (size_t i = 0; i < p->v.numel(); ++i) {
        const double g = static_cast<double>(p->g.data[i]);
        const double mt = beta1_ * static_cast<double>(m_[pi].data[i]) + (1.0 - beta1_) * g;
        const double vt = beta2_ * static_cast<double>(v_[pi].data[i]) + (1.0 - beta2_) * g * g;
        m_[pi].data[i] = static_cast<T>(mt);
        v_[pi].data[i] = static_cast<T>(vt);
        const double mhat = mt / bc1, vhat = vt / bc2;
        double w = static_cast<double>(p->v.data[i]);
        w -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w);
        p->v.data[i] = static_cast<T>(w);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Param<T>*>> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

template <class T>
LossConfig loss_config_for(const std::vector<SampleRecord>& data, const TrainConfig& cfg) {
  std::vector<ManifestRow> rows;
  for (const auto& r : data) rows.push_back({r.id, r.subject_id, r.labels, ""});
  return LossConfig::from_rates(occurrence_rates(rows), cfg.margin, cfg.b_l, cfg.b_r, cfg.dice_eps,
                                cfg.use_gamma, cfg.use_margin);
}

template <class T>
Metrics evaluate(AUFormerModel<T>& model, const std::vector<SampleRecord>& data,
                 double threshold = 0.5);

// Deterministic training loop: fixed sample order per (seed, epoch), fixed
// reduction order, single-threaded steps. Only learnable parameters move.
template <class T>
TrainHistory train(AUFormerModel<T>& model, const std::vector<SampleRecord>& data,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: dataset is empty");
  const int n_au = model.cfg.num_aus;
  if (static_cast<int>(data[0].labels.size()) != n_au)
    throw ShapeError("train: dataset label width != model num_aus");
  const LossConfig loss_cfg = loss_config_for<T>(data, cfg);
  AdamW<T> opt(learnable_parameters(model), cfg.learning_rate, cfg.weight_decay);

  TrainHistory hist;
  const int n = static_cast<int>(data.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  ModelCache<T> cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, 0x7e0c0000ULL + static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    EpochStats stats;
    std::vector<long long> tp(static_cast<size_t>(n_au), 0), fp(tp), fn(tp);
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - start);
      opt.zero_grad();
      double btotal = 0.0, bmdwa = 0.0, bwdi = 0.0, baux = 0.0;
      for (int bi = 0; bi < bsz; ++bi) {
        const SampleRecord& rec = data[static_cast<size_t>(order[static_cast<size_t>(start + bi)])];
        ModelOutput<T> out = model_forward(rec.image.template cast<T>(), model, cache);
        Tensor<T> p = Tensor<T>::zeros({1, n_au});
        Tensor<T> ap = Tensor<T>::zeros({1, n_au});
        Tensor<T> y = Tensor<T>::zeros({1, n_au});
        for (int k = 0; k < n_au; ++k) {
          p.at(0, k) = out.probs.at(static_cast<size_t>(k));
          ap.at(0, k) = out.aux_probs.at(static_cast<size_t>(k));
          y.at(0, k) = static_cast<T>(rec.labels[static_cast<size_t>(k)]);
          const int pred = out.probs.at(static_cast<size_t>(k)) >= cfg.threshold ? 1 : 0;
          const int yl = rec.labels[static_cast<size_t>(k)];
          if (pred && yl)
            ++tp[static_cast<size_t>(k)];
          else if (pred && !yl)
            ++fp[static_cast<size_t>(k)];
          else if (!pred && yl)
            ++fn[static_cast<size_t>(k)];
        }
        TotalLoss<T> loss = total_loss(p, ap, y, loss_cfg);
        if (!std::isfinite(static_cast<double>(loss.value)))
          throw Error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
        btotal += loss.value;
        bmdwa += loss.mdwa;
        bwdi += loss.wdi;
        baux += loss.aux_mdwa;
        const T inv_b = T(1) / static_cast<T>(bsz);
        Tensor<T> dz = Tensor<T>::zeros({n_au});
        Tensor<T> daux = Tensor<T>::zeros({n_au});
        for (int k = 0; k < n_au; ++k) {
          dz.at(static_cast<size_t>(k)) = loss.grad_logits.at(0, k) * inv_b;
          daux.at(static_cast<size_t>(k)) = loss.grad_aux_logits.at(0, k) * inv_b;
        }
        model_backward(model, cache, dz, daux);
      }
      opt.step();
      stats.total += btotal / bsz;
      stats.mdwa += bmdwa / bsz;
      stats.wdi += bwdi / bsz;
      stats.aux_mdwa += baux / bsz;
      ++batches;
    }
    if (batches > 0) {
      stats.total /= batches;
      stats.mdwa /= batches;
      stats.wdi /= batches;
      stats.aux_mdwa /= batches;
    }
    stats.train_f1 = f1_from_counts(tp, fp, fn).avg_f1;
    // The running F1 lags the post-epoch weights; once it gets close,
    // re-score the train split with frozen weights before deciding to stop.
    if (cfg.early_stop_f1 > 0.0 && stats.train_f1 >= cfg.early_stop_f1 - 0.02)
      stats.train_f1 = evaluate(model, data, cfg.threshold).avg_f1;
    hist.epochs.push_back(stats);
    hist.stopped_epoch = epoch + 1;
    if (cfg.early_stop_f1 > 0.0 && stats.train_f1 >= cfg.early_stop_f1) break;
  }
  return hist;
}

// Parallel over samples; results independent of the worker count.
template <class T>
Metrics evaluate(AUFormerModel<T>& model, const std::vector<SampleRecord>& data,
                 double threshold) {
  if (data.empty()) throw ConfigError("evaluate: dataset is empty");
  const int n_au = model.cfg.num_aus;
  std::vector<std::vector<double>> probs(data.size());
  std::vector<std::vector<int>> labels(data.size());
  parallel_for(static_cast<int>(data.size()), [&](int i) {
    ModelCache<T> cache;
    AUFormerModel<T>& mref = model;  // forward mutates caches only
    ModelOutput<T> out = model_forward(data[static_cast<size_t>(i)].image.template cast<T>(), mref, cache);
    std::vector<double> row(static_cast<size_t>(n_au));
    for (int k = 0; k < n_au; ++k) row[static_cast<size_t>(k)] = out.probs.at(static_cast<size_t>(k));
    probs[static_cast<size_t>(i)] = std::move(row);
    labels[static_cast<size_t>(i)] = data[static_cast<size_t>(i)].labels;
  });
  return evaluate_f1(probs, labels, threshold);
}

}  // namespace auf
