#pragma once

#include <cmath>
#include <vector>

#include "auformer/tensor.hpp"

namespace auf {

inline constexpr double kRateFloor = 1e-3;
inline constexpr double kProbEps = 1e-7;

// Class-imbalance weights: omega_i = N (1/r_i) / sum_j (1/r_j); sums to N.
inline std::vector<double> class_weights(const std::vector<double>& rates) {
  if (rates.empty()) throw ConfigError("class_weights: empty rate vector");
  const size_t n = rates.size();
  double inv_sum = 0.0;
  for (double r : rates) {
    if (r <= 0.0 || r > 1.0) throw ConfigError("class_weights: rates must be in (0, 1]");
    inv_sum += 1.0 / r;
  }
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) w[i] = static_cast<double>(n) * (1.0 / rates[i]) / inv_sum;
  return w;
}

// Difficulty exponents: gamma_i = B_L + (B_R - B_L) r_i. Rarer (harder)
// AUs get smaller gamma and thus larger negative-branch gradients.
inline std::vector<double> gamma_schedule(const std::vector<double>& rates, double b_l, double b_r) {
  if (b_l > b_r) throw ConfigError("gamma_schedule: B_L > B_R");
  std::vector<double> g(rates.size());
  for (size_t i = 0; i < rates.size(); ++i) g[i] = b_l + (b_r - b_l) * rates[i];
  return g;
}

struct LossConfig {
  int n = 0;
  std::vector<double> rates;
  std::vector<double> omega;
  std::vector<double> gamma;
  double margin = 0.1;
  double b_l = 1.0, b_r = 2.0;
  double eps = 1.0;

  static LossConfig from_rates(std::vector<double> rates, double margin = 0.1, double b_l = 1.0,
                               double b_r = 2.0, double eps = 1.0, bool use_gamma = true,
                               bool use_margin = true) {
    LossConfig c;
    c.n = static_cast<int>(rates.size());
    for (double& r : rates) r = std::min(1.0, std::max(kRateFloor, r));
    c.rates = rates;
    c.omega = class_weights(rates);
    c.b_l = b_l;
    c.b_r = b_r;
    c.eps = eps;
    c.margin = use_margin ? margin : 0.0;
    c.gamma = use_gamma ? gamma_schedule(rates, b_l, b_r) : std::vector<double>(rates.size(), 1.0);
    return c;
  }
};

template <class T>
struct LossOutput {
  T value = T(0);
  Tensor<T> grad_wrt_logits;  // [batch, N]
};

// Closed-form negative-branch gradient w.r.t. the logit for one AU term
// -p_m^gamma log(1 - p_m): zero below the margin, otherwise
// p_m^g (1/(1-p_m) - g log(1-p_m)/p_m) p (1-p).
template <class T>
T mdwa_neg_grad(T p, T gamma, T margin) {
  if (p < margin) return T(0);
  const T pm = p - margin;
  const T one_m = T(1) - pm;
  // written with pow(pm, g-1) so the pm -> 0 limit is finite for g >= 1
  const T t = std::pow(pm, gamma) / one_m - gamma * std::pow(pm, gamma - T(1)) * std::log(one_m);
  return t * p * (T(1) - p);
}

template <class T>
T clamp_prob(T p) {
  return std::min(T(1) - T(kProbEps), std::max(T(kProbEps), p));
}

// Margin-truncated difficulty-aware weighted asymmetric loss, batch-mean
// over samples and mean over AUs, with the analytic logit gradient.
template <class T>
LossOutput<T> mdwa_loss(const Tensor<T>& p, const Tensor<T>& y, const LossConfig& cfg) {
  const int b = p.dim(0), n = p.dim(1);
  if (n != cfg.n) throw ShapeError("mdwa_loss: AU count mismatch");
  LossOutput<T> out;
  out.grad_wrt_logits = Tensor<T>::zeros({b, n});
  const T inv_bn = T(1) / (static_cast<T>(b) * static_cast<T>(n));
  T total = T(0);
  for (int s = 0; s < b; ++s)
    for (int i = 0; i < n; ++i) {
      const T w = static_cast<T>(cfg.omega[static_cast<size_t>(i)]);
      const T g = static_cast<T>(cfg.gamma[static_cast<size_t>(i)]);
      const T m = static_cast<T>(cfg.margin);
      const T pi = clamp_prob(p.at(s, i));
      if (y.at(s, i) > T(0.5)) {
        total += -w * std::log(pi);
        out.grad_wrt_logits.at(s, i) = w * (pi - T(1)) * inv_bn;
      } else {
        const T pm = std::max(pi - m, T(0));
        if (pm > T(0)) total += -w * std::pow(pm, g) * std::log(T(1) - pm);
        out.grad_wrt_logits.at(s, i) = w * mdwa_neg_grad(pi, g, m) * inv_bn;
      }
    }
  out.value = total * inv_bn;
  return out;
}

// Weighted multi-label dice loss (smooth eps), batch-mean, with gradient.
template <class T>
LossOutput<T> wdi_loss(const Tensor<T>& p, const Tensor<T>& y, const LossConfig& cfg) {
  const int b = p.dim(0), n = p.dim(1);
  if (n != cfg.n) throw ShapeError("wdi_loss: AU count mismatch");
  LossOutput<T> out;
  out.grad_wrt_logits = Tensor<T>::zeros({b, n});
  const T inv_bn = T(1) / (static_cast<T>(b) * static_cast<T>(n));
  const T eps = static_cast<T>(cfg.eps);
  T total = T(0);
  for (int s = 0; s < b; ++s)
    for (int i = 0; i < n; ++i) {
      const T w = static_cast<T>(cfg.omega[static_cast<size_t>(i)]);
      const T pi = clamp_prob(p.at(s, i));
      const T yi = y.at(s, i);
      const T num = T(2) * yi * pi + eps;
      const T den = yi * yi + pi * pi + eps;
      total += w * (T(1) - num / den);
      const T d_dp = -(T(2) * yi * den - num * T(2) * pi) / (den * den);
      out.grad_wrt_logits.at(s, i) = w * d_dp * pi * (T(1) - pi) * inv_bn;
    }
  out.value = total * inv_bn;
  return out;
}

// L = L_MDWA(p) + L_WDI(p) + L'_MDWA(aux_p); the auxiliary term shares cfg.
template <class T>
struct TotalLoss {
  T value = T(0);
  T mdwa = T(0), wdi = T(0), aux_mdwa = T(0);
  Tensor<T> grad_logits;      // [batch, N]
  Tensor<T> grad_aux_logits;  // [batch, N]
};

template <class T>
TotalLoss<T> total_loss(const Tensor<T>& p, const Tensor<T>& aux_p, const Tensor<T>& y,
                        const LossConfig& cfg) {
  TotalLoss<T> out;
  LossOutput<T> a = mdwa_loss(p, y, cfg);
  LossOutput<T> d = wdi_loss(p, y, cfg);
  LossOutput<T> x = mdwa_loss(aux_p, y, cfg);
  out.mdwa = a.value;
  out.wdi = d.value;
  out.aux_mdwa = x.value;
  out.value = a.value + d.value + x.value;
  out.grad_logits = a.grad_wrt_logits;
  out.grad_logits += d.grad_wrt_logits;
  out.grad_aux_logits = x.grad_wrt_logits;
  return out;
}

// Reference losses for the gradient-curve comparison: WCE (weighted BCE),
// WA (no margin, constant focusing), MWA (gamma fixed to 1).

template <class T>
LossOutput<T> wce_loss(const Tensor<T>& p, const Tensor<T>& y, const LossConfig& cfg) {
  const int b = p.dim(0), n = p.dim(1);
  LossOutput<T> out;
  out.grad_wrt_logits = Tensor<T>::zeros({b, n});
  const T inv_bn = T(1) / (static_cast<T>(b) * static_cast<T>(n));
  T total = T(0);
  for (int s = 0; s < b; ++s)
    for (int i = 0; i < n; ++i) {
      const T w = static_cast<T>(cfg.omega[static_cast<size_t>(i)]);
      const T pi = clamp_prob(p.at(s, i));
      if (y.at(s, i) > T(0.5)) {
        total += -w * std::log(pi);
        out.grad_wrt_logits.at(s, i) = w * (pi - T(1)) * inv_bn;
      } else {
        total += -w * std::log(T(1) - pi);
        out.grad_wrt_logits.at(s, i) = w * pi * inv_bn;
      }
    }
  out.value = total * inv_bn;
  return out;
}

inline LossConfig wa_config(const LossConfig& cfg, double focus) {
  LossConfig c = cfg;
  c.margin = 0.0;
  c.gamma.assign(static_cast<size_t>(cfg.n), focus);
  return c;
}

inline LossConfig mwa_config(const LossConfig& cfg) {
  LossConfig c = cfg;
  c.gamma.assign(static_cast<size_t>(cfg.n), 1.0);
  return c;
}

// Per-term negative-branch logit gradients (omega = 1), for curve emission.
template <class T>
T wce_neg_grad(T p) {
  return p;
}
template <class T>
T wa_neg_grad(T p, T focus) {
  return mdwa_neg_grad(p, focus, T(0));
}
template <class T>
T mwa_neg_grad(T p, T margin) {
  return mdwa_neg_grad(p, T(1), margin);
}

}  // namespace auf
