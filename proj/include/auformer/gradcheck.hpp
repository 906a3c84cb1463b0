#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "auformer/losses.hpp"
#include "auformer/model.hpp"

namespace auf {

struct GradCheckEntry {
  std::string loss;
  std::string point;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tolerance = 1e-5;
  bool pass = true;

  void add(GradCheckEntry e) {
    max_rel_err = std::max(max_rel_err, e.rel_err);
    if (e.rel_err > tolerance) pass = false;
    entries.push_back(std::move(e));
  }
};

// Scale floor 1e-5: central differences of an O(1) loss carry ~1e-12 of
// roundoff, so components below the floor are compared in absolute terms.
inline double rel_err_of(double a, double n) {
  const double scale = std::max(std::max(std::fabs(a), std::fabs(n)), 1e-5);
  return std::fabs(a - n) / scale;
}

namespace detail {

template <class LossFn>
double central_diff(LossFn&& value_at, Tensor64& z, size_t k, double h) {
  const double z0 = z.data[k];
  z.data[k] = z0 + h;
  const double up = value_at();
  z.data[k] = z0 - h;
  const double dn = value_at();
  z.data[k] = z0;
  return (up - dn) / (2.0 * h);
}

// Richardson-extrapolated central difference: O(h^4) truncation lets a
// larger step keep roundoff below the 1e-6 verification scale.
template <class LossFn>
double richardson_diff(LossFn&& value_at, Tensor64& z, size_t k, double h) {
  const double dh = central_diff(value_at, z, k, h);
  const double dh2 = central_diff(value_at, z, k, h / 2.0);
  return (4.0 * dh2 - dh) / 3.0;
}

}  // namespace detail

// Finite-difference verification of the analytic logit gradients of the
// MDWA / WDI / total losses at random (rates, margin, logits, labels)
// points. Points closer than kink_margin to the p = m kink are resampled.
// negate_hook flips the analytic sign (negative-control test hook).
inline GradCheckReport gradcheck_losses(const std::string& which, int points, uint64_t seed,
                                        double tolerance = 1e-5, bool negate_hook = false) {
  if (points < 1) throw ConfigError("gradcheck: points >= 1 required");
  const bool do_mdwa = which == "all" || which == "mdwa";
  const bool do_wdi = which == "all" || which == "wdi";
  const bool do_total = which == "all";
  if (!do_mdwa && !do_wdi) throw ConfigError("gradcheck: losses must be all|mdwa|wdi");
  GradCheckReport report;
  report.tolerance = tolerance;
  Rng rng(seed);
  const int n_au = 4;
  const double h = 5e-4, kink_margin = 1e-3;  // exclusion covers the FD probe width
  const double sign = negate_hook ? -1.0 : 1.0;
  for (int pt = 0; pt < points; ++pt) {
    std::vector<double> rates(n_au);
    for (auto& r : rates) r = 0.05 + 0.9 * rng.next_double();
    const double m = 0.05 + 0.25 * rng.next_double();
    LossConfig cfg = LossConfig::from_rates(rates, m);
    Tensor64 z = Tensor64::zeros({1, n_au});
    Tensor64 y = Tensor64::zeros({1, n_au});
    Tensor64 za = Tensor64::zeros({1, n_au});
    for (int i = 0; i < n_au; ++i) {
      do {
        z.at(0, i) = -4.0 + 8.0 * rng.next_double();
      } while (std::fabs(sigmoid(z.at(0, i)) - m) < kink_margin);
      do {
        za.at(0, i) = -4.0 + 8.0 * rng.next_double();
      } while (std::fabs(sigmoid(za.at(0, i)) - m) < kink_margin);
      y.at(0, i) = rng.next_double() < 0.5 ? 0.0 : 1.0;
    }
    auto probs_of = [](const Tensor64& logits) {
      Tensor64 p = logits;
      for (auto& v : p.data) v = sigmoid(v);
      return p;
    };
    const size_t k = rng.next_below(static_cast<uint64_t>(n_au));
    char where[128];
    std::snprintf(where, sizeof(where), "p=%.6f y=%d m=%.4f gamma=%.4f",
                  sigmoid(z.data[k]), static_cast<int>(y.data[k]), m, cfg.gamma[k]);
    if (do_mdwa) {
      const double analytic = sign * mdwa_loss(probs_of(z), y, cfg).grad_wrt_logits.data[k];
      const double numeric = detail::richardson_diff(
          [&]() { return static_cast<double>(mdwa_loss(probs_of(z), y, cfg).value); }, z, k, h);
      report.add({"mdwa", where, analytic, numeric, rel_err_of(analytic, numeric)});
    }
    if (do_wdi) {
      const double analytic = sign * wdi_loss(probs_of(z), y, cfg).grad_wrt_logits.data[k];
      const double numeric = detail::richardson_diff(
          [&]() { return static_cast<double>(wdi_loss(probs_of(z), y, cfg).value); }, z, k, h);
      report.add({"wdi", where, analytic, numeric, rel_err_of(analytic, numeric)});
    }
    if (do_total) {
      {
        const double analytic =
            sign * total_loss(probs_of(z), probs_of(za), y, cfg).grad_logits.data[k];
        const double numeric = detail::richardson_diff(
            [&]() {
              return static_cast<double>(total_loss(probs_of(z), probs_of(za), y, cfg).value);
            },
            z, k, h);
        report.add({"total", where, analytic, numeric, rel_err_of(analytic, numeric)});
      }
      {
        const double analytic =
            sign * total_loss(probs_of(z), probs_of(za), y, cfg).grad_aux_logits.data[k];
        const double numeric = detail::richardson_diff(
            [&]() {
              return static_cast<double>(total_loss(probs_of(z), probs_of(za), y, cfg).value);
            },
            za, k, h);
        report.add({"total_aux", where, analytic, numeric, rel_err_of(analytic, numeric)});
      }
    }
  }
  return report;
}

// End-to-end check: analytic parameter gradients of the full model against
// central differences of the total loss, in f64.
inline GradCheckReport gradcheck_model(const ModelConfig& cfg, int n_params, uint64_t seed,
                                       double tolerance = 1e-3) {
  GradCheckReport report;
  report.tolerance = tolerance;
  AUFormerModel<double> model = make_model<double>(cfg, Rng::derive(seed, 3));
  Rng rng(seed);
  Tensor64 image = Tensor64::zeros({cfg.vit.channels, cfg.vit.image_size, cfg.vit.image_size});
  for (auto& v : image.data) v = rng.next_normal() * 0.5;
  Tensor64 y = Tensor64::zeros({1, cfg.num_aus});
  for (auto& v : y.data) v = rng.next_double() < 0.5 ? 0.0 : 1.0;
  std::vector<double> rates(static_cast<size_t>(cfg.num_aus));
  for (auto& r : rates) r = 0.15 + 0.7 * rng.next_double();
  const LossConfig loss_cfg = LossConfig::from_rates(rates);

  auto loss_value = [&]() {
    ModelCache<double> cache;
    ModelOutput<double> out = model_forward(image, model, cache);
    Tensor64 p = Tensor64::zeros({1, cfg.num_aus});
    Tensor64 ap = Tensor64::zeros({1, cfg.num_aus});
    for (int i = 0; i < cfg.num_aus; ++i) {
      p.at(0, i) = out.probs.data[static_cast<size_t>(i)];
      ap.at(0, i) = out.aux_probs.data[static_cast<size_t>(i)];
    }
    return static_cast<double>(total_loss(p, ap, y, loss_cfg).value);
  };

  auto params = learnable_parameters(model);
  for (auto& [name, p] : params) p->zero_grad();
  {
    ModelCache<double> cache;
    ModelOutput<double> out = model_forward(image, model, cache);
    Tensor64 p = Tensor64::zeros({1, cfg.num_aus});
    Tensor64 ap = Tensor64::zeros({1, cfg.num_aus});
    for (int i = 0; i < cfg.num_aus; ++i) {
      p.at(0, i) = out.probs.data[static_cast<size_t>(i)];
      ap.at(0, i) = out.aux_probs.data[static_cast<size_t>(i)];
    }
    TotalLoss<double> loss = total_loss(p, ap, y, loss_cfg);
    Tensor64 dz = Tensor64::zeros({cfg.num_aus});
    Tensor64 daux = Tensor64::zeros({cfg.num_aus});
    for (int i = 0; i < cfg.num_aus; ++i) {
      dz.data[static_cast<size_t>(i)] = loss.grad_logits.at(0, i);
      daux.data[static_cast<size_t>(i)] = loss.grad_aux_logits.at(0, i);
    }
    model_backward(model, cache, dz, daux);
  }

  const double h = 1e-5;
  for (int t = 0; t < n_params; ++t) {
    const size_t pi = rng.next_below(params.size());
    Param<double>* prm = params[pi].second;
    const size_t k = rng.next_below(prm->v.numel());
    const double analytic = prm->g.data[k];
    const double w0 = prm->v.data[k];
    prm->v.data[k] = w0 + h;
    const double up = loss_value();
    prm->v.data[k] = w0 - h;
    const double dn = loss_value();
    prm->v.data[k] = w0;
    const double numeric = (up - dn) / (2.0 * h);
    report.add({"model_param", params[pi].first + "[" + std::to_string(k) + "]", analytic, numeric,
                rel_err_of(analytic, numeric)});
  }
  return report;
}

// CSV of negative-branch logit gradient curves on a monotone p grid:
// WCE, WA (focus 2), MWA, and MDWA at several gamma values.
inline std::string loss_curves_csv(double margin = 0.1, int steps = 199) {
  std::ostringstream os;
  os << "p,wce,wa,mwa,mdwa_gamma_1.0,mdwa_gamma_1.5,mdwa_gamma_2.0\n";
  for (int i = 1; i <= steps; ++i) {
    const double p = static_cast<double>(i) / (steps + 1);
    os << p << "," << wce_neg_grad(p) << "," << wa_neg_grad(p, 2.0) << ","
       << mwa_neg_grad(p, margin) << "," << mdwa_neg_grad(p, 1.0, margin) << ","
       << mdwa_neg_grad(p, 1.5, margin) << "," << mdwa_neg_grad(p, 2.0, margin) << "\n";
  }
  return os.str();
}

}  // namespace auf
