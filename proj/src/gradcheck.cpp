#include "stlkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stlkit {

namespace {

// Disable dropout: the check runs the train-mode cache path, but the loss
// must be a deterministic function of the parameters.
NetworkConfig without_dropout(NetworkConfig config) {
  for (auto* section : {&config.trunk, &config.classifier_head,
                        &config.localizer_head}) {
    for (auto& spec : *section) {
      if (spec.kind == LayerKind::dropout) spec.rate = 0.0;
    }
  }
  return config;
}

void mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

// Fingerprint of every non-smooth decision taken by a forward pass: ReLU
// gate signs and all pooling argmax choices. Two perturbed passes with the
// same signature share one smooth linearization, so central differences are
// valid between them.
std::uint64_t state_signature(const ModelPlan& plan,
                              const ForwardResult<double>& fwd) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto walk = [&](const std::vector<PlannedLayer>& layers,
                  const std::vector<LayerCache<double>>& caches) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      switch (layers[i].spec.kind) {
        case LayerKind::relu: {
          const auto& in = caches[i].input;
          std::uint64_t bits = 0;
          int nbits = 0;
          for (std::size_t j = 0; j < in.size(); ++j) {
            bits = (bits << 1) | (in[j] > 0.0 ? 1u : 0u);
            if (++nbits == 64) {
              mix(h, bits);
              bits = 0;
              nbits = 0;
            }
          }
          if (nbits > 0) mix(h, bits);
          break;
        }
        case LayerKind::maxpool:
        case LayerKind::global_max_pool:
          for (std::int32_t a : caches[i].argmax) {
            mix(h, static_cast<std::uint64_t>(a));
          }
          break;
        default:
          break;
      }
    }
  };
  walk(plan.trunk, fwd.trunk_cache);
  walk(plan.cls, fwd.cls_cache);
  walk(plan.loc, fwd.loc_cache);
  return h;
}

double loss_of(const NetworkConfig& config, const ModelPlan& plan,
               const ModelParams<double>& params, const Tensor4d& input,
               const Tensor4d& targets, double alpha, std::uint64_t* sig) {
  auto fwd = model_forward(config, plan, params, input, Mode::eval);
  if (sig) *sig = state_signature(plan, fwd);
  return stl_loss(fwd.y_cls, fwd.y_loc, targets, alpha).total;
}

}  // namespace

GradCheckReport gradient_check(const NetworkConfig& raw_config,
                               ModelParams<double>& params,
                               const Tensor4d& input, const Tensor4d& targets,
                               const GradCheckOptions& opts) {
  const NetworkConfig config = without_dropout(raw_config);
  const ModelPlan plan = plan_model(config);

  // Analytic pass.
  auto fwd = model_forward(config, plan, params, input, Mode::train);
  const double base_loss = stl_loss(fwd.y_cls, fwd.y_loc, targets, opts.alpha).total;
  if (!std::isfinite(base_loss)) {
    throw InternalError("gradient check: non-finite base loss");
  }
  model_backward(config, plan, params, fwd, targets, opts.alpha);

  std::uint64_t base_sig = 0;
  loss_of(config, plan, params, input, targets, opts.alpha, &base_sig);

  Rng pick(derive_seed(opts.seed, "gradcheck-subsample"));
  GradCheckReport report;
  for (auto& p : params.tensors) {
    GradCheckParamReport pr;
    pr.name = p.name;

    std::vector<std::size_t> indices(p.value.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::size_t count = indices.size();
    if (opts.subsample_fraction < 1.0) {
      count = std::max<std::size_t>(
          1, static_cast<std::size_t>(opts.subsample_fraction *
                                      static_cast<double>(indices.size())));
      pick.shuffle(indices.begin(), indices.end());
    }

    for (std::size_t ii = 0; ii < count; ++ii) {
      const std::size_t idx = indices[ii];
      const double saved = p.value[idx];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      p.value[idx] = saved + opts.epsilon;
      const double lp = loss_of(config, plan, params, input, targets,
                                opts.alpha, &sig_plus);
      p.value[idx] = saved - opts.epsilon;
      const double lm = loss_of(config, plan, params, input, targets,
                                opts.alpha, &sig_minus);
      p.value[idx] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw InternalError("gradient check: non-finite loss while perturbing " +
                            p.name + "[" + std::to_string(idx) + "]");
      }
      if (sig_plus != base_sig || sig_minus != base_sig) {
        ++pr.excluded;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * opts.epsilon);
      const double analytic = p.grad[idx];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(fd), 1e-12});
      const double rel = std::fabs(analytic - fd) / denom;
      pr.max_rel_err = std::max(pr.max_rel_err, rel);
      ++pr.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
    report.total_checked += pr.checked;
    report.total_excluded += pr.excluded;
    report.params.push_back(std::move(pr));
  }
  return report;
}

GradCheckReport gradient_check(const NetworkConfig& config,
                               const GradCheckOptions& opts) {
  ModelParams<double> params =
      init_params<double>(config, derive_seed(opts.seed, "gradcheck-params"),
                          opts.init);
  Rng data_rng(derive_seed(opts.seed, "gradcheck-data"));
  Tensor4d input(opts.batch, config.input_channels, config.input_h,
                 config.input_w);
  for (std::size_t i = 0; i < input.size(); ++i) {
    input[i] = data_rng.next_double();
  }
  Tensor4d targets(opts.batch, config.num_classes, 1, 1);
  for (int s = 0; s < opts.batch; ++s) {
    const int cls = static_cast<int>(
        data_rng.below(static_cast<std::uint64_t>(config.num_classes)));
    targets(s, cls, 0, 0) = 1.0;
  }
  return gradient_check(config, params, input, targets, opts);
}

}  // namespace stlkit
