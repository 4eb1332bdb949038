#include "deci/optim.hpp"

#include <cmath>

namespace deci {

double global_norm(const std::vector<Tensor>& grads) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) ss += v * v;
  return std::sqrt(ss);
}

double clip_by_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.values()) v *= s;
  }
  return norm;
}

double adamw_step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, const std::vector<bool>& decay,
                  AdamWState& state, const AdamWConfig& cfg, double lr) {
  if (grads.size() != params.size() || decay.size() != params.size())
    throw ShapeError("adamw_step: params, grads and decay mask differ in length");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  const double norm = clip_by_global_norm(grads, cfg.grad_clip_norm);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    require_shape(grads[i], p.shape(), "gradient");
    const double shrink = decay[i] ? 1.0 - lr * cfg.weight_decay : 1.0;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const double* g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] *= shrink;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
    }
  }
  return norm;
}

std::vector<bool> weight_decay_mask(const ModelWeights& w) {
  std::vector<bool> mask;
  for (const auto& [name, t] : named_parameters(w)) {
    const bool is_a_log = name.size() >= 5 && name.compare(name.size() - 5, 5, "a_log") == 0;
    mask.push_back(t->rank() == 2 && !is_a_log);
  }
  return mask;
}

std::vector<Tensor*> parameter_pointers(ModelWeights& w) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters(w)) out.push_back(t);
  return out;
}

}  // namespace deci
