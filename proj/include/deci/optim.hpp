#pragma once

#include <cstddef>
#include <vector>

#include "deci/mamba.hpp"
#include "deci/tensor.hpp"

namespace deci {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

double global_norm(const std::vector<Tensor>& grads);

/// Scales grads in place so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_by_global_norm(std::vector<Tensor>& grads, double max_norm);

/// One decoupled-weight-decay Adam step (decay, moments, bias correction),
/// preceded by global-norm clipping. `decay[i]` selects which tensors decay.
/// Returns the pre-clip gradient norm.
double adamw_step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, const std::vector<bool>& decay,
                  AdamWState& state, const AdamWConfig& cfg, double lr);

/// Matrices decay; vectors, norms and a_log do not.
std::vector<bool> weight_decay_mask(const ModelWeights& w);
std::vector<Tensor*> parameter_pointers(ModelWeights& w);

}  // namespace deci
