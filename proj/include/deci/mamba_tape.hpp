#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "deci/autodiff.hpp"
#include "deci/mamba.hpp"

namespace deci {

/// Differentiable selective scan: y_t[d] = Σ_n c_t[n] h_t[d,n] with
/// h_t = exp(-exp(a_log)·Δ_t) ⊙ h_{t-1} + Δ_t b_t x_t and h_0 = 0.
ad::Var selective_scan(ad::Var x, ad::Var delta, ad::Var a_log, ad::Var b, ad::Var c);

/// Maps model tensors to tape leaves, creating each leaf once.
class ParamBinder {
 public:
  explicit ParamBinder(ad::Tape& tape) : tape_(tape) {}
  ad::Var operator()(const Tensor& t);
  /// Gradients aligned with named_parameters(w); zeros for unused tensors.
  std::vector<Tensor> gradients(const ModelWeights& w);

 private:
  ad::Tape& tape_;
  std::unordered_map<const Tensor*, ad::Var> vars_;
};

struct TapeForward {
  ad::Var hidden;                      // final-normalised rows
  std::vector<std::size_t> positions;  // original index of each row
};

/// Same computation as forward_hidden (sequential scan), recorded on a tape.
/// `select` sees tape values and may shorten the sequence at any layer.
TapeForward forward_hidden_tape(ParamBinder& bind, std::span<const int> tokens,
                                const ModelWeights& w, const TokenSelector& select = {});

/// Logits of selected hidden rows through the tied head.
ad::Var lm_head_tape(ParamBinder& bind, ad::Var hidden, const ModelWeights& w);

}  // namespace deci
