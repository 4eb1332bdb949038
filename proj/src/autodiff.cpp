#include "deci/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "deci/numeric.hpp"

namespace deci::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Vjp vjp) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(vjp));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Vjp vjp) {
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError("parent recorded on a different tape");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id());
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + root.value.shape_string());
  }
  root.grad = Tensor(root.value.shape(), 1.0);

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.vjp || n.grad.empty()) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t p : n.parents) {
      Node& parent = nodes_[p];
      inputs.push_back(&parent.value);
      if (parent.requires_grad) {
        if (parent.grad.size() != parent.value.size()) parent.grad = Tensor(parent.value.shape());
        input_grads.push_back(&parent.grad);
      } else {
        input_grads.push_back(nullptr);
      }
    }
    n.vjp(VjpArgs{n.value, n.grad, inputs, input_grads});
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_scaled(out, b.value());
  return tape_of(a).record(std::move(out), {a, b}, [](const VjpArgs& g) {
    for (Tensor* ig : g.input_grads)
      if (ig) add_scaled(*ig, g.out_grad);
  });
}

Var sub(Var a, Var b) {
  same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  add_scaled(out, b.value(), -1.0);
  return tape_of(a).record(std::move(out), {a, b}, [](const VjpArgs& g) {
    if (g.input_grads[0]) add_scaled(*g.input_grads[0], g.out_grad);
    if (g.input_grads[1]) add_scaled(*g.input_grads[1], g.out_grad, -1.0);
  });
}

Var mul(Var a, Var b) {
  same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [](const VjpArgs& g) {
    const Tensor& x = *g.inputs[0];
    const Tensor& y = *g.inputs[1];
    if (Tensor* gx = g.input_grads[0])
      for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g.out_grad[i] * y[i];
    if (Tensor* gy = g.input_grads[1])
      for (std::size_t i = 0; i < y.size(); ++i) (*gy)[i] += g.out_grad[i] * x[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return tape_of(a).record(std::move(out), {a}, [factor](const VjpArgs& g) {
    if (g.input_grads[0]) add_scaled(*g.input_grads[0], g.out_grad, factor);
  });
}

Var add_row_vector(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (bv.size() != c) throw ShapeError("add_row_vector: bias width");
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return tape_of(x).record(std::move(out), {x, bias}, [r, c](const VjpArgs& g) {
    if (g.input_grads[0]) add_scaled(*g.input_grads[0], g.out_grad);
    if (Tensor* gb = g.input_grads[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.out_grad[i * c + j];
  });
}

Var silu(Var x) {
  return tape_of(x).record(deci::silu(x.value()), {x}, [](const VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    if (Tensor* gx = g.input_grads[0]) {
      const Tensor sg = deci::sigmoid(xv);
      for (std::size_t i = 0; i < xv.size(); ++i)
        (*gx)[i] += g.out_grad[i] * sg[i] * (1.0 + xv[i] * (1.0 - sg[i]));
    }
  });
}

Var softplus(Var x) {
  return tape_of(x).record(deci::softplus(x.value()), {x}, [](const VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    if (Tensor* gx = g.input_grads[0]) {
      const Tensor sg = deci::sigmoid(xv);
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += g.out_grad[i] * sg[i];
    }
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::exp(v);
  return tape_of(x).record(std::move(out), {x}, [](const VjpArgs& g) {
    if (Tensor* gx = g.input_grads[0])
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g.out_grad[i] * g.out_value[i];
  });
}

Var matmul(Var x, Var w) {
  Tensor out;
  deci::matmul(x.value(), w.value(), out);
  return tape_of(x).record(std::move(out), {x, w}, [](const VjpArgs& g) {
    if (g.input_grads[0]) matmul_nt(g.out_grad, *g.inputs[1], *g.input_grads[0], true);
    if (g.input_grads[1]) matmul_tn(*g.inputs[0], g.out_grad, *g.input_grads[1], true);
  });
}

Var matmul_nt(Var x, Var w) {
  Tensor out;
  deci::matmul_nt(x.value(), w.value(), out);
  return tape_of(x).record(std::move(out), {x, w}, [](const VjpArgs& g) {
    if (g.input_grads[0]) deci::matmul(g.out_grad, *g.inputs[1], *g.input_grads[0], true);
    if (g.input_grads[1]) matmul_tn(g.out_grad, *g.inputs[0], *g.input_grads[1], true);
  });
}

Var rms_norm(Var x, Var scale_var) {
  Tensor out = deci::rms_norm(x.value(), scale_var.value());
  return tape_of(x).record(std::move(out), {x, scale_var}, [](const VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    const Tensor& sv = *g.inputs[1];
    const std::size_t r = xv.rows(), c = xv.cols();
    for (std::size_t i = 0; i < r; ++i) {
      const double* xr = xv.data() + i * c;
      const double* gr = g.out_grad.data() + i * c;
      double ss = 0.0;
      for (std::size_t j = 0; j < c; ++j) ss += xr[j] * xr[j];
      const double inv = 1.0 / std::sqrt(ss / static_cast<double>(c) + kRmsEps);
      if (Tensor* gs = g.input_grads[1])
        for (std::size_t j = 0; j < c; ++j) (*gs)[j] += gr[j] * xr[j] * inv;
      if (Tensor* gx = g.input_grads[0]) {
        // y_j = s_j x_j inv;  dy_j/dx_k = s_j inv (δ_jk - x_j x_k inv² / c)
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gr[j] * sv[j] * xr[j];
        const double k = dot * inv * inv * inv / static_cast<double>(c);
        double* gxr = gx->data() + i * c;
        for (std::size_t j = 0; j < c; ++j) gxr[j] += gr[j] * sv[j] * inv - xr[j] * k;
      }
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(tv.rows()));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Var gather_rows(Var x, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out = deci::gather_rows(x.value(), idx);
  return tape_of(x).record(std::move(out), {x}, [idx = std::move(idx)](const VjpArgs& g) {
    Tensor* gx = g.input_grads[0];
    if (!gx) return;
    const std::size_t c = gx->cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gx->data() + idx[i] * c;
      const double* src = g.out_grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tensor out = deci::slice_cols(x.value(), begin, end);
  return tape_of(x).record(std::move(out), {x}, [begin, end](const VjpArgs& g) {
    Tensor* gx = g.input_grads[0];
    if (!gx) return;
    const std::size_t r = gx->rows(), c = gx->cols(), w = end - begin;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) (*gx)[i * c + begin + j] += g.out_grad[i * w + j];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return tape_of(x).record(Tensor::scalar(s), {x}, [](const VjpArgs& g) {
    if (Tensor* gx = g.input_grads[0])
      for (auto& v : gx->values()) v += g.out_grad[0];
  });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v * v;
  return tape_of(x).record(Tensor::scalar(s), {x}, [](const VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    if (Tensor* gx = g.input_grads[0])
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += 2.0 * xv[i] * g.out_grad[0];
  });
}

Var causal_conv1d(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  const std::size_t L = xv.rows(), D = xv.cols(), K = wv.rows();
  if (wv.cols() != D || bv.size() != D) throw ShapeError("causal_conv1d: weight/bias width");
  Tensor out({L, D});
  for (std::size_t t = 0; t < L; ++t) {
    double* o = out.data() + t * D;
    for (std::size_t d = 0; d < D; ++d) o[d] = bv[d];
    for (std::size_t k = 0; k < K; ++k) {
      // tap k multiplies x_{t-(K-1-k)}
      const std::size_t lag = K - 1 - k;
      if (lag > t) continue;
      const double* xr = xv.data() + (t - lag) * D;
      const double* wr = wv.data() + k * D;
      for (std::size_t d = 0; d < D; ++d) o[d] += wr[d] * xr[d];
    }
  }
  ops::add(2 * L * D * K);
  return tape_of(x).record(std::move(out), {x, w, b}, [L, D, K](const VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    const Tensor& wv = *g.inputs[1];
    Tensor* gx = g.input_grads[0];
    Tensor* gw = g.input_grads[1];
    Tensor* gb = g.input_grads[2];
    for (std::size_t t = 0; t < L; ++t) {
      const double* go = g.out_grad.data() + t * D;
      if (gb)
        for (std::size_t d = 0; d < D; ++d) (*gb)[d] += go[d];
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t lag = K - 1 - k;
        if (lag > t) continue;
        const std::size_t src = t - lag;
        if (gx)
          for (std::size_t d = 0; d < D; ++d) (*gx)[src * D + d] += go[d] * wv[k * D + d];
        if (gw)
          for (std::size_t d = 0; d < D; ++d) (*gw)[k * D + d] += go[d] * xv[src * D + d];
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  const std::size_t r = lv.rows(), c = lv.cols();
  if (targets.size() != r) throw ShapeError("cross_entropy: one target per row required");
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor probs(lv.shape());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = lv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - logz);
    if (tgt[i] >= 0) {
      if (static_cast<std::size_t>(tgt[i]) >= c) throw std::out_of_range("cross_entropy: target id");
      total += logz - row[tgt[i]];
      ++counted;
    }
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  return tape_of(logits).record(
      Tensor::scalar(total / denom), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), denom, c](const VjpArgs& g) {
        Tensor* gl = g.input_grads[0];
        if (!gl) return;
        const double s = g.out_grad[0] / denom;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (tgt[i] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) (*gl)[i * c + j] += s * probs[i * c + j];
          (*gl)[i * c + static_cast<std::size_t>(tgt[i])] -= s;
        }
      });
}

}  // namespace deci::ad
