#pragma once

#include "slotgen/core/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

// Reverse-mode autodiff over Tensor. Graphs are built dynamically by the op
// functions below; backward() runs the tape in reverse topological order.
// Ops only record a backward closure when some input requires gradients, so
// constant subgraphs cost nothing at backward time.
namespace slotgen::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  std::string label;

  bool has_grad() const { return grad.numel() == value.numel(); }
  Tensor& ensure_grad() {
    if (!has_grad()) grad = Tensor::zeros(value.shape);
    return grad;
  }
  void zero_grad() {
    if (has_grad()) std::fill(grad.v.begin(), grad.v.end(), real(0));
  }
};

Var leaf(Tensor value, bool requires_grad, std::string label = "");
Var constant(Tensor value);
// New leaf sharing the value; gradients stop here.
Var detach(const Var& x);

// Accumulates d(root)/d(node) into .grad of every reachable node that
// requires gradients. root must be scalar.
void backward(const Var& root);

// Throws std::runtime_error naming `context` if x contains NaN/Inf.
void check_finite(const Var& x, const std::string& context);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);           // same shape
Var sub(const Var& a, const Var& b);           // same shape
Var mul(const Var& a, const Var& b);           // same shape
Var add_scalar(const Var& a, real s);
Var scale(const Var& a, real s);
Var neg(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh_(const Var& a);
Var silu(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);

// ---- reductions ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var transpose_last2(const Var& a);                       // [B,M,N] -> [B,N,M]
Var slice_last(const Var& a, int start, int len);        // over last dim
Var slice_rows(const Var& a, int start, int len);        // over dim 0 of a 2-D tensor
Var concat_last(const Var& a, const Var& b);             // over last dim
Var concat_axis1(const Var& a, const Var& b);            // [B,T,*]: token concat
Var concat_channels(const Var& a, const Var& b);         // [B,C,H,W]
Var expand_batch(const Var& a, int batch);               // [..] -> [batch, ..]
Var permute_batch(const Var& a, std::vector<int> perm);  // y[i] = x[perm[i]]

// y[b,n,:] = mask[b,n] ? b_rows[b,n,:] : a_rows[b,n,:]; mask is constant.
Var select_rows(const Tensor& mask, const Var& a_rows, const Var& b_rows);

// ---- linear algebra ----
// x [..., in] * w[out, in]^T + b[out] -> [..., out]
Var linear(const Var& x, const Var& w, const Var& b);
Var bmm_nn(const Var& a, const Var& b);  // [B,M,K]x[B,K,N] -> [B,M,N]
Var bmm_nt(const Var& a, const Var& b);  // [B,M,K]x[B,N,K] -> [B,M,N]

// ---- normalization / softmax ----
Var softmax_last(const Var& x);
// Rows over the last dim; gamma/beta may be null Vars for plain row norm.
Var layernorm(const Var& x, const Var& gamma, const Var& beta, real eps = 1e-6);
// y = x / (sum_last(x) + eps), the weighted-mean normalizer of slot attention.
Var div_rowsum(const Var& x, real eps);

// ---- conv / spatial ----
// x [B,C,H,W], w [O,C,kh,kw], b [O] (may be null). pad_mode 0 zero, 1 reflect.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int pad_mode = 0);
Var upsample_nearest2(const Var& x);
// [B, p*p*C, h, w] -> [B, C, h*p, w*p]
Var unpatchify(const Var& x, int p);
// x [B,C,H,W] + t[B,C] broadcast over H,W
Var add_channel_bias(const Var& x, const Var& t);
// x [B,C,H,W] * t[B,C] broadcast over H,W
Var mul_channel_bias(const Var& x, const Var& t);
// per-channel affine with parameter vectors [C]
Var mul_channel(const Var& x, const Var& g);
Var add_channel(const Var& x, const Var& b);

}  // namespace slotgen::ag
