#pragma once

#include "paerpr/rng.hpp"
#include "paerpr/tensor.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace paerpr::nn {

/// Named trainable tensor. Gradients accumulate across backward passes until
/// zero_grad; names are unique within a model and double as checkpoint keys.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad.zero(); }
};

/// Owns the parameters of one model, in insertion order.
struct ParamSet {
  std::deque<Parameter> storage;

  Parameter& add(std::string name, Tensor init) {
    for (const auto& p : storage)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    storage.push_back(Parameter{std::move(name), std::move(init), Tensor(), true});
    Parameter& p = storage.back();
    p.grad = Tensor::zeros(p.value.shape);
    quantize_f32(p.value);
    return p;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for (auto& p : storage) out.push_back(&p);
    return out;
  }

  void zero_grads() {
    for (auto& p : storage) p.zero_grad();
  }
};

struct Node {
  Tensor val;
  Tensor grad;
  std::function<void(Node&)> backprop;  // adds into parents' grads
  Parameter* src = nullptr;             // set for trainable leaves
};

/// Reverse-mode tape. Ops evaluate eagerly; creation order is a topological
/// order, so backward() is a single reverse sweep.
class Tape {
 public:
  Node* constant(Tensor v) { return make(std::move(v)); }

  Node* param(Parameter& p) {
    Node* n = make(p.value);
    n->src = &p;
    return n;
  }

  /// Leaf whose gradient is computed but never written back; used for teacher
  /// and PAE weights that must stay bit-identical across training.
  Node* frozen(const Parameter& p) { return make(p.value); }

  Node* make(Tensor v, std::function<void(Node&)> bp = nullptr) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.val = std::move(v);
    n.grad = Tensor::zeros(n.val.shape);
    n.backprop = std::move(bp);
    return &n;
  }

  void backward(Node* loss) {
    if (loss->val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    loss->grad.fill(1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backprop) it->backprop(*it);
      if (it->src && it->src->trainable) {
        for (std::size_t i = 0; i < it->grad.size(); ++i) it->src->grad[i] += it->grad[i];
      }
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

// ---- elementwise and linear-algebra ops ----------------------------------

inline Node* matmul(Tape& t, Node* a, Node* b) {
  Node* out = t.make(paerpr::matmul(a->val, b->val));
  out->backprop = [a, b](Node& n) {
    a->grad.mat().noalias() += n.grad.mat() * b->val.mat().transpose();
    b->grad.mat().noalias() += a->val.mat().transpose() * n.grad.mat();
  };
  return out;
}

inline Node* add(Tape& t, Node* a, Node* b) {
  if (!a->val.same_shape(b->val)) throw std::invalid_argument("add: shape mismatch");
  Tensor v = a->val;
  v.mat() += b->val.mat();
  Node* out = t.make(std::move(v));
  out->backprop = [a, b](Node& n) {
    a->grad.mat() += n.grad.mat();
    b->grad.mat() += n.grad.mat();
  };
  return out;
}

inline Node* sub(Tape& t, Node* a, Node* b) {
  if (!a->val.same_shape(b->val)) throw std::invalid_argument("sub: shape mismatch");
  Tensor v = a->val;
  v.mat() -= b->val.mat();
  Node* out = t.make(std::move(v));
  out->backprop = [a, b](Node& n) {
    a->grad.mat() += n.grad.mat();
    b->grad.mat() -= n.grad.mat();
  };
  return out;
}

/// rows of a + bias row vector
inline Node* add_rowvec(Tape& t, Node* a, Node* b) {
  if (a->val.cols() != b->val.size()) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor v = a->val;
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) v(r, c) += b->val[c];
  Node* out = t.make(std::move(v));
  out->backprop = [a, b](Node& n) {
    a->grad.mat() += n.grad.mat();
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) b->grad[c] += n.grad(r, c);
  };
  return out;
}

inline Node* scale(Tape& t, Node* a, double c) {
  Tensor v = a->val;
  for (double& x : v.data) x *= c;
  Node* out = t.make(std::move(v));
  out->backprop = [a, c](Node& n) { a->grad.mat() += c * n.grad.mat(); };
  return out;
}

inline Node* hadamard(Tape& t, Node* a, Node* b) {
  if (!a->val.same_shape(b->val)) throw std::invalid_argument("hadamard: shape mismatch");
  Tensor v = a->val;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b->val[i];
  Node* out = t.make(std::move(v));
  out->backprop = [a, b](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      a->grad[i] += n.grad[i] * b->val[i];
      b->grad[i] += n.grad[i] * a->val[i];
    }
  };
  return out;
}

/// elementwise product with a fixed mask (dropout)
inline Node* hadamard_const(Tape& t, Node* a, Tensor mask) {
  if (!a->val.same_shape(mask)) throw std::invalid_argument("hadamard_const: shape mismatch");
  Tensor v = a->val;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  Node* out = t.make(std::move(v));
  out->backprop = [a, m = std::move(mask)](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * m[i];
  };
  return out;
}

inline Node* relu(Tape& t, Node* a) {
  Tensor v = a->val;
  for (double& x : v.data) x = x > 0.0 ? x : 0.0;
  Node* out = t.make(std::move(v));
  out->backprop = [a](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->val[i] > 0.0) a->grad[i] += n.grad[i];
  };
  return out;
}

inline Node* gelu(Tape& t, Node* a) {
  Tensor v = a->val;
  for (double& x : v.data) x = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
  Node* out = t.make(std::move(v));
  out->backprop = [a](Node& n) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double x = a->val[i];
      double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      a->grad[i] += n.grad[i] * d;
    }
  };
  return out;
}

inline Node* exp_ew(Tape& t, Node* a) {
  Tensor v = a->val;
  for (double& x : v.data) x = std::exp(x);
  Node* out = t.make(std::move(v));
  out->backprop = [a](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * n.val[i];
  };
  return out;
}

inline Node* concat_cols(Tape& t, Node* a, Node* b) {
  if (a->val.rows() != b->val.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  std::size_t n = a->val.rows(), ca = a->val.cols(), cb = b->val.cols();
  Tensor v({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < ca; ++c) v(r, c) = a->val(r, c);
    for (std::size_t c = 0; c < cb; ++c) v(r, ca + c) = b->val(r, c);
  }
  Node* out = t.make(std::move(v));
  out->backprop = [a, b, ca, cb](Node& nd) {
    for (std::size_t r = 0; r < nd.grad.rows(); ++r) {
      for (std::size_t c = 0; c < ca; ++c) a->grad(r, c) += nd.grad(r, c);
      for (std::size_t c = 0; c < cb; ++c) b->grad(r, c) += nd.grad(r, ca + c);
    }
  };
  return out;
}

// ---- normalization, softmax, attention ------------------------------------

inline Node* layer_norm(Tape& t, Node* x, Node* gain, Node* bias, double eps = 1e-5) {
  std::size_t n = x->val.rows(), m = x->val.cols();
  if (gain->val.size() != m || bias->val.size() != m)
    throw std::invalid_argument("layer_norm: affine width mismatch");
  Tensor v({n, m});
  Tensor xhat({n, m});
  Tensor inv_sigma({n});
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += x->val(r, c);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double d = x->val(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t c = 0; c < m; ++c) {
      xhat(r, c) = (x->val(r, c) - mu) * is;
      v(r, c) = xhat(r, c) * gain->val[c] + bias->val[c];
    }
  }
  Node* out = t.make(std::move(v));
  out->backprop = [x, gain, bias, xh = std::move(xhat), is = std::move(inv_sigma), n, m](Node& nd) {
    for (std::size_t r = 0; r < n; ++r) {
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        double g = nd.grad(r, c);
        gain->grad[c] += g * xh(r, c);
        bias->grad[c] += g;
        double dxhat = g * gain->val[c];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xh(r, c);
      }
      mean_dxhat /= static_cast<double>(m);
      mean_dxhat_xhat /= static_cast<double>(m);
      for (std::size_t c = 0; c < m; ++c) {
        double dxhat = nd.grad(r, c) * gain->val[c];
        x->grad(r, c) += is[r] * (dxhat - mean_dxhat - xh(r, c) * mean_dxhat_xhat);
      }
    }
  };
  return out;
}

/// row-wise softmax, max-subtracted for stability
inline Node* softmax_rows(Tape& t, Node* x) {
  std::size_t n = x->val.rows(), m = x->val.cols();
  Tensor v({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    double mx = x->val(r, 0);
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, x->val(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      v(r, c) = std::exp(x->val(r, c) - mx);
      sum += v(r, c);
    }
    for (std::size_t c = 0; c < m; ++c) v(r, c) /= sum;
  }
  Node* out = t.make(std::move(v));
  out->backprop = [x, n, m](Node& nd) {
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += nd.val(r, c) * nd.grad(r, c);
      for (std::size_t c = 0; c < m; ++c) x->grad(r, c) += nd.val(r, c) * (nd.grad(r, c) - dot);
    }
  };
  return out;
}

/// Scaled dot-product self-attention over `batch` independent sequences of
/// `seq_len` tokens packed row-wise into [batch*seq_len x width] tensors.
inline Node* block_attention(Tape& t, Node* q, Node* k, Node* v, std::size_t batch,
                             std::size_t seq_len, std::size_t num_heads) {
  std::size_t width = q->val.cols();
  if (width % num_heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (q->val.rows() != batch * seq_len || !q->val.same_shape(k->val) || !q->val.same_shape(v->val))
    throw std::invalid_argument("attention: q/k/v shape mismatch");
  std::size_t dh = width / num_heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out_v({batch * seq_len, width});
  // attention probabilities cached for backward: [batch*heads*T*T]
  auto probs = std::make_shared<Tensor>(Tensor({batch * num_heads * seq_len * seq_len}));

  using M = Eigen::MatrixXd;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      auto Q = q->val.mat().block(b * seq_len, h * dh, seq_len, dh);
      auto K = k->val.mat().block(b * seq_len, h * dh, seq_len, dh);
      auto V = v->val.mat().block(b * seq_len, h * dh, seq_len, dh);
      M s = (Q * K.transpose()) * sc;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      double* pbase = probs->data.data() + (b * num_heads + h) * seq_len * seq_len;
      for (std::size_t i = 0; i < seq_len; ++i)
        for (std::size_t j = 0; j < seq_len; ++j) pbase[i * seq_len + j] = s(i, j);
      out_v.mat().block(b * seq_len, h * dh, seq_len, dh).noalias() = s * V;
    }
  }
  Node* out = t.make(std::move(out_v));
  out->backprop = [q, k, v, probs, batch, seq_len, num_heads, dh, sc](Node& nd) {
    using M = Eigen::MatrixXd;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < num_heads; ++h) {
        auto Q = q->val.mat().block(b * seq_len, h * dh, seq_len, dh);
        auto K = k->val.mat().block(b * seq_len, h * dh, seq_len, dh);
        auto V = v->val.mat().block(b * seq_len, h * dh, seq_len, dh);
        auto dO = nd.grad.mat().block(b * seq_len, h * dh, seq_len, dh);
        const double* pbase = probs->data.data() + (b * num_heads + h) * seq_len * seq_len;
        M A(seq_len, seq_len);
        for (std::size_t i = 0; i < seq_len; ++i)
          for (std::size_t j = 0; j < seq_len; ++j) A(i, j) = pbase[i * seq_len + j];
        v->grad.mat().block(b * seq_len, h * dh, seq_len, dh).noalias() += A.transpose() * dO;
        M dA = dO * V.transpose();
        M dS(seq_len, seq_len);
        for (std::size_t i = 0; i < seq_len; ++i) {
          double dot = (A.row(i).array() * dA.row(i).array()).sum();
          dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
        }
        q->grad.mat().block(b * seq_len, h * dh, seq_len, dh).noalias() += (dS * K) * sc;
        k->grad.mat().block(b * seq_len, h * dh, seq_len, dh).noalias() += (dS.transpose() * Q) * sc;
      }
    }
  };
  return out;
}

// ---- sequence packing -------------------------------------------------------

/// Build [batch*T x width] from T per-token matrices of [batch x width];
/// row b*T + j holds token j of sample b.
inline Node* interleave_rows(Tape& t, const std::vector<Node*>& tokens) {
  std::size_t T = tokens.size();
  std::size_t batch = tokens[0]->val.rows(), width = tokens[0]->val.cols();
  for (Node* tok : tokens)
    if (tok->val.rows() != batch || tok->val.cols() != width)
      throw std::invalid_argument("interleave_rows: token shape mismatch");
  Tensor v({batch * T, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t c = 0; c < width; ++c) v(b * T + j, c) = tokens[j]->val(b, c);
  Node* out = t.make(std::move(v));
  out->backprop = [tokens, T, batch, width](Node& nd) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t c = 0; c < width; ++c) tokens[j]->grad(b, c) += nd.grad(b * T + j, c);
  };
  return out;
}

/// Token j of every sample: [batch*T x width] -> [batch x width].
inline Node* extract_token(Tape& t, Node* seq, std::size_t j, std::size_t T) {
  std::size_t batch = seq->val.rows() / T, width = seq->val.cols();
  Tensor v({batch, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < width; ++c) v(b, c) = seq->val(b * T + j, c);
  Node* out = t.make(std::move(v));
  out->backprop = [seq, j, T, batch, width](Node& nd) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < width; ++c) seq->grad(b * T + j, c) += nd.grad(b, c);
  };
  return out;
}

/// Repeat a single row (learned token) for every sample in the batch.
inline Node* broadcast_row(Tape& t, Node* row, std::size_t batch) {
  std::size_t width = row->val.size();
  Tensor v({batch, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < width; ++c) v(b, c) = row->val[c];
  Node* out = t.make(std::move(v));
  out->backprop = [row, batch, width](Node& nd) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < width; ++c) row->grad[c] += nd.grad(b, c);
  };
  return out;
}

/// Embedding lookup with scatter-add backward.
inline Node* gather_rows(Tape& t, Node* table, const std::vector<std::size_t>& idx) {
  std::size_t e = table->val.cols();
  Tensor v({idx.size(), e});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table->val.rows()) throw std::out_of_range("gather_rows: index out of range");
    for (std::size_t c = 0; c < e; ++c) v(i, c) = table->val(idx[i], c);
  }
  Node* out = t.make(std::move(v));
  out->backprop = [table, idx, e](Node& nd) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < e; ++c) table->grad(idx[i], c) += nd.grad(i, c);
  };
  return out;
}

// ---- reductions and row geometry -------------------------------------------

/// y_r = x_r / max(||x_r||, 1e-12)
inline Node* normalize_rows(Tape& t, Node* x) {
  std::size_t n = x->val.rows(), m = x->val.cols();
  Tensor v({n, m});
  Tensor inv_r({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += x->val(r, c) * x->val(r, c);
    double rr = std::max(std::sqrt(s), 1e-12);
    inv_r[r] = 1.0 / rr;
    for (std::size_t c = 0; c < m; ++c) v(r, c) = x->val(r, c) * inv_r[r];
  }
  Node* out = t.make(std::move(v));
  out->backprop = [x, ir = std::move(inv_r), n, m](Node& nd) {
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += nd.val(r, c) * nd.grad(r, c);
      for (std::size_t c = 0; c < m; ++c)
        x->grad(r, c) += ir[r] * (nd.grad(r, c) - nd.val(r, c) * dot);
    }
  };
  return out;
}

/// per-row L2 norm -> rank-1 tensor [n]
inline Node* l2norm_rows(Tape& t, Node* x) {
  std::size_t n = x->val.rows(), m = x->val.cols();
  Tensor v({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += x->val(r, c) * x->val(r, c);
    v[r] = std::sqrt(s);
  }
  Node* out = t.make(std::move(v));
  out->backprop = [x, n, m](Node& nd) {
    for (std::size_t r = 0; r < n; ++r) {
      double inv = 1.0 / std::max(nd.val[r], 1e-12);
      for (std::size_t c = 0; c < m; ++c) x->grad(r, c) += nd.grad[r] * x->val(r, c) * inv;
    }
  };
  return out;
}

inline Node* sum_all(Tape& t, Node* x) {
  double s = 0.0;
  for (double v : x->val.data) s += v;
  Node* out = t.make(Tensor::scalar(s));
  out->backprop = [x](Node& nd) {
    for (double& g : x->grad.data) g += nd.grad[0];
  };
  return out;
}

inline Node* mean_all(Tape& t, Node* x) {
  return scale(t, sum_all(t, x), 1.0 / static_cast<double>(x->val.size()));
}

// ---- dropout ----------------------------------------------------------------

/// Inverted dropout with a counter-based mask: the mask depends only on
/// (seed, layer name, step) and the element index, never on evaluation order.
inline Node* dropout(Tape& t, Node* x, double rate, std::uint64_t seed,
                     std::string_view layer, std::uint64_t step, bool train) {
  if (!train || rate <= 0.0) return x;
  std::uint64_t key = mix_seed(mix_seed(seed, fnv1a64(layer)), step);
  Tensor mask(x->val.shape);
  double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = counter_uniform(key, i) < rate ? 0.0 : keep_scale;
  return hadamard_const(t, x, std::move(mask));
}

// ---- gradient verification ---------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of every parameter element against central
/// finite differences of the same loss. `build` must construct the loss from
/// the parameters' current values on the given tape.
inline GradCheckResult gradient_check(const std::vector<Parameter*>& params,
                                      const std::function<Node*(Tape&)>& build, double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Node* loss = build(t);
    t.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Tape t;
    return build(t)->val[0];
  };

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double saved = p->value[i];
      p->value[i] = saved + h;
      double fp = eval();
      p->value[i] = saved - h;
      double fm = eval();
      p->value[i] = saved;
      double fd = (fp - fm) / (2.0 * h);
      double a = analytic[pi][i];
      double rel = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace paerpr::nn
