#pragma once

#include "paerpr/autodiff.hpp"
#include "paerpr/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace paerpr::nn {

enum class Act { none, relu, gelu };

inline Node* activate(Tape& t, Node* x, Act a) {
  switch (a) {
    case Act::relu: return relu(t, x);
    case Act::gelu: return gelu(t, x);
    default: return x;
  }
}

inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor w(std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

inline Tensor normal_init(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor w(std::move(shape));
  for (double& v : w.data) v = rng.normal(0.0, stddev);
  return w;
}

/// Fully connected layer; weights stored [in x out].
struct Linear {
  Parameter* W = nullptr;
  Parameter* b = nullptr;

  static Linear create(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                       Rng& rng) {
    Linear l;
    l.W = &ps.add(prefix + "/W", uniform_init({in, out}, in, rng));
    l.b = &ps.add(prefix + "/b", uniform_init({out}, in, rng));
    return l;
  }

  Node* operator()(Tape& t, Node* x, bool froze = false) const {
    Node* w = froze ? t.frozen(*W) : t.param(*W);
    Node* bias = froze ? t.frozen(*b) : t.param(*b);
    return add_rowvec(t, matmul(t, x, w), bias);
  }
};

/// linear(input) convenience matching the standalone operation contract.
inline Node* linear(Tape& t, Node* x, Parameter& W, Parameter& b) {
  return add_rowvec(t, matmul(t, x, t.param(W)), t.param(b));
}

/// Stack of Linear layers with an activation between them (and optionally on
/// the output).
struct Mlp {
  std::vector<Linear> layers;
  Act act = Act::relu;
  bool act_on_output = false;

  static Mlp create(ParamSet& ps, const std::string& prefix, const std::vector<std::size_t>& dims,
                    Act act, bool act_on_output, Rng& rng) {
    Mlp m;
    m.act = act;
    m.act_on_output = act_on_output;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      m.layers.push_back(Linear::create(ps, prefix + "/" + std::to_string(i), dims[i], dims[i + 1], rng));
    return m;
  }

  Node* operator()(Tape& t, Node* x, bool froze = false) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](t, x, froze);
      if (i + 1 < layers.size() || act_on_output) x = activate(t, x, act);
    }
    return x;
  }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm create(ParamSet& ps, const std::string& prefix, std::size_t width) {
    LayerNorm ln;
    Tensor g({width});
    g.fill(1.0);
    ln.gain = &ps.add(prefix + "/gain", std::move(g));
    ln.bias = &ps.add(prefix + "/bias", Tensor({width}));
    return ln;
  }

  Node* operator()(Tape& t, Node* x, bool froze = false) const {
    Node* g = froze ? t.frozen(*gain) : t.param(*gain);
    Node* b = froze ? t.frozen(*bias) : t.param(*bias);
    return layer_norm(t, x, g, b);
  }
};

struct TransformerConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 256;
  std::size_t mlp_hidden = 2048;
  double dropout_rate = 0.1;

  void validate() const {
    if (num_layers == 0 || num_heads == 0 || model_dim == 0 || mlp_hidden == 0)
      throw std::invalid_argument("transformer config: extents must be positive");
    if (model_dim % num_heads != 0)
      throw std::invalid_argument("transformer config: model_dim not divisible by num_heads");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw std::invalid_argument("transformer config: dropout_rate outside [0,1)");
  }
};

/// Forward-pass context: train enables dropout, (seed, step) select the mask
/// streams, froze suppresses gradient write-back.
struct FwdCtx {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool froze = false;
};

/// Pre-LN encoder layer: x + Drop(MHA(LN(x))), then x + MLP(LN(x)) with GELU
/// and dropout inside the MLP.
struct EncoderLayer {
  std::string name;
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear mlp1, mlp2;
  std::size_t num_heads = 4;
  double dropout_rate = 0.0;

  static EncoderLayer create(ParamSet& ps, const std::string& prefix, const TransformerConfig& cfg,
                             Rng& rng) {
    EncoderLayer e;
    e.name = prefix;
    e.num_heads = cfg.num_heads;
    e.dropout_rate = cfg.dropout_rate;
    e.ln1 = LayerNorm::create(ps, prefix + "/ln1", cfg.model_dim);
    e.wq = Linear::create(ps, prefix + "/attn/q", cfg.model_dim, cfg.model_dim, rng);
    e.wk = Linear::create(ps, prefix + "/attn/k", cfg.model_dim, cfg.model_dim, rng);
    e.wv = Linear::create(ps, prefix + "/attn/v", cfg.model_dim, cfg.model_dim, rng);
    e.wo = Linear::create(ps, prefix + "/attn/o", cfg.model_dim, cfg.model_dim, rng);
    e.ln2 = LayerNorm::create(ps, prefix + "/ln2", cfg.model_dim);
    e.mlp1 = Linear::create(ps, prefix + "/mlp/0", cfg.model_dim, cfg.mlp_hidden, rng);
    e.mlp2 = Linear::create(ps, prefix + "/mlp/1", cfg.mlp_hidden, cfg.model_dim, rng);
    return e;
  }

  Node* operator()(Tape& t, Node* x, std::size_t batch, std::size_t seq_len, const FwdCtx& ctx) const {
    Node* h = ln1(t, x, ctx.froze);
    Node* attn = block_attention(t, wq(t, h, ctx.froze), wk(t, h, ctx.froze), wv(t, h, ctx.froze),
                                 batch, seq_len, num_heads);
    attn = wo(t, attn, ctx.froze);
    attn = dropout(t, attn, dropout_rate, ctx.seed, name + "/drop_attn", ctx.step, ctx.train);
    x = add(t, x, attn);

    Node* m = ln2(t, x, ctx.froze);
    m = gelu(t, mlp1(t, m, ctx.froze));
    m = dropout(t, m, dropout_rate, ctx.seed, name + "/drop_mlp", ctx.step, ctx.train);
    m = mlp2(t, m, ctx.froze);
    return add(t, x, m);
  }
};

struct TransformerEncoder {
  std::vector<EncoderLayer> layers;
  TransformerConfig cfg;

  static TransformerEncoder create(ParamSet& ps, const std::string& prefix,
                                   const TransformerConfig& cfg, Rng& rng) {
    cfg.validate();
    TransformerEncoder enc;
    enc.cfg = cfg;
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
      enc.layers.push_back(EncoderLayer::create(ps, prefix + "/layer" + std::to_string(l), cfg, rng));
    return enc;
  }

  Node* operator()(Tape& t, Node* seq, std::size_t batch, std::size_t seq_len, const FwdCtx& ctx) const {
    for (const auto& layer : layers) seq = layer(t, seq, batch, seq_len, ctx);
    return seq;
  }
};

/// Standalone multi-head self-attention over one sequence [t x width] with
/// fresh projection weights; the building block behind EncoderLayer.
inline Node* multi_head_attention(Tape& t, Node* seq, const Linear& wq, const Linear& wk,
                                  const Linear& wv, const Linear& wo, std::size_t num_heads,
                                  bool froze = false) {
  std::size_t seq_len = seq->val.rows();
  Node* ctx = block_attention(t, wq(t, seq, froze), wk(t, seq, froze), wv(t, seq, froze), 1,
                              seq_len, num_heads);
  return wo(t, ctx, froze);
}

}  // namespace paerpr::nn
