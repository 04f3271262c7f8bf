#pragma once

// Conditional noise-prediction network.
//
// Every asset is one token. A token embeds its scalar noisy return with an
// affine map; its conditioning vector c_i is the sum of a timestep embedding
// (sinusoidal features -> 2-layer MLP) and an embedding of its own
// characteristics (2-layer MLP). Each transformer block is
//
//   h += gate1(c) * Attn( LN(h) * (1 + scale1(c)) + shift1(c) )
//   h += gate2(c) * MLP ( LN(h) * (1 + scale2(c)) + shift2(c) )
//
// with the six modulation vectors produced per token by a linear map of
// SiLU(c). A final modulated layer norm and a linear head give one scalar per
// token. Self-attention runs across all tokens of a draw and no positional
// embedding is used, so the network is equivariant under asset permutations.
//
// All weights live in one flat vector. Linear layers compute Y = X W + b with
// W stored column-major as (in x out). Gradients are hand-derived reverse mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "factordiff/diffusion.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

struct DenoiserConfig {
  int embed_dim = 64;
  int heads = 4;
  int layers = 2;
  int k = 1;
  int max_steps = 200;

  int mlp_dim() const noexcept { return 4 * embed_dim; }
  int head_dim() const noexcept { return embed_dim / heads; }

  void validate() const {
    if (embed_dim < 2 || embed_dim % 2 != 0) throw DomainError("embed_dim must be a positive even integer");
    if (heads < 1 || embed_dim % heads != 0) throw DomainError("embed_dim must be divisible by heads");
    if (layers < 1) throw DomainError("layers must be positive");
    if (k < 1) throw DomainError("k must be positive");
    if (max_steps < 1) throw DomainError("max_steps must be positive");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct Segment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const noexcept { return rows * cols; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct DenoiserParams {
  std::vector<Segment> layout;
  Eigen::VectorXd flat;

  /// Mutable view of one named segment.
  Eigen::Map<Eigen::MatrixXd> segment(const std::string& name) {
    for (const auto& s : layout)
      if (s.name == name) return {flat.data() + s.offset, s.rows, s.cols};
    throw DomainError("no parameter segment named '" + name + "'");
  }
};

namespace detail {

struct Linear {
  Eigen::Index weight = 0, bias = 0, in = 0, out = 0;
};

struct BlockLayers {
  Linear modulation, qkv, proj, fc1, fc2;
};

struct Architecture {
  Linear token, time_in, time_out, char_in, char_out;
  std::vector<BlockLayers> blocks;
  Linear final_modulation, head;
  std::vector<Segment> layout;
  Eigen::Index size = 0;
};

inline Architecture build_architecture(const DenoiserConfig& cfg) {
  cfg.validate();
  Architecture a;
  auto add = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = a.size;
    a.layout.push_back({name + ".weight", a.size, in, out});
    a.size += in * out;
    l.bias = a.size;
    a.layout.push_back({name + ".bias", a.size, 1, out});
    a.size += out;
    return l;
  };
  const Eigen::Index E = cfg.embed_dim;
  a.token = add("token_embed", 1, E);
  a.time_in = add("time_mlp.in", E, E);
  a.time_out = add("time_mlp.out", E, E);
  a.char_in = add("char_mlp.in", cfg.k, E);
  a.char_out = add("char_mlp.out", E, E);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockLayers b;
    b.modulation = add(p + "adaln", E, 6 * E);
    b.qkv = add(p + "attn.qkv", E, 3 * E);
    b.proj = add(p + "attn.proj", E, E);
    b.fc1 = add(p + "mlp.fc1", E, cfg.mlp_dim());
    b.fc2 = add(p + "mlp.fc2", cfg.mlp_dim(), E);
    a.blocks.push_back(b);
  }
  a.final_modulation = add("final.adaln", E, 2 * E);
  a.head = add("final.head", E, 1);
  return a;
}

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;

inline ConstMap weight(const Eigen::VectorXd& flat, const Linear& l) { return {flat.data() + l.weight, l.in, l.out}; }
inline ConstRowMap bias(const Eigen::VectorXd& flat, const Linear& l) { return {flat.data() + l.bias, l.out}; }

inline Eigen::MatrixXd apply(const Eigen::VectorXd& flat, const Linear& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x * weight(flat, l);
  y.rowwise() += bias(flat, l);
  return y;
}

/// Accumulates dW, db into `grad`; returns dX.
inline Eigen::MatrixXd backprop(const Eigen::VectorXd& flat, Eigen::VectorXd& grad, const Linear& l,
                                const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  Eigen::Map<Eigen::MatrixXd>(grad.data() + l.weight, l.in, l.out).noalias() += x.transpose() * dy;
  Eigen::Map<Eigen::RowVectorXd>(grad.data() + l.bias, l.out) += dy.colwise().sum();
  return dy * weight(flat, l).transpose();
}

inline Eigen::MatrixXd silu(const Eigen::MatrixXd& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

inline Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& x) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
  return (s * (1.0 + x.array() * (1.0 - s))).matrix();
}

constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer norm without affine parameters; also returns 1/sqrt(var + eps) per row.
inline Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, Eigen::VectorXd& inv_std) {
  const double E = static_cast<double>(x.cols());
  Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();
  inv_std = ((centered.array().square().rowwise().sum() / E) + kLayerNormEps).rsqrt();
  return inv_std.asDiagonal() * centered;
}

inline Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& normed, const Eigen::VectorXd& inv_std,
                                           const Eigen::MatrixXd& d_normed) {
  const double E = static_cast<double>(normed.cols());
  const Eigen::VectorXd mean_d = d_normed.rowwise().sum() / E;
  const Eigen::VectorXd mean_dn = (d_normed.array() * normed.array()).rowwise().sum() / E;
  Eigen::MatrixXd dx = d_normed;
  dx.colwise() -= mean_d;
  dx -= mean_dn.asDiagonal() * normed;
  return inv_std.asDiagonal() * dx;
}

/// Sinusoidal features [cos(step * f_j), sin(step * f_j)], f_j = 10000^(-j / (E/2)).
inline Eigen::RowVectorXd timestep_features(int step, int embed_dim) {
  const int half = embed_dim / 2;
  Eigen::RowVectorXd e(embed_dim);
  for (int j = 0; j < half; ++j) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
    e[j] = std::cos(step * f);
    e[half + j] = std::sin(step * f);
  }
  return e;
}

inline void check_finite(const Eigen::MatrixXd& m, const std::string& layer) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + layer);
}

/// x * (1 + scale) + shift, where x stacks `draws` copies of the N rows of shift/scale.
template <class Shift, class Scale>
Eigen::MatrixXd modulate(const Eigen::MatrixXd& x, const Shift& shift, const Scale& scale, Eigen::Index draws) {
  const Eigen::Index N = shift.rows();
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index s = 0; s < draws; ++s)
    out.middleRows(s * N, N).array() = x.middleRows(s * N, N).array() * (1.0 + scale.array()) + shift.array();
  return out;
}

/// h += gate * y with gate broadcast over the stacked draws.
template <class Gate>
void gated_add(Eigen::MatrixXd& h, const Gate& gate, const Eigen::MatrixXd& y, Eigen::Index draws) {
  const Eigen::Index N = gate.rows();
  for (Eigen::Index s = 0; s < draws; ++s) h.middleRows(s * N, N).array() += gate.array() * y.middleRows(s * N, N).array();
}

struct BlockCache {
  Eigen::MatrixXd h_in, n1, a, qkv, attn_heads, attn, h_mid, n2, m, f1, g, ff;
  Eigen::VectorXd inv1, inv2;
  std::vector<Eigen::MatrixXd> probs;  // per head, N x N
};

struct ForwardCache {
  Eigen::RowVectorXd features, t_pre, t_act;
  Eigen::MatrixXd u_pre, u_act, cond, cond_act, final_mod, h0, nf, z;
  Eigen::VectorXd inv_f;
  std::vector<Eigen::MatrixXd> mods;
  std::vector<BlockCache> blocks;
};

/// Forward pass for `draws` stacked copies of the N tokens sharing one conditioning.
/// `x` is draws x N. Fills `cache` (which requires draws == 1) when non-null.
inline Eigen::MatrixXd forward_impl(const Architecture& arch, const Eigen::VectorXd& flat, const DenoiserConfig& cfg,
                                    const Eigen::MatrixXd& x, int step, const Eigen::MatrixXd& conditioning,
                                    ForwardCache* cache) {
  const Eigen::Index N = conditioning.rows();
  const Eigen::Index B = x.rows();
  const Eigen::Index E = cfg.embed_dim;
  const Eigen::Index H = cfg.heads;
  const Eigen::Index dh = cfg.head_dim();
  if (flat.size() != arch.size) throw ShapeError("parameter vector does not match the denoiser configuration");
  if (x.cols() != N) throw ShapeError("noisy returns have " + std::to_string(x.cols()) + " assets, conditioning has " +
                                      std::to_string(N));
  if (conditioning.cols() != cfg.k)
    throw ShapeError("conditioning has " + std::to_string(conditioning.cols()) + " characteristics, model expects " +
                     std::to_string(cfg.k));
  if (step < 1 || step > cfg.max_steps) throw DomainError("step outside [1, max_steps]");

  // Conditioning path, shared by all draws.
  const Eigen::RowVectorXd features = timestep_features(step, cfg.embed_dim);
  const Eigen::RowVectorXd t_pre = apply(flat, arch.time_in, features);
  const Eigen::RowVectorXd t_act = silu(t_pre);
  const Eigen::RowVectorXd t_emb = apply(flat, arch.time_out, t_act);
  const Eigen::MatrixXd u_pre = apply(flat, arch.char_in, conditioning);
  const Eigen::MatrixXd u_act = silu(u_pre);
  Eigen::MatrixXd cond = apply(flat, arch.char_out, u_act);
  cond.rowwise() += t_emb;
  const Eigen::MatrixXd cond_act = silu(cond);
  check_finite(cond, "conditioning embedding");

  // Token path.
  Eigen::MatrixXd h(B * N, E);
  {
    const auto w = weight(flat, arch.token);
    const auto b = bias(flat, arch.token);
    for (Eigen::Index s = 0; s < B; ++s)
      for (Eigen::Index i = 0; i < N; ++i) h.row(s * N + i) = x(s, i) * w.row(0) + b;
  }
  if (cache) {
    cache->features = features;
    cache->t_pre = t_pre;
    cache->t_act = t_act;
    cache->u_pre = u_pre;
    cache->u_act = u_act;
    cache->cond = cond;
    cache->cond_act = cond_act;
    cache->h0 = h;
    cache->mods.clear();
    cache->blocks.clear();
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < arch.blocks.size(); ++l) {
    const auto& layer = arch.blocks[l];
    const Eigen::MatrixXd mod = apply(flat, layer.modulation, cond_act);  // N x 6E
    const auto shift1 = mod.middleCols(0, E), scale1 = mod.middleCols(E, E), gate1 = mod.middleCols(2 * E, E);
    const auto shift2 = mod.middleCols(3 * E, E), scale2 = mod.middleCols(4 * E, E), gate2 = mod.middleCols(5 * E, E);

    BlockCache bc;
    bc.h_in = h;
    Eigen::VectorXd inv1;
    const Eigen::MatrixXd n1 = layer_norm(h, inv1);
    const Eigen::MatrixXd a = modulate(n1, shift1, scale1, B);
    const Eigen::MatrixXd qkv = apply(flat, layer.qkv, a);
    Eigen::MatrixXd heads_out(B * N, E);
    if (cache) bc.probs.resize(static_cast<std::size_t>(H));
    Eigen::MatrixXd scores(N, N);
    Eigen::VectorXd row_max(N), row_sum(N);
    for (Eigen::Index s = 0; s < B; ++s) {
      for (Eigen::Index hd = 0; hd < H; ++hd) {
        const auto q = qkv.block(s * N, hd * dh, N, dh);
        const auto k = qkv.block(s * N, E + hd * dh, N, dh);
        const auto v = qkv.block(s * N, 2 * E + hd * dh, N, dh);
        scores.noalias() = q * k.transpose();
        scores *= inv_sqrt_dh;
        row_max = scores.rowwise().maxCoeff();
        scores = (scores.colwise() - row_max).array().exp().matrix();
        row_sum = scores.rowwise().sum();
        scores = row_sum.cwiseInverse().asDiagonal() * scores;
        heads_out.block(s * N, hd * dh, N, dh).noalias() = scores * v;
        if (cache) bc.probs[static_cast<std::size_t>(hd)] = scores;
      }
    }
    const Eigen::MatrixXd attn = apply(flat, layer.proj, heads_out);
    gated_add(h, gate1, attn, B);
    const Eigen::MatrixXd h_mid = cache ? h : Eigen::MatrixXd();

    Eigen::VectorXd inv2;
    const Eigen::MatrixXd n2 = layer_norm(h, inv2);
    const Eigen::MatrixXd m = modulate(n2, shift2, scale2, B);
    const Eigen::MatrixXd f1 = apply(flat, layer.fc1, m);
    const Eigen::MatrixXd g = silu(f1);
    const Eigen::MatrixXd ff = apply(flat, layer.fc2, g);
    gated_add(h, gate2, ff, B);
    check_finite(h, "transformer block " + std::to_string(l));

    if (cache) {
      bc.n1 = n1;
      bc.inv1 = inv1;
      bc.a = a;
      bc.qkv = qkv;
      bc.attn_heads = heads_out;
      bc.attn = attn;
      bc.h_mid = h_mid;
      bc.n2 = n2;
      bc.inv2 = inv2;
      bc.m = m;
      bc.f1 = f1;
      bc.g = g;
      bc.ff = ff;
      cache->mods.push_back(mod);
      cache->blocks.push_back(std::move(bc));
    }
  }

  const Eigen::MatrixXd final_mod = apply(flat, arch.final_modulation, cond_act);  // N x 2E
  Eigen::VectorXd inv_f;
  const Eigen::MatrixXd nf = layer_norm(h, inv_f);
  const Eigen::MatrixXd z = modulate(nf, final_mod.leftCols(E), final_mod.rightCols(E), B);
  const Eigen::VectorXd y = apply(flat, arch.head, z).col(0);
  check_finite(y, "output head");
  if (cache) {
    cache->final_mod = final_mod;
    cache->nf = nf;
    cache->inv_f = inv_f;
    cache->z = z;
  }
  Eigen::MatrixXd out(B, N);
  for (Eigen::Index s = 0; s < B; ++s) out.row(s) = y.segment(s * N, N).transpose();
  return out;
}

/// Reverse pass for a single draw; accumulates d(out)/d(params) . d_out into `grad`.
inline void backward_impl(const Architecture& arch, const Eigen::VectorXd& flat, const DenoiserConfig& cfg,
                          const Eigen::VectorXd& x, const Eigen::MatrixXd& conditioning, const ForwardCache& c,
                          const Eigen::VectorXd& d_out, Eigen::VectorXd& grad) {
  const Eigen::Index N = conditioning.rows();
  const Eigen::Index E = cfg.embed_dim;
  const Eigen::Index H = cfg.heads;
  const Eigen::Index dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // Final modulated projection.
  const Eigen::MatrixXd dz = backprop(flat, grad, arch.head, c.z, d_out);
  Eigen::MatrixXd d_final_mod(N, 2 * E);
  d_final_mod.leftCols(E) = dz;
  d_final_mod.rightCols(E) = (dz.array() * c.nf.array()).matrix();
  const Eigen::MatrixXd dnf = (dz.array() * (1.0 + c.final_mod.rightCols(E).array())).matrix();
  Eigen::MatrixXd dh_ = layer_norm_backward(c.nf, c.inv_f, dnf);
  Eigen::MatrixXd d_cond_act = backprop(flat, grad, arch.final_modulation, c.cond_act, d_final_mod);

  for (std::size_t li = arch.blocks.size(); li-- > 0;) {
    const auto& layer = arch.blocks[li];
    const auto& b = c.blocks[li];
    const Eigen::MatrixXd& mod = c.mods[li];
    const auto scale1 = mod.middleCols(1 * E, E);
    const auto gate1 = mod.middleCols(2 * E, E);
    const auto scale2 = mod.middleCols(4 * E, E);
    const auto gate2 = mod.middleCols(5 * E, E);
    Eigen::MatrixXd d_mod(N, 6 * E);

    // h_out = h_mid + gate2 * ff
    d_mod.middleCols(5 * E, E) = (dh_.array() * b.ff.array()).matrix();
    const Eigen::MatrixXd dff = (dh_.array() * gate2.array()).matrix();
    const Eigen::MatrixXd dg = backprop(flat, grad, layer.fc2, b.g, dff);
    const Eigen::MatrixXd df1 = (dg.array() * silu_grad(b.f1).array()).matrix();
    const Eigen::MatrixXd dm = backprop(flat, grad, layer.fc1, b.m, df1);
    d_mod.middleCols(3 * E, E) = dm;
    d_mod.middleCols(4 * E, E) = (dm.array() * b.n2.array()).matrix();
    dh_ += layer_norm_backward(b.n2, b.inv2, (dm.array() * (1.0 + scale2.array())).matrix());

    // h_mid = h_in + gate1 * attn
    d_mod.middleCols(2 * E, E) = (dh_.array() * b.attn.array()).matrix();
    const Eigen::MatrixXd dattn = (dh_.array() * gate1.array()).matrix();
    const Eigen::MatrixXd d_heads = backprop(flat, grad, layer.proj, b.attn_heads, dattn);
    Eigen::MatrixXd dqkv(N, 3 * E);
    for (Eigen::Index hd = 0; hd < H; ++hd) {
      const auto q = b.qkv.middleCols(hd * dh, dh);
      const auto k = b.qkv.middleCols(E + hd * dh, dh);
      const auto v = b.qkv.middleCols(2 * E + hd * dh, dh);
      const Eigen::MatrixXd& p = b.probs[static_cast<std::size_t>(hd)];
      const auto d_o = d_heads.middleCols(hd * dh, dh);
      const Eigen::MatrixXd dp = d_o * v.transpose();
      dqkv.middleCols(2 * E + hd * dh, dh).noalias() = p.transpose() * d_o;
      const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
      const Eigen::MatrixXd ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * inv_sqrt_dh;
      dqkv.middleCols(hd * dh, dh).noalias() = ds * k;
      dqkv.middleCols(E + hd * dh, dh).noalias() = ds.transpose() * q;
    }
    const Eigen::MatrixXd da = backprop(flat, grad, layer.qkv, b.a, dqkv);
    d_mod.middleCols(0, E) = da;
    d_mod.middleCols(1 * E, E) = (da.array() * b.n1.array()).matrix();
    dh_ += layer_norm_backward(b.n1, b.inv1, (da.array() * (1.0 + scale1.array())).matrix());

    d_cond_act += backprop(flat, grad, layer.modulation, c.cond_act, d_mod);
  }

  // Token embedding: h0_i = x_i * w + b.
  Eigen::Map<Eigen::RowVectorXd>(grad.data() + arch.token.weight, E) += x.transpose() * dh_;
  Eigen::Map<Eigen::RowVectorXd>(grad.data() + arch.token.bias, E) += dh_.colwise().sum();

  // Conditioning path.
  const Eigen::MatrixXd d_cond = (d_cond_act.array() * silu_grad(c.cond).array()).matrix();
  const Eigen::MatrixXd du_act = backprop(flat, grad, arch.char_out, c.u_act, d_cond);
  const Eigen::MatrixXd du_pre = (du_act.array() * silu_grad(c.u_pre).array()).matrix();
  backprop(flat, grad, arch.char_in, conditioning, du_pre);
  const Eigen::RowVectorXd dt_emb = d_cond.colwise().sum();
  const Eigen::MatrixXd dt_act = backprop(flat, grad, arch.time_out, c.t_act, dt_emb);
  const Eigen::MatrixXd dt_pre = (dt_act.array() * silu_grad(c.t_pre).array()).matrix();
  backprop(flat, grad, arch.time_in, c.features, dt_pre);
}

inline void check_layout(const Architecture& arch, const DenoiserParams& params) {
  if (params.flat.size() != arch.size || params.layout != arch.layout)
    throw ShapeError("parameter layout does not match the denoiser configuration");
}

}  // namespace detail

inline std::vector<Segment> parameter_layout(const DenoiserConfig& config) {
  return detail::build_architecture(config).layout;
}

/// Xavier-uniform linear weights and zero biases, except that every modulation
/// branch and the output head start at exactly zero, so the fresh network predicts 0.
inline DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed) {
  const auto arch = detail::build_architecture(config);
  DenoiserParams p;
  p.layout = arch.layout;
  p.flat = Eigen::VectorXd::Zero(arch.size);
  RandomStream rs(seed, StreamTag::parameter_init);
  auto xavier = [&](const detail::Linear& l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (Eigen::Index i = 0; i < l.in * l.out; ++i) p.flat[l.weight + i] = rs.uniform(-limit, limit);
  };
  xavier(arch.token);
  xavier(arch.time_in);
  xavier(arch.time_out);
  xavier(arch.char_in);
  xavier(arch.char_out);
  for (const auto& b : arch.blocks) {
    xavier(b.qkv);
    xavier(b.proj);
    xavier(b.fc1);
    xavier(b.fc2);
  }
  return p;
}

/// Predicted noise for one draw of N assets.
inline Eigen::VectorXd forward(const DenoiserParams& params, const Eigen::VectorXd& noisy_returns, int step,
                               const Eigen::MatrixXd& conditioning, const DenoiserConfig& config) {
  const auto arch = detail::build_architecture(config);
  detail::check_layout(arch, params);
  return detail::forward_impl(arch, params.flat, config, noisy_returns.transpose(), step, conditioning, nullptr)
      .row(0)
      .transpose();
}

/// Predicted noise for S draws (rows of `noisy_returns`) that share one conditioning matrix.
inline Eigen::MatrixXd forward_batch(const DenoiserParams& params, const Eigen::MatrixXd& noisy_returns, int step,
                                     const Eigen::MatrixXd& conditioning, const DenoiserConfig& config) {
  const auto arch = detail::build_architecture(config);
  detail::check_layout(arch, params);
  // Small chunks keep the working set in cache; results do not depend on the chunking.
  constexpr Eigen::Index kChunk = 4;
  Eigen::MatrixXd out(noisy_returns.rows(), noisy_returns.cols());
  for (Eigen::Index s = 0; s < noisy_returns.rows(); s += kChunk) {
    const Eigen::Index n = std::min(kChunk, noisy_returns.rows() - s);
    out.middleRows(s, n) =
        detail::forward_impl(arch, params.flat, config, noisy_returns.middleRows(s, n), step, conditioning, nullptr);
  }
  return out;
}

struct TrainingItem {
  Eigen::VectorXd x0;
  int step = 1;
  Eigen::VectorXd epsilon;
  Eigen::MatrixXd conditioning;
};

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Noise-prediction loss averaged over items and assets, and its exact gradient.
/// Per-item gradients are reduced in item order, so the result is deterministic.
inline LossGradient loss_and_gradients(const DenoiserParams& params, std::span<const TrainingItem> batch,
                                       const NoiseSchedule& schedule, const DenoiserConfig& config) {
  if (batch.empty()) throw DomainError("loss_and_gradients: empty batch");
  const auto arch = detail::build_architecture(config);
  detail::check_layout(arch, params);
  LossGradient out;
  out.grad = Eigen::VectorXd::Zero(arch.size);
  const double inv_items = 1.0 / static_cast<double>(batch.size());
  detail::ForwardCache cache;
  for (const auto& item : batch) {
    if (item.x0.size() != item.epsilon.size() || item.x0.size() != item.conditioning.rows())
      throw ShapeError("training item shapes disagree");
    const Eigen::VectorXd noisy = q_sample(item.x0, item.step, schedule, item.epsilon);
    const Eigen::VectorXd pred =
        detail::forward_impl(arch, params.flat, config, noisy.transpose(), item.step, item.conditioning, &cache)
            .row(0)
            .transpose();
    const Eigen::VectorXd resid = pred - item.epsilon;
    const double n = static_cast<double>(resid.size());
    out.loss += resid.squaredNorm() / n * inv_items;
    const Eigen::VectorXd d_out = (2.0 * inv_items / n) * resid;
    detail::backward_impl(arch, params.flat, config, noisy, item.conditioning, cache, d_out, out.grad);
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
  return out;
}

}  // namespace factordiff
