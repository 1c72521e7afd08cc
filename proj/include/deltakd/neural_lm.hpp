// SPDX-License-Identifier: Apache-2.0
//
// Small causal self-attention language model with a hand-written reverse pass.
//
// Architecture (pre-norm, RMSNorm with gains, tanh-GELU MLP):
//
//   x = wte[tok] + wpe[pos]
//   repeat num_layers:
//     x += Wo * attn(rms(x) * g1 -> qkv) + bo
//     x += W2 * gelu(W1 * (rms(x) * g2) + b1) + b2
//   logits = Wout * (rms(x) * gf) + bout
//
// The scalar type is a template parameter: training runs in float, gradient
// checks in double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/kernels.hpp"
#include "deltakd/numerics.hpp"
#include "deltakd/random.hpp"

namespace deltakd {

struct NeuralLMConfig {
  std::size_t vocab = 64;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 1;
  std::size_t num_heads = 2;
  std::size_t context_limit = 64;
  std::size_t feedforward_dim = 128;
  std::uint64_t seed = 0;

  bool operator==(const NeuralLMConfig&) const = default;

  void validate() const {
    if (vocab < 2 || embed_dim == 0 || num_layers == 0 || num_heads == 0 || context_limit == 0 ||
        feedforward_dim == 0) {
      throw InputError("neural LM dimensions must be positive (vocab >= 2)");
    }
    if (embed_dim % num_heads != 0) throw InputError("embed_dim must be divisible by num_heads");
  }

  std::size_t layer_param_count() const {
    const auto d = embed_dim, f = feedforward_dim;
    return 4 * d * d + 2 * d * f + 6 * d + f;
  }

  std::size_t param_count() const {
    const auto d = embed_dim;
    return vocab * d + context_limit * d + num_layers * layer_param_count() + d + d * vocab + vocab;
  }

  static NeuralLMConfig student(std::size_t vocab = 64, std::uint64_t seed = 0) {
    return {vocab, 32, 1, 2, 64, 128, seed};
  }
  static NeuralLMConfig teacher(std::size_t vocab = 64, std::uint64_t seed = 0) {
    return {vocab, 64, 2, 4, 64, 256, seed};
  }
  /// Under 2,000 parameters at vocab 64; used by gradient checks.
  static NeuralLMConfig tiny(std::size_t vocab = 64, std::uint64_t seed = 0) { return {vocab, 8, 1, 2, 8, 16, seed}; }
};

template <class T>
class NeuralLM {
 public:
  using Scalar = T;

  struct LayerCache {
    std::vector<T> r1, n1, h1, qkv, att, a, r2, n2, h2, u, act;
  };

  /// Activations of one forward pass; `logits` is [length x vocab].
  struct Cache {
    std::vector<TokenId> tokens;
    std::vector<LayerCache> layers;
    std::vector<T> rf, nf, hf, logits;
    std::size_t length = 0;

    std::span<const T> row(std::size_t t, std::size_t vocab) const {
      return std::span<const T>(logits).subspan(t * vocab, vocab);
    }
  };

  explicit NeuralLM(const NeuralLMConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    params_.assign(cfg_.param_count(), T(0));
    initialize();
  }

  NeuralLM(const NeuralLMConfig& cfg, std::vector<T> params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    if (params_.size() != cfg_.param_count()) {
      throw SnapshotError("parameter blob has " + std::to_string(params_.size()) + " values, config expects " +
                          std::to_string(cfg_.param_count()));
    }
  }

  const NeuralLMConfig& config() const noexcept { return cfg_; }
  std::size_t vocab_size() const noexcept { return cfg_.vocab; }
  std::size_t context_limit() const noexcept { return cfg_.context_limit; }
  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }

  Cache forward(std::span<const TokenId> tokens) const {
    const std::size_t n = tokens.size();
    if (n == 0) throw InputError("forward on an empty sequence");
    if (n > cfg_.context_limit) {
      throw InputError("sequence length " + std::to_string(n) + " exceeds context limit " +
                       std::to_string(cfg_.context_limit));
    }
    const auto D = cfg_.embed_dim, V = cfg_.vocab, F = cfg_.feedforward_dim;
    const auto H = cfg_.num_heads, hd = D / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Cache c;
    c.tokens.assign(tokens.begin(), tokens.end());
    c.length = n;
    std::vector<T> x(n * D);
    const T* wte = p(off_wte());
    const T* wpe = p(off_wpe());
    for (std::size_t t = 0; t < n; ++t) {
      if (tokens[t] >= V) throw InputError("token id " + std::to_string(tokens[t]) + " outside vocabulary");
      for (std::size_t d = 0; d < D; ++d) x[t * D + d] = wte[tokens[t] * D + d] + wpe[t * D + d];
    }

    c.layers.resize(cfg_.num_layers);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const LayerOffsets o = layer_offsets(l);
      LayerCache& lc = c.layers[l];
      rms_forward(x, n, p(o.g1), lc.r1, lc.n1, lc.h1);
      lc.qkv.resize(n * 3 * D);
      kernels::linear_forward(lc.h1.data(), n, D, p(o.wqkv), p(o.bqkv), 3 * D, lc.qkv.data());

      lc.att.assign(H * n * n, T(0));
      lc.a.assign(n * D, T(0));
      std::vector<T> scores(n);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
          const T* q = &lc.qkv[t * 3 * D + h * hd];
          T m = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j <= t; ++j) {
            const T* k = &lc.qkv[j * 3 * D + D + h * hd];
            scores[j] = kernels::dot(q, k, hd) * scale;
            if (scores[j] > m) m = scores[j];
          }
          T z = T(0);
          T* att = &lc.att[(h * n + t) * n];
          for (std::size_t j = 0; j <= t; ++j) {
            att[j] = std::exp(scores[j] - m);
            z += att[j];
          }
          T* a = &lc.a[t * D + h * hd];
          for (std::size_t j = 0; j <= t; ++j) {
            att[j] /= z;
            const T* v = &lc.qkv[j * 3 * D + 2 * D + h * hd];
            for (std::size_t d = 0; d < hd; ++d) a[d] += att[j] * v[d];
          }
        }
      }
      std::vector<T> proj(n * D);
      kernels::linear_forward(lc.a.data(), n, D, p(o.wo), p(o.bo), D, proj.data());
      for (std::size_t i = 0; i < n * D; ++i) x[i] += proj[i];

      rms_forward(x, n, p(o.g2), lc.r2, lc.n2, lc.h2);
      lc.u.resize(n * F);
      kernels::linear_forward(lc.h2.data(), n, D, p(o.w1), p(o.b1), F, lc.u.data());
      lc.act.resize(n * F);
      for (std::size_t i = 0; i < n * F; ++i) lc.act[i] = gelu(lc.u[i]);
      kernels::linear_forward(lc.act.data(), n, F, p(o.w2), p(o.b2), D, proj.data());
      for (std::size_t i = 0; i < n * D; ++i) x[i] += proj[i];
    }

    rms_forward(x, n, p(off_gf()), c.rf, c.nf, c.hf);
    c.logits.resize(n * V);
    kernels::linear_forward(c.hf.data(), n, D, p(off_wout()), p(off_bout()), V, c.logits.data());
    return c;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
  void backward(const Cache& c, std::span<const T> dlogits, std::span<T> grad) const {
    const auto n = c.length;
    const auto D = cfg_.embed_dim, V = cfg_.vocab, F = cfg_.feedforward_dim;
    const auto H = cfg_.num_heads, hd = D / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    if (dlogits.size() != n * V) throw DomainError("dlogits shape mismatch");
    if (grad.size() != params_.size()) throw DomainError("gradient buffer size mismatch");
    T* g = grad.data();

    std::vector<T> dh(n * D, T(0));
    kernels::linear_backward(c.hf.data(), dlogits.data(), n, D, p(off_wout()), V, dh.data(), g + off_wout(),
                             g + off_bout());
    std::vector<T> dx(n * D, T(0));
    rms_backward(dh, c.nf, c.rf, n, p(off_gf()), g + off_gf(), dx);

    std::vector<T> dtmp(n * D), dact(n * F), du(n * F), dqkv(n * 3 * D), da(n * D), datt(n);
    for (std::size_t li = cfg_.num_layers; li-- > 0;) {
      const LayerOffsets o = layer_offsets(li);
      const LayerCache& lc = c.layers[li];

      // MLP branch: dx is d/d(x_out); the residual passes it to x_mid.
      std::fill(dact.begin(), dact.end(), T(0));
      kernels::linear_backward(lc.act.data(), dx.data(), n, F, p(o.w2), D, dact.data(), g + o.w2, g + o.b2);
      for (std::size_t i = 0; i < n * F; ++i) du[i] = dact[i] * gelu_grad(lc.u[i]);
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      kernels::linear_backward(lc.h2.data(), du.data(), n, D, p(o.w1), F, dtmp.data(), g + o.w1, g + o.b1);
      rms_backward(dtmp, lc.n2, lc.r2, n, p(o.g2), g + o.g2, dx);

      // Attention branch.
      std::fill(da.begin(), da.end(), T(0));
      kernels::linear_backward(lc.a.data(), dx.data(), n, D, p(o.wo), D, da.data(), g + o.wo, g + o.bo);
      std::fill(dqkv.begin(), dqkv.end(), T(0));
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
          const T* att = &lc.att[(h * n + t) * n];
          const T* dat = &da[t * D + h * hd];
          T sum = T(0);
          for (std::size_t j = 0; j <= t; ++j) {
            const T* v = &lc.qkv[j * 3 * D + 2 * D + h * hd];
            datt[j] = kernels::dot(dat, v, hd);
            sum += att[j] * datt[j];
            T* dv = &dqkv[j * 3 * D + 2 * D + h * hd];
            for (std::size_t d = 0; d < hd; ++d) dv[d] += att[j] * dat[d];
          }
          const T* q = &lc.qkv[t * 3 * D + h * hd];
          T* dq = &dqkv[t * 3 * D + h * hd];
          for (std::size_t j = 0; j <= t; ++j) {
            const T ds = att[j] * (datt[j] - sum) * scale;
            const T* k = &lc.qkv[j * 3 * D + D + h * hd];
            T* dk = &dqkv[j * 3 * D + D + h * hd];
            for (std::size_t d = 0; d < hd; ++d) {
              dq[d] += ds * k[d];
              dk[d] += ds * q[d];
            }
          }
        }
      }
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      kernels::linear_backward(lc.h1.data(), dqkv.data(), n, D, p(o.wqkv), 3 * D, dtmp.data(), g + o.wqkv,
                               g + o.bqkv);
      rms_backward(dtmp, lc.n1, lc.r1, n, p(o.g1), g + o.g1, dx);
    }

    T* dwte = g + off_wte();
    T* dwpe = g + off_wpe();
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        dwte[c.tokens[t] * D + d] += dx[t * D + d];
        dwpe[t * D + d] += dx[t * D + d];
      }
    }
  }

 private:
  static constexpr T kRmsEps = T(1e-5);

  struct LayerOffsets {
    std::size_t g1, wqkv, bqkv, wo, bo, g2, w1, b1, w2, b2;
  };

  const T* p(std::size_t off) const { return params_.data() + off; }

  std::size_t off_wte() const { return 0; }
  std::size_t off_wpe() const { return cfg_.vocab * cfg_.embed_dim; }
  std::size_t off_layers() const { return off_wpe() + cfg_.context_limit * cfg_.embed_dim; }
  std::size_t off_gf() const { return off_layers() + cfg_.num_layers * cfg_.layer_param_count(); }
  std::size_t off_wout() const { return off_gf() + cfg_.embed_dim; }
  std::size_t off_bout() const { return off_wout() + cfg_.embed_dim * cfg_.vocab; }

  LayerOffsets layer_offsets(std::size_t l) const {
    const auto D = cfg_.embed_dim, F = cfg_.feedforward_dim;
    LayerOffsets o{};
    std::size_t at = off_layers() + l * cfg_.layer_param_count();
    auto take = [&at](std::size_t len) {
      const auto r = at;
      at += len;
      return r;
    };
    o.g1 = take(D);
    o.wqkv = take(D * 3 * D);
    o.bqkv = take(3 * D);
    o.wo = take(D * D);
    o.bo = take(D);
    o.g2 = take(D);
    o.w1 = take(D * F);
    o.b1 = take(F);
    o.w2 = take(F * D);
    o.b2 = take(D);
    return o;
  }

  void initialize() {
    Rng rng(cfg_.seed);
    const auto D = cfg_.embed_dim, F = cfg_.feedforward_dim;
    auto fill_normal = [&](std::size_t off, std::size_t len, double stddev) {
      for (std::size_t i = 0; i < len; ++i) params_[off + i] = static_cast<T>(stddev * standard_normal(rng));
    };
    auto fill_const = [&](std::size_t off, std::size_t len, T v) {
      for (std::size_t i = 0; i < len; ++i) params_[off + i] = v;
    };
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.num_layers));
    fill_normal(off_wte(), cfg_.vocab * D, 0.5);
    fill_normal(off_wpe(), cfg_.context_limit * D, 0.2);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const auto o = layer_offsets(l);
      fill_const(o.g1, D, T(1));
      fill_normal(o.wqkv, 3 * D * D, 1.0 / std::sqrt(double(D)));
      fill_normal(o.wo, D * D, resid / std::sqrt(double(D)));
      fill_const(o.g2, D, T(1));
      fill_normal(o.w1, D * F, 1.0 / std::sqrt(double(D)));
      fill_normal(o.w2, F * D, resid / std::sqrt(double(F)));
    }
    fill_const(off_gf(), D, T(1));
    fill_normal(off_wout(), D * cfg_.vocab, 1.0 / std::sqrt(double(D)));
  }

  void rms_forward(const std::vector<T>& x, std::size_t n, const T* gain, std::vector<T>& r, std::vector<T>& nrm,
                   std::vector<T>& h) const {
    const auto D = cfg_.embed_dim;
    r.resize(n);
    nrm.resize(n * D);
    h.resize(n * D);
    for (std::size_t t = 0; t < n; ++t) {
      const T* xt = &x[t * D];
      const T ms = kernels::dot(xt, xt, D) / static_cast<T>(D);
      r[t] = T(1) / std::sqrt(ms + kRmsEps);
      for (std::size_t d = 0; d < D; ++d) {
        nrm[t * D + d] = xt[d] * r[t];
        h[t * D + d] = nrm[t * D + d] * gain[d];
      }
    }
  }

  /// Adds the input gradient of an RMSNorm into dx.
  void rms_backward(const std::vector<T>& dh, const std::vector<T>& nrm, const std::vector<T>& r, std::size_t n,
                    const T* gain, T* dgain, std::vector<T>& dx) const {
    const auto D = cfg_.embed_dim;
    std::vector<T> dn(D);
    for (std::size_t t = 0; t < n; ++t) {
      T proj = T(0);
      for (std::size_t d = 0; d < D; ++d) {
        dgain[d] += dh[t * D + d] * nrm[t * D + d];
        dn[d] = dh[t * D + d] * gain[d];
        proj += dn[d] * nrm[t * D + d];
      }
      proj /= static_cast<T>(D);
      for (std::size_t d = 0; d < D; ++d) dx[t * D + d] += r[t] * (dn[d] - nrm[t * D + d] * proj);
    }
  }

  static T gelu(T u) {
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
  }

  static T gelu_grad(T u) {
    constexpr T c = static_cast<T>(0.7978845608028654);
    const T th = std::tanh(c * (u + T(0.044715) * u * u * u));
    return T(0.5) * (T(1) + th) + T(0.5) * u * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * u * u);
  }

  NeuralLMConfig cfg_;
  std::vector<T> params_;
};

/// Converts a model to another scalar type (e.g. float snapshot to double for
/// gradient checks).
template <class To, class From>
NeuralLM<To> convert_model(const NeuralLM<From>& m) {
  std::vector<To> p(m.params().begin(), m.params().end());
  return NeuralLM<To>(m.config(), std::move(p));
}

}  // namespace deltakd
