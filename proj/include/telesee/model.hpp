#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/tensor.hpp"
#include "telesee/vocab.hpp"

namespace telesee {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ffn_dim = 128;
  int max_src_len = 192;
  int max_tgt_len = 160;
  double dropout_rate = 0.0;
  uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 8) throw ValidationError("model: vocab_size must be >= 8");
    if (d_model < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 || ffn_dim < 1)
      throw ValidationError("model: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw ValidationError("model: d_model must be divisible by n_heads");
    if (max_src_len < 8 || max_tgt_len < 8)
      throw ValidationError("model: sequence length limits must be >= 8");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ValidationError("model: dropout_rate must lie in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},   {"d_model", d_model},
            {"n_heads", n_heads},         {"n_enc_layers", n_enc_layers},
            {"n_dec_layers", n_dec_layers},{"ffn_dim", ffn_dim},
            {"max_src_len", max_src_len}, {"max_tgt_len", max_tgt_len},
            {"dropout_rate", dropout_rate},{"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_src_len = j.at("max_src_len").get<int>();
    c.max_tgt_len = j.at("max_tgt_len").get<int>();
    c.dropout_rate = j.value("dropout_rate", 0.0);
    c.seed = j.value("seed", uint64_t{1});
    return c;
  }
};

struct TensorSpec {
  std::string name;
  size_t offset = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t size() const { return rows * cols; }
};

// Flat parameter store with a deterministic named-tensor layout.
class ModelParams {
 public:
  ModelConfig config;
  std::vector<double> data;

  static ModelParams with_layout(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    size_t d = static_cast<size_t>(cfg.d_model);
    size_t f = static_cast<size_t>(cfg.ffn_dim);
    size_t v = static_cast<size_t>(cfg.vocab_size);
    auto add = [&](const std::string& name, size_t rows, size_t cols) {
      p.index_[name] = p.specs_.size();
      p.specs_.push_back({name, p.total_, rows, cols});
      p.total_ += rows * cols;
    };
    add("embed", v, d);
    for (int l = 0; l < cfg.n_enc_layers; ++l) {
      std::string pre = "enc." + std::to_string(l) + ".";
      add(pre + "ln1.g", 1, d); add(pre + "ln1.b", 1, d);
      add(pre + "wq", d, d); add(pre + "wk", d, d); add(pre + "wv", d, d); add(pre + "wo", d, d);
      add(pre + "ln2.g", 1, d); add(pre + "ln2.b", 1, d);
      add(pre + "w1", d, f); add(pre + "b1", 1, f); add(pre + "w2", f, d); add(pre + "b2", 1, d);
    }
    add("enc.final_ln.g", 1, d); add("enc.final_ln.b", 1, d);
    for (int l = 0; l < cfg.n_dec_layers; ++l) {
      std::string pre = "dec." + std::to_string(l) + ".";
      add(pre + "ln1.g", 1, d); add(pre + "ln1.b", 1, d);
      add(pre + "self.wq", d, d); add(pre + "self.wk", d, d);
      add(pre + "self.wv", d, d); add(pre + "self.wo", d, d);
      add(pre + "ln2.g", 1, d); add(pre + "ln2.b", 1, d);
      add(pre + "cross.wq", d, d); add(pre + "cross.wk", d, d);
      add(pre + "cross.wv", d, d); add(pre + "cross.wo", d, d);
      add(pre + "ln3.g", 1, d); add(pre + "ln3.b", 1, d);
      add(pre + "w1", d, f); add(pre + "b1", 1, f); add(pre + "w2", f, d); add(pre + "b2", 1, d);
    }
    add("dec.final_ln.g", 1, d); add("dec.final_ln.b", 1, d);
    add("out_proj", d, v);
    p.data.assign(p.total_, 0.0);
    return p;
  }

  const std::vector<TensorSpec>& specs() const { return specs_; }
  size_t param_count() const { return total_; }

  const TensorSpec& spec(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter tensor: " + name);
    return specs_[it->second];
  }
  double* t(const std::string& name) { return data.data() + spec(name).offset; }
  const double* t(const std::string& name) const { return data.data() + spec(name).offset; }

 private:
  std::vector<TensorSpec> specs_;
  std::unordered_map<std::string, size_t> index_;
  size_t total_ = 0;
};

// Deterministic scaled-normal initialization; LN gains start at 1.
inline ModelParams init_params(const ModelConfig& cfg) {
  ModelParams p = ModelParams::with_layout(cfg);
  Rng rng(cfg.seed);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim));
  for (const auto& s : p.specs()) {
    double* ptr = p.data.data() + s.offset;
    bool is_gain = s.name.ends_with("ln1.g") || s.name.ends_with("ln2.g") ||
                   s.name.ends_with("ln3.g") || s.name.ends_with("final_ln.g");
    bool is_bias = s.rows == 1 && !is_gain;
    if (is_gain) {
      std::fill(ptr, ptr + s.size(), 1.0);
    } else if (is_bias) {
      std::fill(ptr, ptr + s.size(), 0.0);
    } else {
      double std_dev = s.name.find(".w2") != std::string::npos ? inv_sqrt_f : inv_sqrt_d;
      // Small final projection keeps the initial output distribution close
      // to uniform over the vocabulary.
      if (s.name == "out_proj") std_dev = 0.1 * inv_sqrt_d;
      for (size_t i = 0; i < s.size(); ++i) ptr[i] = rng.normal() * std_dev;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward/backward machinery
// ---------------------------------------------------------------------------

namespace model_detail {

constexpr double kLnEps = 1e-5;
constexpr double kMaskNegInf = -1e9;

struct LnTape {
  std::vector<double> xhat;       // T×D
  std::vector<double> inv_sigma;  // T
};

inline void layer_norm_forward(const double* x, size_t t, size_t d, const double* g,
                               const double* b, double* y, LnTape* tape) {
  if (tape) {
    tape->xhat.resize(t * d);
    tape->inv_sigma.resize(t);
  }
  for (size_t i = 0; i < t; ++i) {
    const double* xi = x + i * d;
    double mean = 0.0;
    for (size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    double inv_sigma = 1.0 / std::sqrt(var + kLnEps);
    double* yi = y + i * d;
    for (size_t j = 0; j < d; ++j) {
      double xhat = (xi[j] - mean) * inv_sigma;
      yi[j] = g[j] * xhat + b[j];
      if (tape) tape->xhat[i * d + j] = xhat;
    }
    if (tape) tape->inv_sigma[i] = inv_sigma;
  }
}

inline void layer_norm_backward(const LnTape& tape, size_t t, size_t d, const double* g,
                                const double* dy, double* dx_acc, double* dg, double* db) {
  for (size_t i = 0; i < t; ++i) {
    const double* dyi = dy + i * d;
    const double* xhat = tape.xhat.data() + i * d;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double dxhat = dyi[j] * g[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat[j];
      dg[j] += dyi[j] * xhat[j];
      db[j] += dyi[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    double inv_sigma = tape.inv_sigma[i];
    double* dxi = dx_acc + i * d;
    for (size_t j = 0; j < d; ++j) {
      double dxhat = dyi[j] * g[j];
      dxi[j] += inv_sigma * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    }
  }
}

struct AttnWeights {
  const double *wq, *wk, *wv, *wo;
};
struct AttnGrads {
  double *wq, *wk, *wv, *wo;
};

struct AttnTape {
  std::vector<double> q, k, v;  // T×D / S×D
  std::vector<double> probs;    // H × T × S
  std::vector<double> ctx;      // T×D
};

// Optional cache of the key/value projections of a fixed kv input (used for
// cross-attention during incremental decoding, where the encoder output
// never changes between steps).
struct KvCache {
  std::vector<double> k, v;  // S×D
  size_t s = 0;
};

// Multi-head scaled dot-product attention. `q_in` is T×D, `kv_in` is S×D.
// `kv_mask` (length S, may be null) zeroes attention to masked columns;
// `causal` restricts position i to columns <= i (requires T == S).
inline void attention_forward(const AttnWeights& w, const double* q_in, size_t t,
                              const double* kv_in, size_t s, const uint8_t* kv_mask, bool causal,
                              size_t h, size_t d, double* out, AttnTape* tape,
                              const KvCache* cache) {
  size_t dh = d / h;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> q(t * d), k, v;
  matmul(q_in, w.wq, q.data(), t, d, d);
  const double *kp, *vp;
  if (cache && cache->s == s) {
    kp = cache->k.data();
    vp = cache->v.data();
  } else {
    k.resize(s * d);
    v.resize(s * d);
    matmul(kv_in, w.wk, k.data(), s, d, d);
    matmul(kv_in, w.wv, v.data(), s, d, d);
    kp = k.data();
    vp = v.data();
  }

  std::vector<double> probs(h * t * s);
  std::vector<double> ctx(t * d, 0.0);
  std::vector<double> row(s);
  for (size_t head = 0; head < h; ++head) {
    size_t off = head * dh;
    for (size_t i = 0; i < t; ++i) {
      const double* qi = q.data() + i * d + off;
      double maxv = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < s; ++j) {
        bool masked = (kv_mask && !kv_mask[j]) || (causal && j > i);
        if (masked) {
          row[j] = kMaskNegInf;
        } else {
          const double* kj = kp + j * d + off;
          double dot = 0.0;
          for (size_t p = 0; p < dh; ++p) dot += qi[p] * kj[p];
          row[j] = dot * inv_scale;
        }
        maxv = std::max(maxv, row[j]);
      }
      double denom = 0.0;
      for (size_t j = 0; j < s; ++j) {
        row[j] = std::exp(row[j] - maxv);
        denom += row[j];
      }
      double* prow = probs.data() + (head * t + i) * s;
      double* ci = ctx.data() + i * d + off;
      for (size_t j = 0; j < s; ++j) {
        double pj = row[j] / denom;
        prow[j] = pj;
        if (pj != 0.0) {
          const double* vj = vp + j * d + off;
          for (size_t p = 0; p < dh; ++p) ci[p] += pj * vj[p];
        }
      }
    }
  }
  matmul(ctx.data(), w.wo, out, t, d, d);
  if (tape) {
    tape->q = std::move(q);
    if (cache && cache->s == s) {
      tape->k.assign(kp, kp + s * d);
      tape->v.assign(vp, vp + s * d);
    } else {
      tape->k = std::move(k);
      tape->v = std::move(v);
    }
    tape->probs = std::move(probs);
    tape->ctx = std::move(ctx);
  }
}

inline void attention_backward(const AttnWeights& w, AttnGrads& gw, const AttnTape& tape,
                               const double* q_in, size_t t, const double* kv_in, size_t s,
                               size_t h, size_t d, const double* d_out, double* d_q_in,
                               double* d_kv_in) {
  size_t dh = d / h;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> d_ctx(t * d);
  matmul_bt(d_out, w.wo, d_ctx.data(), t, d, d);
  matmul_at_acc(tape.ctx.data(), d_out, gw.wo, t, d, d);

  std::vector<double> dq(t * d, 0.0), dk(s * d, 0.0), dv(s * d, 0.0);
  std::vector<double> d_probs(s), d_scores(s);
  for (size_t head = 0; head < h; ++head) {
    size_t off = head * dh;
    for (size_t i = 0; i < t; ++i) {
      const double* prow = tape.probs.data() + (head * t + i) * s;
      const double* dci = d_ctx.data() + i * d + off;
      double dot_pd = 0.0;
      for (size_t j = 0; j < s; ++j) {
        double dp = 0.0;
        const double* vj = tape.v.data() + j * d + off;
        for (size_t p = 0; p < dh; ++p) dp += dci[p] * vj[p];
        d_probs[j] = dp;
        dot_pd += dp * prow[j];
        if (prow[j] != 0.0) {
          double* dvj = dv.data() + j * d + off;
          for (size_t p = 0; p < dh; ++p) dvj[p] += prow[j] * dci[p];
        }
      }
      const double* qi = tape.q.data() + i * d + off;
      double* dqi = dq.data() + i * d + off;
      for (size_t j = 0; j < s; ++j) {
        double ds = prow[j] * (d_probs[j] - dot_pd);
        if (ds == 0.0) continue;
        ds *= inv_scale;
        const double* kj = tape.k.data() + j * d + off;
        double* dkj = dk.data() + j * d + off;
        for (size_t p = 0; p < dh; ++p) {
          dqi[p] += ds * kj[p];
          dkj[p] += ds * qi[p];
        }
      }
    }
  }
  matmul_bt_acc(dq.data(), w.wq, d_q_in, t, d, d);
  matmul_at_acc(q_in, dq.data(), gw.wq, t, d, d);
  matmul_bt_acc(dk.data(), w.wk, d_kv_in, s, d, d);
  matmul_at_acc(kv_in, dk.data(), gw.wk, s, d, d);
  matmul_bt_acc(dv.data(), w.wv, d_kv_in, s, d, d);
  matmul_at_acc(kv_in, dv.data(), gw.wv, s, d, d);
}

struct FfnTape {
  std::vector<double> h_pre;  // T×F
  std::vector<double> h_act;  // T×F
};

inline void ffn_forward(const double* x, size_t t, size_t d, size_t f, const double* w1,
                        const double* b1, const double* w2, const double* b2, double* out,
                        FfnTape* tape) {
  std::vector<double> h(t * f);
  matmul(x, w1, h.data(), t, d, f);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < f; ++j) h[i * f + j] += b1[j];
  std::vector<double> act(t * f);
  for (size_t i = 0; i < t * f; ++i) act[i] = gelu(h[i]);
  matmul(act.data(), w2, out, t, f, d);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < d; ++j) out[i * d + j] += b2[j];
  if (tape) {
    tape->h_pre = std::move(h);
    tape->h_act = std::move(act);
  }
}

inline void ffn_backward(const FfnTape& tape, const double* x, size_t t, size_t d, size_t f,
                         const double* w1, const double* w2, const double* d_out, double* dx_acc,
                         double* dw1, double* db1, double* dw2, double* db2) {
  matmul_at_acc(tape.h_act.data(), d_out, dw2, t, f, d);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < d; ++j) db2[j] += d_out[i * d + j];
  std::vector<double> d_act(t * f);
  matmul_bt(d_out, w2, d_act.data(), t, d, f);
  for (size_t i = 0; i < t * f; ++i) d_act[i] *= gelu_grad(tape.h_pre[i]);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < f; ++j) db1[j] += d_act[i * f + j];
  matmul_at_acc(x, d_act.data(), dw1, t, d, f);
  matmul_bt_acc(d_act.data(), w1, dx_acc, t, f, d);
}

inline void add_positions(double* x, size_t t, size_t d) {
  for (size_t pos = 0; pos < t; ++pos)
    for (size_t j = 0; j < d; j += 2) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      x[pos * d + j] += std::sin(angle);
      if (j + 1 < d) x[pos * d + j + 1] += std::cos(angle);
    }
}

// Inverted dropout applied to a sublayer output; mask entries are the kept
// flags. Backward multiplies by the same mask/scale.
inline void dropout_forward(double* x, size_t n, double rate, Rng& rng,
                            std::vector<uint8_t>& mask) {
  mask.resize(n);
  double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < n; ++i) {
    bool keep = rng.uniform() >= rate;
    mask[i] = keep ? 1 : 0;
    x[i] = keep ? x[i] * scale : 0.0;
  }
}

inline void dropout_backward(double* dx, size_t n, double rate, const std::vector<uint8_t>& mask) {
  double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < n; ++i) dx[i] = mask[i] ? dx[i] * scale : 0.0;
}

struct EncBlockTape {
  LnTape ln1;
  AttnTape attn;
  LnTape ln2;
  FfnTape ffn;
  std::vector<double> xn1, xn2;             // normed sublayer inputs
  std::vector<uint8_t> drop_attn, drop_ffn; // dropout masks when active
};

struct EncTape {
  std::vector<int> ids;
  std::vector<EncBlockTape> blocks;
  std::vector<double> final_in;  // input to final LN
  LnTape final_ln;
};

struct DecBlockTape {
  LnTape ln1;
  AttnTape self_attn;
  LnTape ln2;
  AttnTape cross_attn;
  LnTape ln3;
  FfnTape ffn;
  std::vector<double> xn1, xn2, xn3;
  std::vector<uint8_t> drop_self, drop_cross, drop_ffn;
};

struct DecTape {
  std::vector<int> ids;
  std::vector<DecBlockTape> blocks;
  std::vector<double> final_in;
  LnTape final_ln;
  std::vector<double> hidden;  // T×D after final LN
};

}  // namespace model_detail

// Per-document contextual encoding, produced once and reused across all
// decoding stages. Immutable after construction.
struct EncoderOutput {
  std::vector<double> hidden;  // S×D
  std::vector<uint8_t> mask;   // 1 = real token, 0 = padding
  size_t len = 0;
  bool truncated = false;
};

namespace model_detail {

struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

inline void embed_ids(const ModelParams& p, const std::vector<int>& ids, double* x) {
  size_t d = static_cast<size_t>(p.config.d_model);
  double scale = std::sqrt(static_cast<double>(d));
  const double* embed = p.t("embed");
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= p.config.vocab_size)
      throw ValidationError("token id out of range for model vocab: " + std::to_string(id));
    const double* row = embed + static_cast<size_t>(id) * d;
    for (size_t j = 0; j < d; ++j) x[i * d + j] = row[j] * scale;
  }
  add_positions(x, ids.size(), d);
}

inline EncoderOutput encoder_forward(const ModelParams& p, const std::vector<int>& src_ids_in,
                                     int pad_id, EncTape* tape, DropoutCtx drop = {}) {
  const auto& cfg = p.config;
  std::vector<int> ids = src_ids_in;
  EncoderOutput out;
  if (ids.size() > static_cast<size_t>(cfg.max_src_len)) {
    ids.resize(static_cast<size_t>(cfg.max_src_len));
    out.truncated = true;
  }
  if (ids.empty()) throw ValidationError("encoder: empty input");
  size_t s = ids.size(), d = static_cast<size_t>(cfg.d_model);
  size_t h = static_cast<size_t>(cfg.n_heads), f = static_cast<size_t>(cfg.ffn_dim);
  out.len = s;
  out.mask.resize(s);
  for (size_t i = 0; i < s; ++i) out.mask[i] = ids[i] == pad_id ? 0 : 1;

  std::vector<double> x(s * d);
  embed_ids(p, ids, x.data());
  if (tape) {
    tape->ids = ids;
    tape->blocks.resize(static_cast<size_t>(cfg.n_enc_layers));
  }
  std::vector<double> xn(s * d), sub(s * d);
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    EncBlockTape* bt = tape ? &tape->blocks[static_cast<size_t>(l)] : nullptr;
    layer_norm_forward(x.data(), s, d, p.t(pre + "ln1.g"), p.t(pre + "ln1.b"), xn.data(),
                       bt ? &bt->ln1 : nullptr);
    AttnWeights w{p.t(pre + "wq"), p.t(pre + "wk"), p.t(pre + "wv"), p.t(pre + "wo")};
    attention_forward(w, xn.data(), s, xn.data(), s, out.mask.data(), false, h, d, sub.data(),
                      bt ? &bt->attn : nullptr, nullptr);
    if (drop.active()) {
      std::vector<uint8_t> m;
      dropout_forward(sub.data(), s * d, drop.rate, *drop.rng, m);
      if (bt) bt->drop_attn = std::move(m);
    }
    if (bt) bt->xn1 = xn;
    add_inplace(x.data(), sub.data(), s * d);

    layer_norm_forward(x.data(), s, d, p.t(pre + "ln2.g"), p.t(pre + "ln2.b"), xn.data(),
                       bt ? &bt->ln2 : nullptr);
    ffn_forward(xn.data(), s, d, f, p.t(pre + "w1"), p.t(pre + "b1"), p.t(pre + "w2"),
                p.t(pre + "b2"), sub.data(), bt ? &bt->ffn : nullptr);
    if (drop.active()) {
      std::vector<uint8_t> m;
      dropout_forward(sub.data(), s * d, drop.rate, *drop.rng, m);
      if (bt) bt->drop_ffn = std::move(m);
    }
    if (bt) bt->xn2 = xn;
    add_inplace(x.data(), sub.data(), s * d);
  }
  if (tape) tape->final_in = x;
  out.hidden.resize(s * d);
  layer_norm_forward(x.data(), s, d, p.t("enc.final_ln.g"), p.t("enc.final_ln.b"),
                     out.hidden.data(), tape ? &tape->final_ln : nullptr);
  return out;
}

// Returns the decoder's final hidden states (T×D). Logit projection is left
// to the caller so that inference can project only the last position.
inline std::vector<double> decoder_forward(const ModelParams& p, const EncoderOutput& enc,
                                           const std::vector<int>& dec_ids, DecTape* tape,
                                           const std::vector<KvCache>* cross_cache,
                                           DropoutCtx drop = {}) {
  const auto& cfg = p.config;
  if (dec_ids.empty()) throw ValidationError("decoder: empty input");
  size_t t = dec_ids.size(), d = static_cast<size_t>(cfg.d_model);
  size_t h = static_cast<size_t>(cfg.n_heads), f = static_cast<size_t>(cfg.ffn_dim);
  size_t s = enc.len;

  std::vector<double> x(t * d);
  embed_ids(p, dec_ids, x.data());
  if (tape) {
    tape->ids = dec_ids;
    tape->blocks.resize(static_cast<size_t>(cfg.n_dec_layers));
  }
  std::vector<double> xn(t * d), sub(t * d);
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    std::string pre = "dec." + std::to_string(l) + ".";
    DecBlockTape* bt = tape ? &tape->blocks[static_cast<size_t>(l)] : nullptr;

    layer_norm_forward(x.data(), t, d, p.t(pre + "ln1.g"), p.t(pre + "ln1.b"), xn.data(),
                       bt ? &bt->ln1 : nullptr);
    AttnWeights self_w{p.t(pre + "self.wq"), p.t(pre + "self.wk"), p.t(pre + "self.wv"),
                       p.t(pre + "self.wo")};
    attention_forward(self_w, xn.data(), t, xn.data(), t, nullptr, true, h, d, sub.data(),
                      bt ? &bt->self_attn : nullptr, nullptr);
    if (drop.active()) {
      std::vector<uint8_t> m;
      dropout_forward(sub.data(), t * d, drop.rate, *drop.rng, m);
      if (bt) bt->drop_self = std::move(m);
    }
    if (bt) bt->xn1 = xn;
    add_inplace(x.data(), sub.data(), t * d);

    layer_norm_forward(x.data(), t, d, p.t(pre + "ln2.g"), p.t(pre + "ln2.b"), xn.data(),
                       bt ? &bt->ln2 : nullptr);
    AttnWeights cross_w{p.t(pre + "cross.wq"), p.t(pre + "cross.wk"), p.t(pre + "cross.wv"),
                        p.t(pre + "cross.wo")};
    const KvCache* cache =
        cross_cache ? &(*cross_cache)[static_cast<size_t>(l)] : nullptr;
    attention_forward(cross_w, xn.data(), t, enc.hidden.data(), s, enc.mask.data(), false, h, d,
                      sub.data(), bt ? &bt->cross_attn : nullptr, cache);
    if (drop.active()) {
      std::vector<uint8_t> m;
      dropout_forward(sub.data(), t * d, drop.rate, *drop.rng, m);
      if (bt) bt->drop_cross = std::move(m);
    }
    if (bt) bt->xn2 = xn;
    add_inplace(x.data(), sub.data(), t * d);

    layer_norm_forward(x.data(), t, d, p.t(pre + "ln3.g"), p.t(pre + "ln3.b"), xn.data(),
                       bt ? &bt->ln3 : nullptr);
    ffn_forward(xn.data(), t, d, f, p.t(pre + "w1"), p.t(pre + "b1"), p.t(pre + "w2"),
                p.t(pre + "b2"), sub.data(), bt ? &bt->ffn : nullptr);
    if (drop.active()) {
      std::vector<uint8_t> m;
      dropout_forward(sub.data(), t * d, drop.rate, *drop.rng, m);
      if (bt) bt->drop_ffn = std::move(m);
    }
    if (bt) bt->xn3 = xn;
    add_inplace(x.data(), sub.data(), t * d);
  }
  if (tape) tape->final_in = x;
  std::vector<double> hidden(t * d);
  layer_norm_forward(x.data(), t, d, p.t("dec.final_ln.g"), p.t("dec.final_ln.b"), hidden.data(),
                     tape ? &tape->final_ln : nullptr);
  if (tape) tape->hidden = hidden;
  return hidden;
}

// Backward through the decoder stack. `d_hidden` is the gradient w.r.t. the
// decoder's final hidden states; gradients w.r.t. the encoder hidden states
// are accumulated into `d_enc_hidden`.
inline void decoder_backward(const ModelParams& p, const EncoderOutput& enc, const DecTape& tape,
                             const std::vector<double>& d_hidden, std::vector<double>& grads,
                             double* d_enc_hidden) {
  const auto& cfg = p.config;
  size_t t = tape.ids.size(), d = static_cast<size_t>(cfg.d_model);
  size_t h = static_cast<size_t>(cfg.n_heads), f = static_cast<size_t>(cfg.ffn_dim);
  size_t s = enc.len;
  auto g = [&](const std::string& name) { return grads.data() + p.spec(name).offset; };

  std::vector<double> dx(t * d, 0.0);
  layer_norm_backward(tape.final_ln, t, d, p.t("dec.final_ln.g"), d_hidden.data(), dx.data(),
                      g("dec.final_ln.g"), g("dec.final_ln.b"));

  std::vector<double> d_sub(t * d), d_xn(t * d);
  for (int l = cfg.n_dec_layers - 1; l >= 0; --l) {
    std::string pre = "dec." + std::to_string(l) + ".";
    const DecBlockTape& bt = tape.blocks[static_cast<size_t>(l)];
    double rate = cfg.dropout_rate;

    // FFN sublayer
    std::copy(dx.begin(), dx.end(), d_sub.begin());
    if (!bt.drop_ffn.empty()) dropout_backward(d_sub.data(), t * d, rate, bt.drop_ffn);
    std::fill(d_xn.begin(), d_xn.end(), 0.0);
    ffn_backward(bt.ffn, bt.xn3.data(), t, d, f, p.t(pre + "w1"), p.t(pre + "w2"), d_sub.data(),
                 d_xn.data(), g(pre + "w1"), g(pre + "b1"), g(pre + "w2"), g(pre + "b2"));
    layer_norm_backward(bt.ln3, t, d, p.t(pre + "ln3.g"), d_xn.data(), dx.data(),
                        g(pre + "ln3.g"), g(pre + "ln3.b"));

    // Cross-attention sublayer
    std::copy(dx.begin(), dx.end(), d_sub.begin());
    if (!bt.drop_cross.empty()) dropout_backward(d_sub.data(), t * d, rate, bt.drop_cross);
    std::fill(d_xn.begin(), d_xn.end(), 0.0);
    AttnWeights cross_w{p.t(pre + "cross.wq"), p.t(pre + "cross.wk"), p.t(pre + "cross.wv"),
                        p.t(pre + "cross.wo")};
    AttnGrads cross_g{g(pre + "cross.wq"), g(pre + "cross.wk"), g(pre + "cross.wv"),
                      g(pre + "cross.wo")};
    attention_backward(cross_w, cross_g, bt.cross_attn, bt.xn2.data(), t, enc.hidden.data(), s, h,
                       d, d_sub.data(), d_xn.data(), d_enc_hidden);
    layer_norm_backward(bt.ln2, t, d, p.t(pre + "ln2.g"), d_xn.data(), dx.data(),
                        g(pre + "ln2.g"), g(pre + "ln2.b"));

    // Self-attention sublayer
    std::copy(dx.begin(), dx.end(), d_sub.begin());
    if (!bt.drop_self.empty()) dropout_backward(d_sub.data(), t * d, rate, bt.drop_self);
    std::fill(d_xn.begin(), d_xn.end(), 0.0);
    AttnWeights self_w{p.t(pre + "self.wq"), p.t(pre + "self.wk"), p.t(pre + "self.wv"),
                       p.t(pre + "self.wo")};
    AttnGrads self_g{g(pre + "self.wq"), g(pre + "self.wk"), g(pre + "self.wv"),
                     g(pre + "self.wo")};
    attention_backward(self_w, self_g, bt.self_attn, bt.xn1.data(), t, bt.xn1.data(), t, h, d,
                       d_sub.data(), d_xn.data(), d_xn.data());
    layer_norm_backward(bt.ln1, t, d, p.t(pre + "ln1.g"), d_xn.data(), dx.data(),
                        g(pre + "ln1.g"), g(pre + "ln1.b"));
  }

  // Embedding scatter (position encodings are constant).
  double scale = std::sqrt(static_cast<double>(d));
  double* d_embed = g("embed");
  for (size_t i = 0; i < t; ++i) {
    double* row = d_embed + static_cast<size_t>(tape.ids[i]) * d;
    for (size_t j = 0; j < d; ++j) row[j] += dx[i * d + j] * scale;
  }
}

inline void encoder_backward(const ModelParams& p, const EncTape& tape,
                             const std::vector<double>& d_hidden, std::vector<double>& grads) {
  const auto& cfg = p.config;
  size_t s = tape.ids.size(), d = static_cast<size_t>(cfg.d_model);
  size_t h = static_cast<size_t>(cfg.n_heads), f = static_cast<size_t>(cfg.ffn_dim);
  auto g = [&](const std::string& name) { return grads.data() + p.spec(name).offset; };

  std::vector<double> dx(s * d, 0.0);
  layer_norm_backward(tape.final_ln, s, d, p.t("enc.final_ln.g"), d_hidden.data(), dx.data(),
                      g("enc.final_ln.g"), g("enc.final_ln.b"));

  std::vector<double> d_sub(s * d), d_xn(s * d);
  for (int l = cfg.n_enc_layers - 1; l >= 0; --l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    const EncBlockTape& bt = tape.blocks[static_cast<size_t>(l)];
    double rate = cfg.dropout_rate;

    std::copy(dx.begin(), dx.end(), d_sub.begin());
    if (!bt.drop_ffn.empty()) dropout_backward(d_sub.data(), s * d, rate, bt.drop_ffn);
    std::fill(d_xn.begin(), d_xn.end(), 0.0);
    ffn_backward(bt.ffn, bt.xn2.data(), s, d, f, p.t(pre + "w1"), p.t(pre + "w2"), d_sub.data(),
                 d_xn.data(), g(pre + "w1"), g(pre + "b1"), g(pre + "w2"), g(pre + "b2"));
    layer_norm_backward(bt.ln2, s, d, p.t(pre + "ln2.g"), d_xn.data(), dx.data(),
                        g(pre + "ln2.g"), g(pre + "ln2.b"));

    std::copy(dx.begin(), dx.end(), d_sub.begin());
    if (!bt.drop_attn.empty()) dropout_backward(d_sub.data(), s * d, rate, bt.drop_attn);
    std::fill(d_xn.begin(), d_xn.end(), 0.0);
    AttnWeights w{p.t(pre + "wq"), p.t(pre + "wk"), p.t(pre + "wv"), p.t(pre + "wo")};
    AttnGrads gw{g(pre + "wq"), g(pre + "wk"), g(pre + "wv"), g(pre + "wo")};
    attention_backward(w, gw, bt.attn, bt.xn1.data(), s, bt.xn1.data(), s, h, d, d_sub.data(),
                       d_xn.data(), d_xn.data());
    layer_norm_backward(bt.ln1, s, d, p.t(pre + "ln1.g"), d_xn.data(), dx.data(),
                        g(pre + "ln1.g"), g(pre + "ln1.b"));
  }

  double scale = std::sqrt(static_cast<double>(d));
  double* d_embed = g("embed");
  for (size_t i = 0; i < s; ++i) {
    double* row = d_embed + static_cast<size_t>(tape.ids[i]) * d;
    for (size_t j = 0; j < d; ++j) row[j] += dx[i * d + j] * scale;
  }
}

inline std::vector<KvCache> build_cross_cache(const ModelParams& p, const EncoderOutput& enc) {
  const auto& cfg = p.config;
  size_t d = static_cast<size_t>(cfg.d_model);
  std::vector<KvCache> caches(static_cast<size_t>(cfg.n_dec_layers));
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    std::string pre = "dec." + std::to_string(l) + ".";
    KvCache& c = caches[static_cast<size_t>(l)];
    c.s = enc.len;
    c.k.resize(enc.len * d);
    c.v.resize(enc.len * d);
    matmul(enc.hidden.data(), p.t(pre + "cross.wk"), c.k.data(), enc.len, d, d);
    matmul(enc.hidden.data(), p.t(pre + "cross.wv"), c.v.data(), enc.len, d, d);
  }
  return caches;
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Public inference surface
// ---------------------------------------------------------------------------

inline EncoderOutput encode(const ModelParams& params, const std::vector<int>& src_ids,
                            int pad_id) {
  return model_detail::encoder_forward(params, src_ids, pad_id, nullptr);
}

// Full-vocabulary logits for the next token after `prefix_ids` (which must
// already start with BOS and any prompt tokens).
inline std::vector<double> decode_step_logits(const ModelParams& params, const EncoderOutput& enc,
                                              const std::vector<int>& prefix_ids,
                                              const std::vector<model_detail::KvCache>* cache = nullptr) {
  if (prefix_ids.size() > static_cast<size_t>(params.config.max_tgt_len))
    throw ValidationError("decoder prefix exceeds max_tgt_len");
  auto hidden = model_detail::decoder_forward(params, enc, prefix_ids, nullptr, cache);
  size_t d = static_cast<size_t>(params.config.d_model);
  size_t v = static_cast<size_t>(params.config.vocab_size);
  std::vector<double> logits(v);
  const double* last = hidden.data() + (prefix_ids.size() - 1) * d;
  matmul(last, params.t("out_proj"), logits.data(), 1, d, v);
  return logits;
}

// Step-wise token admissibility for constrained decoding. The allowed set
// always contains EOS.
struct DecodeConstraint {
  enum class Policy { Unrestricted, SpecialTokensOnly, FirstTokenType };
  Policy policy = Policy::Unrestricted;
  int eos_id = -1;
  std::vector<int> schema_token_ids;  // sorted: type + key token ids
  std::vector<int> type_token_ids;    // sorted

  static DecodeConstraint unrestricted(int eos) { return {Policy::Unrestricted, eos, {}, {}}; }

  static DecodeConstraint special_tokens_only(const Vocabulary& vocab) {
    DecodeConstraint c;
    c.policy = Policy::SpecialTokensOnly;
    c.eos_id = vocab.eos_id();
    c.schema_token_ids = vocab.type_token_ids();
    c.schema_token_ids.insert(c.schema_token_ids.end(), vocab.key_token_ids().begin(),
                              vocab.key_token_ids().end());
    std::sort(c.schema_token_ids.begin(), c.schema_token_ids.end());
    c.type_token_ids = vocab.type_token_ids();
    std::sort(c.type_token_ids.begin(), c.type_token_ids.end());
    c.check();
    return c;
  }

  static DecodeConstraint first_token_type(const Vocabulary& vocab) {
    DecodeConstraint c = special_tokens_only(vocab);
    c.policy = Policy::FirstTokenType;
    return c;
  }

  void check() const {
    if (policy != Policy::Unrestricted && schema_token_ids.empty())
      throw ValidationError("decode constraint: empty allowed token set");
    if (eos_id < 0) throw ValidationError("decode constraint: EOS id required");
  }

  bool allows(int id, size_t step) const {
    if (id == eos_id) return true;
    switch (policy) {
      case Policy::Unrestricted:
        return true;
      case Policy::SpecialTokensOnly:
        return std::binary_search(schema_token_ids.begin(), schema_token_ids.end(), id);
      case Policy::FirstTokenType:
        if (step == 0)
          return std::binary_search(type_token_ids.begin(), type_token_ids.end(), id);
        return std::binary_search(schema_token_ids.begin(), schema_token_ids.end(), id);
    }
    return false;
  }
};

struct DecodeResult {
  std::vector<int> ids;  // generated tokens, prompt and EOS excluded
  bool ended_with_eos = false;
  size_t steps = 0;  // emitted tokens including the terminating EOS
};

// Greedy constrained decoding. The decoder input starts as BOS + prompt; every
// emitted id is admissible for its step; stops at EOS or after max_new tokens.
inline DecodeResult greedy_decode(const ModelParams& params, const EncoderOutput& enc,
                                  const std::vector<int>& prompt_ids, int bos_id,
                                  const DecodeConstraint& constraint, size_t max_new) {
  std::vector<int> seq;
  seq.reserve(prompt_ids.size() + max_new + 1);
  seq.push_back(bos_id);
  seq.insert(seq.end(), prompt_ids.begin(), prompt_ids.end());

  auto cross_cache = model_detail::build_cross_cache(params, enc);
  DecodeResult result;
  size_t limit = static_cast<size_t>(params.config.max_tgt_len);
  for (size_t step = 0; step < max_new && seq.size() < limit; ++step) {
    auto logits = decode_step_logits(params, enc, seq, &cross_cache);
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int id = 0; id < params.config.vocab_size; ++id) {
      if (!constraint.allows(id, step)) continue;
      if (logits[static_cast<size_t>(id)] > best_v) {
        best_v = logits[static_cast<size_t>(id)];
        best = id;
      }
    }
    if (best < 0) break;
    ++result.steps;
    if (best == constraint.eos_id) {
      result.ended_with_eos = true;
      break;
    }
    result.ids.push_back(best);
    seq.push_back(best);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainExample {
  int stage = 0;  // 1..3 for staged extraction, 0 for monolithic baselines
  std::vector<int> src_ids;
  std::vector<int> prompt_ids;
  std::vector<int> target_ids;
};

struct LossResult {
  double total = 0.0;                // summed token cross-entropy
  std::vector<double> per_example;   // same, per example
  int64_t target_tokens = 0;         // loss positions across the batch
  std::vector<double> grads;         // d(total)/d(params), empty if not requested
  bool finite = true;
};

namespace model_detail {

// Loss and gradients for one example; the encoder tape is shared across all
// examples of the same document, so encoder backward happens at group level
// via d_enc_hidden.
inline double example_loss(const ModelParams& p, const EncoderOutput& enc,
                           const TrainExample& ex, int bos_id, int eos_id, bool want_grads,
                           std::vector<double>* grads, double* d_enc_hidden, int64_t* n_positions,
                           DropoutCtx drop) {
  const auto& cfg = p.config;
  size_t d = static_cast<size_t>(cfg.d_model);
  size_t v = static_cast<size_t>(cfg.vocab_size);

  std::vector<int> full;
  full.push_back(bos_id);
  full.insert(full.end(), ex.prompt_ids.begin(), ex.prompt_ids.end());
  full.insert(full.end(), ex.target_ids.begin(), ex.target_ids.end());
  full.push_back(eos_id);
  if (full.size() > static_cast<size_t>(cfg.max_tgt_len) + 1) {
    full.resize(static_cast<size_t>(cfg.max_tgt_len));
    full.push_back(eos_id);
  }
  size_t t = full.size() - 1;  // input positions
  std::vector<int> inputs(full.begin(), full.end() - 1);
  size_t first_loss = ex.prompt_ids.size();  // label index of first target position
  if (first_loss >= t)
    throw ValidationError("training example has no target positions (prompt too long?)");

  DecTape tape;
  auto hidden = decoder_forward(p, enc, inputs, want_grads ? &tape : nullptr, nullptr, drop);

  std::vector<double> logits(t * v);
  matmul(hidden.data(), p.t("out_proj"), logits.data(), t, d, v);

  double loss = 0.0;
  std::vector<double> d_logits;
  if (want_grads) d_logits.assign(t * v, 0.0);
  for (size_t i = first_loss; i < t; ++i) {
    int label = full[i + 1];
    double* z = logits.data() + i * v;
    double maxv = z[0];
    for (size_t j = 1; j < v; ++j) maxv = std::max(maxv, z[j]);
    double denom = 0.0;
    for (size_t j = 0; j < v; ++j) denom += std::exp(z[j] - maxv);
    double lse = maxv + std::log(denom);
    loss += lse - z[static_cast<size_t>(label)];
    if (want_grads) {
      double* dz = d_logits.data() + i * v;
      for (size_t j = 0; j < v; ++j) dz[j] = std::exp(z[j] - maxv) / denom;
      dz[static_cast<size_t>(label)] -= 1.0;
    }
    ++(*n_positions);
  }

  if (want_grads) {
    // d hidden = d_logits · out_projᵀ ; d out_proj += hiddenᵀ · d_logits
    std::vector<double> d_hidden(t * d);
    matmul_bt(d_logits.data(), p.t("out_proj"), d_hidden.data(), t, v, d);
    matmul_at_acc(hidden.data(), d_logits.data(), grads->data() + p.spec("out_proj").offset, t,
                  d, v);
    decoder_backward(p, enc, tape, d_hidden, *grads, d_enc_hidden);
  }
  return loss;
}

}  // namespace model_detail

// Teacher-forcing cross-entropy over a batch, with gradients for every
// parameter. Examples sharing the same source ids reuse one encoding; with
// jobs > 1 groups are sharded across threads into per-thread gradient buffers
// reduced in a fixed order.
inline LossResult batch_loss(const ModelParams& params, const std::vector<TrainExample>& batch,
                             int pad_id, int bos_id, int eos_id, bool want_grads = true,
                             int jobs = 1, uint64_t dropout_seed = 0) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  for (const auto& ex : batch)
    for (int id : ex.target_ids)
      if (id == pad_id) throw ValidationError("batch_loss: padding id inside target");

  // Group examples by identical source sequences (first-seen order).
  std::vector<std::vector<size_t>> groups;
  {
    std::map<std::vector<int>, size_t> seen;
    for (size_t i = 0; i < batch.size(); ++i) {
      auto [it, inserted] = seen.emplace(batch[i].src_ids, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  }

  LossResult result;
  result.per_example.assign(batch.size(), 0.0);
  size_t n_params = params.param_count();

  int n_threads = std::max(1, jobs);
  std::vector<std::vector<double>> grad_buffers;
  if (want_grads)
    grad_buffers.assign(static_cast<size_t>(n_threads), std::vector<double>(n_params, 0.0));
  std::vector<int64_t> token_counts(static_cast<size_t>(n_threads), 0);
  std::vector<std::string> errors(static_cast<size_t>(n_threads));

  auto worker = [&](int tid) {
    try {
      std::vector<double>* grads = want_grads ? &grad_buffers[static_cast<size_t>(tid)] : nullptr;
      for (size_t gi = static_cast<size_t>(tid); gi < groups.size();
           gi += static_cast<size_t>(n_threads)) {
        const auto& members = groups[gi];
        const auto& src = batch[members.front()].src_ids;
        model_detail::EncTape enc_tape;
        bool dropout_on = params.config.dropout_rate > 0.0 && dropout_seed != 0;
        Rng enc_rng(dropout_seed ^ (0x9e3779b97f4a7c15ull * (gi + 1)));
        model_detail::DropoutCtx enc_drop{dropout_on ? params.config.dropout_rate : 0.0,
                                          dropout_on ? &enc_rng : nullptr};
        EncoderOutput enc = model_detail::encoder_forward(params, src, pad_id,
                                                          want_grads ? &enc_tape : nullptr,
                                                          enc_drop);
        std::vector<double> d_enc_hidden(enc.len * static_cast<size_t>(params.config.d_model),
                                         0.0);
        for (size_t idx : members) {
          Rng ex_rng(dropout_seed ^ (0xbf58476d1ce4e5b9ull * (idx + 1)));
          model_detail::DropoutCtx ex_drop{dropout_on ? params.config.dropout_rate : 0.0,
                                           dropout_on ? &ex_rng : nullptr};
          result.per_example[idx] = model_detail::example_loss(
              params, enc, batch[idx], bos_id, eos_id, want_grads, grads, d_enc_hidden.data(),
              &token_counts[static_cast<size_t>(tid)], ex_drop);
        }
        if (want_grads) model_detail::encoder_backward(params, enc_tape, d_enc_hidden, *grads);
      }
    } catch (const std::exception& ex) {
      errors[static_cast<size_t>(tid)] = ex.what();
    }
  };

  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int tid = 0; tid < n_threads; ++tid) threads.emplace_back(worker, tid);
    for (auto& th : threads) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw ValidationError(e);

  for (int64_t c : token_counts) result.target_tokens += c;
  for (double l : result.per_example) result.total += l;
  if (want_grads) {
    result.grads.assign(n_params, 0.0);
    for (const auto& buf : grad_buffers) add_inplace(result.grads.data(), buf.data(), n_params);
    for (double g : result.grads)
      if (!std::isfinite(g)) {
        result.finite = false;
        break;
      }
  }
  if (!std::isfinite(result.total)) result.finite = false;
  return result;
}

// ---------------------------------------------------------------------------
// Optimizer: AdamW with decoupled weight decay and linear warm-up
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double lr = 0.0001;
  double weight_decay = 0.01;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<double> m, v;
  int64_t step = 0;
  int64_t skipped = 0;

  static OptimizerState for_params(const ModelParams& p) {
    OptimizerState s;
    s.m.assign(p.param_count(), 0.0);
    s.v.assign(p.param_count(), 0.0);
    return s;
  }
};

// One adaptive-moment update. `grads` must already be scaled (e.g. mean per
// token). Returns false and leaves params untouched when any gradient is
// non-finite. Weight decay applies to matrix weights only (not LN/bias rows).
inline bool train_step(ModelParams& params, OptimizerState& state,
                       const std::vector<double>& grads, const OptimizerConfig& opt) {
  if (grads.size() != params.param_count())
    throw ValidationError("train_step: gradient size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) {
      ++state.skipped;
      return false;
    }
  ++state.step;
  double warm = opt.warmup_steps > 0
                    ? std::min(1.0, static_cast<double>(state.step) /
                                        static_cast<double>(opt.warmup_steps))
                    : 1.0;
  double lr = opt.lr * warm;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));

  for (const auto& spec : params.specs()) {
    bool decay = spec.rows > 1;  // matrices; LN params and biases are 1×N
    double wd = decay ? opt.weight_decay : 0.0;
    for (size_t i = spec.offset; i < spec.offset + spec.size(); ++i) {
      double g = grads[i];
      state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
      state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
      double mhat = state.m[i] / bc1;
      double vhat = state.v[i] / bc2;
      params.data[i] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + wd * params.data[i]);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t coords_checked = 0;
};

// Central-difference check of the analytic gradients on a random coordinate
// subsample. `transform` lets tests corrupt the analytic gradients to verify
// the check itself catches broken backprop.
inline GradCheckResult grad_check(
    const ModelParams& params, const std::vector<TrainExample>& batch, int pad_id, int bos_id,
    int eos_id, double epsilon, size_t n_coords = 200, uint64_t seed = 12345,
    const std::function<void(std::vector<double>&)>& transform = nullptr) {
  if (params.param_count() > 10000)
    throw ValidationError("grad_check: parameter count must be <= 10000");
  LossResult analytic = batch_loss(params, batch, pad_id, bos_id, eos_id, true, 1);
  std::vector<double> grads = analytic.grads;
  if (transform) transform(grads);

  Rng rng(seed);
  std::vector<size_t> coords;
  coords.reserve(n_coords);
  for (size_t c = 0; c < n_coords; ++c)
    coords.push_back(static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(params.param_count()) - 1)));

  // Relative error is measured against the gradient scale, not against each
  // coordinate alone: a coordinate whose true gradient is many orders below
  // the typical magnitude would otherwise surface finite-difference noise as
  // spurious error.
  double scale = 0.0;
  for (size_t i : coords) scale = std::max(scale, std::abs(grads[i]));
  double floor = std::max(1e-8, 1e-3 * scale);

  GradCheckResult result;
  ModelParams probe = params;
  for (size_t i : coords) {
    double original = probe.data[i];
    probe.data[i] = original + epsilon;
    double lp = batch_loss(probe, batch, pad_id, bos_id, eos_id, false, 1).total;
    probe.data[i] = original - epsilon;
    double lm = batch_loss(probe, batch, pad_id, bos_id, eos_id, false, 1).total;
    probe.data[i] = original;
    double numeric = (lp - lm) / (2.0 * epsilon);
    double denom = std::max(floor, std::abs(grads[i]) + std::abs(numeric));
    double rel = std::abs(grads[i] - numeric) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coords_checked;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
};

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const Vocabulary& vocab) {
  nlohmann::json header = {{"format", "telesee-checkpoint-v1"},
                           {"config", params.config.to_json()},
                           {"vocab", vocab.to_json()},
                           {"vocab_hash", to_hex(vocab.hash())},
                           {"schema_version", vocab.schema_version()},
                           {"param_count", params.param_count()}};
  std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  const char magic[8] = {'T', 'S', 'E', 'E', 'C', 'K', 'P', 'T'};
  out.write(magic, 8);
  uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(params.data.data()),
            static_cast<std::streamsize>(params.data.size() * sizeof(double)));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "TSEECKPT", 8) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  nlohmann::json header = nlohmann::json::parse(header_str);

  Checkpoint ckpt;
  ckpt.vocab = Vocabulary::from_json(header.at("vocab"));
  std::string stored_hash = header.at("vocab_hash").get<std::string>();
  if (to_hex(ckpt.vocab.hash()) != stored_hash)
    throw ValidationError("checkpoint vocabulary hash mismatch (corrupt or tampered file)");
  ckpt.params = ModelParams::with_layout(ModelConfig::from_json(header.at("config")));
  size_t expect = header.at("param_count").get<size_t>();
  if (expect != ckpt.params.param_count())
    throw ValidationError("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(ckpt.params.data.data()),
          static_cast<std::streamsize>(ckpt.params.data.size() * sizeof(double)));
  if (!in) throw IoError("checkpoint payload truncated: " + path);
  return ckpt;
}

}  // namespace telesee
