#include "refforge/tiny_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "refforge/errors.hpp"
#include "refforge/rng.hpp"

namespace refforge {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// y[t,o] = bias[o] + sum_i x[t,i] * w[i,o]
void matmul(const double* x, const double* w, const double* bias, double* y, int T, int in,
            int out) {
  for (int t = 0; t < T; ++t) {
    double* yt = y + static_cast<size_t>(t) * out;
    if (bias) {
      std::memcpy(yt, bias, sizeof(double) * out);
    } else {
      std::fill(yt, yt + out, 0.0);
    }
    const double* xt = x + static_cast<size_t>(t) * in;
    for (int i = 0; i < in; ++i) {
      const double xv = xt[i];
      if (xv == 0.0) continue;
      const double* wi = w + static_cast<size_t>(i) * out;
      for (int o = 0; o < out; ++o) yt[o] += xv * wi[o];
    }
  }
}

// dx[t,i] += sum_o dy[t,o] * w[i,o]
void matmul_dx(const double* dy, const double* w, double* dx, int T, int in, int out) {
  for (int t = 0; t < T; ++t) {
    const double* dyt = dy + static_cast<size_t>(t) * out;
    double* dxt = dx + static_cast<size_t>(t) * in;
    for (int i = 0; i < in; ++i) {
      const double* wi = w + static_cast<size_t>(i) * out;
      double acc = 0.0;
      for (int o = 0; o < out; ++o) acc += dyt[o] * wi[o];
      dxt[i] += acc;
    }
  }
}

// dw[i,o] += sum_t x[t,i] dy[t,o];  db[o] += sum_t dy[t,o]
void matmul_dw(const double* x, const double* dy, double* dw, double* db, int T, int in, int out) {
  for (int t = 0; t < T; ++t) {
    const double* xt = x + static_cast<size_t>(t) * in;
    const double* dyt = dy + static_cast<size_t>(t) * out;
    if (db) {
      for (int o = 0; o < out; ++o) db[o] += dyt[o];
    }
    for (int i = 0; i < in; ++i) {
      const double xv = xt[i];
      if (xv == 0.0) continue;
      double* dwi = dw + static_cast<size_t>(i) * out;
      for (int o = 0; o < out; ++o) dwi[o] += xv * dyt[o];
    }
  }
}

void ln_fwd(const double* x, const double* g, const double* b, double* y, double* mean,
            double* rstd, int T, int d) {
  for (int t = 0; t < T; ++t) {
    const double* xt = x + static_cast<size_t>(t) * d;
    double* yt = y + static_cast<size_t>(t) * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xt[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xt[j] - m;
      var += c * c;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[t] = m;
    rstd[t] = rs;
    for (int j = 0; j < d; ++j) yt[j] = (xt[j] - m) * rs * g[j] + b[j];
  }
}

void ln_bwd(const double* dy, const double* x, const double* g, const double* mean,
            const double* rstd, double* dx, double* dg, double* db, int T, int d) {
  for (int t = 0; t < T; ++t) {
    const double* dyt = dy + static_cast<size_t>(t) * d;
    const double* xt = x + static_cast<size_t>(t) * d;
    double* dxt = dx + static_cast<size_t>(t) * d;
    const double m = mean[t], rs = rstd[t];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xt[j] - m) * rs;
      const double dxhat = dyt[j] * g[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (dg) dg[j] += dyt[j] * xhat;
      if (db) db[j] += dyt[j];
    }
    const double inv_d = 1.0 / d;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xt[j] - m) * rs;
      const double dxhat = dyt[j] * g[j];
      dxt[j] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Numerically safe softmax cross-entropy at one row; returns loss and, when
// dlogits is non-null, writes (softmax - onehot(label)) into it.
double softmax_xent(const double* logits, int n, int label, double* dlogits) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  const double logz = std::log(z) + mx;
  const double loss = logz - logits[label];
  if (dlogits) {
    for (int i = 0; i < n; ++i) dlogits[i] = std::exp(logits[i] - mx) / z;
    dlogits[label] -= 1.0;
  }
  return loss;
}

struct BinWriter {
  std::ofstream out;
  explicit BinWriter(const std::string& path) : out(path, std::ios::binary) {}
  void u32(uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
  void u64(uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  void f64(double v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  void doubles(const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
  }
};

struct BinReader {
  std::ifstream in;
  explicit BinReader(const std::string& path) : in(path, std::ios::binary) {}
  uint32_t u32() {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  double f64() {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  void doubles(std::vector<double>& v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
  }
};

constexpr uint32_t kCheckpointMagic = 0x4d4c4652;  // "RFLM"
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

struct TinyLM::Impl {
  int V, d, L, H, ctx, dff, hd;
  double scale;
  std::vector<double> params;

  struct LayerOff {
    size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b, w1, b1, w2, b2;
  };
  size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0, total = 0;
  std::vector<LayerOff> lo;

  explicit Impl(const TinyLMConfig& c)
      : V(c.vocab),
        d(c.d_model),
        L(c.n_layers),
        H(c.n_heads),
        ctx(c.context),
        dff(4 * c.d_model),
        hd(c.d_model / c.n_heads),
        scale(1.0 / std::sqrt(static_cast<double>(c.d_model / c.n_heads))) {
    if (d % H != 0) raise("validation-failure", "d_model must be divisible by n_heads");
    size_t off = 0;
    auto take = [&](size_t n) {
      const size_t at = off;
      off += n;
      return at;
    };
    tok_emb = take(static_cast<size_t>(V) * d);
    pos_emb = take(static_cast<size_t>(ctx) * d);
    lo.resize(L);
    for (auto& l : lo) {
      l.ln1_g = take(d);
      l.ln1_b = take(d);
      l.wq = take(static_cast<size_t>(d) * d);
      l.bq = take(d);
      l.wk = take(static_cast<size_t>(d) * d);
      l.bk = take(d);
      l.wv = take(static_cast<size_t>(d) * d);
      l.bv = take(d);
      l.wo = take(static_cast<size_t>(d) * d);
      l.bo = take(d);
      l.ln2_g = take(d);
      l.ln2_b = take(d);
      l.w1 = take(static_cast<size_t>(d) * dff);
      l.b1 = take(dff);
      l.w2 = take(static_cast<size_t>(dff) * d);
      l.b2 = take(d);
    }
    lnf_g = take(d);
    lnf_b = take(d);
    w_out = take(static_cast<size_t>(d) * V);
    b_out = take(V);
    total = off;
    params.assign(total, 0.0);
  }

  void init_params(uint64_t seed) {
    Rng rng(seed);
    auto randn = [&](size_t at, size_t n) {
      for (size_t i = 0; i < n; ++i) params[at + i] = 0.02 * rng.next_normal();
    };
    auto ones = [&](size_t at, size_t n) { std::fill_n(params.begin() + at, n, 1.0); };
    randn(tok_emb, static_cast<size_t>(V) * d);
    randn(pos_emb, static_cast<size_t>(ctx) * d);
    for (const auto& l : lo) {
      ones(l.ln1_g, d);
      randn(l.wq, static_cast<size_t>(d) * d);
      randn(l.wk, static_cast<size_t>(d) * d);
      randn(l.wv, static_cast<size_t>(d) * d);
      randn(l.wo, static_cast<size_t>(d) * d);
      ones(l.ln2_g, d);
      randn(l.w1, static_cast<size_t>(d) * dff);
      randn(l.w2, static_cast<size_t>(dff) * d);
    }
    ones(lnf_g, d);
    randn(w_out, static_cast<size_t>(d) * V);
  }

  const double* P(size_t at) const { return params.data() + at; }

  // ---- cached inference ------------------------------------------------

  // Per-layer key/value rows for every processed position, kept in one flat
  // buffer per tensor: [layer][position][d].
  struct KV {
    int cap = 0;
    std::vector<double> k, v;
    void ensure(int layers, int positions, int dim) {
      cap = positions;
      const size_t n = static_cast<size_t>(layers) * positions * dim;
      if (k.size() < n) {
        k.resize(n);
        v.resize(n);
      }
    }
    double* krow(int layer, int pos, int d, int cap_) {
      return k.data() + (static_cast<size_t>(layer) * cap_ + pos) * d;
    }
    double* vrow(int layer, int pos, int d, int cap_) {
      return v.data() + (static_cast<size_t>(layer) * cap_ + pos) * d;
    }
    const double* krow(int layer, int pos, int d, int cap_) const {
      return k.data() + (static_cast<size_t>(layer) * cap_ + pos) * d;
    }
    const double* vrow(int layer, int pos, int d, int cap_) const {
      return v.data() + (static_cast<size_t>(layer) * cap_ + pos) * d;
    }
  };

  struct BlockWS {
    std::vector<double> x, n1, mean, rstd, q, kb, vb, att, ctxv, atto;
    std::vector<double> n2, h1, mlp, nf, logits;
  };

  // Runs fed positions [pos0, pos0+B), with kv already holding rows
  // [0, pos0) for every layer (all sized to `cap` positions). Appends this
  // block's K/V. Adds cross-entropy at rows whose label is >= 0. When
  // last_logits is set, leaves the logits of the final row there.
  double block_forward(KV& kv, int cap, int pos0, const TokenId* fed, int B, const int* labels,
                       std::vector<double>* last_logits, BlockWS& ws) const {
    const size_t Bd = static_cast<size_t>(B) * d;
    ws.x.resize(Bd);
    ws.n1.resize(Bd);
    ws.mean.resize(B);
    ws.rstd.resize(B);
    ws.q.resize(Bd);
    ws.kb.resize(Bd);
    ws.vb.resize(Bd);
    ws.att.resize(static_cast<size_t>(pos0) + B);
    ws.ctxv.resize(Bd);
    ws.atto.resize(Bd);
    ws.n2.resize(Bd);
    ws.h1.resize(static_cast<size_t>(B) * dff);
    ws.mlp.resize(Bd);
    ws.nf.resize(Bd);
    ws.logits.resize(V);

    const double* E = P(tok_emb);
    const double* Pos = P(pos_emb);
    for (int t = 0; t < B; ++t) {
      const double* e = E + static_cast<size_t>(fed[t]) * d;
      const double* p = Pos + static_cast<size_t>(pos0 + t) * d;
      double* xt = ws.x.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) xt[j] = e[j] + p[j];
    }

    for (int layer = 0; layer < L; ++layer) {
      const auto& l = lo[layer];
      ln_fwd(ws.x.data(), P(l.ln1_g), P(l.ln1_b), ws.n1.data(), ws.mean.data(), ws.rstd.data(), B,
             d);
      matmul(ws.n1.data(), P(l.wq), P(l.bq), ws.q.data(), B, d, d);
      matmul(ws.n1.data(), P(l.wk), P(l.bk), ws.kb.data(), B, d, d);
      matmul(ws.n1.data(), P(l.wv), P(l.bv), ws.vb.data(), B, d, d);
      for (int t = 0; t < B; ++t) {
        std::memcpy(kv.krow(layer, pos0 + t, d, cap), ws.kb.data() + static_cast<size_t>(t) * d,
                    sizeof(double) * d);
        std::memcpy(kv.vrow(layer, pos0 + t, d, cap), ws.vb.data() + static_cast<size_t>(t) * d,
                    sizeof(double) * d);
      }
      for (int t = 0; t < B; ++t) {
        const int t_abs = pos0 + t;
        double* ctx_t = ws.ctxv.data() + static_cast<size_t>(t) * d;
        std::fill(ctx_t, ctx_t + d, 0.0);
        for (int h = 0; h < H; ++h) {
          const double* qh = ws.q.data() + static_cast<size_t>(t) * d + h * hd;
          double mx = -1e300;
          for (int s = 0; s <= t_abs; ++s) {
            const double* ks = kv.krow(layer, s, d, cap) + h * hd;
            double a = 0.0;
            for (int j = 0; j < hd; ++j) a += qh[j] * ks[j];
            a *= scale;
            ws.att[s] = a;
            mx = std::max(mx, a);
          }
          double z = 0.0;
          for (int s = 0; s <= t_abs; ++s) {
            ws.att[s] = std::exp(ws.att[s] - mx);
            z += ws.att[s];
          }
          const double inv_z = 1.0 / z;
          double* out_h = ctx_t + h * hd;
          for (int s = 0; s <= t_abs; ++s) {
            const double w = ws.att[s] * inv_z;
            const double* vs = kv.vrow(layer, s, d, cap) + h * hd;
            for (int j = 0; j < hd; ++j) out_h[j] += w * vs[j];
          }
        }
      }
      matmul(ws.ctxv.data(), P(l.wo), P(l.bo), ws.atto.data(), B, d, d);
      for (size_t i = 0; i < Bd; ++i) ws.x[i] += ws.atto[i];

      ln_fwd(ws.x.data(), P(l.ln2_g), P(l.ln2_b), ws.n2.data(), ws.mean.data(), ws.rstd.data(), B,
             d);
      matmul(ws.n2.data(), P(l.w1), P(l.b1), ws.h1.data(), B, d, dff);
      for (auto& hcell : ws.h1) hcell = gelu(hcell);
      matmul(ws.h1.data(), P(l.w2), P(l.b2), ws.mlp.data(), B, dff, d);
      for (size_t i = 0; i < Bd; ++i) ws.x[i] += ws.mlp[i];
    }

    ln_fwd(ws.x.data(), P(lnf_g), P(lnf_b), ws.nf.data(), ws.mean.data(), ws.rstd.data(), B, d);

    double loss = 0.0;
    const double* W = P(w_out);
    const double* bo = P(b_out);
    for (int t = 0; t < B; ++t) {
      const bool want_logits = last_logits && t == B - 1;
      const int label = labels ? labels[t] : -1;
      if (label < 0 && !want_logits) continue;
      const double* nft = ws.nf.data() + static_cast<size_t>(t) * d;
      for (int o = 0; o < V; ++o) ws.logits[o] = bo[o];
      for (int j = 0; j < d; ++j) {
        const double nv = nft[j];
        const double* wj = W + static_cast<size_t>(j) * V;
        for (int o = 0; o < V; ++o) ws.logits[o] += nv * wj[o];
      }
      if (label >= 0) loss += softmax_xent(ws.logits.data(), V, label, nullptr);
      if (want_logits) *last_logits = ws.logits;
    }
    return loss;
  }

  // Loss over a fed stream with labels, sharing the first shared_len rows of
  // `shared` K/V state.
  double scored_loss(const TokenId* fed, int T, const int* labels, const KV* shared,
                     int shared_len, BlockWS& ws, KV& scratch) const {
    scratch.ensure(L, T, d);
    if (shared && shared_len > 0) {
      for (int layer = 0; layer < L; ++layer) {
        std::memcpy(scratch.krow(layer, 0, d, T), shared->krow(layer, 0, d, shared->cap),
                    sizeof(double) * static_cast<size_t>(shared_len) * d);
        std::memcpy(scratch.vrow(layer, 0, d, T), shared->vrow(layer, 0, d, shared->cap),
                    sizeof(double) * static_cast<size_t>(shared_len) * d);
      }
    }
    const int start = shared ? shared_len : 0;
    return block_forward(scratch, T, start, fed + start, T - start, labels ? labels + start : nullptr,
                         nullptr, ws);
  }

  // ---- full forward/backward --------------------------------------------

  struct Acts {
    int T = 0;
    std::vector<double> x0;
    struct PerLayer {
      std::vector<double> xin, n1, mean1, rstd1, q, k, v, probs, ctxv, xmid, n2, mean2, rstd2;
      std::vector<double> h_pre, h_act;
    };
    std::vector<PerLayer> layers;
    std::vector<double> xf, nf, meanf, rstdf;
  };

  // Forward with full activation capture, then reverse mode. Fills dparams
  // (accumulated) and/or dx0 (T x d, overwritten) when non-null.
  double forward_backward(const TokenId* fed, int T, const int* labels, double* dparams,
                          double* dx0) const {
    Acts a;
    a.T = T;
    const size_t Td = static_cast<size_t>(T) * d;
    a.x0.resize(Td);
    a.layers.resize(L);
    const double* E = P(tok_emb);
    const double* Pos = P(pos_emb);
    for (int t = 0; t < T; ++t) {
      const double* e = E + static_cast<size_t>(fed[t]) * d;
      const double* p = Pos + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) a.x0[static_cast<size_t>(t) * d + j] = e[j] + p[j];
    }

    std::vector<double> x = a.x0;
    for (int layer = 0; layer < L; ++layer) {
      auto& al = a.layers[layer];
      const auto& l = lo[layer];
      al.xin = x;
      al.n1.resize(Td);
      al.mean1.resize(T);
      al.rstd1.resize(T);
      ln_fwd(x.data(), P(l.ln1_g), P(l.ln1_b), al.n1.data(), al.mean1.data(), al.rstd1.data(), T,
             d);
      al.q.resize(Td);
      al.k.resize(Td);
      al.v.resize(Td);
      matmul(al.n1.data(), P(l.wq), P(l.bq), al.q.data(), T, d, d);
      matmul(al.n1.data(), P(l.wk), P(l.bk), al.k.data(), T, d, d);
      matmul(al.n1.data(), P(l.wv), P(l.bv), al.v.data(), T, d, d);
      al.probs.assign(static_cast<size_t>(H) * T * T, 0.0);
      al.ctxv.assign(Td, 0.0);
      for (int h = 0; h < H; ++h) {
        for (int t = 0; t < T; ++t) {
          const double* qh = al.q.data() + static_cast<size_t>(t) * d + h * hd;
          double* prow = al.probs.data() + (static_cast<size_t>(h) * T + t) * T;
          double mx = -1e300;
          for (int s = 0; s <= t; ++s) {
            const double* ks = al.k.data() + static_cast<size_t>(s) * d + h * hd;
            double sc = 0.0;
            for (int j = 0; j < hd; ++j) sc += qh[j] * ks[j];
            sc *= scale;
            prow[s] = sc;
            mx = std::max(mx, sc);
          }
          double z = 0.0;
          for (int s = 0; s <= t; ++s) {
            prow[s] = std::exp(prow[s] - mx);
            z += prow[s];
          }
          const double inv_z = 1.0 / z;
          double* out_h = al.ctxv.data() + static_cast<size_t>(t) * d + h * hd;
          for (int s = 0; s <= t; ++s) {
            prow[s] *= inv_z;
            const double* vs = al.v.data() + static_cast<size_t>(s) * d + h * hd;
            for (int j = 0; j < hd; ++j) out_h[j] += prow[s] * vs[j];
          }
        }
      }
      std::vector<double> atto(Td);
      matmul(al.ctxv.data(), P(l.wo), P(l.bo), atto.data(), T, d, d);
      for (size_t i = 0; i < Td; ++i) x[i] += atto[i];
      al.xmid = x;
      al.n2.resize(Td);
      al.mean2.resize(T);
      al.rstd2.resize(T);
      ln_fwd(x.data(), P(l.ln2_g), P(l.ln2_b), al.n2.data(), al.mean2.data(), al.rstd2.data(), T,
             d);
      al.h_pre.resize(static_cast<size_t>(T) * dff);
      matmul(al.n2.data(), P(l.w1), P(l.b1), al.h_pre.data(), T, d, dff);
      al.h_act = al.h_pre;
      for (auto& hcell : al.h_act) hcell = gelu(hcell);
      std::vector<double> mlp(Td);
      matmul(al.h_act.data(), P(l.w2), P(l.b2), mlp.data(), T, dff, d);
      for (size_t i = 0; i < Td; ++i) x[i] += mlp[i];
    }
    a.xf = x;
    a.nf.resize(Td);
    a.meanf.resize(T);
    a.rstdf.resize(T);
    ln_fwd(x.data(), P(lnf_g), P(lnf_b), a.nf.data(), a.meanf.data(), a.rstdf.data(), T, d);

    // Loss + dlogits, pushed straight back into d(nf).
    double loss = 0.0;
    std::vector<double> dnf(Td, 0.0);
    std::vector<double> logits(V), dlogits(V);
    const double* W = P(w_out);
    const double* bo = P(b_out);
    const bool want_grad = dparams || dx0;
    for (int t = 0; t < T; ++t) {
      const int label = labels[t];
      if (label < 0) continue;
      const double* nft = a.nf.data() + static_cast<size_t>(t) * d;
      for (int o = 0; o < V; ++o) logits[o] = bo[o];
      for (int j = 0; j < d; ++j) {
        const double nv = nft[j];
        const double* wj = W + static_cast<size_t>(j) * V;
        for (int o = 0; o < V; ++o) logits[o] += nv * wj[o];
      }
      loss += softmax_xent(logits.data(), V, label, want_grad ? dlogits.data() : nullptr);
      if (!want_grad) continue;
      double* dnft = dnf.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) {
        const double* wj = W + static_cast<size_t>(j) * V;
        double acc = 0.0;
        for (int o = 0; o < V; ++o) acc += dlogits[o] * wj[o];
        dnft[j] += acc;
      }
      if (dparams) {
        double* dW = dparams + w_out;
        double* dbo = dparams + b_out;
        for (int j = 0; j < d; ++j) {
          const double nv = nft[j];
          double* dwj = dW + static_cast<size_t>(j) * V;
          for (int o = 0; o < V; ++o) dwj[o] += nv * dlogits[o];
        }
        for (int o = 0; o < V; ++o) dbo[o] += dlogits[o];
      }
    }
    if (!want_grad) return loss;

    std::vector<double> dx(Td, 0.0);
    ln_bwd(dnf.data(), a.xf.data(), P(lnf_g), a.meanf.data(), a.rstdf.data(), dx.data(),
           dparams ? dparams + lnf_g : nullptr, dparams ? dparams + lnf_b : nullptr, T, d);

    std::vector<double> dn2(Td), dh(static_cast<size_t>(T) * dff), dctx(Td), datto(Td), dn1(Td);
    std::vector<double> dq(Td), dk(Td), dv(Td), datt(T);
    for (int layer = L - 1; layer >= 0; --layer) {
      const auto& al = a.layers[layer];
      const auto& l = lo[layer];
      // MLP block: x_out = xmid + W2 gelu(W1 n2 + b1) + b2
      std::fill(dh.begin(), dh.end(), 0.0);
      matmul_dx(dx.data(), P(l.w2), dh.data(), T, dff, d);
      if (dparams) matmul_dw(al.h_act.data(), dx.data(), dparams + l.w2, dparams + l.b2, T, dff, d);
      for (size_t i = 0; i < dh.size(); ++i) dh[i] *= gelu_grad(al.h_pre[i]);
      std::fill(dn2.begin(), dn2.end(), 0.0);
      matmul_dx(dh.data(), P(l.w1), dn2.data(), T, d, dff);
      if (dparams) matmul_dw(al.n2.data(), dh.data(), dparams + l.w1, dparams + l.b1, T, d, dff);
      ln_bwd(dn2.data(), al.xmid.data(), P(l.ln2_g), al.mean2.data(), al.rstd2.data(), dx.data(),
             dparams ? dparams + l.ln2_g : nullptr, dparams ? dparams + l.ln2_b : nullptr, T, d);

      // Attention block: xmid = xin + Wo ctx + bo
      std::fill(dctx.begin(), dctx.end(), 0.0);
      matmul_dx(dx.data(), P(l.wo), dctx.data(), T, d, d);
      if (dparams) matmul_dw(al.ctxv.data(), dx.data(), dparams + l.wo, dparams + l.bo, T, d, d);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (int h = 0; h < H; ++h) {
        for (int t = 0; t < T; ++t) {
          const double* prow = al.probs.data() + (static_cast<size_t>(h) * T + t) * T;
          const double* dctx_h = dctx.data() + static_cast<size_t>(t) * d + h * hd;
          const double* qh = al.q.data() + static_cast<size_t>(t) * d + h * hd;
          double dot_sum = 0.0;
          for (int s = 0; s <= t; ++s) {
            const double* vs = al.v.data() + static_cast<size_t>(s) * d + h * hd;
            double dp = 0.0;
            for (int j = 0; j < hd; ++j) dp += dctx_h[j] * vs[j];
            datt[s] = dp;
            dot_sum += dp * prow[s];
            double* dvs = dv.data() + static_cast<size_t>(s) * d + h * hd;
            for (int j = 0; j < hd; ++j) dvs[j] += prow[s] * dctx_h[j];
          }
          double* dqh = dq.data() + static_cast<size_t>(t) * d + h * hd;
          for (int s = 0; s <= t; ++s) {
            const double da = prow[s] * (datt[s] - dot_sum) * scale;
            if (da == 0.0) continue;
            const double* ks = al.k.data() + static_cast<size_t>(s) * d + h * hd;
            double* dks = dk.data() + static_cast<size_t>(s) * d + h * hd;
            for (int j = 0; j < hd; ++j) {
              dqh[j] += da * ks[j];
              dks[j] += da * qh[j];
            }
          }
        }
      }
      std::fill(dn1.begin(), dn1.end(), 0.0);
      matmul_dx(dq.data(), P(l.wq), dn1.data(), T, d, d);
      matmul_dx(dk.data(), P(l.wk), dn1.data(), T, d, d);
      matmul_dx(dv.data(), P(l.wv), dn1.data(), T, d, d);
      if (dparams) {
        matmul_dw(al.n1.data(), dq.data(), dparams + l.wq, dparams + l.bq, T, d, d);
        matmul_dw(al.n1.data(), dk.data(), dparams + l.wk, dparams + l.bk, T, d, d);
        matmul_dw(al.n1.data(), dv.data(), dparams + l.wv, dparams + l.bv, T, d, d);
      }
      ln_bwd(dn1.data(), al.xin.data(), P(l.ln1_g), al.mean1.data(), al.rstd1.data(), dx.data(),
             dparams ? dparams + l.ln1_g : nullptr, dparams ? dparams + l.ln1_b : nullptr, T, d);
    }

    if (dx0) std::memcpy(dx0, dx.data(), sizeof(double) * Td);
    if (dparams) {
      double* dE = dparams + tok_emb;
      double* dPos = dparams + pos_emb;
      for (int t = 0; t < T; ++t) {
        const double* dxt = dx.data() + static_cast<size_t>(t) * d;
        double* de = dE + static_cast<size_t>(fed[t]) * d;
        double* dp = dPos + static_cast<size_t>(t) * d;
        for (int j = 0; j < d; ++j) {
          de[j] += dxt[j];
          dp[j] += dxt[j];
        }
      }
    }
    return loss;
  }

  // Same forward, no gradients, no caching, with one input embedding nudged
  // by eps * embedding(vocab_id). Drives the finite-difference probe.
  double nudged_pass(const TokenId* fed, int T, const int* labels, int position, TokenId vocab_id,
                     double eps) const {
    const size_t Td = static_cast<size_t>(T) * d;
    std::vector<double> x(Td);
    const double* E = P(tok_emb);
    const double* Pos = P(pos_emb);
    for (int t = 0; t < T; ++t) {
      const double* e = E + static_cast<size_t>(fed[t]) * d;
      const double* p = Pos + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) x[static_cast<size_t>(t) * d + j] = e[j] + p[j];
    }
    if (position >= 0) {
      const double* ev = E + static_cast<size_t>(vocab_id) * d;
      for (int j = 0; j < d; ++j) x[static_cast<size_t>(position) * d + j] += eps * ev[j];
    }

    std::vector<double> n1(Td), q(Td), k(Td), v(Td), ctxv(Td), atto(Td), n2(Td);
    std::vector<double> h(static_cast<size_t>(T) * dff), mlp(Td), nf(Td);
    std::vector<double> mean(T), rstd(T), att(T);
    for (int layer = 0; layer < L; ++layer) {
      const auto& l = lo[layer];
      ln_fwd(x.data(), P(l.ln1_g), P(l.ln1_b), n1.data(), mean.data(), rstd.data(), T, d);
      matmul(n1.data(), P(l.wq), P(l.bq), q.data(), T, d, d);
      matmul(n1.data(), P(l.wk), P(l.bk), k.data(), T, d, d);
      matmul(n1.data(), P(l.wv), P(l.bv), v.data(), T, d, d);
      std::fill(ctxv.begin(), ctxv.end(), 0.0);
      for (int h_i = 0; h_i < H; ++h_i) {
        for (int t = 0; t < T; ++t) {
          const double* qh = q.data() + static_cast<size_t>(t) * d + h_i * hd;
          double mx = -1e300;
          for (int s = 0; s <= t; ++s) {
            const double* ks = k.data() + static_cast<size_t>(s) * d + h_i * hd;
            double sc = 0.0;
            for (int j = 0; j < hd; ++j) sc += qh[j] * ks[j];
            sc *= scale;
            att[s] = sc;
            mx = std::max(mx, sc);
          }
          double z = 0.0;
          for (int s = 0; s <= t; ++s) {
            att[s] = std::exp(att[s] - mx);
            z += att[s];
          }
          double* out_h = ctxv.data() + static_cast<size_t>(t) * d + h_i * hd;
          for (int s = 0; s <= t; ++s) {
            const double w = att[s] / z;
            const double* vs = v.data() + static_cast<size_t>(s) * d + h_i * hd;
            for (int j = 0; j < hd; ++j) out_h[j] += w * vs[j];
          }
        }
      }
      matmul(ctxv.data(), P(l.wo), P(l.bo), atto.data(), T, d, d);
      for (size_t i = 0; i < Td; ++i) x[i] += atto[i];
      ln_fwd(x.data(), P(l.ln2_g), P(l.ln2_b), n2.data(), mean.data(), rstd.data(), T, d);
      matmul(n2.data(), P(l.w1), P(l.b1), h.data(), T, d, dff);
      for (auto& hc : h) hc = gelu(hc);
      matmul(h.data(), P(l.w2), P(l.b2), mlp.data(), T, dff, d);
      for (size_t i = 0; i < Td; ++i) x[i] += mlp[i];
    }
    ln_fwd(x.data(), P(lnf_g), P(lnf_b), nf.data(), mean.data(), rstd.data(), T, d);
    double loss = 0.0;
    std::vector<double> logits(V);
    const double* W = P(w_out);
    const double* bo = P(b_out);
    for (int t = 0; t < T; ++t) {
      if (labels[t] < 0) continue;
      const double* nft = nf.data() + static_cast<size_t>(t) * d;
      for (int o = 0; o < V; ++o) logits[o] = bo[o];
      for (int j = 0; j < d; ++j) {
        const double nv = nft[j];
        const double* wj = W + static_cast<size_t>(j) * V;
        for (int o = 0; o < V; ++o) logits[o] += nv * wj[o];
      }
      loss += softmax_xent(logits.data(), V, labels[t], nullptr);
    }
    return loss;
  }
};

// ---- construction / plumbing ----------------------------------------------

TinyLM::TinyLM(const TinyLMConfig& config) : config_(config), impl_(new Impl(config)) {
  impl_->init_params(config.param_seed);
}

TinyLM::TinyLM(const TinyLM& other) : config_(other.config_), impl_(new Impl(other.config_)) {
  impl_->params = other.impl_->params;
}

TinyLM::~TinyLM() = default;

int TinyLM::vocab_size() const { return impl_->V; }
int TinyLM::context_limit() const { return impl_->ctx; }

TokenSeq TinyLM::tokenize(std::string_view text) const { return byte_tokenize(text); }
std::string TinyLM::detokenize(const TokenSeq& ids) const { return byte_detokenize(ids); }

std::vector<double>& TinyLM::parameters() { return impl_->params; }
const std::vector<double>& TinyLM::parameters() const { return impl_->params; }

namespace {

// fed/labels views for prefix ++ target scoring.
struct ScoredStream {
  std::vector<TokenId> fed;
  std::vector<int> labels;
};

ScoredStream make_stream(const TokenSeq& prefix, const TokenSeq& target, int context) {
  if (prefix.empty()) raise("validation-failure", "continuation scoring needs a non-empty prefix");
  const size_t n = prefix.size() + target.size();
  if (n > static_cast<size_t>(context)) {
    raise("context-overflow", "prefix + target exceeds the model context (" +
                                  std::to_string(n) + " > " + std::to_string(context) + ")");
  }
  ScoredStream s;
  const size_t fed_len = n - 1;
  s.fed.reserve(fed_len);
  s.labels.assign(fed_len, -1);
  for (size_t i = 0; i < fed_len; ++i) {
    s.fed.push_back(i < prefix.size() ? prefix[i] : target[i - prefix.size()]);
  }
  for (size_t j = 0; j < target.size(); ++j) {
    s.labels[prefix.size() - 1 + j] = target[j];
  }
  return s;
}

void check_ids(const TokenSeq& ids, int vocab) {
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab) {
      raise("validation-failure", "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

}  // namespace

double TinyLM::continuation_loss(const TokenSeq& prefix, const TokenSeq& target) const {
  check_ids(prefix, impl_->V);
  check_ids(target, impl_->V);
  if (target.empty()) return 0.0;
  const auto s = make_stream(prefix, target, impl_->ctx);
  Impl::KV kv;
  Impl::BlockWS ws;
  return impl_->scored_loss(s.fed.data(), static_cast<int>(s.fed.size()), s.labels.data(), nullptr,
                            0, ws, kv);
}

double TinyLM::continuation_loss_nudged(const TokenSeq& prefix, const TokenSeq& target,
                                        int position, TokenId vocab_id, double eps) const {
  if (target.empty()) return 0.0;
  const auto s = make_stream(prefix, target, impl_->ctx);
  if (position < 0 || position >= static_cast<int>(prefix.size())) {
    raise("validation-failure", "nudge position outside prefix");
  }
  return impl_->nudged_pass(s.fed.data(), static_cast<int>(s.fed.size()), s.labels.data(),
                            position, vocab_id, eps);
}

GradientMatrix TinyLM::onehot_gradient(const TokenSeq& prefix, const TokenSeq& target,
                                       const std::vector<int>& positions) const {
  check_ids(prefix, impl_->V);
  check_ids(target, impl_->V);
  GradientMatrix grad(static_cast<int>(positions.size()), impl_->V);
  if (positions.empty()) return grad;
  for (int p : positions) {
    if (p < 0 || p >= static_cast<int>(prefix.size())) {
      raise("validation-failure", "gradient position " + std::to_string(p) + " outside prefix");
    }
  }
  if (target.empty()) return grad;

  const auto s = make_stream(prefix, target, impl_->ctx);
  const int T = static_cast<int>(s.fed.size());
  std::vector<double> dx0(static_cast<size_t>(T) * impl_->d);
  impl_->forward_backward(s.fed.data(), T, s.labels.data(), nullptr, dx0.data());

  // grad[r][v] = <embedding(v), d loss / d input-embedding at position r>
  const double* E = impl_->P(impl_->tok_emb);
  const int d = impl_->d;
  for (size_t r = 0; r < positions.size(); ++r) {
    const double* dxt = dx0.data() + static_cast<size_t>(positions[r]) * d;
    for (int v = 0; v < impl_->V; ++v) {
      const double* ev = E + static_cast<size_t>(v) * d;
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += ev[j] * dxt[j];
      grad.at(static_cast<int>(r), v) = acc;
    }
  }
  return grad;
}

std::vector<double> TinyLM::next_logits(const TokenSeq& prefix) const {
  check_ids(prefix, impl_->V);
  if (prefix.empty()) raise("validation-failure", "next_logits needs a non-empty prefix");
  if (static_cast<int>(prefix.size()) > impl_->ctx) {
    raise("context-overflow", "prefix exceeds the model context");
  }
  Impl::KV kv;
  Impl::BlockWS ws;
  kv.ensure(impl_->L, static_cast<int>(prefix.size()), impl_->d);
  std::vector<double> logits;
  impl_->block_forward(kv, static_cast<int>(prefix.size()), 0, prefix.data(),
                       static_cast<int>(prefix.size()), nullptr, &logits, ws);
  return logits;
}

TokenSeq TinyLM::generate(const TokenSeq& prefix, const DecodeParams& params) const {
  check_ids(prefix, impl_->V);
  if (prefix.empty()) raise("validation-failure", "generate needs a non-empty prefix");
  const int P = static_cast<int>(prefix.size());
  if (P > impl_->ctx) raise("context-overflow", "prefix exceeds the model context");
  if (params.mode == DecodeMode::sample && !(params.temperature > 0.0)) {
    raise("validation-failure", "sample mode needs temperature > 0");
  }

  TokenSeq out;
  const int budget = std::min(params.max_new_tokens, impl_->ctx - P);
  if (budget <= 0) return out;

  Impl::KV kv;
  Impl::BlockWS ws;
  kv.ensure(impl_->L, P + budget, impl_->d);
  std::vector<double> logits;
  impl_->block_forward(kv, P + budget, 0, prefix.data(), P, nullptr, &logits, ws);

  Rng rng(params.seed);
  std::vector<double> probs(impl_->V);
  for (int step = 0; step < budget; ++step) {
    TokenId next = 0;
    if (params.mode == DecodeMode::greedy) {
      for (int v = 1; v < impl_->V; ++v) {
        if (logits[v] > logits[next]) next = v;
      }
    } else {
      double mx = logits[0];
      for (int v = 1; v < impl_->V; ++v) mx = std::max(mx, logits[v]);
      double z = 0.0;
      for (int v = 0; v < impl_->V; ++v) {
        probs[v] = std::exp((logits[v] - mx) / params.temperature);
        z += probs[v];
      }
      double u = rng.next_unit() * z;
      next = impl_->V - 1;
      for (int v = 0; v < impl_->V; ++v) {
        u -= probs[v];
        if (u <= 0.0) {
          next = v;
          break;
        }
      }
    }
    if (next == kEos && impl_->V > kEos) return out;
    out.push_back(next);
    if (static_cast<int>(out.size()) == budget) break;
    const TokenId fed = next;
    impl_->block_forward(kv, P + budget, P + step, &fed, 1, nullptr, &logits, ws);
  }
  return out;
}

std::vector<double> TinyLM::variant_losses(const TokenSeq& base_ids, int target_begin,
                                           const std::vector<TokenSubst>& variants) const {
  check_ids(base_ids, impl_->V);
  const int N = static_cast<int>(base_ids.size());
  if (N > impl_->ctx) raise("context-overflow", "stream exceeds the model context");
  if (target_begin <= 0 || target_begin >= N) {
    raise("validation-failure", "target_begin must split the stream");
  }
  const int T = N - 1;  // the last token is label-only
  std::vector<int> base_labels(T, -1);
  for (int t = target_begin - 1; t < T; ++t) base_labels[t] = base_ids[t + 1];

  // One full prefill of the base stream; every variant reuses the prefix
  // rows before its first substitution.
  Impl::KV shared;
  Impl::BlockWS ws;
  shared.ensure(impl_->L, T, impl_->d);
  impl_->block_forward(shared, T, 0, base_ids.data(), T, nullptr, nullptr, ws);

  std::vector<double> losses(variants.size(), 0.0);
  std::vector<TokenId> fed(base_ids.begin(), base_ids.begin() + T);
  std::vector<int> labels = base_labels;
  Impl::KV scratch;
  for (size_t i = 0; i < variants.size(); ++i) {
    const auto& var = variants[i];
    int first_changed = T;
    for (size_t j = 0; j < var.positions.size(); ++j) {
      const int p = var.positions[j];
      if (p < 0 || p >= N) raise("validation-failure", "substitution outside the stream");
      const TokenId tok = var.tokens[j];
      if (tok < 0 || tok >= impl_->V) raise("validation-failure", "substitution token invalid");
      if (p < T && fed[p] != tok) first_changed = std::min(first_changed, p);
      if (p < T) fed[p] = tok;
      if (p >= target_begin) labels[p - 1] = tok;
    }
    const int start = std::min(first_changed, target_begin - 1);
    losses[i] = impl_->scored_loss(fed.data(), T, labels.data(), &shared, start, ws, scratch);
    // restore the base stream
    for (size_t j = 0; j < var.positions.size(); ++j) {
      const int p = var.positions[j];
      if (p < T) fed[p] = base_ids[p];
      if (p >= target_begin) labels[p - 1] = base_ids[p];
    }
  }
  return losses;
}

// ---- training ---------------------------------------------------------------

TrainReport TinyLM::train(const std::vector<std::pair<std::string, std::string>>& pairs) {
  TrainReport report;
  if (pairs.empty()) raise("validation-failure", "train needs at least one pair");

  struct Encoded {
    std::vector<TokenId> fed;
    std::vector<int> labels;
  };
  std::vector<Encoded> data;
  data.reserve(pairs.size());
  for (const auto& [prompt, completion] : pairs) {
    const TokenSeq prefix = encode_prompt(prompt);
    const TokenSeq target = encode_completion(completion);
    const auto s = make_stream(prefix, target, impl_->ctx);
    data.push_back({s.fed, s.labels});
  }

  Impl::KV kv;
  Impl::BlockWS ws;
  auto average_loss = [&] {
    double sum = 0.0;
    for (const auto& e : data) {
      sum += impl_->scored_loss(e.fed.data(), static_cast<int>(e.fed.size()), e.labels.data(),
                                nullptr, 0, ws, kv);
    }
    return sum / static_cast<double>(data.size());
  };

  report.initial_loss = average_loss();

  const TrainParams& tp = config_.training;
  const size_t n_params = impl_->params.size();
  std::vector<double> grad(n_params, 0.0), m(n_params, 0.0), v(n_params, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long long step = 0;

  Rng rng(Rng::mix_seed(config_.param_seed, fnv1a64("train")));
  std::vector<int> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int batch = std::max(1, tp.batch_size);
  for (int epoch = 0; epoch < tp.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[rng.next_index(i + 1)]);
    }
    double epoch_loss = 0.0;
    for (size_t at = 0; at < order.size(); at += batch) {
      const size_t end = std::min(order.size(), at + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (size_t i = at; i < end; ++i) {
        const auto& e = data[order[i]];
        epoch_loss += impl_->forward_backward(e.fed.data(), static_cast<int>(e.fed.size()),
                                              e.labels.data(), grad.data(), nullptr);
      }
      const double inv_b = 1.0 / static_cast<double>(end - at);
      double norm2 = 0.0;
      for (auto& g : grad) {
        g *= inv_b;
        norm2 += g * g;
      }
      // Global-norm clip keeps the memorization runs stable at high rates.
      const double clip = 5.0;
      if (norm2 > clip * clip) {
        const double s = clip / std::sqrt(norm2);
        for (auto& g : grad) g *= s;
      }
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (size_t p = 0; p < n_params; ++p) {
        m[p] = beta1 * m[p] + (1.0 - beta1) * grad[p];
        v[p] = beta2 * v[p] + (1.0 - beta2) * grad[p] * grad[p];
        impl_->params[p] -=
            tp.learning_rate * (m[p] / bc1) / (std::sqrt(v[p] / bc2) + adam_eps);
      }
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(data.size()));
  }

  report.final_loss = average_loss();
  if (!(report.final_loss <= report.initial_loss)) {  // also catches NaN
    raise("divergence", "training diverged: final loss " + std::to_string(report.final_loss) +
                            " above initial " + std::to_string(report.initial_loss));
  }
  return report;
}

TinyLM train_tiny(const TinyLMConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& pairs,
                  TrainReport* report) {
  TinyLM model(config);
  TrainReport r = model.train(pairs);
  if (report) *report = r;
  return model;
}

// ---- checkpoint ------------------------------------------------------------

void TinyLM::save(const std::string& path) const {
  BinWriter w(path);
  if (!w.out) raise("file-missing", "cannot write checkpoint " + path);
  w.u32(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(config_.vocab));
  w.u32(static_cast<uint32_t>(config_.d_model));
  w.u32(static_cast<uint32_t>(config_.n_layers));
  w.u32(static_cast<uint32_t>(config_.n_heads));
  w.u32(static_cast<uint32_t>(config_.context));
  w.u64(config_.param_seed);
  w.f64(config_.training.learning_rate);
  w.u32(static_cast<uint32_t>(config_.training.epochs));
  w.u32(static_cast<uint32_t>(config_.training.batch_size));
  w.u64(impl_->params.size());
  w.doubles(impl_->params);
  if (!w.out) raise("file-missing", "short write on checkpoint " + path);
}

TinyLM TinyLM::load(const std::string& path) {
  BinReader r(path);
  if (!r.in) raise("file-missing", "cannot open checkpoint " + path);
  if (r.u32() != kCheckpointMagic) raise("malformed-document", "not a model checkpoint: " + path);
  if (r.u32() != kCheckpointVersion) {
    raise("malformed-document", "unsupported checkpoint version in " + path);
  }
  TinyLMConfig c;
  c.vocab = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.context = static_cast<int>(r.u32());
  c.param_seed = r.u64();
  c.training.learning_rate = r.f64();
  c.training.epochs = static_cast<int>(r.u32());
  c.training.batch_size = static_cast<int>(r.u32());
  const uint64_t n = r.u64();
  TinyLM model(c);
  if (n != model.impl_->params.size()) {
    raise("malformed-document", "checkpoint tensor size mismatch in " + path);
  }
  r.doubles(model.impl_->params);
  if (!r.in) raise("malformed-document", "checkpoint truncated: " + path);
  return model;
}

}  // namespace refforge
