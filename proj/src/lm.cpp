#include "biaslab/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "biaslab/rng.hpp"

namespace biaslab {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kLogClamp = 1e-12;

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double a, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// y = W x, W row-major (rows x cols)
inline void matvec(const double* w, const double* x, double* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) y[r] = dot(w + static_cast<std::size_t>(r) * cols, x, cols);
}

// y += W^T g
inline void matvec_t_acc(const double* w, const double* g, double* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) axpy(g[r], w + static_cast<std::size_t>(r) * cols, y, cols);
}

// GW += g ⊗ x
inline void outer_acc(double* gw, const double* g, const double* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) axpy(g[r], x, gw + static_cast<std::size_t>(r) * cols, cols);
}

inline void rmsnorm(const double* x, double* u, int d) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    double rho = std::sqrt(ss / d + kRmsEps);
    for (int i = 0; i < d; ++i) u[i] = x[i] / rho;
}

// dx += backward of rmsnorm given upstream du at input x
inline void rmsnorm_backward_acc(const double* x, const double* du, double* dx, int d) {
    double ss = 0.0, s = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    double rho = std::sqrt(ss / d + kRmsEps);
    for (int i = 0; i < d; ++i) s += du[i] * x[i];
    double c = s / (d * rho * rho * rho);
    for (int i = 0; i < d; ++i) dx[i] += du[i] / rho - x[i] * c;
}

// Activations of one teacher-forced pass, reused across backward.
struct Workspace {
    int T = 0, V = 0, d = 0, h = 0, B = 0;
    std::vector<double> xs;      // (B+1) * T * d; xs[b] is the input to block b
    std::vector<double> u_attn;  // B * T * d
    std::vector<double> q, k, v, mix;
    std::vector<double> attn;    // B * T * T, row i holds weights over j<=i
    std::vector<double> x_mid;   // B * T * d
    std::vector<double> u_ffn;   // B * T * d
    std::vector<double> z;       // B * T * h (pre-activation)
    std::vector<double> g_final; // T * d
    std::vector<double> logits;  // T * V
    std::vector<double> logZ;    // T
    std::vector<double> probs;   // T * V
    int row_start = 0;           // first row with logits/probs computed

    void resize(const LMConfig& cfg, int t) {
        T = t;
        V = cfg.vocab_size;
        d = cfg.embed_dim;
        h = cfg.ffn_dim();
        B = cfg.depth;
        auto td = static_cast<std::size_t>(T) * d;
        xs.assign(static_cast<std::size_t>(B + 1) * td, 0.0);
        u_attn.assign(static_cast<std::size_t>(B) * td, 0.0);
        q.assign(static_cast<std::size_t>(B) * td, 0.0);
        k.assign(static_cast<std::size_t>(B) * td, 0.0);
        v.assign(static_cast<std::size_t>(B) * td, 0.0);
        mix.assign(static_cast<std::size_t>(B) * td, 0.0);
        attn.assign(static_cast<std::size_t>(B) * T * T, 0.0);
        x_mid.assign(static_cast<std::size_t>(B) * td, 0.0);
        u_ffn.assign(static_cast<std::size_t>(B) * td, 0.0);
        z.assign(static_cast<std::size_t>(B) * T * h, 0.0);
        g_final.assign(td, 0.0);
        logits.assign(static_cast<std::size_t>(T) * V, 0.0);
        logZ.assign(static_cast<std::size_t>(T), 0.0);
        probs.assign(static_cast<std::size_t>(T) * V, 0.0);
    }

    double* at(std::vector<double>& buf, int block, int t, int width) {
        return buf.data() + (static_cast<std::size_t>(block) * T + t) * width;
    }
};

void run_forward(const LanguageModel& m, std::span<const TokenId> tokens, Workspace& ws,
                 int row_start) {
    const auto& cfg = m.config;
    const int T = static_cast<int>(tokens.size());
    if (T == 0) throw LMError("forward: empty sequence");
    if (T > cfg.context_len)
        throw LMError("forward: sequence of length " + std::to_string(T) +
                      " exceeds context_len " + std::to_string(cfg.context_len));
    for (TokenId t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) throw LMError("forward: token id out of range");
    }
    ws.resize(cfg, T);
    ws.row_start = row_start;

    const int d = cfg.embed_dim, h = cfg.ffn_dim(), V = cfg.vocab_size;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double* emb = m.params.data() + m.layout.tok_emb;
    const double* pos = m.params.data() + m.layout.pos_emb;

    for (int t = 0; t < T; ++t) {
        double* x = ws.at(ws.xs, 0, t, d);
        const double* e = emb + static_cast<std::size_t>(tokens[t]) * d;
        const double* p = pos + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) x[i] = e[i] + p[i];
    }

    std::vector<double> tmp(static_cast<std::size_t>(std::max(d, h)));
    for (int b = 0; b < cfg.depth; ++b) {
        const auto& bl = m.layout.blocks[static_cast<std::size_t>(b)];
        const double* wq = m.params.data() + bl.wq;
        const double* wk = m.params.data() + bl.wk;
        const double* wv = m.params.data() + bl.wv;
        const double* wo = m.params.data() + bl.wo;
        const double* rel = m.params.data() + bl.rel;  // score bias per (t - j) offset
        const double* w1 = m.params.data() + bl.w1;
        const double* b1 = m.params.data() + bl.b1;
        const double* w2 = m.params.data() + bl.w2;
        const double* b2 = m.params.data() + bl.b2;

        for (int t = 0; t < T; ++t) {
            const double* x = ws.at(ws.xs, b, t, d);
            double* u = ws.at(ws.u_attn, b, t, d);
            rmsnorm(x, u, d);
            matvec(wq, u, ws.at(ws.q, b, t, d), d, d);
            matvec(wk, u, ws.at(ws.k, b, t, d), d, d);
            matvec(wv, u, ws.at(ws.v, b, t, d), d, d);
        }
        for (int t = 0; t < T; ++t) {
            const double* qt = ws.at(ws.q, b, t, d);
            double* arow = ws.attn.data() + (static_cast<std::size_t>(b) * T + t) * T;
            double mx = -1e300;
            for (int j = 0; j <= t; ++j) {
                arow[j] = dot(qt, ws.at(ws.k, b, j, d), d) * inv_sqrt_d + rel[t - j];
                mx = std::max(mx, arow[j]);
            }
            double zsum = 0.0;
            for (int j = 0; j <= t; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                zsum += arow[j];
            }
            double* mixv = ws.at(ws.mix, b, t, d);
            std::fill(mixv, mixv + d, 0.0);
            for (int j = 0; j <= t; ++j) {
                arow[j] /= zsum;
                axpy(arow[j], ws.at(ws.v, b, j, d), mixv, d);
            }
            matvec(wo, mixv, tmp.data(), d, d);
            const double* x = ws.at(ws.xs, b, t, d);
            double* xm = ws.at(ws.x_mid, b, t, d);
            for (int i = 0; i < d; ++i) xm[i] = x[i] + tmp[i];
        }
        for (int t = 0; t < T; ++t) {
            const double* xm = ws.at(ws.x_mid, b, t, d);
            double* u = ws.at(ws.u_ffn, b, t, d);
            rmsnorm(xm, u, d);
            double* zt = ws.z.data() + (static_cast<std::size_t>(b) * T + t) * h;
            matvec(w1, u, zt, h, d);
            for (int i = 0; i < h; ++i) zt[i] += b1[i];
            for (int i = 0; i < h; ++i) tmp[static_cast<std::size_t>(i)] = zt[i] > 0.0 ? zt[i] : 0.0;
            double* xo = ws.at(ws.xs, b + 1, t, d);
            matvec(w2, tmp.data(), xo, d, h);
            for (int i = 0; i < d; ++i) xo[i] += b2[i] + xm[i];
        }
    }

    // final states normalized to unit length so logit scale tracks |tok_emb|
    for (int t = 0; t < T; ++t) {
        double* g = ws.g_final.data() + static_cast<std::size_t>(t) * d;
        rmsnorm(ws.at(ws.xs, cfg.depth, t, d), g, d);
        for (int i = 0; i < d; ++i) g[i] *= inv_sqrt_d;
    }
    const double* out = m.params.data() + m.layout.out_proj;
    for (int t = row_start; t < T; ++t) {
        const double* g = ws.g_final.data() + static_cast<std::size_t>(t) * d;
        double* lg = ws.logits.data() + static_cast<std::size_t>(t) * V;
        matvec(out, g, lg, V, d);
        double mx = lg[0];
        for (int vtok = 1; vtok < V; ++vtok) mx = std::max(mx, lg[vtok]);
        double zsum = 0.0;
        for (int vtok = 0; vtok < V; ++vtok) zsum += std::exp(lg[vtok] - mx);
        ws.logZ[static_cast<std::size_t>(t)] = mx + std::log(zsum);
        double* pr = ws.probs.data() + static_cast<std::size_t>(t) * V;
        for (int vtok = 0; vtok < V; ++vtok)
            pr[vtok] = std::exp(lg[vtok] - ws.logZ[static_cast<std::size_t>(t)]);
    }
}

// dlogits: T x V, rows [row_start, T). Accumulates parameter gradients.
void run_backward(const LanguageModel& m, std::span<const TokenId> tokens, Workspace& ws,
                  const std::vector<double>& dlogits, std::vector<double>& grad) {
    const auto& cfg = m.config;
    const int T = ws.T, d = ws.d, h = ws.h, V = ws.V;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double* out = m.params.data() + m.layout.out_proj;
    double* gout = grad.data() + m.layout.out_proj;
    double* gemb = grad.data() + m.layout.tok_emb;
    double* gpos = grad.data() + m.layout.pos_emb;

    std::vector<double> dx(static_cast<std::size_t>(T) * d, 0.0);
    std::vector<double> dgrow(static_cast<std::size_t>(d));

    for (int t = ws.row_start; t < T; ++t) {
        const double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
        const double* g = ws.g_final.data() + static_cast<std::size_t>(t) * d;
        std::fill(dgrow.begin(), dgrow.end(), 0.0);
        for (int vtok = 0; vtok < V; ++vtok) {
            if (dl[vtok] == 0.0) continue;
            axpy(dl[vtok], out + static_cast<std::size_t>(vtok) * d, dgrow.data(), d);
            axpy(dl[vtok], g, gout + static_cast<std::size_t>(vtok) * d, d);
        }
        for (int i = 0; i < d; ++i) dgrow[static_cast<std::size_t>(i)] *= inv_sqrt_d;
        rmsnorm_backward_acc(ws.at(ws.xs, cfg.depth, t, d), dgrow.data(),
                             dx.data() + static_cast<std::size_t>(t) * d, d);
    }

    std::vector<double> dxm(static_cast<std::size_t>(T) * d);
    std::vector<double> du(static_cast<std::size_t>(d));
    std::vector<double> dz(static_cast<std::size_t>(h));
    std::vector<double> relu_buf(static_cast<std::size_t>(h));
    std::vector<double> dq(static_cast<std::size_t>(T) * d), dk(static_cast<std::size_t>(T) * d),
        dv(static_cast<std::size_t>(T) * d), dmix(static_cast<std::size_t>(T) * d),
        da(static_cast<std::size_t>(T));

    for (int b = cfg.depth - 1; b >= 0; --b) {
        const auto& bl = m.layout.blocks[static_cast<std::size_t>(b)];
        const double* wq = m.params.data() + bl.wq;
        const double* wk = m.params.data() + bl.wk;
        const double* wv = m.params.data() + bl.wv;
        const double* wo = m.params.data() + bl.wo;
        const double* w1 = m.params.data() + bl.w1;
        const double* w2 = m.params.data() + bl.w2;
        double* gwq = grad.data() + bl.wq;
        double* gwk = grad.data() + bl.wk;
        double* gwv = grad.data() + bl.wv;
        double* gwo = grad.data() + bl.wo;
        double* grel = grad.data() + bl.rel;
        double* gw1 = grad.data() + bl.w1;
        double* gb1 = grad.data() + bl.b1;
        double* gw2 = grad.data() + bl.w2;
        double* gb2 = grad.data() + bl.b2;

        // FFN backward; dx currently holds the gradient at the block output
        for (int t = 0; t < T; ++t) {
            const double* df = dx.data() + static_cast<std::size_t>(t) * d;
            const double* zt = ws.z.data() + (static_cast<std::size_t>(b) * T + t) * h;
            const double* u = ws.at(ws.u_ffn, b, t, d);
            for (int i = 0; i < h; ++i) relu_buf[static_cast<std::size_t>(i)] = zt[i] > 0.0 ? zt[i] : 0.0;
            outer_acc(gw2, df, relu_buf.data(), d, h);
            for (int i = 0; i < d; ++i) gb2[i] += df[i];
            std::fill(dz.begin(), dz.end(), 0.0);
            matvec_t_acc(w2, df, dz.data(), d, h);
            for (int i = 0; i < h; ++i)
                if (zt[i] <= 0.0) dz[static_cast<std::size_t>(i)] = 0.0;
            outer_acc(gw1, dz.data(), u, h, d);
            for (int i = 0; i < h; ++i) gb1[i] += dz[static_cast<std::size_t>(i)];
            std::fill(du.begin(), du.end(), 0.0);
            matvec_t_acc(w1, dz.data(), du.data(), h, d);
            double* dxm_t = dxm.data() + static_cast<std::size_t>(t) * d;
            std::copy(df, df + d, dxm_t);  // residual path
            rmsnorm_backward_acc(ws.at(ws.x_mid, b, t, d), du.data(), dxm_t, d);
        }

        // attention backward
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int t = 0; t < T; ++t) {
            const double* dat = dxm.data() + static_cast<std::size_t>(t) * d;
            outer_acc(gwo, dat, ws.at(ws.mix, b, t, d), d, d);
            double* dmix_t = dmix.data() + static_cast<std::size_t>(t) * d;
            std::fill(dmix_t, dmix_t + d, 0.0);
            matvec_t_acc(wo, dat, dmix_t, d, d);
        }
        for (int t = 0; t < T; ++t) {
            const double* dmix_t = dmix.data() + static_cast<std::size_t>(t) * d;
            const double* arow = ws.attn.data() + (static_cast<std::size_t>(b) * T + t) * T;
            double inner = 0.0;
            for (int j = 0; j <= t; ++j) {
                da[static_cast<std::size_t>(j)] = dot(dmix_t, ws.at(ws.v, b, j, d), d);
                axpy(arow[j], dmix_t, dv.data() + static_cast<std::size_t>(j) * d, d);
                inner += da[static_cast<std::size_t>(j)] * arow[j];
            }
            for (int j = 0; j <= t; ++j) {
                double ds = arow[j] * (da[static_cast<std::size_t>(j)] - inner);
                grel[t - j] += ds;
                ds *= inv_sqrt_d;
                axpy(ds, ws.at(ws.k, b, j, d), dq.data() + static_cast<std::size_t>(t) * d, d);
                axpy(ds, ws.at(ws.q, b, t, d), dk.data() + static_cast<std::size_t>(j) * d, d);
            }
        }
        for (int t = 0; t < T; ++t) {
            const double* u = ws.at(ws.u_attn, b, t, d);
            const double* dq_t = dq.data() + static_cast<std::size_t>(t) * d;
            const double* dk_t = dk.data() + static_cast<std::size_t>(t) * d;
            const double* dv_t = dv.data() + static_cast<std::size_t>(t) * d;
            outer_acc(gwq, dq_t, u, d, d);
            outer_acc(gwk, dk_t, u, d, d);
            outer_acc(gwv, dv_t, u, d, d);
            std::fill(du.begin(), du.end(), 0.0);
            matvec_t_acc(wq, dq_t, du.data(), d, d);
            matvec_t_acc(wk, dk_t, du.data(), d, d);
            matvec_t_acc(wv, dv_t, du.data(), d, d);
            double* dx_t = dx.data() + static_cast<std::size_t>(t) * d;
            std::copy(dxm.data() + static_cast<std::size_t>(t) * d,
                      dxm.data() + static_cast<std::size_t>(t) * d + d, dx_t);
            rmsnorm_backward_acc(ws.at(ws.xs, b, t, d), du.data(), dx_t, d);
        }
    }

    for (int t = 0; t < T; ++t) {
        const double* dx_t = dx.data() + static_cast<std::size_t>(t) * d;
        axpy(1.0, dx_t, gemb + static_cast<std::size_t>(tokens[t]) * d, d);
        axpy(1.0, dx_t, gpos + static_cast<std::size_t>(t) * d, d);
    }
}

}  // namespace

ParamLayout ParamLayout::make(const LMConfig& cfg) {
    if (cfg.vocab_size < 8) throw LMError("vocab_size must be >= 8");
    if (cfg.context_len < 2 || cfg.embed_dim < 1 || cfg.depth < 0)
        throw LMError("invalid model dimensions");
    ParamLayout lay;
    lay.vocab = cfg.vocab_size;
    lay.context = cfg.context_len;
    lay.dim = cfg.embed_dim;
    lay.hidden = cfg.ffn_dim();
    lay.depth = cfg.depth;
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
        std::size_t o = off;
        off += n;
        return o;
    };
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto h = static_cast<std::size_t>(cfg.ffn_dim());
    lay.tok_emb = take(static_cast<std::size_t>(cfg.vocab_size) * d);
    lay.pos_emb = take(static_cast<std::size_t>(cfg.context_len) * d);
    lay.out_proj = take(static_cast<std::size_t>(cfg.vocab_size) * d);
    for (int b = 0; b < cfg.depth; ++b) {
        ParamLayout::Block blk;
        blk.wq = take(d * d);
        blk.wk = take(d * d);
        blk.wv = take(d * d);
        blk.wo = take(d * d);
        blk.rel = take(static_cast<std::size_t>(cfg.context_len));
        blk.w1 = take(h * d);
        blk.b1 = take(h);
        blk.w2 = take(d * h);
        blk.b2 = take(d);
        lay.blocks.push_back(blk);
    }
    lay.total = off;
    return lay;
}

LanguageModel LanguageModel::fresh(const LMConfig& cfg) {
    LanguageModel m;
    m.config = cfg;
    m.layout = ParamLayout::make(cfg);
    m.params.assign(m.layout.total, 0.0);

    Rng rng(seed_mix(cfg.seed, "model-init"));
    // the output projection stays zero: a fresh model is exactly uniform and
    // tokens that never occur as targets keep identical output logits
    auto tok = m.tok_emb();
    for (double& x : tok) x = rng.normal(0.0, 0.3);
    auto pos = m.pos_emb();
    for (double& x : pos) x = rng.normal(0.0, 0.3);
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto h = static_cast<std::size_t>(cfg.ffn_dim());
    for (const auto& blk : m.layout.blocks) {
        for (std::size_t i = 0; i < d * d; ++i) m.params[blk.wq + i] = rng.normal(0.0, 0.08);
        for (std::size_t i = 0; i < d * d; ++i) m.params[blk.wk + i] = rng.normal(0.0, 0.08);
        for (std::size_t i = 0; i < d * d; ++i) m.params[blk.wv + i] = rng.normal(0.0, 0.08);
        for (std::size_t i = 0; i < d * d; ++i) m.params[blk.wo + i] = rng.normal(0.0, 0.08);
        for (std::size_t i = 0; i < h * d; ++i) m.params[blk.w1 + i] = rng.normal(0.0, 0.08);
        for (std::size_t i = 0; i < d * h; ++i) m.params[blk.w2 + i] = rng.normal(0.0, 0.08);
    }
    return m;
}

ProbMatrix forward(const LanguageModel& model, std::span<const TokenId> tokens) {
    Workspace ws;
    run_forward(model, tokens, ws, 0);
    ProbMatrix out;
    out.rows = ws.T;
    out.vocab = ws.V;
    out.data = std::move(ws.probs);
    return out;
}

EncodedPair encode_pair(const Vocab& vocab, const std::string& query,
                        std::span<const TokenId> response_tokens) {
    if (response_tokens.empty()) throw LMError("empty response");
    EncodedPair ep;
    ep.input = vocab.tokenize(query);
    if (ep.input.empty()) throw LMError("empty query");
    ep.first_target_row = static_cast<int>(ep.input.size());  // row of the SEP token
    ep.input.push_back(vocab.sep());
    ep.input.insert(ep.input.end(), response_tokens.begin(), response_tokens.end());
    ep.targets.assign(response_tokens.begin(), response_tokens.end());
    ep.targets.push_back(vocab.eos());
    return ep;
}

EncodedPair encode_sample(const Vocab& vocab, const Sample& sample) {
    auto resp = vocab.tokenize(sample.response);
    return encode_pair(vocab, sample.query, resp);
}

std::vector<double> instruction_loss_terms(const LanguageModel& model, const Sample& sample,
                                           const Vocab& vocab) {
    EncodedPair ep = encode_sample(vocab, sample);
    Workspace ws;
    run_forward(model, ep.input, ws, ep.first_target_row);
    std::vector<double> terms;
    terms.reserve(ep.targets.size());
    for (std::size_t i = 0; i < ep.targets.size(); ++i) {
        int row = ep.first_target_row + static_cast<int>(i);
        terms.push_back(ws.logZ[static_cast<std::size_t>(row)] -
                        ws.logits[static_cast<std::size_t>(row) * ws.V +
                                  static_cast<std::size_t>(ep.targets[i])]);
    }
    return terms;
}

double instruction_loss(const LanguageModel& model, const Sample& sample, const Vocab& vocab) {
    double loss = 0.0;
    for (double t : instruction_loss_terms(model, sample, vocab)) loss += t;
    return loss;
}

double perplexity(const LanguageModel& model, const Sample& sample, const Vocab& vocab) {
    auto terms = instruction_loss_terms(model, sample, vocab);
    double loss = 0.0;
    for (double t : terms) loss += t;
    return std::exp(loss / static_cast<double>(terms.size()));
}

TopKLogitRecord topk_records(const LanguageModel& model, std::span<const TokenId> prompt,
                             std::span<const TokenId> response, int k) {
    if (k < 1 || k > model.config.vocab_size)
        throw LMError("topk_records: k must lie in [1, vocab_size]");
    if (prompt.empty()) throw LMError("topk_records: empty prompt");
    std::vector<TokenId> input(prompt.begin(), prompt.end());
    const int first_row = static_cast<int>(input.size()) - 1;  // row of the last prompt token
    input.insert(input.end(), response.begin(), response.end());

    Workspace ws;
    run_forward(model, input, ws, first_row);
    TopKLogitRecord rec;
    rec.k = k;
    const int V = ws.V;
    std::vector<int> order(static_cast<std::size_t>(V));
    for (std::size_t i = 0; i < response.size() + 1; ++i) {
        int row = first_row + static_cast<int>(i);
        const double* pr = ws.probs.data() + static_cast<std::size_t>(row) * V;
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [pr](int a, int b) {
            if (pr[a] != pr[b]) return pr[a] > pr[b];
            return a < b;
        });
        TopKRow tr;
        tr.tokens.reserve(static_cast<std::size_t>(k));
        tr.probs.reserve(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j) {
            tr.tokens.push_back(order[static_cast<std::size_t>(j)]);
            tr.probs.push_back(pr[order[static_cast<std::size_t>(j)]]);
        }
        rec.rows.push_back(std::move(tr));
    }
    return rec;
}

// --- decoding ----------------------------------------------------------------

std::string to_string(DecodeStrategy s) {
    switch (s) {
        case DecodeStrategy::greedy: return "greedy";
        case DecodeStrategy::beam: return "beam";
        case DecodeStrategy::top_k: return "top_k";
        case DecodeStrategy::nucleus: return "nucleus";
    }
    return "greedy";
}

DecodeStrategy decode_strategy_from_string(const std::string& s) {
    if (s == "greedy") return DecodeStrategy::greedy;
    if (s == "beam") return DecodeStrategy::beam;
    if (s == "top_k") return DecodeStrategy::top_k;
    if (s == "nucleus") return DecodeStrategy::nucleus;
    throw LMError("unknown decode strategy: " + s);
}

namespace {

std::vector<int> sorted_token_order(const std::vector<double>& probs) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&probs](int a, int b) {
        if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
            return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
        return a < b;
    });
    return order;
}

TokenId argmax_token(const std::vector<double>& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i)
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    return best;
}

TokenId sample_from(const std::vector<int>& candidates, const std::vector<double>& weights,
                    Rng& rng) {
    return candidates[rng.pick_weighted(weights)];
}

struct BeamHyp {
    std::vector<TokenId> resp;
    double logp = 0.0;
    bool finished = false;
};

}  // namespace

std::vector<TokenId> decode_with(const NextTokenFn& next, std::span<const TokenId> prompt,
                                 const DecodeConfig& cfg, TokenId eos_id, int max_total_len) {
    const int budget = std::min(cfg.max_tokens,
                                std::max(0, max_total_len - static_cast<int>(prompt.size())));
    std::vector<TokenId> seq(prompt.begin(), prompt.end());

    if (cfg.strategy == DecodeStrategy::beam) {
        if (cfg.beam_width < 1) throw LMError("beam width must be >= 1");
        std::vector<BeamHyp> beams{BeamHyp{}};
        for (int step = 0; step < budget; ++step) {
            std::vector<BeamHyp> pool;
            bool any_open = false;
            for (const auto& hyp : beams) {
                if (hyp.finished) {
                    pool.push_back(hyp);
                    continue;
                }
                any_open = true;
                std::vector<TokenId> ctx(prompt.begin(), prompt.end());
                ctx.insert(ctx.end(), hyp.resp.begin(), hyp.resp.end());
                auto probs = next(ctx);
                auto order = sorted_token_order(probs);
                int expansions = std::min<int>(cfg.beam_width, static_cast<int>(order.size()));
                for (int e = 0; e < expansions; ++e) {
                    TokenId tok = order[static_cast<std::size_t>(e)];
                    BeamHyp nh = hyp;
                    double p = probs[static_cast<std::size_t>(tok)];
                    nh.logp += p > 0.0 ? std::log(p) : -1e300;
                    if (tok == eos_id) {
                        nh.finished = true;
                    } else {
                        nh.resp.push_back(tok);
                    }
                    pool.push_back(std::move(nh));
                }
            }
            if (!any_open) break;
            std::sort(pool.begin(), pool.end(), [](const BeamHyp& a, const BeamHyp& b) {
                if (a.logp != b.logp) return a.logp > b.logp;
                return a.resp < b.resp;
            });
            if (static_cast<int>(pool.size()) > cfg.beam_width)
                pool.resize(static_cast<std::size_t>(cfg.beam_width));
            beams = std::move(pool);
        }
        // best completed hypothesis; length cap counts as completion
        const BeamHyp* best = nullptr;
        for (const auto& h : beams) {
            if (!best || h.logp > best->logp) best = &h;
        }
        return best ? best->resp : std::vector<TokenId>{};
    }

    Rng rng(seed_mix(cfg.seed, "decode"));
    std::vector<TokenId> resp;
    for (int step = 0; step < budget; ++step) {
        auto probs = next(seq);
        TokenId tok = 0;
        switch (cfg.strategy) {
            case DecodeStrategy::greedy:
                tok = argmax_token(probs);
                break;
            case DecodeStrategy::top_k: {
                if (cfg.top_k < 1 || cfg.top_k > static_cast<int>(probs.size()))
                    throw LMError("top_k must lie in [1, vocab_size]");
                auto order = sorted_token_order(probs);
                std::vector<int> cand(order.begin(), order.begin() + cfg.top_k);
                std::vector<double> w;
                w.reserve(cand.size());
                for (int c : cand) w.push_back(probs[static_cast<std::size_t>(c)]);
                tok = sample_from(cand, w, rng);
                break;
            }
            case DecodeStrategy::nucleus: {
                if (!(cfg.nucleus_p > 0.0 && cfg.nucleus_p <= 1.0))
                    throw LMError("nucleus_p must lie in (0, 1]");
                auto order = sorted_token_order(probs);
                std::vector<int> cand;
                std::vector<double> w;
                double acc = 0.0;
                for (int c : order) {
                    cand.push_back(c);
                    w.push_back(probs[static_cast<std::size_t>(c)]);
                    acc += probs[static_cast<std::size_t>(c)];
                    if (acc >= cfg.nucleus_p) break;
                }
                tok = sample_from(cand, w, rng);
                break;
            }
            case DecodeStrategy::beam:
                break;  // handled above
        }
        if (tok == eos_id) break;
        resp.push_back(tok);
        seq.push_back(tok);
    }
    return resp;
}

NextTokenFn model_next_token_fn(const LanguageModel& model) {
    auto ws = std::make_shared<Workspace>();
    return [&model, ws](std::span<const TokenId> prefix) {
        run_forward(model, prefix, *ws, static_cast<int>(prefix.size()) - 1);
        const int V = ws->V;
        std::vector<double> out(static_cast<std::size_t>(V));
        const double* pr = ws->probs.data() + static_cast<std::size_t>(ws->T - 1) * V;
        std::copy(pr, pr + V, out.begin());
        return out;
    };
}

std::vector<TokenId> decode(const LanguageModel& model, std::span<const TokenId> prompt,
                            const DecodeConfig& cfg, TokenId eos_id) {
    return decode_with(model_next_token_fn(model), prompt, cfg, eos_id, model.config.context_len);
}

// --- training ----------------------------------------------------------------

double example_loss(const LanguageModel& model, const TrainExample& ex, std::vector<double>* grad,
                    long* clamp_counter) {
    Workspace ws;
    run_forward(model, ex.input, ws, ex.first_target_row);
    const int V = ws.V;
    const int n_rows = static_cast<int>(ex.targets.size());
    if (ex.first_target_row + n_rows != ws.T)
        throw LMError("train example rows inconsistent with input length");
    if (ex.topk && ex.topk->rows.size() != ex.targets.size())
        throw LMError("top-k record rows do not match the response length");

    std::vector<double> dlogits;
    if (grad) dlogits.assign(static_cast<std::size_t>(ws.T) * V, 0.0);

    double loss = 0.0;
    for (int i = 0; i < n_rows; ++i) {
        const int row = ex.first_target_row + i;
        const double* pr = ws.probs.data() + static_cast<std::size_t>(row) * V;
        const double* lg = ws.logits.data() + static_cast<std::size_t>(row) * V;
        const double lz = ws.logZ[static_cast<std::size_t>(row)];

        if (!ex.topk) {
            const TokenId target = ex.targets[static_cast<std::size_t>(i)];
            loss += lz - lg[target];
            if (grad) {
                double* dl = dlogits.data() + static_cast<std::size_t>(row) * V;
                std::copy(pr, pr + V, dl);
                dl[target] -= 1.0;
            }
        } else {
            const TopKRow& tr = ex.topk->rows.at(static_cast<std::size_t>(i));
            const double alpha = ex.alpha;
            const std::size_t K = tr.tokens.size();
            double psum = 0.0;
            for (double p : tr.probs) psum += p;
            if (!(psum > 0.0)) throw LMError("teacher top-k row has zero mass");

            double sigma = 0.0, cs = 0.0, row_loss = 0.0;
            std::vector<double> ptil(K), neg_logp(K);
            for (std::size_t j = 0; j < K; ++j) {
                ptil[j] = tr.probs[j] / psum;
                double clamped = ptil[j];
                if (clamped < kLogClamp) {
                    clamped = kLogClamp;
                    if (clamp_counter) ++*clamp_counter;
                }
                neg_logp[j] = -std::log(clamped);
                sigma += ptil[j];
            }
            for (std::size_t j = 0; j < K; ++j) {
                const TokenId tok = tr.tokens[j];
                const double f = pr[tok];
                const double neg_logf = lz - lg[tok];
                row_loss += alpha * ptil[j] * neg_logf;
                row_loss += (1.0 - alpha) * f * neg_logp[j];
                cs += f * (-neg_logp[j]);
            }
            loss += row_loss;
            if (grad) {
                double* dl = dlogits.data() + static_cast<std::size_t>(row) * V;
                const double coef = alpha * sigma + (1.0 - alpha) * cs;
                for (int vtok = 0; vtok < V; ++vtok) dl[vtok] = coef * pr[vtok];
                for (std::size_t j = 0; j < K; ++j) {
                    const TokenId tok = tr.tokens[j];
                    dl[tok] -= alpha * ptil[j] + (1.0 - alpha) * (-neg_logp[j]) * pr[tok];
                }
            }
        }
    }
    if (grad) run_backward(model, ex.input, ws, dlogits, *grad);
    return loss;
}

TrainTrace train_examples(LanguageModel& model, std::span<const TrainExample> examples,
                          const TrainSettings& settings) {
    if (examples.empty()) throw LMError("train: no examples");
    if (settings.epochs < 1) throw LMError("train: epochs must be >= 1");
    if (settings.batch_size < 1) throw LMError("train: batch_size must be >= 1");

    TrainTrace trace;
    std::vector<double> grad(model.layout.total);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        Rng rng(seed_mix(settings.seed, "train-epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        const std::size_t n = examples.size();
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(settings.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(settings.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                batch_loss +=
                    example_loss(model, examples[order[i]], &grad, &trace.clamped_log_terms);
            }
            if (!std::isfinite(batch_loss))
                throw LMError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(batch_index));
            epoch_loss += batch_loss;
            const double scale = settings.learning_rate / static_cast<double>(end - start);
            for (std::size_t i = 0; i < model.params.size(); ++i) model.params[i] -= scale * grad[i];
            ++batch_index;
        }
        trace.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
    }
    return trace;
}

TrainTrace train(LanguageModel& model, const Dataset& dataset, const Vocab& vocab) {
    if (dataset.empty()) throw LMError("train: dataset is empty");
    std::vector<TrainExample> examples;
    examples.reserve(dataset.size());
    for (const auto& s : dataset.samples) {
        EncodedPair ep = encode_sample(vocab, s);
        examples.push_back(TrainExample{std::move(ep.input), std::move(ep.targets),
                                        ep.first_target_row, nullptr, 1.0});
    }
    TrainSettings settings{model.config.learning_rate, model.config.epochs,
                           model.config.batch_size, seed_mix(model.config.seed, "train")};
    return train_examples(model, examples, settings);
}

// --- persistence --------------------------------------------------------------

void save_checkpoint(const LanguageModel& model, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["format"] = 1;
    j["config"] = {{"vocab_size", model.config.vocab_size},
                   {"context_len", model.config.context_len},
                   {"embed_dim", model.config.embed_dim},
                   {"depth", model.config.depth},
                   {"learning_rate", model.config.learning_rate},
                   {"epochs", model.config.epochs},
                   {"batch_size", model.config.batch_size},
                   {"seed", model.config.seed}};
    j["params"] = model.params;
    std::ofstream out(path);
    if (!out) throw LMError("cannot write checkpoint " + path.string());
    out << j.dump() << '\n';
}

LanguageModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LMError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    in >> j;
    if (!j.contains("format") || j["format"].get<int>() != 1)
        throw LMError("unsupported checkpoint format in " + path.string());
    LMConfig cfg;
    const auto& c = j.at("config");
    cfg.vocab_size = c.at("vocab_size").get<int>();
    cfg.context_len = c.at("context_len").get<int>();
    cfg.embed_dim = c.at("embed_dim").get<int>();
    cfg.depth = c.at("depth").get<int>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.epochs = c.at("epochs").get<int>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    LanguageModel m;
    m.config = cfg;
    m.layout = ParamLayout::make(cfg);
    m.params = j.at("params").get<std::vector<double>>();
    if (m.params.size() != m.layout.total)
        throw LMError("checkpoint parameter count mismatch in " + path.string());
    return m;
}

void write_loss_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw LMError("cannot write " + path.string());
    out << "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.epoch_mean_loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace.epoch_mean_loss[i]);
        out << buf;
    }
}

}  // namespace biaslab
