#pragma once

#include <cmath>
#include <vector>

#include "mindkit/model_common.hpp"
#include "mindkit/ops.hpp"

namespace mindkit {

// DDPM schedule. beta[t-1] is the variance added at step t; alpha_bar has
// T+1 entries with alpha_bar[0] = 1 so step 0 is the identity.
struct DiffusionSchedule {
    int T = 0;
    std::vector<float> beta;
    std::vector<float> alpha;
    std::vector<double> alpha_bar;

    double abar(int t) const { return alpha_bar[static_cast<size_t>(t)]; }
};

inline DiffusionSchedule make_schedule(int T, float beta_start, float beta_end) {
    if (T < 1) throw BadRange("schedule needs T >= 1");
    if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f))
        throw BadRange("schedule needs 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        float frac = T == 1 ? 0.0f : static_cast<float>(t - 1) / static_cast<float>(T - 1);
        float b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<size_t>(t - 1)] = b;
        s.alpha[static_cast<size_t>(t - 1)] = 1.0f - b;
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - static_cast<double>(b));
    }
    return s;
}

inline DiffusionSchedule default_schedule() { return make_schedule(300, 1e-4f, 0.02f); }

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps; t = 0 returns z unchanged
inline Tensor forward_noise(const Tensor& z, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (t < 0 || t > sched.T) throw StepOutOfRange("step " + std::to_string(t) + " outside [0," + std::to_string(sched.T) + "]");
    if (eps.shape != z.shape)
        throw ShapeMismatch("noise shape " + shape_str(eps.shape) + " != latent shape " + shape_str(z.shape));
    double ab = sched.abar(t);
    return add(scale(z, static_cast<float>(std::sqrt(ab))), scale(eps, static_cast<float>(std::sqrt(1.0 - ab))));
}

struct CrossAttentionWeights {
    Tensor wq;  // (d_model x d_attn)
    Tensor wk;  // (d_cond x d_attn)
    Tensor wv;  // (d_cond x d_attn)
    Tensor wo;  // (d_attn x d_model)
};

// softmax(Q K^T / sqrt(d)) V, projected back to d_model. phi: (n x d_model)
// queries, cond: (m x d_cond) keys/values.
inline Tensor cross_attention(const Tensor& phi, const Tensor& cond, const CrossAttentionWeights& w) {
    if (phi.rank() != 2 || cond.rank() != 2)
        throw ShapeMismatch("cross_attention expects rank-2 token grids");
    Tensor q = matmul(phi, w.wq);
    Tensor k = matmul(cond, w.wk);
    Tensor v = matmul(cond, w.wv);
    int d = w.wq.shape[1];
    Tensor attn = softmax(scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(d))));
    return matmul(matmul(attn, v), w.wo);
}

// attention weight matrix alone (for tests of the normalization contract)
inline Tensor cross_attention_weights_matrix(const Tensor& phi, const Tensor& cond, const CrossAttentionWeights& w) {
    Tensor q = matmul(phi, w.wq);
    Tensor k = matmul(cond, w.wk);
    int d = w.wq.shape[1];
    return softmax(scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(d))));
}

struct DenoiserConfig {
    int latent_dim = 256;
    int n_tokens = 16;
    int d_model = 48;
    int d_attn = 32;
    int mlp_hidden = 96;
    int n_blocks = 2;
    int n_cond = 6;   // condition tokens
    int d_cond = 32;  // condition token width
    int T = 300;

    int token_dim() const { return latent_dim / n_tokens; }
};

// Token-MLP denoiser with interleaved cross-attention blocks. The latent is
// reshaped to a token grid; every block is residual MLP + residual
// cross-attention over the condition tokens.
struct DenoiserParams {
    DenoiserConfig cfg;
    Tensor time_embed;  // (T+1 x d_model)
    Tensor w_in, b_in;
    struct Block {
        Tensor w1, b1, w2, b2;
        CrossAttentionWeights attn;
    };
    std::vector<Block> blocks;
    Tensor w_out, b_out;

    static DenoiserParams init(const DenoiserConfig& cfg, Rng rng) {
        DenoiserParams p;
        p.cfg = cfg;
        if (cfg.latent_dim % cfg.n_tokens != 0) throw ShapeMismatch("latent_dim must divide into tokens");
        auto glorot = [&rng](int in, int out) {
            return Tensor::randn({in, out}, rng, std::sqrt(2.0f / static_cast<float>(in + out)));
        };
        p.time_embed = Tensor::randn({cfg.T + 1, cfg.d_model}, rng, 0.1f);
        p.w_in = glorot(cfg.token_dim(), cfg.d_model);
        p.b_in = Tensor::zeros({cfg.d_model});
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.w1 = glorot(cfg.d_model, cfg.mlp_hidden);
            blk.b1 = Tensor::zeros({cfg.mlp_hidden});
            blk.w2 = glorot(cfg.mlp_hidden, cfg.d_model);
            blk.b2 = Tensor::zeros({cfg.d_model});
            blk.attn.wq = glorot(cfg.d_model, cfg.d_attn);
            blk.attn.wk = glorot(cfg.d_cond, cfg.d_attn);
            blk.attn.wv = glorot(cfg.d_cond, cfg.d_attn);
            blk.attn.wo = glorot(cfg.d_attn, cfg.d_model);
            p.blocks.push_back(std::move(blk));
        }
        p.w_out = glorot(cfg.d_model, cfg.token_dim());
        p.b_out = Tensor::zeros({cfg.token_dim()});
        return p;
    }

    NamedParams named_params() {
        NamedParams out;
        out.emplace_back("time_embed", &time_embed);
        out.emplace_back("w_in", &w_in);
        out.emplace_back("b_in", &b_in);
        for (size_t b = 0; b < blocks.size(); ++b) {
            std::string pre = "block" + std::to_string(b) + ".";
            out.emplace_back(pre + "w1", &blocks[b].w1);
            out.emplace_back(pre + "b1", &blocks[b].b1);
            out.emplace_back(pre + "w2", &blocks[b].w2);
            out.emplace_back(pre + "b2", &blocks[b].b2);
            out.emplace_back(pre + "wq", &blocks[b].attn.wq);
            out.emplace_back(pre + "wk", &blocks[b].attn.wk);
            out.emplace_back(pre + "wv", &blocks[b].attn.wv);
            out.emplace_back(pre + "wo", &blocks[b].attn.wo);
        }
        out.emplace_back("w_out", &w_out);
        out.emplace_back("b_out", &b_out);
        return out;
    }

    TensorBundle bundle() { return to_bundle(named_params()); }
    static DenoiserParams from(const DenoiserConfig& cfg, const TensorBundle& b) {
        DenoiserParams p = init(cfg, Rng(0));
        from_bundle(b, p.named_params());
        return p;
    }
};

namespace detail {

struct DenoiserWeightsOnTape {
    Tensor time_embed, w_in, b_in, w_out, b_out;
    std::vector<DenoiserParams::Block> blocks;
};

// Weights enter the graph as constants for inference / stage-2 use, or as
// watched leaves during training.
inline DenoiserWeightsOnTape denoiser_weights(DenoiserParams& p, Tape* tape, bool watch,
                                              std::vector<Tensor>* leaves_out) {
    DenoiserWeightsOnTape w;
    auto wrap = [&](Tensor& t) {
        if (!tape) return t;
        Tensor wt = watch ? tape->leaf(t) : tape->constant(t);
        if (leaves_out) leaves_out->push_back(wt);
        return wt;
    };
    w.time_embed = wrap(p.time_embed);
    w.w_in = wrap(p.w_in);
    w.b_in = wrap(p.b_in);
    for (auto& blk : p.blocks) {
        DenoiserParams::Block b;
        b.w1 = wrap(blk.w1);
        b.b1 = wrap(blk.b1);
        b.w2 = wrap(blk.w2);
        b.b2 = wrap(blk.b2);
        b.attn.wq = wrap(blk.attn.wq);
        b.attn.wk = wrap(blk.attn.wk);
        b.attn.wv = wrap(blk.attn.wv);
        b.attn.wo = wrap(blk.attn.wo);
        w.blocks.push_back(std::move(b));
    }
    w.w_out = wrap(p.w_out);
    w.b_out = wrap(p.b_out);
    return w;
}

// batched forward; z_t (B x latent), cond (B*n_cond x d_cond), t per sample
inline Tensor predict_eps_batch(const DenoiserWeightsOnTape& w, const DenoiserConfig& cfg, const Tensor& z_t,
                                const std::vector<int>& t, const Tensor& cond_flat) {
    int B = z_t.shape[0];
    Tensor x = reshape(z_t, {B * cfg.n_tokens, cfg.token_dim()});
    x = add(matmul(x, w.w_in), w.b_in);
    std::vector<int> trep(static_cast<size_t>(B) * cfg.n_tokens);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < cfg.n_tokens; ++j) trep[static_cast<size_t>(i) * cfg.n_tokens + j] = t[static_cast<size_t>(i)];
    x = add(x, take_rows(w.time_embed, trep));
    float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg.d_attn));
    for (const auto& blk : w.blocks) {
        Tensor h = layer_norm(x);
        h = add(matmul(h, blk.w1), blk.b1);
        h = silu(h);
        h = add(matmul(h, blk.w2), blk.b2);
        x = add(x, h);

        Tensor q = reshape(matmul(layer_norm(x), blk.attn.wq), {B, cfg.n_tokens, cfg.d_attn});
        Tensor k = reshape(matmul(cond_flat, blk.attn.wk), {B, cfg.n_cond, cfg.d_attn});
        Tensor v = reshape(matmul(cond_flat, blk.attn.wv), {B, cfg.n_cond, cfg.d_attn});
        Tensor attn = softmax(scale(bmm(q, transpose(k)), inv_sqrt_d));
        Tensor attn_out = reshape(bmm(attn, v), {B * cfg.n_tokens, cfg.d_attn});
        x = add(x, matmul(attn_out, blk.attn.wo));
    }
    Tensor out = add(matmul(layer_norm(x), w.w_out), w.b_out);
    return reshape(out, {B, cfg.latent_dim});
}

}  // namespace detail

// eps_theta(z_t, t, c): deterministic noise prediction. z_t is the flattened
// latent, cond the (n_cond x d_cond) condition tokens. Works on or off tape;
// weights are frozen constants here.
inline Tensor predict_eps(DenoiserParams& params, const Tensor& z_t, int t, const Tensor& cond) {
    const DenoiserConfig& cfg = params.cfg;
    if (static_cast<int>(z_t.numel()) != cfg.latent_dim)
        throw ShapeMismatch("latent size " + std::to_string(z_t.numel()) + " != " + std::to_string(cfg.latent_dim));
    if (cond.rank() != 2 || cond.shape[0] != cfg.n_cond || cond.shape[1] != cfg.d_cond)
        throw ShapeMismatch("condition must be " + std::to_string(cfg.n_cond) + "x" + std::to_string(cfg.d_cond));
    if (t < 0 || t > cfg.T) throw StepOutOfRange("denoiser step out of range");
    Tape* tape = detail::resolve_tape({&z_t, &cond});
    auto w = detail::denoiser_weights(params, tape, false, nullptr);
    Tensor z2 = reshape(z_t, {1, cfg.latent_dim});
    Tensor eps = detail::predict_eps_batch(w, cfg, z2, {t}, cond);
    return reshape(eps, z_t.shape);
}

struct DenoiserTrainHyper {
    int epochs = 30;
    int batch = 16;
    float lr = 2e-3f;
    uint64_t seed = 0;
};

// L2 epsilon-prediction objective: draw t and eps, noise the latent, regress
// the injected noise. Conditions enter through cross-attention only.
inline TrainLog train_denoiser(DenoiserParams& params, const Tensor& latents, const Tensor& conds,
                               const DiffusionSchedule& sched, const DenoiserTrainHyper& hyper) {
    const DenoiserConfig& cfg = params.cfg;
    if (latents.rank() != 2 || latents.shape[0] == 0) throw EmptyDataset("no latents to train on");
    int N = latents.shape[0];
    if (conds.shape[0] != N) throw ShapeMismatch("latents/conditions row mismatch");
    int cond_len = cfg.n_cond * cfg.d_cond;
    if (static_cast<int>(conds.numel()) / N != cond_len) throw ShapeMismatch("condition width mismatch");
    Rng rng(derive_seed(hyper.seed, 0xd1ff));
    NamedParams np = params.named_params();
    AdamState adam(hyper.lr);
    TrainLog log;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto order = shuffled_indices(N, rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int lo = 0; lo < N; lo += hyper.batch) {
            int hi = std::min(N, lo + hyper.batch);
            int B = hi - lo;
            Tensor z = gather_batch(latents, order, lo, hi);
            Tensor cflat = gather_batch(conds, order, lo, hi);
            std::vector<int> t(static_cast<size_t>(B));
            std::vector<float> za(static_cast<size_t>(B) * cfg.latent_dim);
            std::vector<float> ea(static_cast<size_t>(B) * cfg.latent_dim);
            Tensor eps({B, cfg.latent_dim}, std::vector<float>(static_cast<size_t>(B) * cfg.latent_dim));
            for (int i = 0; i < B; ++i) {
                t[static_cast<size_t>(i)] = 1 + rng.uniform_int(sched.T);
                double ab = sched.abar(t[static_cast<size_t>(i)]);
                float ca = static_cast<float>(std::sqrt(ab));
                float ce = static_cast<float>(std::sqrt(1.0 - ab));
                for (int j = 0; j < cfg.latent_dim; ++j) {
                    size_t ix = static_cast<size_t>(i) * cfg.latent_dim + j;
                    eps.data[ix] = static_cast<float>(rng.gaussian());
                    za[ix] = ca;
                    ea[ix] = ce;
                }
            }
            Tensor z_t = add(multiply(z, Tensor({B, cfg.latent_dim}, std::move(za))),
                             multiply(eps, Tensor({B, cfg.latent_dim}, std::move(ea))));
            Tape tape;
            std::vector<Tensor> leaves;
            auto w = detail::denoiser_weights(params, &tape, true, &leaves);
            Tensor pred = detail::predict_eps_batch(w, cfg, tape.constant(z_t),
                                                    t, reshape(tape.constant(cflat), {B * cfg.n_cond, cfg.d_cond}));
            Tensor loss = mse(pred, eps);
            GradMap grads = backward(loss);
            if (hyper.lr != 0.0f) apply_adam(np, leaves, grads, adam);
            epoch_loss += loss.hi();
            batches += 1;
        }
        log.epoch_loss.push_back(epoch_loss / batches);
    }
    return log;
}

// per-step noise of the sampling chain, keyed by the landing step so strided
// chains reuse the exact noises of the dense chain
inline Tensor chain_noise(uint64_t seed, int landing_step, int dim) {
    Rng r(derive_seed(seed, 0x5a000000ull + static_cast<uint64_t>(landing_step)));
    return Tensor::randn({dim}, r);
}

inline Tensor initial_forward_noise(uint64_t seed, int dim) {
    Rng r(derive_seed(seed, 0x0e0f0000ull));
    return Tensor::randn({dim}, r);
}

namespace detail {

// ancestral transition t -> s (s < t): posterior q(z_s | z_t, z0_hat) with
// z0_hat from the predicted noise; collapses to the textbook single-step
// update when s = t-1, and adds no noise when s = 0.
inline Tensor ddpm_transition(const Tensor& z_t, const Tensor& eps_hat, int t, int s,
                              const DiffusionSchedule& sched, const Tensor& noise) {
    double ab_t = sched.abar(t);
    double ab_s = sched.abar(s);
    double a = ab_t / ab_s;
    Tensor z0 = scale(subtract(z_t, scale(eps_hat, static_cast<float>(std::sqrt(1.0 - ab_t)))),
                      static_cast<float>(1.0 / std::sqrt(ab_t)));
    double denom = 1.0 - ab_t;
    double c_zt = std::sqrt(a) * (1.0 - ab_s) / denom;
    double c_z0 = std::sqrt(ab_s) * (1.0 - a) / denom;
    Tensor mean = add(scale(z_t, static_cast<float>(c_zt)), scale(z0, static_cast<float>(c_z0)));
    double var = (1.0 - a) * (1.0 - ab_s) / denom;
    if (var <= 0.0) return mean;
    return add(mean, scale(noise, static_cast<float>(std::sqrt(var))));
}

inline std::vector<int> strided_steps(int t_start, int stride) {
    std::vector<int> steps;
    for (int t = t_start; t > 0; t = std::max(0, t - stride)) steps.push_back(t);
    return steps;
}

}  // namespace detail

// Image-to-image sampling: noise the decoded latent to t_start, then run the
// conditional ancestral chain back to step 0. Pure function of
// (z, c, params, seed). stride > 1 walks the same chain in larger hops and
// reuses the dense chain's landing-step noises.
inline Tensor sample_img2img(DenoiserParams& params, const Tensor& z, const Tensor& cond, int t_start,
                             const DiffusionSchedule& sched, uint64_t seed, int stride = 1) {
    if (t_start < 0 || t_start > sched.T) throw StepOutOfRange("t_start outside schedule");
    const DenoiserConfig& cfg = params.cfg;
    if (static_cast<int>(z.numel()) != cfg.latent_dim) throw ShapeMismatch("latent size mismatch");
    if (cond.rank() != 2 || cond.shape[0] != cfg.n_cond || cond.shape[1] != cfg.d_cond)
        throw ShapeMismatch("condition must be " + std::to_string(cfg.n_cond) + "x" + std::to_string(cfg.d_cond));
    if (t_start == 0) return z;
    Tape* tape = detail::resolve_tape({&z, &cond});
    auto w = detail::denoiser_weights(params, tape, false, nullptr);
    int dim = cfg.latent_dim;
    Tensor eps0 = initial_forward_noise(seed, dim);
    if (tape) eps0 = tape->constant(eps0);
    Tensor z_t = forward_noise(z, t_start, eps0, sched);
    auto steps = detail::strided_steps(t_start, stride);
    for (int t : steps) {
        int s = std::max(0, t - stride);
        Tensor eps_hat = reshape(detail::predict_eps_batch(w, cfg, reshape(z_t, {1, dim}), {t}, cond), z.shape);
        Tensor noise = chain_noise(seed, s, dim);
        if (tape) noise = tape->constant(noise);
        z_t = detail::ddpm_transition(z_t, eps_hat, t, s, sched, noise);
    }
    return z_t;
}

}  // namespace mindkit
